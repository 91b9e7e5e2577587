//! `awcli` — command-line driver for the `adapted-ot` library.
//!
//! One subcommand per operation family: classical and adapted Wasserstein
//! distances (`w`, `aw`), weighted total variation distances (`tv`, `atv`),
//! the full bound-chain report (`report`), the H-function certificate
//! (`hfun`), the counterexample generators (`example`), kernel smoothing
//! (`smooth`, `lemma41`, `thm29`), and Monte-Carlo rate experiments (`rate`).
//!
//! Conventions:
//! * exit code 0 on success, 2 on any validation/parse failure with a
//!   diagnostic naming the violated invariant on stderr;
//! * every JSON output embeds the resolved configuration under `"config"`,
//!   CSV outputs carry it in a leading `# config:` comment line;
//! * `--out -` (the default) writes to standard output;
//! * `--seed` falls back to the `AWCLI_SEED` environment variable, then 0;
//! * `--threads` sizes the worker pool; outputs are byte-identical across
//!   pool sizes because all parallel reductions sum in fixed index order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use adapted_ot::adapted::{
    adapted_wasserstein, atv_weighted, bound_report, tv_weighted,
};
use adapted_ot::estimators::{
    rate_experiment, EstimatorKind, RateExperimentConfig, WaveletEstimatorConfig,
};
use adapted_ot::examples::{
    gen_example35, gen_example36, gen_example43, Example35Params,
};
use adapted_ot::hfun::{h_inf_closed, h_inf_oracle, h_lower_cor, HParams};
use adapted_ot::measures::{PathMeasure, WeightSpec, WeightTable};
use adapted_ot::ot_exact::wasserstein_p;
use adapted_ot::smoothing::{
    convolve, fitted_decay_order, lemma41_check, make_kernel, theorem29_bound, Axis,
    GridDensity, KernelFamily, KernelSpec,
};

#[derive(Parser)]
#[command(name = "awcli", about = "adapted optimal transport toolkit", version)]
struct Cli {
    /// Worker-pool size (default: logical cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Random seed; falls back to $AWCLI_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path; `-` writes to standard output.
    #[arg(long, global = true, default_value = "-")]
    out: String,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classical Wasserstein distance W_p between two path measures.
    W(PairArgs),
    /// Adapted (bicausal) Wasserstein distance AW_p.
    Aw(PairArgs),
    /// Weighted total variation TV_w.
    Tv(WeightedPairArgs),
    /// Weighted adapted total variation ATV_w.
    Atv(WeightedPairArgs),
    /// Full bound-chain report (W_p, AW_p, TV, ATV, constants, slacks).
    Report(PairArgs),
    /// H-function: closed-form infimum, corollary lower bound, grid oracle.
    Hfun(HfunArgs),
    /// Generate a counterexample pair (3.5, 3.6, or 4.3) to files.
    Example(ExampleArgs),
    /// Convolve a grid density with a k-th order kernel.
    Smooth(SmoothArgs),
    /// Kernel-approximation inequality across bandwidths, with decay order.
    Lemma41(Lemma41Args),
    /// Adapted-to-classical Wasserstein bound with engine-computed constants.
    Thm29(Thm29Args),
    /// Monte-Carlo convergence-rate experiment for AW_1 (CSV output).
    Rate(RateArgs),
}

#[derive(Args)]
struct PairArgs {
    /// Order p >= 1 of the distance.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Path measure mu (JSON).
    mu: PathBuf,
    /// Path measure nu (JSON).
    nu: PathBuf,
}

#[derive(Args)]
struct WeightedPairArgs {
    /// Weighting function: `one`, `ppower` (uses --p), or `file:<w.json>`.
    #[arg(long, default_value = "one")]
    weight: String,
    /// Order p for the `ppower` weight `w(x) = 1 + |x|_p^p`.
    #[arg(long)]
    p: Option<f64>,
    /// Path measure mu (JSON).
    mu: PathBuf,
    /// Path measure nu (JSON).
    nu: PathBuf,
}

#[derive(Args)]
struct HfunArgs {
    #[arg(long)]
    l: f64,
    #[arg(long)]
    c: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    kappa: f64,
    #[arg(long)]
    a: f64,
    #[arg(long)]
    b: f64,
    /// Grid resolution of the oracle minimizer.
    #[arg(long, default_value_t = 400)]
    oracle_res: usize,
}

#[derive(Args)]
struct ExampleArgs {
    /// Example id: 3.5, 3.6, or 4.3.
    #[arg(long)]
    id: String,
    /// Perturbation size epsilon.
    #[arg(long)]
    eps: f64,
    /// Number of stages T (example 3.5 only).
    #[arg(long = "T")]
    t: Option<usize>,
    /// Comma-separated weighting increments c_2,...,c_T (example 3.5 only).
    #[arg(long)]
    cs: Option<String>,
    /// Kernel order k (example 4.3 only).
    #[arg(long)]
    k: Option<usize>,
    /// Grid mesh (example 4.3 only; must be <= eps/20).
    #[arg(long)]
    mesh: Option<f64>,
    /// Two output paths: mu and nu (JSON for 3.5/3.6, grid files for 4.3).
    /// For weighted 3.5 the tabulated weights land next to mu with a
    /// `.weights.json` suffix.
    #[arg(long, num_args = 2, value_names = ["MU", "NU"])]
    emit: Vec<PathBuf>,
}

#[derive(Args)]
struct SmoothArgs {
    /// Input grid density file.
    grid: PathBuf,
    /// Kernel family: box, gaussian, gaussian4, gaussian6.
    #[arg(long, default_value = "gaussian")]
    kernel: String,
    /// Kernel order k (1..=6).
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Bandwidth h (must resolve the grid cells).
    #[arg(long)]
    h: f64,
    /// Optional path for the smoothed grid.
    #[arg(long)]
    emit: Option<PathBuf>,
}

#[derive(Args)]
struct Lemma41Args {
    /// Input grid density file.
    grid: PathBuf,
    /// Kernel family: box, gaussian, gaussian4, gaussian6.
    #[arg(long, default_value = "gaussian")]
    kernel: String,
    /// Kernel order k (1..=6).
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Comma-separated bandwidths.
    #[arg(long, default_value = "0.5,0.25,0.125")]
    hs: String,
}

#[derive(Args)]
struct Thm29Args {
    /// Grid density mu.
    mu: PathBuf,
    /// Grid density nu.
    nu: PathBuf,
    /// Kernel family: box, gaussian, gaussian4, gaussian6.
    #[arg(long, default_value = "gaussian")]
    kernel: String,
    /// Kernel order k (1..=6).
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Distance order p >= 1.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Comparison order q > 1.
    #[arg(long, default_value_t = 2.0)]
    q: f64,
}

#[derive(Args)]
struct RateArgs {
    /// Target density: `uniform2d` or `grid:<file>`.
    #[arg(long, default_value = "uniform2d")]
    target: String,
    /// Estimator: `kde` or `wavelet`.
    #[arg(long, default_value = "kde")]
    estimator: String,
    /// Bandwidth constant: the KDE uses `h = h_scale * n^{-1/(dT+2)}`.
    #[arg(long, default_value_t = 1.0)]
    h_scale: f64,
    /// Comma-separated strictly increasing sample sizes.
    #[arg(long, default_value = "250,500,1000,2000,4000")]
    ns: String,
    /// Replications per sample size (>= 3).
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Cells per axis of the built-in uniform2d target / AW backend.
    #[arg(long, default_value_t = 24)]
    cells: usize,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("invalid --threads: pool size must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    let seed = cli.seed.or_else(env_seed).unwrap_or(0);
    let out = cli.out.clone();
    match &cli.cmd {
        Cmd::W(a) => cmd_pair("w", a, &out, |mu, nu, p| wasserstein_p(mu, nu, p)),
        Cmd::Aw(a) => cmd_pair("aw", a, &out, |mu, nu, p| adapted_wasserstein(mu, nu, p)),
        Cmd::Tv(a) => cmd_weighted("tv", a, &out, tv_weighted),
        Cmd::Atv(a) => cmd_weighted("atv", a, &out, atv_weighted),
        Cmd::Report(a) => cmd_report(a, &out),
        Cmd::Hfun(a) => cmd_hfun(a, &out),
        Cmd::Example(a) => cmd_example(a, &out),
        Cmd::Smooth(a) => cmd_smooth(a, &out),
        Cmd::Lemma41(a) => cmd_lemma41(a, &out),
        Cmd::Thm29(a) => cmd_thm29(a, &out),
        Cmd::Rate(a) => cmd_rate(a, seed, &out),
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("AWCLI_SEED").ok().and_then(|s| s.parse().ok())
}

fn emit(out: &str, content: &str) -> Result<()> {
    if out == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(content.as_bytes())?;
        Ok(())
    } else {
        fs::write(out, content).with_context(|| format!("writing {out}"))
    }
}

fn emit_json(out: &str, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit(out, &s)
}

fn load_measure(path: &Path) -> Result<PathMeasure> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PathMeasure::from_json_str(&s).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn load_grid(path: &Path) -> Result<GridDensity> {
    GridDensity::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn parse_weight(spec: &str, p: Option<f64>) -> Result<WeightSpec> {
    match spec {
        "one" => Ok(WeightSpec::One),
        "ppower" => {
            let p = p.ok_or_else(|| anyhow!("weight `ppower` needs --p"))?;
            if p < 1.0 {
                bail!("invalid --p {p}: ppower weight needs p >= 1");
            }
            Ok(WeightSpec::PPower(p))
        }
        other => {
            let path = other
                .strip_prefix("file:")
                .ok_or_else(|| anyhow!("unknown weight `{other}`: use one|ppower|file:<w.json>"))?;
            let s = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let table: WeightTable =
                serde_json::from_str(&s).with_context(|| format!("parsing weight table {path}"))?;
            Ok(WeightSpec::Tabulated(table))
        }
    }
}

fn parse_kernel(name: &str, k: usize, dims: usize) -> Result<KernelSpec> {
    let family = match name {
        "box" => KernelFamily::Box,
        "gaussian" => KernelFamily::Gaussian,
        "gaussian4" => KernelFamily::GaussianOrder(4),
        "gaussian6" => KernelFamily::GaussianOrder(6),
        other => bail!("unknown kernel `{other}`: use box|gaussian|gaussian4|gaussian6"),
    };
    make_kernel(family, k, dims).map_err(|e| anyhow!("{e}"))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("invalid {what} entry `{x}`"))
        })
        .collect()
}

fn cmd_pair(
    name: &str,
    a: &PairArgs,
    out: &str,
    f: impl Fn(&PathMeasure, &PathMeasure, f64) -> adapted_ot::Result<f64>,
) -> Result<()> {
    let mu = load_measure(&a.mu)?;
    let nu = load_measure(&a.nu)?;
    let value = f(&mu, &nu, a.p)?;
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": name,
                "p": a.p,
                "mu": a.mu.display().to_string(),
                "nu": a.nu.display().to_string(),
            },
            "value": value,
        }),
    )
}

fn cmd_weighted(
    name: &str,
    a: &WeightedPairArgs,
    out: &str,
    f: impl Fn(&PathMeasure, &PathMeasure, &WeightSpec) -> adapted_ot::Result<f64>,
) -> Result<()> {
    let mu = load_measure(&a.mu)?;
    let nu = load_measure(&a.nu)?;
    let w = parse_weight(&a.weight, a.p)?;
    let value = f(&mu, &nu, &w)?;
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": name,
                "weight": a.weight,
                "p": a.p,
                "mu": a.mu.display().to_string(),
                "nu": a.nu.display().to_string(),
            },
            "value": value,
        }),
    )
}

fn cmd_report(a: &PairArgs, out: &str) -> Result<()> {
    let mu = load_measure(&a.mu)?;
    let nu = load_measure(&a.nu)?;
    let report = bound_report(&mu, &nu, a.p)?;
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": "report",
                "p": a.p,
                "mu": a.mu.display().to_string(),
                "nu": a.nu.display().to_string(),
                "slack_tolerance": 1e-9,
            },
            "report": report,
        }),
    )
}

fn cmd_hfun(a: &HfunArgs, out: &str) -> Result<()> {
    let params = HParams::new(a.l, a.c, a.lambda, a.kappa, a.a, a.b)?;
    let closed = h_inf_closed(&params);
    let corollary = h_lower_cor(&params);
    let oracle = h_inf_oracle(&params, a.oracle_res)?;
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": "hfun",
                "l": a.l, "c": a.c, "lambda": a.lambda, "kappa": a.kappa,
                "a": a.a, "b": a.b,
                "oracle_res": a.oracle_res,
            },
            "closed_form": closed,
            "corollary_lower_bound": corollary,
            "oracle": oracle,
        }),
    )
}

fn cmd_example(a: &ExampleArgs, out: &str) -> Result<()> {
    if a.emit.len() != 2 {
        bail!("--emit needs exactly two output paths (mu, nu)");
    }
    let (mu_path, nu_path) = (&a.emit[0], &a.emit[1]);
    let mut summary = json!({
        "config": {
            "subcommand": "example",
            "id": a.id,
            "eps": a.eps,
            "T": a.t,
            "cs": a.cs,
            "k": a.k,
            "mesh": a.mesh,
            "mu": mu_path.display().to_string(),
            "nu": nu_path.display().to_string(),
        },
    });
    match a.id.as_str() {
        "3.5" => {
            let t = a.t.unwrap_or(2);
            let cs: Vec<f64> = match &a.cs {
                Some(s) => parse_list(s, "--cs")?,
                None => Vec::new(),
            };
            let params = Example35Params::new(t, a.eps, cs.clone())?;
            let (mu, nu, w) = gen_example35(&params)?;
            fs::write(mu_path, mu.to_json_string())?;
            fs::write(nu_path, nu.to_json_string())?;
            if let WeightSpec::Tabulated(table) = &w {
                let wpath = mu_path.with_extension("weights.json");
                fs::write(&wpath, serde_json::to_string_pretty(table)?)?;
                summary["weights"] = json!(wpath.display().to_string());
            }
            summary["tv_closed"] = json!(params.tv_closed());
            summary["atv_closed"] = json!(params.atv_closed());
            summary["lambda_limit"] = json!(params.lambda_limit());
        }
        "3.6" => {
            let (mu, nu) = gen_example36(a.eps)?;
            fs::write(mu_path, mu.to_json_string())?;
            fs::write(nu_path, nu.to_json_string())?;
            let (tv, atv) = adapted_ot::examples::example36_closed_forms(a.eps);
            summary["tv_closed"] = json!(tv);
            summary["atv_closed"] = json!(atv);
        }
        "4.3" => {
            let k = a.k.ok_or_else(|| anyhow!("example 4.3 needs --k"))?;
            let mesh = a.mesh.unwrap_or(a.eps / 20.0);
            let (mu, nu) = gen_example43(a.eps, k, mesh)?;
            mu.save(mu_path)?;
            nu.save(nu_path)?;
            summary["cells_per_axis"] = json!(mu.axes()[0].n);
        }
        other => bail!("unknown example id `{other}`: use 3.5|3.6|4.3"),
    }
    emit_json(out, &summary)
}

fn cmd_smooth(a: &SmoothArgs, out: &str) -> Result<()> {
    let f = load_grid(&a.grid)?;
    let spec = parse_kernel(&a.kernel, a.k, f.dims())?;
    let smoothed = convolve(&f, &spec, a.h)?;
    let l1_err = smoothed.l1_distance(&f)?;
    if let Some(path) = &a.emit {
        smoothed.save(path)?;
    }
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": "smooth",
                "grid": a.grid.display().to_string(),
                "kernel": a.kernel,
                "k": a.k,
                "h": a.h,
                "emit": a.emit.as_ref().map(|p| p.display().to_string()),
            },
            "l1_smoothing_error": l1_err,
            "mass": smoothed.mass(),
            "kernel_l1_norm": spec.l1_norm,
            "kernel_lipschitz": spec.lip,
        }),
    )
}

fn cmd_lemma41(a: &Lemma41Args, out: &str) -> Result<()> {
    let f = load_grid(&a.grid)?;
    let spec = parse_kernel(&a.kernel, a.k, f.dims())?;
    let hs: Vec<f64> = parse_list(&a.hs, "--hs")?;
    if hs.is_empty() {
        bail!("--hs needs at least one bandwidth");
    }
    let rows = lemma41_check(&f, &spec, a.k, &hs)?;
    let order = fitted_decay_order(&rows);
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": "lemma41",
                "grid": a.grid.display().to_string(),
                "kernel": a.kernel,
                "k": a.k,
                "hs": hs,
                "mesh": f.cell_sizes(),
            },
            "rows": rows,
            "fitted_decay_order": order,
        }),
    )
}

fn cmd_thm29(a: &Thm29Args, out: &str) -> Result<()> {
    let mu = load_grid(&a.mu)?;
    let nu = load_grid(&a.nu)?;
    let spec = parse_kernel(&a.kernel, a.k, mu.dims())?;
    let report = theorem29_bound(&mu, &nu, a.k, &spec, a.p, a.q)?;
    emit_json(
        out,
        &json!({
            "config": {
                "subcommand": "thm29",
                "mu": a.mu.display().to_string(),
                "nu": a.nu.display().to_string(),
                "kernel": a.kernel,
                "k": a.k,
                "p": a.p,
                "q": a.q,
                "slack_tolerance": 1e-6,
            },
            "report": report,
        }),
    )
}

fn cmd_rate(a: &RateArgs, seed: u64, out: &str) -> Result<()> {
    let target = match a.target.as_str() {
        "uniform2d" => {
            if a.cells < 2 {
                bail!("invalid --cells {}: need >= 2", a.cells);
            }
            let axes = vec![
                Axis { lo: 0.0, hi: 1.0, n: a.cells },
                Axis { lo: 0.0, hi: 1.0, n: a.cells },
            ];
            GridDensity::from_fn(axes, |_| 1.0)?
        }
        other => {
            let path = other
                .strip_prefix("grid:")
                .ok_or_else(|| anyhow!("unknown target `{other}`: use uniform2d|grid:<file>"))?;
            load_grid(Path::new(path))?
        }
    };
    let estimator = match a.estimator.as_str() {
        "kde" => EstimatorKind::Kde { h_scale: a.h_scale },
        "wavelet" => EstimatorKind::Wavelet(WaveletEstimatorConfig {
            j0: 1,
            s: 1.0,
            dt: target.dims(),
            j_override: None,
        }),
        other => bail!("unknown estimator `{other}`: use kde|wavelet"),
    };
    let sizes: Vec<usize> = parse_list(&a.ns, "--ns")?;
    let config = RateExperimentConfig {
        sizes,
        reps: a.reps,
        seed,
        estimator,
    };
    let table = rate_experiment(&target, &config)?;

    let header = json!({
        "subcommand": "rate",
        "target": a.target,
        "estimator": a.estimator,
        "h_scale": a.h_scale,
        "ns": config.sizes,
        "reps": a.reps,
        "seed": seed,
        "cells": a.cells,
    });
    let mut buf = Vec::new();
    writeln!(buf, "# config: {header}")?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["n", "mean", "sd", "slope", "slope_se"])?;
        for row in &table.rows {
            w.write_record([
                row.n.to_string(),
                format!("{:.17e}", row.mean),
                format!("{:.17e}", row.sd),
                format!("{:.17e}", table.slope),
                format!("{:.17e}", table.slope_se),
            ])?;
        }
        w.flush()?;
    }
    emit(out, &String::from_utf8(buf)?)
}
