//! Density estimators and Monte-Carlo convergence-rate experiments.
//!
//! Three estimators of a law on `R^{dT}` from i.i.d. path samples:
//!
//! * [`empirical_measure`] — the empirical law `mu_n = (1/n) sum delta_{X_i}`
//!   as a scenario tree (duplicate samples merge);
//! * [`kde`] — a Gaussian product-kernel density estimate evaluated on a grid,
//!   clipped into the grid box and renormalized;
//! * [`wavelet_estimator`] — the linear Haar-wavelet estimator on `[0,1]^{dT}`
//!   with exact empirical coefficients, plus [`mu_hat`], its probability-measure
//!   correction: if the reconstruction dips below zero it falls back to a
//!   Gaussian bump centered at the first sample.
//!
//! [`rate_experiment`] measures how fast `AW_1(mu, hat mu_n)` decays in `n`:
//! the target density and each estimate are quantized on the *same* fixed
//! backend grid (so the common discretization bias cancels), replications run
//! in parallel on independent seeded substreams, and a log-log least-squares
//! fit reports the empirical rate with its standard error.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapted::adapted_wasserstein;
use crate::error::{Error, Result};
use crate::measures::PathMeasure;
use crate::smoothing::{Axis, GridDensity};

/// Empirical measure of `n` path samples, each a flat vector of length `d*T`.
///
/// Atoms get weight `1/n`; samples that coincide after canonical rounding are
/// merged, so `n = 1` yields a Dirac measure.
pub fn empirical_measure(samples: &[Vec<f64>], t: usize, d: usize) -> Result<PathMeasure> {
    if samples.is_empty() {
        return Err(Error::Parse("empirical measure needs at least one sample".into()));
    }
    let w = 1.0 / samples.len() as f64;
    let atoms: Vec<(Vec<f64>, f64)> = samples.iter().map(|s| (s.clone(), w)).collect();
    PathMeasure::from_atoms(t, d, &atoms)
}

/// Rule-of-thumb kernel bandwidth `h = n^{-1/(dT+2)}`.
pub fn kde_bandwidth(n: usize, dt: usize) -> f64 {
    (n as f64).powf(-1.0 / (dt as f64 + 2.0))
}

/// Gaussian product-kernel density estimate on the given grid.
///
/// The raw estimate `(1/n) sum_i prod_k phi((x_k - X_{i,k}) / h) / h` is
/// evaluated at cell centers; the mass that leaks outside the grid box is
/// clipped away and the density renormalized. Returns the density together
/// with the pre-renormalization mass deviation `mass - 1` (a boundary-leakage
/// diagnostic). Errors with [`Error::BandwidthTooSmall`] when `h` resolves
/// below the coarsest cell.
pub fn kde(samples: &[Vec<f64>], h: f64, axes: &[Axis]) -> Result<(GridDensity, f64)> {
    if samples.is_empty() {
        return Err(Error::Parse("kde needs at least one sample".into()));
    }
    let dims = axes.len();
    let max_cell = axes.iter().map(Axis::delta).fold(0.0f64, f64::max);
    if h < max_cell {
        return Err(Error::BandwidthTooSmall { h, cell: max_cell });
    }
    for s in samples {
        if s.len() != dims {
            return Err(Error::Parse(format!(
                "sample of dimension {} on a {dims}-axis grid",
                s.len()
            )));
        }
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h);
    // Separable kernel: precompute per-axis factor tables (cell index x sample).
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for (k, ax) in axes.iter().enumerate() {
        let mut table = vec![0.0; ax.n * samples.len()];
        for i in 0..ax.n {
            let c = ax.center(i);
            for (j, s) in samples.iter().enumerate() {
                let z = (c - s[k]) / h;
                table[i * samples.len() + j] = norm * (-0.5 * z * z).exp();
            }
        }
        factors.push(table);
    }
    let n_samples = samples.len();
    let total_cells: usize = axes.iter().map(|a| a.n).product();
    let mut values = vec![0.0; total_cells];
    let mut idx = vec![0usize; dims];
    for v in values.iter_mut() {
        let mut acc = 0.0;
        for j in 0..n_samples {
            let mut prod = 1.0;
            for k in 0..dims {
                prod *= factors[k][idx[k] * n_samples + j];
            }
            acc += prod;
        }
        *v = acc / n_samples as f64;
        for k in (0..dims).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].n {
                break;
            }
            idx[k] = 0;
        }
    }
    let mut g = GridDensity::new(axes.to_vec(), values, false)?;
    let deviation = g.normalize()?;
    Ok((g, deviation))
}

/// Configuration of the linear Haar-wavelet estimator on `[0,1]^{dT}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveletEstimatorConfig {
    /// Coarsest level `j_0 >= 0`.
    pub j0: usize,
    /// Assumed smoothness `s > 0` driving the level rule.
    pub s: f64,
    /// Total dimension `dT >= 1` of the sample space.
    pub dt: usize,
    /// Optional fixed resolution level, bypassing the `n`-dependent rule.
    pub j_override: Option<usize>,
}

impl WaveletEstimatorConfig {
    /// Resolution level for `n` samples: `round(log2 n / (2s + dT))`, clamped
    /// to `[j0, max(j0, 12 / dT)]` so the reconstruction grid stays bounded.
    pub fn level(&self, n: usize) -> usize {
        if let Some(j) = self.j_override {
            return j.max(self.j0);
        }
        let raw = ((n as f64).log2() / (2.0 * self.s + self.dt as f64)).round();
        let hi = self.j0.max(12 / self.dt.max(1));
        (raw.max(0.0) as usize).clamp(self.j0, hi)
    }

    fn validate(&self) -> Result<()> {
        if self.dt == 0 {
            return Err(Error::Parse("wavelet config: dT must be >= 1".into()));
        }
        if !(self.s > 0.0) {
            return Err(Error::Parse(format!(
                "wavelet config: smoothness s must be positive, got {}",
                self.s
            )));
        }
        Ok(())
    }
}

/// Exact empirical Haar coefficients of a sample on `[0,1]^{dT}`.
///
/// `scaling[c]` is the coefficient of the tensor scaling function on the
/// level-`j0` dyadic cell with row-major index `c`; each entry of `details`
/// holds one level `j in j0..jn` and one nonzero type mask (bit `k` set means
/// the Haar mother wavelet acts on axis `k`), with coefficients row-major over
/// the level-`j` dyadic cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveletCoefficients {
    pub j0: usize,
    pub jn: usize,
    pub dt: usize,
    pub scaling: Vec<f64>,
    pub details: Vec<(usize, u32, Vec<f64>)>,
}

fn dyadic_cell(x: f64, j: usize) -> usize {
    // x = 1.0 belongs to the last cell.
    (((x * (1u64 << j) as f64) as usize).min((1usize << j) - 1)).max(0)
}

/// Linear Haar-wavelet density estimator.
///
/// Coefficients are exact empirical means `(1/n) sum_i xi(X_i)` of the basis
/// evaluations; the reconstruction is returned on the dyadic grid at level
/// `J_n` (for the Haar basis the telescoped reconstruction is exactly the
/// dyadic histogram at level `J_n`, which the unit tests verify). The output
/// is *not* normalized as a density — it integrates to 1 by construction but
/// may be negative; see [`mu_hat`] for the probability-measure correction.
/// Errors with [`Error::SampleOutOfBox`] when a coordinate leaves `[0,1]`.
pub fn wavelet_estimator(
    samples: &[Vec<f64>],
    config: &WaveletEstimatorConfig,
) -> Result<(GridDensity, WaveletCoefficients)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Parse("wavelet estimator needs at least one sample".into()));
    }
    let dt = config.dt;
    for s in samples {
        if s.len() != dt {
            return Err(Error::Parse(format!(
                "sample of dimension {} with dT = {dt}",
                s.len()
            )));
        }
        for &x in s {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::SampleOutOfBox(x));
            }
        }
    }
    let j0 = config.j0;
    let jn = config.level(samples.len());
    let inv_n = 1.0 / samples.len() as f64;

    // Scaling coefficients at level j0.
    let n0 = 1usize << j0;
    let cells0 = n0.pow(dt as u32);
    let scale0 = 2.0f64.powi((dt * j0) as i32).sqrt(); // 2^{dT j0 / 2}
    let mut scaling = vec![0.0; cells0];
    for s in samples {
        let mut flat = 0usize;
        for &x in s {
            flat = flat * n0 + dyadic_cell(x, j0);
        }
        scaling[flat] += scale0 * inv_n;
    }

    // Detail coefficients for levels j0..jn and nonzero type masks.
    let mut details: Vec<(usize, u32, Vec<f64>)> = Vec::new();
    for j in j0..jn {
        let nj = 1usize << j;
        let cells = nj.pow(dt as u32);
        let amp = 2.0f64.powi((dt * j) as i32).sqrt(); // 2^{dT j / 2}
        for mask in 1u32..(1u32 << dt) {
            let mut coeffs = vec![0.0; cells];
            for s in samples {
                let mut flat = 0usize;
                let mut sign = 1.0;
                for (k, &x) in s.iter().enumerate() {
                    flat = flat * nj + dyadic_cell(x, j);
                    if mask & (1 << k) != 0 && dyadic_cell(x, j + 1) % 2 == 1 {
                        sign = -sign;
                    }
                }
                coeffs[flat] += sign * amp * inv_n;
            }
            details.push((j, mask, coeffs));
        }
    }

    // Reconstruction on the level-jn dyadic grid.
    let nj = 1usize << jn;
    let axes: Vec<Axis> = (0..dt).map(|_| Axis { lo: 0.0, hi: 1.0, n: nj }).collect();
    let total = nj.pow(dt as u32);
    let mut values = vec![0.0; total];
    let mut idx = vec![0usize; dt];
    for v in values.iter_mut() {
        // Scaling contribution.
        let mut flat0 = 0usize;
        for &i in &idx {
            flat0 = flat0 * n0 + (i >> (jn - j0));
        }
        let mut acc = scaling[flat0] * scale0;
        // Detail contributions.
        for (j, mask, coeffs) in &details {
            let nj_j = 1usize << j;
            let amp = 2.0f64.powi((dt * j) as i32).sqrt();
            let mut flat = 0usize;
            let mut sign = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                flat = flat * nj_j + (i >> (jn - j));
                if mask & (1 << k) != 0 && (i >> (jn - j - 1)) % 2 == 1 {
                    sign = -sign;
                }
            }
            acc += sign * amp * coeffs[flat];
        }
        *v = acc;
        for k in (0..dt).rev() {
            idx[k] += 1;
            if idx[k] < nj {
                break;
            }
            idx[k] = 0;
        }
    }
    let grid = GridDensity::new(axes, values, false)?;
    let coeffs = WaveletCoefficients { j0, jn, dt, scaling, details };
    Ok((grid, coeffs))
}

/// Result of the positivity-corrected wavelet estimator.
#[derive(Debug, Clone)]
pub struct MuHatResult {
    /// Nonnegative density integrating to 1 on its grid.
    pub density: GridDensity,
    /// True when the raw reconstruction went negative and the Gaussian
    /// fallback bump was used instead.
    pub fallback: bool,
    /// Mass deviation `mass - 1` absorbed by the final renormalization.
    pub mass_deviation: f64,
}

/// Probability-measure correction of a raw wavelet reconstruction.
///
/// If `f_tilde` is nonnegative everywhere it is renormalized and returned;
/// otherwise the estimate is replaced by a standard Gaussian bump centered at
/// `center` (the first sample), restricted to the grid and renormalized, with
/// the fallback flag set.
pub fn mu_hat_from(f_tilde: GridDensity, center: &[f64]) -> Result<MuHatResult> {
    if center.len() != f_tilde.dims() {
        return Err(Error::Parse(format!(
            "fallback center of dimension {} on a {}-axis grid",
            center.len(),
            f_tilde.dims()
        )));
    }
    if f_tilde.values().iter().all(|&v| v >= 0.0) {
        let mut g = f_tilde;
        let dev = g.normalize()?;
        return Ok(MuHatResult { density: g, fallback: false, mass_deviation: dev });
    }
    let c = center.to_vec();
    let mut g = GridDensity::from_fn(f_tilde.axes().to_vec(), |x| {
        let q: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        (-0.5 * q).exp()
    })?;
    let dev = g.normalize()?;
    Ok(MuHatResult { density: g, fallback: true, mass_deviation: dev })
}

/// Wavelet estimator followed by the positivity correction [`mu_hat_from`].
pub fn mu_hat(samples: &[Vec<f64>], config: &WaveletEstimatorConfig) -> Result<MuHatResult> {
    let (f_tilde, _) = wavelet_estimator(samples, config)?;
    mu_hat_from(f_tilde, &samples[0])
}

/// Which estimator a rate experiment drives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Gaussian KDE with bandwidth `h_scale * n^{-1/(dT+2)}` (the rate rule
    /// fixes only the exponent, so the constant is a tuning input), evaluated
    /// directly on the backend grid.
    Kde { h_scale: f64 },
    /// Positivity-corrected Haar-wavelet estimator (requires the target to
    /// live on `[0,1]^{dT}`).
    Wavelet(WaveletEstimatorConfig),
}

/// Configuration of a Monte-Carlo rate experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateExperimentConfig {
    /// Strictly increasing sample sizes.
    pub sizes: Vec<usize>,
    /// Replications per size, `>= 3`.
    pub reps: usize,
    /// Master seed; replication `(i, r)` uses the substream
    /// `seed + (i << 32) + r`, so results are independent of scheduling.
    pub seed: u64,
    /// Estimator under test.
    pub estimator: EstimatorKind,
}

/// One row of a rate table: mean and standard deviation of `AW_1(mu, hat
/// mu_n)` over the replications at sample size `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Rate-experiment output: per-size statistics and the log-log least-squares
/// slope of the mean error in `n`, with its standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub slope: f64,
    pub slope_se: f64,
}

/// Draw `n` samples from a grid density: a cell proportional to its mass,
/// then uniform within the cell.
pub fn sample_grid<R: Rng>(g: &GridDensity, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let vol = g.cell_volume();
    let cum: Vec<f64> = g
        .values()
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v.max(0.0) * vol;
            Some(*acc)
        })
        .collect();
    let total = *cum.last().unwrap_or(&0.0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let cell = cum.partition_point(|&c| c < u).min(cum.len() - 1);
        let center = g.cell_center(cell);
        let point: Vec<f64> = center
            .iter()
            .zip(g.axes())
            .map(|(&c, ax)| c + (rng.gen::<f64>() - 0.5) * ax.delta())
            .collect();
        out.push(point);
    }
    out
}

/// Least-squares slope of `y` on `x` with its standard error.
fn slope_with_se(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return (0.0, f64::INFINITY);
    }
    let slope = sxy / sxx;
    if pts.len() <= 2 {
        return (slope, 0.0);
    }
    let rss: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - my - slope * (p.0 - mx);
            r * r
        })
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

/// Monte-Carlo convergence-rate experiment for `AW_1(mu, hat mu_n)`.
///
/// The target and every estimate are quantized on the same fixed backend grid
/// (the target's own grid), so the common discretization bias cancels and the
/// backend resolution does not change with `n`. Wavelet estimates, which live
/// on their own dyadic grid, are resampled onto the backend grid by
/// point evaluation at cell centers (exact for piecewise-constant
/// reconstructions whose dyadic grid refines the backend grid) and
/// renormalized. Replications run in parallel; per-replication seeds depend
/// only on `(size index, replication index)`, and the per-size statistics sum
/// in fixed index order, so the output is byte-identical across thread-pool
/// sizes.
pub fn rate_experiment(target: &GridDensity, config: &RateExperimentConfig) -> Result<RateTable> {
    if config.sizes.len() < 2 {
        return Err(Error::Parse("rate experiment needs at least two sample sizes".into()));
    }
    if !config.sizes.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Parse("rate experiment sizes must be strictly increasing".into()));
    }
    if config.reps < 3 {
        return Err(Error::Parse(format!(
            "rate experiment needs >= 3 replications, got {}",
            config.reps
        )));
    }
    let target_tree = target.quantize()?;
    let dt = target.dims();
    let tasks: Vec<(usize, usize)> = (0..config.sizes.len())
        .flat_map(|i| (0..config.reps).map(move |r| (i, r)))
        .collect();
    let errs: Vec<Result<(usize, usize, f64)>> = tasks
        .par_iter()
        .map(|&(i, r)| {
            let n = config.sizes[i];
            let stream = config
                .seed
                .wrapping_add((i as u64) << 32)
                .wrapping_add(r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let samples = sample_grid(target, n, &mut rng);
            let estimate = match &config.estimator {
                EstimatorKind::Kde { h_scale } => {
                    let h = h_scale * kde_bandwidth(n, dt);
                    kde(&samples, h, target.axes())?.0
                }
                EstimatorKind::Wavelet(wc) => {
                    let hat = mu_hat(&samples, wc)?;
                    regrid_to(&hat.density, target.axes())?
                }
            };
            let est_tree = estimate.quantize()?;
            let aw = adapted_wasserstein(&target_tree, &est_tree, 1.0)?;
            Ok((i, r, aw))
        })
        .collect();
    let mut table = vec![vec![0.0; config.reps]; config.sizes.len()];
    for e in errs {
        let (i, r, aw) = e?;
        table[i][r] = aw;
    }
    let mut rows = Vec::with_capacity(config.sizes.len());
    for (i, &n) in config.sizes.iter().enumerate() {
        let mean = table[i].iter().sum::<f64>() / config.reps as f64;
        let var = table[i].iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>()
            / (config.reps - 1) as f64;
        rows.push(RateRow { n, mean, sd: var.sqrt() });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.mean.max(1e-300).ln()))
        .collect();
    let (slope, slope_se) = slope_with_se(&pts);
    Ok(RateTable { rows, slope, slope_se })
}

/// Resample a density onto different axes over the same box by point
/// evaluation at the new cell centers, then renormalize.
fn regrid_to(f: &GridDensity, axes: &[Axis]) -> Result<GridDensity> {
    for (a, b) in f.axes().iter().zip(axes) {
        if (a.lo - b.lo).abs() > 1e-12 || (a.hi - b.hi).abs() > 1e-12 {
            return Err(Error::GridMismatch(format!(
                "regrid boxes differ: [{},{}] vs [{},{}]",
                a.lo, a.hi, b.lo, b.hi
            )));
        }
    }
    let src_axes = f.axes().to_vec();
    let src_values = f.values().to_vec();
    let dims = src_axes.len();
    let mut g = GridDensity::from_fn(axes.to_vec(), |x| {
        let mut flat = 0usize;
        for k in 0..dims {
            let ax = &src_axes[k];
            let i = (((x[k] - ax.lo) / ax.delta()) as usize).min(ax.n - 1);
            flat = flat * ax.n + i;
        }
        src_values[flat].max(0.0)
    })?;
    g.normalize()?;
    Ok(g)
}
