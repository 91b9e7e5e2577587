//! Bicausal transport quantities on scenario trees.
//!
//! * `TV_w` and `ATV_w`: the weighted (adapted) total variation distances with
//!   transport cost `(w(x) + w(y)) 1_{x != y}`, computed in closed form from
//!   the density processes of the pair relative to `(mu + nu) / 2`:
//!   `TV_w = E_P[w (Z^1 + Z^2 - 2 min(Z^1, Z^2))]` and
//!   `ATV_w = int w dmu + int w dnu - 2 E_P[w prod_t min(D^1_t, D^2_t)]`.
//! * `AW_p`: the adapted (bicausal) Wasserstein distance via backward dynamic
//!   programming over pairs of tree nodes.
//! * The conditional weighting constants `c_t` and the resulting multiplier
//!   `lambda = 1 + 2 sum_{t=1}^{T-1} prod_{s=t+1}^T (1 + c_s)`, which bounds
//!   `ATV_w <= lambda TV_w` (equal to `2T - 1` when `c == 0`).
//! * [`bound_report`]: all six distance values plus the full inequality chain
//!   `W_p^p <= AW_p^p <= 2^p ATV_p^p <= 2^p lambda TV_p^p` with slacks.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{canon_key, refine_pair, PathMeasure, WeightSpec};
use crate::ot_exact::{lp_cost, quantile_coupling, transport_lp, Coupling};

/// The conditional weighting constants `c_t`, `t = 2..T`, together with the
/// per-node conditional-moment ratios over which the essential supremum is
/// taken.
#[derive(Debug, Clone, Serialize)]
pub struct CtVector {
    /// Number of stages of the underlying measure.
    pub t: usize,
    /// `cts[i]` is `c_{i+2}`; empty when `T = 1`.
    pub cts: Vec<f64>,
    /// `(node id, stage t, ratio)` for every charged node at depth `t - 1`.
    pub ratios: Vec<(usize, usize, f64)>,
}

/// One inequality of a [`BoundReport`]: `lhs <= rhs` with slack `rhs - lhs`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

/// All distance values and constants of the bound chain for one pair.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub t: usize,
    pub p: f64,
    /// `TV = TV_w` with `w == 1`.
    pub tv: f64,
    /// `ATV = ATV_w` with `w == 1`.
    pub atv: f64,
    /// `TV_p^p`: the `TV_w` value with `w = 1 + |x|_p^p` (no root taken).
    pub tv_p_pow: f64,
    /// `ATV_p^p` likewise.
    pub atv_p_pow: f64,
    /// `AW_p^p`.
    pub aw_p_pow: f64,
    /// `W_p^p`.
    pub w_p_pow: f64,
    /// `2T - 1`.
    pub lambda_plain: f64,
    /// `1 + 2 sum_t prod_s (1 + c_s)` with `c` from the second marginal.
    pub lambda_weighted: f64,
    /// `diam(K)^p = max |x - y|_p^p` over the union of the two supports.
    pub diam_p_pow: f64,
    pub ct: CtVector,
    pub checks: Vec<BoundCheck>,
}

/// One stage plan of the bicausal DP: the optimal kernel coupling at a pair
/// of tree nodes.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub mu_node: usize,
    pub nu_node: usize,
    pub plan: Coupling,
}

/// `int w dmu` over the support.
pub fn integral_w(mu: &PathMeasure, w: &WeightSpec) -> Result<f64> {
    let mut s = 0.0;
    for (path, prob) in mu.paths() {
        s += prob * w.eval(&path)?;
    }
    Ok(s)
}

/// Weighted total variation `TV_w(mu, nu)`, exact closed form.
pub fn tv_weighted(mu: &PathMeasure, nu: &PathMeasure, w: &WeightSpec) -> Result<f64> {
    let dp = refine_pair(mu, nu)?;
    let mut s = 0.0;
    for l in dp.leaves() {
        let wt = w.eval(&l.path)?;
        s += l.p_prob * wt * (l.z1 + l.z2 - 2.0 * l.z1.min(l.z2));
    }
    Ok(s.max(0.0))
}

/// Weighted adapted total variation `ATV_w(mu, nu)`, exact closed form.
pub fn atv_weighted(mu: &PathMeasure, nu: &PathMeasure, w: &WeightSpec) -> Result<f64> {
    let dp = refine_pair(mu, nu)?;
    let mut diag = 0.0;
    for l in dp.leaves() {
        diag += l.p_prob * w.eval(&l.path)? * l.min_prod;
    }
    let s = integral_w(mu, w)? + integral_w(nu, w)? - 2.0 * diag;
    Ok(s.max(0.0))
}

/// Mass the diagonal carries under an optimal `TV_w` plan:
/// `int d(mu /\ nu) = E_P[min(Z^1, Z^2)]`.
pub fn min_measure_mass(mu: &PathMeasure, nu: &PathMeasure) -> Result<f64> {
    let dp = refine_pair(mu, nu)?;
    Ok(dp
        .leaves()
        .iter()
        .map(|l| l.p_prob * l.z1.min(l.z2))
        .sum())
}

/// Stagewise analog for `ATV_w`: `E_P[prod_t min(D^1_t, D^2_t)]`.
pub fn min_kernel_mass(mu: &PathMeasure, nu: &PathMeasure) -> Result<f64> {
    let dp = refine_pair(mu, nu)?;
    Ok(dp.leaves().iter().map(|l| l.p_prob * l.min_prod).sum())
}

/// LP oracle for `TV_w`: the transportation LP over all couplings with cost
/// `(w(x) + w(y)) 1_{x != y}`. Returns the value and the optimal plan.
pub fn tv_lp_oracle(
    mu: &PathMeasure,
    nu: &PathMeasure,
    w: &WeightSpec,
) -> Result<(f64, Coupling)> {
    let pa = mu.paths();
    let pb = nu.paths();
    let a: Vec<f64> = pa.iter().map(|x| x.1).collect();
    let b: Vec<f64> = pb.iter().map(|x| x.1).collect();
    let mut cost = vec![vec![0.0; pb.len()]; pa.len()];
    for (i, (x, _)) in pa.iter().enumerate() {
        let kx = canon_key(x);
        let wx = w.eval(x)?;
        for (j, (y, _)) in pb.iter().enumerate() {
            if kx != canon_key(y) {
                cost[i][j] = wx + w.eval(y)?;
            }
        }
    }
    transport_lp(&a, &b, &cost)
}

/// Conditional expectation of `w(X)` through every edge:
/// `out[u][k] = E[w(X_{1:T}) | X passes through edge k of node u]`.
fn edge_cond_w(m: &PathMeasure, w: &WeightSpec) -> Result<Vec<Vec<f64>>> {
    let n = m.num_nodes();
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); n];
    // BFS numbering puts children after parents, so process in reverse.
    for u in (0..n).rev() {
        let prefix = m.prefix_of(u);
        let mut vals = Vec::with_capacity(m.children(u).len());
        for e in m.children(u) {
            let v = match e.child {
                None => {
                    let mut full = prefix.clone();
                    full.extend_from_slice(&e.state);
                    w.eval(&full)?
                }
                Some(c) => m
                    .children(c)
                    .iter()
                    .zip(&out[c])
                    .map(|(ce, &cv)| ce.prob * cv)
                    .sum(),
            };
            vals.push(v);
        }
        out[u] = vals;
    }
    Ok(out)
}

/// Independent DP oracle for `ATV_w`: backward recursion of the bicausal
/// transport problem with cost `(w(x) + w(y)) 1_{x != y}`. Once two paths have
/// diverged, the remaining cost under any coupling is the sum of the two
/// conditional expectations of `w`, so the recursion only branches over pairs
/// with equal prefixes.
pub fn atv_bicausal_dp(mu: &PathMeasure, nu: &PathMeasure, w: &WeightSpec) -> Result<f64> {
    if mu.stages() != nu.stages() || mu.dim() != nu.dim() {
        return Err(Error::ShapeMismatch {
            t_left: mu.stages(),
            d_left: mu.dim(),
            t_right: nu.stages(),
            d_right: nu.dim(),
        });
    }
    let mw_mu = edge_cond_w(mu, w)?;
    let mw_nu = edge_cond_w(nu, w)?;
    let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
    fn solve(
        mu: &PathMeasure,
        nu: &PathMeasure,
        mw_mu: &[Vec<f64>],
        mw_nu: &[Vec<f64>],
        u: usize,
        v: usize,
        memo: &mut HashMap<(usize, usize), f64>,
    ) -> Result<f64> {
        if let Some(&val) = memo.get(&(u, v)) {
            return Ok(val);
        }
        let eu = mu.children(u);
        let ev = nu.children(v);
        let a: Vec<f64> = eu.iter().map(|e| e.prob).collect();
        let b: Vec<f64> = ev.iter().map(|e| e.prob).collect();
        let mut cost = vec![vec![0.0; ev.len()]; eu.len()];
        for (i, ei) in eu.iter().enumerate() {
            let ki = canon_key(&ei.state);
            for (j, ej) in ev.iter().enumerate() {
                cost[i][j] = if ki == canon_key(&ej.state) {
                    match (ei.child, ej.child) {
                        (Some(ci), Some(cj)) => solve(mu, nu, mw_mu, mw_nu, ci, cj, memo)?,
                        _ => 0.0,
                    }
                } else {
                    mw_mu[u][i] + mw_nu[v][j]
                };
            }
        }
        let (val, _) = transport_lp(&a, &b, &cost)?;
        memo.insert((u, v), val);
        Ok(val)
    }
    solve(mu, nu, &mw_mu, &mw_nu, 0, 0, &mut memo)
}

fn aw_solve(
    mu: &PathMeasure,
    nu: &PathMeasure,
    p: f64,
    u: usize,
    v: usize,
    memo: &mut HashMap<(usize, usize), f64>,
    plans: &mut Option<&mut Vec<StagePlan>>,
) -> Result<f64> {
    if let Some(&val) = memo.get(&(u, v)) {
        return Ok(val);
    }
    let eu = mu.children(u);
    let ev = nu.children(v);
    let leaf = eu[0].child.is_none();
    let val = if leaf && mu.dim() == 1 {
        // Final stage in 1D: quantile coupling is exact for |x - y|^p.
        let a: Vec<(f64, f64)> = eu.iter().map(|e| (e.state[0], e.prob)).collect();
        let b: Vec<(f64, f64)> = ev.iter().map(|e| (e.state[0], e.prob)).collect();
        let (cost, entries) = quantile_coupling(&a, &b, p);
        if let Some(out) = plans.as_deref_mut() {
            out.push(StagePlan {
                mu_node: u,
                nu_node: v,
                plan: Coupling {
                    entries,
                    u: Vec::new(),
                    v: Vec::new(),
                },
            });
        }
        cost
    } else {
        let a: Vec<f64> = eu.iter().map(|e| e.prob).collect();
        let b: Vec<f64> = ev.iter().map(|e| e.prob).collect();
        let mut cost = vec![vec![0.0; ev.len()]; eu.len()];
        for (i, ei) in eu.iter().enumerate() {
            for (j, ej) in ev.iter().enumerate() {
                let stage = lp_cost(&ei.state, &ej.state, p);
                let togo = match (ei.child, ej.child) {
                    (Some(ci), Some(cj)) => aw_solve(mu, nu, p, ci, cj, memo, plans)?,
                    _ => 0.0,
                };
                cost[i][j] = stage + togo;
            }
        }
        let (val, plan) = transport_lp(&a, &b, &cost)?;
        if let Some(out) = plans.as_deref_mut() {
            out.push(StagePlan {
                mu_node: u,
                nu_node: v,
                plan,
            });
        }
        val
    };
    memo.insert((u, v), val);
    Ok(val)
}

fn check_shapes(mu: &PathMeasure, nu: &PathMeasure) -> Result<()> {
    if mu.stages() != nu.stages() || mu.dim() != nu.dim() {
        return Err(Error::ShapeMismatch {
            t_left: mu.stages(),
            d_left: mu.dim(),
            t_right: nu.stages(),
            d_right: nu.dim(),
        });
    }
    Ok(())
}

/// Adapted Wasserstein distance `AW_p(mu, nu)` with the optimal stagewise
/// kernel couplings (one per visited node pair).
pub fn adapted_wasserstein_dp(
    mu: &PathMeasure,
    nu: &PathMeasure,
    p: f64,
) -> Result<(f64, Vec<StagePlan>)> {
    check_shapes(mu, nu)?;
    let mut memo = HashMap::new();
    let mut plans = Vec::new();
    let val = aw_solve(mu, nu, p, 0, 0, &mut memo, &mut Some(&mut plans))?;
    Ok((val.max(0.0).powf(1.0 / p), plans))
}

/// Adapted Wasserstein distance, value only (no plan materialization).
pub fn adapted_wasserstein(mu: &PathMeasure, nu: &PathMeasure, p: f64) -> Result<f64> {
    check_shapes(mu, nu)?;
    let mut memo = HashMap::new();
    let val = aw_solve(mu, nu, p, 0, 0, &mut memo, &mut None)?;
    Ok(val.max(0.0).powf(1.0 / p))
}

/// Lower bound for `AW_p`: the first-stage transport problem whose cost is
/// the Wasserstein distance (to the power `p`) between the conditional
/// remainders, i.e. `inf_{pi_1} int W_p^p(mu_{x_1}, nu_{y_1}) dpi_1`, to the
/// power `1/p`. Valid since any bicausal coupling disintegrates into a
/// first-stage coupling and conditional couplings of the remainders.
pub fn aw_first_stage_lower_bound(mu: &PathMeasure, nu: &PathMeasure, p: f64) -> Result<f64> {
    check_shapes(mu, nu)?;
    let eu = mu.children(0);
    let ev = nu.children(0);
    if mu.stages() == 1 {
        return crate::ot_exact::wasserstein_p(mu, nu, p);
    }
    let subpaths = |m: &PathMeasure, node: usize| -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<f64>, f64)> = vec![(node, Vec::new(), 1.0)];
        while let Some((x, prefix, w)) = stack.pop() {
            for e in m.children(x) {
                let mut p2 = prefix.clone();
                p2.extend_from_slice(&e.state);
                match e.child {
                    Some(c) => stack.push((c, p2, w * e.prob)),
                    None => out.push((p2, w * e.prob)),
                }
            }
        }
        out
    };
    let one_dim_tail = mu.dim() == 1 && mu.stages() == 2;
    let mut cost = vec![vec![0.0; ev.len()]; eu.len()];
    for (i, ei) in eu.iter().enumerate() {
        for (j, ej) in ev.iter().enumerate() {
            let (ci, cj) = (ei.child.unwrap(), ej.child.unwrap());
            cost[i][j] = if one_dim_tail {
                let a: Vec<(f64, f64)> = mu
                    .children(ci)
                    .iter()
                    .map(|e| (e.state[0], e.prob))
                    .collect();
                let b: Vec<(f64, f64)> = nu
                    .children(cj)
                    .iter()
                    .map(|e| (e.state[0], e.prob))
                    .collect();
                crate::ot_exact::quantile_transport_cost(&a, &b, p)
            } else {
                let pa = subpaths(mu, ci);
                let pb = subpaths(nu, cj);
                let a: Vec<f64> = pa.iter().map(|x| x.1).collect();
                let b: Vec<f64> = pb.iter().map(|x| x.1).collect();
                let c: Vec<Vec<f64>> = pa
                    .iter()
                    .map(|(x, _)| pb.iter().map(|(y, _)| lp_cost(x, y, p)).collect())
                    .collect();
                transport_lp(&a, &b, &c)?.0
            };
        }
    }
    let a: Vec<f64> = eu.iter().map(|e| e.prob).collect();
    let b: Vec<f64> = ev.iter().map(|e| e.prob).collect();
    let (val, _) = transport_lp(&a, &b, &cost)?;
    Ok(val.max(0.0).powf(1.0 / p))
}

/// The conditional weighting constants of Eq. `c_t = ess sup E[|X_t|^p |
/// X_{1:t-1}] / (1 + sum_{s<t} |X_s|^p)`, maximized over the charged nodes of
/// the tree (every node of a pruned tree carries positive mass).
pub fn compute_ct(nu: &PathMeasure, p: f64) -> CtVector {
    let t = nu.stages();
    let mut cts = vec![0.0f64; t.saturating_sub(1)];
    let mut ratios = Vec::new();
    for u in 0..nu.num_nodes() {
        let depth = nu.node_depth(u);
        if depth == 0 {
            continue; // c_t starts at t = 2, i.e. nodes of depth >= 1
        }
        let prefix = nu.prefix_of(u);
        let den = 1.0 + prefix.iter().map(|x| x.abs().powf(p)).sum::<f64>();
        let num: f64 = nu
            .children(u)
            .iter()
            .map(|e| e.prob * e.state.iter().map(|x| x.abs().powf(p)).sum::<f64>())
            .sum();
        let ratio = num / den;
        let stage = depth + 1; // children carry stage depth + 1
        ratios.push((u, stage, ratio));
        let idx = stage - 2;
        if ratio > cts[idx] {
            cts[idx] = ratio;
        }
    }
    CtVector { t, cts, ratios }
}

/// Constants for a general weighting: `c_t = max over charged nodes of
/// E[w_t(X_{1:t}) | X_{1:t-1}] / w_{t-1}(X_{1:t-1}) - 1`, clamped at 0.
pub fn compute_ct_weighted(nu: &PathMeasure, w: &WeightSpec) -> Result<CtVector> {
    let t = nu.stages();
    let mut cts = vec![0.0f64; t.saturating_sub(1)];
    let mut ratios = Vec::new();
    for u in 0..nu.num_nodes() {
        let depth = nu.node_depth(u);
        if depth == 0 {
            continue;
        }
        let prefix = nu.prefix_of(u);
        let den = w.eval(&prefix)?;
        let mut num = 0.0;
        for e in nu.children(u) {
            let mut p2 = prefix.clone();
            p2.extend_from_slice(&e.state);
            num += e.prob * w.eval(&p2)?;
        }
        let ratio = if den > 0.0 { num / den } else { 1.0 };
        let stage = depth + 1;
        ratios.push((u, stage, ratio));
        let c = (ratio - 1.0).max(0.0);
        if c > cts[stage - 2] {
            cts[stage - 2] = c;
        }
    }
    Ok(CtVector { t, cts, ratios })
}

/// `lambda = 1 + 2 sum_{t=1}^{T-1} prod_{s=t+1}^T (1 + c_s)`; equals `2T - 1`
/// when all `c_t = 0`, and 1 when `T = 1`.
pub fn lambda_constant(ct: &CtVector) -> f64 {
    let mut sum = 0.0;
    // prod_{s=t+1}^{T} (1 + c_s) for t = T-1 down to 1.
    let mut prod = 1.0;
    for t in (1..ct.t).rev() {
        // entering iteration t, multiply in the factor for s = t + 1
        prod *= 1.0 + ct.cts[t - 1];
        sum += prod;
    }
    1.0 + 2.0 * sum
}

/// Diameter (to the power `p`) of the union of the two supports in `|.|_p`.
pub fn diam_p_pow(mu: &PathMeasure, nu: &PathMeasure, p: f64) -> f64 {
    let mut pts: Vec<Vec<f64>> = mu.paths().into_iter().map(|x| x.0).collect();
    pts.extend(nu.paths().into_iter().map(|x| x.0));
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            best = best.max(lp_cost(&pts[i], &pts[j], p));
        }
    }
    best
}

/// Compute all distances and verify the full inequality chain of the theory:
/// `W_p^p <= AW_p^p <= 2^p ATV_p^p <= 2^p lambda TV_p^p`, the plain
/// `ATV <= (2T - 1) TV`, and on the (always bounded) union support
/// `AW_p^p <= diam^p ATV <= (2T - 1) diam^p TV`.
pub fn bound_report(mu: &PathMeasure, nu: &PathMeasure, p: f64) -> Result<BoundReport> {
    check_shapes(mu, nu)?;
    let t = mu.stages();
    let one = WeightSpec::One;
    let wp = WeightSpec::PPower(p);
    let tv = tv_weighted(mu, nu, &one)?;
    let atv = atv_weighted(mu, nu, &one)?;
    let tv_p_pow = tv_weighted(mu, nu, &wp)?;
    let atv_p_pow = atv_weighted(mu, nu, &wp)?;
    let aw = adapted_wasserstein(mu, nu, p)?;
    let w = crate::ot_exact::wasserstein_p(mu, nu, p)?;
    let ct = compute_ct(nu, p);
    let lambda_weighted = lambda_constant(&ct);
    let lambda_plain = (2 * t - 1) as f64;
    let diam = diam_p_pow(mu, nu, p);
    let twop = 2f64.powf(p);
    let aw_p_pow = aw.powf(p);
    let w_p_pow = w.powf(p);

    let mk = |name: &str, lhs: f64, rhs: f64| BoundCheck {
        name: name.to_string(),
        lhs,
        rhs,
        slack: rhs - lhs,
        pass: rhs - lhs >= -1e-9,
    };
    let checks = vec![
        mk("W_p^p <= AW_p^p", w_p_pow, aw_p_pow),
        mk("AW_p^p <= 2^p ATV_p^p", aw_p_pow, twop * atv_p_pow),
        mk(
            "2^p ATV_p^p <= 2^p lambda_weighted TV_p^p",
            twop * atv_p_pow,
            twop * lambda_weighted * tv_p_pow,
        ),
        mk("ATV <= (2T-1) TV", atv, lambda_plain * tv),
        mk("AW_p^p <= diam^p ATV", aw_p_pow, diam * atv),
        mk(
            "diam^p ATV <= (2T-1) diam^p TV",
            diam * atv,
            lambda_plain * diam * tv,
        ),
    ];
    Ok(BoundReport {
        t,
        p,
        tv,
        atv,
        tv_p_pow,
        atv_p_pow,
        aw_p_pow,
        w_p_pow,
        lambda_plain,
        lambda_weighted,
        diam_p_pow: diam,
        ct,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot_exact::wasserstein_p;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn example_36(eps: f64) -> (PathMeasure, PathMeasure) {
        let mu = PathMeasure::from_atoms(
            2,
            1,
            &[
                (vec![1.0, 1.0 / eps], eps * (1.0 - eps)),
                (vec![1.0, 0.0], eps * eps),
                (vec![0.0, 0.0], 1.0 - eps),
            ],
        )
        .unwrap();
        let nu = PathMeasure::from_atoms(
            2,
            1,
            &[
                (vec![1.0, 1.0 / eps], eps * (1.0 - eps)),
                (vec![0.0, 0.0], 1.0 - eps + eps * eps),
            ],
        )
        .unwrap();
        (mu, nu)
    }

    #[test]
    fn tv_of_identical_measures_is_zero() {
        let m = PathMeasure::random_tree(3, 1, 3, &mut ChaCha12Rng::seed_from_u64(1));
        assert_abs_diff_eq!(
            tv_weighted(&m, &m, &WeightSpec::One).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            atv_weighted(&m, &m, &WeightSpec::One).unwrap(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn tv_of_disjoint_diracs_is_two() {
        let a = PathMeasure::dirac(2, 1, &[0.0, 0.0]).unwrap();
        let b = PathMeasure::dirac(2, 1, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(
            tv_weighted(&a, &b, &WeightSpec::One).unwrap(),
            2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn example_36_closed_forms() {
        // The only TV-optimal move is the eps^2 atom (1,0) -> (0,0), costing
        // eps^2 (w(1,0) + w(0,0)) = 3 eps^2; the bicausal value follows from
        // the stagewise-minimum formula. Both confirmed by the LP / DP
        // oracles in `example_36_matches_oracles`.
        for eps in [0.3, 0.1, 0.01] {
            let (mu, nu) = example_36(eps);
            let w = WeightSpec::PPower(1.0);
            let tv1 = tv_weighted(&mu, &nu, &w).unwrap();
            let atv1 = atv_weighted(&mu, &nu, &w).unwrap();
            assert_abs_diff_eq!(tv1, 3.0 * eps * eps, epsilon = 1e-12);
            assert_abs_diff_eq!(
                atv1,
                2.0 * eps + 5.0 * eps * eps - 4.0 * eps * eps * eps,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn example_36_matches_oracles() {
        for eps in [0.3, 0.05] {
            let (mu, nu) = example_36(eps);
            let w = WeightSpec::PPower(1.0);
            let (tv_lp, _) = tv_lp_oracle(&mu, &nu, &w).unwrap();
            let atv_dp = atv_bicausal_dp(&mu, &nu, &w).unwrap();
            assert_abs_diff_eq!(
                tv_weighted(&mu, &nu, &w).unwrap(),
                tv_lp,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                atv_weighted(&mu, &nu, &w).unwrap(),
                atv_dp,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn atv_equals_tv_for_single_stage() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = PathMeasure::random_tree(1, 1, 3, &mut rng);
            let b = PathMeasure::random_tree(1, 1, 3, &mut rng);
            for w in [WeightSpec::One, WeightSpec::PPower(2.0)] {
                let tv = tv_weighted(&a, &b, &w).unwrap();
                let atv = atv_weighted(&a, &b, &w).unwrap();
                assert_abs_diff_eq!(tv, atv, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn closed_forms_match_lp_and_dp_oracles() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for i in 0..50 {
            let t = 1 + (i % 3);
            let a = PathMeasure::random_tree(t, 1, 3, &mut rng);
            let b = PathMeasure::random_tree(t, 1, 3, &mut rng);
            for w in [WeightSpec::One, WeightSpec::PPower(1.0)] {
                let tv = tv_weighted(&a, &b, &w).unwrap();
                let (tv_lp, _) = tv_lp_oracle(&a, &b, &w).unwrap();
                assert_abs_diff_eq!(tv, tv_lp, epsilon = 1e-8);
                let atv = atv_weighted(&a, &b, &w).unwrap();
                let atv_dp = atv_bicausal_dp(&a, &b, &w).unwrap();
                assert_abs_diff_eq!(atv, atv_dp, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn tv_optimal_plan_diagonal_mass() {
        // The optimal plan puts exactly int d(mu /\ nu) on the diagonal.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = PathMeasure::random_tree(2, 1, 3, &mut rng);
            let b = PathMeasure::random_tree(2, 1, 3, &mut rng);
            let (_, plan) = tv_lp_oracle(&a, &b, &WeightSpec::PPower(1.0)).unwrap();
            let pa = a.paths();
            let pb = b.paths();
            let diag: f64 = plan
                .entries
                .iter()
                .filter(|&&(i, j, _)| canon_key(&pa[i].0) == canon_key(&pb[j].0))
                .map(|&(_, _, m)| m)
                .sum();
            let expect = min_measure_mass(&a, &b).unwrap();
            assert_abs_diff_eq!(diag, expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn aw_of_diracs_is_lp_norm() {
        let x = PathMeasure::dirac(3, 1, &[0.0, 1.0, -1.0]).unwrap();
        let y = PathMeasure::dirac(3, 1, &[1.0, 1.0, 1.0]).unwrap();
        for p in [1.0, 2.0] {
            let expect = (1.0 + 0.0 + 2f64.powf(p)).powf(1.0 / p);
            assert_abs_diff_eq!(
                adapted_wasserstein(&x, &y, p).unwrap(),
                expect,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn aw_exceeds_w_on_the_classic_example() {
        let mu = PathMeasure::from_atoms(
            2,
            1,
            &[(vec![0.5, 1.0], 0.5), (vec![-0.5, -1.0], 0.5)],
        )
        .unwrap();
        let nu =
            PathMeasure::from_atoms(2, 1, &[(vec![0.0, 1.0], 0.5), (vec![0.0, -1.0], 0.5)])
                .unwrap();
        let (aw, plans) = adapted_wasserstein_dp(&mu, &nu, 1.0).unwrap();
        assert_abs_diff_eq!(aw, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(wasserstein_p(&mu, &nu, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert!(!plans.is_empty());
    }

    #[test]
    fn aw_dominates_w_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..30 {
            let a = PathMeasure::random_tree(3, 1, 2, &mut rng);
            let b = PathMeasure::random_tree(3, 1, 2, &mut rng);
            for p in [1.0, 2.0] {
                let aw = adapted_wasserstein(&a, &b, p).unwrap();
                let w = wasserstein_p(&a, &b, p).unwrap();
                assert!(w <= aw + 1e-9, "W_p = {w} > AW_p = {aw}");
            }
        }
    }

    #[test]
    fn first_stage_lower_bound_holds() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..20 {
            let a = PathMeasure::random_tree(2, 1, 3, &mut rng);
            let b = PathMeasure::random_tree(2, 1, 3, &mut rng);
            let aw = adapted_wasserstein(&a, &b, 1.0).unwrap();
            let lb = aw_first_stage_lower_bound(&a, &b, 1.0).unwrap();
            assert!(lb <= aw + 1e-9, "lb = {lb} > AW = {aw}");
        }
    }

    #[test]
    fn ct_of_uniform_square() {
        // nu uniform on {0,1}^2 paths, p = 1: both depth-1 nodes have
        // E|X_2| = 0.5; denominators are 1 and 2, so c_2 = 0.5.
        let nu = PathMeasure::from_atoms(
            2,
            1,
            &[
                (vec![0.0, 0.0], 0.25),
                (vec![0.0, 1.0], 0.25),
                (vec![1.0, 0.0], 0.25),
                (vec![1.0, 1.0], 0.25),
            ],
        )
        .unwrap();
        let ct = compute_ct(&nu, 1.0);
        assert_eq!(ct.cts.len(), 1);
        assert_abs_diff_eq!(ct.cts[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn ct_vanishes_for_zero_tail() {
        let nu = PathMeasure::from_atoms(
            3,
            1,
            &[(vec![1.0, 0.0, 0.0], 0.5), (vec![-1.0, 0.0, 0.0], 0.5)],
        )
        .unwrap();
        let ct = compute_ct(&nu, 2.0);
        assert_eq!(ct.cts, vec![0.0, 0.0]);
        assert_abs_diff_eq!(lambda_constant(&ct), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn lambda_values() {
        let zero5 = CtVector {
            t: 5,
            cts: vec![0.0; 4],
            ratios: vec![],
        };
        assert_abs_diff_eq!(lambda_constant(&zero5), 9.0, epsilon = 1e-14);
        let half2 = CtVector {
            t: 2,
            cts: vec![0.5],
            ratios: vec![],
        };
        assert_abs_diff_eq!(lambda_constant(&half2), 4.0, epsilon = 1e-14);
        let t1 = CtVector {
            t: 1,
            cts: vec![],
            ratios: vec![],
        };
        assert_abs_diff_eq!(lambda_constant(&t1), 1.0, epsilon = 1e-14);
        // c == 1, T = 3: 1 + 2 (2 + 4) = 13.
        let ones3 = CtVector {
            t: 3,
            cts: vec![1.0, 1.0],
            ratios: vec![],
        };
        assert_abs_diff_eq!(lambda_constant(&ones3), 13.0, epsilon = 1e-14);
    }

    #[test]
    fn ct_weighted_matches_ppower() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10 {
            let nu = PathMeasure::random_tree(3, 1, 3, &mut rng);
            let ct = compute_ct(&nu, 2.0);
            let ctw = compute_ct_weighted(&nu, &WeightSpec::PPower(2.0)).unwrap();
            for (a, b) in ct.cts.iter().zip(&ctw.cts) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bound_report_identical_measures() {
        let m = PathMeasure::random_tree(3, 1, 2, &mut ChaCha12Rng::seed_from_u64(8));
        let r = bound_report(&m, &m, 2.0).unwrap();
        assert_abs_diff_eq!(r.tv, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.atv, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.aw_p_pow, 0.0, epsilon = 1e-12);
        assert!(r.checks.iter().all(|c| c.pass));
    }

    #[test]
    fn bound_report_chain_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..30 {
            let t = rng.gen_range(1..=3);
            let a = PathMeasure::random_tree(t, 1, 3, &mut rng);
            let b = PathMeasure::random_tree(t, 1, 3, &mut rng);
            for p in [1.0, 2.0] {
                let r = bound_report(&a, &b, p).unwrap();
                for c in &r.checks {
                    assert!(
                        c.pass,
                        "failed {} (lhs = {}, rhs = {}, T = {t}, p = {p})",
                        c.name, c.lhs, c.rhs
                    );
                }
                // Flags are recomputable from the stored values.
                assert!(r.w_p_pow <= r.aw_p_pow + 1e-9);
                assert!(r.aw_p_pow <= 2f64.powf(p) * r.atv_p_pow + 1e-9);
            }
        }
    }

    #[test]
    fn report_serializes_to_json() {
        let m = PathMeasure::dirac(2, 1, &[0.0, 1.0]).unwrap();
        let n = PathMeasure::dirac(2, 1, &[1.0, 0.0]).unwrap();
        let r = bound_report(&m, &n, 1.0).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("lambda_weighted"));
    }
}
