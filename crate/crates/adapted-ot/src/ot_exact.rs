//! Exact classical optimal transport between finite discrete measures.
//!
//! The workhorse is a transportation simplex (network simplex on the bipartite
//! transportation graph) that returns the exact optimum together with a dual
//! certificate. On top of it sit [`wasserstein_p`] for path measures with the
//! cost `|x - y|_p^p = sum_k |x_k - y_k|^p`, and a fast exact 1D quantile
//! coupling used by the dynamic programs.

use crate::error::{Error, Result};
use crate::measures::PathMeasure;

/// Largest supported instance side; larger inputs must be coarsened upstream.
pub const INSTANCE_CAP: usize = 2000;

/// A transport plan between two finite supports, with the dual certificate
/// produced by the solver.
#[derive(Debug, Clone)]
pub struct Coupling {
    /// `(i, j, mass)` triples with positive mass.
    pub entries: Vec<(usize, usize, f64)>,
    /// Row potentials `u_i`.
    pub u: Vec<f64>,
    /// Column potentials `v_j`.
    pub v: Vec<f64>,
}

impl Coupling {
    /// Row marginals of the plan.
    pub fn row_sums(&self, m: usize) -> Vec<f64> {
        let mut r = vec![0.0; m];
        for &(i, _, w) in &self.entries {
            r[i] += w;
        }
        r
    }

    /// Column marginals of the plan.
    pub fn col_sums(&self, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        for &(_, j, w) in &self.entries {
            c[j] += w;
        }
        c
    }
}

/// Solve the balanced transportation problem `min sum c_ij x_ij` subject to
/// row sums `a`, column sums `b`, `x >= 0`.
///
/// Exact network simplex with a northwest-corner start. The entering arc is
/// chosen by the most negative reduced cost; after a run of degenerate pivots
/// the rule switches to Bland's (first eligible arc), which guarantees
/// termination. The returned [`Coupling`] carries dual potentials satisfying
/// `u_i + v_j <= c_ij + 1e-9` with equality on the support of the plan.
pub fn transport_lp(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Result<(f64, Coupling)> {
    let m0 = a.len();
    let n0 = b.len();
    if m0 == 0 || n0 == 0 {
        return Err(Error::Degenerate("empty support".into()));
    }
    if m0 > INSTANCE_CAP || n0 > INSTANCE_CAP {
        return Err(Error::InstanceTooLarge {
            rows: m0,
            cols: n0,
            cap: INSTANCE_CAP,
        });
    }
    if cost.len() != m0 || cost.iter().any(|r| r.len() != n0) {
        return Err(Error::Degenerate("cost matrix shape mismatch".into()));
    }
    for (i, &w) in a.iter().enumerate() {
        if w < -1e-12 || !w.is_finite() {
            return Err(Error::NonProbability {
                node: i,
                detail: format!("row weight {w}"),
            });
        }
    }
    for (j, &w) in b.iter().enumerate() {
        if w < -1e-12 || !w.is_finite() {
            return Err(Error::NonProbability {
                node: j,
                detail: format!("column weight {w}"),
            });
        }
    }
    let sa: f64 = a.iter().map(|w| w.max(0.0)).sum();
    let sb: f64 = b.iter().map(|w| w.max(0.0)).sum();
    if sa <= 0.0 || sb <= 0.0 || (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::Degenerate(format!(
            "unbalanced marginals: {sa} vs {sb}"
        )));
    }

    // Drop zero-weight rows/columns, keeping the original index maps.
    let rows: Vec<usize> = (0..m0).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n0).filter(|&j| b[j] > 0.0).collect();
    let m = rows.len();
    let n = cols.len();
    let supply: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let mut demand: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    // Balance exactly by adjusting the last demand by the (tiny) residual.
    let residual = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    demand[n - 1] += residual;
    let c = |i: usize, j: usize| cost[rows[i]][cols[j]];

    // Northwest-corner start: exactly m + n - 1 basic cells.
    let mut flow: Vec<f64> = Vec::with_capacity(m + n - 1);
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    {
        let (mut i, mut j) = (0, 0);
        let mut rem_s = supply.clone();
        let mut rem_d = demand.clone();
        loop {
            let f = rem_s[i].min(rem_d[j]);
            basis.push((i, j));
            flow.push(f.max(0.0));
            rem_s[i] -= f;
            rem_d[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if rem_s[i] <= rem_d[j] && i < m - 1 {
                rem_s[i] = 0.0;
                i += 1;
            } else {
                rem_d[j] = 0.0;
                j += 1;
            }
        }
    }
    debug_assert_eq!(basis.len(), m + n - 1);

    // Adjacency of the spanning tree over nodes 0..m-1 (rows) and
    // m..m+n-1 (columns); entries store the basis-arc index.
    let nn = m + n;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nn];
    for (k, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((m + j, k));
        adj[m + j].push((i, k));
    }

    let eps = 1e-11;
    let mut degenerate_streak = 0usize;
    let mut use_bland = false;
    let max_iter = 50 * (m + n) * (m + n) + 10_000;
    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n];
    for _iter in 0..max_iter {
        // Duals via tree traversal from row 0.
        let mut seen = vec![false; nn];
        let mut stack = vec![0usize];
        seen[0] = true;
        u[0] = 0.0;
        while let Some(x) = stack.pop() {
            for &(y, k) in &adj[x] {
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                let (bi, bj) = basis[k];
                if y >= m {
                    v[y - m] = c(bi, bj) - u[bi];
                } else {
                    u[y] = c(bi, bj) - v[x - m];
                }
                stack.push(y);
            }
        }

        // Entering arc.
        let mut enter: Option<(usize, usize)> = None;
        if use_bland {
            'outer: for i in 0..m {
                for j in 0..n {
                    if c(i, j) - u[i] - v[j] < -eps {
                        enter = Some((i, j));
                        break 'outer;
                    }
                }
            }
        } else {
            let mut best = -eps;
            for i in 0..m {
                for j in 0..n {
                    let rc = c(i, j) - u[i] - v[j];
                    if rc < best {
                        best = rc;
                        enter = Some((i, j));
                    }
                }
            }
        }
        let Some((ei, ej)) = enter else { break };

        // Cycle: tree path from row node ei to column node m + ej.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nn];
        let mut seen = vec![false; nn];
        seen[ei] = true;
        let mut stack = vec![ei];
        while let Some(x) = stack.pop() {
            if x == m + ej {
                break;
            }
            for &(y, k) in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some((x, k));
                    stack.push(y);
                }
            }
        }
        let mut path_arcs: Vec<usize> = Vec::new();
        let mut cur = m + ej;
        while cur != ei {
            let (px, k) = parent[cur].expect("tree is connected");
            path_arcs.push(k);
            cur = px;
        }
        path_arcs.reverse();
        // Walking ei -> ... -> m+ej; the entering arc closes the cycle with a
        // + orientation; arcs along the path alternate -, +, -, ... starting
        // with - (arc out of the entering row).
        let mut theta = f64::INFINITY;
        let mut leave_pos: Option<usize> = None;
        for (pos, &k) in path_arcs.iter().enumerate() {
            if pos % 2 == 0 {
                let f = flow[k];
                if f < theta - 1e-18 || (leave_pos.is_none() && f <= theta) {
                    theta = f;
                    leave_pos = Some(pos);
                }
            }
        }
        let leave_pos = leave_pos.expect("cycle has a decreasing arc");
        let leave_k = path_arcs[leave_pos];
        if theta <= eps {
            degenerate_streak += 1;
            if degenerate_streak > nn {
                use_bland = true;
            }
        } else {
            degenerate_streak = 0;
        }
        for (pos, &k) in path_arcs.iter().enumerate() {
            if pos % 2 == 0 {
                flow[k] -= theta;
            } else {
                flow[k] += theta;
            }
        }
        // Swap the leaving arc for the entering one in the tree.
        let (li, lj) = basis[leave_k];
        adj[li].retain(|&(_, k)| k != leave_k);
        adj[m + lj].retain(|&(_, k)| k != leave_k);
        basis[leave_k] = (ei, ej);
        flow[leave_k] = theta;
        adj[ei].push((m + ej, leave_k));
        adj[m + ej].push((ei, leave_k));
    }

    // Map back to the original indexing.
    let mut entries = Vec::new();
    let mut value = 0.0;
    for (k, &(i, j)) in basis.iter().enumerate() {
        value += flow[k] * c(i, j);
        if flow[k] > 0.0 {
            entries.push((rows[i], cols[j], flow[k]));
        }
    }
    let mut u_full = vec![0.0; m0];
    let mut v_full = vec![f64::INFINITY; n0];
    for (i, &ri) in rows.iter().enumerate() {
        u_full[ri] = u[i];
    }
    for (j, &cj) in cols.iter().enumerate() {
        v_full[cj] = v[j];
    }
    // Potentials for dropped rows/columns: tightest feasible values.
    for i in 0..m0 {
        if a[i] <= 0.0 {
            u_full[i] = (0..n)
                .map(|j| cost[i][cols[j]] - v[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..n0 {
        if b[j] <= 0.0 {
            v_full[j] = (0..m)
                .map(|i| cost[rows[i]][j] - u[i])
                .fold(f64::INFINITY, f64::min);
        }
    }
    Ok((
        value,
        Coupling {
            entries,
            u: u_full,
            v: v_full,
        },
    ))
}

/// `|x - y|_p^p = sum_k |x_k - y_k|^p`.
pub fn lp_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs().powf(p))
        .sum()
}

/// Wasserstein distance `W_p(mu, nu)` between two path measures, exact.
pub fn wasserstein_p(mu: &PathMeasure, nu: &PathMeasure, p: f64) -> Result<f64> {
    if mu.stages() != nu.stages() || mu.dim() != nu.dim() {
        return Err(Error::ShapeMismatch {
            t_left: mu.stages(),
            d_left: mu.dim(),
            t_right: nu.stages(),
            d_right: nu.dim(),
        });
    }
    let pa = mu.paths();
    let pb = nu.paths();
    let a: Vec<f64> = pa.iter().map(|x| x.1).collect();
    let b: Vec<f64> = pb.iter().map(|x| x.1).collect();
    let cost: Vec<Vec<f64>> = pa
        .iter()
        .map(|(x, _)| pb.iter().map(|(y, _)| lp_cost(x, y, p)).collect())
        .collect();
    let (value, _) = transport_lp(&a, &b, &cost)?;
    Ok(value.max(0.0).powf(1.0 / p))
}

/// Exact transport cost `sum mass * |x - y|^p` between two 1D discrete
/// measures via the quantile (monotone) coupling, which is optimal for the
/// convex cost `|x - y|^p`, `p >= 1`. Atoms are `(position, weight)`.
pub fn quantile_transport_cost(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    quantile_coupling(a, b, p).0
}

/// Quantile coupling between two 1D discrete measures: the transport cost
/// under `|x - y|^p` plus the plan as `(i, j, mass)` triples indexing into
/// the input atom lists.
pub fn quantile_coupling(
    a: &[(f64, f64)],
    b: &[(f64, f64)],
    p: f64,
) -> (f64, Vec<(usize, usize, f64)>) {
    let mut ia: Vec<usize> = (0..a.len()).filter(|&i| a[i].1 > 0.0).collect();
    let mut ib: Vec<usize> = (0..b.len()).filter(|&j| b[j].1 > 0.0).collect();
    ia.sort_by(|&x, &y| a[x].0.partial_cmp(&a[y].0).unwrap());
    ib.sort_by(|&x, &y| b[x].0.partial_cmp(&b[y].0).unwrap());
    let ta: f64 = ia.iter().map(|&i| a[i].1).sum();
    let tb: f64 = ib.iter().map(|&j| b[j].1).sum();
    if ta <= 0.0 || tb <= 0.0 {
        return (0.0, Vec::new());
    }
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[ia[0]].1 / ta, b[ib[0]].1 / tb);
    let mut cost = 0.0;
    let mut plan = Vec::new();
    loop {
        let m = ra.min(rb);
        cost += m * (a[ia[i]].0 - b[ib[j]].0).abs().powf(p);
        if m > 0.0 {
            plan.push((ia[i], ib[j], m));
        }
        ra -= m;
        rb -= m;
        if ra <= 1e-18 {
            i += 1;
            if i >= ia.len() {
                break;
            }
            ra = a[ia[i]].1 / ta;
        }
        if rb <= 1e-18 {
            j += 1;
            if j >= ib.len() {
                break;
            }
            rb = b[ib[j]].1 / tb;
        }
    }
    (cost, plan)
}

/// 1D Wasserstein distance `W_p` between discrete measures on the line,
/// computed by the quantile coupling (matches [`transport_lp`] to `1e-12`).
pub fn wasserstein_1d(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    quantile_transport_cost(a, b, p).max(0.0).powf(1.0 / p)
}

/// Brute-force transportation solver for tiny instances: enumerates all
/// candidate basic feasible solutions (vertices of the transportation
/// polytope) as subsets of `m + n - 1` cells and keeps the best feasible one.
/// Independent of the simplex code path; intended as a test oracle only.
pub fn transport_bruteforce(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Result<f64> {
    let m = a.len();
    let n = b.len();
    if m == 0 || n == 0 {
        return Err(Error::Degenerate("empty support".into()));
    }
    if m * n > 20 {
        return Err(Error::InstanceTooLarge {
            rows: m,
            cols: n,
            cap: 4,
        });
    }
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    // Iterate over all k-subsets of the cells via bitmasks.
    for mask in 0u32..(1u32 << cells.len()) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let subset: Vec<(usize, usize)> = cells
            .iter()
            .enumerate()
            .filter(|(idx, _)| mask & (1 << idx) != 0)
            .map(|(_, &c)| c)
            .collect();
        if let Some(val) = solve_basis(a, b, cost, &subset) {
            best = best.min(val);
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Degenerate("no feasible vertex found".into()))
    }
}

/// Try to solve the marginal equations restricted to `subset` by triangular
/// elimination; returns the cost if the resulting flows are feasible.
fn solve_basis(a: &[f64], b: &[f64], cost: &[Vec<f64>], subset: &[(usize, usize)]) -> Option<f64> {
    let mut active: Vec<bool> = vec![true; subset.len()];
    let mut rem_a = a.to_vec();
    let mut rem_b = b.to_vec();
    let mut flow = vec![0.0f64; subset.len()];
    // Repeatedly peel a cell that is the unique active cell in its row or
    // column; succeeds iff the subset is a forest covering all constraints.
    loop {
        let mut progressed = false;
        for idx in 0..subset.len() {
            if !active[idx] {
                continue;
            }
            let (i, j) = subset[idx];
            let row_cnt = subset
                .iter()
                .zip(&active)
                .filter(|(&(r, _), &act)| act && r == i)
                .count();
            let col_cnt = subset
                .iter()
                .zip(&active)
                .filter(|(&(_, c), &act)| act && c == j)
                .count();
            if row_cnt == 1 {
                flow[idx] = rem_a[i];
                rem_a[i] = 0.0;
                rem_b[j] -= flow[idx];
                active[idx] = false;
                progressed = true;
            } else if col_cnt == 1 {
                flow[idx] = rem_b[j];
                rem_b[j] = 0.0;
                rem_a[i] -= flow[idx];
                active[idx] = false;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    if active.iter().any(|&x| x) {
        return None; // subset contains a cycle
    }
    if rem_a.iter().any(|&x| x.abs() > 1e-9) || rem_b.iter().any(|&x| x.abs() > 1e-9) {
        return None;
    }
    if flow.iter().any(|&f| f < -1e-12) {
        return None;
    }
    Some(
        subset
            .iter()
            .zip(&flow)
            .map(|(&(i, j), &f)| f.max(0.0) * cost[i][j])
            .sum(),
    )
}
