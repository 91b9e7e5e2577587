//! Parametric generators for the three counterexample families used by the
//! regression suite: the sharpness construction for the adapted-vs-plain
//! total-variation multiplier, the unbounded-ratio pair showing the weighting
//! constants are necessary, and the grid-density pair showing the exponent
//! `k/(k+1)` in the adapted-to-classical Wasserstein bound is sharp.

use crate::error::{Error, Result};
use crate::measures::{PathMeasure, WeightSpec, WeightTable};
use crate::smoothing::{Axis, GridDensity};

/// Parameters of the sharpness construction: two signed tree measures
/// `γ_1, γ_2` on `R^T` whose shifted sums `μ = γ_1^1 + γ_2^{−1}` and
/// `ν = γ_2^1 + γ_1^{−1}` realize `ATV/TV → 2T−1` (or the weighted multiplier
/// when the `c_t` are nonzero).
///
/// The stage parameter is `p = (2ε/(1+ε))^{1/(T−1)}`: the kernel scalings
/// `r_t = 1/(1−d_t)`, `u_t = p − d_t` with `d_t = (2ε/(1+ε))/p^{t−1}` are
/// probability kernels iff `p^{T−1} ≥ 2ε/(1+ε)`, and this choice saturates
/// the constraint (so the deepest up-move `u_{T−1}` vanishes).
#[derive(Debug, Clone)]
pub struct Example35Params {
    pub t: usize,
    pub eps: f64,
    /// Weighting constants `c_2..c_T` (length `T−1`); empty for the
    /// unweighted variant.
    pub cs: Vec<f64>,
}

impl Example35Params {
    /// Validates `T ≥ 2`, `ε ∈ (0, 1/2)` and the kernel constraints.
    pub fn new(t: usize, eps: f64, cs: Vec<f64>) -> Result<Self> {
        if t < 2 {
            return Err(Error::BadStage { stage: t, t: 2 });
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidEpsilon(format!(
                "epsilon {eps} outside (0, 1/2)"
            )));
        }
        if !cs.is_empty() && cs.len() != t - 1 {
            return Err(Error::MissingWeight { len: cs.len() });
        }
        if cs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidEpsilon("negative weighting constant".into()));
        }
        let params = Example35Params { t, eps, cs };
        // Kernel validity: d_t < 1 and u_t = p − d_t ≥ 0 for t ≤ T−1.
        for s in 1..t {
            let d = params.d(s);
            if !(d < 1.0) || params.u(s) < -1e-12 {
                return Err(Error::InvalidEpsilon(format!(
                    "kernel constraint fails at stage {s}: d = {d}"
                )));
            }
        }
        Ok(params)
    }

    /// `p = (2ε/(1+ε))^{1/(T−1)}`.
    pub fn p(&self) -> f64 {
        (2.0 * self.eps / (1.0 + self.eps)).powf(1.0 / (self.t as f64 - 1.0))
    }

    /// `d_t = (2ε/(1+ε)) / p^{t−1}`, `t = 1..T−1`.
    pub fn d(&self, t: usize) -> f64 {
        2.0 * self.eps / (1.0 + self.eps) / self.p().powi(t as i32 - 1)
    }

    /// `r_t = 1/(1 − d_t)`.
    pub fn r(&self, t: usize) -> f64 {
        1.0 / (1.0 - self.d(t))
    }

    /// `u_t = p − d_t` (zero at `t = T−1` by the choice of `p`).
    pub fn u(&self, t: usize) -> f64 {
        (self.p() - self.d(t)).max(0.0)
    }

    /// `γ_2({x^i})`: `(1+ε)/2 (1−p) p^{i−1}` for `i ≤ T−1` and
    /// `(1+ε)/2 p^{T−1} = ε` for `i = T`.
    pub fn gamma2(&self, i: usize) -> f64 {
        let half = (1.0 + self.eps) / 2.0;
        if i < self.t {
            half * (1.0 - self.p()) * self.p().powi(i as i32 - 1)
        } else {
            half * self.p().powi(self.t as i32 - 1)
        }
    }

    /// `γ_1({x^i})`: equal to `γ_2({x^i})` for `i ≤ T−1`, and
    /// `γ_2({x^T}) − ε = 0` at the last leaf.
    pub fn gamma1(&self, i: usize) -> f64 {
        if i < self.t {
            self.gamma2(i)
        } else {
            (self.gamma2(i) - self.eps).max(0.0)
        }
    }

    /// The path of the `i`-th leaf, `x^i = Σ_{j=i+1}^T e^j`, shifted by
    /// `j ∈ {−1, +1}` in every coordinate.
    pub fn leaf_path(&self, i: usize, shift: f64) -> Vec<f64> {
        (1..=self.t)
            .map(|s| if s > i { 1.0 + shift } else { shift })
            .collect()
    }

    /// Closed-form `TV_w(μ_ε, ν_ε) = 2ε` (the weight at the last leaf is 1).
    pub fn tv_closed(&self) -> f64 {
        2.0 * self.eps
    }

    /// Closed-form `ATV_w(μ_ε, ν_ε) = 2ε(1−p) Σ_{i<T} 2 Π_{s>i}(1+c_s) + 2ε`
    /// (with all products 1 in the unweighted variant, giving
    /// `2ε((2T−2)(1−p) + 1)`).
    pub fn atv_closed(&self) -> f64 {
        let p = self.p();
        let mut sum = 0.0;
        for i in 1..self.t {
            sum += 2.0 * self.weight_at(i, self.t);
        }
        2.0 * self.eps * (1.0 - p) * sum + 2.0 * self.eps
    }

    /// The exact multiplier `λ = 1 + 2 Σ_{t<T} Π_{s>t}(1+c_s)` this family
    /// converges to as `ε → 0` (equals `2T−1` in the unweighted variant).
    pub fn lambda_limit(&self) -> f64 {
        let mut sum = 0.0;
        for i in 1..self.t {
            sum += self.weight_at(i, self.t);
        }
        1.0 + 2.0 * sum
    }

    /// `w_t(x^{i,j}_{1:t}) = Π_{s=i+1}^t (1+c_s)` for `t > i`, else 1.
    fn weight_at(&self, i: usize, t: usize) -> f64 {
        if self.cs.is_empty() || t <= i {
            return 1.0;
        }
        (i + 1..=t).map(|s| 1.0 + self.cs[s - 2]).product()
    }
}

/// Builds the pair `(μ_ε, ν_ε)` and its weighting function. Both measures
/// are `T`-stage, one-dimensional path measures with at most `2T` leaves.
pub fn gen_example35(params: &Example35Params) -> Result<(PathMeasure, PathMeasure, WeightSpec)> {
    let t = params.t;
    let mut mu_atoms = Vec::new();
    let mut nu_atoms = Vec::new();
    for i in 1..=t {
        let up = params.leaf_path(i, 1.0);
        let down = params.leaf_path(i, -1.0);
        let g1 = params.gamma1(i);
        let g2 = params.gamma2(i);
        // μ = γ_1 shifted up + γ_2 shifted down; ν swaps the two blocks.
        if g1 > 0.0 {
            mu_atoms.push((up.clone(), g1));
            nu_atoms.push((down.clone(), g1));
        }
        if g2 > 0.0 {
            mu_atoms.push((down, g2));
            nu_atoms.push((up, g2));
        }
    }
    let mu = PathMeasure::from_atoms(t, 1, &mu_atoms)?;
    let nu = PathMeasure::from_atoms(t, 1, &nu_atoms)?;
    let weight = if params.cs.is_empty() {
        WeightSpec::One
    } else {
        let mut table = WeightTable::new();
        for i in 1..=t {
            for shift in [-1.0, 1.0] {
                let path = params.leaf_path(i, shift);
                for len in 1..=t {
                    table.insert(&path[..len], params.weight_at(i, len));
                }
            }
        }
        WeightSpec::Tabulated(table)
    };
    Ok((mu, nu, weight))
}

/// The unbounded-ratio pair: `μ^ε` puts mass `ε(1−ε)`, `ε²`, `1−ε` on the
/// two-stage paths `(1, 1/ε)`, `(1, 0)`, `(0, 0)`, while `ν^ε` merges the
/// `(1, 0)` mass into `(0, 0)`. First moments stay bounded by 2, yet
/// `ATV_1/TV_1 ~ 2/(3ε) → ∞`.
pub fn gen_example36(eps: f64) -> Result<(PathMeasure, PathMeasure)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidEpsilon(format!("epsilon {eps} outside (0, 1)")));
    }
    let mu = PathMeasure::from_atoms(
        2,
        1,
        &[
            (vec![1.0, 1.0 / eps], eps * (1.0 - eps)),
            (vec![1.0, 0.0], eps * eps),
            (vec![0.0, 0.0], 1.0 - eps),
        ],
    )?;
    let nu = PathMeasure::from_atoms(
        2,
        1,
        &[
            (vec![1.0, 1.0 / eps], eps * (1.0 - eps)),
            (vec![0.0, 0.0], 1.0 - eps + eps * eps),
        ],
    )?;
    Ok((mu, nu))
}

/// Closed forms for the unbounded-ratio pair with the moment weight
/// `w(x) = 1 + |x|_1`: the only charged difference is the `ε²` atom moved
/// from `(1,0)` to `(0,0)`, so `TV_1 = ε²(w(1,0) + w(0,0)) = 3ε²`, while the
/// stagewise minima give `ATV_1 = 2ε + 5ε² − 4ε³`.
pub fn example36_closed_forms(eps: f64) -> (f64, f64) {
    let tv = 3.0 * eps * eps;
    let atv = 2.0 * eps + 5.0 * eps * eps - 4.0 * eps * eps * eps;
    (tv, atv)
}

/// The sharp-exponent grid pair on `[0,1]²`: `p_μ ≡ 1` and `p_ν` adds an
/// `ε^k`-sized oscillation `sin(πx_1/ε)` modulated by opposite-sign bumps in
/// the bands `x_2 ≤ 2ε` and `x_2 ≥ 1 − 2ε`. Requires `1/ε` to be an (even)
/// integer so the grid resolves the oscillation exactly.
pub fn gen_example43(eps: f64, k: usize, mesh: f64) -> Result<(GridDensity, GridDensity)> {
    if !(eps > 0.0 && eps < 0.125) {
        return Err(Error::InvalidEpsilon(format!(
            "epsilon {eps} outside (0, 1/8)"
        )));
    }
    let inv = (1.0 / eps).round();
    if ((1.0 / eps) - inv).abs() > 1e-9 || (inv as usize) % 2 != 0 {
        return Err(Error::InvalidEpsilon(format!(
            "1/epsilon = {} must be an even integer for the grid generator",
            1.0 / eps
        )));
    }
    if !(mesh <= eps / 20.0 + 1e-15) {
        return Err(Error::MeshTooCoarse {
            mesh,
            max: eps / 20.0,
        });
    }
    if k == 0 {
        return Err(Error::UnsupportedOrder(k));
    }
    // Cells per half-period; the actual mesh ε/m is at most the request.
    let m = (eps / mesh).ceil() as usize;
    let n = inv as usize * m;
    let axes = vec![
        Axis { lo: 0.0, hi: 1.0, n },
        Axis { lo: 0.0, hi: 1.0, n },
    ];
    let pi = std::f64::consts::PI;
    let amp = eps.powi(k as i32);
    let mu = GridDensity::new(axes.clone(), vec![1.0; n * n], true)?;
    // Each band bump is normalized by 1/(2ε) so it carries unit conditional
    // mass; this is what makes the moved mass per first coordinate equal to
    // ε^k |sin(πx_1/ε)| (hence AW_1 ≥ ε^k/π) while W_1 stays of order
    // ε^{k+1}. The peak perturbation is ε^{k−1} ≤ 1, so the density remains
    // nonnegative, and the band k-th derivatives integrate to O(1) uniformly
    // in ε.
    let nu = GridDensity::from_fn(axes, |x| {
        let (x1, x2) = (x[0], x[1]);
        let lower = if x2 <= 2.0 * eps {
            ((pi * x2 / eps - pi / 2.0).sin() + 1.0) / (2.0 * eps)
        } else {
            0.0
        };
        let upper = if x2 >= 1.0 - 2.0 * eps {
            ((pi * (1.0 - x2) / eps - pi / 2.0).sin() + 1.0) / (2.0 * eps)
        } else {
            0.0
        };
        1.0 + amp * (pi * x1 / eps).sin() * (lower - upper)
    })?;
    let mut nu = nu;
    // The two bands cancel exactly on the symmetric cell centers; the
    // normalize call only validates and flags the density.
    let dev = nu.normalize()?;
    if dev.abs() > 1e-8 {
        return Err(Error::Degenerate(format!(
            "perturbation mass did not cancel: deviation {dev}"
        )));
    }
    Ok((mu, nu))
}

/// Upper bound on `W_1(μ, ν)` for the sharp-exponent pair by an explicit
/// coupling: the perturbation is `ε`-antiperiodic in `x_1`, so shifting the
/// positive part of `ν − μ` by one half-period lands exactly on the negative
/// part at `|·|_1 cost ε` per unit mass.
pub fn example43_w1_upper(mu: &GridDensity, nu: &GridDensity, eps: f64) -> Result<f64> {
    let diff = nu.difference(mu)?;
    let vol = diff.values().iter().map(|v| v.max(0.0)).sum::<f64>()
        * (diff.axes().iter().map(Axis::delta).product::<f64>());
    Ok(vol * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapted::{
        adapted_wasserstein, atv_weighted, compute_ct_weighted, lambda_constant, tv_weighted,
        CtVector,
    };
    use approx::assert_abs_diff_eq;

    #[test]
    fn sharpness_pair_masses_and_block_identities() {
        for (t, eps) in [(2usize, 0.1f64), (3, 0.05), (5, 0.01)] {
            let params = Example35Params::new(t, eps, vec![]).unwrap();
            // γ_1({x^i}) = γ_2({x^i}) exactly for i ≤ T−1; total masses.
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for i in 1..=t {
                if i < t {
                    assert_abs_diff_eq!(params.gamma1(i), params.gamma2(i), epsilon = 1e-15);
                }
                m1 += params.gamma1(i);
                m2 += params.gamma2(i);
            }
            assert_abs_diff_eq!(m1, (1.0 - eps) / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m2, (1.0 + eps) / 2.0, epsilon = 1e-12);
            let (mu, nu, _) = gen_example35(&params).unwrap();
            assert_eq!(mu.stages(), t);
            assert!(mu.paths().len() <= 2 * t && nu.paths().len() <= 2 * t);
        }
    }

    #[test]
    fn sharpness_pair_matches_closed_forms() {
        for (t, eps) in [(2usize, 0.1f64), (3, 0.01), (5, 0.001)] {
            let params = Example35Params::new(t, eps, vec![]).unwrap();
            let (mu, nu, w) = gen_example35(&params).unwrap();
            let tv = tv_weighted(&mu, &nu, &w).unwrap();
            let atv = atv_weighted(&mu, &nu, &w).unwrap();
            assert_abs_diff_eq!(tv, params.tv_closed(), epsilon = 1e-10);
            assert_abs_diff_eq!(atv, params.atv_closed(), epsilon = 1e-10);
        }
    }

    #[test]
    fn ratio_approaches_the_plain_multiplier() {
        // T = 5: the ratio tends to 2T−1 = 9 as ε → 0; at ε = 2.5e−10 the
        // stage parameter p ≈ 4.7e−3 leaves it within half a percent.
        let params = Example35Params::new(5, 2.5e-10, vec![]).unwrap();
        let (mu, nu, w) = gen_example35(&params).unwrap();
        let ratio = atv_weighted(&mu, &nu, &w).unwrap() / tv_weighted(&mu, &nu, &w).unwrap();
        assert!((ratio - 9.0).abs() / 9.0 < 0.005, "ratio {ratio}");
        assert_abs_diff_eq!(params.lambda_limit(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_variant_matches_formulas_and_engine() {
        // c ≡ 1, T = 3: λ = 1 + 2(4 + 2) = 13.
        let params = Example35Params::new(3, 5e-5, vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(params.lambda_limit(), 13.0, epsilon = 1e-12);
        let ct = CtVector {
            t: 3,
            cts: vec![1.0, 1.0],
            ratios: vec![],
        };
        assert_abs_diff_eq!(lambda_constant(&ct), 13.0, epsilon = 1e-12);

        let (mu, nu, w) = gen_example35(&params).unwrap();
        let tv = tv_weighted(&mu, &nu, &w).unwrap();
        let atv = atv_weighted(&mu, &nu, &w).unwrap();
        assert_abs_diff_eq!(tv, params.tv_closed(), epsilon = 1e-12);
        assert_abs_diff_eq!(atv, params.atv_closed(), epsilon = 1e-12);
        let ratio = atv / tv;
        assert!((ratio - 13.0).abs() / 13.0 < 0.01, "ratio {ratio}");

        // The generated (ν, w) satisfies the conditional weighting
        // assumption with the prescribed constants.
        let ct_engine = compute_ct_weighted(&nu, &w).unwrap();
        for (s, &c) in ct_engine.cts.iter().enumerate() {
            assert!(
                c <= params.cs[s] + 1e-9,
                "stage {} ratio {} exceeds 1 + c",
                s + 2,
                c
            );
        }
    }

    #[test]
    fn sharpness_params_validated() {
        assert!(matches!(
            Example35Params::new(1, 0.1, vec![]),
            Err(Error::BadStage { .. })
        ));
        assert!(matches!(
            Example35Params::new(3, 0.6, vec![]),
            Err(Error::InvalidEpsilon(_))
        ));
        assert!(matches!(
            Example35Params::new(3, 0.1, vec![1.0]),
            Err(Error::MissingWeight { .. })
        ));
    }

    #[test]
    fn unbounded_ratio_pair_matches_closed_forms() {
        for eps in [0.3, 0.1, 0.01] {
            let (mu, nu) = gen_example36(eps).unwrap();
            assert!(mu.moment(1.0) <= 2.0 && nu.moment(1.0) <= 2.0);
            let w = WeightSpec::PPower(1.0);
            let (tv_c, atv_c) = example36_closed_forms(eps);
            assert_abs_diff_eq!(tv_weighted(&mu, &nu, &w).unwrap(), tv_c, epsilon = 1e-12);
            assert_abs_diff_eq!(atv_weighted(&mu, &nu, &w).unwrap(), atv_c, epsilon = 1e-12);
        }
        assert!(matches!(gen_example36(1.5), Err(Error::InvalidEpsilon(_))));
    }

    #[test]
    fn grid_pair_respects_generator_invariants() {
        let eps = 0.1;
        let (mu, nu) = gen_example43(eps, 1, eps / 20.0).unwrap();
        assert_abs_diff_eq!(nu.mass(), 1.0, epsilon = 1e-9);
        assert!(nu.values().iter().all(|&v| v >= 0.0));
        // The perturbation vanishes outside the two bands.
        let n = nu.axes()[0].n;
        for flat in 0..nu.values().len() {
            let c = nu.cell_center(flat);
            if c[1] > 2.0 * eps && c[1] < 1.0 - 2.0 * eps {
                assert_abs_diff_eq!(nu.values()[flat], 1.0, epsilon = 1e-12);
            }
        }
        assert_eq!(n, 200);
        assert_eq!(mu.values().len(), nu.values().len());
        assert!(matches!(
            gen_example43(eps, 1, eps / 10.0),
            Err(Error::MeshTooCoarse { .. })
        ));
        assert!(matches!(
            gen_example43(0.3, 1, 0.01),
            Err(Error::InvalidEpsilon(_))
        ));
        assert!(matches!(
            gen_example43(1.0 / 15.0, 1, 1.0 / 400.0),
            Err(Error::InvalidEpsilon(_))
        ));
    }

    #[test]
    fn grid_pair_separates_adapted_and_plain_distances() {
        // ε = 1/10, k = 1: W_1 stays below 2√2 ε² while AW_1 stays above
        // ε/π − one cell diameter, so the adapted distance dominates.
        let eps = 0.1;
        let (mu, nu) = gen_example43(eps, 1, eps / 20.0).unwrap();
        let w1 = example43_w1_upper(&mu, &nu, eps).unwrap();
        let cell = mu.cell_diameter();
        assert!(
            w1 <= 2.0 * 2f64.sqrt() * eps * eps + cell,
            "W1 upper bound {w1}"
        );
        let aw = adapted_wasserstein(&mu.quantize().unwrap(), &nu.quantize().unwrap(), 1.0)
            .unwrap();
        assert!(
            aw >= eps / std::f64::consts::PI - cell,
            "AW1 {aw} below the lower bound"
        );
        assert!(aw > w1, "AW1 {aw} should exceed W1 {w1}");
    }
}
