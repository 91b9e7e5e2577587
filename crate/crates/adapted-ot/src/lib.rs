//! Adapted optimal transport on finite path measures and grid densities.
//!
//! The crate computes four families of distances between laws of discrete-time
//! processes `X = (X_1, ..., X_T)` with values in `R^d`:
//!
//! * the classical Wasserstein distance `W_p` (exact transportation LP),
//! * the adapted (bicausal) Wasserstein distance `AW_p` (backward dynamic
//!   programming over scenario-tree node pairs),
//! * the weighted total variation `TV_w` with transport cost
//!   `(w(x) + w(y)) 1_{x != y}` over all couplings, and
//! * its bicausal counterpart `ATV_w`,
//!
//! together with the constants that relate them: the conditional weighting
//! constants `c_t`, the sharp multiplier
//! `lambda_T = 1 + 2 sum_{t<T} prod_{s>t} (1 + c_s)` (equal to `2T - 1` when
//! `c == 0`), and the kernel-smoothing constants `C_0, C_1, C_2, C_{k,K}` that
//! bound `AW_p^p` by powers of `W_q` for measures with Sobolev densities.
//!
//! Module map:
//!
//! * [`measures`] — scenario-tree path measures, weighting functions, density
//!   processes of a pair relative to the dominating measure `(mu + nu) / 2`;
//! * [`ot_exact`] — exact transportation simplex, `W_p`, and a fast 1D
//!   quantile-coupling path;
//! * [`adapted`] — closed forms for `TV_w` / `ATV_w`, the bicausal DP for
//!   `AW_p`, conditional-weighting constants, and full bound reports;
//! * [`hfun`] — the auxiliary function `H` behind the sharp `ATV_w <= lambda
//!   TV_w` bound, its closed-form infimum, relaxation, and a grid oracle;
//! * [`smoothing`] — grid densities, k-th order kernels, convolution, Sobolev
//!   norms, and the quantitative smoothing inequalities;
//! * [`examples`] — parametric generators for the three counterexample
//!   families used in the regression suite;
//! * [`estimators`] — empirical / kernel / Haar-wavelet density estimators and
//!   Monte-Carlo convergence-rate experiments for `AW_1`.

pub mod adapted;
pub mod error;
pub mod estimators;
pub mod examples;
pub mod hfun;
pub mod measures;
pub mod ot_exact;
pub mod smoothing;

pub use error::{Error, Result};
