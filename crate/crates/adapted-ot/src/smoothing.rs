//! Grid densities, k-th order kernels, convolutions, Sobolev norms, and the
//! quantitative smoothing bounds relating total-variation and Wasserstein
//! distances (with the constants computed by the engine).
//!
//! Conventions. The path norm used throughout this module is `|x|_1 = Σ|x_i|`:
//! moments `M_r` are `∫ |x|_1^r dμ`, the Wasserstein distances fed into the
//! constants use the ground metric `|x − y|_1`, and `Lip(K)` is the constant
//! `max_i ∫ |∂_i K|`, which bounds the `|·|_1`-Lipschitz constant of `φ ∗ K`
//! for any test function `|φ| ≤ 1` — the quantity the dual argument behind
//! the bounds requires. This single choice makes every step of the smoothing
//! chain valid simultaneously, since `|x|_p ≤ |x|_1` for `p ≥ 1`.

use serde::{Deserialize, Serialize};
use std::io::{Read as IoRead, Write as IoWrite};

use crate::adapted::{compute_ct, lambda_constant};
use crate::error::{Error, Result};
use crate::measures::PathMeasure;
use crate::ot_exact::transport_lp;

/// One axis of a rectangular grid: extent `[lo, hi]` split into `n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    /// Cell width.
    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    /// Center of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.delta()
    }
}

/// A (possibly signed) function sampled at cell centers of a rectangular
/// grid, row-major with the last axis fastest. When `normalized` is set the
/// values are a probability density: nonnegative with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    axes: Vec<Axis>,
    values: Vec<f64>,
    normalized: bool,
}

/// Tolerance on `Σ values · cellvolume = 1` for normalized grids.
pub const MASS_TOL: f64 = 1e-9;

impl GridDensity {
    /// Builds a grid, validating the shape and (for normalized grids) the
    /// nonnegativity and unit-mass invariants.
    pub fn new(axes: Vec<Axis>, values: Vec<f64>, normalized: bool) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::GridMismatch("grid needs at least one axis".into()));
        }
        let mut cells = 1usize;
        for ax in &axes {
            if !(ax.lo.is_finite() && ax.hi.is_finite()) || ax.hi <= ax.lo || ax.n == 0 {
                return Err(Error::GridMismatch(format!(
                    "bad axis extent [{}, {}] with {} cells",
                    ax.lo, ax.hi, ax.n
                )));
            }
            cells = cells.saturating_mul(ax.n);
        }
        if values.len() != cells {
            return Err(Error::GridMismatch(format!(
                "value block has {} entries, grid has {} cells",
                values.len(),
                cells
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::GridMismatch("non-finite cell value".into()));
        }
        let g = GridDensity {
            axes,
            values,
            normalized,
        };
        if normalized {
            if g.values.iter().any(|&v| v < 0.0) {
                return Err(Error::GridMismatch(
                    "normalized grid with negative cell value".into(),
                ));
            }
            let m = g.mass();
            if (m - 1.0).abs() > MASS_TOL {
                return Err(Error::GridMismatch(format!(
                    "normalized grid has mass {m}, expected 1"
                )));
            }
        }
        Ok(g)
    }

    /// Samples `f` at the cell centers. Does not normalize.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(axes: Vec<Axis>, f: F) -> Result<Self> {
        let mut g = GridDensity::new(axes.clone(), vec![0.0; axes.iter().map(|a| a.n).product()], false)?;
        let dims = g.dims();
        let mut center = vec![0.0; dims];
        for flat in 0..g.values.len() {
            g.fill_center(flat, &mut center);
            g.values[flat] = f(&center);
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::GridMismatch("non-finite cell value".into()));
        }
        Ok(g)
    }

    /// Number of axes (`dT` in path terms).
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// The axes.
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Row-major cell values (last axis fastest).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether this grid was validated as a probability density.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Per-axis cell widths.
    pub fn cell_sizes(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.delta()).collect()
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.delta()).product()
    }

    /// Diameter of one cell in the `|·|_1` norm.
    pub fn cell_diameter(&self) -> f64 {
        self.axes.iter().map(|a| a.delta()).sum()
    }

    /// `Σ values · cellvolume`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// `‖f‖_1` on the grid (midpoint rule).
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_volume()
    }

    /// `‖f‖_∞` on the grid.
    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, other: &GridDensity) -> Result<()> {
        if self.axes != other.axes {
            return Err(Error::GridMismatch(
                "grids have different axes or cell counts".into(),
            ));
        }
        Ok(())
    }

    /// Cell-wise difference `self − other` (unnormalized).
    pub fn difference(&self, other: &GridDensity) -> Result<GridDensity> {
        self.same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        GridDensity::new(self.axes.clone(), values, false)
    }

    /// `‖f − g‖_1` on the grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.cell_volume())
    }

    /// Rescales the values so the grid has unit mass and marks it normalized.
    /// Returns the mass that was scaled away.
    pub fn normalize(&mut self) -> Result<f64> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::Degenerate("cannot normalize nonpositive mass".into()));
        }
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::GridMismatch(
                "cannot normalize grid with negative values".into(),
            ));
        }
        for v in &mut self.values {
            *v /= m;
        }
        self.normalized = true;
        Ok(m - 1.0)
    }

    fn fill_center(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for (a, ax) in self.axes.iter().enumerate().rev() {
            out[a] = ax.center(rem % ax.n);
            rem /= ax.n;
        }
    }

    /// Center of the cell with the given flat index.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dims()];
        self.fill_center(flat, &mut c);
        c
    }

    /// `∫ (1 + |x|_p^p) f` reweighting of the cell values (the `f_p` density
    /// of the smoothing chain). Not normalized.
    pub fn weighted(&self, p: f64) -> GridDensity {
        let mut g = self.clone();
        g.normalized = false;
        let mut center = vec![0.0; self.dims()];
        for flat in 0..g.values.len() {
            self.fill_center(flat, &mut center);
            let w = 1.0 + center.iter().map(|x| x.abs().powf(p)).sum::<f64>();
            g.values[flat] *= w;
        }
        g
    }

    /// `M_r = ∫ |x|_1^r f` (midpoint rule); `M_0` is the mass.
    pub fn moment(&self, r: f64) -> f64 {
        if r == 0.0 {
            return self.mass();
        }
        let mut center = vec![0.0; self.dims()];
        let mut acc = 0.0;
        for flat in 0..self.values.len() {
            self.fill_center(flat, &mut center);
            let n1 = center.iter().map(|x| x.abs()).sum::<f64>();
            acc += self.values[flat] * n1.powf(r);
        }
        acc * self.cell_volume()
    }

    /// Positive-mass atoms `(cell center, probability)` of the grid viewed as
    /// a discrete measure (mass renormalized to one).
    pub fn atoms(&self) -> Result<Vec<(Vec<f64>, f64)>> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::Degenerate("grid has nonpositive mass".into()));
        }
        let vol = self.cell_volume();
        let mut out = Vec::new();
        for flat in 0..self.values.len() {
            let w = self.values[flat] * vol / m;
            if w > 1e-15 {
                out.push((self.cell_center(flat), w));
            }
        }
        Ok(out)
    }

    /// Quantizes the grid to a finitely supported path measure: cell-center
    /// atoms, stage order = axis order (first axis = stage 1, d = 1).
    pub fn quantize(&self) -> Result<PathMeasure> {
        let atoms = self.atoms()?;
        PathMeasure::from_atoms(self.dims(), 1, &atoms)
    }

    /// Coarsens by integer factors until the total cell count is at most
    /// `max_cells`; merged cells carry the mean of their values, so mass is
    /// preserved. Deterministic, hence identical for aligned grids.
    pub fn coarsen(&self, max_cells: usize) -> GridDensity {
        let mut g = self.clone();
        loop {
            let total: usize = g.axes.iter().map(|a| a.n).product();
            if total <= max_cells.max(1) {
                return g;
            }
            // Merge along the axis with the most cells, by its smallest
            // divisor >= 2 (collapsing the axis if the count is prime).
            let axis = (0..g.axes.len())
                .max_by_key(|&a| g.axes[a].n)
                .expect("nonempty axes");
            let n = g.axes[axis].n;
            let d = (2..=n).find(|d| n % d == 0).unwrap_or(n).min(n);
            g = g.merge_axis(axis, d);
        }
    }

    fn merge_axis(&self, axis: usize, factor: usize) -> GridDensity {
        let mut axes = self.axes.clone();
        let new_n = axes[axis].n / factor;
        axes[axis].n = new_n;
        let inner: usize = self.axes[axis + 1..].iter().map(|a| a.n).product();
        let outer: usize = self.axes[..axis].iter().map(|a| a.n).product();
        let old_n = self.axes[axis].n;
        let mut values = vec![0.0; outer * new_n * inner];
        for o in 0..outer {
            for i in 0..old_n {
                for r in 0..inner {
                    let src = (o * old_n + i) * inner + r;
                    let dst = (o * new_n + i / factor) * inner + r;
                    values[dst] += self.values[src] / factor as f64;
                }
            }
        }
        GridDensity {
            axes,
            values,
            normalized: self.normalized,
        }
    }

    /// Writes the grid as a one-line JSON header followed by the raw
    /// little-endian f64 cell block.
    pub fn write_to<W: IoWrite>(&self, w: &mut W) -> Result<()> {
        let header = GridHeader {
            axes: self.axes.clone(),
            normalized: self.normalized,
            cells: self.values.len(),
        };
        let mut line = serde_json::to_string(&header)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a grid written by [`GridDensity::write_to`].
    pub fn read_from<R: IoRead>(r: &mut R) -> Result<Self> {
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
            if header_bytes.len() > 1 << 20 {
                return Err(Error::Parse("grid header exceeds 1 MiB".into()));
            }
        }
        let header: GridHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Parse(format!("grid header: {e}")))?;
        let mut block = vec![0u8; header.cells * 8];
        r.read_exact(&mut block)?;
        let values = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        GridDensity::new(header.axes, values, header.normalized)
    }

    /// Writes the grid to a file path.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_to(&mut f)
    }

    /// Reads a grid from a file path.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        GridDensity::read_from(&mut f)
    }
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    axes: Vec<Axis>,
    normalized: bool,
    cells: usize,
}

/// Symbolic kernel families. All kernels are products of a one-dimensional
/// profile across the grid axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Indicator of `[−1/2, 1/2]`.
    Box,
    /// Standard Gaussian density.
    Gaussian,
    /// Polynomial-times-Gaussian kernel of the given even order (2, 4 or 6),
    /// built by Hermite orthogonalization: order 4 is `(3 − x²)/2 · φ(x)`,
    /// order 6 is `(15 − 10x² + x⁴)/8 · φ(x)`.
    GaussianOrder(usize),
    /// Piecewise-constant table on a uniform partition of `[lo, hi]`.
    Custom { lo: f64, hi: f64, values: Vec<f64> },
}

/// A validated kernel: family plus the numerically computed constants used by
/// the smoothing bounds.
#[derive(Debug, Clone, Serialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// The order `k` the kernel was validated for (moments 1..k−1 vanish).
    pub order: usize,
    /// Number of axes the product kernel acts on.
    pub dims: usize,
    /// The constant `max_i ∫ |∂_i K|` (the total variation of the profile
    /// times `‖κ‖_1^{dims−1}`), written `Lip(K)` in the bound formulas.
    pub lip: f64,
    /// `‖K‖_1` of the product kernel.
    pub l1_norm: f64,
    /// One-dimensional truncation radius: the profile vanishes (or is
    /// negligible) outside `[−radius, radius]`.
    pub radius: f64,
}

impl KernelSpec {
    /// The one-dimensional profile `κ`.
    pub fn profile(&self, z: f64) -> f64 {
        match &self.family {
            KernelFamily::Box => {
                if (-0.5..0.5).contains(&z) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => gaussian_phi(z),
            KernelFamily::GaussianOrder(m) => match m {
                2 => gaussian_phi(z),
                4 => (3.0 - z * z) / 2.0 * gaussian_phi(z),
                6 => {
                    let z2 = z * z;
                    (15.0 - 10.0 * z2 + z2 * z2) / 8.0 * gaussian_phi(z)
                }
                _ => 0.0,
            },
            KernelFamily::Custom { lo, hi, values } => {
                if z < *lo || z >= *hi || values.is_empty() {
                    0.0
                } else {
                    let cell = ((z - lo) / (hi - lo) * values.len() as f64) as usize;
                    values[cell.min(values.len() - 1)]
                }
            }
        }
    }

    /// The product kernel `K(z) = ∏ κ(z_i)`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        z.iter().map(|&zi| self.profile(zi)).product()
    }
}

fn gaussian_phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quadrature points for one-dimensional kernel integrals.
const KERNEL_QUAD_POINTS: usize = 1 << 21;

/// Midpoint-rule integral of `g` over `[lo, hi]`.
fn quad<F: Fn(f64) -> f64>(lo: f64, hi: f64, g: F) -> f64 {
    let n = KERNEL_QUAD_POINTS;
    let dz = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        acc += g(lo + (i as f64 + 0.5) * dz);
    }
    acc * dz
}

fn profile_interval(spec: &KernelSpec) -> (f64, f64) {
    match &spec.family {
        KernelFamily::Box => (-0.5, 0.5),
        KernelFamily::Gaussian | KernelFamily::GaussianOrder(_) => (-spec.radius, spec.radius),
        KernelFamily::Custom { lo, hi, .. } => (*lo, *hi),
    }
}

/// Signed one-dimensional moment `∫ κ(z) z^j dz`.
fn signed_moment(spec: &KernelSpec, j: u32) -> f64 {
    let (lo, hi) = profile_interval(spec);
    quad(lo, hi, |z| spec.profile(z) * z.powi(j as i32))
}

/// Absolute one-dimensional moment `∫ |κ(z)| |z|^j dz`.
fn abs_moment(spec: &KernelSpec, j: u32) -> f64 {
    let (lo, hi) = profile_interval(spec);
    quad(lo, hi, |z| spec.profile(z).abs() * z.abs().powi(j as i32))
}

/// Quadrature tolerance on the kernel moment conditions.
pub const MOMENT_TOL: f64 = 1e-6;

/// Builds and validates a `k`-th order product kernel on `dims` axes:
/// `∫K = 1` and `∫K z^α = 0` for `1 ≤ |α| < k` are checked by quadrature,
/// and `Lip(K)` / `‖K‖_1` are computed numerically and stored.
pub fn make_kernel(family: KernelFamily, k: usize, dims: usize) -> Result<KernelSpec> {
    if k == 0 || k > 6 {
        return Err(Error::UnsupportedOrder(k));
    }
    if let KernelFamily::GaussianOrder(m) = family {
        if !(m == 2 || m == 4 || m == 6) {
            return Err(Error::UnsupportedOrder(m));
        }
    }
    let radius = match &family {
        KernelFamily::Box => 0.5,
        KernelFamily::Gaussian | KernelFamily::GaussianOrder(_) => 10.0,
        KernelFamily::Custom { lo, hi, .. } => lo.abs().max(hi.abs()),
    };
    let mut spec = KernelSpec {
        family,
        order: k,
        dims: dims.max(1),
        lip: 0.0,
        l1_norm: 0.0,
        radius,
    };
    // Moment conditions. For a product kernel the mixed moments factor into
    // one-dimensional ones, so checking the profile suffices.
    if (signed_moment(&spec, 0) - 1.0).abs() > MOMENT_TOL {
        return Err(Error::UnsupportedOrder(k));
    }
    for j in 1..k as u32 {
        if signed_moment(&spec, j).abs() > MOMENT_TOL {
            return Err(Error::UnsupportedOrder(k));
        }
    }
    let l1_1d = abs_moment(&spec, 0);
    spec.l1_norm = l1_1d.powi(spec.dims as i32);
    spec.lip = kernel_lipschitz(&spec, l1_1d);
    Ok(spec)
}

/// The kernel constant `Lip(K) := max_i ∫ |∂_i K(u)| du`, which bounds the
/// `|·|_1`-Lipschitz constant of `φ ∗ K` for any `|φ| ≤ 1` — the quantity the
/// dual argument of the smoothing bounds actually uses. For the product
/// kernel this is `TV(κ) · ‖κ‖_1^{dims−1}` with `TV` the total variation of
/// the profile (finite even for the discontinuous box profile, where the two
/// unit jumps give `TV = 2`).
fn kernel_lipschitz(spec: &KernelSpec, l1_1d: f64) -> f64 {
    let tv = match &spec.family {
        KernelFamily::Box => 2.0,
        KernelFamily::Custom { values, .. } => {
            // Jump sizes, including the jumps from and back to zero outside
            // the table support.
            let mut prev = 0.0f64;
            let mut tv = 0.0;
            for &v in values {
                tv += (v - prev).abs();
                prev = v;
            }
            tv + prev.abs()
        }
        _ => {
            let (lo, hi) = profile_interval(spec);
            let n = 200_000usize;
            let dz = (hi - lo) / n as f64;
            let mut acc = 0.0;
            let mut prev = spec.profile(lo);
            for i in 1..=n {
                let cur = spec.profile(lo + i as f64 * dz);
                acc += (cur - prev).abs();
                prev = cur;
            }
            acc
        }
    };
    tv * l1_1d.powi(spec.dims as i32 - 1)
}

/// `C_{k,K} = sup_{|α| ≤ k} (1/α!) ∫ |K(z) z^α| dz`, by quadrature on the
/// one-dimensional absolute moments (the product kernel factorizes).
pub fn ckk_constant(spec: &KernelSpec, k: usize) -> f64 {
    // 1D absolute moments m_j and factorials.
    let m: Vec<f64> = (0..=k as u32).map(|j| abs_moment(spec, j)).collect();
    let mut fact = vec![1.0f64; k + 1];
    for j in 1..=k {
        fact[j] = fact[j - 1] * j as f64;
    }
    // sup over multi-indices α with |α| ≤ k across `dims` axes of
    // ∏ m_{α_i} / α_i!.
    fn rec(axis: usize, dims: usize, left: usize, acc: f64, m: &[f64], fact: &[f64], best: &mut f64) {
        if axis == dims {
            *best = best.max(acc);
            return;
        }
        for j in 0..=left {
            rec(axis + 1, dims, left - j, acc * m[j] / fact[j], m, fact, best);
        }
    }
    let mut best = 0.0;
    rec(0, spec.dims, k, 1.0, &m, &fact, &mut best);
    best
}

/// Convolves a grid function with the rescaled kernel `K_h = h^{−dims} K(·/h)`
/// by separable one-dimensional midpoint stencils with zero padding. The
/// stencil weights are renormalized to unit sum, so mass is preserved exactly
/// for interior-supported input.
pub fn convolve(f: &GridDensity, spec: &KernelSpec, h: f64) -> Result<GridDensity> {
    if spec.dims != f.dims() {
        return Err(Error::GridMismatch(format!(
            "kernel acts on {} axes, grid has {}",
            spec.dims,
            f.dims()
        )));
    }
    let cells = f.cell_sizes();
    let max_cell = cells.iter().cloned().fold(0.0f64, f64::max);
    if !(h > 0.0) || h < max_cell {
        return Err(Error::BandwidthTooSmall { h, cell: max_cell });
    }
    let mut values = f.values.clone();
    for axis in 0..f.dims() {
        let delta = cells[axis];
        let (plo, phi) = profile_interval(spec);
        let jlo = (plo * h / delta).floor() as isize;
        let jhi = (phi * h / delta).ceil() as isize;
        let weights: Vec<f64> = (jlo..=jhi)
            .map(|j| delta / h * spec.profile(j as f64 * delta / h))
            .collect();
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Degenerate("kernel stencil has nonpositive mass".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        values = convolve_axis(&f.axes, &values, axis, jlo, &weights);
    }
    GridDensity::new(f.axes.clone(), values, false)
}

fn convolve_axis(
    axes: &[Axis],
    values: &[f64],
    axis: usize,
    jlo: isize,
    weights: &[f64],
) -> Vec<f64> {
    let inner: usize = axes[axis + 1..].iter().map(|a| a.n).product();
    let outer: usize = axes[..axis].iter().map(|a| a.n).product();
    let n = axes[axis].n;
    let mut out = vec![0.0; values.len()];
    for o in 0..outer {
        for r in 0..inner {
            let base = o * n * inner + r;
            for i in 0..n as isize {
                let mut acc = 0.0;
                for (w_idx, &w) in weights.iter().enumerate() {
                    // K_h * f (x) = Σ_j w_j f(x − j δ e_axis).
                    let j = jlo + w_idx as isize;
                    let src = i - j;
                    if src >= 0 && src < n as isize {
                        acc += w * values[base + src as usize * inner];
                    }
                }
                out[base + i as usize * inner] = acc;
            }
        }
    }
    out
}

/// Which `L^r` norm a Sobolev norm is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lr {
    L1,
    LInf,
}

/// Sobolev norm `‖f‖_{k,r} = Σ_{|α| ≤ k} ‖D^α f‖_r` by central differences
/// (one-sided at the boundary). Supports `k ≤ 3` and `r ∈ {1, ∞}`.
pub fn sobolev_norm(f: &GridDensity, k: usize, r: Lr) -> Result<f64> {
    if k > 3 {
        return Err(Error::UnsupportedOrder(k));
    }
    for ax in f.axes() {
        if ax.n < 8 {
            return Err(Error::GridTooCoarse(ax.n));
        }
    }
    let dims = f.dims();
    let mut total = 0.0;
    let mut alpha = vec![0usize; dims];
    loop {
        let order: usize = alpha.iter().sum();
        if order <= k {
            let mut vals = f.values.clone();
            for (axis, &times) in alpha.iter().enumerate() {
                for _ in 0..times {
                    vals = derivative_axis(&f.axes, &vals, axis);
                }
            }
            total += match r {
                Lr::L1 => vals.iter().map(|v| v.abs()).sum::<f64>() * f.cell_volume(),
                Lr::LInf => vals.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            };
        }
        // Advance the multi-index over {0..k}^dims, skipping |α| > k above.
        let mut pos = 0;
        loop {
            if pos == dims {
                return Ok(total);
            }
            alpha[pos] += 1;
            if alpha[pos] <= k {
                break;
            }
            alpha[pos] = 0;
            pos += 1;
        }
    }
}

fn derivative_axis(axes: &[Axis], values: &[f64], axis: usize) -> Vec<f64> {
    let inner: usize = axes[axis + 1..].iter().map(|a| a.n).product();
    let outer: usize = axes[..axis].iter().map(|a| a.n).product();
    let n = axes[axis].n;
    let delta = axes[axis].delta();
    let mut out = vec![0.0; values.len()];
    for o in 0..outer {
        for r in 0..inner {
            let at = |i: usize| values[(o * n + i) * inner + r];
            for i in 0..n {
                let d = if i == 0 {
                    (at(1) - at(0)) / delta
                } else if i == n - 1 {
                    (at(n - 1) - at(n - 2)) / delta
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * delta)
                };
                out[(o * n + i) * inner + r] = d;
            }
        }
    }
    out
}

/// One row of a Lemma 4.1 verification table: the smoothing error
/// `‖K_h∗f − f‖_1` against its bound `h^k C_{k,K} ‖f‖_{k,1}`.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma41Row {
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Evaluates the kernel-approximation inequality for each bandwidth.
pub fn lemma41_check(
    f: &GridDensity,
    spec: &KernelSpec,
    k: usize,
    hs: &[f64],
) -> Result<Vec<Lemma41Row>> {
    let ckk = ckk_constant(spec, k);
    let sob = sobolev_norm(f, k, Lr::L1)?;
    let mut rows = Vec::with_capacity(hs.len());
    for &h in hs {
        let smoothed = convolve(f, spec, h)?;
        let lhs = smoothed.l1_distance(f)?;
        let rhs = h.powi(k as i32) * ckk * sob;
        rows.push(Lemma41Row {
            h,
            lhs,
            rhs,
            ratio: if rhs > 0.0 { lhs / rhs } else { f64::INFINITY },
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log lhs` against `log h` — the empirical decay
/// order of the smoothing error.
pub fn fitted_decay_order(rows: &[Lemma41Row]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.lhs > 0.0 && r.h > 0.0)
        .map(|r| (r.h.ln(), r.lhs.ln()))
        .collect();
    least_squares_slope(&pts)
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// Cap on the atom count when a grid is quantized for an exact transport LP.
pub const GRID_LP_ATOM_CAP: usize = 2000;

/// `W_q` between two aligned grids with ground metric `|x − y|_1`, computed
/// by the exact transport LP on cell-center atoms. Grids with more than
/// `GRID_LP_ATOM_CAP` cells are coarsened by integer factors first (both
/// grids identically, since they are aligned).
pub fn wasserstein_grid_l1(mu: &GridDensity, nu: &GridDensity, q: f64) -> Result<f64> {
    mu.same_shape(nu)?;
    let mc = mu.coarsen(GRID_LP_ATOM_CAP);
    let nc = nu.coarsen(GRID_LP_ATOM_CAP);
    let a = mc.atoms()?;
    let b = nc.atoms()?;
    let aw: Vec<f64> = a.iter().map(|(_, w)| *w).collect();
    let bw: Vec<f64> = b.iter().map(|(_, w)| *w).collect();
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|(x, _)| {
            b.iter()
                .map(|(y, _)| {
                    let d1: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - yi).abs()).sum();
                    d1.powf(q)
                })
                .collect()
        })
        .collect();
    let (val, _) = transport_lp(&aw, &bw, &cost)?;
    Ok(val.max(0.0).powf(1.0 / q))
}

/// Both sides of the two convolution-difference estimates: case (i)
/// `‖K_h∗(f−g)‖_1 ≤ (1/h) Lip(K) W_1`, and case (ii) on the moment-weighted
/// densities `‖K_h∗(f_p−g_p)‖_1 ≤ (C_1 + C_2/h) W_q`.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma42Report {
    pub lhs1: f64,
    pub rhs1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
    pub w1: f64,
    pub wq: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Constants `C_1 = ‖K‖_1 p (M_{q(p−1)/(q−1)}^{(q−1)/q}(μ) + same(ν))` and
/// `C_2 = Lip(K)(1 + p M_{qp/(q−1)}^{(q−1)/q}(μ) + (p+1) same(ν))`.
fn smoothing_constants(
    mu: &GridDensity,
    nu: &GridDensity,
    spec: &KernelSpec,
    p: f64,
    q: f64,
) -> Result<(f64, f64)> {
    if !(q > 1.0) {
        return Err(Error::Degenerate(format!(
            "moment-weighted smoothing bound needs q > 1, got {q}"
        )));
    }
    let e = (q - 1.0) / q;
    let r1 = q * (p - 1.0) / (q - 1.0);
    let r2 = q * p / (q - 1.0);
    let c1 = spec.l1_norm * p * (mu.moment(r1).powf(e) + nu.moment(r1).powf(e));
    let c2 = spec.lip * (1.0 + p * mu.moment(r2).powf(e) + (p + 1.0) * nu.moment(r2).powf(e));
    Ok((c1, c2))
}

/// Verifies both convolution-difference estimates on a pair of aligned grid
/// densities.
pub fn lemma42_bounds(
    mu: &GridDensity,
    nu: &GridDensity,
    spec: &KernelSpec,
    h: f64,
    p: f64,
    q: f64,
) -> Result<Lemma42Report> {
    mu.same_shape(nu)?;
    let diff = mu.difference(nu)?;
    let lhs1 = convolve(&diff, spec, h)?.l1_norm();
    let w1 = wasserstein_grid_l1(mu, nu, 1.0)?;
    let rhs1 = spec.lip / h * w1;

    let diff_p = mu.weighted(p).difference(&nu.weighted(p))?;
    let lhs2 = convolve(&diff_p, spec, h)?.l1_norm();
    let wq = wasserstein_grid_l1(mu, nu, q)?;
    let (c1, c2) = smoothing_constants(mu, nu, spec, p, q)?;
    let rhs2 = (c1 + c2 / h) * wq;

    Ok(Lemma42Report {
        lhs1,
        rhs1,
        lhs2,
        rhs2,
        w1,
        wq,
        c1,
        c2,
    })
}

/// The full adapted-to-classical Wasserstein estimate with engine-computed
/// constants, plus its compact-support and polynomial-density variants.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem29Report {
    pub t: usize,
    pub p: f64,
    pub q: f64,
    pub k: usize,
    /// `AW_p^p` of the quantized pair (the left-hand side).
    pub aw_p_pow: f64,
    pub wq: f64,
    pub w1: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub ckk: f64,
    pub lambda_weighted: f64,
    pub sob_f: f64,
    pub sob_g: f64,
    pub sob_fp: f64,
    pub sob_gp: f64,
    /// The bandwidth `h* = (C_2 W_q / (C_{k,K}(‖f_p‖+‖g_p‖)))^{1/(k+1)}`
    /// realizing the main bound.
    pub h_star: f64,
    /// Main right-hand side
    /// `C_0 C_1 W_q + 2C_0 (C_{k,K}^{1/k} C_2)^{k/(k+1)} (‖f_p‖+‖g_p‖)^{1/(k+1)} W_q^{k/(k+1)}`.
    pub rhs: f64,
    pub slack: f64,
    /// `diam^p` of the common bounding box in the `p`-norm.
    pub diam_p_pow: f64,
    /// Compact-support variant
    /// `2(2T−1) diam^p (C_{k,K}^{1/k} Lip K)^{k/(k+1)} (‖f‖+‖g‖)^{1/(k+1)} W_1^{k/(k+1)}`.
    pub compact_rhs: f64,
    pub compact_slack: f64,
    /// Polynomial-density variant `(2T−1) diam^p Lip(K) W_1` (valid only when
    /// both densities are polynomials of order below `k`).
    pub polynomial_rhs: f64,
}

/// Evaluates the adapted-to-classical Wasserstein bound on a pair of aligned
/// grid densities: the left-hand side is the engine's adapted Wasserstein
/// distance of the quantized pair, and every constant on the right-hand side
/// is computed numerically from the grids and the kernel.
pub fn theorem29_bound(
    mu: &GridDensity,
    nu: &GridDensity,
    k: usize,
    spec: &KernelSpec,
    p: f64,
    q: f64,
) -> Result<Theorem29Report> {
    mu.same_shape(nu)?;
    let mc = mu.coarsen(GRID_LP_ATOM_CAP);
    let nc = nu.coarsen(GRID_LP_ATOM_CAP);
    let mu_tree = mc.quantize()?;
    let nu_tree = nc.quantize()?;
    let t = mu_tree.stages();

    let aw = crate::adapted::adapted_wasserstein(&mu_tree, &nu_tree, p)?;
    let aw_p_pow = aw.powf(p);
    let wq = wasserstein_grid_l1(mu, nu, q)?;
    let w1 = wasserstein_grid_l1(mu, nu, 1.0)?;

    let ct = compute_ct(&nu_tree, p);
    let lambda_weighted = lambda_constant(&ct);
    let c0 = 2f64.powf(p) * lambda_weighted;
    let (c1, c2) = smoothing_constants(mu, nu, spec, p, q)?;
    let ckk = ckk_constant(spec, k);

    let sob_f = sobolev_norm(mu, k, Lr::L1)?;
    let sob_g = sobolev_norm(nu, k, Lr::L1)?;
    let sob_fp = sobolev_norm(&mu.weighted(p), k, Lr::L1)?;
    let sob_gp = sobolev_norm(&nu.weighted(p), k, Lr::L1)?;

    let kf = k as f64;
    let h_star = if wq > 0.0 {
        (c2 * wq / (ckk * (sob_fp + sob_gp))).powf(1.0 / (kf + 1.0))
    } else {
        0.0
    };
    let rhs = c0 * c1 * wq
        + 2.0
            * c0
            * (ckk.powf(1.0 / kf) * c2).powf(kf / (kf + 1.0))
            * (sob_fp + sob_gp).powf(1.0 / (kf + 1.0))
            * wq.powf(kf / (kf + 1.0));

    let diam_p_pow: f64 = mu
        .axes()
        .iter()
        .map(|a| (a.hi - a.lo).powf(p))
        .sum();
    let two_t = (2 * t - 1) as f64;
    let compact_rhs = 2.0
        * two_t
        * diam_p_pow
        * (ckk.powf(1.0 / kf) * spec.lip).powf(kf / (kf + 1.0))
        * (sob_f + sob_g).powf(1.0 / (kf + 1.0))
        * w1.powf(kf / (kf + 1.0));
    let polynomial_rhs = two_t * diam_p_pow * spec.lip * w1;

    Ok(Theorem29Report {
        t,
        p,
        q,
        k,
        aw_p_pow,
        wq,
        w1,
        c0,
        c1,
        c2,
        ckk,
        lambda_weighted,
        sob_f,
        sob_g,
        sob_fp,
        sob_gp,
        h_star,
        rhs,
        slack: rhs - aw_p_pow,
        diam_p_pow,
        compact_rhs,
        compact_slack: compact_rhs - aw_p_pow,
        polynomial_rhs,
    })
}
