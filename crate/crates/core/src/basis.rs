//! Analytic divergence-free eigenbasis on the square `[0, pi]^2`.
//!
//! Every mode comes from the stream function `psi_kl = sin(k x) sin(l y)`
//! through `e = s (d_y psi, -d_x psi)`. These fields are Laplacian
//! eigenfunctions (`-Lap e = mu e`, `mu = k^2 + l^2`), tangent to every wall
//! and free of tangential stress there, so the weighted eigenproblem
//! `(v, e)_W = lambda (v, e)_V` holds with `lambda = 2 + alpha1 mu`.
//! The scale `s` makes the family orthonormal in V.
//!
//! All derivatives are evaluated analytically from per-axis sine/cosine
//! tables; nothing in this module differentiates numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{dot_weighted, Grid, GridField, Rank};
use crate::scalar::Real;

/// Wavenumber pair of a stream-function mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub k: usize,
    pub l: usize,
}

impl ModeIndex {
    pub fn new(k: usize, l: usize) -> Self {
        assert!(k >= 1 && l >= 1, "wavenumbers start at 1");
        ModeIndex { k, l }
    }

    /// Laplacian eigenvalue `k^2 + l^2`.
    pub fn mu(&self) -> usize {
        self.k * self.k + self.l * self.l
    }
}

/// Truncation and quadrature resolution of a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kmax: usize,
    pub lmax: usize,
    pub alpha1: f64,
    pub grid_n: usize,
}

impl BasisSpec {
    pub fn new(kmax: usize, lmax: usize, alpha1: f64, grid_n: usize) -> Self {
        BasisSpec {
            kmax,
            lmax,
            alpha1,
            grid_n,
        }
    }

    /// Spec whose grid resolves quartic products of the retained modes.
    pub fn with_quartic_grid(kmax: usize, lmax: usize, alpha1: f64) -> Self {
        let grid_n = Self::quartic_grid_n(kmax.max(lmax));
        BasisSpec::new(kmax, lmax, alpha1, grid_n)
    }

    /// Square truncation holding `n` modes; `n` must be a perfect square.
    pub fn square_level(n: usize, alpha1: f64) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side == 0 || side * side != n {
            return Err(Error::Argument(format!(
                "Galerkin level {n} is not a square mode count (k_max = l_max)"
            )));
        }
        Ok(BasisSpec::with_quartic_grid(side, side, alpha1))
    }

    pub fn max_wavenumber(&self) -> usize {
        self.kmax.max(self.lmax)
    }

    pub fn len(&self) -> usize {
        self.kmax * self.lmax
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes per axis needed for products of two retained modes.
    pub fn bilinear_grid_n(max_wavenumber: usize) -> usize {
        2 * max_wavenumber + 2
    }

    /// Nodes per axis needed for quartic products (`|A|^4` and friends).
    pub fn quartic_grid_n(max_wavenumber: usize) -> usize {
        4 * max_wavenumber + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.kmax < 1 || self.lmax < 1 {
            return Err(Error::BasisSpec(format!(
                "kmax and lmax must be >= 1 (got {} and {})",
                self.kmax, self.lmax
            )));
        }
        if !(self.alpha1.is_finite() && self.alpha1 >= 0.0) {
            return Err(Error::BasisSpec(format!(
                "alpha1 must be finite and >= 0 (got {})",
                self.alpha1
            )));
        }
        let required = Self::bilinear_grid_n(self.max_wavenumber());
        if self.grid_n < required {
            return Err(Error::Resolution {
                grid_n: self.grid_n,
                required,
            });
        }
        Ok(())
    }

    /// Errors unless the grid resolves quartic products.
    pub fn require_quartic(&self) -> Result<()> {
        let required = Self::quartic_grid_n(self.max_wavenumber());
        if self.grid_n < required {
            return Err(Error::Resolution {
                grid_n: self.grid_n,
                required,
            });
        }
        Ok(())
    }
}

/// One retained mode with its eigen-data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisFunction<T> {
    pub mode: ModeIndex,
    /// `k^2 + l^2`
    pub mu: T,
    /// `2 + alpha1 mu`
    pub lambda: T,
    pub v_normalizer: T,
    /// `1 + alpha1 mu`, the factor with `ups(e) = e - alpha1 Lap e = factor * e`.
    pub upsilon_factor: T,
}

/// Coefficients of `Y_n = sum_j c_j e_j` plus the time they belong to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralState<T> {
    pub coeffs: Vec<T>,
    pub time: T,
}

impl<T: Real> SpectralState<T> {
    pub fn zeros(n: usize) -> Self {
        SpectralState {
            coeffs: vec![T::zero(); n],
            time: T::zero(),
        }
    }

    pub fn unit(n: usize, slot: usize) -> Self {
        let mut s = Self::zeros(n);
        s.coeffs[slot] = T::one();
        s
    }

    pub fn from_coeffs(coeffs: Vec<T>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("spectral coefficients must be finite".into()));
        }
        Ok(SpectralState {
            coeffs,
            time: T::zero(),
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Squared V norm, exact because the basis is V-orthonormal.
    pub fn v_norm_sq(&self) -> T {
        self.coeffs.iter().map(|c| *c * *c).sum()
    }

    pub fn scaled(&self, a: T) -> Self {
        SpectralState {
            coeffs: self.coeffs.iter().map(|c| *c * a).collect(),
            time: self.time,
        }
    }

    /// `a * self + b * other`, keeping `self.time`.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        assert_eq!(self.len(), other.len(), "state lengths differ");
        SpectralState {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| a * *x + b * *y)
                .collect(),
            time: self.time,
        }
    }
}

/// Which derivative [`Basis::synthesize`] samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    /// Velocity, rank 2.
    Value,
    /// Jacobian `G[i][j] = d_j u_i`, rank 4.
    Gradient,
    /// Vector Laplacian, rank 2.
    Laplacian,
}

/// Maximum wall traces of a sampled velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryResidual<T> {
    /// `max |u . n|`
    pub normal: T,
    /// `max |(n . D(u)) . tau|`
    pub shear: T,
}

/// Built basis: eigen-data, quadrature grid and per-mode samples.
#[derive(Debug, Clone)]
pub struct Basis<T> {
    spec: BasisSpec,
    alpha1: T,
    grid: Grid<T>,
    functions: Vec<BasisFunction<T>>,
    /// `sin(k x_i)` and `cos(k x_i)`, indexed `[k][i]`.
    sin_tab: Vec<Vec<T>>,
    cos_tab: Vec<Vec<T>>,
    values: Vec<GridField<T>>,
    grads: Vec<GridField<T>>,
}

/// Modes of `spec` in canonical order: ascending lambda, ties by `(k, l)`.
pub fn build_basis<T: Real>(spec: &BasisSpec) -> Result<Vec<BasisFunction<T>>> {
    spec.validate()?;
    let alpha1 = T::lit(spec.alpha1);
    let quarter_pi_sq = T::PI() * T::PI() * T::lit(0.25);
    let mut modes: Vec<ModeIndex> = (1..=spec.kmax)
        .flat_map(|k| (1..=spec.lmax).map(move |l| ModeIndex { k, l }))
        .collect();
    // lambda = 2 + alpha1 mu is monotone in the integer mu when alpha1 > 0
    // and constant otherwise, so the ordering can be decided exactly.
    modes.sort_by(|a, b| {
        if spec.alpha1 > 0.0 {
            a.mu().cmp(&b.mu()).then(a.cmp(b))
        } else {
            a.cmp(b)
        }
    });
    Ok(modes
        .into_iter()
        .map(|mode| {
            let mu = T::from_usize_lossy(mode.mu());
            let upsilon_factor = T::one() + alpha1 * mu;
            let raw_l2 = mu * quarter_pi_sq;
            BasisFunction {
                mode,
                mu,
                lambda: T::lit(2.0) + alpha1 * mu,
                v_normalizer: T::one() / (upsilon_factor * raw_l2).sqrt(),
                upsilon_factor,
            }
        })
        .collect())
}

impl<T: Real> Basis<T> {
    pub fn new(spec: &BasisSpec) -> Result<Self> {
        let functions = build_basis::<T>(spec)?;
        let grid = Grid::new(spec.grid_n)?;
        let kmax = spec.max_wavenumber();
        let sin_tab: Vec<Vec<T>> = (0..=kmax)
            .map(|k| grid.nodes().iter().map(|x| (T::from_usize_lossy(k) * *x).sin()).collect())
            .collect();
        let cos_tab: Vec<Vec<T>> = (0..=kmax)
            .map(|k| grid.nodes().iter().map(|x| (T::from_usize_lossy(k) * *x).cos()).collect())
            .collect();
        let mut basis = Basis {
            spec: spec.clone(),
            alpha1: T::lit(spec.alpha1),
            grid,
            functions,
            sin_tab,
            cos_tab,
            values: Vec::new(),
            grads: Vec::new(),
        };
        basis.values = (0..basis.len()).map(|m| basis.mode_partial(m, 0, 0)).collect();
        basis.grads = (0..basis.len()).map(|m| basis.mode_gradient(m)).collect();
        Ok(basis)
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn alpha1(&self) -> T {
        self.alpha1
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn functions(&self) -> &[BasisFunction<T>] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn index_of(&self, mode: ModeIndex) -> Option<usize> {
        self.functions.iter().position(|f| f.mode == mode)
    }

    /// Sampled velocity of mode `m`.
    pub fn mode_value(&self, m: usize) -> &GridField<T> {
        &self.values[m]
    }

    /// Sampled Jacobian of mode `m`.
    pub fn mode_grad(&self, m: usize) -> &GridField<T> {
        &self.grads[m]
    }

    /// `d^a/dx^a` of `sin(k x)` at node `i`.
    fn sine_derivative(&self, k: usize, a: usize, i: usize) -> T {
        let scale = T::from_usize_lossy(k).powi(a as i32);
        match a % 4 {
            0 => scale * self.sin_tab[k][i],
            1 => scale * self.cos_tab[k][i],
            2 => -scale * self.sin_tab[k][i],
            _ => -scale * self.cos_tab[k][i],
        }
    }

    /// `d_x^a d_y^b` of the velocity of mode `m`, sampled.
    ///
    /// With `psi = s X(x) Y(y)`: `u1 = s X Y'` and `u2 = -s X' Y`.
    pub fn mode_partial(&self, m: usize, a: usize, b: usize) -> GridField<T> {
        let f = &self.functions[m];
        let (k, l) = (f.mode.k, f.mode.l);
        let s = f.v_normalizer;
        let n = self.grid.n();
        let np = n * n;
        let mut data = vec![T::zero(); 2 * np];
        let x1: Vec<T> = (0..n).map(|i| self.sine_derivative(k, a, i)).collect();
        let y1: Vec<T> = (0..n).map(|j| self.sine_derivative(l, b + 1, j)).collect();
        let x2: Vec<T> = (0..n).map(|i| self.sine_derivative(k, a + 1, i)).collect();
        let y2: Vec<T> = (0..n).map(|j| self.sine_derivative(l, b, j)).collect();
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = s * x1[i] * y1[j];
                data[np + i * n + j] = -s * x2[i] * y2[j];
            }
        }
        GridField::from_data(Rank::Vector, n, data).expect("mode samples are finite")
    }

    fn mode_gradient(&self, m: usize) -> GridField<T> {
        let dx = self.mode_partial(m, 1, 0);
        let dy = self.mode_partial(m, 0, 1);
        jacobian_from_partials(&dx, &dy)
    }

    fn check_state(&self, state: &SpectralState<T>) -> Result<()> {
        if state.len() != self.len() {
            return Err(Error::shape(
                format!("{} coefficients", self.len()),
                format!("{} coefficients", state.len()),
            ));
        }
        Ok(())
    }

    fn check_field(&self, field: &GridField<T>, rank: Rank) -> Result<()> {
        if field.rank() != rank || field.n() != self.grid.n() {
            return Err(Error::shape(
                format!("{rank:?} field on {}^2 grid", self.grid.n()),
                format!("{:?} field on {}^2 grid", field.rank(), field.n()),
            ));
        }
        Ok(())
    }

    /// `sum_j c_j d^order e_j` sampled on the grid.
    pub fn synthesize(&self, state: &SpectralState<T>, order: Derivative) -> Result<GridField<T>> {
        self.check_state(state)?;
        let n = self.grid.n();
        let mut out = match order {
            Derivative::Gradient => GridField::zeros(Rank::Tensor, n),
            _ => GridField::zeros(Rank::Vector, n),
        };
        for (m, c) in state.coeffs.iter().enumerate() {
            if *c == T::zero() {
                continue;
            }
            match order {
                Derivative::Value => out.add_scaled(*c, &self.values[m])?,
                Derivative::Gradient => out.add_scaled(*c, &self.grads[m])?,
                Derivative::Laplacian => out.add_scaled(-*c * self.functions[m].mu, &self.values[m])?,
            }
        }
        Ok(out)
    }

    /// `sum_j c_j d_x^a d_y^b e_j` sampled on the grid.
    pub fn synthesize_partial(&self, state: &SpectralState<T>, a: usize, b: usize) -> Result<GridField<T>> {
        self.check_state(state)?;
        let mut out = GridField::zeros(Rank::Vector, self.grid.n());
        for (m, c) in state.coeffs.iter().enumerate() {
            if *c != T::zero() {
                out.add_scaled(*c, &self.mode_partial(m, a, b))?;
            }
        }
        Ok(out)
    }

    /// Coefficients of `ups(Y) = Y - alpha1 Lap Y` in the same expansion.
    pub fn upsilon(&self, state: &SpectralState<T>) -> Result<SpectralState<T>> {
        self.check_state(state)?;
        Ok(SpectralState {
            coeffs: state
                .coeffs
                .iter()
                .zip(&self.functions)
                .map(|(c, f)| *c * f.upsilon_factor)
                .collect(),
            time: state.time,
        })
    }

    /// V-orthogonal projection `c_j = (field, e_j)_V` of a sampled field.
    ///
    /// Uses `(y, e_j)_V = (y, ups(e_j))`, valid for fields satisfying the
    /// slip conditions.
    pub fn project_v(&self, field: &GridField<T>) -> Result<SpectralState<T>> {
        self.check_field(field, Rank::Vector)?;
        let coeffs = self
            .values
            .iter()
            .zip(&self.functions)
            .map(|(e, f)| f.upsilon_factor * dot_weighted(&self.grid, field, e))
            .collect();
        Ok(SpectralState {
            coeffs,
            time: T::zero(),
        })
    }

    /// Solution of the modified Stokes problem with slip walls, returned in
    /// V coefficients: `c_j = (f, e_j)`, hence `(f~, h)_V = (f, h)` for every
    /// retained `h`. Gradient parts of `f` are annihilated.
    pub fn modified_stokes(&self, f: &GridField<T>) -> Result<SpectralState<T>> {
        self.check_field(f, Rank::Vector)?;
        let coeffs = self.values.iter().map(|e| dot_weighted(&self.grid, f, e)).collect();
        Ok(SpectralState {
            coeffs,
            time: T::zero(),
        })
    }

    /// Zero-pads (or truncates) a state from `other` into this basis by mode index.
    pub fn embed(&self, state: &SpectralState<T>, other: &Basis<T>) -> Result<SpectralState<T>> {
        other.check_state(state)?;
        if self.spec.alpha1 != other.spec.alpha1 {
            return Err(Error::Argument("bases built with different alpha1".into()));
        }
        let mut out = SpectralState::zeros(self.len());
        out.time = state.time;
        for (c, f) in state.coeffs.iter().zip(other.functions()) {
            if let Some(idx) = self.index_of(f.mode) {
                out.coeffs[idx] = *c;
            }
        }
        Ok(out)
    }

    /// Largest `|div u|` of a sampled Jacobian.
    pub fn max_divergence(&self, grad: &GridField<T>) -> Result<T> {
        self.check_field(grad, Rank::Tensor)?;
        Ok(grad
            .component(0)
            .iter()
            .zip(grad.component(3))
            .fold(T::zero(), |m, (a, b)| m.max((*a + *b).abs())))
    }

    /// Samples both slip traces on all four walls.
    pub fn boundary_residual(&self, value: &GridField<T>, grad: &GridField<T>) -> Result<BoundaryResidual<T>> {
        self.check_field(value, Rank::Vector)?;
        self.check_field(grad, Rank::Tensor)?;
        boundary_residual(value, grad)
    }
}

/// Wall traces of a sampled velocity and its Jacobian on `[0, pi]^2`.
///
/// On every wall of the square the normal and tangent are coordinate axes,
/// so the tangential stress is `D12 = (G12 + G21) / 2` up to sign.
pub fn boundary_residual<T: Real>(value: &GridField<T>, grad: &GridField<T>) -> Result<BoundaryResidual<T>> {
    if value.rank() != Rank::Vector || grad.rank() != Rank::Tensor || value.n() != grad.n() {
        return Err(Error::shape(
            "vector value and tensor gradient on one grid",
            format!("{:?} and {:?} fields", value.rank(), grad.rank()),
        ));
    }
    let n = value.n();
    let half = T::lit(0.5);
    let mut normal = T::zero();
    let mut shear = T::zero();
    let d12 = |i: usize, j: usize| ((grad.at(1, i, j) + grad.at(2, i, j)) * half).abs();
    for t in 0..n {
        for wall in [0, n - 1] {
            // x = 0, pi: normal component u1
            normal = normal.max(value.at(0, wall, t).abs());
            shear = shear.max(d12(wall, t));
            // y = 0, pi: normal component u2
            normal = normal.max(value.at(1, t, wall).abs());
            shear = shear.max(d12(t, wall));
        }
    }
    Ok(BoundaryResidual { normal, shear })
}

/// Assembles `G[i][j] = d_j u_i` from the two partial-derivative fields.
pub(crate) fn jacobian_from_partials<T: Real>(dx: &GridField<T>, dy: &GridField<T>) -> GridField<T> {
    let n = dx.n();
    let mut data = Vec::with_capacity(4 * n * n);
    data.extend_from_slice(dx.component(0));
    data.extend_from_slice(dy.component(0));
    data.extend_from_slice(dx.component(1));
    data.extend_from_slice(dy.component(1));
    GridField::from_data(Rank::Tensor, n, data).expect("partials are finite")
}
