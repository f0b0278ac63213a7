//! Grid-sampled fields, pointwise tensor algebra, quadrature inner products
//! and the norms every energy functional is built from.
//!
//! Tensors are stored row-major as `[T11, T12, T21, T22]`. A gradient field
//! holds the Jacobian `G[i][j] = d_j u_i`, so `(phi . grad) z = G_z phi`.
//! Tensor contractions use the Frobenius product.

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, Derivative, SpectralState};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tensor rank of a sampled field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    Scalar,
    Vector,
    Tensor,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 2,
            Rank::Tensor => 4,
        }
    }
}

/// Uniform tensor-product grid on `[0, pi]^2` including the walls, with
/// composite trapezoidal weights per axis.
///
/// The rule integrates `cos(j x)` exactly for `0 <= j < 2 (n - 1)`, which
/// covers every product of retained modes below the resolution bound.
#[derive(Debug, Clone)]
pub struct Grid<T> {
    n: usize,
    nodes: Vec<T>,
    weights_1d: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Resolution {
                grid_n: n,
                required: 2,
            });
        }
        let h = T::PI() / T::from_usize_lossy(n - 1);
        let nodes: Vec<T> = (0..n).map(|i| h * T::from_usize_lossy(i)).collect();
        let half = T::lit(0.5);
        let weights_1d: Vec<T> = (0..n)
            .map(|i| if i == 0 || i == n - 1 { h * half } else { h })
            .collect();
        let mut weights = Vec::with_capacity(n * n);
        for wi in &weights_1d {
            for wj in &weights_1d {
                weights.push(*wi * *wj);
            }
        }
        Ok(Grid {
            n,
            nodes,
            weights_1d,
            weights,
        })
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights_1d(&self) -> &[T] {
        &self.weights_1d
    }

    /// Flattened 2D weights, point index `i * n + j` (`i` along x).
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Quadrature of a pointwise scalar sequence.
    pub fn integrate(&self, values: impl IntoIterator<Item = T>) -> T {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| *w * v)
            .sum()
    }
}

/// Scalar, vector or 2-tensor field sampled on an `n x n` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T> {
    rank: Rank,
    n: usize,
    data: Vec<T>,
}

impl<T: Real> GridField<T> {
    pub fn zeros(rank: Rank, n: usize) -> Self {
        GridField {
            rank,
            n,
            data: vec![T::zero(); rank.components() * n * n],
        }
    }

    /// Builds a field from component-major data.
    pub fn from_data(rank: Rank, n: usize, data: Vec<T>) -> Result<Self> {
        let expected = rank.components() * n * n;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{expected} samples"),
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("field samples must be finite".into()));
        }
        Ok(GridField { rank, n, data })
    }

    /// Samples `f(x, y)` at every grid node.
    pub fn from_fn<const C: usize>(
        grid: &Grid<T>,
        rank: Rank,
        mut f: impl FnMut(T, T) -> [T; C],
    ) -> Self {
        assert_eq!(rank.components(), C, "closure arity must match rank");
        let n = grid.n();
        let np = n * n;
        let mut field = GridField::zeros(rank, n);
        for (i, x) in grid.nodes().iter().enumerate() {
            for (j, y) in grid.nodes().iter().enumerate() {
                let v = f(*x, *y);
                for (c, vc) in v.iter().enumerate() {
                    field.data[c * np + i * n + j] = *vc;
                }
            }
        }
        field
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn component(&self, c: usize) -> &[T] {
        let np = self.points();
        &self.data[c * np..(c + 1) * np]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [T] {
        let np = self.points();
        &mut self.data[c * np..(c + 1) * np]
    }

    /// Value of component `c` at node `(i, j)`.
    pub fn at(&self, c: usize, i: usize, j: usize) -> T {
        self.data[c * self.points() + i * self.n + j]
    }

    pub fn check_compatible(&self, other: &GridField<T>) -> Result<()> {
        if self.rank != other.rank || self.n != other.n {
            return Err(Error::shape(
                format!("{:?} field on {}^2 grid", self.rank, self.n),
                format!("{:?} field on {}^2 grid", other.rank, other.n),
            ));
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &Grid<T>) -> Result<()> {
        if self.n != grid.n() {
            return Err(Error::shape(
                format!("{}^2 grid", grid.n()),
                format!("{}^2 grid", self.n),
            ));
        }
        Ok(())
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: T, other: &GridField<T>) -> Result<()> {
        self.check_compatible(other)?;
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * *o;
        }
        Ok(())
    }

    pub fn scaled(&self, a: T) -> GridField<T> {
        GridField {
            rank: self.rank,
            n: self.n,
            data: self.data.iter().map(|v| *v * a).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Pointwise squared magnitude (Euclidean for vectors, Frobenius for tensors).
    pub fn magnitude_sq(&self) -> GridField<T> {
        let np = self.points();
        let mut out = GridField::zeros(Rank::Scalar, self.n);
        for c in 0..self.rank.components() {
            let comp = &self.data[c * np..(c + 1) * np];
            for (o, v) in out.data.iter_mut().zip(comp) {
                *o += *v * *v;
            }
        }
        out
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar_field(&self, s: &GridField<T>) -> Result<GridField<T>> {
        if s.rank != Rank::Scalar || s.n != self.n {
            return Err(Error::shape(
                format!("scalar field on {}^2 grid", self.n),
                format!("{:?} field on {}^2 grid", s.rank, s.n),
            ));
        }
        let np = self.points();
        let mut out = self.clone();
        for c in 0..self.rank.components() {
            for (o, w) in out.data[c * np..(c + 1) * np].iter_mut().zip(&s.data) {
                *o *= *w;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Result<GridField<T>> {
        self.expect_rank(Rank::Tensor)?;
        let np = self.points();
        let mut out = self.clone();
        out.data[np..2 * np].copy_from_slice(self.component(2));
        out.data[2 * np..3 * np].copy_from_slice(self.component(1));
        Ok(out)
    }

    fn expect_rank(&self, rank: Rank) -> Result<()> {
        if self.rank != rank {
            return Err(Error::shape(format!("{rank:?} field"), format!("{:?} field", self.rank)));
        }
        Ok(())
    }
}

/// `A(y) = grad y + grad y^T` from a sampled Jacobian.
pub fn strain_tensor<T: Real>(grad: &GridField<T>) -> Result<GridField<T>> {
    grad.expect_rank(Rank::Tensor)?;
    let mut a = grad.clone();
    a.add_scaled(T::one(), &grad.transpose()?)?;
    Ok(a)
}

/// Pointwise matrix product `A B` of two tensor fields.
pub fn tensor_product<T: Real>(a: &GridField<T>, b: &GridField<T>) -> Result<GridField<T>> {
    a.expect_rank(Rank::Tensor)?;
    a.check_compatible(b)?;
    let np = a.points();
    let mut out = GridField::zeros(Rank::Tensor, a.n);
    for p in 0..np {
        let (a11, a12, a21, a22) = (a.data[p], a.data[np + p], a.data[2 * np + p], a.data[3 * np + p]);
        let (b11, b12, b21, b22) = (b.data[p], b.data[np + p], b.data[2 * np + p], b.data[3 * np + p]);
        out.data[p] = a11 * b11 + a12 * b21;
        out.data[np + p] = a11 * b12 + a12 * b22;
        out.data[2 * np + p] = a21 * b11 + a22 * b21;
        out.data[3 * np + p] = a21 * b12 + a22 * b22;
    }
    Ok(out)
}

/// Pointwise `T v` (tensor acting on a vector).
pub fn tensor_apply<T: Real>(t: &GridField<T>, v: &GridField<T>) -> Result<GridField<T>> {
    t.expect_rank(Rank::Tensor)?;
    v.expect_rank(Rank::Vector)?;
    if t.n != v.n {
        return Err(Error::shape(format!("{}^2 grid", t.n), format!("{}^2 grid", v.n)));
    }
    let np = t.points();
    let mut out = GridField::zeros(Rank::Vector, t.n);
    for p in 0..np {
        let (v1, v2) = (v.data[p], v.data[np + p]);
        out.data[p] = t.data[p] * v1 + t.data[np + p] * v2;
        out.data[np + p] = t.data[2 * np + p] * v1 + t.data[3 * np + p] * v2;
    }
    Ok(out)
}

/// Result of [`tensor_ops`].
#[derive(Debug, Clone)]
pub struct TensorOps<T> {
    /// Matrix square `A A`.
    pub a_sq: GridField<T>,
    /// Frobenius magnitude `|A|^2`.
    pub abs_sq: GridField<T>,
    /// `|A|^2 A`.
    pub cubic: GridField<T>,
}

/// Pointwise algebra of a symmetric tensor field.
pub fn tensor_ops<T: Real>(a: &GridField<T>) -> Result<TensorOps<T>> {
    a.expect_rank(Rank::Tensor)?;
    let asym = a
        .component(1)
        .iter()
        .zip(a.component(2))
        .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()));
    let scale = T::one().max(a.max_abs());
    if asym > T::lit(1e-10) * scale {
        return Err(Error::Asymmetric(asym.to_f64_lossy()));
    }
    let a_sq = tensor_product(a, a)?;
    let abs_sq = a.magnitude_sq();
    let cubic = a.mul_scalar_field(&abs_sq)?;
    Ok(TensorOps { a_sq, abs_sq, cubic })
}

/// L2 inner product by quadrature (Frobenius for tensors).
pub fn inner_l2<T: Real>(grid: &Grid<T>, u: &GridField<T>, v: &GridField<T>) -> Result<T> {
    u.check_compatible(v)?;
    u.check_grid(grid)?;
    Ok(dot_weighted(grid, u, v))
}

pub(crate) fn dot_weighted<T: Real>(grid: &Grid<T>, u: &GridField<T>, v: &GridField<T>) -> T {
    let np = grid.points();
    let w = grid.weights();
    let mut total = T::zero();
    for c in 0..u.rank.components() {
        let uc = &u.data[c * np..(c + 1) * np];
        let vc = &v.data[c * np..(c + 1) * np];
        let mut acc = T::zero();
        for p in 0..np {
            acc += w[p] * uc[p] * vc[p];
        }
        total += acc;
    }
    total
}

/// Quadrature of `|u|^4` (Euclidean or Frobenius magnitude).
pub fn lp4_pow4<T: Real>(grid: &Grid<T>, u: &GridField<T>) -> T {
    let m = u.magnitude_sq();
    grid.integrate(m.data.iter().map(|v| *v * *v))
}

/// Which inner product [`inner`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Product {
    L2,
    /// `(u, z)_V = (u - alpha1 Lap u, z)`.
    V,
    /// `(u, z)_W = (u, z)_V + (P ups(u), P ups(z))`.
    W,
}

/// Inner product of two spectral states, evaluated by quadrature on the
/// synthesized fields.
pub fn inner<T: Real>(
    basis: &Basis<T>,
    u: &SpectralState<T>,
    v: &SpectralState<T>,
    product: Product,
) -> Result<T> {
    let grid = basis.grid();
    let uf = basis.synthesize(u, Derivative::Value)?;
    let vf = basis.synthesize(v, Derivative::Value)?;
    let l2 = dot_weighted(grid, &uf, &vf);
    if product == Product::L2 {
        return Ok(l2);
    }
    let ups_u = basis.synthesize(&basis.upsilon(u)?, Derivative::Value)?;
    let v_prod = dot_weighted(grid, &ups_u, &vf);
    if product == Product::V {
        return Ok(v_prod);
    }
    // ups of a basis combination is divergence-free and tangent, so P ups = ups.
    let ups_v = basis.synthesize(&basis.upsilon(v)?, Derivative::Value)?;
    Ok(v_prod + dot_weighted(grid, &ups_u, &ups_v))
}

/// The V product through its strain form `(u, z) + 2 alpha1 (Du, Dz)`.
pub fn inner_v_strain<T: Real>(
    basis: &Basis<T>,
    u: &SpectralState<T>,
    v: &SpectralState<T>,
) -> Result<T> {
    let grid = basis.grid();
    let uf = basis.synthesize(u, Derivative::Value)?;
    let vf = basis.synthesize(v, Derivative::Value)?;
    let du = strain_tensor(&basis.synthesize(u, Derivative::Gradient)?)?.scaled(T::lit(0.5));
    let dv = strain_tensor(&basis.synthesize(v, Derivative::Gradient)?)?.scaled(T::lit(0.5));
    Ok(dot_weighted(grid, &uf, &vf) + T::lit(2.0) * basis.alpha1() * dot_weighted(grid, &du, &dv))
}

/// Norms of a state. All entries are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport<T> {
    /// `||y||_2^2`
    pub l2_sq: T,
    /// `||y||_4^4`
    pub l4_4: T,
    /// `||y||_V^2`
    pub v_sq: T,
    /// `||y||_W^2`
    pub w_sq: T,
    /// `||y||_{W^{1,4}} = (||y||_4^4 + ||grad y||_4^4)^{1/4}`
    pub w14: T,
    /// `||D(y)||_2^2`
    pub d_sq: T,
    /// `||grad y||_2^2`
    pub grad_sq: T,
    /// `||A(y)||_4^4`
    pub a4_4: T,
}

impl<T: Real> NormReport<T> {
    /// `||A(y)||_2^2`, exactly four times `||D(y)||_2^2`.
    pub fn a_sq(&self) -> T {
        T::lit(4.0) * self.d_sq
    }
}

pub fn norms<T: Real>(state: &SpectralState<T>, basis: &Basis<T>) -> Result<NormReport<T>> {
    basis.spec().require_quartic()?;
    let grid = basis.grid();
    let y = basis.synthesize(state, Derivative::Value)?;
    let g = basis.synthesize(state, Derivative::Gradient)?;
    let ups = basis.synthesize(&basis.upsilon(state)?, Derivative::Value)?;
    let a = strain_tensor(&g)?;

    let l2_sq = dot_weighted(grid, &y, &y);
    let l4_4 = lp4_pow4(grid, &y);
    let grad_sq = dot_weighted(grid, &g, &g);
    let grad4 = lp4_pow4(grid, &g);
    let v_sq = dot_weighted(grid, &ups, &y);
    let w_sq = v_sq + dot_weighted(grid, &ups, &ups);
    let a_sq = dot_weighted(grid, &a, &a);
    let a4_4 = lp4_pow4(grid, &a);
    Ok(NormReport {
        l2_sq,
        l4_4,
        v_sq,
        w_sq,
        w14: (l4_4 + grad4).sqrt().sqrt(),
        d_sq: a_sq * T::lit(0.25),
        grad_sq,
        a4_4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;

    fn const_tensor(n: usize, v: [f64; 4]) -> GridField<f64> {
        let grid = Grid::<f64>::new(n).unwrap();
        GridField::from_fn(&grid, Rank::Tensor, |_, _| v)
    }

    #[test]
    fn trapezoid_integrates_cosines_exactly() {
        let grid = Grid::<f64>::new(10).unwrap();
        let one = grid.integrate(std::iter::repeat(1.0));
        assert!((one - std::f64::consts::PI.powi(2)).abs() < 1e-13);
        // cos(j x) cos(m y) integrates to zero for j, m < 2 (n - 1), not both zero
        for j in 0..17 {
            for m in 1..17 {
                let f = GridField::from_fn(&grid, Rank::Scalar, |x, y| [(j as f64 * x).cos() * (m as f64 * y).cos()]);
                assert!(grid.integrate(f.data().iter().copied()).abs() < 1e-12, "j={j} m={m}");
            }
        }
    }

    #[test]
    fn tensor_ops_zero() {
        let ops = tensor_ops(&const_tensor(4, [0.0; 4])).unwrap();
        assert_eq!(ops.a_sq.max_abs(), 0.0);
        assert_eq!(ops.abs_sq.max_abs(), 0.0);
        assert_eq!(ops.cubic.max_abs(), 0.0);
    }

    #[test]
    fn tensor_ops_identity() {
        let ops = tensor_ops(&const_tensor(4, [1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(ops.a_sq, const_tensor(4, [1.0, 0.0, 0.0, 1.0]));
        assert!(ops.abs_sq.data().iter().all(|v| *v == 2.0));
        assert_eq!(ops.cubic, const_tensor(4, [2.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn tensor_ops_tracefree_diagonal_matches_naive() {
        let a = 1.7;
        let ops = tensor_ops(&const_tensor(3, [a, 0.0, 0.0, -a])).unwrap();
        // naive per-entry oracle
        let m = [[a, 0.0], [0.0, -a]];
        let mut sq = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    sq[i][j] += m[i][k] * m[k][j];
                }
            }
        }
        let frob: f64 = m.iter().flatten().map(|v| v * v).sum();
        assert!((ops.abs_sq.at(0, 1, 1) - 2.0 * a * a).abs() < 1e-14);
        assert!((frob - 2.0 * a * a).abs() < 1e-14);
        assert!((ops.a_sq.at(0, 2, 0) - sq[0][0]).abs() < 1e-14);
        assert!((ops.a_sq.at(3, 2, 0) - a * a).abs() < 1e-14);
        assert_eq!(ops.a_sq.at(1, 0, 0), 0.0);
    }

    #[test]
    fn tensor_ops_rejects_asymmetric() {
        let err = tensor_ops(&const_tensor(3, [0.0, 1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Asymmetric(_)));
    }

    #[test]
    fn inner_l2_rank_mismatch() {
        let grid = Grid::<f64>::new(4).unwrap();
        let u = GridField::zeros(Rank::Vector, 4);
        let v = GridField::zeros(Rank::Tensor, 4);
        assert!(inner_l2(&grid, &u, &v).is_err());
        let w = GridField::zeros(Rank::Vector, 5);
        assert!(inner_l2(&grid, &u, &w).is_err());
    }

    #[test]
    fn l2_positive_definite_on_grid() {
        let grid = Grid::<f64>::new(6).unwrap();
        let z = GridField::<f64>::zeros(Rank::Vector, 6);
        assert_eq!(inner_l2(&grid, &z, &z).unwrap(), 0.0);
        let u = GridField::from_fn(&grid, Rank::Vector, |x, y| [x.sin(), y]);
        assert!(inner_l2(&grid, &u, &u).unwrap() > 0.0);
    }

    #[test]
    fn norms_of_zero_and_first_mode() {
        let spec = BasisSpec::new(2, 2, 0.5, 10);
        let basis = Basis::<f64>::new(&spec).unwrap();
        let zero = SpectralState::zeros(basis.len());
        let r = norms(&zero, &basis).unwrap();
        assert_eq!(r.l2_sq, 0.0);
        assert_eq!(r.w14, 0.0);
        assert_eq!(r.a4_4, 0.0);
        let e1 = SpectralState::unit(basis.len(), 0);
        let r = norms(&e1, &basis).unwrap();
        assert!((r.v_sq - 1.0).abs() < 1e-12);
        assert!((r.w_sq - basis.functions()[0].lambda).abs() < 1e-11);
        assert!((r.a_sq() - 4.0 * r.d_sq).abs() < 1e-15);
    }

    #[test]
    fn norms_require_quartic_grid() {
        let spec = BasisSpec::new(2, 2, 0.5, 6);
        let basis = Basis::<f64>::new(&spec).unwrap();
        let e1 = SpectralState::unit(basis.len(), 0);
        assert!(matches!(norms(&e1, &basis), Err(Error::Resolution { .. })));
    }
}
