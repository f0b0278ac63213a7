//! Nonlinear operators of the third-grade equation and their tested (weak)
//! forms, as they enter the Galerkin drift.
//!
//! Divergence terms only ever appear weakly: `<div T, phi> = -(T, grad phi)`.
//! The boundary term of that integration by parts vanishes for every tensor
//! built from basis fields because the slip conditions hold mode by mode.

use serde::{Deserialize, Serialize};

use crate::basis::{jacobian_from_partials, Basis, Derivative, SpectralState};
use crate::error::Result;
use crate::fields::{dot_weighted, strain_tensor, tensor_apply, tensor_ops, tensor_product, Grid, GridField, Rank};
use crate::scalar::Real;

/// Switches that deliberately break conventions, used to self-test the
/// verification suite.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugHooks {
    /// Build the operators with `A = D(y)` instead of `A = 2 D(y)`.
    #[serde(default)]
    pub a_equals_d: bool,
}

/// Material parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params<T> {
    pub nu: T,
    pub alpha1: T,
    pub alpha2: T,
    pub beta: T,
    pub hooks: DebugHooks,
    /// Drop the convective term, leaving a linear system when `beta = 0`
    /// and `alpha1 + alpha2 = 0`.
    pub linear: bool,
}

impl<T: Real> Params<T> {
    pub fn new(nu: f64, alpha1: f64, alpha2: f64, beta: f64) -> Self {
        Params {
            nu: T::lit(nu),
            alpha1: T::lit(alpha1),
            alpha2: T::lit(alpha2),
            beta: T::lit(beta),
            hooks: DebugHooks::default(),
            linear: false,
        }
    }

    pub fn with_linear(mut self, linear: bool) -> Self {
        self.linear = linear;
        self
    }

    pub fn with_hooks(mut self, hooks: DebugHooks) -> Self {
        self.hooks = hooks;
        self
    }

    /// Rivlin-Ericksen tensor used by the operators (`2 D(y)` unless hooked).
    pub fn strain(&self, grad: &GridField<T>) -> Result<GridField<T>> {
        let a = strain_tensor(grad)?;
        Ok(if self.hooks.a_equals_d { a.scaled(T::lit(0.5)) } else { a })
    }
}

/// Tested drift contributions, one entry per basis function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFormTerms<T> {
    /// `-2 nu (D Y, D e_i)`
    pub viscous: Vec<T>,
    /// `-((Y . grad) ups, e_i) - (sum_j ups^j grad Y^j, e_i)`
    pub convection: Vec<T>,
    /// `-(alpha1 + alpha2) (A^2, grad e_i)`
    pub alpha_term: Vec<T>,
    /// `-beta (|A|^2 A, grad e_i)`
    pub beta_term: Vec<T>,
    /// `(U, e_i)`
    pub forcing: Vec<T>,
}

impl<T: Real> WeakFormTerms<T> {
    pub fn total(&self) -> Vec<T> {
        (0..self.viscous.len())
            .map(|i| self.viscous[i] + self.explicit_at(i))
            .collect()
    }

    /// Everything except the viscous term.
    pub fn explicit_part(&self) -> Vec<T> {
        (0..self.viscous.len()).map(|i| self.explicit_at(i)).collect()
    }

    fn explicit_at(&self, i: usize) -> T {
        self.convection[i] + self.alpha_term[i] + self.beta_term[i] + self.forcing[i]
    }

    pub fn is_finite(&self) -> bool {
        [&self.viscous, &self.convection, &self.alpha_term, &self.beta_term, &self.forcing]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Sampled kinematic quantities of one state.
#[derive(Debug, Clone)]
pub struct Kinematics<T> {
    pub y: GridField<T>,
    pub grad: GridField<T>,
    pub ups: GridField<T>,
    pub grad_ups: GridField<T>,
    /// Operator strain `A` (respects debug hooks).
    pub a: GridField<T>,
}

impl<T: Real> Kinematics<T> {
    pub fn new(basis: &Basis<T>, params: &Params<T>, state: &SpectralState<T>) -> Result<Self> {
        let ups_state = basis.upsilon(state)?;
        let grad = basis.synthesize(state, Derivative::Gradient)?;
        Ok(Kinematics {
            y: basis.synthesize(state, Derivative::Value)?,
            a: params.strain(&grad)?,
            grad,
            ups: basis.synthesize(&ups_state, Derivative::Value)?,
            grad_ups: basis.synthesize(&ups_state, Derivative::Gradient)?,
        })
    }
}

/// `b(phi, z, y) = (phi . grad z, y)` from sampled `phi`, Jacobian of `z`, and `y`.
pub fn trilinear_b<T: Real>(
    grid: &Grid<T>,
    phi: &GridField<T>,
    grad_z: &GridField<T>,
    y: &GridField<T>,
) -> Result<T> {
    let transport = tensor_apply(grad_z, phi)?;
    transport.check_compatible(y)?;
    Ok(dot_weighted(grid, &transport, y))
}

/// [`trilinear_b`] for three spectral states.
pub fn trilinear_b_states<T: Real>(
    basis: &Basis<T>,
    phi: &SpectralState<T>,
    z: &SpectralState<T>,
    y: &SpectralState<T>,
) -> Result<T> {
    trilinear_b(
        basis.grid(),
        &basis.synthesize(phi, Derivative::Value)?,
        &basis.synthesize(z, Derivative::Gradient)?,
        &basis.synthesize(y, Derivative::Value)?,
    )
}

/// `S(y) = beta |A|^2 A`.
pub fn s_op<T: Real>(basis: &Basis<T>, params: &Params<T>, state: &SpectralState<T>) -> Result<GridField<T>> {
    let a = params.strain(&basis.synthesize(state, Derivative::Gradient)?)?;
    Ok(tensor_ops(&a)?.cubic.scaled(params.beta))
}

/// `N(y) = alpha1 (y . grad A + (grad y)^T A + A grad y) - alpha2 A^2`.
pub fn n_op<T: Real>(basis: &Basis<T>, params: &Params<T>, state: &SpectralState<T>) -> Result<GridField<T>> {
    let grad = basis.synthesize(state, Derivative::Gradient)?;
    let a = params.strain(&grad)?;
    let y = basis.synthesize(state, Derivative::Value)?;
    let yxx = basis.synthesize_partial(state, 2, 0)?;
    let yxy = basis.synthesize_partial(state, 1, 1)?;
    let yyy = basis.synthesize_partial(state, 0, 2)?;
    let a_x = params.strain(&jacobian_from_partials(&yxx, &yxy))?;
    let a_y = params.strain(&jacobian_from_partials(&yxy, &yyy))?;

    let mut advect = a_x.mul_scalar_field(&component_field(&y, 0))?;
    advect.add_scaled(T::one(), &a_y.mul_scalar_field(&component_field(&y, 1))?)?;

    let mut out = advect;
    out.add_scaled(T::one(), &tensor_product(&grad.transpose()?, &a)?)?;
    out.add_scaled(T::one(), &tensor_product(&a, &grad)?)?;
    let mut out = out.scaled(params.alpha1);
    out.add_scaled(-params.alpha2, &tensor_product(&a, &a)?)?;
    Ok(out)
}

fn component_field<T: Real>(v: &GridField<T>, c: usize) -> GridField<T> {
    GridField::from_data(Rank::Scalar, v.n(), v.component(c).to_vec()).expect("finite component")
}

/// Weak divergence pairing `<div T, phi> = -(T, grad phi)`.
pub fn weak_pairing<T: Real>(basis: &Basis<T>, tensor: &GridField<T>, phi: &SpectralState<T>) -> Result<T> {
    let gphi = basis.synthesize(phi, Derivative::Gradient)?;
    tensor.check_compatible(&gphi)?;
    Ok(-dot_weighted(basis.grid(), tensor, &gphi))
}

/// `(v, e_i)` for every basis function.
pub fn test_vector<T: Real>(basis: &Basis<T>, v: &GridField<T>) -> Vec<T> {
    (0..basis.len())
        .map(|i| dot_weighted(basis.grid(), v, basis.mode_value(i)))
        .collect()
}

/// `(T, grad e_i)` for every basis function.
pub fn test_tensor<T: Real>(basis: &Basis<T>, t: &GridField<T>) -> Vec<T> {
    (0..basis.len())
        .map(|i| dot_weighted(basis.grid(), t, basis.mode_grad(i)))
        .collect()
}

/// The convective vector `(Y . grad) ups + sum_j ups^j grad Y^j`, the second
/// term read componentwise as `sum_j ups^j d_i Y^j`.
pub fn convective_field<T: Real>(kin: &Kinematics<T>) -> Result<GridField<T>> {
    let mut c = tensor_apply(&kin.grad_ups, &kin.y)?;
    c.add_scaled(T::one(), &tensor_apply(&kin.grad.transpose()?, &kin.ups)?)?;
    Ok(c)
}

/// Assembles `F_i = (f(Y_n), e_i)` term by term.
///
/// Non-finite entries are returned as-is; callers treat them as blow-up.
pub fn galerkin_drift<T: Real>(
    basis: &Basis<T>,
    params: &Params<T>,
    state: &SpectralState<T>,
    forcing: Option<&GridField<T>>,
) -> Result<WeakFormTerms<T>> {
    basis.spec().require_quartic()?;
    let kin = Kinematics::new(basis, params, state)?;
    galerkin_drift_from(basis, params, &kin, forcing)
}

pub fn galerkin_drift_from<T: Real>(
    basis: &Basis<T>,
    params: &Params<T>,
    kin: &Kinematics<T>,
    forcing: Option<&GridField<T>>,
) -> Result<WeakFormTerms<T>> {
    let n = basis.len();
    let d = strain_tensor(&kin.grad)?.scaled(T::lit(0.5));
    let viscous: Vec<T> = (0..n)
        .map(|i| {
            let de = strain_tensor(basis.mode_grad(i)).expect("tensor").scaled(T::lit(0.5));
            -T::lit(2.0) * params.nu * dot_weighted(basis.grid(), &d, &de)
        })
        .collect();

    let convection: Vec<T> = if params.linear {
        vec![T::zero(); n]
    } else {
        test_vector(basis, &convective_field(kin)?).into_iter().map(|v| -v).collect()
    };

    let ops = tensor_ops(&kin.a)?;
    let alpha_sum = params.alpha1 + params.alpha2;
    let alpha_term = if alpha_sum == T::zero() {
        vec![T::zero(); n]
    } else {
        test_tensor(basis, &ops.a_sq).into_iter().map(|v| -alpha_sum * v).collect()
    };
    let beta_term = if params.beta == T::zero() {
        vec![T::zero(); n]
    } else {
        test_tensor(basis, &ops.cubic).into_iter().map(|v| -params.beta * v).collect()
    };
    let forcing = match forcing {
        Some(u) => {
            u.check_compatible(&kin.y)?;
            test_vector(basis, u)
        }
        None => vec![T::zero(); n],
    };
    Ok(WeakFormTerms {
        viscous,
        convection,
        alpha_term,
        beta_term,
        forcing,
    })
}

/// Analytic viscous rate of mode `i`: `nu mu_i / (1 + alpha1 mu_i)`.
pub fn viscous_rate<T: Real>(basis: &Basis<T>, params: &Params<T>, i: usize) -> T {
    let f = basis.functions()[i];
    params.nu * f.mu / f.upsilon_factor
}
