//! Diffusion coefficients, Wiener increments and empirical checks of the
//! growth and Lipschitz hypotheses on the noise.
//!
//! Increments are keyed by `(seed, refinement level, step, channel)` through
//! a ChaCha stream, so any increment can be regenerated in isolation and
//! ensembles need no sequence coordination between threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec, Derivative, SpectralState};
use crate::error::{Error, Result};
use crate::fields::{dot_weighted, norms, GridField, Rank};
use crate::scalar::Real;

/// Spatial profile of one noise channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelShape {
    /// Divergence-free vector field `amp / sqrt(mu) (l sin kx cos ly, -k cos kx sin ly)`.
    Mode { k: usize, l: usize, amplitude: f64 },
    /// Pure gradient `amp grad(cos kx cos ly)`; annihilated by the projection.
    Gradient { k: usize, l: usize, amplitude: f64 },
    /// Constant scalar mask.
    Constant { value: f64 },
    /// Scalar mask `amp cos(a x) cos(b y)`.
    Cosine { a: usize, b: usize, amplitude: f64 },
}

impl ChannelShape {
    fn is_vector(&self) -> bool {
        matches!(self, ChannelShape::Mode { .. } | ChannelShape::Gradient { .. })
    }

    fn max_wavenumber(&self) -> usize {
        match *self {
            ChannelShape::Mode { k, l, .. } | ChannelShape::Gradient { k, l, .. } => k.max(l),
            ChannelShape::Constant { .. } => 0,
            ChannelShape::Cosine { a, b, .. } => a.max(b),
        }
    }

    /// Samples the shape; vector shapes give rank-2 fields, masks rank-1.
    pub fn sample<T: Real>(&self, basis: &Basis<T>) -> GridField<T> {
        let grid = basis.grid();
        match *self {
            ChannelShape::Mode { k, l, amplitude } => {
                let (kf, lf) = (k as f64, l as f64);
                let s = T::lit(amplitude / (kf * kf + lf * lf).sqrt());
                let (k, l) = (T::lit(kf), T::lit(lf));
                GridField::from_fn(grid, Rank::Vector, |x, y| {
                    [s * l * (k * x).sin() * (l * y).cos(), -s * k * (k * x).cos() * (l * y).sin()]
                })
            }
            ChannelShape::Gradient { k, l, amplitude } => {
                let s = T::lit(amplitude);
                let (k, l) = (T::lit(k as f64), T::lit(l as f64));
                GridField::from_fn(grid, Rank::Vector, |x, y| {
                    [-s * k * (k * x).sin() * (l * y).cos(), -s * l * (k * x).cos() * (l * y).sin()]
                })
            }
            ChannelShape::Constant { value } => {
                let v = T::lit(value);
                GridField::from_fn(grid, Rank::Scalar, |_, _| [v])
            }
            ChannelShape::Cosine { a, b, amplitude } => {
                let s = T::lit(amplitude);
                let (a, b) = (T::lit(a as f64), T::lit(b as f64));
                GridField::from_fn(grid, Rank::Scalar, |x, y| [s * (a * x).cos() * (b * y).cos()])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `sigma_k = g_k`, independent of the state.
    Additive,
    /// `sigma_k = rho min(1, R / ||Y||_V) Y s_k`.
    TruncatedMultiplicative,
    /// `sigma_k = rho Y s_k`; grows quadratically, outside the admissible class.
    LinearUnsafe,
}

/// Declarative noise description, as found in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default = "one")]
    pub rho: f64,
    /// Truncation radius `R` in the V norm.
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default)]
    pub channels: Vec<ChannelShape>,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::Additive,
            rho: 1.0,
            radius: 1.0,
            channels: Vec::new(),
        }
    }
}

impl NoiseSpec {
    pub fn deterministic() -> Self {
        Self::default()
    }

    /// Channel count `m`.
    pub fn m(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self, basis: &BasisSpec, allow_unsafe: bool) -> Result<()> {
        if self.kind == NoiseKind::LinearUnsafe && !allow_unsafe {
            return Err(Error::Noise(
                "linear_unsafe noise grows with exponent 2 in W^{1,4}, outside the admissible \
                 class (exponent < 2); enable allow_unsafe_noise to run it anyway"
                    .into(),
            ));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Noise(format!("truncation radius must be > 0 (got {})", self.radius)));
        }
        if !self.rho.is_finite() {
            return Err(Error::Noise("gain rho must be finite".into()));
        }
        // trapezoid exactness: every tested product must stay below 2 (n - 1)
        let limit = 2 * (basis.grid_n.saturating_sub(1));
        let kmax = basis.max_wavenumber();
        for (idx, ch) in self.channels.iter().enumerate() {
            let vector = ch.is_vector();
            match (self.kind, vector) {
                (NoiseKind::Additive, false) => {
                    return Err(Error::Noise(format!("channel {idx}: additive noise needs a vector shape")))
                }
                (NoiseKind::TruncatedMultiplicative | NoiseKind::LinearUnsafe, true) => {
                    return Err(Error::Noise(format!(
                        "channel {idx}: multiplicative noise needs a scalar mask"
                    )))
                }
                _ => {}
            }
            if let ChannelShape::Mode { k, l, .. } | ChannelShape::Gradient { k, l, .. } = *ch {
                if k == 0 && l == 0 || matches!(ch, ChannelShape::Mode { .. }) && (k == 0 || l == 0) {
                    return Err(Error::Noise(format!("channel {idx}: degenerate wavenumbers ({k}, {l})")));
                }
            }
            let reach = if vector {
                ch.max_wavenumber() + kmax
            } else {
                // ||Y s||^2 needs twice the mask and twice the state wavenumber
                2 * (ch.max_wavenumber() + kmax)
            };
            if reach >= limit {
                return Err(Error::Resolution {
                    grid_n: basis.grid_n,
                    required: reach / 2 + 2,
                });
            }
        }
        Ok(())
    }
}

/// Noise model bound to a basis.
#[derive(Debug, Clone)]
pub struct NoiseModel<T> {
    spec: NoiseSpec,
    shapes: Vec<GridField<T>>,
    /// `(g_k, e_i)` for additive noise, computed once.
    additive_lift: Option<Vec<Vec<T>>>,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(spec: &NoiseSpec, basis: &Basis<T>, allow_unsafe: bool) -> Result<Self> {
        spec.validate(basis.spec(), allow_unsafe)?;
        let shapes: Vec<GridField<T>> = spec.channels.iter().map(|c| c.sample(basis)).collect();
        let additive_lift = match spec.kind {
            NoiseKind::Additive => Some(
                shapes
                    .iter()
                    .map(|g| basis.modified_stokes(g).map(|s| s.coeffs))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(NoiseModel {
            spec: spec.clone(),
            shapes,
            additive_lift,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn kind(&self) -> NoiseKind {
        self.spec.kind
    }

    pub fn m(&self) -> usize {
        self.shapes.len()
    }

    fn gain(&self, state: &SpectralState<T>) -> T {
        let rho = T::lit(self.spec.rho);
        match self.spec.kind {
            NoiseKind::TruncatedMultiplicative => {
                let norm = state.v_norm_sq().sqrt();
                let r = T::lit(self.spec.radius);
                if norm > r {
                    rho * r / norm
                } else {
                    rho
                }
            }
            _ => rho,
        }
    }

    /// `sigma(t, Y) = (sigma^1, ..., sigma^m)` sampled on the grid.
    pub fn sigma_eval(&self, basis: &Basis<T>, _t: T, state: &SpectralState<T>) -> Result<Vec<GridField<T>>> {
        match self.spec.kind {
            NoiseKind::Additive => Ok(self.shapes.clone()),
            _ => {
                let y = basis.synthesize(state, Derivative::Value)?.scaled(self.gain(state));
                self.shapes.iter().map(|s| y.mul_scalar_field(s)).collect()
            }
        }
    }

    /// Modified-Stokes lift of each channel: `g[k][i] = (sigma^k, e_i)`.
    pub fn lift(&self, basis: &Basis<T>, t: T, state: &SpectralState<T>) -> Result<Vec<Vec<T>>> {
        if let Some(cached) = &self.additive_lift {
            return Ok(cached.clone());
        }
        self.sigma_eval(basis, t, state)?
            .iter()
            .map(|s| basis.modified_stokes(s).map(|c| c.coeffs))
            .collect()
    }

    /// `||sigma(t, Y)||_2^2 = sum_k ||sigma^k||_2^2`.
    pub fn sigma_l2_sq(&self, basis: &Basis<T>, t: T, state: &SpectralState<T>) -> Result<T> {
        Ok(self
            .sigma_eval(basis, t, state)?
            .iter()
            .map(|s| dot_weighted(basis.grid(), s, s))
            .sum())
    }

    /// Largest `|s_k|` over the grid for masks (zero for additive models).
    pub fn mask_sup(&self) -> T {
        match self.spec.kind {
            NoiseKind::Additive => T::zero(),
            _ => self.shapes.iter().fold(T::zero(), |m, s| m.max(s.max_abs())),
        }
    }
}

/// Empirical growth and Lipschitz constants of a noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// Fitted `L` in `||sigma||^2 <= L (1 + ||y||_{W^{1,4}}^gamma)`.
    pub l_hat: f64,
    /// Fitted growth exponent.
    pub gamma_hat: f64,
    /// Fitted `K` in `||sigma(y) - sigma(z)||^2 <= K ||y - z||_V^2`.
    pub k_hat: f64,
    /// Set when `gamma_hat` reaches the fit threshold 1.9 or `k_hat` is not finite.
    pub violation: bool,
}

/// Growth exponents at or above this value count as violating `gamma < 2`.
pub const GAMMA_VIOLATION_THRESHOLD: f64 = 1.9;

/// Random V-unit direction with coefficients `N(0,1) / lambda_j`.
pub fn random_direction<T: Real>(basis: &Basis<T>, rng: &mut ChaCha8Rng) -> SpectralState<T> {
    let mut coeffs: Vec<T> = basis
        .functions()
        .iter()
        .map(|f| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z) / f.lambda
        })
        .collect();
    let norm = coeffs.iter().map(|c| *c * *c).sum::<T>().sqrt();
    if norm > T::zero() {
        coeffs.iter_mut().for_each(|c| *c /= norm);
    }
    SpectralState {
        coeffs,
        time: T::zero(),
    }
}

/// Fits `L`, `gamma` and `K` over random states of widely varying size.
pub fn check_hypotheses<T: Real>(
    model: &NoiseModel<T>,
    basis: &Basis<T>,
    sample_count: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if sample_count < 10 {
        return Err(Error::Argument(format!("sample_count must be >= 10 (got {sample_count})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = T::zero();
    let base = model.spec.radius.max(1.0);
    let sig = |s: &SpectralState<T>| model.sigma_l2_sq(basis, t, s).map(|v| v.to_f64_lossy());
    let w14 = |s: &SpectralState<T>| norms(s, basis).map(|r| r.w14.to_f64_lossy());

    let mut samples = Vec::new();
    let mut gamma_hat: f64 = 0.0;
    for _ in 0..sample_count {
        let d = random_direction(basis, &mut rng);
        // growth regime: two large scales a decade apart
        let lo = d.scaled(T::lit(10.0 * base));
        let hi = d.scaled(T::lit(100.0 * base));
        let (s_lo, s_hi) = (sig(&lo)?, sig(&hi)?);
        let (x_lo, x_hi) = (w14(&lo)?, w14(&hi)?);
        if s_lo > 0.0 && s_hi > 0.0 {
            gamma_hat = gamma_hat.max((s_hi / s_lo).ln() / (x_hi / x_lo).ln());
        }
        samples.push((x_lo, s_lo));
        samples.push((x_hi, s_hi));
        for scale in [0.1, 1.0] {
            let y = d.scaled(T::lit(scale * base));
            samples.push((w14(&y)?, sig(&y)?));
        }
    }
    let gamma_hat = gamma_hat.max(0.0);
    let l_hat = samples
        .iter()
        .map(|(x, s)| s / (1.0 + x.powf(gamma_hat)))
        .fold(0.0, f64::max);

    let radius_draw = Uniform::new(0.0, 3.0 * base).expect("valid range");
    let gap_draw = Uniform::new(1e-3, base).expect("valid range");
    let mut k_hat: f64 = 0.0;
    for _ in 0..sample_count {
        let y = random_direction(basis, &mut rng).scaled(T::lit(radius_draw.sample(&mut rng)));
        let gap = gap_draw.sample(&mut rng);
        let z = y.combine(T::one(), &random_direction(basis, &mut rng), T::lit(gap));
        let sy = model.sigma_eval(basis, t, &y)?;
        let sz = model.sigma_eval(basis, t, &z)?;
        let num: f64 = sy
            .iter()
            .zip(&sz)
            .map(|(a, b)| {
                let mut d = a.clone();
                d.add_scaled(-T::one(), b).expect("same shape");
                dot_weighted(basis.grid(), &d, &d).to_f64_lossy()
            })
            .sum();
        let den = y.combine(T::one(), &z, -T::one()).v_norm_sq().to_f64_lossy();
        if den > 0.0 {
            k_hat = k_hat.max(num / den);
        }
    }
    Ok(HypothesisReport {
        l_hat,
        gamma_hat,
        k_hat,
        violation: gamma_hat >= GAMMA_VIOLATION_THRESHOLD || !k_hat.is_finite(),
    })
}

fn stream_key(seed: u64, level: u64, index: u64, channel: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    for (slot, word) in [seed, level, index, channel].into_iter().enumerate() {
        key[slot * 8..(slot + 1) * 8].copy_from_slice(&word.to_le_bytes());
    }
    key
}

/// Standard normal keyed by `(seed, level, index, channel)`.
pub fn keyed_normal(seed: u64, level: u64, index: u64, channel: u64) -> f64 {
    let mut rng = ChaCha8Rng::from_seed(stream_key(seed, level, index, channel));
    StandardNormal.sample(&mut rng)
}

/// Child seed number `index` of `master`, independent of every increment stream.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    ChaCha8Rng::from_seed(stream_key(master, u64::MAX, index, u64::MAX)).next_u64()
}

/// Base-level increments `N(0, dt)` for one step of an `m`-channel path.
pub fn wiener_increments(seed: u64, step: u64, m: usize, dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "dt must be positive");
    let sd = dt.sqrt();
    (0..m).map(|ch| sd * keyed_normal(seed, 0, step, ch as u64)).collect()
}

/// An `m`-channel Brownian path on a dyadic hierarchy of step sizes.
///
/// Level 0 uses `base_dt`; level `L` uses `base_dt / 2^L` and is obtained
/// from level `L - 1` by Brownian-bridge splitting, so every refinement sums
/// back to the coarser increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerPath {
    pub seed: u64,
    pub base_dt: f64,
    pub m: usize,
}

impl WienerPath {
    pub fn new(seed: u64, base_dt: f64, m: usize) -> Self {
        assert!(base_dt > 0.0, "dt must be positive");
        WienerPath { seed, base_dt, m }
    }

    pub fn dt(&self, level: u32) -> f64 {
        self.base_dt / f64::powi(2.0, level as i32)
    }

    pub fn increment(&self, level: u32, step: u64, channel: usize) -> f64 {
        if level == 0 {
            return self.base_dt.sqrt() * keyed_normal(self.seed, 0, step, channel as u64);
        }
        let parent = self.increment(level - 1, step / 2, channel);
        let parent_dt = self.dt(level - 1);
        let z = keyed_normal(self.seed, level as u64, step / 2, channel as u64);
        let first = 0.5 * parent + 0.5 * parent_dt.sqrt() * z;
        if step.is_multiple_of(2) {
            first
        } else {
            parent - first
        }
    }

    pub fn increments(&self, level: u32, step: u64) -> Vec<f64> {
        (0..self.m).map(|ch| self.increment(level, step, ch)).collect()
    }
}
