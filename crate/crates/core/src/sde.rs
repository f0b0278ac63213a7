//! Time stepping of the Galerkin system, stopping-time monitoring and the
//! per-step energy ledger.

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec, SpectralState};
use crate::error::{Error, Result};
use crate::fields::{dot_weighted, norms, GridField, NormReport};
use crate::noise::{derive_seed, keyed_normal, ChannelShape, NoiseModel, NoiseSpec, WienerPath};
use crate::operators::{galerkin_drift, viscous_rate, DebugHooks, Params};
use crate::scalar::Real;

/// Seed stream reserved for random initial conditions.
const IC_STREAM: u64 = 1 << 62;

/// Relative slack accepted on `alpha1 + alpha2 = 0` in linear test mode.
const LINEAR_MODE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    SemiImplicit,
}

/// Truncation and quadrature of a run. `grid_n` defaults to the quartic rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub kmax: usize,
    pub lmax: usize,
    #[serde(default)]
    pub grid_n: Option<usize>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            kmax: 4,
            lmax: 4,
            grid_n: Some(34),
        }
    }
}

impl BasisConfig {
    pub fn spec(&self, alpha1: f64) -> BasisSpec {
        match self.grid_n {
            Some(n) => BasisSpec::new(self.kmax, self.lmax, alpha1, n),
            None => BasisSpec::with_quartic_grid(self.kmax, self.lmax, alpha1),
        }
    }
}

/// Named initial-condition families. Every family is defined per mode
/// `(k, l)`, so the same IC restricts consistently to any truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    /// `amplitude` on mode `(k, l)` only.
    SingleMode { k: usize, l: usize, amplitude: f64 },
    /// Coefficients `N(0,1) / lambda` on `max(k, l) <= band`, rescaled to V norm `v_norm`.
    RandomBand { band: usize, v_norm: f64 },
    /// `amplitude (2 / mu)^2` on every mode with `k` and `l` odd.
    TaylorGreenLike { amplitude: f64 },
    /// Explicit `[k, l, value]` triples; modes outside the basis are dropped.
    Coefficients { modes: Vec<(usize, usize, f64)> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::SingleMode { k: 1, l: 1, amplitude: 1.0 }
    }
}

impl InitialCondition {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("initial condition: {what}")));
        match self {
            InitialCondition::SingleMode { k, l, amplitude } => {
                if *k == 0 || *l == 0 {
                    return bad("mode indices must be >= 1");
                }
                if !amplitude.is_finite() {
                    return bad("amplitude must be finite");
                }
            }
            InitialCondition::RandomBand { band, v_norm } => {
                if *band == 0 || !(v_norm.is_finite() && *v_norm >= 0.0) {
                    return bad("random_band needs band >= 1 and a finite v_norm >= 0");
                }
            }
            InitialCondition::TaylorGreenLike { amplitude } => {
                if !amplitude.is_finite() {
                    return bad("amplitude must be finite");
                }
            }
            InitialCondition::Coefficients { modes } => {
                if modes.iter().any(|(k, l, v)| *k == 0 || *l == 0 || !v.is_finite()) {
                    return bad("coefficients need k, l >= 1 and finite values");
                }
            }
            InitialCondition::Zero => {}
        }
        Ok(())
    }

    /// Coefficients in `basis`, with `seed` keying random families.
    pub fn realize<T: Real>(&self, basis: &Basis<T>, seed: u64) -> SpectralState<T> {
        let mut state = SpectralState::zeros(basis.len());
        let alpha1 = basis.spec().alpha1;
        match self {
            InitialCondition::Zero => {}
            InitialCondition::SingleMode { k, l, amplitude } => {
                if let Some(i) = basis.index_of(crate::basis::ModeIndex::new(*k, *l)) {
                    state.coeffs[i] = T::lit(*amplitude);
                }
            }
            InitialCondition::RandomBand { band, v_norm } => {
                let stream = derive_seed(seed, IC_STREAM);
                let draw = |k: usize, l: usize| {
                    let lambda = 2.0 + alpha1 * (k * k + l * l) as f64;
                    keyed_normal(stream, 0, k as u64, l as u64) / lambda
                };
                let total: f64 = (1..=*band)
                    .flat_map(|k| (1..=*band).map(move |l| (k, l)))
                    .map(|(k, l)| draw(k, l).powi(2))
                    .sum();
                let scale = if total > 0.0 { v_norm / total.sqrt() } else { 0.0 };
                for (i, f) in basis.functions().iter().enumerate() {
                    let (k, l) = (f.mode.k, f.mode.l);
                    if k <= *band && l <= *band {
                        state.coeffs[i] = T::lit(scale * draw(k, l));
                    }
                }
            }
            InitialCondition::TaylorGreenLike { amplitude } => {
                for (i, f) in basis.functions().iter().enumerate() {
                    if f.mode.k % 2 == 1 && f.mode.l % 2 == 1 {
                        let mu = f.mode.mu() as f64;
                        state.coeffs[i] = T::lit(amplitude * (2.0 / mu).powi(2));
                    }
                }
            }
            InitialCondition::Coefficients { modes } => {
                for (k, l, v) in modes {
                    if let Some(i) = basis.index_of(crate::basis::ModeIndex::new(*k, *l)) {
                        state.coeffs[i] = T::lit(*v);
                    }
                }
            }
        }
        state
    }
}

fn default_horizon() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    1e-3
}
fn default_p() -> u32 {
    2
}
fn default_lambda() -> f64 {
    1.0
}

/// Complete description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nu: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// Final time `T`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Body force `U`; must be a vector shape.
    #[serde(default)]
    pub forcing: Option<ChannelShape>,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub seed: u64,
    /// Stop once `||Y||_W >= m_stop`.
    #[serde(default)]
    pub m_stop: Option<f64>,
    #[serde(default = "default_p")]
    pub p_moment: u32,
    /// `lambda` in the exponential-moment constant `lambda beta / (16 K_*^4)`.
    #[serde(default = "default_lambda")]
    pub exp_lambda: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub linear_test_mode: bool,
    #[serde(default)]
    pub allow_unsafe_noise: bool,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub hooks: DebugHooks,
}

impl SimConfig {
    /// Parameters with every optional field at its default.
    pub fn new(nu: f64, alpha1: f64, alpha2: f64, beta: f64) -> Self {
        SimConfig {
            nu,
            alpha1,
            alpha2,
            beta,
            horizon: default_horizon(),
            dt: default_dt(),
            basis: BasisConfig::default(),
            noise: NoiseSpec::default(),
            forcing: None,
            initial: InitialCondition::default(),
            seed: 0,
            m_stop: None,
            p_moment: default_p(),
            exp_lambda: default_lambda(),
            scheme: Scheme::default(),
            linear_test_mode: false,
            allow_unsafe_noise: false,
            snapshot_times: Vec::new(),
            hooks: DebugHooks::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn basis_spec(&self) -> BasisSpec {
        self.basis.spec(self.alpha1)
    }

    pub fn params<T: Real>(&self) -> Params<T> {
        Params::new(self.nu, self.alpha1, self.alpha2, self.beta)
            .with_hooks(self.hooks)
            .with_linear(self.linear_test_mode)
    }

    /// Number of steps of size `dt` covering the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    /// Checks every constraint; returns advisory warnings on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::constraint(format!("{name} must be finite"), format!("{name} = {v}")))
            }
        };
        for (name, v) in [("nu", self.nu), ("alpha1", self.alpha1), ("alpha2", self.alpha2), ("beta", self.beta)] {
            finite(name, v)?;
        }
        if self.nu < 0.0 {
            return Err(Error::constraint("viscosity nu >= 0", format!("nu = {}", self.nu)));
        }
        if self.alpha1 < 0.0 {
            return Err(Error::constraint("alpha1 >= 0", format!("alpha1 = {}", self.alpha1)));
        }
        if self.beta < 0.0 {
            return Err(Error::constraint("beta >= 0", format!("beta = {}", self.beta)));
        }
        let alpha_sum = self.alpha1 + self.alpha2;
        if self.beta > 0.0 {
            let bound = (24.0 * self.nu * self.beta).sqrt();
            if alpha_sum.abs() > bound {
                return Err(Error::constraint(
                    "thermodynamic compatibility |alpha1 + alpha2| <= sqrt(24 nu beta)",
                    format!(
                        "|alpha1 + alpha2| = {} exceeds sqrt(24 * {} * {}) = {bound}",
                        alpha_sum.abs(),
                        self.nu,
                        self.beta
                    ),
                ));
            }
        } else {
            let tol = LINEAR_MODE_SLACK * self.alpha1.abs().max(self.alpha2.abs()).max(1.0);
            if !self.linear_test_mode || alpha_sum.abs() > tol {
                return Err(Error::constraint(
                    "thermodynamic compatibility: beta = 0 requires linear test mode and alpha1 + alpha2 = 0",
                    format!(
                        "beta = 0, alpha1 + alpha2 = {alpha_sum}, linear_test_mode = {}",
                        self.linear_test_mode
                    ),
                ));
            }
        }
        finite("dt", self.dt)?;
        finite("horizon", self.horizon)?;
        if self.dt <= 0.0 {
            return Err(Error::constraint("time step dt > 0", format!("dt = {}", self.dt)));
        }
        if self.horizon < self.dt {
            return Err(Error::constraint(
                "horizon T >= dt",
                format!("T = {}, dt = {}", self.horizon, self.dt),
            ));
        }
        if let Some(m) = self.m_stop {
            if m.is_nan() || m <= 0.0 {
                return Err(Error::constraint("stopping threshold m_stop > 0", format!("m_stop = {m}")));
            }
        }
        if self.p_moment < 2 {
            return Err(Error::constraint("moment order p >= 2", format!("p = {}", self.p_moment)));
        }
        if !(self.exp_lambda.is_finite() && self.exp_lambda > 0.0) {
            return Err(Error::constraint("exp_lambda > 0", format!("exp_lambda = {}", self.exp_lambda)));
        }
        let spec = self.basis_spec();
        spec.validate()?;
        spec.require_quartic()?;
        self.noise.validate(&spec, self.allow_unsafe_noise)?;
        if let Some(f) = &self.forcing {
            let probe = NoiseSpec {
                channels: vec![f.clone()],
                ..NoiseSpec::default()
            };
            probe
                .validate(&spec, false)
                .map_err(|e| Error::Config(format!("forcing: {e}")))?;
        }
        self.initial.validate()?;

        let mut warnings = Vec::new();
        let mu_max = (spec.kmax * spec.kmax + spec.lmax * spec.lmax) as f64;
        let stiffness = self.dt * self.nu * mu_max / (1.0 + self.alpha1 * mu_max);
        if stiffness > 0.5 && self.scheme == Scheme::EulerMaruyama {
            warnings.push(format!(
                "dt * nu mu_max / (1 + alpha1 mu_max) = {stiffness:.3} > 0.5; explicit stepping may be unstable"
            ));
        }
        if self.noise.kind == crate::noise::NoiseKind::LinearUnsafe {
            warnings.push("linear_unsafe noise violates the growth hypothesis (gamma = 2)".into());
        }
        Ok(warnings)
    }
}

/// One ledger row; integrals use the left-point rule up to `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRow {
    pub step: usize,
    pub t: f64,
    pub v_sq: f64,
    pub w_sq: f64,
    pub d_sq: f64,
    pub a_sq: f64,
    pub a4_4: f64,
    pub w14_4: f64,
    /// `int ||DY||_2^2`
    pub int_d_sq: f64,
    /// `int ||A||_4^4`
    pub int_a4_4: f64,
    /// `int ||A||_2^2`
    pub int_a_sq: f64,
    /// `int ||Y||_{W^{1,4}}^4`
    pub int_w14_4: f64,
    /// `int (||U||_2^2 + ||Y||_2^2)`
    pub int_source: f64,
    /// Cumulative `2 sum_k (g_k . c) dW_k`.
    pub martingale: f64,
    /// Cumulative Ito correction `sum_k ||g_k||^2 dt`.
    pub ito: f64,
    /// `||Y||_V^2 + 4 nu int ||DY||^2 + (beta/2) int ||A||_4^4 - kappa int ||A||^2`.
    pub weighted_energy: f64,
    /// Energy-inequality residual of the step ending at this row.
    pub residual: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
    pub stopped: bool,
    pub tau_m: Option<f64>,
}

impl EnergyLedger {
    pub fn last(&self) -> &LedgerRow {
        self.rows.last().expect("ledger has the initial row")
    }

    pub fn sup(&self, f: impl Fn(&LedgerRow) -> f64) -> f64 {
        self.rows.iter().map(f).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult<T> {
    pub ledger: EnergyLedger,
    /// Full state after every step when requested, else empty.
    pub trajectory: Vec<SpectralState<T>>,
    pub snapshots: Vec<SpectralState<T>>,
    /// Step index whose update was non-finite.
    /// Index of the first step whose state was non-finite.
    pub blowup: Option<usize>,
    pub final_state: SpectralState<T>,
    pub wall_time: f64,
}

/// Immutable pieces of a run: basis, parameters, noise, forcing.
#[derive(Debug, Clone)]
pub struct Simulator<T> {
    config: SimConfig,
    basis: Basis<T>,
    params: Params<T>,
    noise: NoiseModel<T>,
    forcing: Option<GridField<T>>,
    forcing_l2_sq: T,
}

impl<T: Real> Simulator<T> {
    /// Validates `config` and builds its own basis.
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        Self::with_basis(config, &config.basis_spec())
    }

    /// Same physics on a different truncation (Galerkin-level experiments).
    pub fn with_basis(config: &SimConfig, spec: &BasisSpec) -> Result<Self> {
        config.validate()?;
        spec.require_quartic()?;
        let basis = Basis::new(spec)?;
        let noise = NoiseModel::new(&config.noise, &basis, config.allow_unsafe_noise)?;
        let forcing = config.forcing.as_ref().map(|f| f.sample(&basis));
        let forcing_l2_sq = forcing
            .as_ref()
            .map(|u| dot_weighted(basis.grid(), u, u))
            .unwrap_or_else(T::zero);
        Ok(Simulator {
            params: config.params(),
            config: config.clone(),
            basis,
            noise,
            forcing,
            forcing_l2_sq,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn basis(&self) -> &Basis<T> {
        &self.basis
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn noise(&self) -> &NoiseModel<T> {
        &self.noise
    }

    pub fn initial_state(&self) -> SpectralState<T> {
        self.config.initial.realize(&self.basis, self.config.seed)
    }

    /// Wiener path of path number `index` under the config's master seed.
    pub fn wiener_path(&self, index: u64) -> WienerPath {
        WienerPath::new(derive_seed(self.config.seed, index), self.config.dt, self.noise.m())
    }

    fn noise_increment(&self, g: &[Vec<T>], dw: &[f64]) -> Vec<T> {
        let mut out = vec![T::zero(); self.basis.len()];
        for (gk, w) in g.iter().zip(dw) {
            let w = T::lit(*w);
            for (o, v) in out.iter_mut().zip(gk) {
                *o += *v * w;
            }
        }
        out
    }

    fn finish(coeffs: Vec<T>, t: T, dt: T) -> Result<SpectralState<T>> {
        let next = SpectralState { coeffs, time: t + dt };
        if next.is_finite() {
            Ok(next)
        } else {
            Err(Error::BlowUp {
                step: (t / dt).round().to_f64_lossy() as usize,
                time: (t + dt).to_f64_lossy(),
            })
        }
    }

    /// `c <- c + F(c) dt + sum_k g_k dW_k`.
    pub fn step_euler_maruyama(&self, state: &SpectralState<T>, t: T, dt: T, dw: &[f64]) -> Result<SpectralState<T>> {
        let drift = galerkin_drift(&self.basis, &self.params, state, self.forcing.as_ref())?.total();
        let g = self.noise.lift(&self.basis, t, state)?;
        let noise = self.noise_increment(&g, dw);
        let coeffs = (0..state.len())
            .map(|i| state.coeffs[i] + drift[i] * dt + noise[i])
            .collect();
        Self::finish(coeffs, t, dt)
    }

    /// Viscous term implicit per mode, everything else explicit.
    pub fn step_semi_implicit(&self, state: &SpectralState<T>, t: T, dt: T, dw: &[f64]) -> Result<SpectralState<T>> {
        let explicit = galerkin_drift(&self.basis, &self.params, state, self.forcing.as_ref())?.explicit_part();
        let g = self.noise.lift(&self.basis, t, state)?;
        let noise = self.noise_increment(&g, dw);
        let coeffs = (0..state.len())
            .map(|i| {
                let damp = T::one() + dt * viscous_rate(&self.basis, &self.params, i);
                (state.coeffs[i] + explicit[i] * dt + noise[i]) / damp
            })
            .collect();
        Self::finish(coeffs, t, dt)
    }

    pub fn step(&self, scheme: Scheme, state: &SpectralState<T>, t: T, dt: T, dw: &[f64]) -> Result<SpectralState<T>> {
        match scheme {
            Scheme::EulerMaruyama => self.step_euler_maruyama(state, t, dt, dw),
            Scheme::SemiImplicit => self.step_semi_implicit(state, t, dt, dw),
        }
    }

    fn kappa(&self) -> f64 {
        let c = &self.config;
        if c.beta > 0.0 {
            (c.alpha1 + c.alpha2).powi(2) / (2.0 * c.beta)
        } else {
            0.0
        }
    }

    fn row(&self, step: usize, t: f64, n: &NormReport<T>, acc: &Accumulators, residual: f64) -> LedgerRow {
        let c = &self.config;
        let v_sq = n.v_sq.to_f64_lossy();
        let w14 = n.w14.to_f64_lossy();
        LedgerRow {
            step,
            t,
            v_sq,
            w_sq: n.w_sq.to_f64_lossy(),
            d_sq: n.d_sq.to_f64_lossy(),
            a_sq: n.a_sq().to_f64_lossy(),
            a4_4: n.a4_4.to_f64_lossy(),
            w14_4: w14.powi(4),
            int_d_sq: acc.d_sq,
            int_a4_4: acc.a4_4,
            int_a_sq: acc.a_sq,
            int_w14_4: acc.w14_4,
            int_source: acc.source,
            martingale: acc.martingale,
            ito: acc.ito,
            weighted_energy: v_sq + 4.0 * c.nu * acc.d_sq + 0.5 * c.beta * acc.a4_4 - self.kappa() * acc.a_sq,
            residual,
            stopped: false,
        }
    }

    /// Runs the configured scheme from the config's initial condition.
    pub fn simulate(&self, path: &WienerPath, level: u32) -> PathResult<T> {
        self.simulate_from(self.initial_state(), path, level, self.config.scheme, false)
    }

    /// Integrates from `initial` on level `level` of `path`
    /// (`dt = path.dt(level)`, `steps = config.steps() * 2^level`).
    ///
    /// With `keep_trajectory` every post-step state is returned.
    pub fn simulate_from(
        &self,
        initial: SpectralState<T>,
        path: &WienerPath,
        level: u32,
        scheme: Scheme,
        keep_trajectory: bool,
    ) -> PathResult<T> {
        let clock = std::time::Instant::now();
        let c = &self.config;
        let dt_f = path.dt(level);
        let dt = T::lit(dt_f);
        let steps = c.steps() << level;
        let kappa = self.kappa();
        let u_sq = self.forcing_l2_sq.to_f64_lossy();

        let mut ledger = EnergyLedger::default();
        let mut acc = Accumulators::default();
        let mut state = initial;
        state.time = T::zero();
        let mut trajectory = Vec::new();
        let mut snapshots = Vec::new();
        let mut pending_snaps: Vec<f64> = c.snapshot_times.clone();
        pending_snaps.sort_by(f64::total_cmp);
        let mut blowup = None;

        let mut report = match norms(&state, &self.basis) {
            Ok(r) => r,
            Err(_) => {
                return PathResult {
                    ledger,
                    trajectory,
                    snapshots,
                    blowup: Some(0),
                    final_state: state,
                    wall_time: clock.elapsed().as_secs_f64(),
                }
            }
        };
        ledger.rows.push(self.row(0, 0.0, &report, &acc, 0.0));
        let mut take_snapshots = |t: f64, s: &SpectralState<T>, pending: &mut Vec<f64>| {
            while let Some(&ts) = pending.first() {
                if ts <= t + 1e-9 * dt_f {
                    snapshots.push(s.clone());
                    pending.remove(0);
                } else {
                    break;
                }
            }
        };
        take_snapshots(0.0, &state, &mut pending_snaps);

        let crossed = |r: &NormReport<T>| c.m_stop.is_some_and(|m| r.w_sq.to_f64_lossy().sqrt() >= m);
        if crossed(&report) {
            ledger.stopped = true;
            ledger.tau_m = Some(0.0);
            ledger.rows[0].stopped = true;
        }

        let mut n = 0;
        while !ledger.stopped && n < steps {
            let t = dt_f * n as f64;
            let dw = path.increments(level, n as u64);
            let g = match self.noise.lift(&self.basis, T::lit(t), &state) {
                Ok(g) => g,
                Err(_) => {
                    blowup = Some(n + 1);
                    break;
                }
            };
            let next = match self.step(scheme, &state, T::lit(t), dt, &dw) {
                Ok(s) => s,
                Err(_) => {
                    blowup = Some(n + 1);
                    break;
                }
            };
            let next_report = match norms(&next, &self.basis) {
                Ok(r) if r.v_sq.is_finite() && r.w14.is_finite() && r.a4_4.is_finite() => r,
                _ => {
                    blowup = Some(n + 1);
                    break;
                }
            };

            let mart: f64 = g
                .iter()
                .zip(&dw)
                .map(|(gk, w)| {
                    let dot: T = gk.iter().zip(&state.coeffs).map(|(a, b)| *a * *b).sum();
                    2.0 * dot.to_f64_lossy() * w
                })
                .sum();
            let ito: f64 = g
                .iter()
                .map(|gk| gk.iter().map(|v| (*v * *v).to_f64_lossy()).sum::<f64>())
                .sum::<f64>()
                * dt_f;
            let d_sq = report.d_sq.to_f64_lossy();
            let a4 = report.a4_4.to_f64_lossy();
            let a_sq = report.a_sq().to_f64_lossy();
            let source = u_sq + report.l2_sq.to_f64_lossy();
            let residual = (next_report.v_sq - report.v_sq).to_f64_lossy()
                + dt_f * (4.0 * c.nu * d_sq + 0.5 * c.beta * a4 - kappa * a_sq - source)
                - mart
                - ito;
            acc.d_sq += dt_f * d_sq;
            acc.a4_4 += dt_f * a4;
            acc.a_sq += dt_f * a_sq;
            acc.w14_4 += dt_f * report.w14.to_f64_lossy().powi(4);
            acc.source += dt_f * source;
            acc.martingale += mart;
            acc.ito += ito;

            n += 1;
            let t_next = dt_f * n as f64;
            state = next;
            state.time = T::lit(t_next);
            report = next_report;
            let mut row = self.row(n, t_next, &report, &acc, residual);
            if crossed(&report) {
                row.stopped = true;
                ledger.stopped = true;
                ledger.tau_m = Some(t_next);
            }
            ledger.rows.push(row);
            take_snapshots(t_next, &state, &mut pending_snaps);
            if keep_trajectory {
                trajectory.push(state.clone());
            }
        }
        PathResult {
            ledger,
            trajectory,
            snapshots,
            blowup,
            final_state: state,
            wall_time: clock.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulators {
    d_sq: f64,
    a4_4: f64,
    a_sq: f64,
    w14_4: f64,
    source: f64,
    martingale: f64,
    ito: f64,
}

/// Validates `config`, integrates path number 0 and returns the result.
pub fn simulate_path<T: Real>(config: &SimConfig) -> Result<PathResult<T>> {
    let sim = Simulator::<T>::new(config)?;
    Ok(sim.simulate(&sim.wiener_path(0), 0))
}
