//! Ensembles, moment estimators and coupled-path experiments (Galerkin
//! levels, time-step refinement, perturbed twins).
//!
//! Paths run on a dedicated rayon pool; results are collected in path order
//! and reduced sequentially, so every report is independent of the thread
//! count.

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{BasisSpec, SpectralState};
use crate::error::{Error, Result};
use crate::noise::{check_hypotheses, derive_seed, random_direction};
use crate::sde::{PathResult, SimConfig, Simulator};
use crate::scalar::Real;
use crate::verify::estimate_constants;

/// Seed stream for the twin-experiment perturbation direction.
const TWIN_STREAM: u64 = 1 << 61;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `std_error = s / sqrt(n)` with the unbiased sample deviation; zero for one sample.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Estimate { mean, std_error }
    }
}

fn par_map<R: Send>(parallelism: usize, n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Result<Vec<R>> {
    if parallelism == 0 {
        return Err(Error::Argument("parallelism must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Per-path functionals entering the ensemble estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub index: u64,
    pub seed: u64,
    /// `sup_t ||Y||_V^2`
    pub sup_v_sq: f64,
    /// `int ||DY||_2^2`
    pub int_d_sq: f64,
    /// `int ||A||_4^4`
    pub int_a4_4: f64,
    /// `sup_t ||Y||_W^p`
    pub sup_w_p: f64,
    /// `int ||Y||_{W^{1,4}}^4`
    pub int_w14_4: f64,
    /// `exp(c int ||Y||_{W^{1,4}}^4)`
    pub exp_moment: f64,
    pub final_v_sq: f64,
    pub blowup_step: Option<usize>,
    pub tau_m: Option<f64>,
}

impl PathSummary {
    fn from_path<T>(index: u64, seed: u64, r: &PathResult<T>, p: u32, c: f64) -> Self {
        let l = &r.ledger;
        let last = l.last();
        PathSummary {
            index,
            seed,
            sup_v_sq: l.sup(|row| row.v_sq),
            int_d_sq: last.int_d_sq,
            int_a4_4: last.int_a4_4,
            sup_w_p: l.sup(|row| row.w_sq.powf(p as f64 / 2.0)),
            int_w14_4: last.int_w14_4,
            exp_moment: (c * last.int_w14_4).exp(),
            final_v_sq: last.v_sq,
            blowup_step: r.blowup,
            tau_m: l.tau_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimators {
    pub sup_v_sq: Estimate,
    pub int_d_sq: Estimate,
    pub int_a4_4: Estimate,
    pub sup_w_p: Estimate,
    pub exp_moment: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub paths: usize,
    pub master_seed: u64,
    pub p_moment: u32,
    /// `K_*` used in the exponential-moment constant.
    pub k_star: f64,
    /// `c = lambda beta / (16 K_*^4)`.
    pub exp_constant: f64,
    pub estimators: Estimators,
    /// Blown-up paths, excluded from the estimators.
    pub blowup_count: usize,
    pub stopped_count: usize,
    pub seeds: Vec<u64>,
    /// `(t, E sup_{s <= t} ||Y(s)||_V^2)` at eleven equally spaced times.
    pub sup_v_profile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleOutput {
    pub report: EnsembleReport,
    pub summaries: Vec<PathSummary>,
}

/// Options of [`run_ensemble_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub n_paths: usize,
    pub parallelism: usize,
    /// Korn constant for the exponential moment; estimated when `None`.
    pub k_star: Option<f64>,
}

/// Estimated `K_*` on the config's truncation, seeded from the master seed.
pub fn korn_constant(config: &SimConfig) -> Result<f64> {
    let spec = config.basis_spec();
    Ok(estimate_constants::<f64>(&spec, &config.params(), 50, derive_seed(config.seed, TWIN_STREAM + 1), None)?.k_star)
}

pub fn run_ensemble<T: Real>(config: &SimConfig, n_paths: usize, parallelism: usize) -> Result<EnsembleOutput> {
    run_ensemble_with::<T>(
        config,
        &EnsembleOptions {
            n_paths,
            parallelism,
            k_star: None,
        },
    )
}

pub fn run_ensemble_with<T: Real>(config: &SimConfig, opts: &EnsembleOptions) -> Result<EnsembleOutput> {
    if opts.n_paths == 0 {
        return Err(Error::Argument("n_paths must be >= 1".into()));
    }
    let sim = Simulator::<T>::new(config)?;
    let k_star = match opts.k_star {
        Some(k) => k,
        None => korn_constant(config)?,
    };
    let c = config.exp_lambda * config.beta / (16.0 * k_star.powi(4));
    let p = config.p_moment;
    let checkpoints: Vec<usize> = (0..=10).map(|k| k * config.steps() / 10).collect();

    let runs = par_map(opts.parallelism, opts.n_paths, |i| {
        let path = sim.wiener_path(i as u64);
        let r = sim.simulate(&path, 0);
        let summary = PathSummary::from_path(i as u64, path.seed, &r, p, c);
        let mut running = 0.0f64;
        let mut profile = Vec::with_capacity(checkpoints.len());
        let mut rows = r.ledger.rows.iter().map(|row| row.v_sq);
        let mut idx = 0usize;
        for &cp in &checkpoints {
            while idx <= cp {
                match rows.next() {
                    Some(v) => running = running.max(v),
                    None => break,
                }
                idx += 1;
            }
            profile.push(running);
        }
        (summary, profile, r.ledger.stopped)
    })?;

    let ok: Vec<&(PathSummary, Vec<f64>, bool)> = runs.iter().filter(|r| r.0.blowup_step.is_none()).collect();
    let collect = |f: fn(&PathSummary) -> f64| Estimate::from_samples(&ok.iter().map(|r| f(&r.0)).collect::<Vec<_>>());
    let estimators = Estimators {
        sup_v_sq: collect(|s| s.sup_v_sq),
        int_d_sq: collect(|s| s.int_d_sq),
        int_a4_4: collect(|s| s.int_a4_4),
        sup_w_p: collect(|s| s.sup_w_p),
        exp_moment: collect(|s| s.exp_moment),
    };
    let sup_v_profile = checkpoints
        .iter()
        .enumerate()
        .map(|(k, &cp)| {
            let vals: Vec<f64> = ok.iter().map(|r| r.1[k]).collect();
            (cp as f64 * config.dt, Estimate::from_samples(&vals).mean)
        })
        .collect();
    let summaries: Vec<PathSummary> = runs.iter().map(|r| r.0.clone()).collect();
    Ok(EnsembleOutput {
        report: EnsembleReport {
            paths: opts.n_paths,
            master_seed: config.seed,
            p_moment: p,
            k_star,
            exp_constant: c,
            estimators,
            blowup_count: runs.len() - ok.len(),
            stopped_count: runs.iter().filter(|r| r.2).count(),
            seeds: summaries.iter().map(|s| s.seed).collect(),
            sup_v_profile,
        },
        summaries,
    })
}

/// Distances between consecutive Galerkin levels on common Wiener paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDistance {
    pub coarse: usize,
    pub fine: usize,
    /// `E sup_t ||Y_fine - Y_coarse||_V^2`
    pub sup_dist: Estimate,
    /// `E int ||Y_fine - Y_coarse||_V^2`
    pub int_dist: Estimate,
    /// `sup_dist` over the previous row's `sup_dist`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub levels: Vec<usize>,
    pub paths: usize,
    pub rows: Vec<LevelDistance>,
    /// Paths excluded because a level blew up or stopped early.
    pub excluded_paths: usize,
}

fn full_trajectory<T: Real>(sim: &Simulator<T>, i: u64, level: u32) -> PathResult<T> {
    let init = sim.initial_state();
    let mut r = sim.simulate_from(init.clone(), &sim.wiener_path(i), level, sim.config().scheme, true);
    r.trajectory.insert(0, init);
    r
}

/// `E sup` and `E int` of `||Y_{n'} - Y_n||_V^2` for consecutive `levels`.
///
/// Levels are mode counts `n = k^2`; they must be non-decreasing.
pub fn galerkin_convergence<T: Real>(
    config: &SimConfig,
    levels: &[usize],
    n_paths: usize,
    parallelism: usize,
) -> Result<ConvergenceTable> {
    if n_paths == 0 {
        return Err(Error::Argument("n_paths must be >= 1".into()));
    }
    if levels.is_empty() {
        return Err(Error::Argument("at least one level is required".into()));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Argument(format!("levels must be non-decreasing (got {levels:?})")));
    }
    config.validate()?;
    let sims: Vec<Simulator<T>> = levels
        .iter()
        .map(|&n| Simulator::with_basis(config, &BasisSpec::square_level(n, config.alpha1)?))
        .collect::<Result<_>>()?;
    let dt = config.dt;

    let per_path = par_map(parallelism, n_paths, |i| {
        let runs: Vec<PathResult<T>> = sims.iter().map(|s| full_trajectory(s, i as u64, 0)).collect();
        if runs.iter().any(|r| r.blowup.is_some() || r.ledger.stopped) {
            return None;
        }
        let mut out = Vec::new();
        for k in 1..runs.len() {
            let (coarse, fine) = (&sims[k - 1], &sims[k]);
            let mut sup = 0.0f64;
            let mut int = 0.0f64;
            let steps = runs[k].trajectory.len().min(runs[k - 1].trajectory.len());
            for n in 0..steps {
                let up = fine
                    .basis()
                    .embed(&runs[k - 1].trajectory[n], coarse.basis())
                    .expect("nested levels");
                let d = runs[k].trajectory[n].combine(T::one(), &up, -T::one()).v_norm_sq().to_f64_lossy();
                sup = sup.max(d);
                if n + 1 < steps {
                    int += dt * d;
                }
            }
            out.push((sup, int));
        }
        Some(out)
    })?;

    let kept: Vec<&Vec<(f64, f64)>> = per_path.iter().flatten().collect();
    let mut rows: Vec<LevelDistance> = Vec::new();
    for k in 1..levels.len() {
        let sup = Estimate::from_samples(&kept.iter().map(|p| p[k - 1].0).collect::<Vec<_>>());
        let int = Estimate::from_samples(&kept.iter().map(|p| p[k - 1].1).collect::<Vec<_>>());
        let ratio = rows.last().map(|prev| sup.mean / prev.sup_dist.mean);
        rows.push(LevelDistance {
            coarse: levels[k - 1],
            fine: levels[k],
            sup_dist: sup,
            int_dist: int,
            ratio,
        });
    }
    Ok(ConvergenceTable {
        levels: levels.to_vec(),
        paths: n_paths,
        rows,
        excluded_paths: n_paths - kept.len(),
    })
}

/// Closed-form level distances for a noise-free linear run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPrediction {
    /// `sum_tail c_j^2`, attained at `t = 0`.
    pub sup_dist: f64,
    /// `dt sum_tail c_j^2 sum_{n < N} (1 - dt r_j)^{2n}` for Euler-Maruyama.
    pub int_dist: f64,
}

/// Prediction for levels `coarse < fine` under linear test mode with EM stepping.
pub fn linear_tail_prediction(config: &SimConfig, coarse: usize, fine: usize) -> Result<TailPrediction> {
    let cs = BasisSpec::square_level(coarse, config.alpha1)?;
    let fs = BasisSpec::square_level(fine, config.alpha1)?;
    let fine_basis = crate::basis::Basis::<f64>::new(&fs)?;
    let ic = config.initial.realize(&fine_basis, config.seed);
    let steps = config.steps();
    let (mut sup, mut int) = (0.0, 0.0);
    for (c, func) in ic.coeffs.iter().zip(fine_basis.functions()) {
        if func.mode.k <= cs.kmax && func.mode.l <= cs.lmax {
            continue;
        }
        let r = config.nu * func.mu / func.upsilon_factor;
        let g = (1.0 - config.dt * r).powi(2);
        sup += c * c;
        let mut acc = 0.0;
        let mut pow = 1.0;
        for _ in 0..steps {
            acc += pow;
            pow *= g;
        }
        int += config.dt * c * c * acc;
    }
    Ok(TailPrediction { sup_dist: sup, int_dist: int })
}

/// Strong self-convergence under dyadic time-step refinement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtConvergence {
    pub dts: Vec<f64>,
    pub paths: usize,
    /// `sqrt(E ||Y_dt(T) - Y_{dt/2}(T)||_V^2)` for consecutive pairs.
    pub errors: Vec<f64>,
    /// `E ||Y_dt(T) - Y_{dt/2}(T)||_V^2` with its standard error.
    pub mean_sq: Vec<Estimate>,
    /// `log2(e_k / e_{k+1})`.
    pub orders: Vec<f64>,
    /// Least-squares slope of `log e` against `log dt`.
    pub fitted_order: Option<f64>,
    pub excluded_paths: usize,
}

/// Checks that `dts` is `base, base/2, base/4, ...` and returns the halving count.
pub fn dyadic_halvings(dts: &[f64]) -> Result<u32> {
    if dts.is_empty() || dts.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Argument(format!("dt list must hold positive values (got {dts:?})")));
    }
    for (k, d) in dts.iter().enumerate() {
        let expect = dts[0] / f64::powi(2.0, k as i32);
        if ((d - expect) / expect).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "dt list must halve at every entry: entry {k} is {d}, expected {expect}"
            )));
        }
    }
    Ok(dts.len() as u32 - 1)
}

/// Runs `halvings + 1` step sizes `config.dt / 2^k` on common Wiener paths.
pub fn dt_convergence<T: Real>(
    config: &SimConfig,
    halvings: u32,
    n_paths: usize,
    parallelism: usize,
) -> Result<DtConvergence> {
    if n_paths == 0 {
        return Err(Error::Argument("n_paths must be >= 1".into()));
    }
    let sim = Simulator::<T>::new(config)?;
    let per_path = par_map(parallelism, n_paths, |i| {
        let path = sim.wiener_path(i as u64);
        let finals: Vec<PathResult<T>> = (0..=halvings)
            .map(|lvl| sim.simulate_from(sim.initial_state(), &path, lvl, config.scheme, false))
            .collect();
        if finals.iter().any(|r| r.blowup.is_some() || r.ledger.stopped) {
            return None;
        }
        Some(
            finals
                .windows(2)
                .map(|w| {
                    w[0].final_state
                        .combine(T::one(), &w[1].final_state, -T::one())
                        .v_norm_sq()
                        .to_f64_lossy()
                })
                .collect::<Vec<f64>>(),
        )
    })?;
    let kept: Vec<&Vec<f64>> = per_path.iter().flatten().collect();
    let mean_sq: Vec<Estimate> = (0..halvings as usize)
        .map(|k| Estimate::from_samples(&kept.iter().map(|p| p[k]).collect::<Vec<_>>()))
        .collect();
    let errors: Vec<f64> = mean_sq.iter().map(|e| e.mean.sqrt()).collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let dts: Vec<f64> = (0..=halvings).map(|k| config.dt / f64::powi(2.0, k as i32)).collect();
    let fitted_order = fit_slope(&dts[..errors.len()], &errors);
    Ok(DtConvergence {
        dts,
        paths: n_paths,
        errors,
        mean_sq,
        orders,
        fitted_order,
        excluded_paths: n_paths - kept.len(),
    })
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two usable points.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Two runs on one Wiener path from `Y0` and `Y0 + delta h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinReport {
    pub delta: f64,
    /// Noise Lipschitz fit used as `D3`.
    pub d3: f64,
    /// Convection continuity fit used as `D4`.
    pub d4: f64,
    pub times: Vec<f64>,
    /// `||Y1 - Y2||_V^2` per recorded time.
    pub dist_sq: Vec<f64>,
    /// `xi(t) ||Y1 - Y2||_V^2` with `xi(t) = exp(-D3 t / 2 - D4 int_0^t ||Y1||_W)`.
    pub weighted: Vec<f64>,
    /// `sup_t ||Y1 - Y2||_V / delta` (zero when `delta = 0`).
    pub stability_factor: f64,
    /// Both runs produced bit-identical trajectories.
    pub identical: bool,
}

/// Perturbed-twin experiment on path 0 of the config's master seed.
pub fn twin_path_stability<T: Real>(config: &SimConfig, delta: f64) -> Result<TwinReport> {
    if !delta.is_finite() {
        return Err(Error::Argument("delta must be finite".into()));
    }
    let sim = Simulator::<T>::new(config)?;
    let basis = sim.basis();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(config.seed, TWIN_STREAM));
    let dir = random_direction(basis, &mut rng);
    let y0 = sim.initial_state();
    let y0b = y0.combine(T::one(), &dir, T::lit(delta));
    let path = sim.wiener_path(0);
    let run = |init: SpectralState<T>| {
        let mut r = sim.simulate_from(init.clone(), &path, 0, config.scheme, true);
        r.trajectory.insert(0, init);
        r
    };
    let (r1, r2) = (run(y0), run(y0b));
    if r1.blowup.is_some() || r2.blowup.is_some() {
        return Err(Error::BlowUp {
            step: r1.blowup.or(r2.blowup).unwrap_or(0),
            time: f64::NAN,
        });
    }
    let d3 = if sim.noise().m() == 0 {
        0.0
    } else {
        check_hypotheses(sim.noise(), basis, 20, derive_seed(config.seed, TWIN_STREAM + 2))?.k_hat
    };
    let d4 = estimate_constants::<T>(basis.spec(), sim.params(), 20, derive_seed(config.seed, TWIN_STREAM + 3), None)?
        .convection_continuity;

    let steps = r1.trajectory.len().min(r2.trajectory.len());
    let mut times = Vec::with_capacity(steps);
    let mut dist_sq = Vec::with_capacity(steps);
    let mut weighted = Vec::with_capacity(steps);
    let mut int_w = 0.0;
    for n in 0..steps {
        let t = n as f64 * config.dt;
        let d = r1.trajectory[n]
            .combine(T::one(), &r2.trajectory[n], -T::one())
            .v_norm_sq()
            .to_f64_lossy();
        let xi = (-0.5 * d3 * t - d4 * int_w).exp();
        times.push(t);
        dist_sq.push(d);
        weighted.push(xi * d);
        int_w += config.dt * r1.ledger.rows[n].w_sq.sqrt();
    }
    let sup = dist_sq.iter().cloned().fold(0.0, f64::max).sqrt();
    Ok(TwinReport {
        delta,
        d3,
        d4,
        times,
        dist_sq,
        weighted,
        stability_factor: if delta == 0.0 { 0.0 } else { sup / delta.abs() },
        identical: r1.trajectory == r2.trajectory,
    })
}
