use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use thirdgrade::basis::{Basis, BasisSpec};
use thirdgrade::montecarlo::{
    dt_convergence, dyadic_halvings, galerkin_convergence, linear_tail_prediction, run_ensemble, TailPrediction,
};
use thirdgrade::operators::{DebugHooks, Params};
use thirdgrade::output::{
    fmt_f64, write_file, write_table, write_json, write_ledger, write_snapshots, write_summaries, LEDGER_SCHEMA, SNAPSHOT_SCHEMA,
    SUMMARY_SCHEMA,
};
use thirdgrade::sde::{SimConfig, Simulator};
use thirdgrade::verify::{all_pass, estimate_constants, run_suite};
use thirdgrade::Error;

const BUILD_TAG: &str = env!("THIRDGRADE_BUILD_TAG");

const EXIT_VERIFY: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_BLOWUP: u8 = 3;

#[derive(Parser)]
#[command(name = "thirdgrade", version, about = "Stochastic third grade fluid Galerkin simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one path and write its energy ledger.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run an ensemble and write moment estimators.
    Mc {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Coupled-path convergence across Galerkin levels or time steps.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated mode counts, e.g. "4,9,16".
        #[arg(long, conflicts_with = "dts", required_unless_present = "dts")]
        levels: Option<String>,
        /// Comma-separated dyadic step sizes, e.g. "1e-3,5e-4,2.5e-4".
        #[arg(long)]
        dts: Option<String>,
        #[arg(long, default_value_t = 20)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Check the discrete identities and inequalities on random states.
    Verify {
        /// Truncation as "KMAX,LMAX" or "KMAX,LMAX,GRID".
        #[arg(long, default_value = "4,4,34")]
        spec: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take the material parameters from a config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for verify.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Build the operators with A = D(y); the suite must then fail.
        #[arg(long)]
        debug_a_equals_d: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    allow_unsafe_noise: bool,
    #[arg(long)]
    linear_test_mode: bool,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    BlowUp(String),
    Verify,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BlowUp { .. } => Failure::BlowUp(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    build: &'static str,
    command: &'a str,
    master_seed: u64,
    config: &'a SimConfig,
    schemas: Schemas,
    outputs: Vec<String>,
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    blowup_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct Schemas {
    ledger: &'static str,
    snapshots: &'static str,
    paths: &'static str,
}

struct Run {
    config: SimConfig,
    warnings: Vec<String>,
    out: PathBuf,
    started: Instant,
}

impl Run {
    fn load(args: &RunArgs) -> Result<Self, Failure> {
        let started = Instant::now();
        let text = fs::read_to_string(&args.config)
            .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.config.display())))?;
        let mut config = SimConfig::from_json(&text)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        config.allow_unsafe_noise |= args.allow_unsafe_noise;
        config.linear_test_mode |= args.linear_test_mode;
        let warnings = config.validate()?;
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        fs::create_dir_all(&args.out)
            .map_err(|e| Failure::Input(format!("cannot create {}: {e}", args.out.display())))?;
        Ok(Run {
            config,
            warnings,
            out: args.out.clone(),
            started,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(
        &self,
        command: &str,
        outputs: &[&str],
        blowup_step: Option<usize>,
        extra: Option<serde_json::Value>,
    ) -> Result<(), Failure> {
        let m = Manifest {
            tool: "thirdgrade",
            version: env!("CARGO_PKG_VERSION"),
            build: BUILD_TAG,
            command,
            master_seed: self.config.seed,
            config: &self.config,
            schemas: Schemas {
                ledger: LEDGER_SCHEMA,
                snapshots: SNAPSHOT_SCHEMA,
                paths: SUMMARY_SCHEMA,
            },
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            warnings: &self.warnings,
            blowup_step,
            extra,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.path("manifest.json"), &m)?;
        Ok(())
    }
}

fn cmd_simulate(args: &RunArgs) -> CmdResult {
    let run = Run::load(args)?;
    let sim = Simulator::<f64>::new(&run.config)?;
    let result = sim.simulate(&sim.wiener_path(0), 0);
    let mut outputs = vec!["ledger.csv"];
    write_file(&run.path("ledger.csv"), |w| write_ledger(w, &result.ledger))?;
    if !run.config.snapshot_times.is_empty() {
        write_file(&run.path("snapshots.csv"), |w| write_snapshots(w, sim.basis(), &result.snapshots))?;
        outputs.push("snapshots.csv");
    }
    outputs.push("manifest.json");
    run.manifest("simulate", &outputs, result.blowup, None)?;

    let last = result.ledger.last();
    println!(
        "steps={} t={} |Y|_V^2={:e} weighted_energy={:e} max residual={:e}{}",
        last.step,
        last.t,
        last.v_sq,
        last.weighted_energy,
        result.ledger.max_residual(),
        if result.ledger.stopped { " (stopped)" } else { "" }
    );
    if let Some(step) = result.blowup {
        return Err(Failure::BlowUp(format!(
            "non-finite state at step {step} (t = {}); results written to {}",
            step as f64 * run.config.dt,
            run.out.display()
        )));
    }
    Ok(())
}

fn cmd_mc(args: &RunArgs, paths: usize, parallel: usize) -> CmdResult {
    if paths == 0 || parallel == 0 {
        return Err(Failure::Input("--paths and --parallel must be >= 1".into()));
    }
    let run = Run::load(args)?;
    let out = run_ensemble::<f64>(&run.config, paths, parallel)?;
    write_json(&run.path("ensemble.json"), &out.report)?;
    write_file(&run.path("paths.csv"), |w| write_summaries(w, &out.summaries))?;
    run.manifest(
        "mc",
        &["ensemble.json", "paths.csv", "manifest.json"],
        None,
        Some(serde_json::json!({ "paths": paths, "parallel": parallel })),
    )?;

    let e = &out.report.estimators;
    println!("paths={} blowups={} stopped={}", paths, out.report.blowup_count, out.report.stopped_count);
    for (name, est) in [
        ("E sup |Y|_V^2", e.sup_v_sq),
        ("E int |DY|^2", e.int_d_sq),
        ("E int |A|_4^4", e.int_a4_4),
        ("E sup |Y|_W^p", e.sup_w_p),
        ("E exp(c int |Y|_W14^4)", e.exp_moment),
    ] {
        println!("{name:<24} {:>14.6e} +/- {:.3e}", est.mean, est.std_error);
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Failure::Input(format!("malformed {what} list {text:?}: bad entry {:?}", s.trim())))
        })
        .collect()
}

fn cmd_converge(args: &RunArgs, levels: Option<&str>, dts: Option<&str>, paths: usize, parallel: usize) -> CmdResult {
    if paths == 0 || parallel == 0 {
        return Err(Failure::Input("--paths and --parallel must be >= 1".into()));
    }
    // Parse before touching the file system so malformed lists fail fast.
    let levels = levels.map(|l| parse_list::<usize>("level", l)).transpose()?;
    let dts = dts.map(|d| parse_list::<f64>("dt", d)).transpose()?;
    let mut run = Run::load(args)?;

    if let Some(levels) = levels {
        let table = galerkin_convergence::<f64>(&run.config, &levels, paths, parallel)?;
        let prediction: Option<Vec<TailPrediction>> = (run.config.linear_test_mode && run.config.noise.channels.is_empty())
            .then(|| {
                table
                    .rows
                    .iter()
                    .map(|r| linear_tail_prediction(&run.config, r.coarse, r.fine))
                    .collect::<thirdgrade::Result<_>>()
            })
            .transpose()?;
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.coarse.to_string(),
                    r.fine.to_string(),
                    fmt_f64(r.sup_dist.mean),
                    fmt_f64(r.sup_dist.std_error),
                    fmt_f64(r.int_dist.mean),
                    fmt_f64(r.int_dist.std_error),
                    r.ratio.map(fmt_f64).unwrap_or_default(),
                ]
            })
            .collect();
        write_file(&run.path("converge.csv"), |w| {
            write_table(
                w,
                &["coarse", "fine", "sup_dist", "sup_dist_se", "int_dist", "int_dist_se", "ratio"],
                &rows,
            )
        })?;
        write_json(
            &run.path("converge.json"),
            &serde_json::json!({ "galerkin": table, "linear_prediction": prediction }),
        )?;
        run.manifest(
            "converge",
            &["converge.csv", "converge.json", "manifest.json"],
            None,
            Some(serde_json::json!({ "levels": levels, "paths": paths, "parallel": parallel })),
        )?;
        if table.rows.is_empty() {
            println!("single level: empty distance table");
        }
        for r in &table.rows {
            println!(
                "{:>4} -> {:<4} E sup = {:.6e}  E int = {:.6e}  ratio = {}",
                r.coarse,
                r.fine,
                r.sup_dist.mean,
                r.int_dist.mean,
                r.ratio.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
            );
        }
    } else if let Some(dts) = dts {
        let halvings = dyadic_halvings(&dts)?;
        run.config.dt = dts[0];
        run.warnings.extend(run.config.validate()?);
        let conv = dt_convergence::<f64>(&run.config, halvings, paths, parallel)?;
        let rows: Vec<Vec<String>> = conv
            .errors
            .iter()
            .enumerate()
            .map(|(k, e)| {
                vec![
                    fmt_f64(conv.dts[k]),
                    fmt_f64(conv.dts[k + 1]),
                    fmt_f64(*e),
                    fmt_f64(conv.mean_sq[k].mean),
                    fmt_f64(conv.mean_sq[k].std_error),
                    if k == 0 { String::new() } else { fmt_f64(conv.orders[k - 1]) },
                ]
            })
            .collect();
        write_file(&run.path("converge.csv"), |w| {
            write_table(w, &["dt", "dt_fine", "error", "mean_sq", "mean_sq_se", "order"], &rows)
        })?;
        write_json(&run.path("converge.json"), &serde_json::json!({ "dt": conv }))?;
        run.manifest(
            "converge",
            &["converge.csv", "converge.json", "manifest.json"],
            None,
            Some(serde_json::json!({ "dts": dts, "paths": paths, "parallel": parallel })),
        )?;
        for (k, e) in conv.errors.iter().enumerate() {
            println!("dt = {:.3e}  error = {e:.6e}", conv.dts[k]);
        }
        match conv.fitted_order {
            Some(p) => println!("observed strong order = {p:.3}"),
            None => println!("observed strong order = n/a (need at least two error levels)"),
        }
    }
    Ok(())
}

fn parse_spec(text: &str, alpha1: f64) -> Result<BasisSpec, Failure> {
    let parts = parse_list::<usize>("spec", text)?;
    let spec = match parts[..] {
        [k, l] => BasisSpec::with_quartic_grid(k, l, alpha1),
        [k, l, n] => BasisSpec::new(k, l, alpha1, n),
        _ => return Err(Failure::Input(format!("--spec expects KMAX,LMAX[,GRID], got {text:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    version: &'static str,
    build: &'static str,
    spec: &'a BasisSpec,
    trials: usize,
    seed: u64,
    all_pass: bool,
    checks: &'a [thirdgrade::verify::CheckResult],
    constants: thirdgrade::verify::Constants,
}

fn cmd_verify(
    spec: &str,
    trials: usize,
    seed: u64,
    config: Option<&Path>,
    out: Option<&Path>,
    debug_a_equals_d: bool,
) -> CmdResult {
    if trials == 0 {
        return Err(Failure::Input("--trials must be >= 1".into()));
    }
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::new(0.5, 1.0, -0.5, 0.5),
    };
    cfg.hooks = DebugHooks {
        a_equals_d: cfg.hooks.a_equals_d || debug_a_equals_d,
    };
    let spec = parse_spec(spec, cfg.alpha1)?;
    let params: Params<f64> = cfg.params();
    let checks = run_suite(&spec, &params, trials, seed)?;
    let constants = estimate_constants(&spec, &params, trials.max(10), seed, None)?;
    let pass = all_pass(&checks);

    println!("{:<32} {:>10} {:>12} {:>10}  result", "check", "trials", "max_resid", "tol");
    for c in &checks {
        println!(
            "{:<32} {:>10} {:>12.3e} {:>10.1e}  {}",
            c.name,
            c.trials,
            c.max_residual,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "constants: K_* = {:.6}  K_2 = {:.6}  P = {:.6}  S-continuity = {:.4e}  convection = {:.4e}",
        constants.k_star, constants.k2, constants.poincare, constants.s_continuity, constants.convection_continuity
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))?;
        let basis = Basis::<f64>::new(&spec)?;
        write_json(
            &dir.join("verify.json"),
            &VerifyReport {
                version: env!("CARGO_PKG_VERSION"),
                build: BUILD_TAG,
                spec: basis.spec(),
                trials,
                seed,
                all_pass: pass,
                checks: &checks,
                constants,
            },
        )?;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { run } => cmd_simulate(run),
        Command::Mc { run, paths, parallel } => cmd_mc(run, *paths, *parallel),
        Command::Converge {
            run,
            levels,
            dts,
            paths,
            parallel,
        } => cmd_converge(run, levels.as_deref(), dts.as_deref(), *paths, *parallel),
        Command::Verify {
            spec,
            trials,
            seed,
            config,
            out,
            debug_a_equals_d,
        } => cmd_verify(spec, *trials, *seed, config.as_deref(), out.as_deref(), *debug_a_equals_d),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::BlowUp(msg)) => {
            eprintln!("blow-up: {msg}");
            ExitCode::from(EXIT_BLOWUP)
        }
        Err(Failure::Verify) => {
            eprintln!("verification failed");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
