//! CSV and JSON writers for run artifacts.
//!
//! Floats are written in Rust's shortest round-trip scientific form, so a
//! file re-read and re-written is byte-identical. Column order is fixed per
//! schema version.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::basis::{Basis, SpectralState};
use crate::error::Result;
use crate::montecarlo::PathSummary;
use crate::scalar::Real;
use crate::sde::EnergyLedger;

pub const LEDGER_SCHEMA: &str = "ledger/v1";
pub const SNAPSHOT_SCHEMA: &str = "snapshots/v1";
pub const SUMMARY_SCHEMA: &str = "paths/v1";

pub const LEDGER_COLUMNS: [&str; 18] = [
    "step",
    "t",
    "v_sq",
    "w_sq",
    "d_sq",
    "a_sq",
    "a4_4",
    "w14_4",
    "int_d_sq",
    "int_a4_4",
    "int_a_sq",
    "int_w14_4",
    "int_source",
    "martingale",
    "ito",
    "weighted_energy",
    "residual",
    "stopped",
];

pub const SNAPSHOT_COLUMNS: [&str; 4] = ["t", "k", "l", "coeff"];

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "path",
    "seed",
    "sup_v_sq",
    "int_d_sq",
    "int_a4_4",
    "sup_w_p",
    "int_w14_4",
    "exp_moment",
    "final_v_sq",
    "blowup_step",
    "tau_m",
    "blowup",
];

/// Shortest round-trip representation, `'.'` decimal separator.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

fn opt<D: ToString>(x: Option<D>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_ledger<W: Write>(out: W, ledger: &EnergyLedger) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_COLUMNS)?;
    for r in &ledger.rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(
            [
                r.t,
                r.v_sq,
                r.w_sq,
                r.d_sq,
                r.a_sq,
                r.a4_4,
                r.w14_4,
                r.int_d_sq,
                r.int_a4_4,
                r.int_a_sq,
                r.int_w14_4,
                r.int_source,
                r.martingale,
                r.ito,
                r.weighted_energy,
                r.residual,
            ]
            .into_iter()
            .map(fmt_f64),
        );
        rec.push(u8::from(r.stopped).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per (snapshot, mode).
pub fn write_snapshots<T: Real, W: Write>(out: W, basis: &Basis<T>, snapshots: &[SpectralState<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SNAPSHOT_COLUMNS)?;
    for s in snapshots {
        for (c, f) in s.coeffs.iter().zip(basis.functions()) {
            w.write_record([
                fmt_f64(s.time.to_f64_lossy()),
                f.mode.k.to_string(),
                f.mode.l.to_string(),
                fmt_f64(c.to_f64_lossy()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(out: W, summaries: &[PathSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        let mut rec = vec![s.index.to_string(), s.seed.to_string()];
        rec.extend(
            [s.sup_v_sq, s.int_d_sq, s.int_a4_4, s.sup_w_p, s.int_w14_4, s.exp_moment, s.final_v_sq]
                .into_iter()
                .map(fmt_f64),
        );
        rec.push(opt(s.blowup_step));
        rec.push(opt(s.tau_m.map(fmt_f64)));
        rec.push(u8::from(s.blowup_step.is_some()).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Header plus pre-formatted rows.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

/// Creates `path` and streams a writer callback into it.
pub fn write_file(path: &Path, f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    f(std::io::BufWriter::new(file))
}
