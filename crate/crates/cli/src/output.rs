//! CSV and JSON writers. Floats are written with 17 significant digits in
//! scientific notation so files are locale-independent and round-trip.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use robustcg_core::solvers::RunTrace;
use serde::Serialize;

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `iter,xdist,gap,eta`, plus `rasc_gap` when `with_rasc` is set.
pub fn write_trace_csv(path: &Path, trace: &RunTrace, with_rasc: bool) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    if with_rasc {
        writeln!(w, "iter,xdist,gap,eta,rasc_gap")?;
    } else {
        writeln!(w, "iter,xdist,gap,eta")?;
    }
    for r in &trace.records {
        write!(w, "{},{},{},{}", r.iter, fmt_opt(r.xdist), fmt_f64(r.gap), fmt_f64(r.eta))?;
        if with_rasc {
            write!(w, ",{}", fmt_opt(r.rasc_gap))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_signal_csv(path: &Path, signal: &[f64]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,value")?;
    for (j, v) in signal.iter().enumerate() {
        writeln!(w, "{j},{}", fmt_f64(*v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// File-name friendly rendering of a noise level (`0.001` stays `0.001`).
pub fn sigma_tag(sigma: f64) -> String {
    format!("{sigma}")
}
