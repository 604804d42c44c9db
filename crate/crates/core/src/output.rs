//! CSV emission for trajectory logs.
//!
//! Floats are written with 17 significant digits, rows end in LF.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use crate::sim::{error_metrics, TrajectoryLog};

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn axis_names(dim: usize) -> Vec<String> {
    if dim <= 3 {
        ["x", "y", "z"][..dim].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=dim).map(|k| k.to_string()).collect()
    }
}

/// Header of `trajectory.csv` for dimension `dim`.
pub fn trajectory_header(dim: usize) -> Vec<String> {
    let axes = axis_names(dim);
    let mut h = vec!["t".to_string(), "agent".to_string()];
    h.extend(axes.iter().map(|a| format!("p{a}")));
    h.extend(axes.iter().map(|a| format!("ph{a}")));
    h.extend(["mode", "err_track", "err_est", "err_bar"].map(String::from));
    h.extend(axes.iter().map(|a| format!("u{a}")));
    h
}

pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(trajectory_header(log.dim))?;
    for s in &log.samples {
        for (k, a) in s.agents.iter().enumerate() {
            let mut row = vec![fmt_f64(s.t), (k + 1).to_string()];
            row.extend(a.p.iter().map(|x| fmt_f64(*x)));
            row.extend(a.p_hat.iter().map(|x| fmt_f64(*x)));
            row.push(a.mode.code().to_string());
            row.extend([a.err_track, a.err_est, a.err_bar].map(fmt_f64));
            row.extend(a.u.iter().map(|x| fmt_f64(*x)));
            w.write_record(&row)?;
        }
    }
    w.flush()
}

pub fn write_events_csv<W: Write>(log: &TrajectoryLog, out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["t", "agent", "event"])?;
    for e in &log.events {
        w.write_record([fmt_f64(e.t), e.agent.to_string(), e.kind.to_string()])?;
    }
    w.flush()
}

pub fn write_summary_csv<W: Write>(log: &TrajectoryLog, out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record([
        "agent",
        "peak_track",
        "peak_est",
        "settle_time",
        "arrival_time",
        "max_maintaining_increase",
        "max_switch_jump",
    ])?;
    if !log.is_empty() {
        for s in error_metrics(log) {
            w.write_record([
                s.agent.to_string(),
                fmt_f64(s.peak_track),
                fmt_f64(s.peak_est),
                fmt_opt(s.settle_time),
                fmt_opt(s.arrival_time),
                fmt_f64(s.max_maintaining_increase),
                fmt_f64(s.max_switch_jump),
            ])?;
        }
    }
    w.flush()
}

/// Writes `trajectory.csv`, `events.csv` and `summary.csv` into `dir`.
pub fn write_trajectory(log: &TrajectoryLog, dir: impl AsRef<Path>) -> io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_trajectory_csv(log, io::BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    write_events_csv(log, io::BufWriter::new(File::create(dir.join("events.csv"))?))?;
    write_summary_csv(log, io::BufWriter::new(File::create(dir.join("summary.csv"))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            trajectory_header(2).join(","),
            "t,agent,px,py,phx,phy,mode,err_track,err_est,err_bar,ux,uy"
        );
        assert_eq!(trajectory_header(3).len(), 2 + 3 + 3 + 4 + 3);
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
