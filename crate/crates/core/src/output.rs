//! CSV and JSON serialisation of reports.
//!
//! Floats in CSV carry 17 significant digits so every value round-trips.

use std::io::Write;

use serde::Serialize;

use crate::control::ControlSolution;
use crate::dynamics::Trajectory;
use crate::sweep::SweepResult;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn csv_err(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::new(std::io::ErrorKind::Other, format!("{other:?}")),
    }
}

/// `t, n_1..n_N, q_1..q_N, s_1..s_N, hhi`
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> std::io::Result<()> {
    let n = traj.states.first().map_or(0, |s| s.len());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("n", n))
        .chain(numbered("q", n))
        .chain(numbered("s", n))
        .chain(std::iter::once("hhi".to_string()))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..traj.times.len() {
        let s = &traj.states[k];
        let row: Vec<String> = std::iter::once(traj.times[k])
            .chain(s.viewers.iter().copied())
            .chain(s.quality.iter().copied())
            .chain(traj.shares[k].iter().copied())
            .chain(std::iter::once(traj.hhi[k]))
            .map(fmt_f64)
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// `t, theta_1..theta_N, lambda_1..lambda_N, n_1..n_N, w`; with joint quality
/// the quality costates follow as `lambda_q_1..lambda_q_N`.
pub fn write_control_csv<W: Write>(sol: &ControlSolution, out: W) -> std::io::Result<()> {
    let n = sol.theta_path.first().map_or(0, |t| t.len());
    let dim = sol.costates.first().map_or(0, |c| c.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("theta", n))
        .chain(numbered("lambda", n))
        .collect();
    if dim > n {
        header.extend(numbered("lambda_q", n));
    }
    header.extend(numbered("n", n));
    header.push("w".into());
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..sol.times.len() {
        let row: Vec<String> = std::iter::once(sol.times[k])
            .chain(sol.theta_path[k].iter().copied())
            .chain(sol.costates[k].iter().copied())
            .chain(sol.states[k].viewers.iter().copied())
            .chain(std::iter::once(sol.welfare_path[k]))
            .map(fmt_f64)
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Long format: one column per swept parameter, then `metric, value`.
pub fn write_sweep_csv<W: Write>(res: &SweepResult, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = res.params.iter().map(String::as_str).chain(["metric", "value"]).collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in &res.rows {
        let mut row: Vec<String> = r.coords.iter().map(|x| fmt_f64(*x)).collect();
        row.push(r.metric.name().into());
        row.push(fmt_f64(r.value));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.25), "2.5000000000000000e-1");
    }
}
