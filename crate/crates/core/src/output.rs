//! Bit-stable trajectory tables.
//!
//! Every floating-point value is written with 17 significant digits, enough
//! to round-trip an `f64` exactly, and rows are produced in a fixed order so
//! identical runs give byte-identical files.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::dynamics::{FullState, StepRecord};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::limitsys::LimitState;
use crate::C64;

/// One output row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    /// `(pose, [h′₁, h′₂, θ′])` per body.
    pub bodies: Vec<(Pose, [f64; 3])>,
    /// Positions of the vorticity carriers.
    pub vortices: Vec<C64>,
    pub energy: f64,
    pub circulations: Vec<f64>,
    pub margin: f64,
}

impl Sample {
    /// Row of a full-system run; the carriers are the blobs.
    pub fn from_full(state: &FullState, record: &StepRecord) -> Self {
        Sample {
            t: state.t,
            bodies: state.poses.iter().cloned().zip(state.velocities.iter().cloned()).collect(),
            vortices: state.blobs.iter().map(|b| b.position).collect(),
            energy: record.energy,
            circulations: record.circulations.clone(),
            margin: record.margin,
        }
    }

    /// Row of a limit-system run; the carriers are the blobs followed by the
    /// point vortices.
    pub fn from_limit(state: &LimitState, record: &StepRecord) -> Self {
        Sample {
            t: state.t,
            bodies: state.poses.iter().cloned().zip(state.velocities.iter().cloned()).collect(),
            vortices: state.blobs.iter().map(|b| b.position).chain(state.vortices.iter().map(|v| v.position)).collect(),
            energy: record.energy,
            circulations: record.circulations.clone(),
            margin: record.margin,
        }
    }
}

/// `x` with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column header for a run with the given numbers of bodies, carriers and
/// circulation columns.
pub fn csv_header(bodies: usize, vortices: usize, circulations: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for k in 0..bodies {
        for f in ["hx", "hy", "theta", "vx", "vy", "omega"] {
            cols.push(format!("body{k}.{f}"));
        }
    }
    for k in 0..vortices {
        cols.push(format!("vortex{k}.x"));
        cols.push(format!("vortex{k}.y"));
    }
    cols.push("energy".into());
    for k in 0..circulations {
        cols.push(format!("circ{k}"));
    }
    cols.push("margin".into());
    cols.join(",")
}

fn csv_row(s: &Sample) -> String {
    let mut out = fmt_f64(s.t);
    let mut push = |v: f64| {
        out.push(',');
        out.push_str(&fmt_f64(v));
    };
    for (q, p) in &s.bodies {
        for v in [q.h.re, q.h.im, q.theta, p[0], p[1], p[2]] {
            push(v);
        }
    }
    for v in &s.vortices {
        push(v.re);
        push(v.im);
    }
    push(s.energy);
    for c in &s.circulations {
        push(*c);
    }
    push(s.margin);
    out
}

/// Write a header and one row per sample.
pub fn write_csv<W: Write>(mut w: W, samples: &[Sample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::invalid("no samples to write"));
    };
    let header = csv_header(first.bodies.len(), first.vortices.len(), first.circulations.len());
    writeln!(w, "{header}")?;
    for s in samples {
        if s.bodies.len() != first.bodies.len() || s.vortices.len() != first.vortices.len() {
            return Err(Error::invalid("samples disagree on the number of columns"));
        }
        writeln!(w, "{}", csv_row(s))?;
    }
    Ok(())
}

/// CSV text for a list of samples.
pub fn csv_string(samples: &[Sample]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, samples)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// One JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, records: &[T]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Convert a wide trajectory table into the long format `t,series,value`
/// used by plotting tools.  Values are copied verbatim.
pub fn long_format(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::InvalidData("empty table".into()))?.split(',').collect();
    if header.first() != Some(&"t") {
        return Err(Error::InvalidData("first column must be `t`".into()));
    }
    let mut out = String::from("t,series,value\n");
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::InvalidData(format!("row {} has {} cells, expected {}", row + 1, cells.len(), header.len())));
        }
        for (name, value) in header.iter().zip(&cells).skip(1) {
            let _ = writeln!(out, "{},{name},{value}", cells[0]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(1, 1, 1),
            "t,body0.hx,body0.hy,body0.theta,body0.vx,body0.vy,body0.omega,vortex0.x,vortex0.y,energy,circ0,margin"
        );
    }
}
