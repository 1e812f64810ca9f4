//! Plain-text artifacts: trajectory CSV, event JSON lines, measure and CDF
//! tables, and reconstruction of a record from stored files.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{EmpiricalMeasure, VelocityField};
use crate::sticky::{CollisionEvent, Frame, TrajectoryRecord};
use crate::verify::DiagnosticsReport;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("malformed trajectory: {0}")]
    Format(String),
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub particle_index: usize,
    pub cluster_index: usize,
    pub position: f64,
    pub velocity: f64,
}

/// One row per particle for every sample and event frame; velocities are
/// right limits.
pub fn write_trajectory<W: Write>(record: &TrajectoryRecord, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "particle_index", "cluster_index", "position", "velocity"])?;
    for f in record.frames.iter().filter(|f| f.is_sample || f.is_event) {
        let t = fmt_f64(f.time);
        for p in 0..f.positions.len() {
            w.write_record([
                t.as_str(),
                &p.to_string(),
                &f.membership[p].to_string(),
                &fmt_f64(f.positions[p]),
                &fmt_f64(f.velocities[p]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<TrajectoryRow>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn write_events<W: Write>(events: &[CollisionEvent], mut out: W) -> Result<(), IoError> {
    for e in events {
        let line = serde_json::to_string(e).map_err(|source| IoError::Json { line: 0, source })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<CollisionEvent>, IoError> {
    let mut events = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|source| IoError::Json { line: k + 1, source })?);
    }
    Ok(events)
}

/// Columns `position,mass,velocity`.
pub fn write_measure<W: Write>(mu: &EmpiricalMeasure, field: &VelocityField, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["position", "mass", "velocity"])?;
    for ((x, m), v) in mu.positions().iter().zip(mu.masses()).zip(&field.values) {
        w.write_record([fmt_f64(*x), fmt_f64(*m), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `x,F`, one row per CDF breakpoint.
pub fn write_cdf<W: Write>(mu: &EmpiricalMeasure, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "F"])?;
    for (x, f) in mu.cdf_points() {
        w.write_record([fmt_f64(x), fmt_f64(f)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report<W: Write>(report: &DiagnosticsReport, mut out: W) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(report).map_err(|source| IoError::Json { line: 0, source })?;
    writeln!(out, "{text}")?;
    Ok(())
}

/// Rebuilds a record from stored rows. Left limits at event frames come
/// from the events' pre-merge velocities; every stored frame counts as a
/// sample. Gradients are left empty.
pub fn reconstruct(
    rows: &[TrajectoryRow],
    events: &[CollisionEvent],
    particle_masses: &[f64],
    horizon: f64,
) -> Result<TrajectoryRecord, IoError> {
    let n = particle_masses.len();
    if n == 0 || !rows.len().is_multiple_of(n) {
        return Err(IoError::Format(format!("{} rows do not split into frames of {n} particles", rows.len())));
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(rows.len() / n);
    for chunk in rows.chunks(n) {
        let time = chunk[0].time;
        if chunk.iter().enumerate().any(|(p, r)| r.particle_index != p || r.time != time) {
            return Err(IoError::Format(format!("frame at t = {time} is not a full block of particles 0..{n}")));
        }
        if frames.last().is_some_and(|f| !(time > f.time)) {
            return Err(IoError::Format(format!("frame times must increase, found {time}")));
        }
        let velocities: Vec<f64> = chunk.iter().map(|r| r.velocity).collect();
        frames.push(Frame {
            time,
            positions: chunk.iter().map(|r| r.position).collect(),
            left_velocities: velocities.clone(),
            velocities,
            gradients: Vec::new(),
            membership: chunk.iter().map(|r| r.cluster_index).collect(),
            is_sample: true,
            is_event: false,
        });
    }
    let mut premerged = false;
    for e in events {
        let k = frames
            .iter()
            .position(|f| f.time == e.time)
            .ok_or_else(|| IoError::Format(format!("event at t = {} has no stored frame", e.time)))?;
        premerged |= k == 0;
        let prev: Vec<usize> = if k == 0 { (0..n).collect() } else { frames[k - 1].membership.clone() };
        let frame = &mut frames[k];
        frame.is_event = true;
        for &p in &e.member_particles {
            let slot =
                e.merged_cluster_indices.iter().position(|&c| c == prev[p]).ok_or_else(|| {
                    IoError::Format(format!("particle {p} is not in the pre-merge clusters of the event at t = {}", e.time))
                })?;
            frame.left_velocities[p] = e.pre_velocities[slot];
        }
    }
    Ok(TrajectoryRecord { particle_masses: particle_masses.to_vec(), frames, events: events.to_vec(), horizon, premerged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ClusterState;
    use crate::potentials::{Interaction, SemiconvexPotential};
    use crate::sticky::{run, RunConfig};

    #[test]
    fn round_trip_keeps_sample_frames() {
        let s = ClusterState::from_particles(vec![0.25, 0.25, 0.5], vec![0.0, 0.0, 1.0], vec![1.0, 0.2, -1.0]).unwrap();
        let rec = run(&s, &SemiconvexPotential::quadratic(0.5), &Interaction::zero(), &RunConfig::uniform(2.0, 1e-2, 20)).unwrap();
        let mut csv_bytes = Vec::new();
        write_trajectory(&rec, &mut csv_bytes).unwrap();
        let mut ev_bytes = Vec::new();
        write_events(&rec.events, &mut ev_bytes).unwrap();

        let rows = read_trajectory(csv_bytes.as_slice()).unwrap();
        let events = read_events(ev_bytes.as_slice()).unwrap();
        assert_eq!(events, rec.events);
        let back = reconstruct(&rows, &events, &rec.particle_masses, rec.horizon).unwrap();
        assert!(back.premerged);
        let kept: Vec<&Frame> = rec.frames.iter().filter(|f| f.is_sample || f.is_event).collect();
        assert_eq!(back.frames.len(), kept.len());
        for (a, b) in kept.iter().zip(&back.frames) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.positions, b.positions);
            assert_eq!(a.velocities, b.velocities);
            assert_eq!(a.left_velocities, b.left_velocities);
            assert_eq!(a.membership, b.membership);
            assert_eq!(a.is_event, b.is_event);
        }
    }

    #[test]
    fn seventeen_digits() {
        let x = 0.1f64 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
