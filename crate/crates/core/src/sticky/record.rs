use serde::{Deserialize, Serialize};

use super::CollisionEvent;
use crate::dynamics::{particle_gradients, ClusterState};
use crate::potentials::{Interaction, Potential};

/// Snapshot of every original particle. Frames are stored at each
/// integrator step, at every requested sample time and at every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub time: f64,
    pub positions: Vec<f64>,
    /// Right limits `γ̇(t+)`.
    pub velocities: Vec<f64>,
    /// Left limits `γ̇(t-)`; equal to `velocities` unless `is_event`.
    pub left_velocities: Vec<f64>,
    /// `V'(γ_p) + sum_q m_q W'(γ_p - γ_q)`; empty when not stored.
    pub gradients: Vec<f64>,
    /// Cluster index of each particle, valid on `[time, next frame)`.
    pub membership: Vec<usize>,
    pub is_sample: bool,
    pub is_event: bool,
}

impl Frame {
    pub fn cluster_count(&self) -> usize {
        self.membership.last().map_or(0, |c| c + 1)
    }

    /// Coalesced cluster state. `left` selects left-limit velocities.
    pub fn cluster_state(&self, particle_masses: &[f64], left: bool) -> ClusterState {
        let vel = if left { &self.left_velocities } else { &self.velocities };
        let k = self.cluster_count();
        let mut masses = vec![0.0; k];
        let mut positions = vec![0.0; k];
        let mut velocities = vec![0.0; k];
        for (p, &c) in self.membership.iter().enumerate() {
            masses[c] += particle_masses[p];
            positions[c] = self.positions[p];
            velocities[c] = vel[p];
        }
        ClusterState {
            time: self.time,
            masses,
            positions,
            velocities,
            membership: self.membership.clone(),
            particle_masses: particle_masses.to_vec(),
        }
    }
}

/// Borrowed per-particle state at one quadrature node.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub time: f64,
    pub positions: &'a [f64],
    pub velocities: &'a [f64],
    pub gradients: &'a [f64],
    pub membership: &'a [usize],
}

#[derive(Debug, Clone)]
struct OwnedNode {
    time: f64,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    gradients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub particle_masses: Vec<f64>,
    pub frames: Vec<Frame>,
    pub events: Vec<CollisionEvent>,
    pub horizon: f64,
    /// Coincident initial positions were merged at `t = 0`.
    pub premerged: bool,
}

impl TrajectoryRecord {
    pub fn particle_count(&self) -> usize {
        self.particle_masses.len()
    }

    pub fn initial(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn final_frame(&self) -> &Frame {
        self.frames.last().expect("record has frames")
    }

    pub fn samples(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.is_sample)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.samples().map(|f| f.time).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= 0.0 && t <= self.horizon && t <= self.final_frame().time
    }

    /// Index `k` with `frames[k].time <= t < frames[k+1].time`, clamped to
    /// the last frame.
    pub fn segment_index(&self, t: f64) -> usize {
        let k = self.frames.partition_point(|f| f.time <= t);
        k.saturating_sub(1)
    }

    fn exact_frame(&self, t: f64) -> Option<&Frame> {
        let k = self.segment_index(t);
        let f = &self.frames[k];
        (f.time == t).then_some(f)
    }

    /// Positions and right-limit velocities at `t` (cubic Hermite between
    /// frames). Returns `None` outside the record.
    pub fn state_at(&self, t: f64) -> Option<(Vec<f64>, Vec<f64>, &[usize])> {
        if !self.contains(t) {
            return None;
        }
        if let Some(f) = self.exact_frame(t) {
            return Some((f.positions.clone(), f.velocities.clone(), &f.membership));
        }
        let k = self.segment_index(t);
        let (x, v) = hermite(&self.frames[k], &self.frames[k + 1], t);
        Some((x, v, &self.frames[k].membership))
    }

    /// Left-limit velocities at `t`.
    pub fn left_state_at(&self, t: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.contains(t) || t == 0.0 {
            return None;
        }
        if let Some(f) = self.exact_frame(t) {
            return Some((f.positions.clone(), f.left_velocities.clone()));
        }
        self.state_at(t).map(|(x, v, _)| (x, v))
    }

    pub fn cluster_state_at(&self, t: f64) -> Option<ClusterState> {
        if !self.contains(t) {
            return None;
        }
        if let Some(f) = self.exact_frame(t) {
            return Some(f.cluster_state(&self.particle_masses, false));
        }
        let k = self.segment_index(t);
        let (positions, velocities) = hermite(&self.frames[k], &self.frames[k + 1], t);
        let frame = Frame {
            time: t,
            positions,
            left_velocities: velocities.clone(),
            velocities,
            gradients: Vec::new(),
            membership: self.frames[k].membership.clone(),
            is_sample: false,
            is_event: false,
        };
        Some(frame.cluster_state(&self.particle_masses, false))
    }

    /// Fills `gradients` on frames that lack them.
    pub fn fill_gradients(&mut self, v: &dyn Potential, w: &Interaction) {
        let masses = &self.particle_masses;
        for f in &mut self.frames {
            if f.gradients.len() != f.positions.len() {
                f.gradients = particle_gradients(&f.positions, masses, v, w);
            }
        }
    }

    /// Visits the trapezoid segments covering `[s, t]`. Each segment runs
    /// from a right-limit node to a left-limit node, so event jumps never
    /// fall inside a segment. Frame intervals longer than `spacing` are
    /// subdivided by Hermite interpolation; gradients at interpolated nodes
    /// are evaluated from `forces` (empty slices when `None`).
    pub fn for_each_segment<F>(&self, s: f64, t: f64, spacing: Option<f64>, forces: Option<(&dyn Potential, &Interaction)>, mut f: F)
    where
        F: FnMut(f64, NodeView<'_>, NodeView<'_>),
    {
        if !(s < t) {
            return;
        }
        let k0 = self.segment_index(s);
        let k1 = self.segment_index(t);
        let mut k = k0;
        while k <= k1 {
            let a = &self.frames[k];
            let lo = a.time.max(s);
            let hi = if k + 1 < self.frames.len() { self.frames[k + 1].time.min(t) } else { t };
            if hi > lo {
                let b = self.frames.get(k + 1);
                let pieces = match (spacing, b) {
                    (Some(h), Some(_)) if h > 0.0 => ((hi - lo) / h).ceil().max(1.0) as usize,
                    _ => 1,
                };
                // `None` means the node coincides with a stored frame.
                let node = |tau: f64| -> Option<OwnedNode> {
                    let b = b?;
                    if tau == a.time || tau == b.time {
                        return None;
                    }
                    let (x, v) = hermite(a, b, tau);
                    let g = forces.map_or_else(Vec::new, |(pv, pw)| particle_gradients(&x, &self.particle_masses, pv, pw));
                    Some(OwnedNode { time: tau, positions: x, velocities: v, gradients: g })
                };
                let mut prev = node(lo);
                for j in 0..pieces {
                    let tau_end = if j + 1 == pieces { hi } else { lo + (hi - lo) * (j + 1) as f64 / pieces as f64 };
                    let next = node(tau_end);
                    let start = match &prev {
                        Some(n) => n.view(&a.membership),
                        None => NodeView {
                            time: a.time,
                            positions: &a.positions,
                            velocities: &a.velocities,
                            gradients: &a.gradients,
                            membership: &a.membership,
                        },
                    };
                    let end = match (&next, b) {
                        (Some(n), _) => n.view(&a.membership),
                        (None, Some(b)) => NodeView {
                            time: b.time,
                            positions: &b.positions,
                            velocities: &b.left_velocities,
                            gradients: &b.gradients,
                            membership: &a.membership,
                        },
                        (None, None) => start,
                    };
                    f(end.time - start.time, start, end);
                    prev = next;
                }
            }
            k += 1;
        }
    }

    /// Trapezoid integral of a scalar functional of the node state.
    pub fn integrate<F>(&self, s: f64, t: f64, spacing: Option<f64>, forces: Option<(&dyn Potential, &Interaction)>, mut g: F) -> f64
    where
        F: FnMut(NodeView<'_>) -> f64,
    {
        let mut total = 0.0;
        self.for_each_segment(s, t, spacing, forces, |h, a, b| total += 0.5 * h * (g(a) + g(b)));
        total
    }

    /// True when no two particles that share a cluster ever separate.
    pub fn is_monotone_coarsening(&self) -> bool {
        self.frames.windows(2).all(|w| {
            let mut image = vec![usize::MAX; w[0].cluster_count()];
            w[0].membership.iter().zip(&w[1].membership).all(|(&c0, &c1)| {
                if image[c0] == usize::MAX {
                    image[c0] = c1;
                }
                image[c0] == c1
            })
        })
    }
}

impl OwnedNode {
    fn view<'a>(&'a self, membership: &'a [usize]) -> NodeView<'a> {
        NodeView { time: self.time, positions: &self.positions, velocities: &self.velocities, gradients: &self.gradients, membership }
    }
}

/// Cubic Hermite position and its derivative on `[a.time, b.time]`, using
/// the right limit at `a` and the left limit at `b`.
fn hermite(a: &Frame, b: &Frame, t: f64) -> (Vec<f64>, Vec<f64>) {
    let h = b.time - a.time;
    let s = (t - a.time) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let (h00, h10, h01, h11) = (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2);
    let (d00, d10, d01, d11) = (6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s);
    let n = a.positions.len();
    let mut x = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for p in 0..n {
        let (x0, v0, x1, v1) = (a.positions[p], a.velocities[p], b.positions[p], b.left_velocities[p]);
        x.push(h00 * x0 + h10 * h * v0 + h01 * x1 + h11 * h * v1);
        v.push((d00 * x0 + d01 * x1) / h + d10 * v0 + d11 * v1);
    }
    (x, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64, x: Vec<f64>, v: Vec<f64>) -> Frame {
        Frame {
            time: t,
            left_velocities: v.clone(),
            gradients: vec![0.0; x.len()],
            membership: (0..x.len()).collect(),
            positions: x,
            velocities: v,
            is_sample: true,
            is_event: false,
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        // x(t) = t^3 - t on [0, 2]
        let a = frame(0.0, vec![0.0], vec![-1.0]);
        let b = frame(2.0, vec![6.0], vec![11.0]);
        let (x, v) = hermite(&a, &b, 0.7);
        assert!((x[0] - (0.343 - 0.7)).abs() < 1e-14);
        assert!((v[0] - (3.0 * 0.49 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_uses_limits_across_jumps() {
        let a = frame(0.0, vec![0.0], vec![1.0]);
        let mut b = frame(1.0, vec![1.0], vec![0.0]);
        b.left_velocities = vec![1.0];
        b.is_event = true;
        let c = frame(2.0, vec![1.0], vec![0.0]);
        let rec = TrajectoryRecord { particle_masses: vec![1.0], frames: vec![a, b, c], events: vec![], horizon: 2.0, premerged: false };
        let moved = rec.integrate(0.0, 2.0, None, None, |n| n.velocities[0]);
        assert_eq!(moved, 1.0);
        let fine = rec.integrate(0.0, 2.0, Some(0.1), None, |n| n.velocities[0]);
        assert!((fine - 1.0).abs() < 1e-12);
        let part = rec.integrate(0.25, 0.75, Some(0.1), None, |n| n.velocities[0]);
        assert!((part - 0.5).abs() < 1e-12);
    }
}
