//! Sticky particle trajectories: event-driven integration with perfectly
//! inelastic merging of clusters at first intersection times.

mod partition;
mod record;

pub use partition::Partition;
pub use record::{Frame, NodeView, TrajectoryRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{accelerations, particle_gradients, verlet, ClusterState, DynamicsError, StateError};
use crate::potentials::{Interaction, Potential, PotentialError, SemiconvexityBudget};

/// Gaps at or below this are treated as contact.
pub const CONTACT_TOL: f64 = 1e-9;

/// Width to which collision brackets are bisected.
pub fn time_tolerance(t: f64) -> f64 {
    1e-12 * (1.0 + t.abs())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StickyError {
    #[error("merge set {0:?} is not a contiguous run of cluster indices")]
    NonAdjacent(Vec<usize>),
    #[error("clusters {indices:?} are {spread:e} apart, not in contact")]
    NotInContact { indices: Vec<usize>, spread: f64 },
    #[error("invalid run configuration: {0}")]
    BadConfig(String),
    #[error("time {t} lies outside the record [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    /// Pre-merge cluster indices.
    pub merged_cluster_indices: Vec<usize>,
    /// Original particles of the merged cluster.
    pub member_particles: Vec<usize>,
    /// Masses of the merged clusters, aligned with `pre_velocities`.
    pub masses: Vec<f64>,
    pub position: f64,
    pub pre_velocities: Vec<f64>,
    pub post_velocity: f64,
}

impl CollisionEvent {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn kinetic_before(&self) -> f64 {
        0.5 * self.masses.iter().zip(&self.pre_velocities).map(|(m, v)| m * v * v).sum::<f64>()
    }

    pub fn kinetic_after(&self) -> f64 {
        0.5 * self.total_mass() * self.post_velocity * self.post_velocity
    }

    pub fn jensen_gap(&self) -> f64 {
        self.kinetic_before() - self.kinetic_after()
    }
}

/// Collision found by [`locate_collision`].
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionBracket {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Contiguous runs of cluster indices in contact at `t_hi`.
    pub sets: Vec<Vec<usize>>,
    /// Unmerged state at `t_hi`.
    pub state: ClusterState,
}

fn min_gap(positions: &[f64]) -> f64 {
    positions.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Contiguous runs of clusters joined by gaps `<= CONTACT_TOL`. Closed
/// gaps are unioned transitively.
pub fn contact_sets(positions: &[f64]) -> Vec<Vec<usize>> {
    let mut part = Partition::new(positions.len());
    for (i, w) in positions.windows(2).enumerate() {
        if w[1] - w[0] <= CONTACT_TOL {
            part.union(i, i + 1);
        }
    }
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for i in 0..positions.len() {
        if i > 0 && part.same(i - 1, i) {
            sets.last_mut().expect("run started").push(i);
        } else {
            sets.push(vec![i]);
        }
    }
    sets.retain(|s| s.len() >= 2);
    sets
}

fn bracket(state: &ClusterState, accel: &[f64], h: f64, v: &dyn Potential, w: &Interaction) -> Option<CollisionBracket> {
    let (trial, _) = verlet(state, accel, h, v, w);
    let gap = min_gap(&trial.positions);
    if gap > CONTACT_TOL {
        return None;
    }
    let t0 = state.time;
    let (lo, hi, hit) = if gap <= 0.0 {
        let (mut lo, mut hi) = (0.0, h);
        while hi - lo > time_tolerance(t0 + hi) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (probe, _) = verlet(state, accel, mid, v, w);
            if min_gap(&probe.positions) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (hit, _) = verlet(state, accel, hi, v, w);
        (lo, hi, hit)
    } else {
        (h, h, trial)
    };
    let mut hit = hit;
    hit.time = t0 + hi;
    Some(CollisionBracket { t_lo: t0 + lo, t_hi: t0 + hi, sets: contact_sets(&hit.positions), state: hit })
}

/// Trial Verlet step of length `dt_max`; if a gap closes, bisects to the
/// first contact.
pub fn locate_collision(state: &ClusterState, v: &dyn Potential, w: &Interaction, dt_max: f64) -> Option<CollisionBracket> {
    let accel = accelerations(state, v, w);
    bracket(state, &accel, dt_max, v, w)
}

/// Replaces each set of touching clusters by one cluster carrying the
/// summed mass, the mass-weighted mean position and the mass-weighted mean
/// velocity. Events are returned in position order.
pub fn merge(state: &ClusterState, sets: &[Vec<usize>]) -> Result<(ClusterState, Vec<CollisionEvent>), StickyError> {
    let n = state.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (k, set) in sets.iter().enumerate() {
        let contiguous = set.len() >= 2 && set.windows(2).all(|p| p[1] == p[0] + 1) && *set.last().unwrap() < n;
        if !contiguous || set.iter().any(|&i| owner[i].is_some()) {
            return Err(StickyError::NonAdjacent(set.clone()));
        }
        let spread = state.positions[*set.last().unwrap()] - state.positions[set[0]];
        if spread.abs() > CONTACT_TOL {
            return Err(StickyError::NotInContact { indices: set.clone(), spread });
        }
        for &i in set {
            owner[i] = Some(k);
        }
    }

    let mut masses = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    let mut remap = vec![0; n];
    let mut events = Vec::new();
    let mut i = 0;
    while i < n {
        let new_index = masses.len();
        match owner[i] {
            None => {
                masses.push(state.masses[i]);
                positions.push(state.positions[i]);
                velocities.push(state.velocities[i]);
                remap[i] = new_index;
                i += 1;
            }
            Some(k) => {
                let set = &sets[k];
                let ms: Vec<f64> = set.iter().map(|&j| state.masses[j]).collect();
                let vs: Vec<f64> = set.iter().map(|&j| state.velocities[j]).collect();
                let mass: f64 = ms.iter().sum();
                let x = set.iter().map(|&j| state.masses[j] * state.positions[j]).sum::<f64>() / mass;
                let u = set.iter().map(|&j| state.masses[j] * state.velocities[j]).sum::<f64>() / mass;
                for &j in set {
                    remap[j] = new_index;
                }
                let member_particles = state.membership.iter().enumerate().filter(|(_, c)| set.contains(c)).map(|(p, _)| p).collect();
                events.push(CollisionEvent {
                    time: state.time,
                    merged_cluster_indices: set.clone(),
                    member_particles,
                    masses: ms,
                    position: x,
                    pre_velocities: vs,
                    post_velocity: u,
                });
                masses.push(mass);
                positions.push(x);
                velocities.push(u);
                i = set.last().unwrap() + 1;
            }
        }
    }
    let membership = state.membership.iter().map(|&c| remap[c]).collect();
    let merged =
        ClusterState { time: state.time, masses, positions, velocities, membership, particle_masses: state.particle_masses.clone() };
    Ok((merged, events))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: f64,
    /// Base integrator step, capped by [`crate::dynamics::max_stable_dt`].
    pub dt: f64,
    /// Increasing times in `[0, horizon]` that are stored as samples.
    pub sample_times: Vec<f64>,
}

impl RunConfig {
    /// `samples` equal intervals on `[0, horizon]`, endpoints included.
    pub fn uniform(horizon: f64, dt: f64, samples: usize) -> Self {
        let samples = samples.max(1);
        let sample_times = (0..=samples).map(|k| horizon * k as f64 / samples as f64).collect();
        Self { horizon, dt, sample_times }
    }

    fn validate(&self) -> Result<(), StickyError> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(StickyError::BadConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(StickyError::BadConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.sample_times.windows(2).any(|w| !(w[1] > w[0])) || self.sample_times.iter().any(|&t| !(t >= 0.0 && t <= self.horizon)) {
            return Err(StickyError::BadConfig("sample times must increase within [0, horizon]".into()));
        }
        Ok(())
    }
}

fn snapshot(state: &ClusterState, left: &[f64], gradients: Vec<f64>, is_sample: bool, is_event: bool) -> Frame {
    let per_particle = |values: &[f64]| state.membership.iter().map(|&c| values[c]).collect::<Vec<f64>>();
    Frame {
        time: state.time,
        positions: per_particle(&state.positions),
        velocities: per_particle(&state.velocities),
        left_velocities: per_particle(left),
        gradients,
        membership: state.membership.clone(),
        is_sample,
        is_event,
    }
}

fn cluster_gradients(state: &ClusterState, accel: &[f64]) -> Vec<f64> {
    state.membership.iter().map(|&c| -accel[c]).collect()
}

/// Sticky particle trajectories on `[0, horizon]`.
pub fn run(initial: &ClusterState, v: &dyn Potential, w: &Interaction, config: &RunConfig) -> Result<TrajectoryRecord, StickyError> {
    config.validate()?;
    let budget = SemiconvexityBudget::from_potentials(v, w)?;
    let dt = config.dt.min(crate::dynamics::max_stable_dt(&budget));
    let horizon = config.horizon;

    let mut state = initial.clone();
    state.time = 0.0;
    let mut events = Vec::new();
    let left0: Vec<f64> = initial.membership.iter().map(|&c| initial.velocities[c]).collect();
    let sets = contact_sets(&state.positions);
    let premerged = !sets.is_empty();
    if premerged {
        let (merged, ev) = merge(&state, &sets)?;
        state = merged;
        events.extend(ev);
    }
    state.validate()?;
    let mut accel = accelerations(&state, v, w);

    let samples = &config.sample_times;
    let mut next_sample = 0;
    let is_sample_at = |t: f64, next: &mut usize| -> bool {
        let hit = *next < samples.len() && (samples[*next] - t).abs() <= time_tolerance(t);
        if hit {
            *next += 1;
        }
        hit
    };

    let mut first = snapshot(&state, &state.velocities, cluster_gradients(&state, &accel), false, premerged);
    first.left_velocities = left0;
    first.is_sample = is_sample_at(0.0, &mut next_sample);
    let mut frames = vec![first];

    let mut t = 0.0;
    while t < horizon {
        while next_sample < samples.len() && samples[next_sample] <= t + time_tolerance(t) {
            next_sample += 1;
        }
        let mut target = (t + dt).min(horizon);
        if let Some(&ts) = samples.get(next_sample) {
            target = target.min(ts);
        }
        if horizon - target <= time_tolerance(horizon) {
            target = horizon;
        }
        let h = target - t;
        match bracket(&state, &accel, h, v, w) {
            None => {
                let (next, next_accel) = verlet(&state, &accel, h, v, w);
                state = next;
                state.time = target;
                accel = next_accel;
                t = target;
                let sample = is_sample_at(t, &mut next_sample);
                frames.push(snapshot(&state, &state.velocities, cluster_gradients(&state, &accel), sample, false));
            }
            Some(hit) => {
                let pre = hit.state;
                let (merged, mut ev) = merge(&pre, &hit.sets)?;
                let pre_velocities = pre.velocities.clone();
                let pre_membership = pre.membership.clone();
                state = merged;
                accel = accelerations(&state, v, w);
                let left: Vec<f64> = pre_membership.iter().map(|&c| pre_velocities[c]).collect();
                let mut frame = snapshot(&state, &state.velocities, cluster_gradients(&state, &accel), false, true);
                frame.left_velocities = left;
                let last = frames.last_mut().expect("initial frame");
                if pre.time <= last.time {
                    // Contact reached without advancing the clock.
                    frame.left_velocities = std::mem::take(&mut last.left_velocities);
                    frame.is_sample = last.is_sample;
                    frame.time = last.time;
                    *last = frame;
                } else {
                    // An event within tolerance of the horizon ends the run.
                    frame.time = if horizon - pre.time <= time_tolerance(horizon) { horizon } else { pre.time };
                    frame.is_sample = is_sample_at(frame.time, &mut next_sample);
                    t = frame.time;
                    frames.push(frame);
                }
                let t_event = frames.last().expect("initial frame").time;
                state.time = t_event;
                for e in &mut ev {
                    e.time = t_event;
                }
                events.extend(ev);
            }
        }
    }

    Ok(TrajectoryRecord { particle_masses: initial.particle_masses.clone(), frames, events, horizon, premerged })
}

/// Residual of the momentum averaging identity
/// `sum m_i g(γ_i(t)) γ̇_i(t+) = sum m_i g(γ_i(t)) [γ̇_i(s+) - ∫_s^t ∇_i dτ]`
/// where `∇_i` is the total potential gradient on particle `i`.
pub fn audit_averaging<G: Fn(f64) -> f64>(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    s: f64,
    t: f64,
    g: G,
) -> Result<f64, StickyError> {
    audit_averaging_with(record, v, w, s, t, g, None)
}

/// [`audit_averaging`] with the time integral refined to nodes at most
/// `spacing` apart.
pub fn audit_averaging_with<G: Fn(f64) -> f64>(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    s: f64,
    t: f64,
    g: G,
    spacing: Option<f64>,
) -> Result<f64, StickyError> {
    for tau in [s, t] {
        if !record.contains(tau) {
            return Err(StickyError::OutOfHorizon { t: tau, horizon: record.horizon });
        }
    }
    if s > t {
        return Err(StickyError::BadConfig(format!("audit needs s <= t, got s = {s}, t = {t}")));
    }
    let n = record.particle_count();
    let mut impulse = vec![0.0; n];
    record.for_each_segment(s, t, spacing, Some((v, w)), |h, a, b| {
        let ga = node_gradients(a, &record.particle_masses, v, w);
        let gb = node_gradients(b, &record.particle_masses, v, w);
        for p in 0..n {
            impulse[p] += 0.5 * h * (ga[p] + gb[p]);
        }
    });
    let (_, vs, _) = record.state_at(s).expect("checked");
    let (xt, vt, _) = record.state_at(t).expect("checked");
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for p in 0..n {
        let weight = record.particle_masses[p] * g(xt[p]);
        lhs += weight * vt[p];
        rhs += weight * (vs[p] - impulse[p]);
    }
    Ok((lhs - rhs).abs())
}

/// Stored gradients of a node, or freshly evaluated ones.
pub fn node_gradients<'a>(node: NodeView<'a>, masses: &[f64], v: &dyn Potential, w: &Interaction) -> std::borrow::Cow<'a, [f64]> {
    if node.gradients.len() == node.positions.len() {
        std::borrow::Cow::Borrowed(node.gradients)
    } else {
        std::borrow::Cow::Owned(particle_gradients(node.positions, masses, v, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::SemiconvexPotential;
    use std::f64::consts::FRAC_PI_2;

    fn state(masses: &[f64], xs: &[f64], vs: &[f64]) -> ClusterState {
        ClusterState::from_particles(masses.to_vec(), xs.to_vec(), vs.to_vec()).unwrap()
    }

    fn free() -> (SemiconvexPotential, Interaction) {
        (SemiconvexPotential::zero(), Interaction::zero())
    }

    #[test]
    fn locate_head_on() {
        let (v, w) = free();
        let s = state(&[0.5, 0.5], &[0.0, 1.0], &[1.0, -1.0]);
        let b = locate_collision(&s, &v, &w, 0.75).unwrap();
        assert!((b.t_hi - 0.5).abs() < 1e-12);
        assert!(b.t_hi - b.t_lo <= time_tolerance(0.5));
        assert_eq!(b.sets, vec![vec![0, 1]]);
        assert!((b.state.positions[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn locate_diverging_is_none() {
        let (v, w) = free();
        let s = state(&[0.5, 0.5], &[0.0, 1.0], &[-1.0, 1.0]);
        assert!(locate_collision(&s, &v, &w, 5.0).is_none());
    }

    #[test]
    fn locate_simultaneous_triple() {
        let (v, w) = free();
        let third = 1.0 / 3.0;
        let s = state(&[third, third, 1.0 - 2.0 * third], &[0.0, 1.0, 2.0], &[1.0, 0.0, -1.0]);
        let b = locate_collision(&s, &v, &w, 2.0).unwrap();
        assert!((b.t_hi - 1.0).abs() < 1e-11);
        assert_eq!(b.sets, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn merge_examples() {
        let s = state(&[0.5, 0.5], &[0.5, 0.5], &[1.0, -1.0]);
        let (m, ev) = merge(&s, &[vec![0, 1]]).unwrap();
        assert_eq!(m.velocities, vec![0.0]);
        assert_eq!(m.membership, vec![0, 0]);
        assert_eq!(ev[0].member_particles, vec![0, 1]);

        let s = state(&[0.25, 0.75], &[0.0, 0.0], &[2.0, -2.0]);
        let (m, _) = merge(&s, &[vec![0, 1]]).unwrap();
        assert_eq!(m.velocities, vec![-1.0]);

        let third = 1.0 / 3.0;
        let s = state(&[third, third, 1.0 - 2.0 * third], &[1.0, 1.0, 1.0], &[3.0, 0.0, -3.0]);
        let (m, ev) = merge(&s, &[vec![0, 1, 2]]).unwrap();
        assert!(m.velocities[0].abs() < 1e-15);
        let before = 2.0 * ev[0].kinetic_before();
        assert!((before - 6.0).abs() < 1e-12);
        assert!((ev[0].jensen_gap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn merge_rejects_bad_sets() {
        let s = state(&[0.25, 0.25, 0.5], &[0.0, 0.0, 0.0], &[1.0, 0.0, -1.0]);
        assert!(matches!(merge(&s, &[vec![0, 2]]), Err(StickyError::NonAdjacent(_))));
        let s = state(&[0.5, 0.5], &[0.0, 1.0], &[1.0, -1.0]);
        assert!(matches!(merge(&s, &[vec![0, 1]]), Err(StickyError::NotInContact { .. })));
    }

    #[test]
    fn single_free_particle() {
        let (v, w) = free();
        let rec = run(&state(&[1.0], &[0.0], &[1.0]), &v, &w, &RunConfig::uniform(2.0, 0.01, 20)).unwrap();
        assert!(rec.events.is_empty());
        for f in rec.samples() {
            assert!((f.positions[0] - f.time).abs() < 1e-12);
        }
        assert_eq!(rec.sample_times().len(), 21);
        assert_eq!(rec.final_frame().time, 2.0);
    }

    #[test]
    fn head_on_run() {
        let (v, w) = free();
        let rec = run(&state(&[0.5, 0.5], &[0.0, 1.0], &[1.0, -1.0]), &v, &w, &RunConfig::uniform(1.0, 0.01, 10)).unwrap();
        assert_eq!(rec.events.len(), 1);
        let e = &rec.events[0];
        assert!((e.time - 0.5).abs() < 1e-9);
        assert!((e.position - 0.5).abs() < 1e-9);
        assert_eq!(e.post_velocity, 0.0);
        let last = rec.final_frame();
        assert_eq!(last.membership, vec![0, 0]);
        assert!((last.positions[0] - 0.5).abs() < 1e-9);
        assert!(rec.is_monotone_coarsening());
        let times: Vec<f64> = rec.frames.iter().map(|f| f.time).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn collapse_at_the_horizon_ends_on_it() {
        let (v, w) = free();
        let xs: Vec<f64> = (0..8).map(|i| (i as f64 + 0.5) / 8.0).collect();
        let vs: Vec<f64> = xs.iter().map(|x| -x).collect();
        let rec = run(&state(&[0.125; 8], &xs, &vs), &v, &w, &RunConfig::uniform(1.0, 1e-3, 10)).unwrap();
        assert!(rec.contains(1.0));
        assert_eq!(rec.final_frame().time, 1.0);
        assert_eq!(rec.final_frame().cluster_count(), 1);
        for e in &rec.events {
            assert!(rec.frames.iter().any(|f| f.is_event && f.time == e.time));
        }
    }

    #[test]
    fn harmonic_pair_meets_at_quarter_period() {
        let v = SemiconvexPotential::quadratic(1.0);
        let w = Interaction::zero();
        let rec = run(&state(&[0.5, 0.5], &[-1.0, 1.0], &[0.0, 0.0]), &v, &w, &RunConfig::uniform(4.0, 1e-3, 40)).unwrap();
        assert_eq!(rec.events.len(), 1);
        assert!((rec.events[0].time - FRAC_PI_2).abs() < 1e-6);
        assert!(rec.events[0].position.abs() < 1e-12);
        assert!(rec.events[0].post_velocity.abs() < 1e-12);
    }

    #[test]
    fn coincident_start_is_premerged() {
        let (v, w) = free();
        let rec = run(&state(&[0.25, 0.25, 0.5], &[0.0, 0.0, 1.0], &[1.0, -1.0, 0.0]), &v, &w, &RunConfig::uniform(1.0, 0.1, 4)).unwrap();
        assert!(rec.premerged);
        assert_eq!(rec.events[0].time, 0.0);
        let f0 = rec.initial();
        assert_eq!(f0.left_velocities, vec![1.0, -1.0, 0.0]);
        assert_eq!(f0.velocities, vec![0.0, 0.0, 0.0]);
        assert!(f0.is_event && f0.is_sample);
    }

    #[test]
    fn averaging_identity() {
        let (v, w) = free();
        let rec = run(&state(&[0.5, 0.5], &[0.0, 1.0], &[1.0, -1.0]), &v, &w, &RunConfig::uniform(1.0, 1e-3, 10)).unwrap();
        assert!(audit_averaging(&rec, &v, &w, 0.0, 1.0, |_| 1.0).unwrap() < 1e-14);
        assert!(audit_averaging(&rec, &v, &w, 0.0, 1.0, |x| x).unwrap() < 1e-12);
        let te = rec.events[0].time;
        let x = rec.events[0].position;
        let indicator = |y: f64| if (y - x).abs() < 1e-9 { 1.0 } else { 0.0 };
        assert!(audit_averaging(&rec, &v, &w, te - 1e-6, te, indicator).unwrap() < 1e-10);
        assert!(matches!(audit_averaging(&rec, &v, &w, 0.0, 2.0, |_| 1.0), Err(StickyError::OutOfHorizon { .. })));
    }

    #[test]
    fn averaging_identity_with_forces() {
        let v = SemiconvexPotential::quadratic(1.0);
        let w = Interaction::from_potential(SemiconvexPotential::quadratic(-0.5));
        let rec = run(&state(&[0.2, 0.3, 0.5], &[-1.0, 0.1, 1.0], &[0.5, 0.0, -1.0]), &v, &w, &RunConfig::uniform(3.0, 1e-3, 30)).unwrap();
        for (s, t) in [(0.0, 3.0), (0.4, 2.2)] {
            let r = audit_averaging(&rec, &v, &w, s, t, |x| (x * 0.7).cos()).unwrap();
            assert!(r < 1e-10, "residual {r}");
        }
    }
}
