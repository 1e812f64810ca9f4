//! Newtonian motion of clusters between collision events.
//!
//! Every cluster carries the summed mass of its original particles and
//! obeys `x_i'' = -V'(x_i) - sum_j m_j W'(x_i - x_j)` where the sum runs over
//! all clusters (the `j = i` term vanishes because `W'` is odd).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potentials::{Interaction, Potential, SemiconvexityBudget};
use crate::quadrature::gronwall_factor;

/// Tolerance on `sum m_i = 1`.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("cluster positions lost strict ordering at index {index} (gap {gap:e}); a collision was stepped over")]
    OrderViolation { index: usize, gap: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("masses, positions and velocities must have equal nonzero length")]
    LengthMismatch,
    #[error("masses must be positive and finite")]
    NonPositiveMass,
    #[error("masses sum to {0}, expected 1")]
    MassNotNormalized(f64),
    #[error("positions must be finite and sorted nondecreasingly")]
    Unsorted,
    #[error("velocities must be finite")]
    NonFiniteVelocity,
    #[error("cluster {cluster} mass {mass} differs from member sum {members}")]
    MembershipMass { cluster: usize, mass: f64, members: f64 },
    #[error("membership is not surjective onto clusters")]
    MembershipNotSurjective,
}

/// Partition of the original particles into clusters, ordered by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub time: f64,
    pub masses: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Original particle index -> cluster index.
    pub membership: Vec<usize>,
    pub particle_masses: Vec<f64>,
}

impl ClusterState {
    /// One cluster per particle. Positions may repeat; the sticky driver
    /// merges coincident particles before the run starts.
    pub fn from_particles(masses: Vec<f64>, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self, StateError> {
        let n = masses.len();
        if n == 0 || positions.len() != n || velocities.len() != n {
            return Err(StateError::LengthMismatch);
        }
        if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(StateError::NonPositiveMass);
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(StateError::MassNotNormalized(total));
        }
        if positions.iter().any(|x| !x.is_finite()) || positions.windows(2).any(|w| w[1] < w[0]) {
            return Err(StateError::Unsorted);
        }
        if velocities.iter().any(|v| !v.is_finite()) {
            return Err(StateError::NonFiniteVelocity);
        }
        Ok(Self { time: 0.0, particle_masses: masses.clone(), masses, positions, velocities, membership: (0..n).collect() })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn particle_count(&self) -> usize {
        self.particle_masses.len()
    }

    /// Smallest adjacent gap and its left index.
    pub fn min_gap(&self) -> Option<(usize, f64)> {
        self.positions.windows(2).enumerate().map(|(i, w)| (i, w[1] - w[0])).min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn check_ordering(&self) -> Result<(), DynamicsError> {
        match self.min_gap() {
            Some((index, gap)) if !(gap > 0.0) => Err(DynamicsError::OrderViolation { index, gap }),
            _ => Ok(()),
        }
    }

    /// Checks mass normalization, strict ordering and membership consistency.
    pub fn validate(&self) -> Result<(), StateError> {
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(StateError::MassNotNormalized(total));
        }
        if self.positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(StateError::Unsorted);
        }
        let mut member_mass = vec![0.0; self.len()];
        for (p, &c) in self.membership.iter().enumerate() {
            if c >= self.len() {
                return Err(StateError::MembershipNotSurjective);
            }
            member_mass[c] += self.particle_masses[p];
        }
        for (cluster, (&mass, &members)) in self.masses.iter().zip(&member_mass).enumerate() {
            if members == 0.0 {
                return Err(StateError::MembershipNotSurjective);
            }
            if (mass - members).abs() > MASS_TOL {
                return Err(StateError::MembershipMass { cluster, mass, members });
            }
        }
        Ok(())
    }

    pub fn momentum(&self) -> f64 {
        self.masses.iter().zip(&self.velocities).map(|(m, v)| m * v).sum()
    }

    pub fn center_of_mass(&self) -> f64 {
        self.masses.iter().zip(&self.positions).map(|(m, x)| m * x).sum()
    }

    /// `sum m_i v_i^2` over clusters.
    pub fn kinetic_quantity(&self) -> f64 {
        self.masses.iter().zip(&self.velocities).map(|(m, v)| m * v * v).sum()
    }
}

/// Acceleration of cluster `i`.
pub fn force(state: &ClusterState, v: &dyn Potential, w: &Interaction, i: usize) -> f64 {
    let xi = state.positions[i];
    let mut s = 0.0;
    for (j, (&mj, &xj)) in state.masses.iter().zip(&state.positions).enumerate() {
        if j != i {
            s += mj * w.deriv(xi - xj);
        }
    }
    -v.deriv(xi) - s
}

/// Accelerations of every cluster, bit-identical to calling [`force`] for
/// each index: each `W'` pair is evaluated once and applied with opposite
/// signs, relying on exact oddness of `W'`.
pub fn accelerations(state: &ClusterState, v: &dyn Potential, w: &Interaction) -> Vec<f64> {
    let n = state.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        let xi = state.positions[i];
        for j in i + 1..n {
            let d = w.deriv(xi - state.positions[j]);
            sums[i] += state.masses[j] * d;
            sums[j] += state.masses[i] * (-d);
        }
    }
    state.positions.iter().zip(sums).map(|(&x, s)| -v.deriv(x) - s).collect()
}

/// `V'(x_p) + sum_q m_q W'(x_p - x_q)` for every original particle, given
/// particle positions sorted nondecreasingly. Co-located particles are
/// grouped so each cluster pair is evaluated once.
pub fn particle_gradients(positions: &[f64], particle_masses: &[f64], v: &dyn Potential, w: &Interaction) -> Vec<f64> {
    let mut cluster_x = Vec::new();
    let mut cluster_m: Vec<f64> = Vec::new();
    let mut owner = Vec::with_capacity(positions.len());
    for (&x, &m) in positions.iter().zip(particle_masses) {
        if cluster_x.last() == Some(&x) {
            *cluster_m.last_mut().unwrap() += m;
        } else {
            cluster_x.push(x);
            cluster_m.push(m);
        }
        owner.push(cluster_x.len() - 1);
    }
    let n = cluster_x.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = w.deriv(cluster_x[i] - cluster_x[j]);
            sums[i] += cluster_m[j] * d;
            sums[j] += cluster_m[i] * (-d);
        }
    }
    let grads: Vec<f64> = cluster_x.iter().zip(&sums).map(|(&x, s)| v.deriv(x) + s).collect();
    owner.into_iter().map(|c| grads[c]).collect()
}

/// One velocity-Verlet step without the ordering check. Returns the new
/// state and its accelerations.
pub(crate) fn verlet(state: &ClusterState, accel: &[f64], dt: f64, v: &dyn Potential, w: &Interaction) -> (ClusterState, Vec<f64>) {
    let mut next = state.clone();
    for ((x, u), a) in next.positions.iter_mut().zip(&state.velocities).zip(accel) {
        *x += dt * u + 0.5 * dt * dt * a;
    }
    let accel_next = accelerations(&next, v, w);
    for ((u, a0), a1) in next.velocities.iter_mut().zip(accel).zip(&accel_next) {
        *u += 0.5 * dt * (a0 + a1);
    }
    next.time = state.time + dt;
    (next, accel_next)
}

/// Velocity-Verlet step of size `dt`.
pub fn step(state: &ClusterState, v: &dyn Potential, w: &Interaction, dt: f64) -> Result<ClusterState, DynamicsError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::BadTimeStep(dt));
    }
    let accel = accelerations(state, v, w);
    let (next, _) = verlet(state, &accel, dt, v, w);
    next.check_ordering()?;
    Ok(next)
}

/// Largest admissible step for a given budget.
pub fn max_stable_dt(budget: &SemiconvexityBudget) -> f64 {
    0.1 / (1.0 + budget.kappa).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub kinetic: f64,
    pub ambient: f64,
    pub interaction: f64,
    pub total: f64,
}

pub fn energy(state: &ClusterState, v: &dyn Potential, w: &Interaction) -> EnergyLedger {
    let kinetic = 0.5 * state.kinetic_quantity();
    let ambient: f64 = state.masses.iter().zip(&state.positions).map(|(m, &x)| m * v.value(x)).sum();
    let mut double = 0.0;
    for (&mi, &xi) in state.masses.iter().zip(&state.positions) {
        for (&mj, &xj) in state.masses.iter().zip(&state.positions) {
            double += mi * mj * w.value(xi - xj);
        }
    }
    let interaction = 0.5 * double;
    EnergyLedger { kinetic, ambient, interaction, total: kinetic + ambient + interaction }
}

/// `sum m v^2 + sum m V'(x)^2 + 1/2 sum sum m m W'(x_i - x_j)^2` of the
/// initial data.
pub fn initial_data_energy(state: &ClusterState, v: &dyn Potential, w: &Interaction) -> f64 {
    let ambient: f64 = state.masses.iter().zip(&state.positions).map(|(m, &x)| m * v.deriv(x).powi(2)).sum();
    let mut pair = 0.0;
    for (&mi, &xi) in state.masses.iter().zip(&state.positions) {
        for (&mj, &xj) in state.masses.iter().zip(&state.positions) {
            pair += mi * mj * w.deriv(xi - xj).powi(2);
        }
    }
    state.kinetic_quantity() + ambient + 0.5 * pair
}

/// A-priori bounds on the kinetic quantity `sum m_i x_i'(s)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBounds {
    /// Bound on `int_0^t sum m_i x_i'(s)^2 ds`.
    pub integrated: f64,
    /// Bound on `sum m_i x_i'(t)^2`.
    pub instantaneous: f64,
}

pub fn energy_estimate_bounds(
    init: &ClusterState,
    v: &dyn Potential,
    w: &Interaction,
    budget: &SemiconvexityBudget,
    t: f64,
) -> EnergyBounds {
    let data = initial_data_energy(init, v, w);
    let factor = gronwall_factor(budget.kappa, t);
    EnergyBounds { integrated: factor * data, instantaneous: (1.0 + budget.kappa * t * factor) * data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{SemiconvexPotential, Shape};
    use std::f64::consts::PI;

    fn state(masses: &[f64], xs: &[f64], vs: &[f64]) -> ClusterState {
        ClusterState::from_particles(masses.to_vec(), xs.to_vec(), vs.to_vec()).unwrap()
    }

    fn integrate(mut s: ClusterState, v: &dyn Potential, w: &Interaction, dt: f64, t_end: f64) -> ClusterState {
        let steps = (t_end / dt).round() as usize;
        let mut a = accelerations(&s, v, w);
        for _ in 0..steps {
            let (n, na) = verlet(&s, &a, dt, v, w);
            s = n;
            a = na;
        }
        s
    }

    #[test]
    fn force_examples() {
        let zero = SemiconvexPotential::zero();
        let wz = Interaction::zero();
        let s = state(&[0.5, 0.5], &[0.0, 2.0], &[0.0, 0.0]);
        assert_eq!(force(&s, &zero, &wz, 0), 0.0);

        let harmonic = SemiconvexPotential::quadratic(1.0);
        let single = state(&[1.0], &[1.0], &[0.0]);
        assert_eq!(force(&single, &harmonic, &wz, 0), -1.0);

        let wq = Interaction::from_potential(SemiconvexPotential::quadratic(1.0));
        assert_eq!(force(&s, &zero, &wq, 0), 1.0);
        assert_eq!(force(&s, &zero, &wq, 1), -1.0);
    }

    #[test]
    fn accelerations_match_force_bitwise() {
        let v = SemiconvexPotential::new(Shape::CosineWell { depth: 0.8, wavenumber: 1.7 }).unwrap();
        let w = Interaction::from_potential(SemiconvexPotential::new(Shape::Huber { delta: 0.3, strength: -0.6 }).unwrap());
        let n = 9;
        let masses = vec![1.0 / n as f64; n];
        let xs: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin() + k as f64 * 0.5).collect();
        let s = state(&masses, &xs, &vec![0.0; n]);
        let acc = accelerations(&s, &v, &w);
        for (i, a) in acc.iter().enumerate() {
            assert_eq!(*a, force(&s, &v, &w, i));
        }
    }

    #[test]
    fn free_flight_step() {
        let zero = SemiconvexPotential::zero();
        let s = state(&[1.0], &[0.0], &[1.0]);
        let n = step(&s, &zero, &Interaction::zero(), 0.25).unwrap();
        assert_eq!(n.positions[0], 0.25);
        assert_eq!(n.velocities[0], 1.0);
        assert_eq!(n.time, 0.25);
        assert!(matches!(step(&s, &zero, &Interaction::zero(), 0.0), Err(DynamicsError::BadTimeStep(_))));
    }

    #[test]
    fn step_reports_missed_collisions() {
        let zero = SemiconvexPotential::zero();
        let s = state(&[0.5, 0.5], &[0.0, 1.0], &[1.0, -1.0]);
        let err = step(&s, &zero, &Interaction::zero(), 0.75).unwrap_err();
        assert!(matches!(err, DynamicsError::OrderViolation { index: 0, .. }));
    }

    #[test]
    fn harmonic_oscillator_half_period() {
        let v = SemiconvexPotential::quadratic(1.0);
        let s = integrate(state(&[1.0], &[1.0], &[0.0]), &v, &Interaction::zero(), 1e-4, PI);
        assert!((s.positions[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn attractive_pair_relative_coordinate() {
        let zero = SemiconvexPotential::zero();
        let w = Interaction::from_potential(SemiconvexPotential::quadratic(1.0));
        // whole steps of 1e-4 end at 7854e-4, just past pi/4
        let s = integrate(state(&[0.5, 0.5], &[-1.0, 1.0], &[0.0, 0.0]), &zero, &w, 1e-4, PI / 4.0);
        let c = (7854.0 * 1e-4f64).cos();
        assert!((s.positions[0] + c).abs() < 1e-6);
        assert!((s.positions[1] - c).abs() < 1e-6);
    }

    #[test]
    fn energy_examples() {
        let zero = SemiconvexPotential::zero();
        let s = state(&[0.5, 0.5], &[0.0, 2.0], &[0.0, 0.0]);
        assert_eq!(energy(&s, &zero, &Interaction::zero()).total, 0.0);

        let w = Interaction::from_potential(SemiconvexPotential::quadratic(1.0));
        let single = state(&[1.0], &[0.0], &[2.0]);
        let e = energy(&single, &zero, &w);
        assert_eq!((e.kinetic, e.interaction, e.total), (2.0, 0.0, 2.0));

        let e = energy(&s, &zero, &w);
        assert!((e.interaction - 0.5).abs() < 1e-15);
        assert_eq!(e.total, e.kinetic + e.ambient + e.interaction);
    }

    #[test]
    fn energy_is_nearly_conserved_by_verlet() {
        let v = SemiconvexPotential::quadratic(1.0);
        let w = Interaction::zero();
        let s0 = state(&[1.0], &[1.0], &[0.0]);
        let e0 = energy(&s0, &v, &w).total;
        let drift = |dt: f64| {
            let s = integrate(s0.clone(), &v, &w, dt, 2.0);
            (energy(&s, &v, &w).total - e0).abs()
        };
        let (d1, d2) = (drift(1e-2), drift(5e-3));
        assert!(d1 < 1e-4);
        // second order
        assert!(d2 < 0.3 * d1, "{d1} {d2}");
    }

    #[test]
    fn center_of_mass_moves_uniformly_without_ambient_force() {
        let zero = SemiconvexPotential::zero();
        let w = Interaction::from_potential(SemiconvexPotential::new(Shape::CosineWell { depth: 0.5, wavenumber: 2.0 }).unwrap());
        let s0 = state(&[0.2, 0.3, 0.5], &[-1.0, 0.2, 1.1], &[0.4, -0.1, 0.3]);
        let p0 = s0.momentum();
        let c0 = s0.center_of_mass();
        let s = integrate(s0, &zero, &w, 1e-3, 1.0);
        assert!((s.momentum() - p0).abs() < 1e-9);
        assert!((s.center_of_mass() - (c0 + p0)).abs() < 1e-9);
    }

    #[test]
    fn estimate_bounds_examples() {
        let zero = SemiconvexPotential::zero();
        let wz = Interaction::zero();
        let budget = SemiconvexityBudget::new(0.0, 0.0).unwrap();
        let rest = state(&[1.0], &[0.3], &[0.0]);
        let b = energy_estimate_bounds(&rest, &zero, &wz, &budget, 2.0);
        assert_eq!((b.integrated, b.instantaneous), (0.0, 0.0));

        let moving = state(&[1.0], &[0.0], &[1.0]);
        let b = energy_estimate_bounds(&moving, &zero, &wz, &budget, 1.0);
        // 1 + 3 e^{1.5} int_0^1 e^{-1.5 s^2} ds, with the integral from erf
        let integral = 0.5 * (PI / 1.5).sqrt() * statrs::function::erf::erf(1.5f64.sqrt());
        let expected = 1.0 + 3.0 * 1.5f64.exp() * integral;
        assert!((b.instantaneous - expected).abs() < 1e-9, "{} vs {expected}", b.instantaneous);

        let v = SemiconvexPotential::quadratic(1.0);
        let w = Interaction::from_potential(SemiconvexPotential::quadratic(2.0));
        let s = state(&[0.25, 0.75], &[-0.5, 1.0], &[0.2, -1.0]);
        let b = energy_estimate_bounds(&s, &v, &w, &budget, 0.0);
        assert_eq!(b.integrated, 0.0);
        let data = 0.25 * 0.04 + 0.75 * 1.0 + 0.25 * 0.25 + 0.75 * 1.0 + 0.5 * 2.0 * 0.25 * 0.75 * 9.0;
        assert!((b.instantaneous - data).abs() < 1e-12);
    }

    #[test]
    fn state_validation() {
        assert_eq!(ClusterState::from_particles(vec![0.5, 0.4], vec![0.0, 1.0], vec![0.0, 0.0]), Err(StateError::MassNotNormalized(0.9)));
        assert_eq!(ClusterState::from_particles(vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 0.0]), Err(StateError::Unsorted));
        let s = state(&[0.5, 0.5], &[0.0, 1.0], &[0.0, 0.0]);
        assert!(s.validate().is_ok());
        let dup = state(&[0.5, 0.5], &[0.0, 0.0], &[0.0, 0.0]);
        assert!(dup.validate().is_err());
    }
}
