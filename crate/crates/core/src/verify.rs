//! Checks of the quantitative inequalities and of the weak formulation on
//! a completed trajectory record.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{energy, energy_estimate_bounds, ClusterState};
use crate::measures::{psi_budget, MeasureError};
use crate::potentials::{Interaction, Potential, SemiconvexityBudget};
use crate::sticky::{audit_averaging_with, node_gradients, Frame, NodeView, StickyError, TrajectoryRecord};

pub const QSPP_TOL: f64 = 1e-7;
pub const ENTROPY_TOL: f64 = 1e-7;
pub const ENERGY_STEP_TOL: f64 = 1e-6;
pub const JENSEN_TOL: f64 = 1e-12;
pub const ESTIMATE_TOL: f64 = 1e-7;
pub const FLOW_TOL: f64 = 1e-7;
pub const WEAK_TOL: f64 = 1e-4;
pub const AVERAGING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("test function reaches t = {reach} beyond the horizon {horizon}")]
    UnsupportedTestFunction { reach: f64, horizon: f64 },
    #[error("time {t} lies outside the record [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    Sticky(#[from] StickyError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

fn bump(r: f64) -> (f64, f64) {
    if r.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - r * r;
    let b = (1.0 - 1.0 / q).exp();
    (b, b * (-2.0 * r / (q * q)))
}

/// Tensor bump `b((x - center)/space_radius) b((t - center_t)/time_radius)`
/// with `b(r) = exp(1 - 1/(1 - r^2))` on `|r| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: f64,
    pub center_t: f64,
    pub space_radius: f64,
    pub time_radius: f64,
}

impl TestFunction {
    /// `(φ, ∂_t φ, ∂_x φ)` at `(x, t)`.
    pub fn eval(&self, x: f64, t: f64) -> (f64, f64, f64) {
        let (bx, dbx) = bump((x - self.center) / self.space_radius);
        let (bt, dbt) = bump((t - self.center_t) / self.time_radius);
        (bx * bt, bx * dbt / self.time_radius, dbx / self.space_radius * bt)
    }

    pub fn time_reach(&self) -> f64 {
        self.center_t + self.time_radius
    }
}

/// Spatial extent of all stored positions.
pub fn bounding_box(record: &TrajectoryRecord) -> (f64, f64) {
    record.frames.iter().flat_map(|f| f.positions.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `count / 3` spatial placements (at least one) tiling the motion's
/// bounding box, times up to three temporal placements at `0`, `H/3` and
/// `2H/3` with radius `H/3`.
pub fn default_test_family(record: &TrajectoryRecord, count: usize) -> Vec<TestFunction> {
    let (lo, hi) = bounding_box(record);
    let width = (hi - lo).max(1.0);
    let mid = 0.5 * (lo + hi);
    let (lo, width) = (mid - 0.5 * width, width);
    let count = count.max(1);
    let n_t = count.min(3);
    let n_x = (count / n_t).max(1);
    let h = record.horizon;
    let mut out = Vec::with_capacity(n_x * n_t);
    for i in 0..n_x {
        let center = lo + width * (i as f64 + 0.5) / n_x as f64;
        for j in 0..n_t {
            out.push(TestFunction {
                center,
                center_t: h * j as f64 / 3.0,
                space_radius: 0.75 * width / n_x as f64 + 0.25 * width,
                time_radius: h / 3.0,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub check: String,
    pub pass: bool,
    pub violation: f64,
    pub tolerance: f64,
    pub location: String,
}

impl CheckEntry {
    pub fn new(check: &str, violation: f64, tolerance: f64, location: String) -> Self {
        Self { check: check.to_string(), pass: violation <= tolerance, violation, tolerance, location }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub entries: Vec<CheckEntry>,
    /// `(t, E(t))` at the sample times.
    pub energy_trace: Vec<(f64, f64)>,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, check: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.check == check)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:<5} {:>12} {:>12}  location", "check", "pass", "violation", "tolerance");
        for e in &self.entries {
            let verdict = if e.pass { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{:<22} {:<5} {:>12.4e} {:>12.4e}  {}", e.check, verdict, e.violation, e.tolerance, e.location);
        }
        out
    }
}

/// `sinh(√c t)`, or `t` when `c = 0`.
pub fn qspp_scale(c: f64, t: f64) -> f64 {
    if c > 0.0 {
        (c.sqrt() * t).sinh()
    } else {
        t
    }
}

/// `√c / tanh(√c t)`, tending to `1/t` as `c -> 0`.
pub fn entropy_coefficient(c: f64, t: f64) -> f64 {
    let z = c.max(0.0).sqrt() * t;
    if z < 1e-4 {
        (1.0 + z * z / 3.0) / t
    } else {
        c.sqrt() / z.tanh()
    }
}

fn positive_samples(record: &TrajectoryRecord) -> Vec<&Frame> {
    record.samples().filter(|f| f.time > 0.0).collect()
}

/// Worst increase of `|γ_i - γ_j| / sinh(√c t)` between consecutive
/// sample times, normalized by `1 + |γ_i(s) - γ_j(s)|`.
pub fn check_qspp(record: &TrajectoryRecord, c: f64) -> CheckEntry {
    let frames = positive_samples(record);
    let n = record.particle_count();
    let mut worst = 0.0f64;
    let mut location = String::from("none");
    for w in frames.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (sa, sb) = (qspp_scale(c, a.time), qspp_scale(c, b.time));
        for i in 0..n {
            for j in i + 1..n {
                let gs = (a.positions[j] - a.positions[i]).abs();
                let gt = (b.positions[j] - b.positions[i]).abs();
                let excess = (gt / sb - gs / sa) / (1.0 + gs);
                if excess > worst {
                    worst = excess;
                    location = format!("pair ({i},{j}) s={} t={}", a.time, b.time);
                }
            }
        }
    }
    CheckEntry::new("qspp", worst, QSPP_TOL, location)
}

/// Evenly spread sample frames with `t > 0` that are not event frames.
pub fn entropy_times(record: &TrajectoryRecord, count: usize) -> Vec<f64> {
    let eligible: Vec<f64> = positive_samples(record).into_iter().filter(|f| !f.is_event).map(|f| f.time).collect();
    if eligible.len() <= count {
        return eligible;
    }
    (0..count).map(|k| eligible[(k * (eligible.len() - 1)) / (count - 1).max(1)]).collect()
}

/// Worst `(v(x) - v(y))(x - y) - C(t)(x - y)^2` over distinct atoms,
/// normalized by `1 + (x - y)^2`.
pub fn check_entropy(record: &TrajectoryRecord, t_samples: &[f64], c: f64) -> Result<CheckEntry, VerifyError> {
    let mut worst = f64::NEG_INFINITY;
    let mut location = String::from("none");
    for &t in t_samples {
        let state = record.cluster_state_at(t).ok_or(VerifyError::OutOfHorizon { t, horizon: record.horizon })?;
        let coef = entropy_coefficient(c, t);
        let k = state.len();
        for i in 0..k {
            for j in i + 1..k {
                let dx = state.positions[i] - state.positions[j];
                let lhs = (state.velocities[i] - state.velocities[j]) * dx;
                let excess = (lhs - coef * dx * dx) / (1.0 + dx * dx);
                if excess > worst {
                    worst = excess;
                    location = format!("clusters ({i},{j}) t={t}");
                }
            }
        }
    }
    Ok(CheckEntry::new("entropy", worst.max(0.0), ENTROPY_TOL, location))
}

/// `(t, E(t))` at the sample frames, from right-limit velocities.
pub fn energy_trace(record: &TrajectoryRecord, v: &dyn Potential, w: &Interaction) -> Vec<(f64, f64)> {
    record.samples().map(|f| (f.time, energy(&f.cluster_state(&record.particle_masses, false), v, w).total)).collect()
}

/// Worst sample-to-sample energy increase relative to `1 + |E(0)|`.
pub fn check_energy_monotone(record: &TrajectoryRecord, v: &dyn Potential, w: &Interaction) -> CheckEntry {
    let trace = energy_trace(record, v, w);
    let scale = 1.0 + trace.first().map_or(0.0, |e| e.1.abs());
    let mut worst = 0.0f64;
    let mut location = String::from("none");
    for p in trace.windows(2) {
        let rise = (p[1].1 - p[0].1) / scale;
        if rise > worst {
            worst = rise;
            location = format!("s={} t={}", p[0].0, p[1].0);
        }
    }
    CheckEntry::new("energy_monotone", worst, ENERGY_STEP_TOL, location)
}

fn particle_kinetic(masses: &[f64], velocities: &[f64]) -> f64 {
    0.5 * masses.iter().zip(velocities).map(|(m, v)| m * v * v).sum::<f64>()
}

/// At each event frame the kinetic energy drop equals the summed Jensen
/// gaps of the events at that time, and no gap is negative.
pub fn check_collision_dissipation(record: &TrajectoryRecord) -> CheckEntry {
    let mut worst = 0.0f64;
    let mut location = String::from("none");
    for f in record.frames.iter().filter(|f| f.is_event) {
        let drop = particle_kinetic(&record.particle_masses, &f.left_velocities) - particle_kinetic(&record.particle_masses, &f.velocities);
        let gaps: Vec<f64> = record.events.iter().filter(|e| e.time == f.time).map(|e| e.jensen_gap()).collect();
        let total: f64 = gaps.iter().sum();
        let defect = (drop - total).abs().max(gaps.iter().fold(0.0f64, |m, &g| m.max(-g)));
        if defect > worst {
            worst = defect;
            location = format!("event t={}", f.time);
        }
    }
    CheckEntry::new("collision_dissipation", worst, JENSEN_TOL, location)
}

/// Mass and momentum residuals of the weak formulation for one test
/// function, by trapezoid quadrature in time with nodes no farther apart
/// than `dt_quad`.
pub fn weak_residuals(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    phi: &TestFunction,
    dt_quad: Option<f64>,
) -> Result<(f64, f64), VerifyError> {
    if phi.time_reach() > record.horizon {
        return Err(VerifyError::UnsupportedTestFunction { reach: phi.time_reach(), horizon: record.horizon });
    }
    let masses = &record.particle_masses;
    let t_end = phi.time_reach().min(record.final_frame().time);
    let (mut mass, mut momentum) = (0.0, 0.0);
    let integrand = |node: &NodeView<'_>, gradients: &[f64]| -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for p in 0..masses.len() {
            let (x, u) = (node.positions[p], node.velocities[p]);
            let (f, ft, fx) = phi.eval(x, node.time);
            if f == 0.0 && ft == 0.0 && fx == 0.0 {
                continue;
            }
            a += masses[p] * (ft + u * fx);
            b += masses[p] * (u * ft + u * u * fx - f * gradients[p]);
        }
        (a, b)
    };
    record.for_each_segment(0.0, t_end, dt_quad, Some((v, w)), |h, a, b| {
        let ga = node_gradients(a, masses, v, w);
        let gb = node_gradients(b, masses, v, w);
        let (ma, pa) = integrand(&a, &ga);
        let (mb, pb) = integrand(&b, &gb);
        mass += 0.5 * h * (ma + mb);
        momentum += 0.5 * h * (pa + pb);
    });
    let init = record.initial();
    for p in 0..masses.len() {
        let (f, _, _) = phi.eval(init.positions[p], 0.0);
        mass += masses[p] * f;
        momentum += masses[p] * f * init.left_velocities[p];
    }
    Ok((mass, momentum))
}

pub fn check_weak_solution(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    test_functions: &[TestFunction],
    dt_quad: Option<f64>,
    tolerance: f64,
) -> Result<CheckEntry, VerifyError> {
    let mut worst = 0.0f64;
    let mut location = String::from("none");
    for (k, phi) in test_functions.iter().enumerate() {
        let (m, p) = weak_residuals(record, v, w, phi, dt_quad)?;
        for (name, r) in [("mass", m), ("momentum", p)] {
            if r.abs() > worst {
                worst = r.abs();
                location = format!("{name} residual, test function {k}");
            }
        }
    }
    Ok(CheckEntry::new("weak_solution", worst, tolerance, location))
}

/// Largest `|f(x) - f(y)| / |x - y|` of the map sending cluster positions
/// at `s` to their positions at `t`, relative to `sinh(√c t)/sinh(√c s)`.
pub fn check_flow_lipschitz(record: &TrajectoryRecord, c: f64, s: f64, t: f64) -> Result<CheckEntry, VerifyError> {
    if !(s > 0.0) || s > t {
        return Err(VerifyError::OutOfHorizon { t: s, horizon: record.horizon });
    }
    let at_s = record.state_at(s).ok_or(VerifyError::OutOfHorizon { t: s, horizon: record.horizon })?;
    let at_t = record.state_at(t).ok_or(VerifyError::OutOfHorizon { t, horizon: record.horizon })?;
    let bound = qspp_scale(c, t) / qspp_scale(c, s);
    let (xs, xt, membership) = (&at_s.0, &at_t.0, at_s.2);
    // first particle of each cluster
    let reps: Vec<usize> = (0..membership.len()).filter(|&p| p == 0 || membership[p] != membership[p - 1]).collect();
    let mut worst = 0.0f64;
    let mut location = String::from("none");
    for (a, &i) in reps.iter().enumerate() {
        for &j in &reps[a + 1..] {
            let q = (xt[j] - xt[i]).abs() / (xs[j] - xs[i]).abs();
            if q / bound > worst {
                worst = q / bound;
                location = format!("particles ({i},{j}) s={s} t={t}");
            }
        }
    }
    Ok(CheckEntry::new("flow_lipschitz", worst, 1.0 + FLOW_TOL, location))
}

/// Particle-level initial data as a cluster state with one particle per
/// cluster (left-limit velocities at `t = 0`).
pub fn initial_particles(record: &TrajectoryRecord) -> ClusterState {
    let f = record.initial();
    ClusterState {
        time: 0.0,
        masses: record.particle_masses.clone(),
        positions: f.positions.clone(),
        velocities: f.left_velocities.clone(),
        membership: (0..record.particle_count()).collect(),
        particle_masses: record.particle_masses.clone(),
    }
}

/// Both a-priori kinetic bounds at every sample time; the violation is the
/// worst `(value - bound)/(1 + bound)`, so a nonpositive value means
/// nonnegative slack.
pub fn check_energy_estimates(record: &TrajectoryRecord, v: &dyn Potential, w: &Interaction, budget: &SemiconvexityBudget) -> CheckEntry {
    let init = initial_particles(record);
    let masses = &record.particle_masses;
    let mut worst = f64::NEG_INFINITY;
    let mut location = String::from("none");
    let mut integrated = 0.0;
    let mut last = 0.0;
    for f in record.samples() {
        integrated += record.integrate(last, f.time, None, None, |n| 2.0 * particle_kinetic(masses, n.velocities));
        last = f.time;
        let bounds = energy_estimate_bounds(&init, v, w, budget, f.time);
        let instant = 2.0 * particle_kinetic(masses, &f.velocities);
        for (name, value, bound) in [("integrated", integrated, bounds.integrated), ("instantaneous", instant, bounds.instantaneous)] {
            let excess = (value - bound) / (1.0 + bound);
            if excess > worst {
                worst = excess;
                location = format!("{name} t={}", f.time);
            }
        }
    }
    CheckEntry::new("energy_estimates", worst, ESTIMATE_TOL, location)
}

pub fn check_sticky(record: &TrajectoryRecord) -> CheckEntry {
    let ok = record.is_monotone_coarsening();
    let counts_ok = record.frames.windows(2).all(|w| w[1].cluster_count() <= w[0].cluster_count());
    let violation = if ok && counts_ok { 0.0 } else { 1.0 };
    CheckEntry::new("sticky_membership", violation, 0.0, String::from("frames"))
}

/// Momentum averaging identity for `g = 1` and `g = cos` between the start
/// and the end of the record, relative to the momentum scale.
pub fn check_averaging(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    spacing: Option<f64>,
) -> Result<CheckEntry, VerifyError> {
    let t_end = record.final_frame().time;
    let scale = {
        let (_, v0, _) = record.state_at(0.0).expect("record starts at 0");
        let (_, v1, _) = record.state_at(t_end).expect("record ends");
        let m = &record.particle_masses;
        1.0 + m.iter().zip(v0.iter().zip(&v1)).map(|(m, (a, b))| m * (a.abs() + b.abs())).sum::<f64>()
    };
    let mut worst = 0.0f64;
    let mut location = String::from("none");
    for (name, s, t) in [("g=1", 0.0, t_end), ("g=cos", 0.0, t_end), ("g=cos", 0.5 * t_end, t_end)] {
        let r = if name == "g=1" {
            audit_averaging_with(record, v, w, s, t, |_| 1.0, spacing)?
        } else {
            audit_averaging_with(record, v, w, s, t, f64::cos, spacing)?
        };
        if r / scale > worst {
            worst = r / scale;
            location = format!("{name} s={s} t={t}");
        }
    }
    Ok(CheckEntry::new("averaging", worst, AVERAGING_TOL, location))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Overrides `c = a + b`.
    pub c: Option<f64>,
    pub weak_tolerance: f64,
    pub test_functions: usize,
    pub entropy_samples: usize,
    /// Terms of the `Ψ` series; defaults to `floor(horizon)`.
    pub psi_terms: Option<usize>,
    /// Quadrature spacing for the weak residuals and the averaging audit.
    pub dt_quad: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { c: None, weak_tolerance: WEAK_TOL, test_functions: 12, entropy_samples: 50, psi_terms: None, dt_quad: None }
    }
}

/// Runs every check in a fixed order.
pub fn verify_all(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    budget: &SemiconvexityBudget,
    config: &VerifyConfig,
) -> Result<DiagnosticsReport, VerifyError> {
    let c = config.c.unwrap_or(budget.c);
    let h = record.horizon;
    let mut entries = vec![check_sticky(record), check_qspp(record, c)];
    entries.push(check_entropy(record, &entropy_times(record, config.entropy_samples), c)?);
    entries.push(check_energy_monotone(record, v, w));
    entries.push(check_collision_dissipation(record));
    entries.push(check_energy_estimates(record, v, w, budget));
    let family = default_test_family(record, config.test_functions);
    entries.push(check_weak_solution(record, v, w, &family, config.dt_quad, config.weak_tolerance)?);
    let mut flow = CheckEntry::new("flow_lipschitz", 0.0, 1.0 + FLOW_TOL, String::from("none"));
    for (s, t) in [(0.25 * h, 0.5 * h), (0.25 * h, h), (0.5 * h, h)] {
        let e = check_flow_lipschitz(record, c, s, t)?;
        if e.violation > flow.violation {
            flow = e;
        }
    }
    entries.push(flow);
    entries.push(check_averaging(record, v, w, config.dt_quad)?);
    let n_max = config.psi_terms.unwrap_or(h.floor() as usize).min(h.floor() as usize);
    if n_max >= 1 {
        let psi = psi_budget(record, v, w, budget, n_max)?;
        let excess = (psi.psi_average - psi.bound) / (1.0 + psi.bound);
        entries.push(CheckEntry::new(
            "psi_budget",
            excess,
            0.0,
            format!("n_max={n_max} psi={:e} bound={:e} tail<={:e}", psi.psi_average, psi.bound, psi.tail_bound),
        ));
    }
    Ok(DiagnosticsReport { entries, energy_trace: energy_trace(record, v, w) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::SemiconvexPotential;
    use crate::sticky::{run, RunConfig};

    fn head_on(dt: f64) -> TrajectoryRecord {
        let s = ClusterState::from_particles(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, -1.0]).unwrap();
        run(&s, &SemiconvexPotential::zero(), &Interaction::zero(), &RunConfig::uniform(1.0, dt, 200)).unwrap()
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let phi = TestFunction { center: 0.3, center_t: 0.5, space_radius: 0.7, time_radius: 0.4 };
        let h = 1e-5;
        for &(x, t) in &[(0.1, 0.4), (0.6, 0.7), (-0.2, 0.3)] {
            let (_, ft, fx) = phi.eval(x, t);
            let dt = (phi.eval(x, t + h).0 - phi.eval(x, t - h).0) / (2.0 * h);
            let dx = (phi.eval(x + h, t).0 - phi.eval(x - h, t).0) / (2.0 * h);
            assert!((ft - dt).abs() < 1e-7 && (fx - dx).abs() < 1e-7);
        }
        assert_eq!(phi.eval(1.5, 0.5), (0.0, 0.0, 0.0));
    }

    #[test]
    fn entropy_coefficient_limit() {
        for &t in &[0.1, 1.0, 3.0] {
            let rel = (entropy_coefficient(1e-14, t) * t - 1.0).abs();
            assert!(rel < 1e-8);
            let z = entropy_coefficient(1e-6, t);
            let direct = 1e-3 / (1e-3 * t).tanh();
            assert!((z - direct).abs() / direct < 1e-10);
        }
    }

    #[test]
    fn qspp_examples() {
        let rec = head_on(1e-3);
        let e = check_qspp(&rec, 0.0);
        assert!(e.pass && e.violation == 0.0);
        let single = ClusterState::from_particles(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let rec1 = run(&single, &SemiconvexPotential::zero(), &Interaction::zero(), &RunConfig::uniform(1.0, 0.01, 10)).unwrap();
        assert_eq!(check_qspp(&rec1, 0.0).violation, 0.0);
    }

    #[test]
    fn entropy_head_on_quarter() {
        // at t = 0.25: v(x) - v(y) = 2, x - y = -0.5, LHS = -1 <= RHS = 1
        let rec = head_on(1e-3);
        let st = rec.cluster_state_at(0.25).unwrap();
        let dx = st.positions[0] - st.positions[1];
        let lhs = (st.velocities[0] - st.velocities[1]) * dx;
        assert!((lhs + 1.0).abs() < 1e-12);
        assert!((entropy_coefficient(0.0, 0.25) * dx * dx - 1.0).abs() < 1e-12);
        assert!(check_entropy(&rec, &entropy_times(&rec, 50), 0.0).unwrap().pass);
        assert_eq!(entropy_times(&rec, 50).len(), 50);
    }

    #[test]
    fn energy_checks_head_on() {
        let rec = head_on(1e-3);
        let (v, w) = (SemiconvexPotential::zero(), Interaction::zero());
        assert!(check_energy_monotone(&rec, &v, &w).pass);
        let trace = energy_trace(&rec, &v, &w);
        assert_eq!(trace[0].1, 0.5);
        assert_eq!(trace.last().unwrap().1, 0.0);
        let e = check_collision_dissipation(&rec);
        assert!(e.pass, "{e:?}");
        let budget = SemiconvexityBudget::new(0.0, 0.0).unwrap();
        let e = check_energy_estimates(&rec, &v, &w, &budget);
        assert!(e.pass && e.violation <= 0.0);
    }

    #[test]
    fn weak_residuals_small_and_zero_off_support() {
        let rec = head_on(1e-3);
        let (v, w) = (SemiconvexPotential::zero(), Interaction::zero());
        let family = default_test_family(&rec, 12);
        assert_eq!(family.len(), 12);
        let e = check_weak_solution(&rec, &v, &w, &family, Some(1e-3), WEAK_TOL).unwrap();
        assert!(e.pass, "{e:?}");
        let far = TestFunction { center: 50.0, center_t: 0.5, space_radius: 1.0, time_radius: 0.5 };
        assert_eq!(weak_residuals(&rec, &v, &w, &far, Some(1e-3)).unwrap(), (0.0, 0.0));
        let late = TestFunction { center: 0.0, center_t: 0.9, space_radius: 1.0, time_radius: 0.5 };
        assert!(matches!(weak_residuals(&rec, &v, &w, &late, None), Err(VerifyError::UnsupportedTestFunction { .. })));
    }

    #[test]
    fn flow_lipschitz_examples() {
        let rec = head_on(1e-3);
        let e = check_flow_lipschitz(&rec, 0.0, 0.25, 0.75).unwrap();
        assert_eq!(e.violation, 0.0);
        let e = check_flow_lipschitz(&rec, 0.0, 0.25, 0.25).unwrap();
        assert!(e.pass && (e.violation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_report_is_deterministic() {
        let rec = head_on(1e-3);
        let (v, w) = (SemiconvexPotential::zero(), Interaction::zero());
        let budget = SemiconvexityBudget::new(0.0, 0.0).unwrap();
        let a = verify_all(&rec, &v, &w, &budget, &VerifyConfig::default()).unwrap();
        let b = verify_all(&rec, &v, &w, &budget, &VerifyConfig::default()).unwrap();
        assert!(a.all_pass(), "{}", a.table());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
