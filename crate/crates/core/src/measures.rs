//! Empirical measures and velocity fields built from trajectory records,
//! quantization of initial data and one-dimensional transport distances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dynamics::{ClusterState, StateError, MASS_TOL};
use crate::potentials::{Interaction, Potential, SemiconvexityBudget};
use crate::quadrature::gronwall_factor;
use crate::sticky::TrajectoryRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("atom masses sum to {0}, expected 1")]
    MassNotNormalized(f64),
    #[error("atoms need positive masses and finite positions")]
    InvalidAtom,
    #[error("time {t} lies outside the record [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("particles at {position} carry different velocities")]
    IllDefinedVelocity { position: f64 },
    #[error("cluster atoms disagree with the push-forward of particle positions at t = {0}")]
    PushForwardMismatch(f64),
    #[error("quantile function cannot be evaluated: {0}")]
    DegenerateCDF(String),
    #[error("invalid target measure: {0}")]
    InvalidTarget(String),
    #[error("invalid velocity profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Finite convex combination of Dirac masses, sorted and coalesced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    positions: Vec<f64>,
    masses: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        if atoms.is_empty() || atoms.iter().any(|&(x, m)| !x.is_finite() || !(m > 0.0) || !m.is_finite()) {
            return Err(MeasureError::InvalidAtom);
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut positions: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, m) in atoms {
            if positions.last() == Some(&x) {
                *masses.last_mut().unwrap() += m;
            } else {
                positions.push(x);
                masses.push(m);
            }
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(MeasureError::MassNotNormalized(total));
        }
        Ok(Self { positions, masses })
    }

    pub fn dirac(x: f64) -> Self {
        Self { positions: vec![x], masses: vec![1.0] }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Breakpoints `(x, F(x))` of the right-continuous CDF.
    pub fn cdf_points(&self) -> Vec<(f64, f64)> {
        let mut acc = 0.0;
        self.positions
            .iter()
            .zip(&self.masses)
            .map(|(&x, &m)| {
                acc += m;
                (x, acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub support: Vec<f64>,
    pub values: Vec<f64>,
}

impl VelocityField {
    pub fn at(&self, x: f64) -> Option<f64> {
        self.support.binary_search_by(|p| p.total_cmp(&x)).ok().map(|i| self.values[i])
    }
}

/// `ρ_t` and `v(·, t)`, the latter from right-limit velocities. The
/// cluster view is cross-checked against the push-forward of the particle
/// positions and against velocity well-definedness.
pub fn measure_at(record: &TrajectoryRecord, t: f64) -> Result<(EmpiricalMeasure, VelocityField), MeasureError> {
    let (x, v, membership) = record.state_at(t).ok_or(MeasureError::OutOfHorizon { t, horizon: record.horizon })?;
    let k = membership.last().map_or(0, |c| c + 1);
    let mut support = vec![f64::NAN; k];
    let mut values = vec![f64::NAN; k];
    let mut masses = vec![0.0; k];
    for (p, &c) in membership.iter().enumerate() {
        if support[c].is_nan() {
            support[c] = x[p];
            values[c] = v[p];
        } else if support[c] != x[p] || values[c] != v[p] {
            return Err(MeasureError::IllDefinedVelocity { position: x[p] });
        }
        masses[c] += record.particle_masses[p];
    }
    let clusters = EmpiricalMeasure::new(support.iter().copied().zip(masses).collect())?;
    let push_forward = EmpiricalMeasure::new(x.iter().copied().zip(record.particle_masses.iter().copied()).collect())?;
    if clusters != push_forward {
        return Err(MeasureError::PushForwardMismatch(t));
    }
    Ok((clusters, VelocityField { support, values }))
}

/// `∫ |F_μ - F_ν| dx`, exact for step CDFs.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut fm, mut fn_) = (0.0f64, 0.0f64);
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    while i < mu.len() || j < nu.len() {
        let x = match (mu.positions.get(i), nu.positions.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total += (fm - fn_).abs() * (x - p);
        }
        while i < mu.len() && mu.positions[i] == x {
            fm += mu.masses[i];
            i += 1;
        }
        while j < nu.len() && nu.positions[j] == x {
            fn_ += nu.masses[j];
            j += 1;
        }
        prev = Some(x);
    }
    total
}

pub fn second_moment(mu: &EmpiricalMeasure) -> f64 {
    mu.positions.iter().zip(&mu.masses).map(|(x, m)| m * x * x).sum()
}

/// Catalogue of initial measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetMeasure {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Normal law conditioned on `[mean - truncate sd, mean + truncate sd]`.
    Gaussian {
        mean: f64,
        sd: f64,
        #[serde(default = "default_truncate")]
        truncate: f64,
    },
    TwoPoint {
        x0: f64,
        x1: f64,
        p0: f64,
    },
    PointMass {
        x: f64,
    },
    /// Piecewise-linear CDF through nondecreasing `(x, f)` with `f`
    /// running from 0 to 1.
    TabulatedCdf {
        x: Vec<f64>,
        f: Vec<f64>,
    },
}

fn default_truncate() -> f64 {
    4.0
}

impl TargetMeasure {
    pub fn validate(&self) -> Result<(), MeasureError> {
        let bad = |msg: &str| Err(MeasureError::InvalidTarget(msg.to_string()));
        match self {
            Self::Uniform { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => bad("uniform needs lo < hi"),
            Self::Gaussian { sd, truncate, mean } if !(*sd > 0.0) || !(*truncate > 0.0) || !mean.is_finite() => {
                bad("gaussian needs sd > 0 and truncate > 0")
            }
            Self::TwoPoint { x0, x1, p0 } if !(x0 < x1) || !(*p0 > 0.0 && *p0 < 1.0) => bad("two_point needs x0 < x1 and 0 < p0 < 1"),
            Self::PointMass { x } if !x.is_finite() => bad("point mass position must be finite"),
            Self::TabulatedCdf { x, f } => {
                if x.len() < 2 || x.len() != f.len() {
                    return Err(MeasureError::DegenerateCDF("table needs two or more matching (x, F) rows".into()));
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) || f.windows(2).any(|w| w[1] < w[0]) {
                    return Err(MeasureError::DegenerateCDF("table must be increasing in x and nondecreasing in F".into()));
                }
                if f[0] != 0.0 || f[f.len() - 1] != 1.0 {
                    return Err(MeasureError::DegenerateCDF("table F must run from 0 to 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Generalized inverse `inf {x : F(x) >= p}` for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64, MeasureError> {
        self.validate()?;
        if !(p > 0.0 && p < 1.0) {
            return Err(MeasureError::DegenerateCDF(format!("probability {p} outside (0, 1)")));
        }
        match self {
            Self::Uniform { lo, hi } => Ok(lo + p * (hi - lo)),
            Self::Gaussian { mean, sd, truncate } => {
                let normal = Normal::new(0.0, 1.0).map_err(|e| MeasureError::DegenerateCDF(e.to_string()))?;
                let lo = normal.cdf(-truncate);
                let hi = normal.cdf(*truncate);
                let z = normal.inverse_cdf(lo + p * (hi - lo));
                if !z.is_finite() {
                    return Err(MeasureError::DegenerateCDF(format!("normal quantile at {p} is not finite")));
                }
                Ok(mean + sd * z.clamp(-truncate, *truncate))
            }
            Self::TwoPoint { x0, x1, p0 } => Ok(if p <= *p0 { *x0 } else { *x1 }),
            Self::PointMass { x } => Ok(*x),
            Self::TabulatedCdf { x, f } => {
                let k = f.partition_point(|&fk| fk < p);
                if k == 0 {
                    return Ok(x[0]);
                }
                let (f0, f1) = (f[k - 1], f[k]);
                Ok(x[k - 1] + (p - f0) / (f1 - f0) * (x[k] - x[k - 1]))
            }
        }
    }
}

/// Continuous initial velocity profiles with linear growth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityProfile {
    Affine {
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    Sinusoidal {
        amplitude: f64,
        wavenumber: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Continuous triangle wave of the given amplitude and period.
    Sawtooth { amplitude: f64, period: f64 },
    /// Linear interpolation through `(x, v)`, constant outside the table.
    Tabulated { x: Vec<f64>, v: Vec<f64> },
}

impl VelocityProfile {
    pub fn validate(&self) -> Result<(), MeasureError> {
        match self {
            Self::Sawtooth { period, .. } if !(*period > 0.0) => {
                Err(MeasureError::InvalidProfile("sawtooth period must be positive".into()))
            }
            Self::Tabulated { x, v } if x.is_empty() || x.len() != v.len() || x.windows(2).any(|w| !(w[1] > w[0])) => {
                Err(MeasureError::InvalidProfile("table needs matching, increasing x rows".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Self::Affine { slope, intercept } => slope * y + intercept,
            Self::Sinusoidal { amplitude, wavenumber, phase } => amplitude * (wavenumber * y + phase).sin(),
            Self::Sawtooth { amplitude, period } => {
                let u = (y / period).rem_euclid(1.0);
                amplitude * (1.0 - 4.0 * (u - 0.5).abs())
            }
            Self::Tabulated { x, v } => {
                let k = x.partition_point(|&xk| xk <= y);
                if k == 0 {
                    v[0]
                } else if k == x.len() {
                    v[k - 1]
                } else {
                    v[k - 1] + (y - x[k - 1]) / (x[k] - x[k - 1]) * (v[k] - v[k - 1])
                }
            }
        }
    }

    /// A constant `G` with `|v0(x)| <= G (1 + |x|)`.
    pub fn growth_bound(&self) -> f64 {
        match self {
            Self::Affine { slope, intercept } => slope.abs().max(intercept.abs()),
            Self::Sinusoidal { amplitude, .. } | Self::Sawtooth { amplitude, .. } => amplitude.abs(),
            Self::Tabulated { v, .. } => v.iter().fold(0.0, |m: f64, x| m.max(x.abs())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub target: TargetMeasure,
    pub v0: VelocityProfile,
}

/// Quantile-midpoint atoms `F^{-1}((i - 1/2)/N)` with mass `1/N` and
/// velocity `v0`. Repeated quantiles are pushed apart by `i * 1e-12`.
pub fn quantize(init: &InitialData, n: usize) -> Result<ClusterState, MeasureError> {
    if n == 0 {
        return Err(MeasureError::DegenerateCDF("need at least one atom".into()));
    }
    init.v0.validate()?;
    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        let q = init.target.quantile((i as f64 + 0.5) / n as f64)?;
        let q = match xs.last() {
            Some(&prev) if q <= prev => (q + i as f64 * 1e-12).max(f64::next_up(prev)),
            _ => q,
        };
        xs.push(q);
    }
    let vs = xs.iter().map(|&x| init.v0.eval(x)).collect();
    let masses = vec![1.0 / n as f64; n];
    Ok(ClusterState::from_particles(masses, xs, vs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiBudget {
    /// Mass-weighted truncated series average.
    pub psi_average: f64,
    /// `∫ (x^2 + v0^2 + V'^2) dρ0 + 1/2 ∫∫ W'(x - y)^2 dρ0 dρ0`.
    pub bound: f64,
    /// Upper bound on the omitted terms `n > n_max`.
    pub tail_bound: f64,
    pub pass: bool,
}

/// Truncated `Ψ` series averaged over particles, compared with its bound
/// from the initial data.
pub fn psi_budget(
    record: &TrajectoryRecord,
    v: &dyn Potential,
    w: &Interaction,
    budget: &SemiconvexityBudget,
    n_max: usize,
) -> Result<PsiBudget, MeasureError> {
    let t_max = n_max as f64;
    if !record.contains(t_max) {
        return Err(MeasureError::OutOfHorizon { t: t_max, horizon: record.horizon });
    }
    let n = record.particle_count();
    let masses = &record.particle_masses;
    let init = record.initial();
    let x0 = &init.positions;
    let v0 = &init.left_velocities;

    let mut kinetic = vec![0.0; n];
    let mut psi = vec![0.0; n];
    let mut last = 0.0;
    for k in 1..=n_max {
        let tk = k as f64;
        record.for_each_segment(last, tk, None, None, |h, a, b| {
            for p in 0..n {
                kinetic[p] += 0.5 * h * (a.velocities[p].powi(2) + b.velocities[p].powi(2));
            }
        });
        last = tk;
        let weight = 1.0 / (2f64.powi(k as i32) * gronwall_factor(budget.kappa, tk));
        for p in 0..n {
            psi[p] += weight * (kinetic[p] + x0[p] * x0[p]);
        }
    }
    let psi_average: f64 = masses.iter().zip(&psi).map(|(m, s)| m * s).sum();

    let mut single = 0.0;
    let mut pair = 0.0;
    let mut data = 0.0;
    for p in 0..n {
        let dv = v.deriv(x0[p]);
        single += masses[p] * (x0[p] * x0[p] + v0[p] * v0[p] + dv * dv);
        data += masses[p] * (v0[p] * v0[p] + dv * dv);
        for q in 0..n {
            pair += masses[p] * masses[q] * w.deriv(x0[p] - x0[q]).powi(2);
        }
    }
    let bound = single + 0.5 * pair;
    let moment: f64 = masses.iter().zip(x0).map(|(m, x)| m * x * x).sum();
    let tail_bound = 0.5f64.powi(n_max as i32) * (data + 0.5 * pair + moment);
    Ok(PsiBudget { psi_average, bound, tail_bound, pass: psi_average <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::SemiconvexPotential;
    use crate::sticky::{run, RunConfig};

    fn atoms(list: &[(f64, f64)]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(list.to_vec()).unwrap()
    }

    fn uniform() -> InitialData {
        InitialData { target: TargetMeasure::Uniform { lo: 0.0, hi: 1.0 }, v0: VelocityProfile::Affine { slope: 0.0, intercept: 0.0 } }
    }

    #[test]
    fn w1_examples() {
        let a = atoms(&[(0.0, 0.5), (1.0, 0.5)]);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        assert_eq!(wasserstein1(&EmpiricalMeasure::dirac(0.0), &EmpiricalMeasure::dirac(1.0)), 1.0);
        assert_eq!(wasserstein1(&a, &EmpiricalMeasure::dirac(0.5)), 0.5);
    }

    #[test]
    fn coalescing_and_mass_check() {
        let m = atoms(&[(1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]);
        assert_eq!(m.positions(), &[0.0, 1.0]);
        assert_eq!(m.masses(), &[0.5, 0.5]);
        assert!(matches!(EmpiricalMeasure::new(vec![(0.0, 0.9)]), Err(MeasureError::MassNotNormalized(_))));
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment(&EmpiricalMeasure::dirac(0.0)), 0.0);
        assert_eq!(second_moment(&atoms(&[(-1.0, 0.5), (1.0, 0.5)])), 1.0);
        let q = quantize(&uniform(), 2).unwrap();
        let m = atoms(&q.positions.iter().copied().zip(q.masses.iter().copied()).collect::<Vec<_>>());
        assert_eq!(second_moment(&m), 5.0 / 16.0);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(&uniform(), 2).unwrap();
        assert_eq!(q.positions, vec![0.25, 0.75]);
        assert_eq!(q.masses, vec![0.5, 0.5]);
        assert_eq!(quantize(&uniform(), 1).unwrap().positions, vec![0.5]);

        let point = InitialData { target: TargetMeasure::PointMass { x: 0.0 }, ..uniform() };
        let q = quantize(&point, 3).unwrap();
        assert!(q.positions.iter().all(|x| x.abs() < 1e-11));
        assert!(q.positions.windows(2).all(|w| w[1] > w[0]));
        assert!(q.masses.iter().all(|&m| m == 1.0 / 3.0));
    }

    #[test]
    fn gaussian_quantiles_are_symmetric_and_truncated() {
        let g = TargetMeasure::Gaussian { mean: 1.0, sd: 2.0, truncate: 3.0 };
        for &p in &[0.01, 0.2, 0.4] {
            let a = g.quantile(p).unwrap() - 1.0;
            let b = g.quantile(1.0 - p).unwrap() - 1.0;
            assert!((a + b).abs() < 1e-9);
        }
        assert!((g.quantile(0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(g.quantile(1e-9).unwrap() >= 1.0 - 6.0);
        assert!(matches!(g.quantile(1.0), Err(MeasureError::DegenerateCDF(_))));
    }

    #[test]
    fn tabulated_cdf_quantile() {
        let t = TargetMeasure::TabulatedCdf { x: vec![0.0, 1.0, 3.0], f: vec![0.0, 0.5, 1.0] };
        assert_eq!(t.quantile(0.25).unwrap(), 0.5);
        assert_eq!(t.quantile(0.75).unwrap(), 2.0);
        let bad = TargetMeasure::TabulatedCdf { x: vec![0.0, 1.0], f: vec![0.0, 0.7] };
        assert!(matches!(bad.quantile(0.5), Err(MeasureError::DegenerateCDF(_))));
    }

    #[test]
    fn profiles() {
        let saw = VelocityProfile::Sawtooth { amplitude: 2.0, period: 1.0 };
        assert_eq!(saw.eval(0.5), 2.0);
        assert_eq!(saw.eval(0.0), -2.0);
        assert_eq!(saw.eval(0.25), 0.0);
        let tab = VelocityProfile::Tabulated { x: vec![0.0, 2.0], v: vec![1.0, -1.0] };
        assert_eq!(tab.eval(1.0), 0.0);
        assert_eq!(tab.eval(-5.0), 1.0);
        assert_eq!(tab.eval(9.0), -1.0);
        for x in [-10.0, -1.0, 0.3, 7.0] {
            for p in [&saw, &tab, &VelocityProfile::Affine { slope: -1.0, intercept: 0.5 }] {
                assert!(p.eval(x).abs() <= p.growth_bound() * (1.0 + x.abs()));
            }
        }
    }

    fn head_on() -> TrajectoryRecord {
        let s = ClusterState::from_particles(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, -1.0]).unwrap();
        run(&s, &SemiconvexPotential::zero(), &Interaction::zero(), &RunConfig::uniform(1.0, 1e-3, 100)).unwrap()
    }

    #[test]
    fn measure_at_head_on() {
        let rec = head_on();
        let (m0, _) = measure_at(&rec, 0.0).unwrap();
        assert_eq!(m0, atoms(&[(0.0, 0.5), (1.0, 0.5)]));
        let (m1, v1) = measure_at(&rec, 1.0).unwrap();
        assert_eq!(m1.len(), 1);
        assert!((m1.positions()[0] - 0.5).abs() < 1e-9);
        assert_eq!(v1.values, vec![0.0]);
        let (m, v) = measure_at(&rec, 0.499).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m.positions()[0] - 0.499).abs() < 1e-9);
        assert!((v.values[1] + 1.0).abs() < 1e-9);
        assert!(matches!(measure_at(&rec, 1.5), Err(MeasureError::OutOfHorizon { .. })));
    }

    #[test]
    fn psi_examples() {
        let zero = SemiconvexPotential::zero();
        let wz = Interaction::zero();
        let budget = SemiconvexityBudget::new(0.0, 0.0).unwrap();

        let rest = ClusterState::from_particles(vec![0.5, 0.5], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let rec = run(&rest, &zero, &wz, &RunConfig::uniform(1.0, 1e-2, 10)).unwrap();
        let p = psi_budget(&rec, &zero, &wz, &budget, 1).unwrap();
        assert_eq!(p.psi_average, 0.0);
        assert!(p.pass);

        let single = ClusterState::from_particles(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let rec = run(&single, &zero, &wz, &RunConfig::uniform(1.0, 1e-2, 10)).unwrap();
        let p = psi_budget(&rec, &zero, &wz, &budget, 1).unwrap();
        let expected = 1.0 / (2.0 * gronwall_factor(3.0, 1.0));
        assert!((p.psi_average - expected).abs() < 1e-12);
        assert_eq!(p.bound, 1.0);
        assert!(p.pass);

        let p = psi_budget(&head_on(), &zero, &wz, &budget, 1).unwrap();
        assert!(p.pass && p.psi_average <= p.bound);
        assert!(matches!(psi_budget(&head_on(), &zero, &wz, &budget, 2), Err(MeasureError::OutOfHorizon { .. })));
    }
}
