use proptest::prelude::*;
use sticky_core::dynamics::ClusterState;
use sticky_core::measures::{wasserstein1, EmpiricalMeasure};
use sticky_core::potentials::{Interaction, SemiconvexPotential};
use sticky_core::sticky::{run, RunConfig};
use sticky_core::verify::{check_energy_monotone, check_qspp, check_sticky};

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut m: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let drift = 1.0 - m.iter().sum::<f64>();
    m[0] += drift;
    m
}

fn measure() -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((-5.0..5.0f64, 0.1..1.0f64), 1..8).prop_map(|atoms| {
        let (xs, ws): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        EmpiricalMeasure::new(xs.into_iter().zip(normalized(&ws)).collect()).unwrap()
    })
}

/// `∫_0^1 |F^{-1}(p) - G^{-1}(p)| dp` by walking both cumulative mass
/// sequences.
fn quantile_coupling(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut left_mu, mut left_nu) = (mu.masses()[0], nu.masses()[0]);
    let mut total = 0.0;
    loop {
        let take = left_mu.min(left_nu);
        total += take * (mu.positions()[i] - nu.positions()[j]).abs();
        left_mu -= take;
        left_nu -= take;
        if left_mu <= 1e-15 {
            i += 1;
            if i == mu.len() {
                break;
            }
            left_mu += mu.masses()[i];
        }
        if left_nu <= 1e-15 {
            j += 1;
            if j == nu.len() {
                break;
            }
            left_nu += nu.masses()[j];
        }
    }
    total
}

fn cloud() -> impl Strategy<Value = ClusterState> {
    prop::collection::vec((-2.0..2.0f64, -1.0..1.0f64, 0.1..1.0f64), 2..7).prop_map(|mut p| {
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        let masses = normalized(&p.iter().map(|q| q.2).collect::<Vec<_>>());
        ClusterState::from_particles(masses, p.iter().map(|q| q.0).collect(), p.iter().map(|q| q.1).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn w1_matches_the_quantile_coupling(mu in measure(), nu in measure()) {
        let d = wasserstein1(&mu, &nu);
        prop_assert!((d - quantile_coupling(&mu, &nu)).abs() <= 1e-9 * (1.0 + d));
        prop_assert!((d - wasserstein1(&nu, &mu)).abs() <= 1e-12 * (1.0 + d));
        prop_assert_eq!(wasserstein1(&mu, &mu), 0.0);
    }

    #[test]
    fn w1_triangle(a in measure(), b in measure(), c in measure()) {
        prop_assert!(wasserstein1(&a, &c) <= wasserstein1(&a, &b) + wasserstein1(&b, &c) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn free_runs_conserve_momentum_and_stick(s in cloud()) {
        let rec = run(&s, &SemiconvexPotential::zero(), &Interaction::zero(), &RunConfig::uniform(3.0, 1e-2, 30)).unwrap();
        let p0: f64 = s.masses.iter().zip(&s.velocities).map(|(m, v)| m * v).sum();
        for f in &rec.frames {
            let p: f64 = rec.particle_masses.iter().zip(&f.velocities).map(|(m, v)| m * v).sum();
            prop_assert!((p - p0).abs() <= 1e-12);
            prop_assert!(f.positions.windows(2).all(|w| w[0] <= w[1]));
        }
        prop_assert!(check_sticky(&rec).pass);
        prop_assert!(check_qspp(&rec, 0.0).pass);
    }

    #[test]
    fn confined_runs_dissipate(s in cloud(), k in 0.1..2.0f64) {
        let v = SemiconvexPotential::quadratic(k);
        let w = Interaction::from_potential(SemiconvexPotential::quadratic(0.5));
        let rec = run(&s, &v, &w, &RunConfig::uniform(2.0, 1e-3, 40)).unwrap();
        let e = check_energy_monotone(&rec, &v, &w);
        prop_assert!(e.pass, "{:?}", e);
    }
}
