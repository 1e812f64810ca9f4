//! Scalar quadrature used by the energy estimates.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `int_0^t exp(-kappa s^2 / 2) ds`, computed to 1e-10.
pub fn gaussian_weight_integral(kappa: f64, t: f64) -> f64 {
    adaptive_simpson(|s| (-0.5 * kappa * s * s).exp(), 0.0, t, 1e-12)
}

/// The Gronwall factor `exp(kappa t^2 / 2) int_0^t exp(-kappa s^2 / 2) ds`.
pub fn gronwall_factor(kappa: f64, t: f64) -> f64 {
    (0.5 * kappa * t * t).exp() * gaussian_weight_integral(kappa, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erf;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 1e-12);
        assert!((v - (4.0 - 0.25 - 3.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_integral_matches_erf() {
        for &kappa in &[0.5, 3.0, 7.25] {
            for &t in &[0.0, 0.1, 1.0, 2.5, 6.0] {
                let exact = (std::f64::consts::PI / (2.0 * kappa)).sqrt() * erf(t * (kappa / 2.0).sqrt());
                assert!((gaussian_weight_integral(kappa, t) - exact).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gronwall_factor_dominates_identity() {
        for &t in &[0.0, 0.3, 1.0, 2.0] {
            assert!(gronwall_factor(3.0, t) >= t);
        }
        assert!(gronwall_factor(3.0, 1.0) > 1.0);
        assert!((gronwall_factor(0.0, 1.7) - 1.7).abs() < 1e-12);
    }
}
