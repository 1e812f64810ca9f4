//! Semiconvex potentials, their Moreau-Yosida regularization and the
//! semiconvexity budget `(a, b, c, kappa)` that drives every quantitative
//! bound in the verification layer.
//!
//! A potential `u` is *semiconvex with constant `alpha`* when
//! `x -> u(x) + alpha/2 x^2` is convex. Ambient potentials `V` use the
//! constant `a`, interaction potentials `W` use `b`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Pass threshold for the midpoint-convexity defect.
pub const SEMICONVEXITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("regularization parameter {epsilon} is too large for semiconvexity constant {alpha} (epsilon * alpha must be < 1)")]
    NonCoercive { epsilon: f64, alpha: f64 },
    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("semiconvexity grid needs at least 3 strictly increasing points, got {0}")]
    GridTooSmall(usize),
    #[error("semiconvexity grid must be strictly increasing")]
    GridNotIncreasing,
    #[error("invalid potential parameter: {0}")]
    InvalidParameter(String),
    #[error("c = {c} violates c >= a + b = {sum}")]
    BudgetViolation { c: f64, sum: f64 },
}

/// Anything the dynamics can evaluate as a potential.
pub trait Potential: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    /// The `alpha` with `u + alpha/2 x^2` convex.
    fn semiconvexity(&self) -> f64;
    /// A witness for `sup |u'(x)| / (1 + |x|)`.
    fn growth_bound(&self) -> f64;
    /// Global Lipschitz constant of the derivative, `None` if there is none.
    fn deriv_lipschitz(&self) -> Option<f64>;
    /// True when `value(-x) == value(x)` and `deriv(-x) == -deriv(x)` hold
    /// exactly in floating point.
    fn is_exactly_even(&self) -> bool {
        false
    }
}

pub type SharedPotential = Arc<dyn Potential>;

/// Built-in potential shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Zero,
    /// `k x^2 / 2`; `k < 0` is repulsive.
    Quadratic {
        k: f64,
    },
    /// `strength * huber_delta(x)`, the Moreau envelope of `strength * |x|`.
    Huber {
        delta: f64,
        strength: f64,
    },
    /// `strength * |x|`, requires regularization before use in dynamics.
    Abs {
        strength: f64,
    },
    /// `-depth * cos(wavenumber * x)`.
    CosineWell {
        depth: f64,
        wavenumber: f64,
    },
    Tabulated(CubicSpline),
}

impl Shape {
    fn value(&self, x: f64) -> f64 {
        match self {
            Shape::Zero => 0.0,
            Shape::Quadratic { k } => 0.5 * k * x * x,
            Shape::Huber { delta, strength } => {
                let ax = x.abs();
                if ax <= *delta {
                    strength * x * x / (2.0 * delta)
                } else {
                    strength * (ax - 0.5 * delta)
                }
            }
            Shape::Abs { strength } => strength * x.abs(),
            Shape::CosineWell { depth, wavenumber } => -depth * (wavenumber * x).cos(),
            Shape::Tabulated(s) => s.value(x),
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        match self {
            Shape::Zero => 0.0,
            Shape::Quadratic { k } => k * x,
            Shape::Huber { delta, strength } => strength * (x / delta).clamp(-1.0, 1.0),
            Shape::Abs { strength } => {
                if x > 0.0 {
                    *strength
                } else if x < 0.0 {
                    -strength
                } else {
                    0.0
                }
            }
            Shape::CosineWell { depth, wavenumber } => depth * wavenumber * (wavenumber * x).sin(),
            Shape::Tabulated(s) => s.deriv(x),
        }
    }

    /// Smallest `alpha` making the shape semiconvex, or `None` when no
    /// finite constant exists.
    fn natural_semiconvexity(&self) -> Option<f64> {
        match self {
            Shape::Zero => Some(0.0),
            Shape::Quadratic { k } => Some((-k).max(0.0)),
            Shape::Huber { delta, strength } => Some((-strength / delta).max(0.0)),
            Shape::Abs { strength } => (*strength >= 0.0).then_some(0.0),
            Shape::CosineWell { depth, wavenumber } => Some(depth.abs() * wavenumber * wavenumber),
            Shape::Tabulated(s) => Some((-s.min_second_derivative()).max(0.0)),
        }
    }

    fn growth_bound(&self) -> f64 {
        match self {
            Shape::Zero => 0.0,
            Shape::Quadratic { k } => k.abs(),
            Shape::Huber { strength, .. } | Shape::Abs { strength } => strength.abs(),
            Shape::CosineWell { depth, wavenumber } => (depth * wavenumber).abs(),
            Shape::Tabulated(s) => s.growth_bound(),
        }
    }

    fn deriv_lipschitz(&self) -> Option<f64> {
        match self {
            Shape::Zero => Some(0.0),
            Shape::Quadratic { k } => Some(k.abs()),
            Shape::Huber { delta, strength } => Some(strength.abs() / delta),
            Shape::Abs { strength } => (*strength == 0.0).then_some(0.0),
            Shape::CosineWell { depth, wavenumber } => Some((depth * wavenumber * wavenumber).abs()),
            Shape::Tabulated(s) => Some(s.max_abs_second_derivative()),
        }
    }

    fn is_exactly_even(&self) -> bool {
        !matches!(self, Shape::Tabulated(_))
    }

    fn validate(&self) -> Result<(), PotentialError> {
        let bad = |m: &str| Err(PotentialError::InvalidParameter(m.to_string()));
        match self {
            Shape::Quadratic { k } if !k.is_finite() => bad("quadratic k must be finite"),
            Shape::Huber { delta, strength } if !(*delta > 0.0) || !strength.is_finite() => {
                bad("huber delta must be positive and strength finite")
            }
            Shape::Abs { strength } if !(*strength >= 0.0) || !strength.is_finite() => {
                bad("abs strength must be nonnegative (negative |x| is not semiconvex)")
            }
            Shape::CosineWell { depth, wavenumber } if !depth.is_finite() || !wavenumber.is_finite() => {
                bad("cosine well parameters must be finite")
            }
            _ => Ok(()),
        }
    }
}

/// A catalogue potential together with its declared semiconvexity constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiconvexPotential {
    shape: Shape,
    alpha: f64,
    growth_bound: f64,
}

impl SemiconvexPotential {
    /// Uses the smallest semiconvexity constant the shape admits.
    pub fn new(shape: Shape) -> Result<Self, PotentialError> {
        shape.validate()?;
        let alpha =
            shape.natural_semiconvexity().ok_or_else(|| PotentialError::InvalidParameter(format!("{shape:?} is not semiconvex")))?;
        let growth_bound = shape.growth_bound();
        Ok(Self { shape, alpha, growth_bound })
    }

    /// Declares the semiconvexity constant explicitly. The declaration is not
    /// checked here; see [`verify_semiconvexity`].
    pub fn with_semiconvexity(shape: Shape, alpha: f64) -> Result<Self, PotentialError> {
        shape.validate()?;
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(PotentialError::InvalidParameter(format!("semiconvexity constant must be finite and nonnegative, got {alpha}")));
        }
        let growth_bound = shape.growth_bound();
        Ok(Self { shape, alpha, growth_bound })
    }

    pub fn zero() -> Self {
        Self::new(Shape::Zero).expect("zero potential is valid")
    }

    pub fn quadratic(k: f64) -> Self {
        Self::new(Shape::Quadratic { k }).expect("finite quadratic")
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }
}

impl Potential for SemiconvexPotential {
    fn value(&self, x: f64) -> f64 {
        self.shape.value(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.shape.deriv(x)
    }
    fn semiconvexity(&self) -> f64 {
        self.alpha
    }
    fn growth_bound(&self) -> f64 {
        self.growth_bound
    }
    fn deriv_lipschitz(&self) -> Option<f64> {
        self.shape.deriv_lipschitz()
    }
    fn is_exactly_even(&self) -> bool {
        self.shape.is_exactly_even()
    }
}

/// Natural cubic spline with linear extrapolation, used for tabulated
/// potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, PotentialError> {
        let n = xs.len();
        if n < 3 || ys.len() != n {
            return Err(PotentialError::InvalidParameter("tabulated potential needs at least 3 (x, u) rows".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(PotentialError::InvalidParameter("tabulated x values must be finite and strictly increasing".into()));
        }
        // Thomas algorithm for the natural spline system.
        let mut m = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            let lower = h0 / 6.0;
            let d = (h0 + h1) / 3.0;
            let r = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
            if i == 1 {
                diag[i] = d;
                rhs[i] = r;
            } else {
                let w = lower / diag[i - 1];
                diag[i] = d - w * upper[i - 1];
                rhs[i] = r - w * rhs[i - 1];
            }
            upper[i] = h1 / 6.0;
        }
        for i in (1..n - 1).rev() {
            let next = if i + 1 < n - 1 { upper[i] * m[i + 1] } else { 0.0 };
            m[i] = (rhs[i] - next) / diag[i];
        }
        Ok(Self { xs, ys, m })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    fn interval(&self, x: f64) -> usize {
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.xs.len() - 2),
        }
    }

    fn end_slopes(&self) -> (f64, f64) {
        let n = self.xs.len();
        let h0 = self.xs[1] - self.xs[0];
        let left = (self.ys[1] - self.ys[0]) / h0 - h0 * (2.0 * self.m[0] + self.m[1]) / 6.0;
        let h1 = self.xs[n - 1] - self.xs[n - 2];
        let right = (self.ys[n - 1] - self.ys[n - 2]) / h1 + h1 * (self.m[n - 2] + 2.0 * self.m[n - 1]) / 6.0;
        (left, right)
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let (sl, sr) = self.end_slopes();
        if x < self.xs[0] {
            return self.ys[0] + sl * (x - self.xs[0]);
        }
        if x > self.xs[n - 1] {
            return self.ys[n - 1] + sr * (x - self.xs[n - 1]);
        }
        let i = self.interval(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i] + b * self.ys[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let (sl, sr) = self.end_slopes();
        if x < self.xs[0] {
            return sl;
        }
        if x > self.xs[n - 1] {
            return sr;
        }
        let i = self.interval(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0 + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0
    }

    /// The second derivative is piecewise linear, so its extremes sit at knots
    /// (tails are linear, curvature 0).
    fn min_second_derivative(&self) -> f64 {
        self.m.iter().copied().fold(0.0, f64::min)
    }

    fn max_abs_second_derivative(&self) -> f64 {
        self.m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn growth_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for w in self.xs.windows(2) {
            for k in 0..=8 {
                let x = w[0] + (w[1] - w[0]) * k as f64 / 8.0;
                best = best.max(self.deriv(x).abs() / (1.0 + x.abs()));
            }
        }
        best
    }
}

/// Interaction potential with exact evenness: `W(-x) = W(x)` and
/// `W'(-x) = -W'(x)` bit for bit, so `W'(0) = 0`.
#[derive(Debug, Clone)]
pub struct Interaction {
    inner: SharedPotential,
}

impl Interaction {
    /// Exactly even inputs are folded through `|x|`; anything else is
    /// replaced by its even part `(W(x) + W(-x)) / 2`.
    pub fn new(inner: SharedPotential) -> Self {
        Self { inner }
    }

    pub fn from_potential<P: Potential + 'static>(p: P) -> Self {
        Self::new(Arc::new(p))
    }

    pub fn zero() -> Self {
        Self::from_potential(SemiconvexPotential::zero())
    }

    pub fn inner(&self) -> &SharedPotential {
        &self.inner
    }
}

impl Potential for Interaction {
    fn value(&self, x: f64) -> f64 {
        if self.inner.is_exactly_even() {
            self.inner.value(x.abs())
        } else {
            0.5 * (self.inner.value(x) + self.inner.value(-x))
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let d = if self.inner.is_exactly_even() {
            self.inner.deriv(x.abs())
        } else {
            let ax = x.abs();
            0.5 * (self.inner.deriv(ax) - self.inner.deriv(-ax))
        };
        if x > 0.0 {
            d
        } else {
            -d
        }
    }

    fn semiconvexity(&self) -> f64 {
        self.inner.semiconvexity()
    }
    fn growth_bound(&self) -> f64 {
        self.inner.growth_bound()
    }
    fn deriv_lipschitz(&self) -> Option<f64> {
        self.inner.deriv_lipschitz()
    }
    fn is_exactly_even(&self) -> bool {
        true
    }
}

/// Result of the inner proximal minimization.
#[derive(Debug, Clone, Copy)]
struct Proximal {
    point: f64,
    value: f64,
}

fn check_epsilon(alpha: f64, epsilon: f64) -> Result<(), PotentialError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(PotentialError::NonPositiveEpsilon(epsilon));
    }
    if epsilon * alpha >= 1.0 {
        return Err(PotentialError::NonCoercive { epsilon, alpha });
    }
    Ok(())
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Minimizes `h(y) = u(y) + alpha/2 y^2 + (x - y)^2 / (2 eps)`.
///
/// Golden-section search on the convex objective narrows the bracket, then a
/// safeguarded Newton iteration on the monotone optimality map
/// `g(y) = u'(y) + alpha y + (y - x) / eps` polishes the point.
fn proximal<P: Potential + ?Sized>(u: &P, epsilon: f64, x: f64) -> Proximal {
    let alpha = u.semiconvexity();
    let f = |y: f64| u.value(y) + 0.5 * alpha * y * y;
    let h = |y: f64| f(y) + (x - y) * (x - y) / (2.0 * epsilon);
    let g = |y: f64| u.deriv(y) + alpha * y + (y - x) / epsilon;

    let half = 10.0 * epsilon * (1.0 + (u.deriv(x) + alpha * x).abs());
    let (mut lo, mut hi) = (x - half, x + half);
    // The bound |y - x| <= 2 eps |f'(x)| keeps the minimizer inside, but
    // widen anyway if the derivative sign test disagrees.
    for _ in 0..60 {
        if g(lo) <= 0.0 {
            break;
        }
        lo -= hi - lo;
    }
    for _ in 0..60 {
        if g(hi) >= 0.0 {
            break;
        }
        hi += hi - lo;
    }

    let scale = 1.0 + x.abs();
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    while b - a > 1e-4 * scale * epsilon.min(1.0) {
        if hc <= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            hd = h(d);
        }
    }

    // Bracket for the root of g. Golden-section keeps the minimizer in [a, b].
    let (mut left, mut right) = (a, b);
    if g(left) > 0.0 {
        left = lo;
    }
    if g(right) < 0.0 {
        right = hi;
    }
    let mut y = 0.5 * (left + right);
    for _ in 0..200 {
        let gy = g(y);
        if gy == 0.0 {
            break;
        }
        if gy < 0.0 {
            left = y;
        } else {
            right = y;
        }
        if right - left <= 1e-15 * scale {
            break;
        }
        let step = 1e-7 * scale * epsilon.min(1.0);
        let slope = (g(y + step) - g(y - step)) / (2.0 * step);
        let newton = y - gy / slope;
        if slope > 0.0 && (newton - y).abs() <= 1e-16 * scale {
            y = newton;
            break;
        }
        y = if slope > 0.0 && newton > left && newton < right { newton } else { 0.5 * (left + right) };
    }
    Proximal { point: y, value: h(y) }
}

/// `inf_y { u(y) + alpha/2 y^2 + (x - y)^2 / (2 eps) } - alpha/2 x^2`.
pub fn moreau_envelope<P: Potential + ?Sized>(u: &P, epsilon: f64, x: f64) -> Result<f64, PotentialError> {
    let alpha = u.semiconvexity();
    check_epsilon(alpha, epsilon)?;
    Ok(proximal(u, epsilon, x).value - 0.5 * alpha * x * x)
}

/// Derivative of [`moreau_envelope`]: `(x - y_eps(x)) / eps - alpha x`.
pub fn moreau_deriv<P: Potential + ?Sized>(u: &P, epsilon: f64, x: f64) -> Result<f64, PotentialError> {
    let alpha = u.semiconvexity();
    check_epsilon(alpha, epsilon)?;
    let y = proximal(u, epsilon, x).point;
    Ok((x - y) / epsilon - alpha * x)
}

/// A potential replaced by its inf-convolution, whose derivative is
/// globally Lipschitz.
#[derive(Debug, Clone)]
pub struct RegularizedPotential {
    base: SharedPotential,
    epsilon: f64,
}

impl RegularizedPotential {
    pub fn new(base: SharedPotential, epsilon: f64) -> Result<Self, PotentialError> {
        check_epsilon(base.semiconvexity(), epsilon)?;
        Ok(Self { base, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn base(&self) -> &SharedPotential {
        &self.base
    }
}

impl Potential for RegularizedPotential {
    fn value(&self, x: f64) -> f64 {
        let alpha = self.base.semiconvexity();
        proximal(self.base.as_ref(), self.epsilon, x).value - 0.5 * alpha * x * x
    }

    fn deriv(&self, x: f64) -> f64 {
        let alpha = self.base.semiconvexity();
        let y = proximal(self.base.as_ref(), self.epsilon, x).point;
        (x - y) / self.epsilon - alpha * x
    }

    fn semiconvexity(&self) -> f64 {
        self.base.semiconvexity()
    }

    fn growth_bound(&self) -> f64 {
        let g = self.base.growth_bound();
        let alpha = self.base.semiconvexity();
        g * (1.0 + 2.0 * self.epsilon * g) + alpha
    }

    /// The envelope of the convexified base has curvature in `[0, 1/eps]`.
    fn deriv_lipschitz(&self) -> Option<f64> {
        let alpha = self.base.semiconvexity();
        Some(alpha.max(1.0 / self.epsilon - alpha))
    }

    // Even bases give even envelopes only up to the inner tolerance.
    fn is_exactly_even(&self) -> bool {
        false
    }
}

/// Worst midpoint-convexity defect of `u + alpha/2 x^2` over consecutive
/// grid triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiconvexityReport {
    pub max_defect: f64,
    /// Middle point of the worst triple.
    pub location: f64,
    pub pass: bool,
}

pub fn verify_semiconvexity<P: Potential + ?Sized>(u: &P, grid: &[f64]) -> Result<SemiconvexityReport, PotentialError> {
    if grid.len() < 3 {
        return Err(PotentialError::GridTooSmall(grid.len()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PotentialError::GridNotIncreasing);
    }
    let alpha = u.semiconvexity();
    let f = |x: f64| u.value(x) + 0.5 * alpha * x * x;
    let mut worst = f64::NEG_INFINITY;
    let mut location = grid[1];
    for w in grid.windows(3) {
        let (x0, x1, x2) = (w[0], w[1], w[2]);
        let lambda = (x2 - x1) / (x2 - x0);
        let defect = f(x1) - (lambda * f(x0) + (1.0 - lambda) * f(x2));
        if defect > worst {
            worst = defect;
            location = x1;
        }
    }
    Ok(SemiconvexityReport { max_defect: worst, location, pass: worst <= SEMICONVEXITY_TOL })
}

/// Semiconvexity constants of `V` (`a`) and `W` (`b`), the rate `c >= a + b`
/// and the energy-estimate exponent `kappa = a + 2b + 3`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemiconvexityBudget {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub kappa: f64,
}

impl SemiconvexityBudget {
    /// Sharpest choice `c = a + b`.
    pub fn new(a: f64, b: f64) -> Result<Self, PotentialError> {
        if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(PotentialError::InvalidParameter(format!(
                "semiconvexity constants must be finite and nonnegative, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b, c: a + b, kappa: a + 2.0 * b + 3.0 })
    }

    pub fn from_potentials(v: &dyn Potential, w: &dyn Potential) -> Result<Self, PotentialError> {
        Self::new(v.semiconvexity(), w.semiconvexity())
    }

    pub fn with_c(self, c: f64) -> Result<Self, PotentialError> {
        let sum = self.a + self.b;
        if !(c >= sum) || !c.is_finite() {
            return Err(PotentialError::BudgetViolation { c, sum });
        }
        Ok(Self { c, ..self })
    }
}
