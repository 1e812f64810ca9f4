//! Scenario files: a TOML tree with `potentials`, `initial`, `run`,
//! `verify`, `output` and `study` tables. See `docs/scenario.md`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sticky_core::dynamics::{ClusterState, MASS_TOL};
use sticky_core::measures::{quantize, InitialData, MeasureError, TargetMeasure, VelocityProfile};
use sticky_core::potentials::{
    CubicSpline, Interaction, Potential, PotentialError, RegularizedPotential, SemiconvexPotential, SemiconvexityBudget, Shape,
    SharedPotential,
};
use sticky_core::sticky::RunConfig;
use sticky_core::verify::{VerifyConfig, WEAK_TOL};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: cannot read: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("field `{field}`: {source}")]
    Potential { field: String, source: PotentialError },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Zero,
    Quadratic {
        k: f64,
    },
    Huber {
        delta: f64,
        strength: f64,
    },
    Abs {
        strength: f64,
    },
    Cosine {
        depth: f64,
        wavenumber: f64,
    },
    /// Knots given inline or as a two-column `x,u` CSV file relative to the
    /// scenario file.
    Table {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        u: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub shape: ShapeSpec,
    /// Declared semiconvexity constant; defaults to the shape's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Run the dynamics on the inf-convolution of this potential.
    #[serde(default)]
    pub regularize: bool,
    /// Regularization parameter; falls back to `potentials.epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self { shape: ShapeSpec::Zero, alpha: None, regularize: false, epsilon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(rename = "V", default)]
    pub v: PotentialSpec,
    #[serde(rename = "W", default)]
    pub w: PotentialSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetMeasure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<VelocityProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_weak_tolerance() -> f64 {
    WEAK_TOL
}
fn default_test_functions() -> usize {
    12
}
fn default_entropy_samples() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default = "default_weak_tolerance")]
    pub weak_tolerance: f64,
    #[serde(default = "default_test_functions")]
    pub test_functions: usize,
    #[serde(default = "default_entropy_samples")]
    pub entropy_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_terms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_quad: Option<f64>,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self { c: None, weak_tolerance: WEAK_TOL, test_functions: 12, entropy_samples: 50, psi_terms: None, dt_quad: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Times of the exported measure and CDF tables; defaults to
    /// `0, H/2, H`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    /// Comparison times of the refinement tables; defaults to `H`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub potentials: PotentialsBlock,
    pub initial: InitialBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub study: StudyBlock,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Built {
    pub v: SharedPotential,
    pub w: Interaction,
    pub initial: ClusterState,
    pub run: RunConfig,
    pub verify: VerifyConfig,
    pub budget: SemiconvexityBudget,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub c: Option<f64>,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl Scenario {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            ScenarioError::Parse { path: path.to_path_buf(), line, column, message: e.message().to_string() }
        })
    }

    /// Reads, parses and inlines table files so that the result is
    /// self-contained.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.to_path_buf(), source })?;
        let mut s = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for (field, spec) in [("potentials.V", &mut s.potentials.v), ("potentials.W", &mut s.potentials.w)] {
            inline_table(field, spec, base)?;
        }
        if s.name.is_none() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned());
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("scenario")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dt) = o.dt {
            self.run.dt = dt;
        }
        if let Some(h) = o.horizon {
            self.run.horizon = h;
        }
        if let Some(c) = o.c {
            self.verify.c = Some(c);
        }
    }

    /// Potentials flagged for regularization.
    pub fn regularized_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.potentials.v.regularize {
            out.push("potentials.V");
        }
        if self.potentials.w.regularize {
            out.push("potentials.W");
        }
        out
    }

    /// Sets the regularization parameter of every flagged potential.
    pub fn set_epsilon(&mut self, eps: f64) {
        self.potentials.epsilon = Some(eps);
        for spec in [&mut self.potentials.v, &mut self.potentials.w] {
            if spec.regularize {
                spec.epsilon = Some(eps);
            }
        }
    }

    pub fn build(&self) -> Result<Built, ScenarioError> {
        let v = build_potential("potentials.V", &self.potentials.v, self.potentials.epsilon)?;
        let w_inner = build_potential("potentials.W", &self.potentials.w, self.potentials.epsilon)?;
        let w = Interaction::new(w_inner);
        let run = &self.run;
        if !(run.horizon > 0.0) || !run.horizon.is_finite() {
            return Err(invalid("run.horizon", format!("must be positive, got {}", run.horizon)));
        }
        if !(run.dt > 0.0) || !run.dt.is_finite() {
            return Err(invalid("run.dt", format!("must be positive, got {}", run.dt)));
        }
        if run.samples == 0 {
            return Err(invalid("run.samples", "must be at least 1"));
        }
        let initial = self.initial_state(None)?;
        let budget = SemiconvexityBudget::from_potentials(v.as_ref(), &w)
            .map_err(|source| ScenarioError::Potential { field: "potentials".into(), source })?;
        let budget = match self.verify.c {
            Some(c) => budget.with_c(c).map_err(|source| ScenarioError::Potential { field: "verify.c".into(), source })?,
            None => budget,
        };
        let vb = &self.verify;
        if let Some(q) = vb.dt_quad {
            if !(q > 0.0) {
                return Err(invalid("verify.dt_quad", "must be positive"));
            }
        }
        let verify = VerifyConfig {
            c: vb.c,
            weak_tolerance: vb.weak_tolerance,
            test_functions: vb.test_functions,
            entropy_samples: vb.entropy_samples,
            psi_terms: vb.psi_terms,
            dt_quad: vb.dt_quad,
        };
        Ok(Built { v, w, initial, run: RunConfig::uniform(run.horizon, run.dt, run.samples), verify, budget })
    }

    /// Initial cluster state, quantizing the target with `n` atoms (or
    /// `initial.n`) when no explicit atoms are given.
    pub fn initial_state(&self, n: Option<usize>) -> Result<ClusterState, ScenarioError> {
        let ib = &self.initial;
        match (&ib.positions, &ib.target) {
            (Some(_), Some(_)) => Err(invalid("initial", "give either explicit positions or a target measure, not both")),
            (None, None) => Err(invalid("initial", "needs positions or a target measure")),
            (Some(xs), None) => {
                if n.is_some() {
                    return Err(invalid("initial.target", "refinement needs a target measure"));
                }
                let k = xs.len();
                let masses = ib.masses.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
                let vs = ib.velocities.clone().unwrap_or_else(|| vec![0.0; k]);
                if masses.len() != k {
                    return Err(invalid("initial.masses", format!("has {} entries for {k} positions", masses.len())));
                }
                if vs.len() != k {
                    return Err(invalid("initial.velocities", format!("has {} entries for {k} positions", vs.len())));
                }
                if masses.iter().any(|m| !(*m > 0.0)) {
                    return Err(invalid("initial.masses", "entries must be positive"));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(invalid("initial.masses", format!("sum to {total}, expected 1")));
                }
                if xs.windows(2).any(|w| w[1] < w[0]) {
                    return Err(invalid("initial.positions", "must be sorted nondecreasingly"));
                }
                ClusterState::from_particles(masses, xs.clone(), vs).map_err(|e| invalid("initial", e.to_string()))
            }
            (None, Some(target)) => {
                if ib.masses.is_some() || ib.velocities.is_some() {
                    return Err(invalid("initial", "masses and velocities are derived from the target and v0"));
                }
                let count = n.or(ib.n).ok_or_else(|| invalid("initial.n", "needed with a target measure"))?;
                let v0 = ib.v0.clone().unwrap_or(VelocityProfile::Affine { slope: 0.0, intercept: 0.0 });
                let data = InitialData { target: target.clone(), v0 };
                quantize(&data, count).map_err(|e| match e {
                    MeasureError::InvalidProfile(m) => invalid("initial.v0", m),
                    other => invalid("initial.target", other.to_string()),
                })
            }
        }
    }
}

fn inline_table(field: &str, spec: &mut PotentialSpec, base: &Path) -> Result<(), ScenarioError> {
    if let ShapeSpec::Table { x, u, file } = &mut spec.shape {
        if let Some(name) = file.take() {
            if x.is_some() || u.is_some() {
                return Err(invalid(field, "give either `file` or inline `x`/`u`"));
            }
            let path = base.join(&name);
            let mut reader = csv::Reader::from_path(&path).map_err(|e| invalid(field, format!("{}: {e}", path.display())))?;
            let (mut xs, mut us) = (Vec::new(), Vec::new());
            for row in reader.deserialize::<(f64, f64)>() {
                let (a, b) = row.map_err(|e| invalid(field, format!("{}: {e}", path.display())))?;
                xs.push(a);
                us.push(b);
            }
            *x = Some(xs);
            *u = Some(us);
        }
    }
    Ok(())
}

fn build_potential(field: &str, spec: &PotentialSpec, default_eps: Option<f64>) -> Result<SharedPotential, ScenarioError> {
    let wrap = |source| ScenarioError::Potential { field: field.to_string(), source };
    let shape = match &spec.shape {
        ShapeSpec::Zero => Shape::Zero,
        ShapeSpec::Quadratic { k } => Shape::Quadratic { k: *k },
        ShapeSpec::Huber { delta, strength } => Shape::Huber { delta: *delta, strength: *strength },
        ShapeSpec::Abs { strength } => Shape::Abs { strength: *strength },
        ShapeSpec::Cosine { depth, wavenumber } => Shape::CosineWell { depth: *depth, wavenumber: *wavenumber },
        ShapeSpec::Table { x, u, .. } => {
            let (Some(x), Some(u)) = (x, u) else {
                return Err(invalid(field, "table needs `x` and `u` (or `file`)"));
            };
            Shape::Tabulated(CubicSpline::new(x.clone(), u.clone()).map_err(wrap)?)
        }
    };
    let base = match spec.alpha {
        Some(alpha) => SemiconvexPotential::with_semiconvexity(shape, alpha),
        None => SemiconvexPotential::new(shape),
    }
    .map_err(wrap)?;
    let needs = base.deriv_lipschitz().is_none();
    if spec.regularize || spec.epsilon.is_some() {
        let eps = spec.epsilon.or(default_eps).ok_or_else(|| invalid(&format!("{field}.epsilon"), "regularization needs epsilon"))?;
        let reg = RegularizedPotential::new(Arc::new(base), eps).map_err(wrap)?;
        Ok(Arc::new(reg))
    } else if needs {
        Err(invalid(field, "derivative is not Lipschitz; set `regularize = true` and `epsilon`"))
    } else {
        Ok(Arc::new(base))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD_ON: &str = r#"
[potentials]
[initial]
masses = [0.5, 0.5]
positions = [0.0, 1.0]
velocities = [1.0, -1.0]
[run]
horizon = 1.0
dt = 1e-3
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::parse(HEAD_ON, Path::new("x.toml")).unwrap();
        assert_eq!(s.run.samples, 200);
        assert_eq!(s.verify.test_functions, 12);
        let b = s.build().unwrap();
        assert_eq!(b.initial.len(), 2);
        assert_eq!(b.budget.c, 0.0);
        let again = Scenario::parse(&s.to_toml(), Path::new("y.toml")).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn bad_masses_name_the_field() {
        let text = HEAD_ON.replace("[0.5, 0.5]", "[0.5, 0.4]");
        let err = Scenario::parse(&text, Path::new("x.toml")).unwrap().build().unwrap_err();
        match err {
            ScenarioError::Validation { field, .. } => assert_eq!(field, "initial.masses"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let text = HEAD_ON.replace("dt = 1e-3", "dt = ");
        match Scenario::parse(&text, Path::new("x.toml")).unwrap_err() {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 9),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn abs_requires_regularization() {
        let text = HEAD_ON.replace("[potentials]", "[potentials]\nW = { kind = \"abs\", strength = 1.0 }");
        let err = Scenario::parse(&text, Path::new("x.toml")).unwrap().build().unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { .. }));
        let text =
            HEAD_ON.replace("[potentials]", "[potentials]\nepsilon = 0.1\nW = { kind = \"abs\", strength = 1.0, regularize = true }");
        let b = Scenario::parse(&text, Path::new("x.toml")).unwrap().build().unwrap();
        assert!(b.w.deriv_lipschitz().is_some());
    }

    #[test]
    fn non_coercive_epsilon_is_reported() {
        let text = HEAD_ON.replace(
            "[potentials]",
            "[potentials]\nV = { kind = \"cosine\", depth = 1.0, wavenumber = 2.0, regularize = true, epsilon = 0.25 }",
        );
        let err = Scenario::parse(&text, Path::new("x.toml")).unwrap().build().unwrap_err();
        assert!(matches!(err, ScenarioError::Potential { source: PotentialError::NonCoercive { .. }, .. }));
    }
}
