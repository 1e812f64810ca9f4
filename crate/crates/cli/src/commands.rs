//! The four verbs: run a scenario, refine in `N`, sweep `ε`, and re-check
//! stored artifacts.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sticky_core::io::{self, fmt_f64, IoError};
use sticky_core::measures::{measure_at, wasserstein1, EmpiricalMeasure, MeasureError};
use sticky_core::potentials::PotentialError;
use sticky_core::sticky::{run, StickyError, TrajectoryRecord};
use sticky_core::verify::{verify_all, DiagnosticsReport, VerifyError};
use thiserror::Error;

use crate::scenario::{Built, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sticky(#[from] StickyError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("{path}: {source}")]
    Artifact { path: PathBuf, source: IoError },
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Fs { path: path.to_path_buf(), source }
}

fn art_err(path: &Path) -> impl FnOnce(IoError) -> CliError + '_ {
    move |source| CliError::Artifact { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(fs_err(path))
}

/// Output directory: explicit flag, then `output.dir`, then
/// `$STICKY_OUT/<name>`, then `sticky-out/<name>`.
pub fn output_dir(scenario: &Scenario, flag: Option<&Path>, root: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = &scenario.output.dir {
        return PathBuf::from(dir);
    }
    root.unwrap_or_else(|| Path::new("sticky-out")).join(scenario.name())
}

/// Simulates and verifies a built scenario in memory.
pub fn simulate(built: &Built) -> Result<(TrajectoryRecord, DiagnosticsReport), CliError> {
    let record = run(&built.initial, built.v.as_ref(), &built.w, &built.run)?;
    let report = verify_all(&record, built.v.as_ref(), &built.w, &built.budget, &built.verify)?;
    Ok((record, report))
}

fn measure_times(scenario: &Scenario) -> Vec<f64> {
    let h = scenario.run.horizon;
    scenario.output.measure_times.clone().unwrap_or_else(|| vec![0.0, 0.5 * h, h])
}

fn check_times(field: &str, times: &[f64], horizon: f64) -> Result<(), CliError> {
    match times.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
        Some(t) => Err(ScenarioError::Validation { field: field.into(), message: format!("time {t} is outside [0, {horizon}]") }.into()),
        None => Ok(()),
    }
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub record: TrajectoryRecord,
    pub report: DiagnosticsReport,
}

/// Runs, verifies and writes `trajectory.csv`, `events.jsonl`,
/// `measures_t*.csv`, `cdf_t*.csv`, `report.json` and the resolved
/// `scenario.toml`.
pub fn run_scenario(scenario: &Scenario, dir: &Path) -> Result<RunOutcome, CliError> {
    let built = scenario.build()?;
    let times = measure_times(scenario);
    check_times("output.measure_times", &times, scenario.run.horizon)?;
    let (record, report) = simulate(&built)?;

    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let path = dir.join("trajectory.csv");
    io::write_trajectory(&record, create(&path)?).map_err(art_err(&path))?;
    let path = dir.join("events.jsonl");
    io::write_events(&record.events, create(&path)?).map_err(art_err(&path))?;
    for &t in &times {
        let (mu, field) = measure_at(&record, t)?;
        let path = dir.join(format!("measures_t{t}.csv"));
        io::write_measure(&mu, &field, create(&path)?).map_err(art_err(&path))?;
        let path = dir.join(format!("cdf_t{t}.csv"));
        io::write_cdf(&mu, create(&path)?).map_err(art_err(&path))?;
    }
    let path = dir.join("report.json");
    io::write_report(&report, create(&path)?).map_err(art_err(&path))?;
    let path = dir.join("scenario.toml");
    fs::write(&path, scenario.to_toml()).map_err(fs_err(&path))?;
    Ok(RunOutcome { dir: dir.to_path_buf(), record, report })
}

/// Re-verifies a stored trajectory. Masses, potentials and the horizon come
/// from `scenario` (by default the `scenario.toml` beside the trajectory);
/// events are read from the sibling `events.jsonl`.
pub fn check_trajectory(trajectory: &Path, scenario: &Scenario) -> Result<(TrajectoryRecord, DiagnosticsReport), CliError> {
    let mut built = scenario.build()?;
    let file = File::open(trajectory).map_err(fs_err(trajectory))?;
    let rows = io::read_trajectory(BufReader::new(file)).map_err(art_err(trajectory))?;
    let events_path = trajectory.with_file_name("events.jsonl");
    let events = match File::open(&events_path) {
        Ok(f) => io::read_events(BufReader::new(f)).map_err(art_err(&events_path))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(fs_err(&events_path)(e)),
    };
    let masses = built.initial.particle_masses.clone();
    let mut record = io::reconstruct(&rows, &events, &masses, scenario.run.horizon).map_err(art_err(trajectory))?;
    record.fill_gradients(built.v.as_ref(), &built.w);
    // Stored frames are coarser than the integrator, so quadrature is
    // refined at the run's step unless the scenario asks otherwise.
    built.verify.dt_quad = built.verify.dt_quad.or(Some(scenario.run.dt));
    let report = verify_all(&record, built.v.as_ref(), &built.w, &built.budget, &built.verify)?;
    Ok((record, report))
}

fn study_times(scenario: &Scenario) -> Result<Vec<f64>, CliError> {
    let h = scenario.run.horizon;
    let times = scenario.study.times.clone().unwrap_or_else(|| vec![h]);
    check_times("study.times", &times, h)?;
    Ok(times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `W1` to the next level at each study time; `None` on the last row.
    pub w1_next: Vec<Option<f64>>,
    pub weak_residual: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub collisions: usize,
    /// `None` when the horizon is shorter than one series term.
    pub psi_pass: Option<bool>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub times: Vec<f64>,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceStudy {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn measures_at(record: &TrajectoryRecord, times: &[f64]) -> Result<Vec<EmpiricalMeasure>, CliError> {
    times.iter().map(|&t| Ok(measure_at(record, t)?.0)).collect()
}

fn consecutive_w1(levels: &[Option<Vec<EmpiricalMeasure>>], k: usize, slot: usize) -> Option<f64> {
    match (levels.get(k)?, levels.get(k + 1)?) {
        (Some(a), Some(b)) => Some(wasserstein1(&a[slot], &b[slot])),
        _ => None,
    }
}

/// Quantizes the target with each `N`, runs the levels in parallel and
/// compares consecutive levels in `W1`.
pub fn convergence_study(scenario: &Scenario, n_list: &[usize]) -> Result<ConvergenceStudy, CliError> {
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(CliError::Usage("the N list needs positive entries".into()));
    }
    if scenario.initial.target.is_none() {
        return Err(
            ScenarioError::Validation { field: "initial.target".into(), message: "refinement needs a target measure".into() }.into()
        );
    }
    let base = scenario.build()?;
    let times = study_times(scenario)?;
    let levels: Vec<(TrajectoryRecord, DiagnosticsReport, Vec<EmpiricalMeasure>)> = n_list
        .par_iter()
        .map(|&n| {
            let built = Built { initial: scenario.initial_state(Some(n))?, ..base.clone() };
            let (record, report) = simulate(&built)?;
            let mus = measures_at(&record, &times)?;
            Ok((record, report, mus))
        })
        .collect::<Result<_, CliError>>()?;
    let mus: Vec<Option<Vec<EmpiricalMeasure>>> = levels.iter().map(|l| Some(l.2.clone())).collect();
    let rows = levels
        .iter()
        .enumerate()
        .map(|(k, (record, report, _))| ConvergenceRow {
            n: n_list[k],
            w1_next: (0..times.len()).map(|s| consecutive_w1(&mus, k, s)).collect(),
            weak_residual: report.entry("weak_solution").map_or(f64::NAN, |e| e.violation),
            energy_initial: report.energy_trace.first().map_or(f64::NAN, |e| e.1),
            energy_final: report.energy_trace.last().map_or(f64::NAN, |e| e.1),
            collisions: record.events.len(),
            psi_pass: report.entry("psi_budget").map(|e| e.pass),
            pass: report.all_pass(),
        })
        .collect();
    Ok(ConvergenceStudy { times, rows })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_convergence(study: &ConvergenceStudy, path: &Path) -> Result<(), CliError> {
    let to_err = |e: csv::Error| art_err(path)(IoError::Csv(e));
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["N".to_string()];
    header.extend(study.times.iter().map(|t| format!("w1_next_t{t}")));
    header.extend(["weak_residual", "energy_initial", "energy_final", "collisions", "psi_pass", "pass"].map(String::from));
    w.write_record(&header).map_err(to_err)?;
    for r in &study.rows {
        let mut rec = vec![r.n.to_string()];
        rec.extend(r.w1_next.iter().map(|x| opt(*x)));
        rec.extend([
            fmt_f64(r.weak_residual),
            fmt_f64(r.energy_initial),
            fmt_f64(r.energy_final),
            r.collisions.to_string(),
            r.psi_pass.map(|p| p.to_string()).unwrap_or_default(),
            r.pass.to_string(),
        ]);
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(fs_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepStatus {
    Ran {
        pass: bool,
        clusters: usize,
        collisions: usize,
    },
    /// `ε α >= 1`: the envelope is not defined, the level is skipped.
    NonCoercive(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub status: SweepStatus,
    pub w1_next: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSweep {
    pub times: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl EpsilonSweep {
    /// Every level that ran passed its checks.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| !matches!(r.status, SweepStatus::Ran { pass: false, .. }))
    }
}

/// Reruns the scenario with each regularization parameter.
pub fn epsilon_sweep(scenario: &Scenario, eps_list: &[f64]) -> Result<EpsilonSweep, CliError> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::Usage("the epsilon list needs positive entries".into()));
    }
    if scenario.regularized_fields().is_empty() {
        return Err(ScenarioError::Validation { field: "potentials".into(), message: "no potential has `regularize = true`".into() }.into());
    }
    let times = study_times(scenario)?;
    let levels: Vec<Result<(SweepStatus, Vec<EmpiricalMeasure>), CliError>> = eps_list
        .par_iter()
        .map(|&eps| {
            let mut s = scenario.clone();
            s.set_epsilon(eps);
            let built = match s.build() {
                Ok(b) => b,
                Err(ScenarioError::Potential { source: e @ PotentialError::NonCoercive { .. }, .. }) => {
                    return Ok((SweepStatus::NonCoercive(e.to_string()), Vec::new()))
                }
                Err(e) => return Err(e.into()),
            };
            let (record, report) = simulate(&built)?;
            let mus = measures_at(&record, &times)?;
            let status = SweepStatus::Ran {
                pass: report.all_pass(),
                clusters: record.final_frame().cluster_count(),
                collisions: record.events.len(),
            };
            Ok((status, mus))
        })
        .collect();
    let mut statuses = Vec::new();
    let mut mus = Vec::new();
    for level in levels {
        let (status, m) = level?;
        mus.push(matches!(status, SweepStatus::Ran { .. }).then_some(m));
        statuses.push(status);
    }
    let rows = statuses
        .into_iter()
        .enumerate()
        .map(|(k, status)| SweepRow {
            epsilon: eps_list[k],
            status,
            w1_next: (0..times.len()).map(|s| consecutive_w1(&mus, k, s)).collect(),
        })
        .collect();
    Ok(EpsilonSweep { times, rows })
}

pub fn write_sweep(sweep: &EpsilonSweep, path: &Path) -> Result<(), CliError> {
    let to_err = |e: csv::Error| art_err(path)(IoError::Csv(e));
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["epsilon".to_string(), "status".to_string()];
    header.extend(sweep.times.iter().map(|t| format!("w1_next_t{t}")));
    header.extend(["clusters", "collisions", "pass"].map(String::from));
    w.write_record(&header).map_err(to_err)?;
    for r in &sweep.rows {
        let mut rec = vec![fmt_f64(r.epsilon)];
        let tail = match &r.status {
            SweepStatus::Ran { pass, clusters, collisions } => {
                rec.push("ran".into());
                [clusters.to_string(), collisions.to_string(), pass.to_string()]
            }
            SweepStatus::NonCoercive(_) => {
                rec.push("non_coercive".into());
                [String::new(), String::new(), String::new()]
            }
        };
        rec.extend(r.w1_next.iter().map(|x| opt(*x)));
        rec.extend(tail);
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(fs_err(path))?;
    Ok(())
}
