//! `run`, `scan` and `verify` over a validated [`Experiment`].

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{coupling_scan_with, scan_points, ScanReport, ScanRow, VerificationReport};
use crate::error::{Error, Result};
use crate::experiment::config::{Experiment, ExperimentConfig, Mode, ResolvedSystem, Temperatures, SCHEMA_VERSION};
use crate::experiment::output::{
    csv_table, format_reports, report_rows, write_json, write_text, Cell, RunLock, CONFIG_ECHO_FILE, DISTRIBUTION_FILE,
    REPORT_FILE, RESULT_FILE, SCAN_FILE,
};
use crate::gge::{fit_temperatures, gge_state, moments, FitOptions, GeneralizedTemperatures, MomentTargets};
use crate::models::{
    build_composite_unchecked, verify_assumptions, AssumptionCheck, AssumptionReport, ConservationDiagnostics,
    SystemSpec,
};
use crate::operator::Side;
use crate::pipeline::{Realization, SamplingMode, Scenario};
use crate::tpm::{binned_distribution, ValueKind};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Output directory; overrides the config.
    pub out: Option<PathBuf>,
    /// Sampling seed; overrides the config.
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Run,
    Scan,
    Verify,
}

#[derive(Clone, Debug, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

const TOOL: ToolInfo = ToolInfo { name: "heatlab", version: env!("CARGO_PKG_VERSION") };

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemSummary {
    pub side: Side,
    pub model_id: String,
    pub generators: Vec<String>,
    pub theta: GeneralizedTemperatures,
    /// Present when `theta` was fitted to moment targets.
    pub fit: Option<FitSummary>,
    pub moments: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Atom {
    pub value_kind: &'static str,
    pub value: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointDiagnostics {
    pub condition_number: f64,
    pub clamped_eigenvalues: usize,
    pub mean_heat_deviation: f64,
    pub max_heat_deviation: f64,
    pub conservation: ConservationDiagnostics,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointResult {
    pub g: f64,
    pub tau: f64,
    pub pairs: usize,
    pub distribution: Vec<Atom>,
    pub reports: Vec<VerificationReport>,
    pub diagnostics: PointDiagnostics,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub command: Command,
    pub config: ExperimentConfig,
    pub mode: String,
    pub seed: Option<u64>,
    pub systems: Vec<SystemSummary>,
    pub assumptions: AssumptionReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanReport>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub out_dir: PathBuf,
    pub result: RunResult,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

fn output_dir(exp: &Experiment, opts: &RunOptions) -> PathBuf {
    opts.out.clone().or_else(|| exp.config.output.clone()).unwrap_or_else(|| Path::new("results").join(exp.name()))
}

fn effective_mode(exp: &Experiment, opts: &RunOptions) -> Mode {
    match (exp.mode, opts.seed) {
        (Mode::Sample { count, .. }, Some(seed)) => Mode::Sample { count, seed },
        (mode, _) => mode,
    }
}

fn mode_label(mode: Mode) -> String {
    match mode {
        Mode::Enumerate => "enumerate".into(),
        Mode::Sample { count, .. } => format!("sample({count})"),
    }
}

/// Explicit temperatures, or a fit from zero to the moment targets.
fn resolve_temperatures(sys: &ResolvedSystem) -> Result<(GeneralizedTemperatures, Option<FitSummary>)> {
    match &sys.temperatures {
        Temperatures::Explicit(theta) => Ok((theta.clone(), None)),
        Temperatures::Targets(targets) => {
            let fit = fit_temperatures(
                &sys.spec,
                targets,
                &GeneralizedTemperatures::zeros(sys.spec.operator_count()),
                FitOptions::default(),
            )?;
            Ok((fit.theta, Some(FitSummary { iterations: fit.iterations, residual: fit.residual })))
        }
    }
}

fn summarize(spec: &SystemSpec, theta: GeneralizedTemperatures, fit: Option<FitSummary>) -> Result<SystemSummary> {
    let state = gge_state(spec, &theta)?;
    Ok(SystemSummary {
        side: spec.label,
        model_id: spec.model_id.clone(),
        generators: spec.generator_names(),
        theta,
        fit,
        moments: moments(&state),
    })
}

struct Prepared {
    scenario: Scenario,
    systems: Vec<SystemSummary>,
    assumptions: AssumptionReport,
}

fn prepare(exp: &Experiment, g: f64, tau: f64) -> Result<Prepared> {
    exp.system_a.spec.validate()?;
    exp.system_b.spec.validate()?;
    let (theta_a, fit_a) = resolve_temperatures(&exp.system_a)?;
    let (theta_b, fit_b) = resolve_temperatures(&exp.system_b)?;
    let cs = build_composite_unchecked(&exp.system_a.spec, &exp.system_b.spec, exp.coupling.clone(), g)?;
    let assumptions = verify_assumptions(&cs)?;
    let systems = vec![
        summarize(&exp.system_a.spec, theta_a.clone(), fit_a)?,
        summarize(&exp.system_b.spec, theta_b.clone(), fit_b)?,
    ];
    Ok(Prepared {
        scenario: Scenario {
            spec_a: exp.system_a.spec.clone(),
            spec_b: exp.system_b.spec.clone(),
            coupling: exp.coupling.clone(),
            g,
            tau,
            theta_a,
            theta_b,
        },
        systems,
        assumptions,
    })
}

impl Experiment {
    /// The protocol at the first `(g, τ)` of the config, with temperatures
    /// resolved (fitted if the config gives targets).
    pub fn scenario(&self) -> Result<Scenario> {
        Ok(prepare(self, self.g_values[0], self.tau_values[0])?.scenario)
    }
}

fn single(values: &[f64], name: &str, exp: &Experiment) -> Result<f64> {
    match values {
        [x] => Ok(*x),
        _ => Err(Error::Config(format!(
            "{}: `run` needs a single {name}, got {} values; use `scan` for lists",
            exp.source.display(),
            values.len()
        ))),
    }
}

fn point_result(real: &Realization, reports: Vec<VerificationReport>, bin_eps: f64) -> PointResult {
    let jd = &real.distribution;
    let distribution = ValueKind::ALL
        .iter()
        .flat_map(|&kind| {
            binned_distribution(jd, kind, bin_eps).into_iter().map(move |(value, probability)| Atom {
                value_kind: kind.as_str(),
                value,
                probability,
            })
        })
        .collect();
    let (mean, max) = real.heat_deviation();
    PointResult {
        g: jd.metadata.g.unwrap_or(f64::NAN),
        tau: jd.metadata.tau.unwrap_or(f64::NAN),
        pairs: jd.entries.len(),
        distribution,
        reports,
        diagnostics: PointDiagnostics {
            condition_number: real.initial.condition_number(),
            clamped_eigenvalues: real.initial.clamped,
            mean_heat_deviation: mean,
            max_heat_deviation: max,
            conservation: real.system.diagnostics.clone(),
        },
    }
}

fn distribution_table(atoms: &[Atom]) -> String {
    csv_table(
        &["value_kind", "value", "probability"],
        atoms.iter().map(|a| vec![Cell::Text(a.value_kind), Cell::Number(a.value), Cell::Number(a.probability)]),
    )
}

/// Build → fit → evolve → measure → verify at a single `(g, τ)`.
pub fn run(exp: &Experiment, opts: &RunOptions) -> Result<Outcome> {
    let g = single(&exp.g_values, "g", exp)?;
    let tau = single(&exp.tau_values, "tau", exp)?;
    let mode = effective_mode(exp, opts);
    let prepared = prepare(exp, g, tau)?;

    let dir = output_dir(exp, opts);
    let _lock = RunLock::acquire(&dir)?;
    let sampling = match mode {
        Mode::Enumerate => SamplingMode::Enumerate,
        Mode::Sample { count, seed } => SamplingMode::Sample { count, seed },
    };
    let real = prepared.scenario.realize_with(sampling)?;
    let reports = real.verify(&exp.checks, &exp.settings)?;
    let point = point_result(&real, reports, exp.settings.bin_eps);
    let passed = point.reports.iter().all(|r| r.passed);

    write_text(&dir.join(DISTRIBUTION_FILE), &distribution_table(&point.distribution))?;
    write_text(
        &dir.join(REPORT_FILE),
        &csv_table(&["check", "max_error", "tolerance", "passed"], report_rows(&point.reports)),
    )?;
    let summary = format_reports(&point.reports);
    let result = RunResult {
        schema_version: SCHEMA_VERSION,
        tool: TOOL,
        command: Command::Run,
        config: exp.config.clone(),
        mode: mode_label(mode),
        seed: match mode {
            Mode::Sample { seed, .. } => Some(seed),
            Mode::Enumerate => None,
        },
        systems: prepared.systems,
        assumptions: prepared.assumptions,
        points: vec![point],
        scan: None,
        passed,
    };
    write_text(&dir.join(CONFIG_ECHO_FILE), &result.config.echo(result.seed)?)?;
    write_json(&dir.join(RESULT_FILE), &result)?;
    Ok(Outcome { passed, out_dir: dir, result, summary })
}

fn scan_table(rows: &[ScanRow]) -> String {
    csv_table(
        &[
            "g",
            "tau",
            "mean_heat_deviation",
            "ft_residual_sigma",
            "ft_residual_heat",
            "max_heat_deviation",
            "sigma_residual_ratio",
            "sigma_passed",
        ],
        rows.iter().map(|r| {
            vec![
                Cell::Number(r.g),
                Cell::Number(r.tau),
                Cell::Number(r.mean_heat_deviation),
                Cell::Number(r.ft_residual_sigma),
                Cell::Number(r.ft_residual_heat),
                Cell::Number(r.max_heat_deviation),
                Cell::Number(r.sigma_residual_ratio),
                Cell::Flag(r.sigma_passed),
            ]
        }),
    )
}

/// Every `(g, τ)` of the config grid. A coupling list at fixed `τ` is a
/// weak-coupling scan and also asserts the shrinking heat deviation.
pub fn scan(exp: &Experiment, opts: &RunOptions) -> Result<Outcome> {
    if exp.mode != Mode::Enumerate {
        return Err(Error::Config(format!("{}: `scan` needs mode.kind = \"enumerate\"", exp.source.display())));
    }
    let prepared = prepare(exp, exp.g_values[0], exp.tau_values[0])?;
    let dir = output_dir(exp, opts);
    let _lock = RunLock::acquire(&dir)?;

    let report = if exp.tau_values.len() == 1 && exp.g_values.len() > 1 {
        coupling_scan_with(&prepared.scenario, &exp.g_values, &exp.checks, &exp.settings)?
    } else {
        let points: Vec<(f64, f64)> =
            exp.g_values.iter().flat_map(|&g| exp.tau_values.iter().map(move |&t| (g, t))).collect();
        scan_points(&prepared.scenario, &points, &exp.checks, &exp.settings)?
    };

    write_text(&dir.join(SCAN_FILE), &scan_table(&report.rows))?;
    let report_table = csv_table(
        &["g", "tau", "check", "max_error", "tolerance", "passed"],
        report.rows.iter().flat_map(|row| {
            report_rows(&row.reports).map(move |mut cells| {
                cells.splice(0..0, [Cell::Number(row.g), Cell::Number(row.tau)]);
                cells
            })
        }),
    );
    write_text(&dir.join(REPORT_FILE), &report_table)?;

    let mut summary = String::new();
    for row in &report.rows {
        summary.push_str(&format!(
            "g = {:<8} tau = {:<8} mean|heat_A - sigma| = {:.3e}  sigma checks {}\n",
            row.g,
            row.tau,
            row.mean_heat_deviation,
            if row.sigma_passed { "PASS" } else { "FAIL" }
        ));
    }
    if let Some(monotone) = report.monotone {
        summary.push_str(&format!("heat deviation shrinks with g: {}\n", if monotone { "PASS" } else { "FAIL" }));
    }
    let passed = report.passed;
    let result = RunResult {
        schema_version: SCHEMA_VERSION,
        tool: TOOL,
        command: Command::Scan,
        config: exp.config.clone(),
        mode: mode_label(exp.mode),
        seed: None,
        systems: prepared.systems,
        assumptions: prepared.assumptions,
        points: Vec::new(),
        scan: Some(report),
        passed,
    };
    write_text(&dir.join(CONFIG_ECHO_FILE), &result.config.echo(result.seed)?)?;
    write_json(&dir.join(RESULT_FILE), &result)?;
    Ok(Outcome { passed, out_dir: dir, result, summary })
}

/// Round trip `θ → moments → fit` (explicit temperatures) or a fit to the
/// targets, as an assumption check.
fn fit_check(sys: &ResolvedSystem) -> (AssumptionCheck, Option<(GeneralizedTemperatures, Option<FitSummary>)>) {
    let side = sys.spec.label;
    let (targets, explicit) = match &sys.temperatures {
        Temperatures::Targets(t) => (t.clone(), None),
        Temperatures::Explicit(theta) => {
            match gge_state(&sys.spec, theta).and_then(|s| MomentTargets::new(moments(&s))) {
                Ok(t) => (t, Some(theta.clone())),
                Err(e) => return (AssumptionCheck::failed(format!("{side}: temperatures"), e.to_string()), None),
            }
        }
    };
    let scale = targets.as_slice().iter().fold(1.0f64, |m, t| m.max(t.abs()));
    let name =
        if explicit.is_some() { format!("{side}: fit round trip") } else { format!("{side}: target feasibility") };
    match fit_temperatures(
        &sys.spec,
        &targets,
        &GeneralizedTemperatures::zeros(sys.spec.operator_count()),
        FitOptions::default(),
    ) {
        Ok(fit) => {
            let check = AssumptionCheck::new(name, fit.residual, 1e-10 * scale);
            let summary = FitSummary { iterations: fit.iterations, residual: fit.residual };
            let theta = explicit.unwrap_or(fit.theta);
            (check, Some((theta, Some(summary))))
        }
        Err(e) => (AssumptionCheck::failed(name, e.to_string()), explicit.map(|t| (t, None))),
    }
}

/// Commutation, reality and feasibility diagnostics without any evolution.
pub fn verify(exp: &Experiment, opts: &RunOptions) -> Result<Outcome> {
    let g = exp.g_values[0];
    let cs = build_composite_unchecked(&exp.system_a.spec, &exp.system_b.spec, exp.coupling.clone(), g)?;
    let mut assumptions = verify_assumptions(&cs)?;
    let mut systems = Vec::new();
    // fits assume commuting generators; skip them when that already failed
    let commuting = assumptions.passed();
    for sys in [&exp.system_a, &exp.system_b] {
        if !commuting {
            continue;
        }
        let (check, resolved) = fit_check(sys);
        assumptions.checks.push(check);
        if let Some((theta, fit)) = resolved {
            systems.push(summarize(&sys.spec, theta, fit)?);
        }
    }

    let dir = output_dir(exp, opts);
    let _lock = RunLock::acquire(&dir)?;
    let table = csv_table(
        &["check", "value", "tolerance", "passed"],
        assumptions
            .checks
            .iter()
            .map(|c| vec![Cell::Text(&c.name), Cell::Number(c.value), Cell::Number(c.tolerance), Cell::Flag(c.passed)]),
    );
    write_text(&dir.join(REPORT_FILE), &table)?;

    let width = assumptions.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut summary = format!("{:<width$}  {:>12}  {:>12}  status\n", "check", "value", "tolerance");
    for c in &assumptions.checks {
        summary.push_str(&format!(
            "{:<width$}  {:>12.3e}  {:>12.3e}  {}\n",
            c.name,
            c.value,
            c.tolerance,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    let passed = assumptions.passed();
    let result = RunResult {
        schema_version: SCHEMA_VERSION,
        tool: TOOL,
        command: Command::Verify,
        config: exp.config.clone(),
        mode: mode_label(exp.mode),
        seed: None,
        systems,
        assumptions,
        points: Vec::new(),
        scan: None,
        passed,
    };
    write_text(&dir.join(CONFIG_ECHO_FILE), &result.config.echo(result.seed)?)?;
    write_json(&dir.join(RESULT_FILE), &result)?;
    Ok(Outcome { passed, out_dir: dir, result, summary })
}
