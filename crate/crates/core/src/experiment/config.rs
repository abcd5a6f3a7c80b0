//! Declarative experiment configuration (TOML, schema version 1).

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::analysis::{CheckKind, CheckSettings, DEFAULT_U_GRID, DEFAULT_Z_GRID};
use crate::error::{Error, Result};
use crate::gge::{GeneralizedTemperatures, MomentTargets};
use crate::models::{build_tilted_ising_chain, build_xx_chain, Charge, CouplingKind, SystemSpec};
use crate::operator::Side;
use crate::pauli::{parse_pauli_sum, SiteLayout};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ENUMERATION_CAP: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    pub fn is_list(&self) -> bool {
        matches!(self, OneOrMany::Many(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Xx,
    TiltedIsing,
}

impl ModelKind {
    fn parameters(self) -> &'static [&'static str] {
        match self {
            ModelKind::Xx => &["J", "h"],
            ModelKind::TiltedIsing => &["J", "hx", "hz"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeConfig {
    pub name: String,
    /// Pauli-sum expression over the subsystem's sites.
    pub expr: Spanned<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub model: ModelKind,
    pub sites: Spanned<usize>,
    pub params: Spanned<BTreeMap<String, f64>>,
    /// Keep the model's own charges (total magnetization for `xx`).
    #[serde(default = "yes")]
    pub builtin_charges: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shared: Vec<ChargeConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusive: Vec<ChargeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Spanned<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Spanned<Vec<f64>>>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingName {
    Exchange,
    Ising,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub kind: CouplingName,
    pub g: Spanned<OneOrMany>,
    /// Pauli-sum over joint sites (`X[last_A] X[first_B]`, `Z[A0] Z[B1]`, …);
    /// required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<Spanned<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Enumerate,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub kind: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: Spanned<u32>,
    pub tau: Spanned<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Spanned<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_grid: Option<Spanned<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_grid: Option<Spanned<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumeration_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Spanned<ModeConfig>>,
    pub system_a: Spanned<SystemConfig>,
    pub system_b: Spanned<SystemConfig>,
    pub coupling: Spanned<CouplingConfig>,
}

/// How a subsystem's temperatures are obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum Temperatures {
    Explicit(GeneralizedTemperatures),
    Targets(MomentTargets),
}

#[derive(Clone, Debug)]
pub struct ResolvedSystem {
    pub spec: SystemSpec,
    pub temperatures: Temperatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Enumerate,
    Sample { count: u64, seed: u64 },
}

/// A parsed config with every field checked and every operator built.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub source: PathBuf,
    pub config: ExperimentConfig,
    pub system_a: ResolvedSystem,
    pub system_b: ResolvedSystem,
    pub coupling: CouplingKind,
    pub g_values: Vec<f64>,
    pub tau_values: Vec<f64>,
    pub checks: Vec<CheckKind>,
    pub settings: CheckSettings,
    pub mode: Mode,
    pub enumeration_cap: usize,
}

impl ExperimentConfig {
    /// The config as TOML, with the sampling seed pinned to `seed` so that
    /// re-running the echo reproduces the run.
    pub fn echo(&self, seed: Option<u64>) -> Result<String> {
        let mut copy = self.clone();
        if let (Some(mode), Some(seed)) = (copy.mode.as_mut(), seed) {
            mode.get_mut().seed = Some(seed);
        }
        toml::to_string(&copy).map_err(|e| Error::Config(format!("cannot echo config: {e}")))
    }
}

impl Experiment {
    pub fn joint_dim(&self) -> usize {
        self.system_a.spec.dim() * self.system_b.spec.dim()
    }

    /// Config stem, used to name the default output directory.
    pub fn name(&self) -> String {
        self.source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into())
    }
}

/// Turns byte spans into `file:line:column` anchors.
struct Anchor<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Anchor<'_> {
    fn at(&self, span: Range<usize>, message: impl std::fmt::Display) -> Error {
        let upto = &self.text[..span.start.min(self.text.len())];
        let line = upto.matches('\n').count() + 1;
        let column = upto.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Error::Config(format!("{}:{line}:{column}: {message}", self.path.display()))
    }

    fn wrap<T>(&self, span: Range<usize>, what: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| self.at(span, format!("{what}: {e}")))
    }
}

pub fn load(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

/// Parses and validates config text; `path` is only used in messages.
pub fn parse(text: &str, path: &Path) -> Result<Experiment> {
    let anchor = Anchor { path, text };
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| match e.span() {
        Some(span) => anchor.at(span, e.message()),
        None => Error::Config(format!("{}: {}", path.display(), e.message())),
    })?;

    if *config.schema_version.get_ref() != SCHEMA_VERSION {
        return Err(anchor.at(
            config.schema_version.span(),
            format!("unsupported schema_version {}; expected {SCHEMA_VERSION}", config.schema_version.get_ref()),
        ));
    }

    let system_a = resolve_system(&anchor, &config.system_a, Side::A)?;
    let system_b = resolve_system(&anchor, &config.system_b, Side::B)?;
    let shared_a: Vec<&str> = system_a.spec.shared_charges.iter().map(|c| c.name.as_str()).collect();
    let shared_b: Vec<&str> = system_b.spec.shared_charges.iter().map(|c| c.name.as_str()).collect();
    if shared_a != shared_b {
        return Err(anchor.at(
            config.system_b.span(),
            format!("shared charges must match across systems: A has {shared_a:?}, B has {shared_b:?}"),
        ));
    }

    let coupling = resolve_coupling(&anchor, &config.coupling, &config.system_a, &config.system_b)?;
    let g_values = config.coupling.get_ref().g.get_ref().values();
    check_grid(&anchor, &config.coupling.get_ref().g, "g", |g| g.is_finite() && g >= 0.0)?;
    let tau_values = config.tau.get_ref().values();
    check_grid(&anchor, &config.tau, "tau", |t| t.is_finite() && t >= 0.0)?;

    let mode = resolve_mode(&anchor, &config.mode)?;
    let checks = resolve_checks(&anchor, &config, mode)?;
    let mut settings = CheckSettings::default();
    if let Some(z) = &config.z_grid {
        if z.get_ref().iter().any(|&z| z == 1.0 || !z.is_finite()) {
            return Err(
                anchor.at(z.span(), "z_grid must be finite and exclude z = 1 (that point is the mean-heat check)")
            );
        }
        settings.z_grid = z.get_ref().clone();
    } else {
        settings.z_grid = DEFAULT_Z_GRID.to_vec();
    }
    if let Some(u) = &config.u_grid {
        if u.get_ref().iter().any(|u| !u.is_finite()) {
            return Err(anchor.at(u.span(), "u_grid must be finite"));
        }
        settings.u_grid = u.get_ref().clone();
    } else {
        settings.u_grid = DEFAULT_U_GRID.to_vec();
    }

    let enumeration_cap = config.enumeration_cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
    let experiment = Experiment {
        source: path.to_path_buf(),
        system_a,
        system_b,
        coupling,
        g_values,
        tau_values,
        checks,
        settings,
        mode,
        enumeration_cap,
        config,
    };
    if experiment.mode == Mode::Enumerate && experiment.joint_dim() > enumeration_cap {
        let span = experiment.config.mode.as_ref().map_or(0..0, |m| m.span());
        return Err(anchor.at(
            span,
            format!(
                "joint dimension {} exceeds the enumeration cap {enumeration_cap}; use mode.kind = \"sample\" or raise enumeration_cap",
                experiment.joint_dim()
            ),
        ));
    }
    Ok(experiment)
}

fn check_grid(anchor: &Anchor, grid: &Spanned<OneOrMany>, name: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
    let values = grid.get_ref().values();
    if values.is_empty() {
        return Err(anchor.at(grid.span(), format!("{name} list is empty")));
    }
    if let Some(bad) = values.iter().find(|&&x| !ok(x)) {
        return Err(anchor.at(grid.span(), format!("{name} = {bad} must be finite and non-negative")));
    }
    Ok(())
}

fn resolve_system(anchor: &Anchor, cfg: &Spanned<SystemConfig>, side: Side) -> Result<ResolvedSystem> {
    let sys = cfg.get_ref();
    let n = *sys.sites.get_ref();
    if !(1..=12).contains(&n) {
        return Err(anchor.at(sys.sites.span(), format!("sites = {n} must be between 1 and 12")));
    }

    let params = sys.params.get_ref();
    let allowed = sys.model.parameters();
    if let Some(unknown) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(
            anchor.at(sys.params.span(), format!("unknown parameter '{unknown}' for this model; expected {allowed:?}"))
        );
    }
    let param = |name: &str| -> Result<f64> {
        let v = params
            .get(name)
            .copied()
            .ok_or_else(|| anchor.at(sys.params.span(), format!("missing parameter '{name}'")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(anchor.at(sys.params.span(), format!("parameter '{name}' is not finite")))
        }
    };

    let base = match sys.model {
        ModelKind::Xx => build_xx_chain(n, param("J")?, param("h")?, side),
        ModelKind::TiltedIsing => build_tilted_ising_chain(n, param("J")?, param("hx")?, param("hz")?, side),
    };
    let mut spec = anchor.wrap(cfg.span(), "model", base)?;
    if !sys.builtin_charges {
        spec.shared_charges.clear();
        spec.exclusive_charges.clear();
    }

    let layout = SiteLayout::Single { n_sites: n };
    let build = |c: &ChargeConfig| -> Result<Charge> {
        let op = parse_pauli_sum(c.expr.get_ref(), layout).and_then(|s| s.to_operator());
        Ok(Charge::new(c.name.clone(), anchor.wrap(c.expr.span(), &format!("charge '{}'", c.name), op)?))
    };
    let shared = sys.shared.iter().map(build).collect::<Result<Vec<_>>>()?;
    let exclusive = sys.exclusive.iter().map(build).collect::<Result<Vec<_>>>()?;
    spec.shared_charges.extend(shared);
    spec.exclusive_charges.extend(exclusive);

    let names = spec.generator_names();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(anchor.at(cfg.span(), format!("duplicate generator name '{name}'")));
        }
    }

    let count = spec.operator_count();
    let temperatures = match (&sys.theta, &sys.targets) {
        (Some(_), Some(t)) => {
            return Err(anchor.at(t.span(), "give either theta or targets, not both"));
        }
        (None, None) => {
            return Err(
                anchor.at(cfg.span(), format!("system {side} needs theta or targets ({count} values: {names:?})"))
            );
        }
        (Some(theta), None) => {
            expect_len(anchor, theta, count, "theta", &names)?;
            let t = anchor.wrap(theta.span(), "theta", GeneralizedTemperatures::new(theta.get_ref().clone()))?;
            Temperatures::Explicit(t)
        }
        (None, Some(targets)) => {
            expect_len(anchor, targets, count, "targets", &names)?;
            let t = anchor.wrap(targets.span(), "targets", MomentTargets::new(targets.get_ref().clone()))?;
            Temperatures::Targets(t)
        }
    };
    Ok(ResolvedSystem { spec, temperatures })
}

fn expect_len(anchor: &Anchor, values: &Spanned<Vec<f64>>, count: usize, what: &str, names: &[String]) -> Result<()> {
    if values.get_ref().len() == count {
        Ok(())
    } else {
        Err(anchor.at(
            values.span(),
            format!("{what} has {} values but the system has {count} generators {names:?}", values.get_ref().len()),
        ))
    }
}

fn resolve_coupling(
    anchor: &Anchor,
    cfg: &Spanned<CouplingConfig>,
    a: &Spanned<SystemConfig>,
    b: &Spanned<SystemConfig>,
) -> Result<CouplingKind> {
    let c = cfg.get_ref();
    match (c.kind, &c.expr) {
        (CouplingName::Custom, Some(expr)) => {
            let layout = SiteLayout::Joint { n_a: *a.get_ref().sites.get_ref(), n_b: *b.get_ref().sites.get_ref() };
            let op = parse_pauli_sum(expr.get_ref(), layout).and_then(|s| s.to_operator());
            Ok(CouplingKind::Custom(anchor.wrap(expr.span(), "coupling expr", op)?))
        }
        (CouplingName::Custom, None) => Err(anchor.at(cfg.span(), "custom coupling needs an expr")),
        (_, Some(expr)) => Err(anchor.at(expr.span(), "expr is only allowed with kind = \"custom\"")),
        (CouplingName::Exchange, None) => Ok(CouplingKind::Exchange),
        (CouplingName::Ising, None) => Ok(CouplingKind::Ising),
    }
}

fn resolve_mode(anchor: &Anchor, cfg: &Option<Spanned<ModeConfig>>) -> Result<Mode> {
    let Some(cfg) = cfg else {
        return Ok(Mode::Enumerate);
    };
    let m = cfg.get_ref();
    match m.kind {
        ModeName::Enumerate => {
            if m.count.is_some() {
                return Err(anchor.at(cfg.span(), "count is only meaningful with kind = \"sample\""));
            }
            Ok(Mode::Enumerate)
        }
        ModeName::Sample => {
            let count = m.count.ok_or_else(|| anchor.at(cfg.span(), "sample mode needs count"))?;
            if count == 0 {
                return Err(anchor.at(cfg.span(), "count must be at least 1"));
            }
            Ok(Mode::Sample { count, seed: m.seed.unwrap_or(0) })
        }
    }
}

fn resolve_checks(anchor: &Anchor, config: &ExperimentConfig, mode: Mode) -> Result<Vec<CheckKind>> {
    let Some(list) = &config.checks else {
        return Ok(match mode {
            Mode::Enumerate => CheckKind::STANDARD.to_vec(),
            Mode::Sample { .. } => vec![CheckKind::IntegralFt, CheckKind::MeanHeat],
        });
    };
    let mut out = Vec::new();
    for name in list.get_ref() {
        let kind = CheckKind::from_name(name).ok_or_else(|| {
            let known: Vec<&str> = CheckKind::ALL.iter().map(|k| k.name()).collect();
            anchor.at(list.span(), format!("unknown check '{name}'; known checks: {known:?}"))
        })?;
        if matches!(mode, Mode::Sample { .. }) && !kind.supports_sampling() {
            return Err(anchor.at(list.span(), format!("check '{name}' needs mode.kind = \"enumerate\"")));
        }
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(out)
}
