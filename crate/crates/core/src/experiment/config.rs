//! Experiment configuration: a TOML file with one section per pipeline stage.
//! Every field has a default; an empty file runs the built-in benchmark.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{CountLaw, OccurrenceKind};
use crate::severity::SeverityFamily;
use crate::traffic::{DrivingConfig, DrivingPreset};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    pub fleet: FleetSection,
    pub occurrence: OccurrenceSection,
    pub severity: SeveritySection,
    pub horizon: HorizonSection,
    pub sampling: SamplingSection,
    pub contracts: ContractSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Pre-computed scenario statistics and speeds; the built-in network is
    /// simulated when absent.
    pub scenario_csv: Option<PathBuf>,
    /// Integration step of the simulator, s.
    pub dt: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            scenario_csv: None,
            dt: crate::traffic::DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSection {
    /// Fraction of flows belonging to the insured fleet.
    pub share: f64,
    /// One of `xi1a` .. `xi3b`; ignored when all custom parameters are set.
    pub preset: Option<String>,
    pub v_max: Option<f64>,
    pub a_max: Option<f64>,
    pub headway: Option<f64>,
}

impl Default for FleetSection {
    fn default() -> Self {
        Self {
            share: 0.5,
            preset: Some("xi2b".into()),
            v_max: None,
            a_max: None,
            headway: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccurrenceSection {
    /// `uniform` or `nonuniform`.
    pub kind: String,
    /// Any of `binomial`, `poisson`.
    pub count_laws: Vec<String>,
}

impl Default for OccurrenceSection {
    fn default() -> Self {
        Self {
            kind: "nonuniform".into(),
            count_laws: vec!["binomial".into(), "poisson".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeveritySection {
    /// Any of `gamma`, `lognormal`.
    pub families: Vec<String>,
    pub cvs: Vec<f64>,
}

impl Default for SeveritySection {
    fn default() -> Self {
        Self {
            families: vec!["gamma".into(), "lognormal".into()],
            cvs: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonSection {
    /// Time buckets per year.
    pub buckets: u64,
    /// Bucket (and scenario) length, s.
    pub bucket_seconds: f64,
    /// Expected accidents per year in the whole system.
    pub accidents_per_year: f64,
}

impl Default for HorizonSection {
    fn default() -> Self {
        Self {
            buckets: crate::annual::DEFAULT_BUCKETS,
            bucket_seconds: crate::scenario::DEFAULT_DURATION,
            accidents_per_year: crate::hazard::DEFAULT_ACCIDENTS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Number of scenarios `K` (even).
    pub scenarios: usize,
    /// Monte Carlo draws of the annual loss.
    pub draws: usize,
    /// Pre-sampled speeds per scenario.
    pub psi_samples: usize,
    /// Year compositions for approximate pricing.
    pub mu_draws: usize,
    /// Monte Carlo draws of the pricing reference; 0 uses `draws`.
    pub reference_draws: usize,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            scenarios: crate::scenario::DEFAULT_SCENARIOS,
            draws: crate::annual::DEFAULT_DRAWS,
            psi_samples: crate::scenario::DEFAULT_PSI_SAMPLES,
            mu_draws: crate::approx::DEFAULT_MU_DRAWS,
            reference_draws: 100_000,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractSection {
    /// Explicit thresholds; when absent an evenly spaced grid between two
    /// loss quantiles is used.
    pub thetas: Option<Vec<f64>>,
    pub grid_from: f64,
    pub grid_to: f64,
    pub grid_points: usize,
}

impl Default for ContractSection {
    fn default() -> Self {
        Self {
            thetas: None,
            grid_from: 0.5,
            grid_to: 0.95,
            grid_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A problem with one configuration field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Parses configuration text; `path` only labels errors.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::ConfigSyntax {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Reads a configuration file. A relative `scenario_csv` is resolved against
/// the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text, path)?;
    if let Some(csv) = &config.network.scenario_csv {
        if csv.is_relative() {
            if let Some(dir) = path.parent() {
                config.network.scenario_csv = Some(dir.join(csv));
            }
        }
    }
    Ok(config)
}

/// Validated, typed view of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub scenario_csv: Option<PathBuf>,
    pub dt: f64,
    pub fleet_share: f64,
    pub fleet_name: String,
    pub fleet: DrivingConfig,
    pub kind: OccurrenceKind,
    pub count_laws: Vec<CountLaw>,
    pub families: Vec<SeverityFamily>,
    pub buckets: u64,
    pub bucket_seconds: f64,
    pub accidents_per_year: f64,
    pub scenarios: usize,
    pub draws: usize,
    pub psi_samples: usize,
    pub mu_draws: usize,
    pub reference_draws: usize,
    pub seed: u64,
    pub thetas: Option<Vec<f64>>,
    pub grid: (f64, f64, usize),
    pub out_dir: PathBuf,
}

struct Checker(Vec<Diagnostic>);

impl Checker {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic { field: field.into(), message: message.into() });
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.push(field, format!("must be positive, got {v}"));
        }
    }

    fn at_least(&mut self, field: &str, v: usize, min: usize) {
        if v < min {
            self.push(field, format!("must be at least {min}, got {v}"));
        }
    }
}

fn parse_law(s: &str) -> Option<CountLaw> {
    match s.to_ascii_lowercase().as_str() {
        "binomial" => Some(CountLaw::Binomial),
        "poisson" => Some(CountLaw::Poisson),
        _ => None,
    }
}

fn resolve(config: &ExperimentConfig) -> (Option<Plan>, Vec<Diagnostic>) {
    let mut c = Checker(Vec::new());

    if let Some(p) = &config.network.scenario_csv {
        if !p.is_file() {
            c.push("network.scenario_csv", format!("file {} does not exist", p.display()));
        }
    }
    c.positive("network.dt", config.network.dt);

    let f = &config.fleet;
    if !(0.0..=1.0).contains(&f.share) {
        c.push("fleet.share", format!("must lie in [0, 1], got {}", f.share));
    }
    let custom = [f.v_max, f.a_max, f.headway];
    let fleet = if custom.iter().all(Option::is_some) {
        let (v, a, h) = (f.v_max.unwrap_or_default(), f.a_max.unwrap_or_default(), f.headway.unwrap_or_default());
        c.positive("fleet.v_max", v);
        c.positive("fleet.a_max", a);
        c.positive("fleet.headway", h);
        DrivingConfig::new(v, a, h).ok().map(|cfg| ("custom".to_string(), cfg))
    } else if custom.iter().any(Option::is_some) {
        c.push("fleet", "custom driving needs all of v_max, a_max and headway");
        None
    } else {
        match f.preset.as_deref().map(str::parse::<DrivingPreset>) {
            Some(Ok(p)) => Some((p.name().to_string(), p.config())),
            Some(Err(_)) => {
                c.push("fleet.preset", format!("unknown preset `{}`; expected xi1a .. xi3b", f.preset.as_deref().unwrap_or_default()));
                None
            }
            None => {
                c.push("fleet", "set either a preset or v_max, a_max and headway");
                None
            }
        }
    };

    let kind = match config.occurrence.kind.to_ascii_lowercase().as_str() {
        "uniform" => Some(OccurrenceKind::Uniform),
        "nonuniform" | "non-uniform" => Some(OccurrenceKind::NonUniform),
        other => {
            c.push("occurrence.kind", format!("expected `uniform` or `nonuniform`, got `{other}`"));
            None
        }
    };
    let mut laws = Vec::new();
    for (i, s) in config.occurrence.count_laws.iter().enumerate() {
        match parse_law(s) {
            Some(l) if !laws.contains(&l) => laws.push(l),
            Some(_) => c.push(format!("occurrence.count_laws[{i}]"), format!("duplicate `{s}`")),
            None => c.push(format!("occurrence.count_laws[{i}]"), format!("expected `binomial` or `poisson`, got `{s}`")),
        }
    }
    if config.occurrence.count_laws.is_empty() {
        c.push("occurrence.count_laws", "must list at least one count law");
    }

    for (i, &cv) in config.severity.cvs.iter().enumerate() {
        if !(cv.is_finite() && cv > 0.0) {
            c.push(format!("severity.cvs[{i}]"), format!("coefficient of variation must be positive, got {cv}"));
        }
    }
    if config.severity.cvs.is_empty() {
        c.push("severity.cvs", "must list at least one coefficient of variation");
    }
    if config.severity.families.is_empty() {
        c.push("severity.families", "must list at least one family");
    }
    let mut families = Vec::new();
    for (i, name) in config.severity.families.iter().enumerate() {
        let lower = name.to_ascii_lowercase();
        if lower != "gamma" && lower != "lognormal" {
            c.push(format!("severity.families[{i}]"), format!("expected `gamma` or `lognormal`, got `{name}`"));
            continue;
        }
        for &cv in &config.severity.cvs {
            families.push(if lower == "gamma" { SeverityFamily::Gamma { cv } } else { SeverityFamily::LogNormal { cv } });
        }
    }

    let h = &config.horizon;
    if h.buckets == 0 {
        c.push("horizon.buckets", "must be at least 1");
    }
    c.positive("horizon.bucket_seconds", h.bucket_seconds);
    c.positive("horizon.accidents_per_year", h.accidents_per_year);
    if h.buckets > 0 && h.accidents_per_year.is_finite() && h.accidents_per_year > h.buckets as f64 {
        c.push(
            "horizon.accidents_per_year",
            format!("{} accidents over {} buckets gives a bucket probability above 1", h.accidents_per_year, h.buckets),
        );
    }
    if h.bucket_seconds > crate::traffic::benchmark::LAST_OBSERVED - crate::traffic::benchmark::WARM_UP
        && config.network.scenario_csv.is_none()
    {
        c.push("horizon.bucket_seconds", "longer than the observable part of the built-in schedule");
    }

    let s = &config.sampling;
    if s.scenarios == 0 || s.scenarios % 2 == 1 {
        c.push("sampling.scenarios", format!("must be even and positive, got {}", s.scenarios));
    }
    c.at_least("sampling.draws", s.draws, 1);
    c.at_least("sampling.psi_samples", s.psi_samples, 1);
    c.at_least("sampling.mu_draws", s.mu_draws, 1);

    let k = &config.contracts;
    if let Some(ts) = &k.thetas {
        for (i, &t) in ts.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0) {
                c.push(format!("contracts.thetas[{i}]"), format!("threshold must be non-negative, got {t}"));
            }
        }
    } else {
        for (name, v) in [("contracts.grid_from", k.grid_from), ("contracts.grid_to", k.grid_to)] {
            if !(v > 0.0 && v < 1.0) {
                c.push(name, format!("quantile level must lie in (0, 1), got {v}"));
            }
        }
        if k.grid_from > k.grid_to {
            c.push("contracts.grid_to", "must not be below grid_from");
        }
        c.at_least("contracts.grid_points", k.grid_points, 1);
    }

    let diagnostics = c.0;
    if !diagnostics.is_empty() {
        return (None, diagnostics);
    }
    let (fleet_name, fleet) = fleet.expect("checked above");
    let plan = Plan {
        scenario_csv: config.network.scenario_csv.clone(),
        dt: config.network.dt,
        fleet_share: f.share,
        fleet_name,
        fleet,
        kind: kind.expect("checked above"),
        count_laws: laws,
        families,
        buckets: h.buckets,
        bucket_seconds: h.bucket_seconds,
        accidents_per_year: h.accidents_per_year,
        scenarios: s.scenarios,
        draws: s.draws,
        psi_samples: s.psi_samples,
        mu_draws: s.mu_draws,
        reference_draws: s.reference_draws,
        seed: s.seed,
        thetas: k.thetas.clone(),
        grid: (k.grid_from, k.grid_to, k.grid_points),
        out_dir: config.output.dir.clone(),
    };
    (Some(plan), diagnostics)
}

/// Every violation in the configuration; empty means runnable.
pub fn validate_config(config: &ExperimentConfig) -> Vec<Diagnostic> {
    resolve(config).1
}

impl ExperimentConfig {
    pub fn plan(&self) -> Result<Plan> {
        match resolve(self) {
            (Some(plan), _) => Ok(plan),
            (None, d) => Err(Error::invalid(
                d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            )),
        }
    }

    /// Canonical TOML form, used for hashing.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
