use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Plan};
use crate::annual::{default_year_mixture, library_normalization, sample_losses, wald_mean, LossModel, LossSampleSet, YearMixture};
use crate::approx::{library_moments, monte_carlo_price, MixturePricer, PricingMethod, PricingRow, ScenarioMoments};
use crate::error::{Error, Result};
use crate::hazard::{
    module_choice_distribution, nonuniform_occurrence, uniform_occurrence, CalibrationConstants, CountLaw, OccurrenceKind,
    OccurrenceModel,
};
use crate::riskstats::{empirical_var, Contract, FunctionalReport};
use crate::rng::{Domain, StreamFactory};
use crate::scenario::{
    benchmark_stats, ingest_scenario_csv, library_specs, presample_psi, run_library, write_scenario_csv, PsiSamples, SimSettings,
    TrafficScenario,
};
use crate::severity::SeverityFamily;
use crate::traffic::{benchmark, DrivingConfig, Fleet, RoadNetwork};

/// SHA-256 of the canonical configuration text, leaving out the output
/// directory, which does not affect results.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.output = Default::default();
    let digest = Sha256::digest(c.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Network-wide traffic averages over all scenarios and modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficSummary {
    pub mean_speed: f64,
    pub mean_occupancy: f64,
}

impl TrafficSummary {
    fn of(scenarios: &[TrafficScenario]) -> Self {
        let cells: Vec<_> = scenarios.iter().flat_map(|s| s.modules.iter()).collect();
        let n = cells.len().max(1) as f64;
        Self {
            mean_speed: cells.iter().map(|m| m.mean_speed).sum::<f64>() / n,
            mean_occupancy: cells.iter().map(|m| m.occupancy).sum::<f64>() / n,
        }
    }
}

/// Output of phases 1 and 2: scenario library, speeds and occurrence models.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub plan: Plan,
    pub network: Option<RoadNetwork>,
    pub scenarios: Vec<TrafficScenario>,
    pub psi: Vec<PsiSamples>,
    pub occurrence: Vec<OccurrenceModel>,
    pub mixture: YearMixture,
    /// Loss multiplier per 100 expected insured vehicles (0 without insured vehicles).
    pub normalization: f64,
    pub traffic: TrafficSummary,
}

fn occurrence_model(plan: &Plan, scenarios: &[TrafficScenario], law: CountLaw) -> Result<OccurrenceModel> {
    let calib = CalibrationConstants {
        accidents_per_year: plan.accidents_per_year,
        buckets: plan.buckets,
        bucket_seconds: plan.bucket_seconds,
    };
    let base = uniform_occurrence(&calib, plan.fleet_share, scenarios.len(), law)?;
    match plan.kind {
        OccurrenceKind::Uniform => Ok(base),
        OccurrenceKind::NonUniform => {
            let bench = benchmark_stats(scenarios)?;
            nonuniform_occurrence(&base, scenarios, &bench, plan.fleet.headway)
        }
    }
}

impl Prepared {
    /// Runs phases 1 and 2 (or loads them from the configured scenario file).
    pub fn new(plan: Plan) -> Result<Self> {
        let streams = StreamFactory::new(plan.seed);
        let (network, scenarios, ingested_psi) = match &plan.scenario_csv {
            Some(path) => {
                let (s, p) = ingest_scenario_csv(path)?;
                (None, s, Some(p))
            }
            None => {
                let network = benchmark::network();
                let fleet = Fleet::new(plan.fleet_name.clone(), plan.fleet, plan.fleet_share)?;
                let settings = SimSettings {
                    network: &network,
                    fleet: &fleet,
                    background: DrivingConfig::background(),
                    dt: plan.dt,
                };
                let starts = benchmark::window_starts(plan.scenarios / 2, plan.bucket_seconds);
                let specs = library_specs(&benchmark::demand(), plan.scenarios, plan.bucket_seconds, &starts)?;
                let scenarios = run_library(&settings, &specs).map_err(|e| e.context("network"))?;
                (Some(network), scenarios, None)
            }
        };
        let occurrence = plan
            .count_laws
            .iter()
            .map(|&law| occurrence_model(&plan, &scenarios, law))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context("occurrence"))?;
        let psi = match ingested_psi {
            Some(p) => p,
            None => {
                let model = &occurrence[0];
                scenarios
                    .par_iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let weights = match module_choice_distribution(model, k) {
                            Ok(w) => w,
                            // no accidents in this scenario: speeds are never used
                            Err(Error::UndefinedConditional { .. }) => return Ok(PsiSamples::zeros(k, plan.psi_samples)),
                            Err(e) => return Err(e),
                        };
                        presample_psi(s, &weights, plan.psi_samples, &mut streams.stream(Domain::Presample, k as u64))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let mixture = default_year_mixture(scenarios.len(), plan.buckets).map_err(|e| e.context("sampling.scenarios"))?;
        let normalization = match library_normalization(&mixture, &scenarios) {
            Ok(f) => f,
            Err(_) if scenarios.iter().all(|s| s.insured == 0) => 0.0,
            Err(e) => return Err(e),
        };
        let traffic = TrafficSummary::of(&scenarios);
        Ok(Self {
            plan,
            network,
            scenarios,
            psi,
            occurrence,
            mixture,
            normalization,
            traffic,
        })
    }

    pub fn model_for(&self, law: CountLaw) -> &OccurrenceModel {
        let i = self.plan.count_laws.iter().position(|l| *l == law).expect("configured count law");
        &self.occurrence[i]
    }

    pub fn loss_model(&self, law: CountLaw, severity: SeverityFamily) -> LossModel<'_> {
        LossModel {
            mixture: &self.mixture,
            occurrence: self.model_for(law),
            psi: &self.psi,
            severity,
        }
    }
}

fn cell_label(family: &SeverityFamily, law: CountLaw) -> String {
    format!("{}_cv{}_{}", family.name(), family.cv().unwrap_or(0.0), law.name())
}

/// Monte Carlo losses of one configuration cell.
#[derive(Debug, Clone)]
pub struct CellSamples {
    pub label: String,
    pub law: CountLaw,
    pub family: SeverityFamily,
    pub losses: LossSampleSet,
    pub wald_mean: f64,
}

/// Phase 3 for every count law and severity family.
pub fn sample_cells(prepared: &Prepared) -> Result<Vec<CellSamples>> {
    let streams = StreamFactory::new(prepared.plan.seed);
    let mut cells = Vec::new();
    for &law in &prepared.plan.count_laws {
        for &family in &prepared.plan.families {
            let label = cell_label(&family, law);
            let model = prepared.loss_model(law, family);
            let losses = sample_losses(&model, prepared.plan.draws, &streams, prepared.normalization)
                .map_err(|e| e.context(label.clone()))?;
            cells.push(CellSamples {
                wald_mean: wald_mean(&model)?,
                label,
                law,
                family,
                losses,
            });
        }
    }
    Ok(cells)
}

/// `points` thresholds evenly spaced between the `from` and `to` quantiles.
pub fn theta_grid(losses: &[f64], from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    let lo = empirical_var(losses, from)?;
    let hi = empirical_var(losses, to)?;
    Ok(match points {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub label: String,
    pub law: CountLaw,
    pub family: SeverityFamily,
    pub raw: FunctionalReport,
    pub normalized: FunctionalReport,
    pub wald_mean: f64,
    /// Deductible prices by method, measured against the reference.
    pub pricing: Vec<PricingRow>,
    /// `(contract, mc, approx, approx_corrected, reference)`.
    pub contracts: Vec<(Contract, [f64; 4])>,
}

#[derive(Debug, Clone)]
pub struct RiskReport {
    pub cells: Vec<CellReport>,
    pub traffic: TrafficSummary,
    pub normalization: f64,
    pub config_hash: String,
    pub seed: u64,
    /// Wall-clock time; never written to the output files.
    pub runtime: Duration,
}

fn report_cell(prepared: &Prepared, cell: &CellSamples, moments: &[ScenarioMoments]) -> Result<CellReport> {
    let plan = &prepared.plan;
    let losses = cell.losses.losses();
    let reference = if plan.reference_draws > 0 {
        let model = prepared.loss_model(cell.law, cell.family);
        let streams = StreamFactory::new(plan.seed ^ 0x5eed_0000_0000_0001);
        sample_losses(&model, plan.reference_draws, &streams, prepared.normalization)?.losses()
    } else {
        losses.clone()
    };
    let thetas = match &plan.thetas {
        Some(t) => t.clone(),
        None => theta_grid(&reference, plan.grid.0, plan.grid.1, plan.grid.2)?,
    };
    let pricer = MixturePricer::sample(&prepared.mixture, moments, plan.mu_draws, &StreamFactory::new(plan.seed))?;
    let price_all = |c: &Contract| -> Result<[f64; 4]> {
        Ok([
            monte_carlo_price(c, &losses)?,
            pricer.price(c, false),
            pricer.price(c, true),
            monte_carlo_price(c, &reference)?,
        ])
    };
    let mut pricing = Vec::new();
    let mut contracts = vec![(Contract::Full, price_all(&Contract::Full)?)];
    for &theta in &thetas {
        let ded = Contract::Deductible(theta);
        let p = price_all(&ded)?;
        for (i, method) in PricingMethod::ALL.into_iter().enumerate() {
            pricing.push(PricingRow { theta, method, price: p[i], reference: p[3] });
        }
        contracts.push((ded, p));
        let stop = Contract::StopLoss(theta);
        contracts.push((stop, price_all(&stop)?));
    }
    Ok(CellReport {
        label: cell.label.clone(),
        law: cell.law,
        family: cell.family,
        raw: FunctionalReport::from_samples(&losses, false)?,
        normalized: FunctionalReport::from_samples(&cell.losses.normalized(), true)?,
        wald_mean: cell.wald_mean,
        pricing,
        contracts,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(name: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::invalid(format!("writing {name}: {e}"))
}

/// Writes `scenarios.csv`, `detectors.csv` (simulated libraries only) and
/// one `hazard_<law>.csv` per count law.
pub fn write_library(prepared: &Prepared, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scenario_csv(create(dir, "scenarios.csv")?, &prepared.scenarios, &prepared.psi).map_err(csv_err("scenarios.csv"))?;
    if let Some(network) = &prepared.network {
        let mut w = csv::Writer::from_writer(create(dir, "detectors.csv")?);
        let write = |w: &mut csv::Writer<_>| -> csv::Result<()> {
            w.write_record(["k", "detector", "edge", "position", "module", "flow", "occupancy", "mean_speed"])?;
            for s in &prepared.scenarios {
                for (i, (d, det)) in s.detectors.iter().zip(network.detectors()).enumerate() {
                    w.write_record([
                        (s.index + 1).to_string(),
                        (i + 1).to_string(),
                        network.edge(det.edge).name.clone(),
                        det.position.to_string(),
                        (det.module + 1).to_string(),
                        d.flow.to_string(),
                        d.occupancy.to_string(),
                        d.mean_speed.to_string(),
                    ])?;
                }
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).map_err(csv_err("detectors.csv"))?;
    }
    for (law, model) in prepared.plan.count_laws.iter().zip(&prepared.occurrence) {
        let name = format!("hazard_{}.csv", law.name());
        model.write_csv(create(dir, &name)?).map_err(csv_err(&name))?;
    }
    Ok(())
}

fn write_losses(prepared: &Prepared, cells: &[CellSamples], dir: &Path) -> Result<()> {
    for c in cells {
        let name = format!("losses_{}.csv", c.label);
        c.losses.write_csv(&prepared.mixture, create(dir, &name)?).map_err(csv_err(&name))?;
    }
    Ok(())
}

fn write_reports(report: &RiskReport, prepared: &Prepared, dir: &Path) -> Result<()> {
    let columns: Vec<(String, FunctionalReport)> = report
        .cells
        .iter()
        .flat_map(|c| [(c.label.clone(), c.raw.clone()), (format!("{}_normalized", c.label), c.normalized.clone())])
        .collect();
    crate::riskstats::write_functional_table(create(dir, "functionals.csv")?, &columns).map_err(csv_err("functionals.csv"))?;
    for c in &report.cells {
        let name = format!("pricing_{}.csv", c.label);
        crate::approx::write_pricing_csv(create(dir, &name)?, &c.pricing).map_err(csv_err(&name))?;
        let name = format!("contracts_{}.csv", c.label);
        let mut w = csv::Writer::from_writer(create(dir, &name)?);
        let write = |w: &mut csv::Writer<_>| -> csv::Result<()> {
            w.write_record(["contract", "theta", "mc", "approx", "approx_corrected", "mc_reference"])?;
            for (contract, p) in &c.contracts {
                let mut rec = vec![contract.name().to_string(), contract.threshold().map_or_else(String::new, |t| t.to_string())];
                rec.extend(p.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).map_err(csv_err(&name))?;
    }
    let mut w = csv::Writer::from_writer(create(dir, "metadata.csv")?);
    let rows = [
        ("config_hash", report.config_hash.clone()),
        ("seed", report.seed.to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("scenarios", prepared.scenarios.len().to_string()),
        ("buckets", prepared.plan.buckets.to_string()),
        ("draws", prepared.plan.draws.to_string()),
        ("normalization", report.normalization.to_string()),
        ("network_mean_speed", report.traffic.mean_speed.to_string()),
        ("network_mean_occupancy", report.traffic.mean_occupancy.to_string()),
    ];
    let write = |w: &mut csv::Writer<_>| -> csv::Result<()> {
        w.write_record(["key", "value"])?;
        for (k, v) in &rows {
            w.write_record([*k, v.as_str()])?;
        }
        for c in &report.cells {
            w.write_record([format!("wald_mean_{}", c.label), c.wald_mean.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(csv_err("metadata.csv"))?;
    Ok(())
}

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == Some(0) {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Runs all three phases, prices the contracts and writes every CSV to the
/// configured output directory, plus the wall-clock runtime in seconds to
/// `runtime.txt`. Outputs depend only on the configuration,
/// not on `threads`.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<RiskReport> {
    let started = Instant::now();
    let plan = config.plan()?;
    let dir = plan.out_dir.clone();
    with_threads(threads, || {
        let prepared = Prepared::new(plan)?;
        let cells = sample_cells(&prepared)?;
        let reports = cells
            .iter()
            .map(|c| {
                let moments = library_moments(prepared.model_for(c.law), &c.family, &prepared.psi)?;
                report_cell(&prepared, c, &moments).map_err(|e| e.context(c.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = RiskReport {
            cells: reports,
            traffic: prepared.traffic,
            normalization: prepared.normalization,
            config_hash: config_hash(config),
            seed: prepared.plan.seed,
            runtime: Duration::ZERO,
        };
        write_library(&prepared, &dir)?;
        write_losses(&prepared, &cells, &dir)?;
        write_reports(&report, &prepared, &dir)?;
        Ok(report)
    })
    .and_then(|mut r| {
        r.runtime = started.elapsed();
        // kept out of the CSVs so that they stay byte-identical across runs
        let path = dir.join("runtime.txt");
        std::fs::write(&path, format!("{:.3}\n", r.runtime.as_secs_f64())).map_err(|e| Error::io(path, e))?;
        Ok(r)
    })
}

impl CellSamples {
    pub fn write(prepared: &Prepared, cells: &[CellSamples], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_losses(prepared, cells, dir)
    }
}
