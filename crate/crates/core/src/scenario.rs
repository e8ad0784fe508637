//! Scenario collection: simulation runs condensed into per-module statistics,
//! benchmark statistics, pre-sampled speeds of accident-involved vehicles,
//! and a CSV form for externally produced scenarios.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::traffic::{read_detector, Demand, DetectorStats, DrivingConfig, Fleet, RoadNetwork, Simulation, Trajectory, VehicleSample};

/// Number of pre-sampled speeds per scenario unless configured otherwise.
pub const DEFAULT_PSI_SAMPLES: usize = 10_000;
/// Default scenario count at desk scale.
pub const DEFAULT_SCENARIOS: usize = 20;
/// Default scenario duration, s.
pub const DEFAULT_DURATION: f64 = 60.0;

/// How to reproduce one scenario: which route file, and which window of its
/// simulation is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub index: usize,
    pub demand: Demand,
    pub high_volume: bool,
    pub window_start: f64,
    pub duration: f64,
}

/// Detector averages of one traffic module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleStats {
    /// Mean loop occupancy, used as a density proxy.
    pub occupancy: f64,
    /// Mean loop speed, m/s.
    pub mean_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficScenario {
    pub index: usize,
    /// Duration `T`, s.
    pub duration: f64,
    pub high_volume: bool,
    pub modules: Vec<ModuleStats>,
    /// Fleet vehicles defined in the scenario's route file.
    pub insured: u64,
    /// Per-detector readings (empty for ingested scenarios).
    pub detectors: Vec<DetectorStats>,
    /// Recorded observation window, re-based so that it starts at 0
    /// (absent for ingested scenarios).
    pub trajectory: Option<Trajectory>,
}

/// Integration settings shared by all scenario runs.
#[derive(Debug, Clone, Copy)]
pub struct SimSettings<'a> {
    pub network: &'a RoadNetwork,
    pub fleet: &'a Fleet,
    pub background: DrivingConfig,
    pub dt: f64,
}

/// The scenario library: the first `count / 2` scenarios observe the base
/// route file, the rest observe two copies of it, at the same window starts.
pub fn library_specs(base: &Demand, count: usize, duration: f64, window_starts: &[f64]) -> Result<Vec<ScenarioSpec>> {
    if count == 0 || !count.is_multiple_of(2) {
        return Err(Error::invalid(format!("scenario count must be even and positive, got {count}")));
    }
    if window_starts.len() != count / 2 {
        return Err(Error::invalid("need one window start per low-volume scenario"));
    }
    let high = base.replicated(2);
    let specs = (0..count)
        .map(|k| {
            let high_volume = k >= count / 2;
            ScenarioSpec {
                index: k,
                demand: if high_volume { high.clone() } else { base.clone() },
                high_volume,
                window_start: window_starts[k % (count / 2)],
                duration,
            }
        })
        .collect();
    Ok(specs)
}

/// Re-simulates the scenario and returns its observation window, re-based to start at 0.
pub fn replay_trajectory(settings: &SimSettings<'_>, spec: &ScenarioSpec) -> Result<Trajectory> {
    if !(spec.duration > 0.0) {
        return Err(Error::invalid(format!("scenario duration must be positive, got {}", spec.duration)));
    }
    let mut sim = Simulation::new(
        settings.network,
        &spec.demand,
        Some(settings.fleet),
        settings.background,
        settings.dt,
    )?;
    let mut trajectory = Trajectory::new(settings.dt);
    let end = spec.window_start + spec.duration;
    sim.run_until(end, spec.window_start, Some(&mut trajectory));
    for s in &mut trajectory.snapshots {
        s.t -= spec.window_start;
    }
    Ok(trajectory)
}

/// Runs one scenario and aggregates its loops module by module.
pub fn run_scenario(settings: &SimSettings<'_>, spec: &ScenarioSpec) -> Result<TrafficScenario> {
    let trajectory = replay_trajectory(settings, spec)?;
    let network = settings.network;
    let detectors = (0..network.detectors().len())
        .map(|d| read_detector(&trajectory, network, d, (0.0, spec.duration)))
        .collect::<Result<Vec<_>>>()?;
    let modules = (0..network.module_count())
        .map(|r| {
            let readings: Vec<&DetectorStats> = network.detectors_in_module(r).map(|(i, _)| &detectors[i]).collect();
            let n = readings.len().max(1) as f64;
            ModuleStats {
                occupancy: readings.iter().map(|d| d.occupancy).sum::<f64>() / n,
                mean_speed: readings.iter().map(|d| d.mean_speed).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(TrafficScenario {
        index: spec.index,
        duration: spec.duration,
        high_volume: spec.high_volume,
        modules,
        insured: settings.fleet.insured_vehicles(&spec.demand),
        detectors,
        trajectory: Some(trajectory),
    })
}

/// Runs all scenarios in parallel; output order follows `specs`.
pub fn run_library(settings: &SimSettings<'_>, specs: &[ScenarioSpec]) -> Result<Vec<TrafficScenario>> {
    specs.par_iter().map(|s| run_scenario(settings, s)).collect()
}

/// Per-module scenario averages of occupancy and speed.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkStats {
    pub occupancy: Vec<f64>,
    pub mean_speed: Vec<f64>,
}

pub fn benchmark_stats(scenarios: &[TrafficScenario]) -> Result<BenchmarkStats> {
    let first = scenarios
        .first()
        .ok_or_else(|| Error::invalid("benchmark needs at least one scenario"))?;
    let r = first.modules.len();
    if scenarios.iter().any(|s| s.modules.len() != r) {
        return Err(Error::invalid("scenarios disagree on the number of modules"));
    }
    let k = scenarios.len() as f64;
    let mut occupancy = vec![0.0; r];
    let mut mean_speed = vec![0.0; r];
    for s in scenarios {
        for (m, stats) in s.modules.iter().enumerate() {
            occupancy[m] += stats.occupancy;
            mean_speed[m] += stats.mean_speed;
        }
    }
    for m in 0..r {
        occupancy[m] /= k;
        mean_speed[m] /= k;
        if occupancy[m] <= 0.0 {
            return Err(Error::DegenerateBenchmark {
                module: m,
                quantity: "occupancy",
            });
        }
        if mean_speed[m] <= 0.0 {
            return Err(Error::DegenerateBenchmark {
                module: m,
                quantity: "speed",
            });
        }
    }
    Ok(BenchmarkStats { occupancy, mean_speed })
}

/// Pre-sampled speeds of accident-involved fleet vehicles for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSamples {
    pub scenario: usize,
    /// Speeds in m/s; 0 where the drawn module held no fleet vehicle.
    pub values: Vec<f64>,
    /// Module drawn for each sample.
    pub modules: Vec<usize>,
}

impl PsiSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All-zero samples, for scenarios where no accident can happen.
    pub fn zeros(scenario: usize, count: usize) -> Self {
        Self {
            scenario,
            values: vec![0.0; count],
            modules: vec![0; count],
        }
    }

    /// Mean of `psi^power` over the samples.
    pub fn moment(&self, power: i32) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.powi(power)).sum::<f64>() / self.values.len() as f64
    }
}

fn draw_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last module with positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Draws `count` accident times uniformly over the scenario, a module per draw
/// from `module_weights`, and a uniformly chosen fleet vehicle in that module
/// at that time. Its speed is recorded, or 0 when the module holds no fleet
/// vehicle. A single weight means the whole network is one module.
pub fn presample_psi<R: Rng + ?Sized>(
    scenario: &TrafficScenario,
    module_weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<PsiSamples> {
    if count == 0 {
        return Err(Error::invalid("need at least one speed sample"));
    }
    if module_weights.is_empty() || module_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("module weights must be non-negative"));
    }
    let total: f64 = module_weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("module weights sum to {total}, not 1")));
    }
    let whole_network = module_weights.len() == 1;
    if !whole_network && module_weights.len() != scenario.modules.len() {
        return Err(Error::invalid(format!(
            "{} module weights for a scenario with {} modules",
            module_weights.len(),
            scenario.modules.len()
        )));
    }
    let trajectory = scenario
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("scenario {} has no recorded trajectory", scenario.index)))?;

    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * scenario.duration).collect();
    let modules: Vec<usize> = (0..count).map(|_| draw_index(module_weights, rng)).collect();
    times.sort_by(f64::total_cmp);

    let mut values = Vec::with_capacity(count);
    let mut candidates: Vec<&VehicleSample> = Vec::new();
    for (&t, &module) in times.iter().zip(&modules) {
        let snap = trajectory
            .snapshot_at(t)
            .ok_or_else(|| Error::invalid(format!("time {t} outside recorded window")))?;
        candidates.clear();
        candidates.extend(
            snap.vehicles
                .iter()
                .filter(|v| v.fleet && (whole_network || v.module == module)),
        );
        let psi = if candidates.is_empty() {
            0.0
        } else {
            let v = candidates[rng.random_range(0..candidates.len())];
            crate::traffic::ballistic(v.v, v.a, t - snap.t).1
        };
        values.push(psi);
    }
    Ok(PsiSamples {
        scenario: scenario.index,
        values,
        modules,
    })
}

const STATS_HEADER: [&str; 6] = ["k", "T", "n_k", "module", "d", "vbar"];
const PSI_HEADER: [&str; 3] = ["k", "psi", "module"];

/// Writes scenario statistics followed by speed samples. `k` and `module` are 1-based.
pub fn write_scenario_csv<W: Write>(out: W, scenarios: &[TrafficScenario], psi: &[PsiSamples]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(STATS_HEADER)?;
    for s in scenarios {
        for (r, m) in s.modules.iter().enumerate() {
            w.write_record([
                (s.index + 1).to_string(),
                s.duration.to_string(),
                s.insured.to_string(),
                (r + 1).to_string(),
                m.occupancy.to_string(),
                m.mean_speed.to_string(),
            ])?;
        }
    }
    w.write_record(PSI_HEADER)?;
    for p in psi {
        for (v, m) in p.values.iter().zip(&p.modules) {
            w.write_record([(p.scenario + 1).to_string(), v.to_string(), (m + 1).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_scenario_csv(path: &Path, scenarios: &[TrafficScenario], psi: &[PsiSamples]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_scenario_csv(std::io::BufWriter::new(file), scenarios, psi).map_err(|e| Error::io(path, e.into()))
}

type IngestedStats = (f64, u64, Vec<Option<ModuleStats>>);

/// Loads scenarios and speed samples written by [`write_scenario_csv`] (or by
/// any other tool following the same layout).
pub fn ingest_scenario_csv(path: &Path) -> Result<(Vec<TrafficScenario>, Vec<PsiSamples>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    #[derive(PartialEq)]
    enum Section {
        Start,
        Stats,
        Psi,
    }
    let mut section = Section::Start;
    // k -> (T, n_k, module -> stats)
    let mut stats: Vec<Option<IngestedStats>> = Vec::new();
    let mut psi: Vec<PsiSamples> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, "-", e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let fields: Vec<&str> = record.iter().collect();
        if fields == STATS_HEADER {
            if section != Section::Start {
                return Err(parse_err(row, "k", "statistics header must come first".into()));
            }
            section = Section::Stats;
            continue;
        }
        if fields == PSI_HEADER {
            if section != Section::Stats {
                return Err(parse_err(row, "k", "speed-sample header before statistics".into()));
            }
            section = Section::Psi;
            continue;
        }
        let header: &[&str] = match section {
            Section::Start => return Err(parse_err(row, "k", "missing `k,T,n_k,module,d,vbar` header".into())),
            Section::Stats => &STATS_HEADER,
            Section::Psi => &PSI_HEADER,
        };
        if fields.len() != header.len() {
            let col = header.get(fields.len()).copied().unwrap_or("-");
            return Err(parse_err(row, col, format!("expected {} columns, found {}", header.len(), fields.len())));
        }
        let number = |col: usize| -> Result<f64> {
            let v: f64 = fields[col]
                .parse()
                .map_err(|_| parse_err(row, header[col], format!("`{}` is not a number", fields[col])))?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(row, header[col], format!("value {v} must be finite and non-negative")));
            }
            Ok(v)
        };
        let index = |col: usize| -> Result<usize> {
            fields[col]
                .parse::<usize>()
                .ok()
                .filter(|v| *v >= 1)
                .map(|v| v - 1)
                .ok_or_else(|| parse_err(row, header[col], format!("`{}` is not a positive integer", fields[col])))
        };
        match section {
            Section::Stats => {
                let k = index(0)?;
                let duration = number(1)?;
                if duration <= 0.0 {
                    return Err(parse_err(row, "T", "duration must be positive".into()));
                }
                let insured: u64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(row, "n_k", format!("`{}` is not a non-negative integer", fields[2])))?;
                let module = index(3)?;
                let m = ModuleStats {
                    occupancy: number(4)?,
                    mean_speed: number(5)?,
                };
                if stats.len() <= k {
                    stats.resize(k + 1, None);
                }
                let entry = stats[k].get_or_insert_with(|| (duration, insured, Vec::new()));
                if entry.0 != duration || entry.1 != insured {
                    return Err(parse_err(row, "T", format!("scenario {} has inconsistent T or n_k", k + 1)));
                }
                if entry.2.len() <= module {
                    entry.2.resize(module + 1, None);
                }
                if entry.2[module].replace(m).is_some() {
                    return Err(parse_err(row, "module", format!("duplicate module {}", module + 1)));
                }
            }
            Section::Psi => {
                let k = index(0)?;
                let value = number(1)?;
                let module = index(2)?;
                if psi.len() <= k {
                    psi.resize_with(k + 1, || PsiSamples {
                        scenario: 0,
                        values: Vec::new(),
                        modules: Vec::new(),
                    });
                }
                psi[k].values.push(value);
                psi[k].modules.push(module);
            }
            Section::Start => unreachable!(),
        }
    }
    if section == Section::Start {
        return Err(parse_err(0, "k", "file holds no scenario statistics".into()));
    }
    let module_count = stats.iter().flatten().map(|s| s.2.len()).max().unwrap_or(0);
    let mut scenarios = Vec::with_capacity(stats.len());
    for (k, entry) in stats.into_iter().enumerate() {
        let (duration, insured, modules) =
            entry.ok_or_else(|| parse_err(0, "k", format!("scenario {} missing", k + 1)))?;
        if modules.len() != module_count || modules.iter().any(Option::is_none) {
            return Err(parse_err(0, "module", format!("scenario {} lacks some of the {module_count} modules", k + 1)));
        }
        scenarios.push(TrafficScenario {
            index: k,
            duration,
            high_volume: false,
            modules: modules.into_iter().flatten().collect(),
            insured,
            detectors: Vec::new(),
            trajectory: None,
        });
    }
    if psi.len() > scenarios.len() {
        return Err(parse_err(0, "k", format!("speed samples reference unknown scenario {}", psi.len())));
    }
    psi.resize_with(scenarios.len(), || PsiSamples {
        scenario: 0,
        values: Vec::new(),
        modules: Vec::new(),
    });
    for (k, p) in psi.iter_mut().enumerate() {
        p.scenario = k;
        if p.modules.iter().any(|m| *m >= module_count.max(1)) {
            return Err(parse_err(0, "module", format!("speed sample of scenario {} names an unknown module", k + 1)));
        }
    }
    Ok((scenarios, psi))
}
