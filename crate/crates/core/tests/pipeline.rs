use std::path::Path;

use traffic_risk::annual::{sample_losses, wald_mean};
use traffic_risk::experiment::{run_experiment, sample_cells, write_library, ExperimentConfig, Prepared};
use traffic_risk::hazard::CountLaw;
use traffic_risk::rng::StreamFactory;
use traffic_risk::severity::SeverityFamily;
use traffic_risk::traffic::VEHICLE_LENGTH;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.occurrence.count_laws = vec!["binomial".into(), "poisson".into()];
    c.severity.families = vec!["gamma".into()];
    c.severity.cvs = vec![1.0];
    c.sampling.scenarios = 4;
    c.sampling.draws = 300;
    c.sampling.psi_samples = 500;
    c.sampling.mu_draws = 50;
    c.sampling.reference_draws = 1_000;
    c.contracts.grid_points = 5;
    c.output.dir = out.to_path_buf();
    c
}

#[test]
fn simulated_vehicles_never_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let prepared = Prepared::new(small_config(tmp.path()).plan().unwrap()).unwrap();
    let mut checked = 0;
    for s in &prepared.scenarios {
        let trajectory = s.trajectory.as_ref().expect("simulated scenarios keep their trajectory");
        for snap in &trajectory.snapshots {
            let mut by_edge: Vec<_> = snap.vehicles.iter().map(|v| (v.edge, v.x)).collect();
            by_edge.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for pair in by_edge.windows(2) {
                if pair[0].0 == pair[1].0 {
                    let gap = pair[1].1 - pair[0].1 - VEHICLE_LENGTH;
                    assert!(gap > -1e-6, "scenario {}: gap {gap} at t = {}", s.index, snap.t);
                    checked += 1;
                }
            }
            assert!(snap.vehicles.iter().all(|v| v.v >= 0.0));
        }
    }
    assert!(checked > 1000);
}

#[test]
fn high_volume_scenarios_are_denser() {
    let tmp = tempfile::tempdir().unwrap();
    let prepared = Prepared::new(small_config(tmp.path()).plan().unwrap()).unwrap();
    let occupancy = |high: bool| {
        let xs: Vec<f64> = prepared
            .scenarios
            .iter()
            .filter(|s| s.high_volume == high)
            .flat_map(|s| s.modules.iter().map(|m| m.occupancy))
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    assert!(occupancy(true) > occupancy(false));
    assert!(prepared.scenarios.iter().all(|s| s.insured > 0));
}

#[test]
fn exported_library_reproduces_the_hazard() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let simulated = Prepared::new(config.plan().unwrap()).unwrap();
    write_library(&simulated, tmp.path()).unwrap();

    let mut ingest = config.clone();
    ingest.network.scenario_csv = Some(tmp.path().join("scenarios.csv"));
    let loaded = Prepared::new(ingest.plan().unwrap()).unwrap();

    assert!(loaded.network.is_none());
    assert_eq!(loaded.psi, simulated.psi);
    assert_eq!(loaded.normalization, simulated.normalization);
    for (a, b) in loaded.occurrence.iter().zip(&simulated.occurrence) {
        assert_eq!(a, b);
    }
}

#[test]
fn sample_means_agree_with_wald() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config(tmp.path());
    config.sampling.draws = 4_000;
    let prepared = Prepared::new(config.plan().unwrap()).unwrap();
    for cell in sample_cells(&prepared).unwrap() {
        let xs = cell.losses.losses();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - cell.wald_mean).abs() <= 4.0 * se, "{}: {mean} vs {}", cell.label, cell.wald_mean);
    }
}

#[test]
fn loss_draws_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let prepared = Prepared::new(small_config(tmp.path()).plan().unwrap()).unwrap();
    let model = prepared.loss_model(CountLaw::Binomial, SeverityFamily::LogNormal { cv: 2.0 });
    let draw = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_losses(&model, 500, &StreamFactory::new(11), 1.0).unwrap())
    };
    assert_eq!(draw(1), draw(4));
    assert!(wald_mean(&model).unwrap() > 0.0);
}

#[test]
fn empty_fleet_produces_zero_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config(tmp.path());
    config.fleet.share = 0.0;
    let report = run_experiment(&config, Some(2)).unwrap();
    assert_eq!(report.normalization, 0.0);
    for cell in &report.cells {
        assert_eq!(cell.raw.mean, 0.0, "{}", cell.label);
        assert_eq!(cell.raw.variance, 0.0);
        assert_eq!(cell.wald_mean, 0.0);
        assert!(cell.raw.tail.iter().all(|&(_, var, es)| var == 0.0 && es == 0.0));
    }
    assert!(tmp.path().join("functionals.csv").exists());
    assert!(tmp.path().join("runtime.txt").exists());
}
