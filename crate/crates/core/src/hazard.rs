//! Accident occurrence: probabilities and intensities per scenario and module,
//! and sampling of accident counts.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{Error, Result};
use crate::scenario::{BenchmarkStats, TrafficScenario};

/// Minutes in a year: the annual number of one-minute buckets.
pub const BUCKETS_PER_YEAR: u64 = 365 * 24 * 60;
/// Expected annual accident count used for calibration.
pub const DEFAULT_ACCIDENTS_PER_YEAR: f64 = 407.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OccurrenceKind {
    Uniform,
    NonUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CountLaw {
    Binomial,
    Poisson,
}

impl CountLaw {
    pub fn name(self) -> &'static str {
        match self {
            CountLaw::Binomial => "binomial",
            CountLaw::Poisson => "poisson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConstants {
    /// Expected number of accidents per year in the whole system.
    pub accidents_per_year: f64,
    /// Time buckets per year.
    pub buckets: u64,
    /// Bucket length, s.
    pub bucket_seconds: f64,
}

impl CalibrationConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.accidents_per_year.is_finite() && self.accidents_per_year > 0.0) {
            return Err(Error::invalid("expected annual accident count must be positive"));
        }
        if self.buckets == 0 {
            return Err(Error::invalid("need at least one time bucket"));
        }
        if !(self.bucket_seconds.is_finite() && self.bucket_seconds > 0.0) {
            return Err(Error::invalid("bucket length must be positive"));
        }
        Ok(())
    }

    /// System-wide accident probability per bucket.
    pub fn bucket_probability(&self) -> Result<f64> {
        self.validate()?;
        let p = self.accidents_per_year / self.buckets as f64;
        if p > 1.0 {
            return Err(Error::Calibration(format!(
                "{} accidents over {} buckets gives a bucket probability {p} above 1",
                self.accidents_per_year, self.buckets
            )));
        }
        Ok(p)
    }
}

/// Per-scenario, per-module accident probabilities. Intensities of the
/// Poisson law take the same numerical values.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceModel {
    kind: OccurrenceKind,
    law: CountLaw,
    /// `per_module[k][r]`.
    per_module: Vec<Vec<f64>>,
    totals: Vec<f64>,
}

impl OccurrenceModel {
    /// Builds a model from module values; totals are their sums.
    pub fn from_module_values(kind: OccurrenceKind, law: CountLaw, per_module: Vec<Vec<f64>>) -> Result<Self> {
        let totals: Vec<f64> = per_module.iter().map(|r| r.iter().sum()).collect();
        for (k, (row, &p)) in per_module.iter().zip(&totals).enumerate() {
            if row.is_empty() || row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!("scenario {k}: module values must be finite and non-negative")));
            }
            if law == CountLaw::Binomial && p > 1.0 {
                return Err(Error::Calibration(format!("scenario {k}: accident probability {p} exceeds 1")));
            }
        }
        Ok(Self {
            kind,
            law,
            per_module,
            totals,
        })
    }

    pub fn kind(&self) -> OccurrenceKind {
        self.kind
    }

    pub fn law(&self) -> CountLaw {
        self.law
    }

    pub fn with_law(&self, law: CountLaw) -> Result<Self> {
        Self::from_module_values(self.kind, law, self.per_module.clone())
    }

    pub fn scenarios(&self) -> usize {
        self.totals.len()
    }

    pub fn modules(&self) -> usize {
        self.per_module.first().map_or(0, Vec::len)
    }

    /// Per-bucket accident probability (or intensity) of scenario `k`.
    pub fn total(&self, k: usize) -> f64 {
        self.totals[k]
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn module_values(&self, k: usize) -> &[f64] {
        &self.per_module[k]
    }

    /// Writes `k,r,p,lambda` rows (1-based indices).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "r", "p", "lambda"])?;
        for (k, row) in self.per_module.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                let s = v.to_string();
                w.write_record([(k + 1).to_string(), (r + 1).to_string(), s.clone(), s])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Accidents spread evenly over the year and over all vehicles: every
/// scenario gets `share * accidents_per_year / buckets`, with a single module.
pub fn uniform_occurrence(
    calib: &CalibrationConstants,
    fleet_share: f64,
    scenarios: usize,
    law: CountLaw,
) -> Result<OccurrenceModel> {
    if !(0.0..=1.0).contains(&fleet_share) {
        return Err(Error::invalid(format!("fleet share must lie in [0, 1], got {fleet_share}")));
    }
    let p = fleet_share * calib.bucket_probability()?;
    OccurrenceModel::from_module_values(OccurrenceKind::Uniform, law, vec![vec![p]; scenarios])
}

/// Scales the uniform level of each scenario by the module's speed and
/// occupancy relative to the benchmark and by `exp(-(headway - 1))`, then
/// splits it over the `R` modules.
pub fn nonuniform_occurrence(
    base: &OccurrenceModel,
    scenarios: &[TrafficScenario],
    benchmark: &BenchmarkStats,
    fleet_headway: f64,
) -> Result<OccurrenceModel> {
    if scenarios.len() != base.scenarios() {
        return Err(Error::invalid(format!(
            "base model covers {} scenarios, library has {}",
            base.scenarios(),
            scenarios.len()
        )));
    }
    if !(fleet_headway.is_finite() && fleet_headway > 0.0) {
        return Err(Error::invalid("headway must be positive"));
    }
    let r = benchmark.occupancy.len();
    for (m, (&d, &v)) in benchmark.occupancy.iter().zip(&benchmark.mean_speed).enumerate() {
        if !(d > 0.0) {
            return Err(Error::DegenerateBenchmark { module: m, quantity: "occupancy" });
        }
        if !(v > 0.0) {
            return Err(Error::DegenerateBenchmark { module: m, quantity: "speed" });
        }
    }
    let headway_factor = (-(fleet_headway - 1.0)).exp();
    let per_module = scenarios
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if s.modules.len() != r {
                return Err(Error::invalid(format!("scenario {k} has {} modules, expected {r}", s.modules.len())));
            }
            let level = base.total(k) / r as f64;
            Ok(s.modules
                .iter()
                .enumerate()
                .map(|(m, st)| {
                    level
                        * (st.mean_speed / benchmark.mean_speed[m])
                        * (st.occupancy / benchmark.occupancy[m])
                        * headway_factor
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    OccurrenceModel::from_module_values(OccurrenceKind::NonUniform, base.law(), per_module)
}

/// Number of accidents in scenario `k` over `buckets` buckets.
pub fn sample_count<R: Rng + ?Sized>(model: &OccurrenceModel, k: usize, buckets: u64, rng: &mut R) -> Result<u64> {
    let p = model.total(k);
    if buckets == 0 || p == 0.0 {
        return Ok(0);
    }
    match model.law() {
        CountLaw::Binomial => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("scenario {k}: probability {p} outside [0, 1]")));
            }
            let dist = Binomial::new(buckets, p).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(dist.sample(rng))
        }
        CountLaw::Poisson => {
            let dist = Poisson::new(p * buckets as f64).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(dist.sample(rng) as u64)
        }
    }
}

/// Conditional probability that an accident of scenario `k` happens in each module.
pub fn module_choice_distribution(model: &OccurrenceModel, k: usize) -> Result<Vec<f64>> {
    let total = model.total(k);
    if !(total > 0.0) {
        return Err(Error::UndefinedConditional { scenario: k });
    }
    Ok(model.module_values(k).iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ModuleStats;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn annual_calibration() -> CalibrationConstants {
        CalibrationConstants {
            accidents_per_year: DEFAULT_ACCIDENTS_PER_YEAR,
            buckets: BUCKETS_PER_YEAR,
            bucket_seconds: 60.0,
        }
    }

    fn scenario(stats: &[(f64, f64)]) -> TrafficScenario {
        TrafficScenario {
            index: 0,
            duration: 60.0,
            high_volume: false,
            modules: stats.iter().map(|&(o, v)| ModuleStats { occupancy: o, mean_speed: v }).collect(),
            insured: 0,
            detectors: vec![],
            trajectory: None,
        }
    }

    #[test]
    fn calibrated_bucket_probability() {
        let p = annual_calibration().bucket_probability().unwrap();
        assert!((p - 7.7e-4).abs() < 0.05e-4, "{p}");
    }

    #[test]
    fn uniform_scales_with_share() {
        let m = uniform_occurrence(&annual_calibration(), 0.5, 3, CountLaw::Binomial).unwrap();
        for k in 0..3 {
            assert!((m.total(k) - 0.5 * 407.0 / 525_600.0).abs() < 1e-18);
            assert!((m.total(k) - 3.872e-4).abs() < 1e-7);
        }
        assert_eq!(m.modules(), 1);
        let zero = uniform_occurrence(&annual_calibration(), 0.0, 3, CountLaw::Binomial).unwrap();
        assert!(zero.totals().iter().all(|p| *p == 0.0));
    }

    #[test]
    fn probability_above_one_is_calibration_error() {
        let c = CalibrationConstants { accidents_per_year: 407.0, buckets: 100, bucket_seconds: 60.0 };
        assert!(matches!(uniform_occurrence(&c, 1.0, 2, CountLaw::Binomial), Err(Error::Calibration(_))));
    }

    #[test]
    fn neutral_factors_split_uniform_level() {
        let base = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![4e-4]]).unwrap();
        let s = scenario(&[(0.1, 5.0), (0.2, 6.0), (0.3, 7.0), (0.4, 8.0)]);
        let bench = BenchmarkStats { occupancy: vec![0.1, 0.2, 0.3, 0.4], mean_speed: vec![5.0, 6.0, 7.0, 8.0] };
        let m = nonuniform_occurrence(&base, std::slice::from_ref(&s), &bench, 1.0).unwrap();
        for r in 0..4 {
            assert!((m.module_values(0)[r] - 1e-4).abs() < 1e-18);
        }
        let cautious = nonuniform_occurrence(&base, &[s], &bench, 3.0).unwrap();
        for r in 0..4 {
            assert!((cautious.module_values(0)[r] - 1e-4 * (-2.0f64).exp()).abs() < 1e-18);
            assert!((cautious.module_values(0)[r] / 1e-4 - 0.1353).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_module_has_zero_probability() {
        let base = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Poisson, vec![vec![4e-4]]).unwrap();
        let bench = BenchmarkStats { occupancy: vec![0.1, 0.2], mean_speed: vec![5.0, 6.0] };
        let m = nonuniform_occurrence(&base, &[scenario(&[(0.0, 0.0), (0.2, 6.0)])], &bench, 1.0).unwrap();
        assert_eq!(m.module_values(0)[0], 0.0);
        assert_eq!(m.law(), CountLaw::Poisson);
    }

    #[test]
    fn degenerate_benchmark_propagates() {
        let base = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![4e-4]]).unwrap();
        let bench = BenchmarkStats { occupancy: vec![0.0], mean_speed: vec![5.0] };
        assert!(matches!(
            nonuniform_occurrence(&base, &[scenario(&[(0.0, 5.0)])], &bench, 1.0),
            Err(Error::DegenerateBenchmark { .. })
        ));
    }

    #[test]
    fn module_choice_normalizes() {
        let m = OccurrenceModel::from_module_values(
            OccurrenceKind::NonUniform,
            CountLaw::Binomial,
            vec![vec![1e-4, 1e-4, 2e-4, 4e-4], vec![0.0, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        let d = module_choice_distribution(&m, 0).unwrap();
        let want = [0.125, 0.125, 0.25, 0.5];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(module_choice_distribution(&m, 1), Err(Error::UndefinedConditional { scenario: 1 })));
        let u = uniform_occurrence(&annual_calibration(), 0.3, 1, CountLaw::Binomial).unwrap();
        assert_eq!(module_choice_distribution(&u, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_probability_or_exposure_gives_zero_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![0.0], vec![0.3]]).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_count(&m, 0, 1000, &mut rng).unwrap(), 0);
            assert_eq!(sample_count(&m, 1, 0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn binomial_count_mean() {
        // Bin(1e6, 4e-4): sd of the mean over 1e4 draws is sqrt(400 * (1 - 4e-4)) / 100 ~ 0.2
        let m = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![4e-4]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean = (0..n).map(|_| sample_count(&m, 0, 1_000_000, &mut rng).unwrap() as f64).sum::<f64>() / n as f64;
        assert!((mean - 400.0).abs() < 0.6, "{mean}");
    }

    #[test]
    fn binomial_and_poisson_variances_agree_for_small_p() {
        // Var Bin = n p (1 - p), Var Poiss = n p: relative difference p
        let p = 8e-4;
        let n = 500_000u64;
        let bin = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![p]]).unwrap();
        let poi = bin.with_law(CountLaw::Poisson).unwrap();
        let stats = |m: &OccurrenceModel, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..20_000).map(|_| sample_count(m, 0, n, &mut rng).unwrap() as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64)
        };
        let (mb, _) = stats(&bin, 1);
        let (mp, _) = stats(&poi, 2);
        let expect = p * n as f64;
        let se = (expect / 20_000f64).sqrt();
        assert!((mb - expect).abs() < 4.0 * se);
        assert!((mp - expect).abs() < 4.0 * se);
        let analytic_rel_var_gap = (expect - expect * (1.0 - p)) / expect;
        assert!(analytic_rel_var_gap <= p + 1e-15);
    }

    #[test]
    fn dump_has_one_row_per_module() {
        let m = OccurrenceModel::from_module_values(OccurrenceKind::NonUniform, CountLaw::Binomial, vec![vec![1e-4, 2e-4]]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("k,r,p,lambda\n1,1,0.0001,0.0001\n"));
    }

    proptest! {
        #[test]
        fn module_values_sum_to_totals(
            stats in proptest::collection::vec((0.0f64..1.0, 0.0f64..20.0), 4),
            share in 0.0f64..1.0,
            headway in 0.5f64..3.0,
        ) {
            let calib = annual_calibration();
            let base = uniform_occurrence(&calib, share, 2, CountLaw::Binomial).unwrap();
            let s = vec![scenario(&stats), scenario(&[(0.5, 10.0); 4])];
            let bench = benchmark_of(&s);
            let m = nonuniform_occurrence(&base, &s, &bench, headway).unwrap();
            for k in 0..2 {
                let sum: f64 = m.module_values(k).iter().sum();
                prop_assert!((sum - m.total(k)).abs() <= 1e-12);
            }
        }

        #[test]
        fn share_scales_linearly_and_cancels_in_module_choice(
            stats in proptest::collection::vec((0.01f64..1.0, 0.1f64..20.0), 4),
            share in 0.01f64..0.5,
            c in 0.1f64..2.0,
        ) {
            let calib = annual_calibration();
            let s = vec![scenario(&stats), scenario(&[(0.5, 10.0); 4])];
            let bench = benchmark_of(&s);
            let m1 = nonuniform_occurrence(&uniform_occurrence(&calib, share, 2, CountLaw::Binomial).unwrap(), &s, &bench, 2.0).unwrap();
            let m2 = nonuniform_occurrence(&uniform_occurrence(&calib, share * c, 2, CountLaw::Binomial).unwrap(), &s, &bench, 2.0).unwrap();
            for r in 0..4 {
                let (a, b) = (m1.module_values(0)[r], m2.module_values(0)[r]);
                prop_assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            let d1 = module_choice_distribution(&m1, 0).unwrap();
            let d2 = module_choice_distribution(&m2, 0).unwrap();
            for (x, y) in d1.iter().zip(&d2) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn benchmark_of(s: &[TrafficScenario]) -> BenchmarkStats {
        crate::scenario::benchmark_stats(s).unwrap()
    }
}
