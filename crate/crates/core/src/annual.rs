//! Year composition and total annual loss sampling.
//!
//! A year is `N` time buckets. Its type (good or bad traffic year) is drawn
//! first, then the number of buckets spent in each scenario is multinomial,
//! then accident counts, involved vehicle speeds and losses follow per scenario.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hazard::{sample_count, OccurrenceModel};
use crate::rng::{Domain, StreamFactory};
use crate::scenario::{PsiSamples, TrafficScenario};
use crate::severity::{LossSampler, SeverityFamily};

/// Default number of buckets at desk scale.
pub const DEFAULT_BUCKETS: u64 = 10_000;
/// Default number of Monte Carlo draws at desk scale.
pub const DEFAULT_DRAWS: usize = 2_000;

#[derive(Debug, Clone, PartialEq)]
pub struct YearMixture {
    names: Vec<String>,
    probabilities: Vec<f64>,
    /// `nu[y][k]`: scenario distribution of year type `y`.
    nu: Vec<Vec<f64>>,
    buckets: u64,
}

impl YearMixture {
    pub fn new(names: Vec<String>, probabilities: Vec<f64>, nu: Vec<Vec<f64>>, buckets: u64) -> Result<Self> {
        if names.len() != probabilities.len() || nu.len() != probabilities.len() || nu.is_empty() {
            return Err(Error::invalid("year types, probabilities and scenario distributions differ in length"));
        }
        check_distribution(&probabilities, "year type probabilities")?;
        let k = nu[0].len();
        if k == 0 {
            return Err(Error::invalid("need at least one scenario"));
        }
        for (y, row) in nu.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid("scenario distributions differ in length"));
            }
            check_distribution(row, &format!("scenario distribution of year type {}", names[y]))?;
        }
        if buckets == 0 {
            return Err(Error::invalid("need at least one time bucket"));
        }
        Ok(Self {
            names,
            probabilities,
            nu,
            buckets,
        })
    }

    pub fn scenarios(&self) -> usize {
        self.nu[0].len()
    }

    pub fn buckets(&self) -> u64 {
        self.buckets
    }

    pub fn year_names(&self) -> &[String] {
        &self.names
    }

    pub fn year_probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn scenario_distribution(&self, year: usize) -> &[f64] {
        &self.nu[year]
    }

    /// `E[mu^k]`.
    pub fn expected_frequency(&self, k: usize) -> f64 {
        self.probabilities.iter().zip(&self.nu).map(|(p, nu)| p * nu[k]).sum()
    }

    /// `E[(mu^k)^2]`: multinomial second moment mixed over year types.
    pub fn second_frequency_moment(&self, k: usize) -> f64 {
        let n = self.buckets as f64;
        self.probabilities
            .iter()
            .zip(&self.nu)
            .map(|(p, nu)| {
                let q = nu[k];
                p * (q * (1.0 - q) / n + q * q)
            })
            .sum()
    }
}

fn check_distribution(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(format!("{what} must be non-negative")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Good and bad years with probability one half each. Good years spend twice
/// as many buckets in each low-volume scenario (the first half) as in each
/// high-volume one; bad years the reverse. For `K = 100` the weights are
/// `1/75` and `1/150`; other even `K` keep the 2:1 ratio.
pub fn default_year_mixture(scenarios: usize, buckets: u64) -> Result<YearMixture> {
    if scenarios == 0 || !scenarios.is_multiple_of(2) {
        return Err(Error::invalid(format!("scenario count must be even and positive, got {scenarios}")));
    }
    let half = scenarios / 2;
    let (heavy, light) = if scenarios == 100 {
        (1.0 / 75.0, 1.0 / 150.0)
    } else {
        let unit = 1.0 / (3.0 * half as f64);
        (2.0 * unit, unit)
    };
    let good: Vec<f64> = (0..scenarios).map(|k| if k < half { heavy } else { light }).collect();
    let bad: Vec<f64> = (0..scenarios).map(|k| if k < half { light } else { heavy }).collect();
    YearMixture::new(vec!["g".into(), "b".into()], vec![0.5, 0.5], vec![good, bad], buckets)
}

/// Year type and buckets per scenario (`N mu^k`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuDraw {
    pub year: usize,
    pub counts: Vec<u64>,
}

impl MuDraw {
    pub fn frequency(&self, k: usize) -> f64 {
        let n: u64 = self.counts.iter().sum();
        self.counts[k] as f64 / n as f64
    }
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Multinomial counts by conditional binomial splitting.
pub fn multinomial<R: Rng + ?Sized>(trials: u64, probabilities: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; probabilities.len()];
    let mut left = trials;
    let mut mass = 1.0;
    let last = probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    for (k, &p) in probabilities.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k == last {
            counts[k] = left;
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let c = Binomial::new(left, q).expect("probability clamped to [0, 1]").sample(rng);
        counts[k] = c;
        left -= c;
        mass -= p;
    }
    counts
}

pub fn sample_mu<R: Rng + ?Sized>(mixture: &YearMixture, rng: &mut R) -> MuDraw {
    let year = categorical(&mixture.probabilities, rng);
    sample_mu_in_year(mixture, year, rng)
}

/// Scenario composition of a year of the given type.
pub fn sample_mu_in_year<R: Rng + ?Sized>(mixture: &YearMixture, year: usize, rng: &mut R) -> MuDraw {
    let counts = multinomial(mixture.buckets, &mixture.nu[year], rng);
    MuDraw { year, counts }
}

/// Splits `draws` over the year types in proportion to their probabilities
/// (largest remainder, ties to the earlier type).
pub fn stratified_allocation(mixture: &YearMixture, draws: usize) -> Vec<usize> {
    let exact: Vec<f64> = mixture.probabilities.iter().map(|p| p * draws as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = draws - alloc.iter().sum::<usize>();
    for &y in order.iter().take(missing) {
        alloc[y] += 1;
    }
    alloc
}

/// Everything needed to draw annual losses.
#[derive(Debug, Clone)]
pub struct LossModel<'a> {
    pub mixture: &'a YearMixture,
    pub occurrence: &'a OccurrenceModel,
    pub psi: &'a [PsiSamples],
    pub severity: SeverityFamily,
}

impl LossModel<'_> {
    pub fn validate(&self) -> Result<()> {
        let k = self.mixture.scenarios();
        if self.occurrence.scenarios() != k {
            return Err(Error::invalid(format!(
                "occurrence model covers {} scenarios, year mixture {k}",
                self.occurrence.scenarios()
            )));
        }
        if self.psi.len() != k {
            return Err(Error::invalid(format!("speed samples exist for {} of {k} scenarios", self.psi.len())));
        }
        for (i, s) in self.psi.iter().enumerate() {
            if s.is_empty() && self.occurrence.total(i) > 0.0 {
                return Err(Error::invalid(format!("scenario {} has accidents but no speed samples", i + 1)));
            }
        }
        Ok(())
    }

    /// Mean loss of one accident in scenario `k`.
    pub fn accident_mean(&self, k: usize) -> f64 {
        let s = &self.psi[k];
        if s.is_empty() {
            return 0.0;
        }
        s.values.iter().map(|&v| self.severity.raw_moment(v, 1)).sum::<f64>() / s.len() as f64
    }
}

/// One Monte Carlo draw of the annual loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDraw {
    pub year: usize,
    /// Accidents per scenario.
    pub accidents: Vec<u64>,
    pub loss: f64,
}

fn draw_total_loss<R: Rng + ?Sized>(model: &LossModel<'_>, sampler: &LossSampler, rng: &mut R) -> Result<LossDraw> {
    let mu = sample_mu(model.mixture, rng);
    let mut accidents = Vec::with_capacity(mu.counts.len());
    let mut loss = 0.0;
    for (k, &buckets) in mu.counts.iter().enumerate() {
        let c = sample_count(model.occurrence, k, buckets, rng)?;
        accidents.push(c);
        let speeds = &model.psi[k].values;
        for _ in 0..c {
            let psi = speeds[rng.random_range(0..speeds.len())];
            loss += sampler.sample(psi, rng);
        }
    }
    Ok(LossDraw {
        year: mu.year,
        accidents,
        loss,
    })
}

pub fn sample_total_loss<R: Rng + ?Sized>(model: &LossModel<'_>, rng: &mut R) -> Result<LossDraw> {
    model.validate()?;
    draw_total_loss(model, &LossSampler::new(&model.severity)?, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSampleSet {
    pub draws: Vec<LossDraw>,
    /// Multiplier turning a loss into a loss per 100 expected insured vehicles.
    pub normalization: f64,
    pub seed: u64,
}

impl LossSampleSet {
    pub fn losses(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loss).collect()
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loss * self.normalization).collect()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Writes `draw,year,L,L_normalized`.
    pub fn write_csv<W: Write>(&self, mixture: &YearMixture, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["draw", "year", "L", "L_normalized"])?;
        for (i, d) in self.draws.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                mixture.names[d.year].clone(),
                d.loss.to_string(),
                (d.loss * self.normalization).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `count` annual losses in parallel. Draw `i` uses its own stream, so
/// the result does not depend on the number of worker threads.
pub fn sample_losses(
    model: &LossModel<'_>,
    count: usize,
    streams: &StreamFactory,
    normalization: f64,
) -> Result<LossSampleSet> {
    model.validate()?;
    let sampler = LossSampler::new(&model.severity)?;
    let draws = (0..count)
        .into_par_iter()
        .map(|i| draw_total_loss(model, &sampler, &mut streams.stream(Domain::LossDraw, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossSampleSet {
        draws,
        normalization,
        seed: streams.master_seed(),
    })
}

/// `E[L] = N sum_k E[mu^k] p^k E[X^k]`, with `E[X^k]` averaged over the
/// pre-sampled speeds.
pub fn wald_mean(model: &LossModel<'_>) -> Result<f64> {
    model.validate()?;
    let n = model.mixture.buckets() as f64;
    Ok((0..model.mixture.scenarios())
        .map(|k| n * model.mixture.expected_frequency(k) * model.occurrence.total(k) * model.accident_mean(k))
        .sum())
}

/// `200 / (n_g + n_b)`: the per-100-vehicle factor for the default mixture,
/// where `n_g` and `n_b` are the insured counts of low- and high-volume scenarios.
pub fn normalization_factor(n_good: u64, n_bad: u64) -> Result<f64> {
    let total = n_good + n_bad;
    if total == 0 {
        return Err(Error::invalid("no insured vehicles to normalize by"));
    }
    Ok(200.0 / total as f64)
}

/// `100 / sum_k n^k E[mu^k]` for any mixture.
pub fn library_normalization(mixture: &YearMixture, scenarios: &[TrafficScenario]) -> Result<f64> {
    if scenarios.len() != mixture.scenarios() {
        return Err(Error::invalid("scenario library and year mixture differ in size"));
    }
    let expected: f64 = scenarios
        .iter()
        .enumerate()
        .map(|(k, s)| s.insured as f64 * mixture.expected_frequency(k))
        .sum();
    if !(expected > 0.0) {
        return Err(Error::invalid("no insured vehicles to normalize by"));
    }
    Ok(100.0 / expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{CountLaw, OccurrenceKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_mixture_weights() {
        let m = default_year_mixture(100, 525_600).unwrap();
        assert_eq!(m.scenario_distribution(0)[0], 1.0 / 75.0);
        assert_eq!(m.scenario_distribution(0)[50], 1.0 / 150.0);
        assert_eq!(m.scenario_distribution(1)[0], 1.0 / 150.0);
        let m2 = default_year_mixture(2, 10).unwrap();
        assert!((m2.scenario_distribution(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m2.scenario_distribution(0)[1] - 1.0 / 3.0).abs() < 1e-15);
        for k in [2, 20, 100] {
            let m = default_year_mixture(k, 10).unwrap();
            for y in 0..2 {
                assert!((m.scenario_distribution(y).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let half: f64 = (0..k / 2).map(|i| m.expected_frequency(i)).sum();
            assert!((half - 0.5).abs() < 1e-12);
        }
        assert!(default_year_mixture(3, 10).is_err());
    }

    #[test]
    fn allocation_follows_year_probabilities() {
        let m = default_year_mixture(2, 10).unwrap();
        assert_eq!(stratified_allocation(&m, 1000), vec![500, 500]);
        assert_eq!(stratified_allocation(&m, 7), vec![4, 3]);
        let skew = YearMixture::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.2, 0.5, 0.3],
            vec![vec![1.0]; 3],
            10,
        )
        .unwrap();
        assert_eq!(stratified_allocation(&skew, 9), vec![2, 4, 3]);
        assert_eq!(stratified_allocation(&skew, 0), vec![0, 0, 0]);
    }

    #[test]
    fn point_mass_mixture() {
        let m = YearMixture::new(vec!["only".into()], vec![1.0], vec![vec![1.0, 0.0, 0.0]], 500).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sample_mu(&m, &mut rng);
        assert_eq!(d.counts, vec![500, 0, 0]);
        assert_eq!(d.frequency(0), 1.0);
    }

    #[test]
    fn mu_sums_to_one_and_has_mixture_mean() {
        let m = default_year_mixture(20, 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut sums = [0.0; 20];
        let mut sq = [0.0; 20];
        for _ in 0..n {
            let d = sample_mu(&m, &mut rng);
            assert_eq!(d.counts.iter().sum::<u64>(), 10_000);
            for k in 0..20 {
                let f = d.frequency(k);
                sums[k] += f;
                sq[k] += f * f;
            }
        }
        for k in 0..20 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - m.expected_frequency(k)).abs() < 3.0 * se + 1e-12, "{k}: {mean}");
            assert!((sq[k] / n as f64 - m.second_frequency_moment(k)).abs() < 0.05 * m.second_frequency_moment(k));
        }
    }

    fn flat_psi(k: usize, values: Vec<f64>) -> PsiSamples {
        let modules = vec![0; values.len()];
        PsiSamples { scenario: k, values, modules }
    }

    #[test]
    fn zero_probabilities_or_zero_speeds_give_zero_loss() {
        let mix = default_year_mixture(2, 1000).unwrap();
        let zero = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![0.0]; 2]).unwrap();
        let some = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![0.05]; 2]).unwrap();
        let psi = vec![flat_psi(0, vec![10.0, 5.0]), flat_psi(1, vec![3.0])];
        let stopped = vec![flat_psi(0, vec![0.0; 4]), flat_psi(1, vec![0.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sev = SeverityFamily::Gamma { cv: 1.0 };
        for _ in 0..50 {
            let a = LossModel { mixture: &mix, occurrence: &zero, psi: &psi, severity: sev };
            assert_eq!(sample_total_loss(&a, &mut rng).unwrap().loss, 0.0);
            let b = LossModel { mixture: &mix, occurrence: &some, psi: &stopped, severity: sev };
            let d = sample_total_loss(&b, &mut rng).unwrap();
            assert_eq!(d.loss, 0.0);
            assert!(d.accidents.iter().sum::<u64>() > 0);
        }
    }

    #[test]
    fn missing_speed_library_is_rejected() {
        let mix = default_year_mixture(2, 1000).unwrap();
        let occ = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![0.01]; 2]).unwrap();
        let psi = vec![flat_psi(0, vec![1.0])];
        let m = LossModel { mixture: &mix, occurrence: &occ, psi: &psi, severity: SeverityFamily::Gamma { cv: 1.0 } };
        assert!(sample_total_loss(&m, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn mean_matches_wald() {
        let mix = default_year_mixture(4, 2000).unwrap();
        let occ = OccurrenceModel::from_module_values(
            OccurrenceKind::Uniform,
            CountLaw::Binomial,
            vec![vec![1e-3], vec![2e-3], vec![3e-3], vec![5e-3]],
        )
        .unwrap();
        let psi: Vec<_> = (0..4).map(|k| flat_psi(k, vec![2.0 + k as f64, 8.0, 0.0, 11.0])).collect();
        let model = LossModel { mixture: &mix, occurrence: &occ, psi: &psi, severity: SeverityFamily::LogNormal { cv: 0.5 } };
        let set = sample_losses(&model, 20_000, &StreamFactory::new(9), 1.0).unwrap();
        let xs = set.losses();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = wald_mean(&model).unwrap();
        assert!((mean - target).abs() < 3.0 * sd / n.sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn parallel_sampling_is_thread_count_invariant() {
        let mix = default_year_mixture(2, 5000).unwrap();
        let occ = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Poisson, vec![vec![1e-3]; 2]).unwrap();
        let psi = vec![flat_psi(0, vec![4.0, 9.0]), flat_psi(1, vec![1.0, 0.0, 13.0])];
        let model = LossModel { mixture: &mix, occurrence: &occ, psi: &psi, severity: SeverityFamily::Gamma { cv: 2.0 } };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_losses(&model, 500, &StreamFactory::new(77), 1.0).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalization_factor(100, 100).unwrap(), 1.0);
        assert_eq!(normalization_factor(50, 150).unwrap(), 1.0);
        assert_eq!(normalization_factor(30, 70).unwrap(), 2.0);
        assert!(normalization_factor(0, 0).is_err());
    }

    #[test]
    fn general_normalization_reduces_to_two_type_factor() {
        let mix = default_year_mixture(6, 100).unwrap();
        let lib: Vec<TrafficScenario> = (0..6)
            .map(|k| TrafficScenario {
                index: k,
                duration: 60.0,
                high_volume: k >= 3,
                modules: vec![],
                insured: if k < 3 { 30 } else { 70 },
                detectors: vec![],
                trajectory: None,
            })
            .collect();
        let f = library_normalization(&mix, &lib).unwrap();
        assert!((f - normalization_factor(30, 70).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let mix = default_year_mixture(2, 10).unwrap();
        let set = LossSampleSet {
            draws: vec![
                LossDraw { year: 0, accidents: vec![0, 0], loss: 0.0 },
                LossDraw { year: 1, accidents: vec![1, 2], loss: 12.5 },
            ],
            normalization: 2.0,
            seed: 1,
        };
        let mut buf = Vec::new();
        set.write_csv(&mix, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "draw,year,L,L_normalized\n1,g,0,0\n2,b,12.5,25\n");
    }
}
