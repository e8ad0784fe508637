//! Normal mean-variance mixture approximation of the annual loss and
//! contract pricing with a skewness correction.
//!
//! Given the year composition `mu`, the loss is a sum of `N mu^k` independent
//! per-bucket losses `Y^k` per scenario, so it is approximately
//! `d1 + Z` with `Z ~ N(0, d2)`, where `d1` and `d2` sum the per-bucket mean and
//! variance. The third central moment sum `d3` drives the correction.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::annual::{sample_mu, sample_mu_in_year, stratified_allocation, MuDraw, YearMixture};
use crate::error::{Error, Result};
use crate::hazard::{CountLaw, OccurrenceModel};
use crate::riskstats::Contract;
use crate::rng::{Domain, StreamFactory};
use crate::scenario::PsiSamples;
use crate::severity::{LossSampler, SeverityFamily};

/// Default number of year compositions drawn for approximate pricing.
pub const DEFAULT_MU_DRAWS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    ClosedForm,
    Empirical,
}

/// Sample moments `E[psi^2]`, `E[psi^4]`, `E[psi^6]` of one scenario's speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiMoments {
    pub m2: f64,
    pub m4: f64,
    pub m6: f64,
}

impl PsiMoments {
    pub fn from_samples(samples: &PsiSamples) -> Self {
        Self {
            m2: samples.moment(2),
            m4: samples.moment(4),
            m6: samples.moment(6),
        }
    }

    pub fn constant(psi: f64) -> Self {
        Self {
            m2: psi.powi(2),
            m4: psi.powi(4),
            m6: psi.powi(6),
        }
    }
}

/// Raw moments `E[X^j]`, `j = 1, 2, 3`, of the loss of one accident.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMoments {
    pub first: f64,
    pub second: f64,
    pub third: f64,
}

/// Closed-form raw loss moments, averaging the conditional moments over `psi`.
pub fn closed_form_loss_moments(family: &SeverityFamily, psi: &PsiMoments) -> LossMoments {
    match *family {
        SeverityFamily::DiracZero => LossMoments { first: 0.0, second: 0.0, third: 0.0 },
        SeverityFamily::Gamma { cv } => {
            let c2 = cv * cv;
            LossMoments {
                first: psi.m2,
                second: (1.0 + c2) * psi.m4,
                third: (1.0 + c2) * (1.0 + 2.0 * c2) * psi.m6,
            }
        }
        SeverityFamily::LogNormal { cv } => {
            let g = 1.0 + cv * cv;
            LossMoments {
                first: psi.m2,
                second: g * psi.m4,
                third: g * g * g * psi.m6,
            }
        }
    }
}

/// Monte Carlo raw loss moments over bootstrapped speeds.
pub fn empirical_loss_moments<R: Rng + ?Sized>(
    family: &SeverityFamily,
    psi: &PsiSamples,
    draws: usize,
    rng: &mut R,
) -> Result<LossMoments> {
    if draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    if psi.is_empty() {
        return Err(Error::invalid(format!("scenario {} has no speed samples", psi.scenario + 1)));
    }
    let sampler = LossSampler::new(family)?;
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let v = psi.values[rng.random_range(0..psi.len())];
        let x = sampler.sample(v, rng);
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
    }
    let n = draws as f64;
    Ok(LossMoments { first: s1 / n, second: s2 / n, third: s3 / n })
}

/// Mean, variance and third central moment of the loss of one bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioMoments {
    pub mean: f64,
    pub variance: f64,
    pub third: f64,
    pub source: MomentSource,
}

impl ScenarioMoments {
    pub fn zero(source: MomentSource) -> Self {
        Self { mean: 0.0, variance: 0.0, third: 0.0, source }
    }
}

/// Per-bucket moments for accident probability (or intensity) `p`.
///
/// With a Bernoulli indicator `E[Y^j] = p E[X^j]`, from which the central
/// moments follow. With a Poisson count the bucket loss is compound Poisson,
/// whose variance and third central moment are `p E[X^2]` and `p E[X^3]`.
pub fn compose_moments(law: CountLaw, p: f64, raw: &LossMoments, source: MomentSource) -> Result<ScenarioMoments> {
    if !(p.is_finite() && p >= 0.0) || (law == CountLaw::Binomial && p > 1.0) {
        return Err(Error::invalid(format!("accident probability {p} out of range")));
    }
    if p == 0.0 {
        return Ok(ScenarioMoments::zero(source));
    }
    let mean = p * raw.first;
    let (variance, third) = match law {
        CountLaw::Binomial => {
            let var = p * raw.second - mean * mean;
            (var, p * raw.third - 3.0 * mean * var - mean.powi(3))
        }
        CountLaw::Poisson => (p * raw.second, p * raw.third),
    };
    if variance < 0.0 {
        if variance > -1e-12 * p * raw.second {
            return Ok(ScenarioMoments { mean, variance: 0.0, third, source });
        }
        return Err(Error::NumericalInconsistency(format!(
            "negative bucket variance {variance} from p = {p} and moments {raw:?}"
        )));
    }
    Ok(ScenarioMoments { mean, variance, third, source })
}

/// Per-bucket moments under Gamma severity and a Bernoulli accident indicator.
pub fn scenario_moments_gamma(p: f64, psi: &PsiMoments, cv: f64) -> Result<ScenarioMoments> {
    if !(cv.is_finite() && cv > 0.0) {
        return Err(Error::invalid(format!("coefficient of variation must be positive, got {cv}")));
    }
    let raw = closed_form_loss_moments(&SeverityFamily::Gamma { cv }, psi);
    compose_moments(CountLaw::Binomial, p, &raw, MomentSource::ClosedForm)
}

pub fn scenario_moments_empirical<R: Rng + ?Sized>(
    law: CountLaw,
    p: f64,
    family: &SeverityFamily,
    psi: &PsiSamples,
    draws: usize,
    rng: &mut R,
) -> Result<ScenarioMoments> {
    if p == 0.0 {
        return Ok(ScenarioMoments::zero(MomentSource::Empirical));
    }
    let raw = empirical_loss_moments(family, psi, draws, rng)?;
    compose_moments(law, p, &raw, MomentSource::Empirical)
}

/// Closed-form per-bucket moments for every scenario of a model.
pub fn library_moments(
    occurrence: &OccurrenceModel,
    family: &SeverityFamily,
    psi: &[PsiSamples],
) -> Result<Vec<ScenarioMoments>> {
    if psi.len() != occurrence.scenarios() {
        return Err(Error::invalid("speed samples and occurrence model differ in scenario count"));
    }
    family.cv().map_or(Ok(()), |cv| {
        if cv > 0.0 && cv.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("coefficient of variation must be positive"))
        }
    })?;
    psi.iter()
        .enumerate()
        .map(|(k, s)| {
            let raw = closed_form_loss_moments(family, &PsiMoments::from_samples(s));
            compose_moments(occurrence.law(), occurrence.total(k), &raw, MomentSource::ClosedForm)
        })
        .collect()
}

/// Conditional mean, variance and third central moment of the loss given `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureAggregates {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl MixtureAggregates {
    /// `buckets[k]` is `N mu^k`.
    pub fn new(buckets: &[u64], moments: &[ScenarioMoments]) -> Result<Self> {
        if buckets.len() != moments.len() {
            return Err(Error::invalid("bucket counts and scenario moments differ in length"));
        }
        let mut agg = Self { d1: 0.0, d2: 0.0, d3: 0.0 };
        for (&n, m) in buckets.iter().zip(moments) {
            let n = n as f64;
            agg.d1 += n * m.mean;
            agg.d2 += n * m.variance;
            agg.d3 += n * m.third;
        }
        Ok(agg)
    }
}

fn check_spread(d2: f64) -> Result<()> {
    if d2 < 0.0 || d2.is_nan() {
        return Err(Error::DegenerateMixture(d2));
    }
    Ok(())
}

/// One draw of `d1 + Z`, `Z ~ N(0, d2)`, for the given year composition.
/// The result may be negative.
pub fn sample_mixture_loss<R: Rng + ?Sized>(mu: &MuDraw, moments: &[ScenarioMoments], rng: &mut R) -> Result<f64> {
    let agg = MixtureAggregates::new(&mu.counts, moments)?;
    check_spread(agg.d2)?;
    if agg.d2 == 0.0 {
        return Ok(agg.d1);
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(agg.d1 + agg.d2.sqrt() * z)
}

/// `count` mixture draws, each with its own year composition and stream.
pub fn sample_mixture_losses(
    mixture: &YearMixture,
    moments: &[ScenarioMoments],
    count: usize,
    streams: &StreamFactory,
) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(Domain::MixtureDraw, i as u64);
            let mu = sample_mu(mixture, &mut rng);
            sample_mixture_loss(&mu, moments, &mut rng)
        })
        .collect()
}

fn normal_density(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

fn normal_upper_tail(u: f64) -> f64 {
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// Skewness correction added to the Gaussian price.
///
/// Zero for full coverage and when `d2 = 0`; the stop-loss term is the
/// negative of the deductible term.
pub fn correction_term(contract: &Contract, agg: &MixtureAggregates) -> f64 {
    let deductible = |theta: f64| {
        if !(agg.d2 > 0.0) {
            return 0.0;
        }
        let x = theta - agg.d1;
        x * agg.d3 / (6.0 * agg.d2) / (2.0 * PI * agg.d2).sqrt() * (-x * x / (2.0 * agg.d2)).exp()
    };
    match *contract {
        Contract::Full => 0.0,
        Contract::Deductible(theta) => deductible(theta),
        Contract::StopLoss(theta) => -deductible(theta),
    }
}

/// `E[h(d1 + Z)]` with `Z ~ N(0, d2)`, in closed form.
pub fn gaussian_contract_expectation(contract: &Contract, d1: f64, d2: f64) -> Result<f64> {
    if !(d2 > 0.0) {
        return Err(Error::DegenerateMixture(d2));
    }
    let s = d2.sqrt();
    let excess = |theta: f64| {
        let u = (theta - d1) / s;
        s * normal_density(u) - (theta - d1) * normal_upper_tail(u)
    };
    Ok(match *contract {
        Contract::Full => d1,
        Contract::Deductible(theta) => excess(theta),
        Contract::StopLoss(theta) => d1 - excess(theta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PricingMethod {
    MonteCarlo,
    Approx,
    ApproxCorrected,
}

impl PricingMethod {
    pub const ALL: [PricingMethod; 3] = [PricingMethod::MonteCarlo, PricingMethod::Approx, PricingMethod::ApproxCorrected];

    pub fn name(self) -> &'static str {
        match self {
            PricingMethod::MonteCarlo => "mc",
            PricingMethod::Approx => "approx",
            PricingMethod::ApproxCorrected => "approx_corrected",
        }
    }
}

/// Gaussian-mixture pricer over a fixed, weighted set of year compositions,
/// so that prices of different contracts share the same draws.
///
/// Compositions are drawn per year type, with the number of draws of each
/// type proportional to its probability and the draws weighted so that the
/// type probabilities are matched exactly. This removes the noise of the
/// year-type draw, which otherwise dominates the pricing error.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePricer {
    aggregates: Vec<MixtureAggregates>,
    weights: Vec<f64>,
}

impl MixturePricer {
    /// Equally weighted compositions.
    pub fn new(aggregates: Vec<MixtureAggregates>) -> Result<Self> {
        let w = 1.0 / aggregates.len().max(1) as f64;
        let weights = vec![w; aggregates.len()];
        Self::weighted(aggregates, weights)
    }

    /// Weights must be non-negative and sum to 1.
    pub fn weighted(aggregates: Vec<MixtureAggregates>, weights: Vec<f64>) -> Result<Self> {
        if aggregates.is_empty() {
            return Err(Error::invalid("need at least one year composition"));
        }
        if weights.len() != aggregates.len() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("need one non-negative weight per composition"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("composition weights sum to {total}, expected 1")));
        }
        for a in &aggregates {
            check_spread(a.d2)?;
        }
        Ok(Self { aggregates, weights })
    }

    fn stratified(
        mixture: &YearMixture,
        count: usize,
        mut draw: impl FnMut(usize) -> Result<MixtureAggregates>,
    ) -> Result<Self> {
        let alloc = stratified_allocation(mixture, count);
        let present: f64 = alloc
            .iter()
            .zip(mixture.year_probabilities())
            .filter(|(n, _)| **n > 0)
            .map(|(_, p)| p)
            .sum();
        let mut aggregates = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for (year, &n) in alloc.iter().enumerate() {
            let w = mixture.year_probabilities()[year] / present / n.max(1) as f64;
            for _ in 0..n {
                aggregates.push(draw(year)?);
                weights.push(w);
            }
        }
        Self::weighted(aggregates, weights)
    }

    /// Draws `count` compositions, draw `i` from its own stream.
    pub fn sample(mixture: &YearMixture, moments: &[ScenarioMoments], count: usize, streams: &StreamFactory) -> Result<Self> {
        let alloc = stratified_allocation(mixture, count);
        let years: Vec<usize> = alloc.iter().enumerate().flat_map(|(y, &n)| std::iter::repeat_n(y, n)).collect();
        let drawn = years
            .par_iter()
            .enumerate()
            .map(|(i, &year)| {
                let mu = sample_mu_in_year(mixture, year, &mut streams.stream(Domain::MixturePricing, i as u64));
                MixtureAggregates::new(&mu.counts, moments)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut it = drawn.into_iter();
        Self::stratified(mixture, count, |_| Ok(it.next().expect("one draw per slot")))
    }

    pub fn from_rng<R: Rng + ?Sized>(mixture: &YearMixture, moments: &[ScenarioMoments], count: usize, rng: &mut R) -> Result<Self> {
        Self::stratified(mixture, count, |year| {
            MixtureAggregates::new(&sample_mu_in_year(mixture, year, rng).counts, moments)
        })
    }

    pub fn aggregates(&self) -> &[MixtureAggregates] {
        &self.aggregates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn price(&self, contract: &Contract, corrected: bool) -> f64 {
        self.aggregates
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| {
                let base = if a.d2 > 0.0 {
                    gaussian_contract_expectation(contract, a.d1, a.d2).expect("positive spread")
                } else {
                    contract.apply(a.d1)
                };
                let c = if corrected { correction_term(contract, a) } else { 0.0 };
                w * (base + c)
            })
            .sum()
    }
}

/// Mean payoff over Monte Carlo loss draws.
pub fn monte_carlo_price(contract: &Contract, losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::invalid("no loss samples"));
    }
    Ok(losses.iter().map(|&l| contract.apply(l)).sum::<f64>() / losses.len() as f64)
}

/// Inputs shared by all pricing methods.
#[derive(Debug, Clone, Copy)]
pub struct PricingInputs<'a> {
    pub losses: &'a [f64],
    pub mixture: &'a YearMixture,
    pub moments: &'a [ScenarioMoments],
}

/// Prices one contract. The approximate methods draw `mu_draws` year
/// compositions from `rng`; use [`MixturePricer`] to reuse draws across contracts.
pub fn price_contract<R: Rng + ?Sized>(
    method: PricingMethod,
    contract: &Contract,
    inputs: &PricingInputs<'_>,
    mu_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    match method {
        PricingMethod::MonteCarlo => monte_carlo_price(contract, inputs.losses),
        PricingMethod::Approx | PricingMethod::ApproxCorrected => {
            let pricer = MixturePricer::from_rng(inputs.mixture, inputs.moments, mu_draws, rng)?;
            Ok(pricer.price(contract, method == PricingMethod::ApproxCorrected))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingRow {
    pub theta: f64,
    pub method: PricingMethod,
    pub price: f64,
    pub reference: f64,
}

impl PricingRow {
    pub fn abs_err(&self) -> f64 {
        (self.price - self.reference).abs()
    }

    /// Relative error; empty when the reference price is 0.
    pub fn rel_err(&self) -> Option<f64> {
        (self.reference != 0.0).then(|| self.abs_err() / self.reference.abs())
    }
}

/// Writes `theta,method,price,abs_err_vs_mc100k,rel_err`.
pub fn write_pricing_csv<W: Write>(out: W, rows: &[PricingRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta", "method", "price", "abs_err_vs_mc100k", "rel_err"])?;
    for r in rows {
        w.write_record([
            r.theta.to_string(),
            r.method.name().to_string(),
            r.price.to_string(),
            r.abs_err().to_string(),
            r.rel_err().map_or_else(String::new, |e| e.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annual::default_year_mixture;
    use crate::hazard::sample_count;
    use crate::hazard::OccurrenceKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn gamma_moments_worked_example() {
        let m = scenario_moments_gamma(0.5, &PsiMoments::constant(10.0), 1.0).unwrap();
        assert!(close(m.mean, 50.0, 1e-14));
        assert!(close(m.variance, 7500.0, 1e-14));
        assert!(close(m.third, 1.75e6, 1e-14));
        assert_eq!(scenario_moments_gamma(0.0, &PsiMoments::constant(10.0), 1.0).unwrap(), ScenarioMoments::zero(MomentSource::ClosedForm));
    }

    #[test]
    fn gamma_moments_follow_the_shape_rate_formulas() {
        // p c^4 E[psi^4] (1 + 1/c^2)(1/c^2) - m^2 and the analogous third moment
        let (p, c) = (0.2, 0.5);
        let psi = PsiMoments { m2: 30.0, m4: 1500.0, m6: 9e4 };
        let m = scenario_moments_gamma(p, &psi, c).unwrap();
        let c2 = c * c;
        let mean = p * psi.m2;
        let var = p * c2 * c2 * psi.m4 * (1.0 + 1.0 / c2) / c2 - mean * mean;
        let third = p * c2.powi(3) * psi.m6 * (2.0 + 1.0 / c2) * (1.0 + 1.0 / c2) / c2 - 3.0 * mean * var - mean.powi(3);
        assert!(close(m.mean, mean, 1e-13) && close(m.variance, var, 1e-12) && close(m.third, third, 1e-12));
    }

    #[test]
    fn gamma_moments_match_brute_force() {
        let (p, cv) = (0.3, 1.0);
        let psi = PsiSamples { scenario: 0, values: vec![4.0, 9.0, 0.0, 6.5], modules: vec![0; 4] };
        let m = scenario_moments_gamma(p, &PsiMoments::from_samples(&psi), cv).unwrap();
        let sampler = LossSampler::new(&SeverityFamily::Gamma { cv }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2_000_000;
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    sampler.sample(psi.values[rng.random_range(0..4)], &mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        let nf = n as f64;
        let mean = ys.iter().sum::<f64>() / nf;
        let c2: Vec<f64> = ys.iter().map(|y| (y - mean).powi(2)).collect();
        let var = c2.iter().sum::<f64>() / nf;
        let var_se = (c2.iter().map(|d| (d - var).powi(2)).sum::<f64>() / nf).sqrt() / nf.sqrt();
        let mean_se = (var / nf).sqrt();
        assert!((mean - m.mean).abs() < 3.0 * mean_se, "{mean} vs {}", m.mean);
        assert!((var - m.variance).abs() < 3.0 * var_se, "{var} vs {}", m.variance);
    }

    #[test]
    fn empirical_moments_agree_with_closed_form() {
        let psi = PsiSamples { scenario: 0, values: vec![3.0, 10.0, 7.0], modules: vec![0; 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = scenario_moments_gamma(0.4, &PsiMoments::from_samples(&psi), 0.5).unwrap();
        let e = scenario_moments_empirical(CountLaw::Binomial, 0.4, &SeverityFamily::Gamma { cv: 0.5 }, &psi, 400_000, &mut rng).unwrap();
        assert!(close(e.mean, g.mean, 0.01));
        assert!(close(e.variance, g.variance, 0.02));
        assert_eq!(e.source, MomentSource::Empirical);

        let ten = PsiSamples { scenario: 0, values: vec![10.0], modules: vec![0] };
        let l = scenario_moments_empirical(CountLaw::Binomial, 0.25, &SeverityFamily::LogNormal { cv: 0.5 }, &ten, 100_000, &mut rng).unwrap();
        assert!(close(l.mean, 25.0, 0.01));
        let z = scenario_moments_empirical(CountLaw::Binomial, 0.0, &SeverityFamily::LogNormal { cv: 0.5 }, &ten, 1000, &mut rng).unwrap();
        assert_eq!((z.mean, z.variance, z.third), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lognormal_closed_form_third_moment() {
        let psi = PsiMoments::constant(2.0);
        let raw = closed_form_loss_moments(&SeverityFamily::LogNormal { cv: 1.0 }, &psi);
        let fam = SeverityFamily::LogNormal { cv: 1.0 };
        assert!(close(raw.second, fam.raw_moment(2.0, 2), 1e-15));
        assert!(close(raw.third, fam.raw_moment(2.0, 3), 1e-15));
    }

    // Brute force: simulate the compound count at fixed mu and compare to d1, d2.
    #[test]
    fn aggregates_are_exact_conditional_moments() {
        let psi = vec![
            PsiSamples { scenario: 0, values: vec![5.0, 8.0], modules: vec![0; 2] },
            PsiSamples { scenario: 1, values: vec![2.0, 12.0, 0.0], modules: vec![0; 3] },
        ];
        let occ = OccurrenceModel::from_module_values(OccurrenceKind::Uniform, CountLaw::Binomial, vec![vec![0.05], vec![0.2]]).unwrap();
        let fam = SeverityFamily::Gamma { cv: 2.0 };
        let moments = library_moments(&occ, &fam, &psi).unwrap();
        let counts = [30u64, 70];
        let agg = MixtureAggregates::new(&counts, &moments).unwrap();

        let sampler = LossSampler::new(&fam).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 300_000;
        let ls: Vec<f64> = (0..n)
            .map(|_| {
                let mut l = 0.0;
                for k in 0..2 {
                    for _ in 0..sample_count(&occ, k, counts[k], &mut rng).unwrap() {
                        l += sampler.sample(psi[k].values[rng.random_range(0..psi[k].len())], &mut rng);
                    }
                }
                l
            })
            .collect();
        let nf = n as f64;
        let mean = ls.iter().sum::<f64>() / nf;
        let dev: Vec<f64> = ls.iter().map(|l| (l - mean).powi(2)).collect();
        let var = dev.iter().sum::<f64>() / nf;
        let var_se = (dev.iter().map(|d| (d - var).powi(2)).sum::<f64>() / nf).sqrt() / nf.sqrt();
        assert!((mean - agg.d1).abs() < 3.0 * (var / nf).sqrt(), "{mean} vs {}", agg.d1);
        assert!((var - agg.d2).abs() < 3.0 * var_se, "{var} vs {}", agg.d2);
    }

    #[test]
    fn poisson_moments_are_compound_cumulants() {
        let raw = LossMoments { first: 2.0, second: 10.0, third: 70.0 };
        let m = compose_moments(CountLaw::Poisson, 0.01, &raw, MomentSource::ClosedForm).unwrap();
        assert!(close(m.mean, 0.02, 1e-15) && close(m.variance, 0.1, 1e-15) && close(m.third, 0.7, 1e-15));
    }

    #[test]
    fn negative_variance_is_reported() {
        let raw = LossMoments { first: 10.0, second: 1.0, third: 1.0 };
        assert!(matches!(
            compose_moments(CountLaw::Binomial, 0.5, &raw, MomentSource::Empirical),
            Err(Error::NumericalInconsistency(_))
        ));
    }

    #[test]
    fn mixture_draws() {
        let mu = MuDraw { year: 0, counts: vec![10, 0] };
        let flat = [ScenarioMoments { mean: 3.0, variance: 0.0, third: 0.0, source: MomentSource::ClosedForm }; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_mixture_loss(&mu, &flat, &mut rng).unwrap(), 30.0);

        let m = [ScenarioMoments { mean: 3.0, variance: 40.0, third: 0.0, source: MomentSource::ClosedForm }; 2];
        let n = 100_000;
        let mean = (0..n).map(|_| sample_mixture_loss(&mu, &m, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 30.0).abs() < 3.0 * (400.0 / n as f64).sqrt());

        let bad = [ScenarioMoments { mean: 3.0, variance: -1.0, third: 0.0, source: MomentSource::ClosedForm }; 2];
        assert!(matches!(sample_mixture_loss(&mu, &bad, &mut rng), Err(Error::DegenerateMixture(_))));
    }

    #[test]
    fn correction_examples() {
        let agg = MixtureAggregates { d1: 500.0, d2: 1e4, d3: 1e6 };
        assert_eq!(correction_term(&Contract::Full, &agg), 0.0);
        assert_eq!(correction_term(&Contract::Deductible(500.0), &agg), 0.0);
        let c = correction_term(&Contract::Deductible(600.0), &agg);
        // (100 * 1e6 / 6e4) * phi(1) / 100
        let phi1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((c - 1e8 / 6e4 * phi1 / 100.0).abs() < 1e-12);
        assert!((c - 4.0328).abs() < 1e-4);
        assert_eq!(correction_term(&Contract::StopLoss(600.0), &agg), -c);
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn gaussian_expectations() {
        assert_eq!(gaussian_contract_expectation(&Contract::Full, 5.0, 4.0).unwrap(), 5.0);
        let v = gaussian_contract_expectation(&Contract::Deductible(5.0), 5.0, 1.0).unwrap();
        assert!((v - 0.39894).abs() < 1e-5);
        assert!(gaussian_contract_expectation(&Contract::Full, 5.0, 0.0).is_err());
        for (d1, d2, theta) in [(100.0, 400.0, 90.0), (100.0, 400.0, 150.0), (3.0, 0.25, 0.0), (3.0, 0.25, 3.7)] {
            let s: f64 = f64::sqrt(d2);
            for contract in [Contract::Deductible(theta), Contract::StopLoss(theta)] {
                let quad = simpson(
                    |z| contract.apply(d1 + s * z) * normal_density(z),
                    -12.0,
                    12.0,
                    24_000,
                );
                let closed = gaussian_contract_expectation(&contract, d1, d2).unwrap();
                assert!((quad - closed).abs() < 1e-8, "{contract:?}: {quad} vs {closed}");
            }
        }
    }

    #[test]
    fn pricing_limits_and_parity() {
        let mix = default_year_mixture(2, 1000).unwrap();
        let moments = [
            // d1 sits far above zero, so the Gaussian has no mass below 0
            ScenarioMoments { mean: 5.0, variance: 40.0, third: 900.0, source: MomentSource::ClosedForm },
            ScenarioMoments { mean: 10.0, variance: 90.0, third: 2500.0, source: MomentSource::ClosedForm },
        ];
        let losses = [0.0, 400.0, 700.0, 900.0];
        let inputs = PricingInputs { losses: &losses, mixture: &mix, moments: &moments };
        for method in PricingMethod::ALL {
            let price = |c: Contract| price_contract(method, &c, &inputs, 200, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            let full = price(Contract::Full);
            assert!((price(Contract::Deductible(0.0)) - full).abs() < 1e-9 * full.max(1.0), "{method:?}");
            assert!(price(Contract::Deductible(1e9)).abs() < 1e-9);
            assert!((price(Contract::StopLoss(1e9)) - full).abs() < 1e-9 * full);
            for theta in [100.0, 5000.0, 7500.0, 20_000.0] {
                let sum = price(Contract::Deductible(theta)) + price(Contract::StopLoss(theta));
                assert!((sum - full).abs() < 1e-9 * full.max(1.0), "{method:?} {theta}");
            }
        }
    }

    #[test]
    fn pricing_csv() {
        let rows = [
            PricingRow { theta: 10.0, method: PricingMethod::Approx, price: 2.0, reference: 4.0 },
            PricingRow { theta: 20.0, method: PricingMethod::MonteCarlo, price: 0.0, reference: 0.0 },
        ];
        let mut buf = Vec::new();
        write_pricing_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "theta,method,price,abs_err_vs_mc100k,rel_err\n10,approx,2,2,0.5\n20,mc,0,0,\n"
        );
    }

    proptest! {
        #[test]
        fn approximate_parity_and_antisymmetry(d1 in -1e3f64..1e4, d2 in 1e-2f64..1e6, d3 in -1e7f64..1e7, theta in 0.0f64..2e4) {
            let agg = MixtureAggregates { d1, d2, d3 };
            prop_assert_eq!(correction_term(&Contract::StopLoss(theta), &agg), -correction_term(&Contract::Deductible(theta), &agg));
            let ded = gaussian_contract_expectation(&Contract::Deductible(theta), d1, d2).unwrap();
            let stop = gaussian_contract_expectation(&Contract::StopLoss(theta), d1, d2).unwrap();
            prop_assert!((ded + stop - d1).abs() <= 1e-9 * d1.abs().max(1.0));
            prop_assert!(ded >= -1e-9 * d2.sqrt());
        }
    }
}
