//! Statistical functionals of loss samples and contract payoffs.

use std::io::Write;

use crate::error::{Error, Result};

/// Levels reported for value-at-risk and expected shortfall.
pub const REPORT_LEVELS: [f64; 3] = [0.9, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contract {
    Full,
    /// Pays the loss above the threshold.
    Deductible(f64),
    /// Pays the loss up to the threshold.
    StopLoss(f64),
}

impl Contract {
    pub fn apply(&self, loss: f64) -> f64 {
        match *self {
            Contract::Full => loss,
            Contract::Deductible(theta) => (loss - theta).max(0.0),
            Contract::StopLoss(theta) => loss.min(theta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Contract::Full => "full",
            Contract::Deductible(_) => "deductible",
            Contract::StopLoss(_) => "stop_loss",
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            Contract::Full => None,
            Contract::Deductible(t) | Contract::StopLoss(t) => Some(t),
        }
    }
}

pub fn apply_contract(contract: &Contract, loss: f64) -> f64 {
    contract.apply(loss)
}

fn check(samples: &[f64], p: f64) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {p}")));
    }
    Ok(())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// 1-based rank `ceil(n p)`, tolerant to `n p` landing a hair above an integer.
fn var_rank(n: usize, p: f64) -> usize {
    let np = n as f64 * p;
    let r = np.round();
    let rank = if (np - r).abs() <= 1e-9 * np.max(1.0) { r } else { np.ceil() };
    (rank as usize).clamp(1, n)
}

fn var_sorted(xs: &[f64], p: f64) -> f64 {
    xs[var_rank(xs.len(), p) - 1]
}

fn es_sorted(xs: &[f64], p: f64) -> f64 {
    let n = xs.len();
    let nf = n as f64;
    let i = var_rank(n, p);
    // integral of the step quantile function over (p, 1]
    let head = (i as f64 / nf - p).max(0.0) * xs[i - 1];
    let tail: f64 = xs[i..].iter().sum::<f64>() / nf;
    ((head + tail) / (1.0 - p)).max(xs[i - 1])
}

/// Lower empirical quantile: the `ceil(n p)`-th smallest sample.
pub fn empirical_var(samples: &[f64], p: f64) -> Result<f64> {
    check(samples, p)?;
    Ok(var_sorted(&sorted(samples), p))
}

/// `(1 / (1 - p)) * integral_p^1 VaR_q dq` for the empirical distribution.
pub fn empirical_es(samples: &[f64], p: f64) -> Result<f64> {
    check(samples, p)?;
    Ok(es_sorted(&sorted(samples), p))
}

fn central_moments(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (m2, m3) = samples.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = x - mean;
        (a + d * d, b + d * d * d)
    });
    (mean, m2 / n, m3 / n)
}

/// Population skewness `m3 / m2^(3/2)`.
pub fn sample_skewness(samples: &[f64]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::invalid("skewness needs at least three samples"));
    }
    let (mean, m2, m3) = central_moments(samples);
    if m2 <= f64::EPSILON * f64::EPSILON * mean * mean || m2 == 0.0 {
        return Err(Error::UndefinedSkewness);
    }
    Ok(m3 / m2.powf(1.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalReport {
    pub mean: f64,
    pub variance: f64,
    /// `None` for (numerically) constant samples.
    pub skewness: Option<f64>,
    /// `(p, VaR_p, ES_p)` for each of [`REPORT_LEVELS`].
    pub tail: Vec<(f64, f64, f64)>,
    pub samples: usize,
    pub normalized: bool,
}

impl FunctionalReport {
    pub fn from_samples(samples: &[f64], normalized: bool) -> Result<Self> {
        check(samples, 0.5)?;
        let xs = sorted(samples);
        let (mean, variance, _) = central_moments(&xs);
        // undefined for fewer than three samples or zero spread
        let skewness = sample_skewness(samples).ok();
        let tail = REPORT_LEVELS.iter().map(|&p| (p, var_sorted(&xs, p), es_sorted(&xs, p))).collect();
        Ok(Self {
            mean,
            variance,
            skewness,
            tail,
            samples: xs.len(),
            normalized,
        })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// `(name, value)` rows in report order.
    pub fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![
            ("mean".to_string(), Some(self.mean)),
            ("variance".to_string(), Some(self.variance)),
            ("std".to_string(), Some(self.std_dev())),
            ("skewness".to_string(), self.skewness),
        ];
        for &(p, var, es) in &self.tail {
            rows.push((format!("VaR_{p}"), Some(var)));
            rows.push((format!("ES_{p}"), Some(es)));
        }
        rows
    }
}

/// Table with one row per functional and one column per labelled report.
/// Undefined values are left empty.
pub fn write_functional_table<W: Write>(out: W, columns: &[(String, FunctionalReport)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["functional".to_string()];
    header.extend(columns.iter().map(|(label, _)| label.clone()));
    w.write_record(&header)?;
    let rows: Vec<_> = columns.iter().map(|(_, r)| r.rows()).collect();
    if let Some(first) = rows.first() {
        for (i, (name, _)) in first.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(rows.iter().map(|r| r[i].1.map_or_else(String::new, |v| v.to_string())));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
