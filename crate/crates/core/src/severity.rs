//! Conditional loss distributions given the speed `psi` of the vehicle involved.
//!
//! Both families have mean `psi^2` and standard deviation `cv * psi^2`; a
//! stopped vehicle (`psi = 0`) causes no loss.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeverityFamily {
    Gamma { cv: f64 },
    LogNormal { cv: f64 },
    DiracZero,
}

impl SeverityFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SeverityFamily::Gamma { .. } => "gamma",
            SeverityFamily::LogNormal { .. } => "lognormal",
            SeverityFamily::DiracZero => "dirac0",
        }
    }

    pub fn cv(&self) -> Option<f64> {
        match *self {
            SeverityFamily::Gamma { cv } | SeverityFamily::LogNormal { cv } => Some(cv),
            SeverityFamily::DiracZero => None,
        }
    }

    /// `E[X^j | psi]` for `j` in 1..=3.
    pub fn raw_moment(&self, psi: f64, j: u32) -> f64 {
        let m = psi * psi;
        match *self {
            SeverityFamily::DiracZero => 0.0,
            SeverityFamily::Gamma { cv } => {
                let c2 = cv * cv;
                (0..j).map(|i| 1.0 + i as f64 * c2).product::<f64>() * m.powi(j as i32)
            }
            SeverityFamily::LogNormal { cv } => {
                let jj = j as i32;
                m.powi(jj) * (1.0 + cv * cv).powi(jj * (jj - 1) / 2)
            }
        }
    }
}

/// Concrete parameters of `F^psi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossLaw {
    /// Shape and rate.
    Gamma { shape: f64, rate: f64 },
    /// Location and squared scale of `ln X`.
    LogNormal { location: f64, scale_sq: f64 },
    DiracZero,
}

fn check_cv(cv: f64) -> Result<()> {
    if cv.is_finite() && cv > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("coefficient of variation must be positive, got {cv}")))
    }
}

fn check_psi(psi: f64) -> Result<()> {
    if psi.is_finite() && psi >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("speed must be finite and non-negative, got {psi}")))
    }
}

pub fn gamma_params(psi: f64, cv: f64) -> Result<LossLaw> {
    check_cv(cv)?;
    check_psi(psi)?;
    if psi == 0.0 {
        return Ok(LossLaw::DiracZero);
    }
    let c2 = cv * cv;
    Ok(LossLaw::Gamma { shape: 1.0 / c2, rate: 1.0 / (c2 * psi * psi) })
}

pub fn lognormal_params(psi: f64, cv: f64) -> Result<LossLaw> {
    check_cv(cv)?;
    check_psi(psi)?;
    if psi == 0.0 {
        return Ok(LossLaw::DiracZero);
    }
    let c2 = cv * cv;
    Ok(LossLaw::LogNormal {
        location: (psi * psi / (1.0 + c2).sqrt()).ln(),
        scale_sq: c2.ln_1p(),
    })
}

pub fn loss_law(family: &SeverityFamily, psi: f64) -> Result<LossLaw> {
    match *family {
        SeverityFamily::Gamma { cv } => gamma_params(psi, cv),
        SeverityFamily::LogNormal { cv } => lognormal_params(psi, cv),
        SeverityFamily::DiracZero => {
            check_psi(psi)?;
            Ok(LossLaw::DiracZero)
        }
    }
}

/// One draw from `F^psi`. Builds the distribution on every call; use
/// [`LossSampler`] in loops.
pub fn sample_loss<R: Rng + ?Sized>(family: &SeverityFamily, psi: f64, rng: &mut R) -> Result<f64> {
    Ok(LossSampler::new(family)?.sample(psi, rng))
}

/// Sampler with the `psi`-independent part of the family prepared once.
///
/// Gamma draws are `cv^2 psi^2 G` with `G ~ Gamma(1/cv^2, 1)`; log-normal draws
/// are `exp(location(psi) + scale Z)`.
#[derive(Debug, Clone)]
pub struct LossSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Gamma { unit: Gamma<f64>, c2: f64 },
    LogNormal { scale: f64, shift: f64 },
    Zero,
}

impl LossSampler {
    pub fn new(family: &SeverityFamily) -> Result<Self> {
        let kind = match *family {
            SeverityFamily::Gamma { cv } => {
                check_cv(cv)?;
                let c2 = cv * cv;
                let unit = Gamma::new(1.0 / c2, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
                SamplerKind::Gamma { unit, c2 }
            }
            SeverityFamily::LogNormal { cv } => {
                check_cv(cv)?;
                let s2 = (cv * cv).ln_1p();
                SamplerKind::LogNormal { scale: s2.sqrt(), shift: -0.5 * s2 }
            }
            SeverityFamily::DiracZero => SamplerKind::Zero,
        };
        Ok(Self { kind })
    }

    /// Draws a loss for speed `psi`; non-positive `psi` gives 0.
    pub fn sample<R: Rng + ?Sized>(&self, psi: f64, rng: &mut R) -> f64 {
        if !(psi > 0.0) {
            return 0.0;
        }
        let m = psi * psi;
        match &self.kind {
            SamplerKind::Zero => 0.0,
            SamplerKind::Gamma { unit, c2 } => c2 * m * unit.sample(rng),
            SamplerKind::LogNormal { scale, shift } => {
                let z: f64 = rng.sample(StandardNormal);
                m * (shift + scale * z).exp()
            }
        }
    }
}
