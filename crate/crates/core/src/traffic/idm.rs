//! Intelligent Driver Model car-following law.

use crate::error::{Error, Result};

/// Length of every vehicle body, in m.
pub const VEHICLE_LENGTH: f64 = 5.0;
/// Hard lower bound on the acceleration returned by the car-following law, in m/s².
pub const EMERGENCY_DECEL: f64 = 9.0;

/// A fleet's driving characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingConfig {
    /// Maximal (desired) speed, m/s.
    pub v_max: f64,
    /// Maximal acceleration, m/s².
    pub a_max: f64,
    /// Time headway, s.
    pub headway: f64,
    /// Comfortable deceleration, m/s².
    pub comfortable_decel: f64,
    /// Minimum standstill gap, m.
    pub min_gap: f64,
    /// Acceleration exponent.
    pub exponent: f64,
}

impl DrivingConfig {
    pub const DEFAULT_COMFORTABLE_DECEL: f64 = 1.5;
    pub const DEFAULT_MIN_GAP: f64 = 2.0;
    pub const DEFAULT_EXPONENT: f64 = 4.0;

    pub fn new(v_max: f64, a_max: f64, headway: f64) -> Result<Self> {
        let cfg = Self {
            v_max,
            a_max,
            headway,
            comfortable_decel: Self::DEFAULT_COMFORTABLE_DECEL,
            min_gap: Self::DEFAULT_MIN_GAP,
            exponent: Self::DEFAULT_EXPONENT,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Non-fleet traffic: urban speed limit, sluggish acceleration, 1 s headway.
    pub fn background() -> Self {
        Self::new(13.9, 0.8, 1.0).expect("valid constants")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("v_max", self.v_max)?;
        positive("a_max", self.a_max)?;
        positive("headway", self.headway)?;
        positive("comfortable deceleration", self.comfortable_decel)?;
        positive("exponent", self.exponent)?;
        if !(self.min_gap.is_finite() && self.min_gap >= 0.0) {
            return Err(Error::invalid(format!("min_gap must be non-negative, got {}", self.min_gap)));
        }
        Ok(())
    }
}

/// The six named fleet configurations `(v_max, a_max, headway)`.
/// Digits grow in aggressiveness; `a` is sluggish, `b` brisk acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DrivingPreset {
    Xi1a,
    Xi2a,
    Xi3a,
    Xi1b,
    Xi2b,
    Xi3b,
}

impl DrivingPreset {
    pub const ALL: [DrivingPreset; 6] = [
        DrivingPreset::Xi1a,
        DrivingPreset::Xi2a,
        DrivingPreset::Xi3a,
        DrivingPreset::Xi1b,
        DrivingPreset::Xi2b,
        DrivingPreset::Xi3b,
    ];

    pub fn config(self) -> DrivingConfig {
        let (v, a, h) = match self {
            DrivingPreset::Xi1a => (5.0, 0.8, 3.0),
            DrivingPreset::Xi2a => (10.0, 0.8, 2.0),
            DrivingPreset::Xi3a => (15.0, 0.8, 1.0),
            DrivingPreset::Xi1b => (5.0, 2.6, 3.0),
            DrivingPreset::Xi2b => (10.0, 2.6, 2.0),
            DrivingPreset::Xi3b => (15.0, 2.6, 1.0),
        };
        DrivingConfig::new(v, a, h).expect("valid constants")
    }

    pub fn name(self) -> &'static str {
        match self {
            DrivingPreset::Xi1a => "xi1a",
            DrivingPreset::Xi2a => "xi2a",
            DrivingPreset::Xi3a => "xi3a",
            DrivingPreset::Xi1b => "xi1b",
            DrivingPreset::Xi2b => "xi2b",
            DrivingPreset::Xi3b => "xi3b",
        }
    }
}

impl std::str::FromStr for DrivingPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown driving preset `{s}`")))
    }
}

/// The vehicle (or stop line) ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub speed: f64,
    /// Bumper-to-bumper distance, m.
    pub gap: f64,
}

/// IDM acceleration towards `cfg.v_max`.
pub fn idm_acceleration(v: f64, leader: Option<Leader>, cfg: &DrivingConfig) -> Result<f64> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(format!("speed must be finite and non-negative, got {v}")));
    }
    if let Some(l) = leader {
        if !l.speed.is_finite() || !l.gap.is_finite() {
            return Err(Error::invalid("leader speed and gap must be finite"));
        }
        if l.gap <= 0.0 {
            return Err(Error::invalid(format!("gap must be positive, got {}", l.gap)));
        }
    }
    Ok(idm_with_desired_speed(v, cfg.v_max, leader, cfg))
}

/// IDM with an explicit desired speed (the simulator caps `v_max` by the speed limit).
/// Assumes validated inputs; gaps are floored at a millimetre.
pub(crate) fn idm_with_desired_speed(v: f64, desired: f64, leader: Option<Leader>, cfg: &DrivingConfig) -> f64 {
    let free = 1.0 - (v / desired).powf(cfg.exponent);
    let interaction = match leader {
        Some(l) => {
            let s_star = cfg.min_gap
                + v * cfg.headway
                + v * (v - l.speed) / (2.0 * (cfg.a_max * cfg.comfortable_decel).sqrt());
            let s_star = s_star.max(cfg.min_gap);
            (s_star / l.gap.max(1e-3)).powi(2)
        }
        None => 0.0,
    };
    (cfg.a_max * (free - interaction)).max(-EMERGENCY_DECEL)
}
