use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scoring of the time-averaged wall shear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TawssRule {
    /// `<= 1.5` or `>= 6.7` Pa scores 1.
    #[default]
    Symmetric,
    /// `< 1.5` Pa scores 1, `> 6.7` Pa scores 2.
    Escalating,
}

/// Inputs of the risk score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskMetrics {
    /// Mean TAWSS over the bulge wall, Pa.
    pub tawss_mean: f64,
    /// Peak wall shear magnitude, Pa.
    pub peak_wss: f64,
    pub osi_max: f64,
    /// Bulge speed at systole, mm/s.
    pub systolic_velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSubscores {
    pub tawss: u8,
    pub peak_wss: u8,
    pub osi: u8,
    pub velocity: u8,
}

impl RiskSubscores {
    pub fn new(tawss: u8, peak_wss: u8, osi: u8, velocity: u8) -> Result<Self> {
        let s = RiskSubscores { tawss, peak_wss, osi, velocity };
        if s.as_array().iter().any(|&v| v > 2) {
            return Err(Error::InvalidArgument(format!("sub-scores {:?} must lie in 0..=2", s.as_array())));
        }
        Ok(s)
    }

    pub fn as_array(&self) -> [u8; 4] {
        [self.tawss, self.peak_wss, self.osi, self.velocity]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskBand {
    Low,
    Moderate,
    High,
}

impl RiskBand {
    /// Low below 1, Moderate in `[1, 2)`, High from 2.
    pub fn classify(score: f64) -> Self {
        if score >= 2.0 {
            RiskBand::High
        } else if score >= 1.0 {
            RiskBand::Moderate
        } else {
            RiskBand::Low
        }
    }
}

/// Band limits applied to each metric, for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tawss_low: f64,
    pub tawss_high: f64,
    pub peak_wss: [f64; 2],
    pub osi: [f64; 2],
    pub velocity_low: f64,
    pub velocity: [f64; 2],
}

pub const THRESHOLDS: Thresholds = Thresholds {
    tawss_low: 1.5,
    tawss_high: 6.7,
    peak_wss: [4.0, 6.0],
    osi: [0.15, 0.3],
    velocity_low: 20.0,
    velocity: [50.0, 80.0],
};

fn tiered(value: f64, [one, two]: [f64; 2]) -> u8 {
    if value >= two {
        2
    } else if value >= one {
        1
    } else {
        0
    }
}

pub fn risk_subscores(metrics: &RiskMetrics, rule: TawssRule) -> Result<RiskSubscores> {
    let m = metrics;
    let values = [m.tawss_mean, m.peak_wss, m.osi_max, m.systolic_velocity];
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("risk metrics {values:?} must be finite and non-negative")));
    }
    let th = &THRESHOLDS;
    let tawss = match rule {
        TawssRule::Symmetric => u8::from(m.tawss_mean <= th.tawss_low || m.tawss_mean >= th.tawss_high),
        TawssRule::Escalating if m.tawss_mean < th.tawss_low => 1,
        TawssRule::Escalating if m.tawss_mean > th.tawss_high => 2,
        TawssRule::Escalating => 0,
    };
    let velocity = match tiered(m.systolic_velocity, th.velocity) {
        0 if m.systolic_velocity <= th.velocity_low => 1,
        s => s,
    };
    RiskSubscores::new(tawss, tiered(m.peak_wss, th.peak_wss), tiered(m.osi_max, th.osi), velocity)
}

/// Average of the four sub-scores and its band.
pub fn aggregate_risk(subscores: &RiskSubscores) -> (f64, RiskBand) {
    let score = subscores.as_array().iter().map(|&s| s as f64).sum::<f64>() / 4.0;
    (score, RiskBand::classify(score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub metrics: RiskMetrics,
    pub subscores: RiskSubscores,
    pub score: f64,
    pub band: RiskBand,
    pub tawss_rule: TawssRule,
    pub thresholds: Thresholds,
}

pub fn assess_risk(metrics: &RiskMetrics, rule: TawssRule) -> Result<RiskReport> {
    let subscores = risk_subscores(metrics, rule)?;
    let (score, band) = aggregate_risk(&subscores);
    Ok(RiskReport { metrics: *metrics, subscores, score, band, tawss_rule: rule, thresholds: THRESHOLDS })
}
