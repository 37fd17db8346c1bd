//! Haemodynamic post-processing: Casson viscosity, wall shear stress on
//! linear tets, TAWSS and OSI, and the rule-based rupture-risk score.
//!
//! Units: positions in mm and velocities in mm/s give gradients in 1/s;
//! viscosities are Pa·s and stresses Pa.

mod casson;
mod indices;
mod metrics;
mod risk;
mod wss;

pub use casson::{casson_viscosity, CassonParams};
pub use indices::{osi, tawss, WallField, WALL_MAGIC};
pub use metrics::{extract_metrics, percentile, systole_step, MetricOptions, PeakMode};
pub use risk::{
    aggregate_risk, assess_risk, risk_subscores, RiskBand, RiskMetrics, RiskReport, RiskSubscores, TawssRule,
    Thresholds, THRESHOLDS,
};
pub use wss::{shear_rate, strain_rate, tangential_traction, velocity_gradient, wss_vectors, Mat3, WallShear};
