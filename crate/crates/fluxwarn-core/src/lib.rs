//! Traffic-flux forecasting and alarm toolkit.
//!
//! Predicts per-road-segment traffic flux 30 minutes ahead from 10-minute
//! flux histories with a from-scratch LSTM, classifies each prediction into
//! a three-tier per-segment alarm level, and carries the supporting
//! analyses: lagged traffic–pollution correlation, skew-normal flux
//! modeling, and confusion-matrix evaluation. A deterministic synthetic-city
//! generator stands in for proprietary sensor data so every pipeline runs
//! end to end at desk scale.
//!
//! Modules:
//! - [`data`]: CSV parsing, the time × segment flux matrix, supervised
//!   windowing, normalization, and the `fluxmatrix v1` file format.
//! - [`forecast`]: the LSTM regressor (forward, BPTT, Adam, training,
//!   prediction, gradient checking) and the `fluxmodel v1` file format.
//! - [`alarm`]: percentile thresholds, three-tier classification,
//!   skew-normal fitting, confusion matrices.
//! - [`correlation`]: Pearson coefficient, hourly lag scans, per-day
//!   correlation breakdowns.
//! - [`synthetic`]: the seeded city generator.

pub mod alarm;
pub mod correlation;
pub mod data;
pub mod forecast;
pub mod synthetic;
pub mod timefmt;

pub use alarm::{AlarmLevel, AlarmThresholds, ConfusionMatrix3, SkewNormalParams};
pub use correlation::{HourlySeries, LagScanResult};
pub use data::{FluxRecord, NormStats, SegmentId, SupervisedWindowSet, TrafficMatrix};
pub use forecast::{ForecastModel, LstmParams, LstmState, TrainConfig};
pub use synthetic::CitySpec;
