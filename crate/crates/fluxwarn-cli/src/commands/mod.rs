pub mod alarm;
pub mod correlate;
pub mod evaluate;
pub mod generate;
pub mod thresholds;
pub mod train;
