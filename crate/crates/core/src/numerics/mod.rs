//! Reference numerics for 4-bit quantile quantization and the adaptive-moment
//! optimizer with warmup/linear-decay learning rate.

mod minimize;
mod optimizer;
mod quantile;
mod schedule;

pub use minimize::{minimize, Constant, Objective, Quadratic, Trajectory, TrajectoryPoint};
pub use optimizer::{optimizer_step, AdamConfig, MomentumRule, OptimizerState};
pub use quantile::{
    build_quantile_map, dequantize_block, inverse_normal_cdf, quantize_block, raw_quantile_bins, QuantileMap,
    QuantizedBlock,
};
pub use schedule::{lr_at, LrSchedule};
