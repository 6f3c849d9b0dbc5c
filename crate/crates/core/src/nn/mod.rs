//! Layer inventory and parameter bookkeeping.

mod cost;
mod layers;
mod params;

pub use cost::{CostReport, LayerCost};
pub use layers::{global_avg_pool, temporal_mean, Bottleneck, Conv2d, Fc, Init, Lstm, LstmRun};
pub use params::{Bindings, LayerType, Param, ParamRegistry, ParamRole};
