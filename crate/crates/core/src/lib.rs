//! Visual-field forecasting on the 24-2 grid.

pub mod hvf;
pub mod seed;
pub mod synth;
pub mod arch;
pub mod pipeline;
pub mod trainer;
pub mod eval;
