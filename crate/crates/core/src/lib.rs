//! Low-rank adaptation of a tiny decoder-only transformer for generating
//! SystemVerilog assertions from Verilog source, with SVA-aware evaluation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sva;
pub mod training;

pub use error::{Error, Result};
