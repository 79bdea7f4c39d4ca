#![cfg_attr(not(test), no_std)]
//! Attendance, social and spatial analyses over call-detail records.

extern crate alloc;

pub mod attendance;
pub mod geo;
pub mod logistic;
pub mod math;
pub mod model;
pub mod observe;
pub mod pipeline;
pub mod reference;
pub mod sbm;
pub mod social;
pub mod spatial;
pub mod synth;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
