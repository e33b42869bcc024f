#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bgextract;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod scoring;
pub mod tensor;

pub use error::{Error, Result};
