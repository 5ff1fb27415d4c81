#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod backbones;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embed;
pub mod harness;
pub mod model;
pub mod nn;
pub mod quitepp;
