#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datapipe;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod optim;
pub mod params;
pub mod plot;
pub mod recipe;
pub mod stream_encoder;
pub mod tokens;

pub use error::{Error, Result};
