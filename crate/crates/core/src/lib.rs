#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod crf;
pub mod cwi;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod msb;
pub mod optim;
pub mod pipeline;
pub mod seqdata;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
