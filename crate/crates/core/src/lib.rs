#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bell;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod output;
pub mod qudit;
pub mod seed;
pub mod shaper;
pub mod spectra;
pub mod tomography;
pub mod verify;

pub use error::{Error, Result};
