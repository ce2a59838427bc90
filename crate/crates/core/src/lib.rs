#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod gp;
pub mod hmc;
pub mod interp;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod posterior;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
