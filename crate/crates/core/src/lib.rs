#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod engine;
pub mod error;
pub mod graph;
pub mod io;
pub mod numerics;
pub mod oracle;
pub mod recovery;
pub mod sampler;
pub mod sparse;
pub mod tasks;

pub use error::{Error, Result};
