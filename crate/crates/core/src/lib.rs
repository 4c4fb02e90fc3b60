#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod checkpoint;
pub mod classifier;
pub mod datasets;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod qa;
pub mod router;
pub mod text;
pub mod train;
pub mod transformer;
pub mod vqa;

pub use error::{Error, Result};
