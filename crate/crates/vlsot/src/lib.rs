//! Vision-language small-object tracking: a from-scratch tracker with two
//! modality branches, contrastive alignment, a fusion transformer, and a
//! tracking head, plus the matching benchmark toolkit (dataset format,
//! small-object and relative-speed criteria, five evaluation metrics,
//! attribute reports, and a seeded synthetic-sequence generator).

pub mod bench;
pub mod boxes;
pub mod cli;
pub mod config;
pub mod error;
pub mod frame;
pub mod fusion;
pub mod gradcheck;
pub mod head;
pub mod lang;
pub mod model;
pub mod nn;
pub mod runtime;
pub mod tensor;
pub mod visual;

pub use error::{Error, Result};
