//! Justification analyses and static SVG figures.

mod figures;
mod pca;
pub mod svg;

use thiserror::Error;

pub use figures::*;
pub use pca::{engine_separation_stat, pca, PcaResult};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("requested {k} components from {dim}-dimensional data")]
    Components { k: usize, dim: usize },
    #[error("missing input for figure: {0}")]
    MissingArtifact(String),
    #[error("unknown engine '{0}'")]
    UnknownEngine(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
