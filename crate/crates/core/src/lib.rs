//! Engine health monitoring from per-flight fleet measurements.
//!
//! The pipeline removes engine and environmental effects from the monitored
//! engine variables with a fixed-effect linear model, projects the residuals
//! on a self-organizing map, groups the map units into super-classes and
//! follows every engine as a trajectory over the map.

pub mod dataset;
pub mod synthgen;
pub mod glm;
pub mod diagnostics;
pub mod som;
pub mod superclass;
pub mod trajectory;
pub mod pipeline;
