//! Lipschitz surfaces in site percolation: construction, certification in
//! finite boxes, and numerical checks of the tail bounds.

pub mod bounds;
pub mod brw;
pub mod lattice;
pub mod harness;
pub mod oracle;
pub mod reach;
pub mod stats;
pub mod surface;

pub use lattice::{BoxRegion, ExplicitConfig, PercolationField, Site, SiteField, SiteState};
pub use reach::{reach, ReachResult, StepSet};
pub use surface::{Budget, LocalCoverResult, SurfacePatch};
