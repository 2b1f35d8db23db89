//! Chain-relation spectra of discrete dynamical systems.

pub mod geometry;
pub mod systems;
pub mod epsgraph;
pub mod nesting;
pub mod ordertypes;
pub mod spectrum;

pub use epsgraph::{Chain, ChainComponentSet, ConleyDiagram, RefinementSchedule};
pub use geometry::{Metric, Point};
pub use nesting::NestedFamily;
pub use ordertypes::OrderTypeTerm;
pub use spectrum::Spectrum;
pub use systems::{SampleGrid, SystemDef};
