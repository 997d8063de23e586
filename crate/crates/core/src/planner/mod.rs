//! The vision-centric planner network.

pub mod batch;
pub mod config;
pub mod net;
pub mod params;

pub use batch::{build_element_batch, Element, ElementKind};
pub use config::PlannerConfig;
pub use net::{plan, positional_encoding, ForwardTrace, Net};
pub use params::{ParamIndex, Parameters};
