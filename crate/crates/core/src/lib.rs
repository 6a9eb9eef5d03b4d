//! Procedural material node graphs.
//!
//! The crate is organised as a pipeline:
//!
//! * [`graph`] — the validated DAG model, node registry and ordering rules.
//! * [`engine`] — deterministic CPU evaluation of graphs into texture maps.
//! * [`transpiler`] — the compact topological text format and the verbose XML
//!   authoring format, both directions.
//! * [`preprocess`] — dataset standardisation (flattening, pruning, filtering).
//! * [`synth`] — incremental tree-search synthesis with backtracking and repair.
//! * [`viz`] — node thumbnails and whole-graph cards.
//! * [`metrics`] — NER, masked memorisation score, KID, Gram style loss.
//! * [`corpus`] — seeded random graph generation used by tests and the CLI.

pub mod corpus;
pub mod engine;
pub mod graph;
pub mod metrics;
pub mod par;
pub mod preprocess;
pub mod synth;
pub mod transpiler;
pub mod viz;

pub use engine::{ImageBuffer, RenderCache, RenderSettings};
pub use graph::{
    registry_builtin, Channel, Connection, MaterialGraph, NodeDef, OutputRef, ParamValue, Registry,
    SignalType, ValidationReport,
};
