//! Material graph domain model: node registry, graph structure, incremental
//! validation and topological depth.
//!
//! Node order in a [`MaterialGraph`] is always topological: every connection
//! reads a node defined strictly earlier. That makes every prefix of a valid
//! graph valid on its own, which is what incremental generation relies on.

mod registry;
mod types;
mod validate;

use std::collections::BTreeMap;

pub use registry::{
    registry_builtin, InputSlot, InputType, NodeKind, NodeTypeSpec, OutputSlot, OutputType,
    ParamSpec, Registry, ValueKind, GRAPH_INPUT, SUBGRAPH,
};
pub use types::{
    format_float, is_valid_name, Channel, Connection, MaterialGraph, NodeDef, OutputRef,
    ParamValue, SignalType,
};
pub use validate::{validate_graph, ErrorCode, ValidationError, ValidationReport};

use validate::{resolve_output_types, validate_node, Scope};

impl MaterialGraph {
    /// Canonicalises `v`, resolves its output types against the current
    /// nodes, validates it and appends it. `self` is untouched on failure.
    pub fn try_push(&mut self, mut v: NodeDef, registry: &Registry) -> Result<(), ValidationReport> {
        let report = self.check_candidate(&mut v, registry);
        if report.ok {
            self.nodes.push(v);
            Ok(())
        } else {
            Err(report)
        }
    }

    /// Prepares `v` for appending (defaults, connection order, output types)
    /// and reports the problems it would have as the next node.
    pub fn check_candidate(&self, v: &mut NodeDef, registry: &Registry) -> ValidationReport {
        registry.canonicalize(v);
        let scope = Scope::of_prefix(&self.nodes);
        resolve_output_types(v, &scope, registry);
        let mut errors = Vec::new();
        if scope.earlier.contains_key(v.name.as_str()) {
            errors.push(ValidationError {
                code: ErrorCode::DuplicateName,
                subject: v.name.clone(),
                message: format!("node name `{}` is already defined", v.name),
                binding: false,
            });
        }
        validate_node(v, &scope, registry, &mut errors);
        ValidationReport::from_errors(errors)
    }

    pub fn validate(&self, registry: &Registry) -> ValidationReport {
        validate_graph(self, registry)
    }
}

impl MaterialGraph {
    /// Builds a graph from nodes in document order without rejecting
    /// anything: each node is canonicalised and its output types resolved
    /// against the nodes before it. Run [`MaterialGraph::validate`] after.
    pub fn assemble(nodes: Vec<NodeDef>, registry: &Registry) -> MaterialGraph {
        let mut g = MaterialGraph::new();
        for mut v in nodes {
            registry.canonicalize(&mut v);
            resolve_output_types(&mut v, &Scope::of_prefix(&g.nodes), registry);
            g.nodes.push(v);
        }
        g
    }
}

/// Returns `g` with `v` appended, or the report for `v` alone.
pub fn append_node(
    g: &MaterialGraph,
    v: NodeDef,
    registry: &Registry,
) -> Result<MaterialGraph, ValidationReport> {
    let mut out = g.clone();
    out.try_push(v, registry)?;
    Ok(out)
}

/// Longest-path depth of every node: 0 for nodes without inputs, otherwise
/// one more than the deepest source.
pub fn topo_positions(g: &MaterialGraph) -> BTreeMap<String, usize> {
    let mut depth: BTreeMap<String, usize> = BTreeMap::new();
    for n in &g.nodes {
        let d = n
            .connections
            .iter()
            .filter_map(|c| depth.get(&c.src_node))
            .map(|d| d + 1)
            .max()
            .unwrap_or(0);
        depth.insert(n.name.clone(), d);
    }
    depth
}
