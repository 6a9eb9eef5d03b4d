//! Dataset standardisation: subgraph inlining, pruning to the PBR outputs and
//! filtering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    registry_builtin, MaterialGraph, NodeDef, OutputRef, GRAPH_INPUT, SUBGRAPH,
};

pub const DEFAULT_MAX_NODES: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("NO_PBR_OUTPUTS: graph binds none of the five PBR channels")]
    NoPbrOutputs,
    #[error("STRUCTURE: {0}")]
    Structure(String),
}

/// Why a graph was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterReason {
    TooManyNodes,
    EmbeddedBitmap,
    EmbeddedSvg,
    NoPbrOutputs,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::TooManyNodes => "TOO_MANY_NODES",
            FilterReason::EmbeddedBitmap => "EMBEDDED_BITMAP",
            FilterReason::EmbeddedSvg => "EMBEDDED_SVG",
            FilterReason::NoPbrOutputs => "NO_PBR_OUTPUTS",
        }
    }
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reasons: Vec<FilterReason>,
}

impl FilterVerdict {
    fn from_reasons(mut reasons: Vec<FilterReason>) -> Self {
        reasons.sort();
        reasons.dedup();
        FilterVerdict {
            accepted: reasons.is_empty(),
            reasons,
        }
    }

    /// `accepted` or a comma-separated reason list.
    pub fn summary(&self) -> String {
        if self.accepted {
            "accepted".into()
        } else {
            let r: Vec<&str> = self.reasons.iter().map(|r| r.as_str()).collect();
            format!("rejected {}", r.join(","))
        }
    }
}

/// Keeps only nodes that feed one of the five PBR bindings.
pub fn prune_to_outputs(g: &MaterialGraph) -> Result<MaterialGraph, PreprocessError> {
    if g.outputs.is_empty() {
        return Err(PreprocessError::NoPbrOutputs);
    }
    let index: HashMap<&str, &NodeDef> = g.nodes.iter().map(|n| (n.name.as_str(), n)).collect();
    let mut keep: HashSet<&str> = HashSet::new();
    let mut stack: Vec<&str> = g.outputs.values().map(|r| r.node.as_str()).collect();
    while let Some(name) = stack.pop() {
        if !keep.insert(name) {
            continue;
        }
        if let Some(n) = index.get(name) {
            stack.extend(n.connections.iter().map(|c| c.src_node.as_str()));
        }
    }
    Ok(MaterialGraph {
        nodes: g
            .nodes
            .iter()
            .filter(|n| keep.contains(n.name.as_str()))
            .cloned()
            .collect(),
        outputs: g.outputs.clone(),
        extra_outputs: BTreeMap::new(),
    })
}

/// Inlines every subgraph node, recursively.
pub fn flatten(g: &MaterialGraph) -> Result<MaterialGraph, PreprocessError> {
    let mut out = MaterialGraph::new();
    // (subgraph node, channel slot) -> inlined source
    let mut redirect: HashMap<(String, String), OutputRef> = HashMap::new();
    let mut inlined: HashSet<String> = HashSet::new();
    let resolve = |redirect: &HashMap<(String, String), OutputRef>, node: &str, slot: &str| {
        redirect
            .get(&(node.to_string(), slot.to_string()))
            .cloned()
            .unwrap_or_else(|| OutputRef::new(node, slot))
    };

    for n in &g.nodes {
        let mut n = n.clone();
        for c in &mut n.connections {
            let r = resolve(&redirect, &c.src_node, &c.src_slot);
            c.src_node = r.node;
            c.src_slot = r.slot;
        }
        if n.type_name != SUBGRAPH {
            out.nodes.push(n);
            continue;
        }
        let inner = n.subgraph.as_deref().ok_or_else(|| {
            PreprocessError::Structure(format!("subgraph node `{}` has no nested graph", n.name))
        })?;
        let inner = flatten(inner)?;
        let prefix = format!("{}__", n.name);
        inlined.insert(n.name.clone());

        // graph_input name -> outer source
        let mut feeds: HashMap<String, OutputRef> = HashMap::new();
        for gi in inner.nodes.iter().filter(|x| x.type_name == GRAPH_INPUT) {
            let c = n.connection(&gi.name).ok_or_else(|| {
                PreprocessError::Structure(format!(
                    "subgraph `{}` input slot `{}` is not connected",
                    n.name, gi.name
                ))
            })?;
            feeds.insert(gi.name.clone(), OutputRef::new(&c.src_node, &c.src_slot));
        }
        let map = |node: &str, slot: &str| -> OutputRef {
            match feeds.get(node) {
                Some(r) => r.clone(),
                None => OutputRef::new(&format!("{prefix}{node}"), slot),
            }
        };
        for x in &inner.nodes {
            if x.type_name == GRAPH_INPUT {
                continue;
            }
            let mut x = x.clone();
            x.name = format!("{prefix}{}", x.name);
            for c in &mut x.connections {
                let r = map(&c.src_node, &c.src_slot);
                c.src_node = r.node;
                c.src_slot = r.slot;
            }
            if out.node(&x.name).is_some() || g.node(&x.name).is_some() {
                return Err(PreprocessError::Structure(format!(
                    "inlined name `{}` collides with an existing node",
                    x.name
                )));
            }
            out.nodes.push(x);
        }
        for (ch, r) in &inner.outputs {
            redirect.insert(
                (n.name.clone(), ch.as_str().to_string()),
                map(&r.node, &r.slot),
            );
        }
    }

    for (ch, r) in &g.outputs {
        out.outputs.insert(*ch, resolve(&redirect, &r.node, &r.slot));
    }
    for (name, r) in &g.extra_outputs {
        out.extra_outputs
            .insert(name.clone(), resolve(&redirect, &r.node, &r.slot));
    }
    for r in out.outputs.values().chain(out.extra_outputs.values()) {
        if inlined.contains(&r.node) {
            return Err(PreprocessError::Structure(format!(
                "binding reads unbound subgraph slot `{r}`"
            )));
        }
    }
    for n in &out.nodes {
        for c in &n.connections {
            if inlined.contains(&c.src_node) {
                return Err(PreprocessError::Structure(format!(
                    "`{}.{}` reads `{}.{}`, which the subgraph does not bind",
                    n.name, c.dst_slot, c.src_node, c.src_slot
                )));
            }
        }
    }
    Ok(out)
}

/// Checks the dataset admission rules. Counts are taken after inlining.
pub fn apply_filters(g: &MaterialGraph, max_nodes: usize) -> FilterVerdict {
    let mut reasons = Vec::new();
    if g.flat_len() > max_nodes {
        reasons.push(FilterReason::TooManyNodes);
    }
    g.walk(&mut |n| match n.type_name.as_str() {
        "bitmap" => reasons.push(FilterReason::EmbeddedBitmap),
        "svg" => reasons.push(FilterReason::EmbeddedSvg),
        _ => {}
    });
    if g.outputs.is_empty() {
        reasons.push(FilterReason::NoPbrOutputs);
    }
    FilterVerdict::from_reasons(reasons)
}

/// Result of [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub enum Standardized {
    Accepted(MaterialGraph),
    Rejected(FilterVerdict),
}

impl Standardized {
    pub fn verdict(&self) -> FilterVerdict {
        match self {
            Standardized::Accepted(_) => FilterVerdict::from_reasons(vec![]),
            Standardized::Rejected(v) => v.clone(),
        }
    }

    pub fn graph(&self) -> Option<&MaterialGraph> {
        match self {
            Standardized::Accepted(g) => Some(g),
            Standardized::Rejected(_) => None,
        }
    }
}

/// flatten, prune, filter. Structural problems in the input are errors;
/// filter failures are data.
pub fn standardize(g: &MaterialGraph, max_nodes: usize) -> Result<Standardized, PreprocessError> {
    let flat = flatten(g)?;
    let report = flat.validate(registry_builtin());
    if !report.ok {
        return Err(PreprocessError::Structure(report.to_string()));
    }
    let pruned = match prune_to_outputs(&flat) {
        Ok(p) => p,
        Err(PreprocessError::NoPbrOutputs) => {
            let mut v = apply_filters(&flat, max_nodes);
            if !v.reasons.contains(&FilterReason::NoPbrOutputs) {
                v = FilterVerdict::from_reasons(
                    v.reasons.into_iter().chain([FilterReason::NoPbrOutputs]).collect(),
                );
            }
            return Ok(Standardized::Rejected(v));
        }
        Err(e) => return Err(e),
    };
    let v = apply_filters(&pruned, max_nodes);
    Ok(if v.accepted {
        Standardized::Accepted(pruned)
    } else {
        Standardized::Rejected(v)
    })
}
