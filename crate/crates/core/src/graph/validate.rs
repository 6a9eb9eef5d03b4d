use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::registry::{InputType, NodeKind, OutputType, Registry};
use super::types::{MaterialGraph, NodeDef, SignalType};

/// Closed set of structural error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    TopologyViolation,
    TypeMismatch,
    UnknownSource,
    UnknownSlot,
    UnknownParam,
    BadParamValue,
    DuplicateName,
    UnboundRequiredInput,
    UnknownType,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::TopologyViolation => "TOPOLOGY_VIOLATION",
            ErrorCode::TypeMismatch => "TYPE_MISMATCH",
            ErrorCode::UnknownSource => "UNKNOWN_SOURCE",
            ErrorCode::UnknownSlot => "UNKNOWN_SLOT",
            ErrorCode::UnknownParam => "UNKNOWN_PARAM",
            ErrorCode::BadParamValue => "BAD_PARAM_VALUE",
            ErrorCode::DuplicateName => "DUPLICATE_NAME",
            ErrorCode::UnboundRequiredInput => "UNBOUND_REQUIRED_INPUT",
            ErrorCode::UnknownType => "UNKNOWN_TYPE",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub code: ErrorCode,
    /// Node name, or output channel for binding errors. Nested nodes are
    /// reported as `outer/inner`.
    pub subject: String,
    pub message: String,
    /// True when `subject` names an output binding rather than a node.
    #[serde(default)]
    pub binding: bool,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.code, self.subject, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn from_errors(errors: Vec<ValidationError>) -> Self {
        ValidationReport {
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn has(&self, code: ErrorCode) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }

    pub fn codes(&self) -> Vec<ErrorCode> {
        self.errors.iter().map(|e| e.code).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

fn err(code: ErrorCode, subject: &str, message: String) -> ValidationError {
    ValidationError {
        code,
        subject: subject.to_string(),
        message,
        binding: false,
    }
}

fn binding_err(code: ErrorCode, channel: &str, message: String) -> ValidationError {
    ValidationError {
        binding: true,
        ..err(code, channel, message)
    }
}

/// Nodes visible to a node under validation.
pub(crate) struct Scope<'a> {
    pub earlier: HashMap<&'a str, &'a NodeDef>,
    pub later: HashSet<&'a str>,
}

impl<'a> Scope<'a> {
    pub fn of_prefix(nodes: &'a [NodeDef]) -> Self {
        Scope {
            earlier: nodes.iter().map(|n| (n.name.as_str(), n)).collect(),
            later: HashSet::new(),
        }
    }

    fn source_type(&self, node: &NodeDef, slot: &str) -> Option<SignalType> {
        let c = node.connection(slot)?;
        self.earlier
            .get(c.src_node.as_str())?
            .output_types
            .get(&c.src_slot)
            .copied()
    }
}

/// Fills output types that can be inferred from the node type or its inputs.
/// Already-present entries are left alone so validation can flag conflicts.
pub(crate) fn resolve_output_types(node: &mut NodeDef, scope: &Scope<'_>, registry: &Registry) {
    let Some(spec) = registry.interface(node) else {
        return;
    };
    for out in &spec.outputs {
        if node.output_types.contains_key(&out.name) {
            continue;
        }
        let ty = match &out.ty {
            OutputType::Fixed(t) | OutputType::Declared(t) => Some(*t),
            OutputType::FromInput(slot) => scope.source_type(node, slot),
        };
        if let Some(t) = ty {
            node.output_types.insert(out.name.clone(), t);
        }
    }
}

pub(crate) fn validate_node(
    v: &NodeDef,
    scope: &Scope<'_>,
    registry: &Registry,
    errors: &mut Vec<ValidationError>,
) {
    let name = v.name.as_str();
    let prior_errors_start = errors.len();
    let Some(spec) = registry.interface(v) else {
        errors.push(err(
            ErrorCode::UnknownType,
            name,
            format!("unknown node type `{}`", v.type_name),
        ));
        return;
    };

    match (spec.kind == NodeKind::Subgraph, &v.subgraph) {
        (true, None) => errors.push(err(
            ErrorCode::UnknownType,
            name,
            "subgraph node without a nested graph".into(),
        )),
        (false, Some(_)) => errors.push(err(
            ErrorCode::UnknownType,
            name,
            format!("`{}` nodes cannot carry a nested graph", v.type_name),
        )),
        (true, Some(inner)) => {
            for mut e in validate_graph(inner, registry).errors {
                e.subject = format!("{name}/{}", e.subject);
                errors.push(e);
            }
        }
        _ => {}
    }

    for (key, value) in &v.params {
        match spec.param(key) {
            None => errors.push(err(
                ErrorCode::UnknownParam,
                name,
                format!("`{}` has no parameter `{key}`", v.type_name),
            )),
            Some(p) => {
                if let Err(msg) = p.check(value) {
                    errors.push(err(
                        ErrorCode::BadParamValue,
                        name,
                        format!("parameter `{key}`: {msg}"),
                    ));
                }
            }
        }
    }

    let mut bound = HashSet::new();
    for c in &v.connections {
        if !bound.insert(c.dst_slot.as_str()) {
            errors.push(err(
                ErrorCode::DuplicateName,
                name,
                format!("input slot `{}` bound twice", c.dst_slot),
            ));
            continue;
        }
        let Some(slot) = spec.input(&c.dst_slot) else {
            errors.push(err(
                ErrorCode::UnknownSlot,
                name,
                format!("`{}` has no input slot `{}`", v.type_name, c.dst_slot),
            ));
            continue;
        };
        let Some(src) = scope.earlier.get(c.src_node.as_str()) else {
            if c.src_node == v.name || scope.later.contains(c.src_node.as_str()) {
                errors.push(err(
                    ErrorCode::TopologyViolation,
                    name,
                    format!(
                        "input `{}` reads `{}`, which is not defined before this node",
                        c.dst_slot, c.src_node
                    ),
                ));
            } else {
                errors.push(err(
                    ErrorCode::UnknownSource,
                    name,
                    format!("input `{}` reads undefined node `{}`", c.dst_slot, c.src_node),
                ));
            }
            continue;
        };
        let Some(&src_ty) = src.output_types.get(&c.src_slot) else {
            errors.push(err(
                ErrorCode::UnknownSlot,
                name,
                format!("node `{}` has no output slot `{}`", c.src_node, c.src_slot),
            ));
            continue;
        };
        let expected = match &slot.ty {
            InputType::Fixed(t) => Some(*t),
            InputType::Any => None,
            InputType::SameAs(other) => scope.source_type(v, other),
        };
        if let Some(want) = expected {
            if want != src_ty {
                errors.push(err(
                    ErrorCode::TypeMismatch,
                    name,
                    format!(
                        "{}.{} ({src_ty}) connected to {}.{} ({want})",
                        c.src_node, c.src_slot, v.name, c.dst_slot
                    ),
                ));
            }
        }
    }
    for slot in &spec.inputs {
        if slot.required && !bound.contains(slot.name.as_str()) {
            errors.push(err(
                ErrorCode::UnboundRequiredInput,
                name,
                format!("required input `{}` is not connected", slot.name),
            ));
        }
    }

    for out in &spec.outputs {
        let stored = v.output_types.get(&out.name).copied();
        let expected = match &out.ty {
            OutputType::Fixed(t) => Some(*t),
            OutputType::FromInput(slot) => scope.source_type(v, slot),
            OutputType::Declared(_) => stored,
        };
        match (stored, expected) {
            // An unresolved input already explains a missing polymorphic type.
            (None, _) if errors.len() > prior_errors_start => {}
            (None, _) => errors.push(err(
                ErrorCode::TypeMismatch,
                name,
                format!("output `{}` has no resolved type", out.name),
            )),
            (Some(s), Some(e)) if s != e => errors.push(err(
                ErrorCode::TypeMismatch,
                name,
                format!("output `{}` declared {s} but resolves to {e}", out.name),
            )),
            _ => {}
        }
    }
    for slot in v.output_types.keys() {
        if spec.output(slot).is_none() {
            errors.push(err(
                ErrorCode::UnknownSlot,
                name,
                format!("`{}` has no output slot `{slot}`", v.type_name),
            ));
        }
    }
}

/// Lists every structural violation of `g`. Errors are data; this never fails.
pub fn validate_graph(g: &MaterialGraph, registry: &Registry) -> ValidationReport {
    let mut errors = Vec::new();
    let mut first_index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        first_index.entry(n.name.as_str()).or_insert(i);
    }

    let mut scope = Scope {
        earlier: HashMap::new(),
        later: HashSet::new(),
    };
    for (i, v) in g.nodes.iter().enumerate() {
        scope.later = g.nodes[i + 1..].iter().map(|n| n.name.as_str()).collect();
        if first_index[v.name.as_str()] != i {
            errors.push(err(
                ErrorCode::DuplicateName,
                &v.name,
                format!("node name `{}` is already defined", v.name),
            ));
        } else {
            validate_node(v, &scope, registry, &mut errors);
        }
        scope.earlier.entry(v.name.as_str()).or_insert(v);
    }

    let bindings = g
        .outputs
        .iter()
        .map(|(ch, r)| (ch.as_str().to_string(), r, Some(ch.signal_type())))
        .chain(g.extra_outputs.iter().map(|(ch, r)| (ch.clone(), r, None)));
    for (channel, r, want) in bindings {
        let Some(node) = scope.earlier.get(r.node.as_str()) else {
            errors.push(binding_err(
                ErrorCode::UnknownSource,
                &channel,
                format!("output `{channel}` binds undefined node `{}`", r.node),
            ));
            continue;
        };
        match node.output_types.get(&r.slot) {
            None => errors.push(binding_err(
                ErrorCode::UnknownSlot,
                &channel,
                format!("node `{}` has no output slot `{}`", r.node, r.slot),
            )),
            Some(&t) => {
                if let Some(want) = want {
                    if t != want {
                        errors.push(binding_err(
                            ErrorCode::TypeMismatch,
                            &channel,
                            format!("output `{channel}` requires {want}, `{r}` is {t}"),
                        ));
                    }
                }
            }
        }
    }

    ValidationReport::from_errors(errors)
}
