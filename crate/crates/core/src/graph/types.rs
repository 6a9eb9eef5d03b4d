use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Signal carried by a node slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalType {
    Grayscale,
    Color,
}

impl SignalType {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalType::Grayscale => "grayscale",
            SignalType::Color => "color",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grayscale" => Some(SignalType::Grayscale),
            "color" => Some(SignalType::Color),
            _ => None,
        }
    }

    /// Samples per pixel in an [`crate::ImageBuffer`] of this type.
    pub fn channels(self) -> usize {
        match self {
            SignalType::Grayscale => 1,
            SignalType::Color => 4,
        }
    }

    pub fn other(self) -> Self {
        match self {
            SignalType::Grayscale => SignalType::Color,
            SignalType::Color => SignalType::Grayscale,
        }
    }
}

impl fmt::Display for SignalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A node parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    IntTuple(Vec<i64>),
    FloatTuple(Vec<f64>),
    Enum(String),
    Bool(bool),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    /// Numeric components of scalar or tuple values.
    pub fn components(&self) -> Option<Vec<f64>> {
        match self {
            ParamValue::Int(v) => Some(vec![*v as f64]),
            ParamValue::Float(v) => Some(vec![*v]),
            ParamValue::IntTuple(v) => Some(v.iter().map(|x| *x as f64).collect()),
            ParamValue::FloatTuple(v) => Some(v.clone()),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ParamValue::Int(_) => "int",
            ParamValue::Float(_) => "float",
            ParamValue::IntTuple(_) => "int-tuple",
            ParamValue::FloatTuple(_) => "float-tuple",
            ParamValue::Enum(_) => "enum",
            ParamValue::Bool(_) => "bool",
        }
    }
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn format_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => f.write_str(&format_float(*v)),
            ParamValue::IntTuple(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            ParamValue::FloatTuple(v) => {
                let parts: Vec<String> = v.iter().map(|x| format_float(*x)).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            ParamValue::Enum(s) => f.write_str(s),
            ParamValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// The five PBR output channels, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    BaseColor,
    Normal,
    Roughness,
    Metallic,
    Height,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::BaseColor,
        Channel::Normal,
        Channel::Roughness,
        Channel::Metallic,
        Channel::Height,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::BaseColor => "basecolor",
            Channel::Normal => "normal",
            Channel::Roughness => "roughness",
            Channel::Metallic => "metallic",
            Channel::Height => "height",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Channel::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn signal_type(self) -> SignalType {
        match self {
            Channel::BaseColor | Channel::Normal => SignalType::Color,
            _ => SignalType::Grayscale,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An input binding: `dst_slot` of the owning node reads `src_node.src_slot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Connection {
    pub src_node: String,
    pub src_slot: String,
    pub dst_slot: String,
}

impl Connection {
    pub fn new(dst_slot: &str, src_node: &str, src_slot: &str) -> Self {
        Connection {
            src_node: src_node.to_string(),
            src_slot: src_slot.to_string(),
            dst_slot: dst_slot.to_string(),
        }
    }
}

/// Reference to one output slot of a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutputRef {
    pub node: String,
    pub slot: String,
}

impl OutputRef {
    pub fn new(node: &str, slot: &str) -> Self {
        OutputRef {
            node: node.to_string(),
            slot: slot.to_string(),
        }
    }
}

impl fmt::Display for OutputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.slot)
    }
}

/// One generator or filter instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDef {
    pub name: String,
    pub type_name: String,
    pub params: BTreeMap<String, ParamValue>,
    pub connections: Vec<Connection>,
    /// Resolved signal type of every output slot.
    pub output_types: BTreeMap<String, SignalType>,
    /// Nested graph, only for `subgraph` nodes.
    pub subgraph: Option<Box<MaterialGraph>>,
}

impl NodeDef {
    pub fn new(name: &str, type_name: &str) -> Self {
        NodeDef {
            name: name.to_string(),
            type_name: type_name.to_string(),
            params: BTreeMap::new(),
            connections: Vec::new(),
            output_types: BTreeMap::new(),
            subgraph: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_input(mut self, dst_slot: &str, src_node: &str, src_slot: &str) -> Self {
        self.connections
            .push(Connection::new(dst_slot, src_node, src_slot));
        self
    }

    pub fn with_output_type(mut self, slot: &str, ty: SignalType) -> Self {
        self.output_types.insert(slot.to_string(), ty);
        self
    }

    pub fn with_subgraph(mut self, g: MaterialGraph) -> Self {
        self.subgraph = Some(Box::new(g));
        self
    }

    pub fn connection(&self, dst_slot: &str) -> Option<&Connection> {
        self.connections.iter().find(|c| c.dst_slot == dst_slot)
    }

    pub fn is_subgraph(&self) -> bool {
        self.type_name == super::registry::SUBGRAPH
    }
}

/// Ordered DAG of node definitions plus output-channel bindings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialGraph {
    pub nodes: Vec<NodeDef>,
    pub outputs: BTreeMap<Channel, OutputRef>,
    /// Bindings to channels outside the five PBR maps. Only the verbose
    /// format can carry these; preprocessing drops them.
    pub extra_outputs: BTreeMap<String, OutputRef>,
}

impl MaterialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, name: &str) -> Option<&NodeDef> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn bind(&mut self, channel: Channel, node: &str, slot: &str) {
        self.outputs.insert(channel, OutputRef::new(node, slot));
    }

    /// Resolved type of `node.slot`, if both exist.
    pub fn slot_type(&self, node: &str, slot: &str) -> Option<SignalType> {
        self.node(node)?.output_types.get(slot).copied()
    }

    /// Total node count including nested subgraphs.
    pub fn deep_len(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| 1 + n.subgraph.as_ref().map_or(0, |g| g.deep_len()))
            .sum()
    }

    /// Node count after inlining subgraphs: nested graph inputs and the
    /// subgraph nodes themselves disappear.
    pub fn flat_len(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.subgraph {
                Some(g) => g.flat_len(),
                None if n.type_name == super::registry::GRAPH_INPUT => 0,
                None => 1,
            })
            .sum()
    }

    /// Visits every node, descending into subgraphs.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a NodeDef)) {
        for n in &self.nodes {
            f(n);
            if let Some(g) = &n.subgraph {
                g.walk(f);
            }
        }
    }

    /// Copy with node names rewritten by `rename`; structure is untouched.
    pub fn renamed(&self, rename: impl Fn(&str) -> String) -> MaterialGraph {
        let mut g = self.clone();
        for n in &mut g.nodes {
            n.name = rename(&n.name);
            for c in &mut n.connections {
                c.src_node = rename(&c.src_node);
            }
        }
        for r in g.outputs.values_mut() {
            r.node = rename(&r.node);
        }
        for r in g.extra_outputs.values_mut() {
            r.node = rename(&r.node);
        }
        g
    }
}

/// `[a-z][a-z0-9_]*`
pub fn is_valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}
