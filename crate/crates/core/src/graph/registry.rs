use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::types::{NodeDef, ParamValue, SignalType};

pub const SUBGRAPH: &str = "subgraph";
pub const GRAPH_INPUT: &str = "graph_input";

/// Expected signal of an input slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputType {
    Fixed(SignalType),
    /// Accepts either signal.
    Any,
    /// Must match whatever is bound to the named sibling slot.
    SameAs(String),
}

/// How an output slot's signal is determined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputType {
    Fixed(SignalType),
    /// Follows the signal bound to the named input slot.
    FromInput(String),
    /// Chosen per node instance; the payload is the default.
    Declared(SignalType),
}

impl OutputType {
    pub fn is_polymorphic(&self) -> bool {
        !matches!(self, OutputType::Fixed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSlot {
    pub name: String,
    pub ty: InputType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputSlot {
    pub name: String,
    pub ty: OutputType,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueKind {
    Int,
    Float,
    IntTuple(usize),
    FloatTuple(usize),
    Enum(Vec<&'static str>),
    Bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ValueKind,
    pub default: ParamValue,
    /// Inclusive numeric bounds applied to every component.
    pub range: Option<(f64, f64)>,
    /// Smoothly varying; candidates for parameter optimisation.
    pub continuous: bool,
}

impl ParamSpec {
    /// Checks `value` against kind, arity, enum set and range.
    pub fn check(&self, value: &ParamValue) -> Result<(), String> {
        let arity_ok = |n: usize, want: usize| {
            if n == want {
                Ok(())
            } else {
                Err(format!("expected {want} components, got {n}"))
            }
        };
        match (&self.kind, value) {
            (ValueKind::Int, ParamValue::Int(_)) | (ValueKind::Float, ParamValue::Float(_)) => {}
            (ValueKind::IntTuple(n), ParamValue::IntTuple(v)) => arity_ok(v.len(), *n)?,
            (ValueKind::FloatTuple(n), ParamValue::FloatTuple(v)) => arity_ok(v.len(), *n)?,
            (ValueKind::Bool, ParamValue::Bool(_)) => {}
            (ValueKind::Enum(set), ParamValue::Enum(s)) => {
                if !set.contains(&s.as_str()) {
                    return Err(format!("`{s}` is not one of {}", set.join("|")));
                }
            }
            (kind, v) => {
                return Err(format!("expected {kind:?} value, got {}", v.kind_name()));
            }
        }
        if let (Some((lo, hi)), Some(comps)) = (self.range, value.components()) {
            for c in comps {
                if !c.is_finite() || c < lo || c > hi {
                    return Err(format!("{c} outside [{lo}, {hi}]"));
                }
            }
        }
        Ok(())
    }

    /// Converts a loosely typed value (as parsed) into this parameter's kind
    /// when that is lossless; otherwise returns it unchanged.
    pub fn coerce(&self, value: ParamValue) -> ParamValue {
        match (&self.kind, value) {
            (ValueKind::Float, ParamValue::Int(i)) => ParamValue::Float(i as f64),
            (ValueKind::FloatTuple(_), ParamValue::IntTuple(v)) => {
                ParamValue::FloatTuple(v.into_iter().map(|x| x as f64).collect())
            }
            (_, v) => v,
        }
    }
}

/// Role of a node type, beyond its slot signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Has a local kernel.
    Evaluable,
    /// Function graphs and pixel processors: validate, never evaluate.
    Reserved,
    /// Library node kept as an external reference; no local kernel.
    External,
    /// Embedded bitmap or vector resource.
    Resource,
    /// Placeholder for an input exposed by a nested graph.
    GraphInput,
    Subgraph,
}

/// Registry entry for a node type.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTypeSpec {
    pub type_name: &'static str,
    pub inputs: Vec<InputSlot>,
    pub outputs: Vec<OutputSlot>,
    pub params: Vec<ParamSpec>,
    pub is_generator: bool,
    pub kind: NodeKind,
}

impl NodeTypeSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn input(&self, name: &str) -> Option<&InputSlot> {
        self.inputs.iter().find(|s| s.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&OutputSlot> {
        self.outputs.iter().find(|s| s.name == name)
    }

    pub fn is_external(&self) -> bool {
        self.kind == NodeKind::External
    }

    pub fn has_polymorphic_output(&self) -> bool {
        self.outputs.iter().any(|o| o.ty.is_polymorphic())
    }
}

/// Map from type name to [`NodeTypeSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    types: BTreeMap<&'static str, NodeTypeSpec>,
}

impl Registry {
    pub fn get(&self, type_name: &str) -> Option<&NodeTypeSpec> {
        self.types.get(type_name)
    }

    pub fn contains(&self, type_name: &str) -> bool {
        self.types.contains_key(type_name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeTypeSpec> {
        self.types.values()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Type names with a local kernel, in sorted order.
    pub fn evaluable(&self) -> impl Iterator<Item = &NodeTypeSpec> {
        self.types
            .values()
            .filter(|t| t.kind == NodeKind::Evaluable)
    }

    /// Slot signature of a node instance. Subgraph nodes derive theirs from
    /// the nested graph: one input per `graph_input` node and one output per
    /// bound channel.
    pub fn interface<'a>(&'a self, node: &NodeDef) -> Option<Cow<'a, NodeTypeSpec>> {
        let spec = self.get(&node.type_name)?;
        if spec.kind != NodeKind::Subgraph {
            return Some(Cow::Borrowed(spec));
        }
        let mut spec = spec.clone();
        if let Some(inner) = &node.subgraph {
            spec.inputs = inner
                .nodes
                .iter()
                .filter(|n| n.type_name == GRAPH_INPUT)
                .map(|n| InputSlot {
                    name: n.name.clone(),
                    ty: InputType::Fixed(
                        n.output_types
                            .get("output")
                            .copied()
                            .unwrap_or(SignalType::Grayscale),
                    ),
                    required: true,
                })
                .collect();
            spec.outputs = inner
                .outputs
                .keys()
                .map(|ch| OutputSlot {
                    name: ch.as_str().to_string(),
                    ty: OutputType::Fixed(ch.signal_type()),
                })
                .collect();
        }
        Some(Cow::Owned(spec))
    }

    /// Fills omitted parameters with defaults, converts numeric literals to
    /// the declared kind, and orders connections by slot declaration.
    pub fn canonicalize(&self, node: &mut NodeDef) {
        let Some(spec) = self.interface(node) else {
            return;
        };
        for p in &spec.params {
            match node.params.remove(p.name) {
                Some(v) => {
                    node.params.insert(p.name.to_string(), p.coerce(v));
                }
                None => {
                    node.params.insert(p.name.to_string(), p.default.clone());
                }
            }
        }
        let rank = |slot: &str| {
            spec.inputs
                .iter()
                .position(|s| s.name == slot)
                .unwrap_or(usize::MAX)
        };
        node.connections
            .sort_by(|a, b| (rank(&a.dst_slot), &a.dst_slot).cmp(&(rank(&b.dst_slot), &b.dst_slot)));
    }
}

/// The built-in registry. Stable across calls.
pub fn registry_builtin() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(build)
}

fn input(name: &str, ty: InputType, required: bool) -> InputSlot {
    InputSlot {
        name: name.to_string(),
        ty,
        required,
    }
}

fn output(name: &str, ty: OutputType) -> OutputSlot {
    OutputSlot {
        name: name.to_string(),
        ty,
    }
}

fn gray_in() -> InputSlot {
    input("input", InputType::Fixed(SignalType::Grayscale), true)
}

fn any_in() -> InputSlot {
    input("input", InputType::Any, true)
}

fn out_fixed(t: SignalType) -> Vec<OutputSlot> {
    vec![output("output", OutputType::Fixed(t))]
}

fn out_follow() -> Vec<OutputSlot> {
    vec![output("output", OutputType::FromInput("input".into()))]
}

fn p_int(name: &'static str, default: i64, lo: i64, hi: i64) -> ParamSpec {
    ParamSpec {
        name,
        kind: ValueKind::Int,
        default: ParamValue::Int(default),
        range: Some((lo as f64, hi as f64)),
        continuous: false,
    }
}

fn p_float(name: &'static str, default: f64, lo: f64, hi: f64) -> ParamSpec {
    ParamSpec {
        name,
        kind: ValueKind::Float,
        default: ParamValue::Float(default),
        range: Some((lo, hi)),
        continuous: true,
    }
}

fn p_floats(name: &'static str, default: &[f64], lo: f64, hi: f64) -> ParamSpec {
    ParamSpec {
        name,
        kind: ValueKind::FloatTuple(default.len()),
        default: ParamValue::FloatTuple(default.to_vec()),
        range: Some((lo, hi)),
        continuous: true,
    }
}

fn p_ints(name: &'static str, default: &[i64], lo: i64, hi: i64) -> ParamSpec {
    ParamSpec {
        name,
        kind: ValueKind::IntTuple(default.len()),
        default: ParamValue::IntTuple(default.to_vec()),
        range: Some((lo as f64, hi as f64)),
        continuous: false,
    }
}

fn p_enum(name: &'static str, set: &[&'static str]) -> ParamSpec {
    ParamSpec {
        name,
        kind: ValueKind::Enum(set.to_vec()),
        default: ParamValue::Enum(set[0].to_string()),
        range: None,
        continuous: false,
    }
}

fn p_bool(name: &'static str, default: bool) -> ParamSpec {
    ParamSpec {
        name,
        kind: ValueKind::Bool,
        default: ParamValue::Bool(default),
        range: None,
        continuous: false,
    }
}

fn build() -> Registry {
    use SignalType::{Color, Grayscale};
    let gen = |type_name, outputs, params, kind| NodeTypeSpec {
        type_name,
        inputs: Vec::new(),
        outputs,
        params,
        is_generator: true,
        kind,
    };
    let filter = |type_name, inputs, outputs, params, kind| NodeTypeSpec {
        type_name,
        inputs,
        outputs,
        params,
        is_generator: false,
        kind,
    };
    let ev = NodeKind::Evaluable;

    let specs = vec![
        // generators
        gen(
            "uniform_color",
            vec![output("output", OutputType::Declared(Color))],
            vec![
                p_floats("value", &[0.5, 0.5, 0.5, 1.0], 0.0, 1.0),
                p_float("luminance", 0.5, 0.0, 1.0),
            ],
            ev,
        ),
        gen(
            "perlin_noise",
            out_fixed(Grayscale),
            vec![p_int("scale", 4, 1, 64), p_int("seed", 0, 0, 9999)],
            ev,
        ),
        gen(
            "fbm_noise",
            out_fixed(Grayscale),
            vec![
                p_int("scale", 4, 1, 32),
                p_int("octaves", 4, 1, 8),
                p_float("persistence", 0.5, 0.0, 1.0),
                p_int("seed", 0, 0, 9999),
            ],
            ev,
        ),
        gen(
            "checker",
            out_fixed(Grayscale),
            vec![
                p_int("tiles", 4, 1, 64),
                p_float("low", 0.0, 0.0, 1.0),
                p_float("high", 1.0, 0.0, 1.0),
            ],
            ev,
        ),
        gen(
            "gradient_linear",
            out_fixed(Grayscale),
            vec![
                p_enum("direction", &["horizontal", "vertical"]),
                p_int("repeat", 1, 1, 16),
            ],
            ev,
        ),
        gen(
            "brick",
            out_fixed(Grayscale),
            vec![
                p_int("columns", 4, 1, 32),
                p_int("row_pairs", 4, 1, 16),
                p_float("mortar", 0.05, 0.0, 0.45),
                p_float("offset", 0.5, 0.0, 1.0),
            ],
            ev,
        ),
        gen(
            "polygon_shape",
            out_fixed(Grayscale),
            vec![
                p_int("sides", 6, 3, 12),
                p_float("radius", 0.35, 0.01, 0.5),
                p_float("smoothness", 0.02, 0.0, 0.25),
                p_float("rotation", 0.0, 0.0, 1.0),
            ],
            ev,
        ),
        // filters
        filter(
            "blend",
            vec![
                input("foreground", InputType::SameAs("background".into()), true),
                input("background", InputType::Any, true),
                input("mask", InputType::Fixed(Grayscale), false),
            ],
            vec![output("output", OutputType::FromInput("background".into()))],
            vec![
                p_enum(
                    "mode",
                    &["copy", "add", "subtract", "multiply", "screen", "max", "min"],
                ),
                p_float("opacity", 1.0, 0.0, 1.0),
            ],
            ev,
        ),
        filter(
            "levels",
            vec![any_in()],
            out_follow(),
            vec![
                p_float("in_low", 0.0, 0.0, 1.0),
                p_float("in_high", 1.0, 0.0, 1.0),
                p_float("gamma", 1.0, 0.1, 10.0),
                p_float("out_low", 0.0, 0.0, 1.0),
                p_float("out_high", 1.0, 0.0, 1.0),
            ],
            ev,
        ),
        filter(
            "blur_box",
            vec![gray_in()],
            out_fixed(Grayscale),
            vec![p_float("radius", 0.01, 0.0, 0.1)],
            ev,
        ),
        filter(
            "blur_gaussian",
            vec![any_in()],
            out_follow(),
            vec![p_float("sigma", 0.01, 0.0, 0.05)],
            ev,
        ),
        filter("invert", vec![any_in()], out_follow(), vec![], ev),
        filter(
            "grayscale_conversion",
            vec![input("input", InputType::Fixed(Color), true)],
            out_fixed(Grayscale),
            vec![p_floats("weights", &[0.299, 0.587, 0.114], 0.0, 1.0)],
            ev,
        ),
        filter(
            "gradient_map",
            vec![gray_in()],
            out_fixed(Color),
            vec![
                p_floats("low", &[0.0, 0.0, 0.0, 1.0], 0.0, 1.0),
                p_floats("mid", &[0.5, 0.5, 0.5, 1.0], 0.0, 1.0),
                p_floats("high", &[1.0, 1.0, 1.0, 1.0], 0.0, 1.0),
                p_float("mid_position", 0.5, 0.0, 1.0),
                p_bool("use_mid", false),
            ],
            ev,
        ),
        filter(
            "transform_2d",
            vec![any_in()],
            out_follow(),
            vec![
                p_floats("offset", &[0.0, 0.0], -1.0, 1.0),
                p_ints("repeat", &[1, 1], 1, 8),
                p_enum("rotation", &["r0", "r90", "r180", "r270"]),
            ],
            ev,
        ),
        filter(
            "normal_from_height",
            vec![gray_in()],
            out_fixed(Color),
            vec![p_float("intensity", 4.0, 0.01, 64.0)],
            ev,
        ),
        // opaque
        filter(
            "pixel_processor",
            vec![any_in()],
            out_follow(),
            vec![p_int("program", 0, 0, 1 << 20)],
            NodeKind::Reserved,
        ),
        gen(
            "value_function",
            vec![output("output", OutputType::Declared(Grayscale))],
            vec![p_int("program", 0, 0, 1 << 20)],
            NodeKind::Reserved,
        ),
        gen(
            "tile_sampler",
            out_fixed(Grayscale),
            vec![p_int("pattern", 0, 0, 16)],
            NodeKind::External,
        ),
        filter(
            "edge_detect",
            vec![gray_in()],
            out_fixed(Grayscale),
            vec![p_float("width", 0.5, 0.0, 1.0)],
            NodeKind::External,
        ),
        gen(
            "bitmap",
            vec![output("output", OutputType::Declared(Color))],
            vec![p_int("resource", 0, 0, i32::MAX as i64)],
            NodeKind::Resource,
        ),
        gen(
            "svg",
            vec![output("output", OutputType::Declared(Grayscale))],
            vec![p_int("resource", 0, 0, i32::MAX as i64)],
            NodeKind::Resource,
        ),
        gen(
            GRAPH_INPUT,
            vec![output("output", OutputType::Declared(Grayscale))],
            vec![],
            NodeKind::GraphInput,
        ),
        NodeTypeSpec {
            type_name: SUBGRAPH,
            inputs: Vec::new(),
            outputs: Vec::new(),
            params: Vec::new(),
            is_generator: false,
            kind: NodeKind::Subgraph,
        },
    ];
    Registry {
        types: specs.into_iter().map(|s| (s.type_name, s)).collect(),
    }
}
