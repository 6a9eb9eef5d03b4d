//! Seeded random material graphs, standing in for a real asset corpus in
//! tests, benchmarks and compression measurements.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    registry_builtin, Channel, Connection, InputType, MaterialGraph, NodeDef, NodeKind,
    NodeTypeSpec, OutputRef, ParamSpec, ParamValue, SignalType, ValueKind,
    GRAPH_INPUT, SUBGRAPH,
};

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub min_nodes: usize,
    /// Upper bound on the flattened node count.
    pub max_nodes: usize,
    /// Chance of wrapping a node in a subgraph, per eligible node.
    pub subgraph_prob: f64,
    /// Chance of appending an unreachable side chain.
    pub dead_chain_prob: f64,
    /// Chance of binding a non-PBR output.
    pub extra_output_prob: f64,
    /// Chance of adding an embedded bitmap node.
    pub bitmap_prob: f64,
    /// Chance that any one parameter differs from its default.
    pub param_prob: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            min_nodes: 2,
            max_nodes: 128,
            subgraph_prob: 0.0,
            dead_chain_prob: 0.0,
            extra_output_prob: 0.0,
            bitmap_prob: 0.0,
            param_prob: 0.5,
        }
    }
}

impl CorpusOptions {
    /// Raw-looking graphs for exercising the preprocessing pipeline.
    pub fn raw() -> Self {
        CorpusOptions {
            subgraph_prob: 0.04,
            dead_chain_prob: 0.5,
            extra_output_prob: 0.3,
            bitmap_prob: 0.05,
            ..Default::default()
        }
    }
}

pub(crate) fn random_value(p: &ParamSpec, rng: &mut ChaCha8Rng) -> ParamValue {
    let (lo, hi) = p.range.unwrap_or((0.0, 1.0));
    // Three decimals keeps literals short, like hand-tuned values.
    let float = |rng: &mut ChaCha8Rng| ((rng.random_range(lo..=hi) * 1000.0).round() / 1000.0).clamp(lo, hi);
    let int = |rng: &mut ChaCha8Rng| {
        let (l, h) = (lo.ceil() as i64, hi.floor() as i64);
        // Wide integer ranges (seeds, ids) are sampled from a small prefix.
        rng.random_range(l..=h.min(l + 999))
    };
    match &p.kind {
        ValueKind::Int => ParamValue::Int(int(rng)),
        ValueKind::Float => ParamValue::Float(float(rng)),
        ValueKind::IntTuple(n) => ParamValue::IntTuple((0..*n).map(|_| int(rng)).collect()),
        ValueKind::FloatTuple(n) => ParamValue::FloatTuple((0..*n).map(|_| float(rng)).collect()),
        ValueKind::Enum(set) => ParamValue::Enum(set.choose(rng).expect("non-empty enum").to_string()),
        ValueKind::Bool => ParamValue::Bool(rng.random_bool(0.5)),
    }
}

struct Builder<'r> {
    g: MaterialGraph,
    rng: &'r mut ChaCha8Rng,
    param_prob: f64,
    filter_prob: f64,
}

impl Builder<'_> {
    fn fresh_name(&self, type_name: &str) -> String {
        format!("{}_{}", type_name, self.g.len() + 1)
    }

    fn params(&mut self, spec: &NodeTypeSpec, mut v: NodeDef) -> NodeDef {
        for p in &spec.params {
            if self.rng.random_bool(self.param_prob) {
                v.params.insert(p.name.to_string(), random_value(p, self.rng));
            }
        }
        v
    }

    /// Earlier output producing `ty`, biased toward recent nodes.
    fn source(&mut self, ty: Option<SignalType>) -> Option<OutputRef> {
        let candidates: Vec<usize> = (0..self.g.len())
            .filter(|&i| {
                let t = self.g.nodes[i].output_types.get("output").copied();
                t.is_some() && (ty.is_none() || t == ty)
            })
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let recent = &candidates[candidates.len().saturating_sub(6)..];
        let i = if self.rng.random_bool(0.7) {
            *recent.choose(self.rng)?
        } else {
            *candidates.choose(self.rng)?
        };
        Some(OutputRef::new(&self.g.nodes[i].name, "output"))
    }

    fn generator(&mut self, gray_only: bool) {
        let reg = registry_builtin();
        let gens: Vec<&NodeTypeSpec> = reg
            .evaluable()
            .filter(|s| s.is_generator && (!gray_only || s.type_name != "uniform_color"))
            .collect();
        let spec = *gens.choose(self.rng).expect("generators exist");
        let mut v = NodeDef::new(&self.fresh_name(spec.type_name), spec.type_name);
        if spec.type_name == "uniform_color" {
            let t = if self.rng.random_bool(0.6) { SignalType::Color } else { SignalType::Grayscale };
            v = v.with_output_type("output", t);
        }
        let v = self.params(spec, v);
        self.g.try_push(v, reg).expect("generated generator is valid");
    }

    /// Tries to add a random filter; false when no compatible sources exist.
    fn filter(&mut self) -> bool {
        let reg = registry_builtin();
        let filters: Vec<&NodeTypeSpec> = reg.evaluable().filter(|s| !s.is_generator).collect();
        let spec = *filters.choose(self.rng).expect("filters exist");
        let mut v = NodeDef::new(&self.fresh_name(spec.type_name), spec.type_name);
        let mut bound: Vec<(String, SignalType)> = Vec::new();
        // SameAs slots are resolved after their reference.
        let mut order: Vec<_> = spec.inputs.iter().collect();
        order.sort_by_key(|s| matches!(s.ty, InputType::SameAs(_)));
        for slot in order {
            if !slot.required && !self.rng.random_bool(0.5) {
                continue;
            }
            let want = match &slot.ty {
                InputType::Fixed(t) => Some(*t),
                InputType::Any => None,
                InputType::SameAs(other) => match bound.iter().find(|(s, _)| s == other) {
                    Some((_, t)) => Some(*t),
                    None => continue,
                },
            };
            let Some(src) = self.source(want) else {
                if slot.required {
                    return false;
                }
                continue;
            };
            let t = self.g.slot_type(&src.node, &src.slot).expect("source exists");
            bound.push((slot.name.clone(), t));
            v.connections.push(Connection::new(&slot.name, &src.node, &src.slot));
        }
        let v = self.params(spec, v);
        self.g.try_push(v, reg).is_ok()
    }

    fn random_node(&mut self) {
        let has_any = !self.g.is_empty();
        if has_any && self.rng.random_bool(self.filter_prob) {
            for _ in 0..8 {
                if self.filter() {
                    return;
                }
            }
        }
        self.generator(!has_any);
    }
}

/// A random node that validates as the next node of `g`, named `name`.
/// Generators are picked with probability `p_generator` (always when `g` is
/// empty), otherwise a filter reading earlier outputs.
pub(crate) fn random_next_node(
    g: &MaterialGraph,
    name: &str,
    p_generator: f64,
    param_prob: f64,
    rng: &mut ChaCha8Rng,
) -> NodeDef {
    let mut b = Builder {
        g: g.clone(),
        rng,
        param_prob,
        filter_prob: 1.0 - p_generator,
    };
    b.random_node();
    let mut v = b.g.nodes.pop().expect("a node was added");
    v.name = name.to_string();
    v
}

/// Wraps node `i` (which must read at least one input) in a subgraph node of
/// the same name. The body holds one `graph_input` per connection plus the
/// original node, exposed as `height` or `basecolor`.
fn wrap_in_subgraph(g: &mut MaterialGraph, i: usize) {
    let v = g.nodes[i].clone();
    let out_ty = v.output_types["output"];
    let channel = match out_ty {
        SignalType::Grayscale => Channel::Height,
        SignalType::Color => Channel::BaseColor,
    };
    let reg = registry_builtin();
    let mut inner = MaterialGraph::new();
    let mut core = NodeDef::new("core", &v.type_name);
    core.params = v.params.clone();
    let mut outer_inputs = Vec::new();
    for c in &v.connections {
        let t = g.slot_type(&c.src_node, &c.src_slot).expect("valid source");
        inner
            .try_push(NodeDef::new(&c.dst_slot, GRAPH_INPUT).with_output_type("output", t), reg)
            .expect("graph input is valid");
        core.connections.push(Connection::new(&c.dst_slot, &c.dst_slot, "output"));
        outer_inputs.push(Connection::new(&c.dst_slot, &c.src_node, &c.src_slot));
    }
    inner.try_push(core, reg).expect("wrapped node is valid");
    inner.bind(channel, "core", "output");

    let mut sg = NodeDef::new(&v.name, SUBGRAPH).with_subgraph(inner);
    sg.connections = outer_inputs;
    reg.canonicalize(&mut sg);
    sg.output_types.insert(channel.as_str().to_string(), out_ty);
    g.nodes[i] = sg;

    let rewire = |r: &mut String, slot: &mut String| {
        if *r == v.name && slot == "output" {
            *slot = channel.as_str().to_string();
        }
    };
    for n in g.nodes.iter_mut().skip(i + 1) {
        for c in &mut n.connections {
            rewire(&mut c.src_node, &mut c.src_slot);
        }
    }
    for r in g.outputs.values_mut().chain(g.extra_outputs.values_mut()) {
        rewire(&mut r.node, &mut r.slot);
    }
}

/// A random valid graph. The same `(seed, opts)` always gives the same graph.
pub fn random_graph(seed: u64, opts: &CorpusOptions) -> MaterialGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = opts.max_nodes.max(2);
    let min = opts.min_nodes.clamp(2, max);
    let target = rng.random_range(min..=max);
    let dead = if rng.random_bool(opts.dead_chain_prob) {
        rng.random_range(1..=3usize).min(target.saturating_sub(2))
    } else {
        0
    };
    // An embedded bitmap comes with a levels node feeding the base color.
    let bitmap = if target - dead > 3 && rng.random_bool(opts.bitmap_prob) { 2 } else { 0 };
    let live = target - dead - bitmap;
    let mut b = Builder {
        g: MaterialGraph::new(),
        rng: &mut rng,
        param_prob: opts.param_prob,
        filter_prob: 0.7,
    };
    let reg = registry_builtin();

    // Leave room for the normal map node.
    while b.g.len() + 1 < live {
        b.random_node();
    }
    let gray = b.source(Some(SignalType::Grayscale)).expect("first node is grayscale");
    let nm = b.fresh_name("normal_from_height");
    b.g.try_push(
        NodeDef::new(&nm, "normal_from_height").with_input("input", &gray.node, &gray.slot),
        reg,
    )
    .expect("normal map is valid");

    if bitmap > 0 {
        let name = b.fresh_name("bitmap");
        let mut v = NodeDef::new(&name, "bitmap");
        v.params.insert("resource".into(), ParamValue::Int(b.rng.random_range(0..1000)));
        b.g.try_push(v, reg).expect("bitmap is valid");
    }

    // Consumers count, to prefer sinks for bindings.
    let mut used = vec![false; b.g.len()];
    for n in &b.g.nodes {
        for c in &n.connections {
            if let Some(j) = b.g.position(&c.src_node) {
                used[j] = true;
            }
        }
    }
    let mut sinks_of = |ty: SignalType, g: &MaterialGraph, rng: &mut ChaCha8Rng| -> Option<String> {
        let of_type: Vec<usize> = (0..g.len())
            .filter(|&i| g.nodes[i].output_types.get("output") == Some(&ty) && g.nodes[i].type_name != "bitmap")
            .collect();
        let sinks: Vec<usize> = of_type.iter().copied().filter(|&i| !used[i]).collect();
        let pick = if !sinks.is_empty() { sinks.choose(rng) } else { of_type.choose(rng) };
        pick.map(|&i| {
            used[i] = true;
            g.nodes[i].name.clone()
        })
    };
    b.g.bind(Channel::Normal, &nm, "output");
    if let Some(n) = sinks_of(SignalType::Color, &b.g, b.rng) {
        b.g.bind(Channel::BaseColor, &n, "output");
    }
    for ch in [Channel::Height, Channel::Roughness, Channel::Metallic] {
        if ch == Channel::Height || b.rng.random_bool(0.6) {
            if let Some(n) = sinks_of(SignalType::Grayscale, &b.g, b.rng) {
                b.g.bind(ch, &n, "output");
            }
        }
    }
    if bitmap > 0 {
        let bm = b.g.nodes.last().expect("bitmap").name.clone();
        let name = b.fresh_name("levels");
        b.g.try_push(NodeDef::new(&name, "levels").with_input("input", &bm, "output"), reg)
            .expect("levels on bitmap is valid");
        b.g.bind(Channel::BaseColor, &name, "output");
    }

    if dead > 0 {
        let start = b.g.len();
        b.generator(true);
        while b.g.len() - start < dead {
            let prev = b.g.nodes.last().expect("chain start").name.clone();
            let name = b.fresh_name("levels");
            b.g.try_push(NodeDef::new(&name, "levels").with_input("input", &prev, "output"), reg)
                .expect("dead chain node is valid");
        }
    }
    if b.rng.random_bool(opts.extra_output_prob) {
        if let Some(src) = b.source(None) {
            let name = ["emissive", "ambient_occlusion", "opacity"].choose(b.rng).expect("names");
            b.g.extra_outputs.insert(name.to_string(), src);
        }
    }

    let eligible: Vec<usize> = (0..b.g.len())
        .filter(|&i| {
            let n = &b.g.nodes[i];
            !n.connections.is_empty() && reg.get(&n.type_name).is_some_and(|s| s.kind == NodeKind::Evaluable)
        })
        .collect();
    let mut g = b.g;
    for i in eligible {
        if rng.random_bool(opts.subgraph_prob) {
            wrap_in_subgraph(&mut g, i);
        }
    }
    debug_assert!(g.validate(reg).ok, "{}", g.validate(reg));
    g
}

/// `n` graphs from consecutive seeds starting at `seed`.
pub fn corpus(n: usize, seed: u64, opts: &CorpusOptions) -> Vec<MaterialGraph> {
    crate::par::map_range(n, |i| random_graph(seed + i as u64, opts))
}
