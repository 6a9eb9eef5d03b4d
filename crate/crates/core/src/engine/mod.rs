//! Deterministic CPU evaluation of material graphs.
//!
//! Evaluation is a pure function of the graph prefix a node depends on and
//! the [`RenderSettings`]. Stochastic nodes hash `(seed, node name, seed
//! param)` instead of drawing from shared RNG state, so independent nodes can
//! run in parallel and the result is bit-identical to serial evaluation.

mod image;
mod io;
pub mod noise;
mod ops;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

pub use image::{sanitize, ImageBuffer};
pub use io::{decode_png, encode_png, export_png, load_png};
pub use ops::{blend, gradient_map, grayscale_conversion, levels, BlendMode, LevelsParams};

use crate::graph::{registry_builtin, topo_positions, Channel, MaterialGraph, NodeKind};
use ops::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalErrorCode {
    /// Reserved opaque node types and embedded resources.
    EvalUnsupported,
    /// No local kernel for the parameter combination or node type.
    NumericDomain,
    DimensionMismatch,
    BadParamValue,
    MissingNode,
    BadSettings,
}

impl EvalErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalErrorCode::EvalUnsupported => "EVAL_UNSUPPORTED",
            EvalErrorCode::NumericDomain => "NUMERIC_DOMAIN",
            EvalErrorCode::DimensionMismatch => "DIMENSION_MISMATCH",
            EvalErrorCode::BadParamValue => "BAD_PARAM_VALUE",
            EvalErrorCode::MissingNode => "MISSING_NODE",
            EvalErrorCode::BadSettings => "BAD_SETTINGS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct EvalError {
    pub code: EvalErrorCode,
    pub node: String,
    pub channel: Option<Channel>,
    pub message: String,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code.as_str())?;
        if let Some(ch) = self.channel {
            write!(f, " (channel {ch})")?;
        }
        if !self.node.is_empty() {
            write!(f, " at node `{}`", self.node)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl EvalError {
    pub fn new(code: EvalErrorCode, node: &str, message: String) -> Self {
        EvalError {
            code,
            node: node.to_string(),
            channel: None,
            message,
        }
    }

    pub(crate) fn at(mut self, node: &str) -> Self {
        if self.node.is_empty() {
            self.node = node.to_string();
        }
        self
    }
}

/// Render-time choices. Resolution is pixels per tile side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RenderSettings {
    pub resolution: u32,
    pub seed: u64,
    pub tiling: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            resolution: 512,
            seed: 0,
            tiling: true,
        }
    }
}

impl RenderSettings {
    /// Power of two between 16 and 4096.
    pub fn new(resolution: u32, seed: u64) -> Result<Self, EvalError> {
        let s = RenderSettings {
            resolution,
            seed,
            tiling: true,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), EvalError> {
        if self.resolution.is_power_of_two() && (16..=4096).contains(&self.resolution) {
            Ok(())
        } else {
            Err(EvalError::new(
                EvalErrorCode::BadSettings,
                "",
                format!(
                    "resolution {} is not a power of two in 16..=4096",
                    self.resolution
                ),
            ))
        }
    }
}

/// All output-slot images of one evaluated node, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeImages {
    pub slots: Vec<(String, ImageBuffer)>,
}

impl NodeImages {
    pub fn primary(&self) -> &ImageBuffer {
        &self.slots[0].1
    }

    pub fn slot(&self, name: &str) -> Option<&ImageBuffer> {
        self.slots.iter().find(|(n, _)| n == name).map(|(_, i)| i)
    }
}

type Cell = Arc<OnceLock<Result<Arc<NodeImages>, EvalError>>>;

/// Evaluated node outputs under one fixed [`RenderSettings`].
///
/// Safe to share between threads. Each node is computed at most once: the
/// first caller initialises its cell and concurrent callers for the same
/// node wait on it. Nodes inside subgraphs are keyed `outer__inner`.
#[derive(Debug)]
pub struct RenderCache {
    settings: RenderSettings,
    periods: usize,
    entries: Mutex<HashMap<String, Cell>>,
}

impl RenderCache {
    pub fn new(settings: RenderSettings) -> Self {
        Self::with_periods(settings, 1)
    }

    /// Cache whose images cover `periods`×`periods` tiles.
    pub fn with_periods(settings: RenderSettings, periods: usize) -> Self {
        RenderCache {
            settings,
            periods: periods.max(1),
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &RenderSettings {
        &self.settings
    }

    fn cell(&self, key: &str) -> Cell {
        let mut map = self.entries.lock().expect("render cache poisoned");
        map.entry(key.to_string()).or_default().clone()
    }

    /// Completed outputs of `name`, if evaluated successfully.
    pub fn get(&self, name: &str) -> Option<Arc<NodeImages>> {
        let map = self.entries.lock().expect("render cache poisoned");
        match map.get(name)?.get()? {
            Ok(images) => Some(images.clone()),
            Err(_) => None,
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn invalidate(&self, name: &str) {
        let prefix = format!("{name}__");
        let mut map = self.entries.lock().expect("render cache poisoned");
        map.retain(|k, _| k != name && !k.starts_with(&prefix));
    }

    /// Drops `name` and every node that reads it, directly or not.
    pub fn invalidate_downstream(&self, g: &MaterialGraph, name: &str) {
        let mut dirty = vec![name.to_string()];
        for n in &g.nodes {
            if n.connections.iter().any(|c| dirty.contains(&c.src_node)) {
                dirty.push(n.name.clone());
            }
        }
        for d in &dirty {
            self.invalidate(d);
        }
    }

    pub fn clear(&self) {
        self.entries.lock().expect("render cache poisoned").clear();
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("render cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ctx(&self) -> Ctx {
        let tile = self.settings.resolution as usize;
        Ctx {
            tile,
            size: tile * self.periods,
            seed: self.settings.seed,
            tiling: self.settings.tiling,
        }
    }
}

/// Name resolution context: the top-level graph or a subgraph body.
struct Scope<'a> {
    graph: &'a MaterialGraph,
    prefix: String,
    inputs: HashMap<String, ImageBuffer>,
}

fn eval_in(scope: &Scope<'_>, name: &str, cache: &RenderCache) -> Result<Arc<NodeImages>, EvalError> {
    let key = format!("{}{}", scope.prefix, name);
    let cell = cache.cell(&key);
    cell.get_or_init(|| compute(scope, name, &key, cache)).clone()
}

fn compute(scope: &Scope<'_>, name: &str, key: &str, cache: &RenderCache) -> Result<Arc<NodeImages>, EvalError> {
    let registry = registry_builtin();
    let node = scope.graph.node(name).ok_or_else(|| {
        EvalError::new(EvalErrorCode::MissingNode, key, "node is not defined".into())
    })?;
    let spec = registry.interface(node).ok_or_else(|| {
        EvalError::new(
            EvalErrorCode::EvalUnsupported,
            key,
            format!("unknown node type `{}`", node.type_name),
        )
    })?;

    let mut sources = Vec::with_capacity(node.connections.len());
    for c in &node.connections {
        sources.push((c, eval_in(scope, &c.src_node, cache)?));
    }
    let mut inputs: HashMap<&str, &ImageBuffer> = HashMap::new();
    for (c, images) in &sources {
        let img = images.slot(&c.src_slot).ok_or_else(|| {
            EvalError::new(
                EvalErrorCode::MissingNode,
                key,
                format!("`{}` has no output `{}`", c.src_node, c.src_slot),
            )
        })?;
        inputs.insert(c.dst_slot.as_str(), img);
    }

    let single = |img: ImageBuffer| {
        Arc::new(NodeImages {
            slots: vec![("output".to_string(), img)],
        })
    };
    match spec.kind {
        NodeKind::Evaluable => {
            let img = ops::run(&cache.ctx(), node, &spec, key, &inputs)?;
            Ok(single(img))
        }
        NodeKind::GraphInput => scope.inputs.get(name).cloned().map(single).ok_or_else(|| {
            EvalError::new(
                EvalErrorCode::EvalUnsupported,
                key,
                "graph input outside a subgraph".into(),
            )
        }),
        NodeKind::Subgraph => {
            let inner = node.subgraph.as_deref().ok_or_else(|| {
                EvalError::new(EvalErrorCode::MissingNode, key, "missing nested graph".into())
            })?;
            let nested = Scope {
                graph: inner,
                prefix: format!("{key}__"),
                inputs: inputs
                    .iter()
                    .map(|(slot, img)| (slot.to_string(), (*img).clone()))
                    .collect(),
            };
            let mut slots = Vec::new();
            for (ch, r) in &inner.outputs {
                let images = eval_in(&nested, &r.node, cache)?;
                let img = images.slot(&r.slot).ok_or_else(|| {
                    EvalError::new(
                        EvalErrorCode::MissingNode,
                        key,
                        format!("nested output `{ch}` reads missing slot `{r}`"),
                    )
                })?;
                slots.push((ch.as_str().to_string(), img.clone()));
            }
            if slots.is_empty() {
                return Err(EvalError::new(
                    EvalErrorCode::MissingNode,
                    key,
                    "subgraph exposes no outputs".into(),
                ));
            }
            Ok(Arc::new(NodeImages { slots }))
        }
        NodeKind::External => Err(EvalError::new(
            EvalErrorCode::NumericDomain,
            key,
            format!("external library node `{}` has no local kernel", node.type_name),
        )),
        NodeKind::Reserved | NodeKind::Resource => Err(EvalError::new(
            EvalErrorCode::EvalUnsupported,
            key,
            format!("`{}` nodes are not evaluated", node.type_name),
        )),
    }
}

fn top_scope(g: &MaterialGraph) -> Scope<'_> {
    Scope {
        graph: g,
        prefix: String::new(),
        inputs: HashMap::new(),
    }
}

/// All outputs of `node`; populates the cache for it and its ancestors.
pub fn eval_node_outputs(g: &MaterialGraph, node: &str, cache: &RenderCache) -> Result<Arc<NodeImages>, EvalError> {
    cache.settings.check()?;
    eval_in(&top_scope(g), node, cache)
}

/// Primary output image of `node`.
pub fn eval_node(g: &MaterialGraph, node: &str, cache: &RenderCache) -> Result<ImageBuffer, EvalError> {
    Ok(eval_node_outputs(g, node, cache)?.primary().clone())
}

/// Maps for the five PBR channels.
pub type ChannelMaps = BTreeMap<Channel, ImageBuffer>;

/// Value used for a channel with no binding.
pub fn channel_default(ch: Channel) -> &'static [f32] {
    match ch {
        Channel::BaseColor => &[0.5, 0.5, 0.5, 1.0],
        Channel::Normal => &[0.5, 0.5, 1.0, 1.0],
        Channel::Roughness => &[1.0],
        Channel::Metallic => &[0.0],
        Channel::Height => &[0.5],
    }
}

/// Evaluates every node needed by the bound channels, level by level in
/// topological depth (nodes within a level run in parallel), then collects
/// the five channel maps.
pub fn eval_graph_with_cache(g: &MaterialGraph, cache: &RenderCache) -> Result<ChannelMaps, EvalError> {
    cache.settings.check()?;
    let scope = top_scope(g);

    let mut needed: Vec<bool> = vec![false; g.len()];
    let index: HashMap<&str, usize> = g.nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
    let mut stack: Vec<usize> = g.outputs.values().filter_map(|r| index.get(r.node.as_str()).copied()).collect();
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut needed[i], true) {
            continue;
        }
        for c in &g.nodes[i].connections {
            if let Some(&j) = index.get(c.src_node.as_str()) {
                stack.push(j);
            }
        }
    }
    let depth = topo_positions(g);
    let mut levels: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if needed[i] {
            levels.entry(depth[&n.name]).or_default().push(&n.name);
        }
    }
    for names in levels.values() {
        // Failures stay in the cache and resurface below with the channel.
        if crate::par::map_slice(names, |n| eval_in(&scope, n, cache).is_err()).contains(&true) {
            break;
        }
    }

    let size = cache.ctx().size;
    let mut maps = ChannelMaps::new();
    for ch in Channel::ALL {
        let img = match g.outputs.get(&ch) {
            Some(r) => {
                let images = eval_in(&scope, &r.node, cache).map_err(|mut e| {
                    e.channel = Some(ch);
                    e
                })?;
                images.slot(&r.slot).cloned().ok_or_else(|| EvalError {
                    code: EvalErrorCode::MissingNode,
                    node: r.node.clone(),
                    channel: Some(ch),
                    message: format!("no output slot `{}`", r.slot),
                })?
            }
            None => ImageBuffer::filled(size, size, channel_default(ch)),
        };
        maps.insert(ch, img);
    }
    Ok(maps)
}

pub fn eval_graph(g: &MaterialGraph, s: &RenderSettings) -> Result<ChannelMaps, EvalError> {
    eval_graph_with_cache(g, &RenderCache::new(*s))
}

/// Renders `periods`×`periods` tiles of the graph in one image. With tiling
/// on, the result equals the single-tile render repeated.
pub fn eval_graph_periodic(g: &MaterialGraph, s: &RenderSettings, periods: usize) -> Result<ChannelMaps, EvalError> {
    eval_graph_with_cache(g, &RenderCache::with_periods(*s, periods))
}

/// Normal map from a grayscale height field.
pub fn normal_from_height(height: &ImageBuffer, intensity: f32, tiling: bool) -> ImageBuffer {
    let ctx = Ctx {
        tile: height.width,
        size: height.width,
        seed: 0,
        tiling,
    };
    ops::normal_from_height(&ctx, height, intensity)
}

/// Unit light direction used by [`composite`].
pub const LIGHT_DIR: [f32; 3] = [0.408_248_3, 0.408_248_3, 0.816_496_6];
/// Ambient term used by [`composite`].
pub const AMBIENT: f32 = 0.3;

/// Shaded preview used as the target/loss image for inverse modelling:
///
/// `rgb = basecolor.rgb * (AMBIENT + (1 - AMBIENT) * max(0, n · L))`,
/// with `n = 2 * normal.rgb - 1` renormalised, `L` = [`LIGHT_DIR`] and alpha 1.
pub fn composite(maps: &ChannelMaps) -> ImageBuffer {
    let base = maps[&Channel::BaseColor].to_color();
    let normal = maps[&Channel::Normal].to_color();
    let mut out = ImageBuffer::new(base.width, base.height, 4);
    let w = base.width;
    crate::par::for_each_row(&mut out.data, w * 4, |y, row| {
        for x in 0..w {
            let b = base.pixel(x, y);
            let n = normal.pixel(x, y);
            let v = [n[0] * 2.0 - 1.0, n[1] * 2.0 - 1.0, n[2] * 2.0 - 1.0];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-6);
            let ndotl = (v[0] * LIGHT_DIR[0] + v[1] * LIGHT_DIR[1] + v[2] * LIGHT_DIR[2]) / len;
            let shade = AMBIENT + (1.0 - AMBIENT) * ndotl.max(0.0);
            for c in 0..3 {
                row[x * 4 + c] = b[c] * shade;
            }
            row[x * 4 + 3] = 1.0;
        }
    });
    out.finalize()
}

pub fn render_composite(g: &MaterialGraph, s: &RenderSettings) -> Result<ImageBuffer, EvalError> {
    Ok(composite(&eval_graph(g, s)?))
}
