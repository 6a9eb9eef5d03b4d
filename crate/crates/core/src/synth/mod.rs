//! Incremental graph synthesis: propose a node, validate, render, repair or
//! backtrack, repeat.
//!
//! The loop keeps a tree of every proposal. The active path from the root is
//! always a valid graph prefix. After the `i`-th consecutive failure the
//! `2^(i-1)` most recent nodes of the active path are dropped; any success
//! resets `i` to 1.

mod context;
mod optimize;
mod proposers;
mod repair;

pub mod http;


use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{eval_node_outputs, export_png, EvalError, ImageBuffer, RenderCache, RenderSettings};
use crate::graph::{registry_builtin, Channel, MaterialGraph, NodeDef, SignalType};
use crate::transpiler::{emit_compact, emit_node, parse_compact, parse_node_fragment, NodeFragment};

pub use context::{
    build_context, estimate_tokens, fit_to_budget, serialize_graph_mode, serialize_mixed, ContextError,
    DEFAULT_TOKEN_BUDGET, IMG_MARKER, PATCH_PX,
};
pub use http::{HttpProposer, API_KEY_ENV};
pub use optimize::{continuous_params, coordinate_values, optimize_params, Coordinate, OptimizeReport};
pub use proposers::{
    corrupt, corrupting_proposer, random_proposer, replay_proposer, Corruption, CorruptingProposer, FaultPlan,
    RandomProposer, RandomProposerConfig, ReplayProposer,
};
pub use repair::{repair, RepairAction, RepairOutcome, Unrepairable};

/// One step of model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Proposal {
    /// SBSC text of exactly one node block.
    Node(String),
    /// The trailing `outputs:` block; ends the graph.
    End(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ContextMode {
    /// Program text without params plus one preview per node.
    #[default]
    Mixed,
    /// A single graph card image.
    Graph,
    /// Full program text, no previews.
    TextOnly,
}

impl ContextMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mixed" => Some(ContextMode::Mixed),
            "graph" => Some(ContextMode::Graph),
            "text" | "text_only" => Some(ContextMode::TextOnly),
            _ => None,
        }
    }
}

/// What a proposer sees at each step.
#[derive(Debug, Clone)]
pub struct ProposerContext {
    pub mode: ContextMode,
    pub program_text: String,
    pub image_slots: Vec<ImageBuffer>,
    /// The partial graph the text and images describe. Deterministic test
    /// proposers read it directly; model-backed ones use only text and images.
    pub partial: MaterialGraph,
    /// 1-based index of this proposer call within the run.
    pub step: usize,
}

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("PROPOSER_FAILURE: {0}")]
    Failure(String),
}

pub trait Proposer {
    fn propose(&mut self, ctx: &ProposerContext) -> Result<Proposal, ProposerError>;
}

impl<P: Proposer + ?Sized> Proposer for Box<P> {
    fn propose(&mut self, ctx: &ProposerContext) -> Result<Proposal, ProposerError> {
        (**self).propose(ctx)
    }
}

/// Exponential backtracking: the `i`-th consecutive failure removes
/// `2^(i-1)` nodes, never more than `available`.
pub fn backtrack_count(i: u32, available: usize) -> usize {
    assert!(i >= 1, "failure counter starts at 1");
    let want = if i > 63 { usize::MAX } else { 1usize.checked_shl(i - 1).unwrap_or(usize::MAX) };
    want.min(available)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Root,
    Node,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEntry {
    pub kind: EntryKind,
    pub status: EntryStatus,
    /// The proposed node after repair; `None` if the text did not parse.
    pub node: Option<NodeDef>,
    /// Conversion nodes inserted by repair, placed before `node`.
    pub converters: Vec<NodeDef>,
    pub text: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Failure code and message for invalid entries.
    pub error: Option<(String, String)>,
    /// Repairs applied to an accepted node.
    pub actions: Vec<RepairAction>,
    pub step: usize,
    pub timings: PhaseTimes,
}

/// Every proposal of a run, as a tree. Entry 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisTree {
    pub entries: Vec<TreeEntry>,
    /// Valid node entries from the root down, excluding the root.
    pub active_path: Vec<usize>,
}

impl Default for SynthesisTree {
    fn default() -> Self {
        Self::new()
    }
}

impl SynthesisTree {
    pub fn new() -> Self {
        SynthesisTree {
            entries: vec![TreeEntry {
                kind: EntryKind::Root,
                status: EntryStatus::Valid,
                node: None,
                converters: Vec::new(),
                text: String::new(),
                parent: None,
                children: Vec::new(),
                error: None,
                actions: Vec::new(),
                step: 0,
                timings: PhaseTimes::default(),
            }],
            active_path: Vec::new(),
        }
    }

    fn tip(&self) -> usize {
        self.active_path.last().copied().unwrap_or(0)
    }

    fn add(&mut self, mut e: TreeEntry) -> usize {
        let parent = self.tip();
        e.parent = Some(parent);
        let id = self.entries.len();
        self.entries.push(e);
        self.entries[parent].children.push(id);
        id
    }

    /// Node sequence of the active path.
    pub fn active_graph(&self) -> MaterialGraph {
        let mut g = MaterialGraph::new();
        for &i in &self.active_path {
            let e = &self.entries[i];
            g.nodes.extend(e.converters.iter().cloned());
            g.nodes.extend(e.node.iter().cloned());
        }
        g
    }

    pub fn count(&self, status: EntryStatus) -> usize {
        self.entries[1..].iter().filter(|e| e.status == status).count()
    }
}

/// Wall-clock time per phase. Never takes part in equality, so that stats
/// of reproducible runs compare equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub context: Duration,
    pub propose: Duration,
    pub validate: Duration,
    pub render: Duration,
}

impl PhaseTimes {
    fn add(&mut self, o: &PhaseTimes) {
        self.context += o.context;
        self.propose += o.propose;
        self.validate += o.validate;
        self.render += o.render;
    }

    pub fn total(&self) -> Duration {
        self.context + self.propose + self.validate + self.render
    }
}

impl PartialEq for PhaseTimes {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthStats {
    pub proposals: usize,
    /// Node proposals, whether or not their text parsed.
    pub nodes_generated: usize,
    /// Rejected node proposals plus valid nodes removed by backtracking.
    pub nodes_discarded: usize,
    /// Repair actions applied to accepted nodes.
    pub repairs: usize,
    pub converters_inserted: usize,
    /// Failure count per code (`SYNTAX`, `UNKNOWN_PARAM`, `EVAL_UNSUPPORTED`, ...).
    pub failures: BTreeMap<String, usize>,
    /// Nodes removed from the active path at each failure, in order.
    pub backtracks: Vec<usize>,
    /// Outputs were bound heuristically because `max_nodes` was reached.
    pub auto_bound: bool,
    pub timings: PhaseTimes,
}

impl SynthStats {
    pub fn ner(&self) -> f64 {
        crate::metrics::ner(self)
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub max_nodes: usize,
    pub max_total_proposals: usize,
    pub mode: ContextMode,
    /// Settings for node previews and execution checks.
    pub render: RenderSettings,
    pub repair_enabled: bool,
    pub seed: u64,
    /// Patch-token budget for graph-mode cards.
    pub token_budget: usize,
    /// When set, every accepted step writes an SBSC snapshot and preview.
    pub log_dir: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            max_nodes: 128,
            max_total_proposals: 2048,
            mode: ContextMode::Mixed,
            render: RenderSettings {
                resolution: crate::viz::PREVIEW_RESOLUTION,
                seed: 0,
                tiling: true,
            },
            repair_enabled: true,
            seed: 0,
            token_budget: DEFAULT_TOKEN_BUDGET,
            log_dir: None,
        }
    }
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub graph: MaterialGraph,
    pub tree: SynthesisTree,
    pub stats: SynthStats,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("BUDGET_EXHAUSTED after {} proposals", .stats.proposals)]
    BudgetExhausted {
        best: MaterialGraph,
        tree: SynthesisTree,
        stats: SynthStats,
    },
    #[error("PROPOSER_FAILURE: {message}")]
    ProposerFailure {
        message: String,
        tree: SynthesisTree,
        stats: SynthStats,
    },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Binds the most recent color output to basecolor and the most recent
/// grayscale output to roughness and height.
pub fn auto_bind(g: &mut MaterialGraph) {
    let latest = |ty: SignalType| {
        g.nodes.iter().rev().find_map(|n| {
            n.output_types
                .iter()
                .find(|(_, t)| **t == ty)
                .map(|(slot, _)| (n.name.clone(), slot.clone()))
        })
    };
    let color = latest(SignalType::Color);
    let gray = latest(SignalType::Grayscale);
    if let Some((n, s)) = color {
        g.bind(Channel::BaseColor, &n, &s);
    }
    if let Some((n, s)) = gray {
        g.bind(Channel::Roughness, &n, &s);
        g.bind(Channel::Height, &n, &s);
    }
}

struct Failure {
    code: String,
    message: String,
    node: Option<NodeDef>,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Failure {
            code: code.to_string(),
            message: message.into(),
            node: None,
        }
    }
}

struct Run<'a> {
    cfg: &'a SynthConfig,
    tree: SynthesisTree,
    stats: SynthStats,
    graph: MaterialGraph,
    cache: RenderCache,
    failures_in_row: u32,
    /// Phase times of the current step.
    times: PhaseTimes,
}

impl Run<'_> {
    fn fail(&mut self, kind: EntryKind, text: String, f: Failure, step: usize) {
        *self.stats.failures.entry(f.code.clone()).or_default() += 1;
        if kind == EntryKind::Node {
            self.stats.nodes_discarded += 1;
        }
        self.tree.add(TreeEntry {
            kind,
            status: EntryStatus::Invalid,
            node: f.node,
            converters: Vec::new(),
            text,
            parent: None,
            children: Vec::new(),
            error: Some((f.code, f.message)),
            actions: Vec::new(),
            step,
            timings: self.times,
        });
        let k = backtrack_count(self.failures_in_row, self.tree.active_path.len());
        for _ in 0..k {
            let id = self.tree.active_path.pop().expect("k is bounded by the path length");
            let e = &self.tree.entries[id];
            for n in e.converters.iter().chain(e.node.iter()) {
                self.cache.invalidate(&n.name);
            }
        }
        self.stats.nodes_discarded += k;
        self.stats.backtracks.push(k);
        self.failures_in_row += 1;
        self.graph = self.tree.active_graph();
    }

    /// Parses, repairs and executes a node proposal against the active graph.
    fn attempt(&mut self, text: &str) -> Result<(Vec<NodeDef>, NodeDef, Vec<RepairAction>), Failure> {
        let reg = registry_builtin();
        let t0 = Instant::now();
        let v = match parse_node_fragment(text) {
            Ok(NodeFragment::Node(v)) => v,
            Ok(NodeFragment::Outputs(_)) => {
                return Err(Failure::new("SYNTAX", "expected a node block, got outputs"))
            }
            Err(errs) => {
                let e = &errs[0];
                return Err(Failure::new(e.code.as_str(), e.to_string()));
            }
        };
        let mut cand = v.clone();
        let report = self.graph.check_candidate(&mut cand, reg);
        let (converters, node, actions) = if report.ok {
            (Vec::new(), cand, Vec::new())
        } else if self.cfg.repair_enabled {
            match repair(&v, &self.graph, reg) {
                Ok(r) => (r.converters, r.node, r.actions),
                Err(_) => {
                    let code = report.errors[0].code.as_str();
                    let mut f = Failure::new(code, report.to_string());
                    f.node = Some(cand);
                    return Err(f);
                }
            }
        } else {
            let mut f = Failure::new(report.errors[0].code.as_str(), report.to_string());
            f.node = Some(cand);
            return Err(f);
        };
        if self.graph.len() + converters.len() + 1 > self.cfg.max_nodes {
            let mut f = Failure::new("NODE_LIMIT", "repair would exceed max_nodes");
            f.node = Some(node);
            return Err(f);
        }
        // transpilation check: the node must survive its own text form
        let mut round = match parse_node_fragment(&emit_node(&node)) {
            Ok(NodeFragment::Node(n)) => n,
            _ => {
                let mut f = Failure::new("TRANSPILE", "node does not round-trip through SBSC");
                f.node = Some(node);
                return Err(f);
            }
        };
        let mut trial = self.graph.clone();
        trial.nodes.extend(converters.iter().cloned());
        trial.check_candidate(&mut round, reg);
        if round != node {
            let mut f = Failure::new("TRANSPILE", "node does not round-trip through SBSC");
            f.node = Some(node);
            return Err(f);
        }
        trial.nodes.push(node.clone());
        self.times.validate += t0.elapsed();

        let t1 = Instant::now();
        let mut result = Ok(());
        for n in converters.iter().chain(std::iter::once(&node)) {
            if let Err(e) = eval_node_outputs(&trial, &n.name, &self.cache) {
                result = Err(e);
                break;
            }
        }
        self.times.render += t1.elapsed();
        if let Err(e) = result {
            for n in converters.iter().chain(std::iter::once(&node)) {
                self.cache.invalidate(&n.name);
            }
            let EvalError { code, message, .. } = e;
            let mut f = Failure::new(code.as_str(), message);
            f.node = Some(node);
            return Err(f);
        }
        Ok((converters, node, actions))
    }

    fn finish(&mut self, text: &str) -> Result<(), Failure> {
        let bindings = match parse_node_fragment(text) {
            Ok(NodeFragment::Outputs(b)) => b,
            Ok(NodeFragment::Node(_)) => {
                return Err(Failure::new("SYNTAX", "expected an outputs block, got a node"))
            }
            Err(errs) => return Err(Failure::new(errs[0].code.as_str(), errs[0].to_string())),
        };
        let mut g = self.graph.clone();
        g.outputs = bindings;
        let report = g.validate(registry_builtin());
        if !report.ok {
            return Err(Failure::new(report.errors[0].code.as_str(), report.to_string()));
        }
        // the final document must parse back to the same graph
        match parse_compact(&emit_compact(&g)) {
            Ok(back) if back == g => {}
            _ => return Err(Failure::new("TRANSPILE", "final document does not round-trip")),
        }
        self.graph = g;
        Ok(())
    }

    fn log_step(&self, step: usize, node: &NodeDef) {
        let Some(dir) = &self.cfg.log_dir else { return };
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join(format!("step_{step:04}.sbsc")), emit_compact(&self.graph));
        if let Some(imgs) = self.cache.get(&node.name) {
            let _ = export_png(
                imgs.primary(),
                &dir.join(format!("step_{step:04}_{}.png", node.name)),
            );
        }
    }
}

/// Runs the propose/validate/backtrack loop until the proposer ends the graph,
/// `max_nodes` is reached, or the proposal budget runs out.
pub fn synthesize(
    proposer: &mut dyn Proposer,
    cfg: &SynthConfig,
    target: Option<&ImageBuffer>,
) -> Result<SynthOutcome, SynthError> {
    if cfg.max_nodes == 0 {
        return Err(SynthError::Config("max_nodes must be at least 1".into()));
    }
    cfg.render
        .check()
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let mut run = Run {
        cfg,
        tree: SynthesisTree::new(),
        stats: SynthStats::default(),
        graph: MaterialGraph::new(),
        cache: RenderCache::new(cfg.render),
        failures_in_row: 1,
        times: PhaseTimes::default(),
    };
    loop {
        if run.graph.len() >= cfg.max_nodes {
            auto_bind(&mut run.graph);
            run.stats.auto_bound = true;
            return Ok(SynthOutcome {
                graph: run.graph,
                tree: run.tree,
                stats: run.stats,
            });
        }
        if run.stats.proposals >= cfg.max_total_proposals {
            return Err(SynthError::BudgetExhausted {
                best: run.graph,
                tree: run.tree,
                stats: run.stats,
            });
        }
        run.times = PhaseTimes::default();
        let t0 = Instant::now();
        let ctx = build_context(&run.graph, &run.cache, cfg.mode, target, cfg.token_budget, run.stats.proposals + 1)
            .expect("previews of the active path are cached");
        run.times.context = t0.elapsed();

        let t1 = Instant::now();
        let proposal = proposer.propose(&ctx);
        run.times.propose = t1.elapsed();
        run.stats.proposals += 1;
        let step = run.stats.proposals;
        let proposal = match proposal {
            Ok(p) => p,
            Err(ProposerError::Failure(message)) => {
                return Err(SynthError::ProposerFailure {
                    message,
                    tree: run.tree,
                    stats: run.stats,
                })
            }
        };
        match proposal {
            Proposal::Node(text) => {
                run.stats.nodes_generated += 1;
                let result = run.attempt(&text);
                run.stats.timings.add(&run.times);
                match result {
                    Ok((converters, node, actions)) => {
                        run.stats.repairs += actions.len();
                        run.stats.converters_inserted += converters.len();
                        run.graph.nodes.extend(converters.iter().cloned());
                        run.graph.nodes.push(node.clone());
                        let id = run.tree.add(TreeEntry {
                            kind: EntryKind::Node,
                            status: EntryStatus::Valid,
                            node: Some(node.clone()),
                            converters,
                            text,
                            parent: None,
                            children: Vec::new(),
                            error: None,
                            actions,
                            step,
                            timings: run.times,
                        });
                        run.tree.active_path.push(id);
                        run.failures_in_row = 1;
                        run.log_step(step, &node);
                    }
                    Err(f) => run.fail(EntryKind::Node, text, f, step),
                }
            }
            Proposal::End(text) => match run.finish(&text) {
                Ok(()) => {
                    run.stats.timings.add(&run.times);
                    run.tree.add(TreeEntry {
                        kind: EntryKind::End,
                        status: EntryStatus::Valid,
                        node: None,
                        converters: Vec::new(),
                        text,
                        parent: None,
                        children: Vec::new(),
                        error: None,
                        actions: Vec::new(),
                        step,
                        timings: run.times,
                    });
                    return Ok(SynthOutcome {
                        graph: run.graph,
                        tree: run.tree,
                        stats: run.stats,
                    });
                }
                Err(f) => {
                    run.stats.timings.add(&run.times);
                    run.fail(EntryKind::End, text, f, step)
                }
            },
        }
    }
}

/// Outcome of the single-shot baseline.
#[derive(Debug, Clone)]
pub struct SingleShotOutcome {
    pub document: String,
    /// The parsed graph, when the whole document is valid and renders.
    pub graph: Option<MaterialGraph>,
    pub proposals: usize,
}

/// Baseline without feedback: collects proposals into one document with no
/// checks in between, then validates and renders the result once.
pub fn single_shot(proposer: &mut dyn Proposer, cfg: &SynthConfig) -> Result<SingleShotOutcome, SynthError> {
    let reg = registry_builtin();
    let mut doc = String::from("nodes:\n");
    let mut defs: Vec<NodeDef> = Vec::new();
    let mut end = None;
    let mut proposals = 0;
    while defs.len() < cfg.max_nodes && proposals < cfg.max_total_proposals {
        let partial = MaterialGraph::assemble(defs.clone(), reg);
        let ctx = ProposerContext {
            mode: ContextMode::TextOnly,
            program_text: doc.clone(),
            image_slots: Vec::new(),
            partial,
            step: proposals + 1,
        };
        proposals += 1;
        match proposer.propose(&ctx) {
            Ok(Proposal::Node(text)) => {
                doc.push_str(&text);
                if !text.ends_with('\n') {
                    doc.push('\n');
                }
                if let Ok(NodeFragment::Node(v)) = parse_node_fragment(&text) {
                    defs.push(v);
                }
            }
            Ok(Proposal::End(text)) => {
                end = Some(text);
                break;
            }
            Err(ProposerError::Failure(message)) => {
                return Err(SynthError::ProposerFailure {
                    message,
                    tree: SynthesisTree::new(),
                    stats: SynthStats::default(),
                })
            }
        }
    }
    match &end {
        Some(t) => doc.push_str(t),
        None => {
            let mut g = MaterialGraph::assemble(defs, reg);
            auto_bind(&mut g);
            doc.push_str(&crate::transpiler::emit_outputs(&g));
        }
    }
    let graph = parse_compact(&doc).ok().filter(|g| {
        g.validate(reg).ok && crate::engine::eval_graph(g, &cfg.render).is_ok()
    });
    Ok(SingleShotOutcome {
        document: doc,
        graph,
        proposals,
    })
}
