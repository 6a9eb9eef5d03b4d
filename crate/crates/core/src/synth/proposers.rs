//! Deterministic proposers: script replay, random valid nodes, and fault
//! injection around either.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{auto_bind, Proposal, Proposer, ProposerContext, ProposerError};
use crate::corpus::random_next_node;
use crate::graph::{registry_builtin, Connection, InputType, MaterialGraph, NodeDef, ParamValue};
use crate::transpiler::{emit_node, emit_outputs, parse_compact, parse_node_fragment, NodeFragment, ParseError};

/// Emits the nodes of a fixed graph in order, then its outputs.
///
/// After backtracking it resumes from the first script node missing from the
/// partial graph, so a replay converges on the script.
#[derive(Debug, Clone)]
pub struct ReplayProposer {
    script: MaterialGraph,
}

impl ReplayProposer {
    pub fn new(script: MaterialGraph) -> Self {
        ReplayProposer { script }
    }
}

pub fn replay_proposer(script: &str) -> Result<ReplayProposer, Vec<ParseError>> {
    Ok(ReplayProposer::new(parse_compact(script)?))
}

impl Proposer for ReplayProposer {
    fn propose(&mut self, ctx: &ProposerContext) -> Result<Proposal, ProposerError> {
        let next = self
            .script
            .nodes
            .iter()
            .find(|n| ctx.partial.node(&n.name).is_none());
        Ok(match next {
            Some(n) => Proposal::Node(emit_node(n)),
            None => Proposal::End(emit_outputs(&self.script)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RandomProposerConfig {
    /// Chance that a node is a generator rather than a filter.
    pub p_generator: f64,
    /// Chance of ending the graph at a step, once `min_nodes` exist.
    pub p_end: f64,
    pub min_nodes: usize,
    /// Chance that a parameter gets a random value instead of its default.
    pub param_prob: f64,
}

impl Default for RandomProposerConfig {
    fn default() -> Self {
        RandomProposerConfig {
            p_generator: 0.3,
            p_end: 0.1,
            min_nodes: 1,
            param_prob: 0.5,
        }
    }
}

/// Schema-valid random nodes wired to earlier outputs.
#[derive(Debug, Clone)]
pub struct RandomProposer {
    cfg: RandomProposerConfig,
    rng: ChaCha8Rng,
    counter: usize,
}

pub fn random_proposer(seed: u64, cfg: RandomProposerConfig) -> RandomProposer {
    RandomProposer {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        counter: 0,
    }
}

impl Proposer for RandomProposer {
    fn propose(&mut self, ctx: &ProposerContext) -> Result<Proposal, ProposerError> {
        let g = &ctx.partial;
        if !g.is_empty() && g.len() >= self.cfg.min_nodes && self.rng.random_bool(self.cfg.p_end) {
            let mut b = g.clone();
            auto_bind(&mut b);
            return Ok(Proposal::End(emit_outputs(&b)));
        }
        self.counter += 1;
        let mut name = format!("n{}", self.counter);
        while g.node(&name).is_some() {
            self.counter += 1;
            name = format!("n{}", self.counter);
        }
        let v = random_next_node(g, &name, self.cfg.p_generator, self.cfg.param_prob, &mut self.rng);
        Ok(Proposal::Node(emit_node(&v)))
    }
}

/// Kinds of injected faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corruption {
    /// Adds a parameter the type does not have.
    UnknownParam,
    /// Rewires an input to an output of the other signal type.
    TypeMismatch,
    /// Reads a node that does not exist yet.
    ForwardRef,
    /// Breaks the text so it no longer parses.
    Syntax,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Corruption::UnknownParam,
        Corruption::TypeMismatch,
        Corruption::ForwardRef,
        Corruption::Syntax,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unknown_param" => Some(Corruption::UnknownParam),
            "type_mismatch" => Some(Corruption::TypeMismatch),
            "forward_ref" => Some(Corruption::ForwardRef),
            "syntax" => Some(Corruption::Syntax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FaultPlan {
    /// `(step, kind)`: corrupt the node proposal of that 1-based call.
    Scripted(Vec<(usize, Corruption)>),
    /// Corrupt each node proposal with probability `p`, kind drawn uniformly.
    Random { p: f64, seed: u64 },
}

/// Wraps another proposer and corrupts some of its node proposals. End
/// proposals pass through untouched.
#[derive(Debug, Clone)]
pub struct CorruptingProposer<P> {
    inner: P,
    plan: FaultPlan,
    rng: ChaCha8Rng,
    calls: usize,
    /// `(step, kind)` of every corruption applied.
    pub applied: Vec<(usize, Corruption)>,
}

pub fn corrupting_proposer<P: Proposer>(inner: P, plan: FaultPlan) -> CorruptingProposer<P> {
    let seed = match &plan {
        FaultPlan::Random { seed, .. } => *seed,
        FaultPlan::Scripted(_) => 0,
    };
    CorruptingProposer {
        inner,
        plan,
        rng: ChaCha8Rng::seed_from_u64(seed),
        calls: 0,
        applied: Vec::new(),
    }
}

pub const BOGUS_PARAM: &str = "glossiness";
const AHEAD: &str = "zz_ahead";

fn rewire_to_other_type(v: &mut NodeDef, g: &MaterialGraph) -> bool {
    let reg = registry_builtin();
    let Some(spec) = reg.interface(v) else { return false };
    for i in 0..v.connections.len() {
        let c = &v.connections[i];
        let Some(slot) = spec.input(&c.dst_slot) else { continue };
        let want = match &slot.ty {
            InputType::Fixed(t) => *t,
            InputType::SameAs(other) => match v
                .connection(other)
                .and_then(|o| g.slot_type(&o.src_node, &o.src_slot))
            {
                Some(t) => t,
                None => continue,
            },
            InputType::Any => continue,
        };
        let wrong = g.nodes.iter().rev().find_map(|n| {
            n.output_types
                .iter()
                .find(|(_, t)| **t != want)
                .map(|(s, _)| (n.name.clone(), s.clone()))
        });
        if let Some((node, out)) = wrong {
            let dst = v.connections[i].dst_slot.clone();
            v.connections[i] = Connection::new(&dst, &node, &out);
            return true;
        }
    }
    false
}

/// Applies `kind` to a node proposal. Falls back to a forward reference when
/// a type mismatch cannot be built from the partial graph.
pub fn corrupt(text: &str, kind: Corruption, g: &MaterialGraph) -> String {
    if kind == Corruption::Syntax {
        return match text.find("type: ") {
            Some(i) => format!("{}type {}", &text[..i], &text[i + "type: ".len()..]),
            None => format!("{text}  ::\n"),
        };
    }
    let Ok(NodeFragment::Node(mut v)) = parse_node_fragment(text) else {
        return text.to_string();
    };
    match kind {
        Corruption::UnknownParam => {
            v.params.insert(BOGUS_PARAM.into(), ParamValue::Float(0.5));
        }
        Corruption::TypeMismatch if rewire_to_other_type(&mut v, g) => {}
        _ => match v.connections.first_mut() {
            Some(c) => c.src_node = AHEAD.into(),
            None => v.connections.push(Connection::new("input", AHEAD, "output")),
        },
    }
    emit_node(&v)
}

impl<P: Proposer> Proposer for CorruptingProposer<P> {
    fn propose(&mut self, ctx: &ProposerContext) -> Result<Proposal, ProposerError> {
        self.calls += 1;
        let step = self.calls;
        let p = self.inner.propose(ctx)?;
        let Proposal::Node(text) = p else { return Ok(p) };
        let kind = match &self.plan {
            FaultPlan::Scripted(list) => list.iter().find(|(s, _)| *s == step).map(|(_, k)| *k),
            FaultPlan::Random { p, .. } => {
                let hit = self.rng.random_bool(*p);
                let kind = *Corruption::ALL.choose(&mut self.rng).expect("non-empty");
                hit.then_some(kind)
            }
        };
        Ok(Proposal::Node(match kind {
            Some(k) => {
                self.applied.push((step, k));
                corrupt(&text, k, &ctx.partial)
            }
            None => text,
        }))
    }
}
