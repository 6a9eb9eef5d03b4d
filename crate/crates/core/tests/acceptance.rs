//! The ten acceptance criteria, one test each. Every test prints a single
//! `[PASS]`/`[FAIL]` line to stderr (bypassing capture) before asserting.

use std::io::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use procmat::corpus::{random_graph, CorpusOptions};
use procmat::engine::{eval_graph, eval_graph_periodic, eval_node, ChannelMaps, ImageBuffer, RenderCache};
use procmat::graph::{GRAPH_INPUT, SUBGRAPH};
use procmat::metrics::{
    consec_match_score, gram_l1, kid, mean_ner, ner, ner_ratio, FeatureMap, FeatureMatrix, MaskedProgram,
};
use procmat::preprocess::{standardize, Standardized};
use procmat::synth::{
    corrupting_proposer, optimize_params, random_proposer, single_shot, synthesize, Corruption, EntryStatus,
    FaultPlan, Proposal, Proposer, ProposerContext, ProposerError, RandomProposerConfig, ReplayProposer,
    SynthConfig, SynthStats, ContextMode,
};
use procmat::transpiler::{compression_ratio, emit_compact, emit_node, emit_verbose, parse_compact, parse_verbose};
use procmat::{registry_builtin, Channel, Connection, MaterialGraph, NodeDef, ParamValue, RenderSettings, SignalType};

type Check = Result<String, String>;

/// Prints the verdict line, then fails the test on error.
fn report(n: u32, name: &str, r: Check) {
    let line = match &r {
        Ok(detail) => format!("[PASS] criterion {n:>2} {name}: {detail}"),
        Err(detail) => format!("[FAIL] criterion {n:>2} {name}: {detail}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(e) = r {
        panic!("criterion {n} failed: {e}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reg() -> &'static procmat::Registry {
    registry_builtin()
}

fn settings(res: u32) -> RenderSettings {
    RenderSettings::new(res, 1).unwrap()
}

fn synth_cfg() -> SynthConfig {
    SynthConfig {
        render: settings(16),
        mode: ContextMode::TextOnly,
        ..Default::default()
    }
}

fn push(g: &mut MaterialGraph, n: NodeDef) {
    g.try_push(n, reg()).unwrap();
}

fn bits(a: &ImageBuffer) -> Vec<u32> {
    a.data.iter().map(|v| v.to_bits()).collect()
}

fn same_maps(a: &ChannelMaps, b: &ChannelMaps) -> bool {
    a.len() == b.len()
        && a.iter().all(|(ch, img)| {
            b.get(ch)
                .is_some_and(|o| o.same_shape(img) && bits(o) == bits(img))
        })
}

// 1 ------------------------------------------------------------------------

#[test]
fn c01_round_trip_losslessness() {
    let t0 = Instant::now();
    let opts = CorpusOptions { max_nodes: 128, ..Default::default() };
    let r = (|| -> Check {
        let mut nodes = 0;
        for seed in 1..=500u64 {
            let g = random_graph(seed, &opts);
            nodes += g.len();
            let text = emit_compact(&g);
            let back = parse_compact(&text).map_err(|e| format!("seed {seed}: {e:?}"))?;
            ensure(back == g, || format!("seed {seed}: SBSC structure differs"))?;
            ensure(emit_compact(&back) == text, || format!("seed {seed}: SBSC not a fixpoint"))?;
            let xml = emit_verbose(&g);
            let vb = parse_verbose(&xml).map_err(|e| format!("seed {seed}: {e:?}"))?;
            ensure(vb == g, || format!("seed {seed}: SBSV structure differs"))?;
            let across = parse_verbose(&emit_verbose(&back)).unwrap();
            ensure(across == g, || format!("seed {seed}: SBSC→SBSV differs"))?;
        }
        let secs = t0.elapsed().as_secs_f64();
        ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
        Ok(format!("500 graphs ({nodes} nodes) lossless both ways in {secs:.1}s"))
    })();
    report(1, "round-trip losslessness", r);
}

// 2 ------------------------------------------------------------------------

fn chain(n: usize) -> MaterialGraph {
    let mut g = MaterialGraph::new();
    push(&mut g, NodeDef::new("n0", "perlin_noise"));
    for k in 1..n {
        let ty = if k % 2 == 0 { "invert" } else { "levels" };
        push(&mut g, NodeDef::new(&format!("n{k}"), ty).with_input("input", &format!("n{}", k - 1), "output"));
    }
    g.bind(Channel::Height, &format!("n{}", n - 1), "output");
    g
}

/// Removals for `k` consecutive failures starting at `depth`, by simulation.
fn schedule(depth: usize, k: usize) -> Vec<usize> {
    let mut remaining = depth;
    (1..=k)
        .map(|i| {
            let r = 2usize.pow(i as u32 - 1).min(remaining);
            remaining -= r;
            r
        })
        .collect()
}

#[test]
fn c02_backtracking_schedule() {
    let script = chain(24);
    let traces: Vec<(usize, usize)> = vec![
        (15, 4), (16, 4), (20, 4), (23, 4), (10, 4), (7, 4), (5, 3), (4, 3), (3, 3), (2, 2),
        (1, 1), (0, 1), (0, 3), (15, 5), (12, 5), (8, 2), (6, 1), (9, 3), (11, 4), (22, 5),
        (14, 4), (18, 3),
    ];
    let r = (|| -> Check {
        let mut saw_full = false;
        let mut saturated = 0;
        for &(depth, k) in &traces {
            let plan = FaultPlan::Scripted((0..k).map(|j| (depth + 1 + j, Corruption::ForwardRef)).collect());
            let mut p = corrupting_proposer(ReplayProposer::new(script.clone()), plan);
            let out = synthesize(&mut p, &synth_cfg(), None).map_err(|e| e.to_string())?;
            let want = schedule(depth, k);
            ensure(out.stats.backtracks == want, || {
                format!("depth {depth}, {k} failures: got {:?}, want {want:?}", out.stats.backtracks)
            })?;
            ensure(out.graph == script, || format!("depth {depth}: did not recover"))?;
            saw_full |= want == [1, 2, 4, 8];
            saturated += usize::from(want.iter().enumerate().any(|(i, &r)| r < 1 << i));
        }
        ensure(saw_full, || "no trace produced 1,2,4,8".into())?;
        Ok(format!(
            "{} traces match; 1,2,4,8 reproduced; {saturated} saturated",
            traces.len()
        ))
    })();
    report(2, "backtracking schedule", r);
}

// 3 ------------------------------------------------------------------------

struct Scripted(Vec<Proposal>, usize);

impl Proposer for Scripted {
    fn propose(&mut self, _: &ProposerContext) -> Result<Proposal, ProposerError> {
        let p = self.0[self.1.min(self.0.len() - 1)].clone();
        self.1 += 1;
        Ok(p)
    }
}

/// (name, valid prefix, failing node, outputs block)
fn repair_fixtures() -> Vec<(&'static str, Vec<NodeDef>, NodeDef, &'static str)> {
    vec![
        (
            "extraneous param",
            vec![NodeDef::new("c", "checker")],
            NodeDef::new("i", "invert")
                .with_input("input", "c", "output")
                .with_param("smoothness", ParamValue::Float(0.2)),
            "outputs:\n  height: i.output\n",
        ),
        (
            "grayscale conversion",
            vec![
                NodeDef::new("p", "perlin_noise"),
                NodeDef::new("col", "gradient_map").with_input("input", "p", "output"),
            ],
            NodeDef::new("bl", "blur_box").with_input("input", "col", "output"),
            "outputs:\n  basecolor: col.output\n  height: bl.output\n",
        ),
        (
            "gradient map",
            vec![
                NodeDef::new("u", "uniform_color").with_output_type("output", SignalType::Color),
                NodeDef::new("c", "checker"),
            ],
            NodeDef::new("mix", "blend")
                .with_input("foreground", "c", "output")
                .with_input("background", "u", "output"),
            "outputs:\n  basecolor: mix.output\n",
        ),
    ]
}

fn repair_script(prefix: &[NodeDef], bad: &NodeDef, outputs: &str) -> Vec<Proposal> {
    let mut v: Vec<Proposal> = prefix.iter().map(|n| Proposal::Node(emit_node(n))).collect();
    v.push(Proposal::Node(emit_node(bad)));
    v.push(Proposal::End(outputs.into()));
    v
}

#[test]
fn c03_repair_rules() {
    let r = (|| -> Check {
        for (name, prefix, bad, outputs) in repair_fixtures() {
            let script = repair_script(&prefix, &bad, outputs);
            let on = synthesize(&mut Scripted(script.clone(), 0), &synth_cfg(), None)
                .map_err(|e| format!("{name}: {e}"))?;
            ensure(on.stats.repairs >= 1 && on.stats.nodes_discarded == 0, || {
                format!("{name}: repair on gave {:?}", on.stats)
            })?;
            ensure(on.graph.validate(reg()).ok, || format!("{name}: repaired graph invalid"))?;
            eval_graph(&on.graph, &settings(32)).map_err(|e| format!("{name}: {e}"))?;
            ensure(on.graph.node(&bad.name).is_some(), || format!("{name}: node missing"))?;

            // without repair the node is thrown away; the run then ends on
            // the fallback outputs block or the budget
            let off_cfg = SynthConfig { repair_enabled: false, max_total_proposals: 12, ..synth_cfg() };
            let stats = match synthesize(&mut Scripted(script, 0), &off_cfg, None) {
                Ok(o) => o.stats,
                Err(procmat::synth::SynthError::BudgetExhausted { stats, .. }) => stats,
                Err(e) => return Err(format!("{name}: {e}")),
            };
            ensure(stats.nodes_discarded >= 1, || format!("{name}: repair off kept the node"))?;
        }

        // stochastic runs: same faulty proposer with and without repair
        let script = {
            let mut g = MaterialGraph::new();
            for n in repair_fixtures().into_iter().flat_map(|(_, p, _, _)| p) {
                if g.node(&n.name).is_none() {
                    push(&mut g, n);
                }
            }
            push(&mut g, NodeDef::new("inv", "invert").with_input("input", "c", "output"));
            push(&mut g, NodeDef::new("lv", "levels").with_input("input", "p", "output"));
            push(
                &mut g,
                NodeDef::new("bl", "blend")
                    .with_input("foreground", "col", "output")
                    .with_input("background", "u", "output")
                    .with_input("mask", "inv", "output"),
            );
            push(&mut g, NodeDef::new("nh", "normal_from_height").with_input("input", "lv", "output"));
            push(&mut g, NodeDef::new("gm", "gradient_map").with_input("input", "lv", "output"));
            g.bind(Channel::BaseColor, "bl", "output");
            g.bind(Channel::Normal, "nh", "output");
            g.bind(Channel::Height, "lv", "output");
            g
        };
        let mut worse = Vec::new();
        let (mut sum_on, mut sum_off) = (0.0, 0.0);
        for seed in 0..200u64 {
            let run = |repair: bool| {
                let plan = FaultPlan::Random { p: 0.25, seed };
                let mut p = corrupting_proposer(ReplayProposer::new(script.clone()), plan);
                let cfg = SynthConfig { repair_enabled: repair, ..synth_cfg() };
                synthesize(&mut p, &cfg, None).map(|o| ner(&o.stats)).map_err(|e| e.to_string())
            };
            let (a, b) = (run(true)?, run(false)?);
            sum_on += a;
            sum_off += b;
            if a > b {
                worse.push((seed, a, b));
            }
        }
        ensure(worse.is_empty(), || {
            format!("{} of 200 seeds had NER(on) > NER(off), e.g. {:?}", worse.len(), &worse[..worse.len().min(3)])
        })?;
        Ok(format!(
            "3 fixtures repaired and rendered, discarded without repair; mean NER on {:.3} ≤ off {:.3} on all 200 seeds",
            sum_on / 200.0,
            sum_off / 200.0
        ))
    })();
    report(3, "repair rules", r);
}

// 4 ------------------------------------------------------------------------

#[test]
fn c04_tree_search_benefit() {
    const TRIALS: u64 = 200;
    let rcfg = RandomProposerConfig { min_nodes: 8, ..Default::default() };
    let cfg = SynthConfig { max_nodes: 32, ..synth_cfg() };
    let r = (|| -> Check {
        let (mut tree_ok, mut shot_ok) = (0u64, 0u64);
        for seed in 0..TRIALS {
            let faulty = |salt: u64| {
                corrupting_proposer(
                    random_proposer(seed, rcfg.clone()),
                    FaultPlan::Random { p: 0.15, seed: seed ^ salt },
                )
            };
            let mut p = faulty(0x5eed);
            if let Ok(o) = synthesize(&mut p, &cfg, None) {
                if o.graph.len() >= 8 && o.graph.validate(reg()).ok {
                    tree_ok += 1;
                }
            }
            let mut p = faulty(0x5eed);
            let s = single_shot(&mut p, &cfg).map_err(|e| e.to_string())?;
            if s.graph.is_some_and(|g| g.len() >= 8) {
                shot_ok += 1;
            }
        }
        let n = TRIALS as f64;
        let (p1, p2) = (tree_ok as f64 / n, shot_ok as f64 / n);
        let pooled = (tree_ok + shot_ok) as f64 / (2.0 * n);
        let se = (pooled * (1.0 - pooled) * 2.0 / n).sqrt();
        let z = if se > 0.0 { (p1 - p2) / se } else { f64::INFINITY };
        let pval = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z);
        let detail = format!("tree search {tree_ok}/{TRIALS}, single shot {shot_ok}/{TRIALS}, z = {z:.2}, one-sided p = {pval:.2e}");
        ensure(p1 > p2 && pval < 0.01, || detail.clone())?;
        Ok(detail)
    })();
    report(4, "tree-search benefit", r);
}

// 5 ------------------------------------------------------------------------

/// Adds invert∘invert, an opacity-0 blend and (for grayscale) a normal map
/// behind every node; returns the graph and the probes to check.
fn with_probes(g: &MaterialGraph) -> (MaterialGraph, Vec<(String, String, String, Option<String>)>) {
    let mut h = g.clone();
    push(&mut h, NodeDef::new("probe_g", "uniform_color").with_output_type("output", SignalType::Grayscale).with_param("luminance", ParamValue::Float(0.123)));
    push(&mut h, NodeDef::new("probe_c", "uniform_color").with_output_type("output", SignalType::Color));
    let mut probes = Vec::new();
    for n in &g.nodes {
        let Some((slot, ty)) = n.output_types.iter().next().map(|(s, t)| (s.clone(), *t)) else { continue };
        let base = &n.name;
        let (i1, i2, bl) = (format!("{base}__i1"), format!("{base}__i2"), format!("{base}__bl"));
        push(&mut h, NodeDef::new(&i1, "invert").with_input("input", base, &slot));
        push(&mut h, NodeDef::new(&i2, "invert").with_input("input", &i1, "output"));
        let fg = if ty == SignalType::Grayscale { "probe_g" } else { "probe_c" };
        push(
            &mut h,
            NodeDef::new(&bl, "blend")
                .with_input("foreground", fg, "output")
                .with_input("background", base, &slot)
                .with_param("opacity", ParamValue::Float(0.0))
                .with_param("mode", ParamValue::Enum("add".into())),
        );
        let nm = (ty == SignalType::Grayscale).then(|| {
            let nm = format!("{base}__nm");
            push(&mut h, NodeDef::new(&nm, "normal_from_height").with_input("input", base, &slot));
            nm
        });
        probes.push((format!("{base}.{slot}"), i2, bl, nm));
    }
    (h, probes)
}

#[test]
fn c05_engine_determinism_and_invariants() {
    let s = settings(32);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new()
        .num_threads(rayon::current_num_threads().max(4))
        .build()
        .unwrap();
    let opts = CorpusOptions { max_nodes: 24, ..Default::default() };
    let r = (|| -> Check {
        let mut checked = 0;
        for seed in 0..100u64 {
            let g = random_graph(seed, &opts);
            let a = one.install(|| eval_graph(&g, &s)).map_err(|e| e.to_string())?;
            let b = many.install(|| eval_graph(&g, &s)).map_err(|e| e.to_string())?;
            ensure(same_maps(&a, &b), || format!("seed {seed}: thread count changed the render"))?;

            let two = eval_graph_periodic(&g, &s, 2).map_err(|e| e.to_string())?;
            for ch in Channel::ALL {
                let (x, y) = (&a[&ch], &two[&ch]);
                let r = x.width;
                for py in 0..2 * r {
                    for px in 0..2 * r {
                        if y.pixel(px, py) != x.pixel(px % r, py % r) {
                            return Err(format!("seed {seed}: {ch:?} not periodic at ({px},{py})"));
                        }
                    }
                }
            }

            let (h, probes) = with_probes(&g);
            let cache = RenderCache::new(s);
            let get = |name: &str| eval_node(&h, name, &cache).map_err(|e| e.to_string());
            for (src, i2, bl, nm) in probes {
                let (node, slot) = src.split_once('.').unwrap();
                let orig = procmat::engine::eval_node_outputs(&h, node, &cache)
                    .map_err(|e| e.to_string())?
                    .slot(slot)
                    .cloned()
                    .unwrap();
                ensure(bits(&get(&i2)?) == bits(&orig), || format!("seed {seed}: invert² ≠ id at {src}"))?;
                ensure(bits(&get(&bl)?) == bits(&orig), || format!("seed {seed}: opacity-0 blend ≠ id at {src}"))?;
                if let Some(nm) = nm {
                    let n = get(&nm)?;
                    for px in n.data.chunks(4) {
                        let v: Vec<f64> = px[..3].iter().map(|c| 2.0 * *c as f64 - 1.0).collect();
                        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        ensure((len - 1.0).abs() <= 1e-5, || format!("seed {seed}: |n| = {len} at {src}"))?;
                    }
                }
                checked += 1;
            }
        }
        Ok(format!("100 graphs bit-identical on 1 vs {} threads; tiling, invert², opacity-0 and unit normals hold on {checked} node outputs", many.current_num_threads()))
    })();
    report(5, "engine determinism & invariants", r);
}

// 6 ------------------------------------------------------------------------

/// Replaces node `i` by a subgraph `depth` levels deep that computes the same
/// thing. Consumers read the new node's `channel` slot.
fn nest(v: &NodeDef, scope: &MaterialGraph, depth: usize) -> NodeDef {
    let out_ty = v.output_types["output"];
    let channel = if out_ty == SignalType::Color { Channel::BaseColor } else { Channel::Height };
    let mut inner = MaterialGraph::new();
    for c in &v.connections {
        let t = scope.slot_type(&c.src_node, &c.src_slot).unwrap();
        push(&mut inner, NodeDef::new(&c.dst_slot, GRAPH_INPUT).with_output_type("output", t));
    }
    let mut core = v.clone();
    core.name = "core".into();
    core.connections = v.connections.iter().map(|c| Connection::new(&c.dst_slot, &c.dst_slot, "output")).collect();
    core.output_types.clear();
    let (core, slot) = if depth > 1 {
        let mut typed = core.clone();
        inner.check_candidate(&mut typed, reg());
        (nest(&typed, &inner, depth - 1), channel.as_str().to_string())
    } else {
        (core, "output".to_string())
    };
    push(&mut inner, core);
    inner.bind(channel, "core", &slot);
    let mut sg = NodeDef::new(&v.name, SUBGRAPH).with_subgraph(inner);
    sg.connections = v.connections.clone();
    sg
}

fn inject(g: &MaterialGraph, seed: u64) -> MaterialGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible: Vec<usize> = (0..g.len()).filter(|&i| !g.nodes[i].connections.is_empty()).collect();
    let picked: Vec<usize> = eligible.into_iter().filter(|_| rng.random_bool(0.5)).take(3).collect();
    // wrapped node name → slot its consumers now read
    let mut renamed: Vec<(String, &'static str)> = Vec::new();
    let mut out = MaterialGraph::new();
    for (i, n) in g.nodes.iter().enumerate() {
        let mut v = n.clone();
        for c in &mut v.connections {
            if let Some((_, slot)) = renamed.iter().find(|(name, _)| *name == c.src_node) {
                if c.src_slot == "output" {
                    c.src_slot = slot.to_string();
                }
            }
        }
        if picked.contains(&i) {
            let mut typed = v.clone();
            out.check_candidate(&mut typed, reg());
            let slot = if typed.output_types["output"] == SignalType::Color { "basecolor" } else { "height" };
            v = nest(&typed, &out, rng.random_range(1..=3));
            renamed.push((n.name.clone(), slot));
        }
        push(&mut out, v);
    }
    out.outputs = g.outputs.clone();
    out.extra_outputs = g.extra_outputs.clone();
    for r in out.outputs.values_mut().chain(out.extra_outputs.values_mut()) {
        if let Some((_, slot)) = renamed.iter().find(|(name, _)| *name == r.node) {
            if r.slot == "output" {
                r.slot = slot.to_string();
            }
        }
    }
    out
}

#[test]
fn c06_flatten_prune_preservation() {
    let s = settings(32);
    let opts = CorpusOptions {
        max_nodes: 40,
        dead_chain_prob: 1.0,
        extra_output_prob: 0.3,
        ..Default::default()
    };
    let r = (|| -> Check {
        let mut nested = 0;
        for seed in 0..100u64 {
            let g = inject(&random_graph(seed + 1000, &opts), seed);
            ensure(g.validate(reg()).ok, || format!("seed {seed}: injected graph invalid: {}", g.validate(reg())))?;
            nested += usize::from(g.nodes.iter().any(|n| n.subgraph.is_some()));
            let flat = match standardize(&g, 10_000).map_err(|e| e.to_string())? {
                Standardized::Accepted(f) => f,
                Standardized::Rejected(v) => return Err(format!("seed {seed}: rejected {}", v.summary())),
            };
            let (a, b) = (eval_graph(&g, &s).map_err(|e| e.to_string())?, eval_graph(&flat, &s).map_err(|e| e.to_string())?);
            ensure(same_maps(&a, &b), || format!("seed {seed}: standardized render differs"))?;
            ensure(flat.nodes.iter().all(|n| n.subgraph.is_none()), || format!("seed {seed}: not flat"))?;
            let again = standardize(&flat, 10_000).map_err(|e| e.to_string())?;
            ensure(again.graph() == Some(&flat), || format!("seed {seed}: standardize not idempotent"))?;
        }
        ensure(nested >= 50, || format!("only {nested} graphs received subgraphs"))?;
        Ok(format!("100 graphs ({nested} with nested subgraphs) render bit-identically after standardize; idempotent"))
    })();
    report(6, "flatten/prune render preservation", r);
}

// 7 ------------------------------------------------------------------------

fn kid_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let d = x[0].len() as f64;
    let k = |a: &[f64], b: &[f64]| {
        let mut dot = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
        }
        (dot / d + 1.0).powi(3)
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                kxx += k(&x[i], &x[j]);
            }
        }
    }
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                kyy += k(&y[i], &y[j]);
            }
        }
    }
    for a in x {
        for b in y {
            kxy += k(a, b);
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            let mut k = 0;
            while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                k += 1;
            }
            best = best.max(k);
        }
    }
    best
}

fn gram_oracle(c: usize, p: usize, f: &[f64]) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            for k in 0..p {
                g[i][j] += f[i * p + k] * f[j * p + k];
            }
            g[i][j] /= (c * p) as f64;
        }
    }
    g
}

#[test]
fn c07_metric_oracles() {
    let r = (|| -> Check {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let d = rng.random_range(1..=16);
            let (m, n) = (rng.random_range(2..=32), rng.random_range(2..=32));
            let mut rows = |r: usize| -> Vec<Vec<f64>> {
                (0..r).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
            };
            let (x, y) = (rows(m), rows(n));
            let got = kid(&FeatureMatrix::from_rows(&x).unwrap(), &FeatureMatrix::from_rows(&y).unwrap(), None)
                .map_err(|e| e.to_string())?;
            let want = kid_oracle(&x, &y);
            worst = worst.max((got - want).abs());
        }
        ensure(worst <= 1e-9, || format!("kid off by {worst:e}"))?;
        let hand = kid(
            &FeatureMatrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap(),
            &FeatureMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            None,
        )
        .unwrap();
        ensure((hand - 7.0).abs() <= 1e-12, || format!("d=1 case gave {hand}"))?;

        let alphabet = ["a", "b", "c", "d"];
        for case in 0..100 {
            let seq = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
                (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect()
            };
            let n = rng.random_range(1..=200);
            let cand = seq(&mut rng, n);
            let n_refs = rng.random_range(1..=3);
            let refs: Vec<Vec<String>> = (0..n_refs)
                .map(|_| {
                    let len = rng.random_range(0..=200);
                    seq(&mut rng, len)
                })
                .collect();
            let want = refs.iter().map(|r| lcs_oracle(&cand, r)).max().unwrap() as f64 / n as f64;
            let corpus: Vec<MaskedProgram> = refs.into_iter().map(|tokens| MaskedProgram { tokens }).collect();
            let got = consec_match_score(&MaskedProgram { tokens: cand }, &corpus);
            ensure(got == want, || format!("case {case}: consec {got} vs {want}"))?;
        }

        let mut gworst = 0.0f64;
        for _ in 0..100 {
            let layers = rng.random_range(1..=3);
            let (mut fa, mut fb, mut want) = (Vec::new(), Vec::new(), 0.0);
            for _ in 0..layers {
                let (c, p) = (rng.random_range(1..=6), rng.random_range(1..=12));
                let a: Vec<f64> = (0..c * p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..c * p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (ga, gb) = (gram_oracle(c, p, &a), gram_oracle(c, p, &b));
                let mut diff = 0.0;
                for i in 0..c {
                    for j in 0..c {
                        diff += (ga[i][j] - gb[i][j]).abs();
                    }
                }
                want += diff / (c * c) as f64;
                fa.push(FeatureMap::new(c, p, a).unwrap());
                fb.push(FeatureMap::new(c, p, b).unwrap());
            }
            let got = gram_l1(&fa, &fb).map_err(|e| e.to_string())?;
            gworst = gworst.max((got - want).abs());
        }
        ensure(gworst <= 1e-9, || format!("gram_l1 off by {gworst:e}"))?;
        Ok(format!("kid max err {worst:.1e} (d=1 case = {hand}); consec exact on 100; gram_l1 max err {gworst:.1e}"))
    })();
    report(7, "metric oracle equivalence", r);
}

// 8 ------------------------------------------------------------------------

#[test]
fn c08_compression() {
    let opts = CorpusOptions { max_nodes: 128, ..Default::default() };
    let ratios: Vec<f64> = (1..=500u64).map(|s| compression_ratio(&random_graph(s, &opts))).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let detail = format!("mean compression ratio {mean:.4} over 500 graphs (min {min:.4}), target ≥ 0.70");
    report(8, "compression", if mean >= 0.70 { Ok(detail) } else { Err(detail) });
}

// 9 ------------------------------------------------------------------------

struct Fixture {
    graph: MaterialGraph,
    node: &'static str,
    param: &'static str,
    component: usize,
    start: f64,
}

fn set_param(g: &mut MaterialGraph, node: &str, param: &str, component: usize, x: f64) {
    let n = g.nodes.iter_mut().find(|n| n.name == node).unwrap();
    match n.params.get_mut(param).unwrap() {
        ParamValue::Float(v) => *v = x,
        ParamValue::FloatTuple(v) => v[component] = x,
        other => panic!("{other:?} is not continuous"),
    }
}

fn get_param(g: &MaterialGraph, node: &str, param: &str, component: usize) -> f64 {
    match &g.node(node).unwrap().params[param] {
        ParamValue::Float(v) => *v,
        ParamValue::FloatTuple(v) => v[component],
        other => panic!("{other:?} is not continuous"),
    }
}

fn build(nodes: Vec<NodeDef>, base: &str) -> MaterialGraph {
    let mut g = MaterialGraph::new();
    for n in nodes {
        push(&mut g, n);
    }
    g.bind(Channel::BaseColor, base, "output");
    g
}

fn f(v: f64) -> ParamValue {
    ParamValue::Float(v)
}

fn ft(v: &[f64]) -> ParamValue {
    ParamValue::FloatTuple(v.to_vec())
}

fn gray(name: &str, l: f64) -> NodeDef {
    NodeDef::new(name, "uniform_color")
        .with_output_type("output", SignalType::Grayscale)
        .with_param("luminance", f(l))
}

fn color(name: &str, v: &[f64]) -> NodeDef {
    NodeDef::new(name, "uniform_color").with_output_type("output", SignalType::Color).with_param("value", ft(v))
}

fn ramp() -> NodeDef {
    NodeDef::new("r", "gradient_linear")
}

fn opt_fixtures() -> Vec<Fixture> {
    let fx = |graph, node, param, component, start| Fixture { graph, node, param, component, start };
    let levels = |p: &'static str, v: f64| {
        build(vec![ramp(), NodeDef::new("l", "levels").with_input("input", "r", "output").with_param(p, f(v))], "l")
    };
    let checker = |p: &'static str, v: f64| build(vec![NodeDef::new("c", "checker").with_param(p, f(v))], "c");
    let gmap = |p: &'static str, v: &[f64]| {
        build(vec![ramp(), NodeDef::new("g", "gradient_map").with_input("input", "r", "output").with_param(p, ft(v))], "g")
    };
    let blend = |mode: &str, op: f64| {
        build(
            vec![
                ramp(),
                NodeDef::new("c", "checker").with_param("tiles", ParamValue::Int(2)),
                NodeDef::new("v", "gradient_linear").with_param("direction", ParamValue::Enum("vertical".into())),
                // the foreground has no continuous params, so opacity is not
                // traded against its levels
                NodeDef::new("b", "blend")
                    .with_input("foreground", "v", "output")
                    .with_input("background", "c", "output")
                    .with_param("mode", ParamValue::Enum(mode.into()))
                    .with_param("opacity", f(op)),
            ],
            "b",
        )
    };
    vec![
        fx(build(vec![gray("u", 0.3)], "u"), "u", "luminance", 0, 0.8),
        fx(build(vec![gray("u", 0.65)], "u"), "u", "luminance", 0, 0.1),
        fx(build(vec![color("u", &[0.2, 0.5, 0.5, 1.0])], "u"), "u", "value", 0, 0.9),
        fx(build(vec![color("u", &[0.4, 0.7, 0.1, 1.0])], "u"), "u", "value", 1, 0.05),
        fx(build(vec![color("u", &[0.4, 0.7, 0.35, 1.0])], "u"), "u", "value", 2, 0.95),
        fx(checker("low", 0.2), "c", "low", 0, 0.6),
        fx(checker("high", 0.8), "c", "high", 0, 0.3),
        fx(levels("out_low", 0.3), "l", "out_low", 0, 0.0),
        fx(levels("out_high", 0.6), "l", "out_high", 0, 1.0),
        fx(levels("in_high", 0.8), "l", "in_high", 0, 1.0),
        fx(levels("in_low", 0.25), "l", "in_low", 0, 0.0),
        fx(levels("gamma", 2.0), "l", "gamma", 0, 1.0),
        fx(blend("copy", 0.4), "b", "opacity", 0, 1.0),
        fx(blend("add", 0.3), "b", "opacity", 0, 0.9),
        fx(blend("multiply", 0.7), "b", "opacity", 0, 0.1),
        fx(gmap("low", &[0.1, 0.0, 0.0, 1.0]), "g", "low", 0, 0.6),
        fx(gmap("high", &[1.0, 0.3, 1.0, 1.0]), "g", "high", 1, 0.9),
        fx(
            build(vec![NodeDef::new("s", "polygon_shape").with_param("radius", f(0.3))], "s"),
            "s",
            "radius",
            0,
            0.12,
        ),
        fx(
            build(vec![NodeDef::new("s", "polygon_shape").with_param("smoothness", f(0.1))], "s"),
            "s",
            "smoothness",
            0,
            0.2,
        ),
        fx(
            build(
                vec![NodeDef::new("n", "fbm_noise").with_param("persistence", f(0.7))],
                "n",
            ),
            "n",
            "persistence",
            0,
            0.2,
        ),
    ]
}

#[test]
fn c09_parameter_optimization() {
    let s = settings(64);
    let r = (|| -> Check {
        let mut lines = Vec::new();
        let mut failures = Vec::new();
        for (k, fx) in opt_fixtures().into_iter().enumerate() {
            let truth = get_param(&fx.graph, fx.node, fx.param, fx.component);
            let spec = reg().get(&fx.graph.node(fx.node).unwrap().type_name).unwrap();
            let (lo, hi) = spec.param(fx.param).unwrap().range.unwrap();
            let target = procmat::engine::render_composite(&fx.graph, &s).map_err(|e| e.to_string())?;
            let mut start = fx.graph.clone();
            set_param(&mut start, fx.node, fx.param, fx.component, fx.start);
            let rep = optimize_params(&start, &target, 500, &s, k as u64);
            let got = get_param(&rep.graph, fx.node, fx.param, fx.component);
            let err = (got - truth).abs() / (hi - lo);
            let (l0, l1) = (rep.initial_loss.unwrap(), rep.final_loss.unwrap());
            lines.push(format!("{}.{}[{}] {truth}→{got:.4} ({:.2}% of range)", fx.node, fx.param, fx.component, err * 100.0));
            if err > 0.02 || l1 > l0 || rep.evaluations > 500 {
                failures.push(format!("fixture {k}: {} (loss {l0:.4}→{l1:.4}, {} renders)", lines.last().unwrap(), rep.evaluations));
            }
        }
        ensure(failures.is_empty(), || format!("{}/20 recovered; {}", 20 - failures.len(), failures.join("; ")))?;
        Ok(format!("20/20 fixtures recovered within 2% of range in ≤500 renders; loss never increased"))
    })();
    report(9, "parameter optimization", r);
}

// 10 -----------------------------------------------------------------------

fn stats(generated: usize, discarded: usize) -> SynthStats {
    SynthStats { nodes_generated: generated, nodes_discarded: discarded, ..Default::default() }
}

#[test]
fn c10_ner_accounting() {
    let r = (|| -> Check {
        ensure(ner(&stats(20, 0)) == 0.0, || "0/20".into())?;
        ensure(ner(&stats(20, 3)) == ner_ratio(3, 20) && (ner(&stats(20, 3)) - 0.15).abs() < 1e-15, || "3/20".into())?;
        ensure((mean_ner(&[0.0, 0.2, 0.4]) - 0.2).abs() < 1e-15, || "mean of 0, 0.2, 0.4".into())?;

        // three failures at depth 0 on a 17-node script: 3 of 20
        let script = chain(17);
        let plan = FaultPlan::Scripted(vec![(1, Corruption::Syntax), (2, Corruption::UnknownParam), (3, Corruption::ForwardRef)]);
        let mut p = corrupting_proposer(ReplayProposer::new(script.clone()), plan);
        let cfg = SynthConfig { repair_enabled: false, ..synth_cfg() };
        let o = synthesize(&mut p, &cfg, None).map_err(|e| e.to_string())?;
        ensure((o.stats.nodes_generated, o.stats.nodes_discarded) == (20, 3), || format!("trace A: {:?}", o.stats))?;
        ensure((o.stats.ner() - 0.15).abs() < 1e-15, || "trace A ratio".into())?;
        ensure(o.tree.count(EntryStatus::Invalid) == 3, || "trace A invalid entries".into())?;

        // two isolated failures deeper in a 16-node script: each discards the
        // proposal and one valid node, which is then proposed again
        let script = chain(16);
        let plan = FaultPlan::Scripted(vec![(4, Corruption::ForwardRef), (10, Corruption::ForwardRef)]);
        let mut p = corrupting_proposer(ReplayProposer::new(script.clone()), plan);
        let o = synthesize(&mut p, &cfg, None).map_err(|e| e.to_string())?;
        ensure((o.stats.nodes_generated, o.stats.nodes_discarded) == (20, 4), || format!("trace B: {:?}", o.stats))?;
        ensure((o.stats.ner() - 0.2).abs() < 1e-15, || "trace B ratio".into())?;

        let mut p = ReplayProposer::new(chain(30));
        let o = synthesize(&mut p, &synth_cfg(), None).map_err(|e| e.to_string())?;
        ensure(o.stats.ner() == 0.0 && o.graph == chain(30), || "replay NER".into())?;
        Ok("0.0, 0.15 and 0.2 reproduced from stats and from synthesized traces; replay NER = 0".into())
    })();
    report(10, "NER accounting", r);
}
