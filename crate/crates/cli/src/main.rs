//! `procmat` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or failed run, 2 usage or I/O error.

mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use procmat::corpus::{corpus, CorpusOptions};
use procmat::engine::{composite, eval_graph, export_png, load_png, ImageBuffer, RenderCache};
use procmat::metrics::{
    gram_l1, kid, load_features, mask_params, mean_ner, ner_ratio, consec_match_score, pixel_l1, FeatureMap,
};
use procmat::preprocess::{standardize, Standardized, DEFAULT_MAX_NODES};
use procmat::synth::{
    corrupting_proposer, optimize_params, random_proposer, replay_proposer, synthesize, FaultPlan, HttpProposer,
    Proposer, RandomProposerConfig, SynthError, SynthOutcome, DEFAULT_TOKEN_BUDGET,
};
use procmat::transpiler::{compression_ratio, emit_compact, emit_verbose, format_errors, parse_compact, parse_verbose};
use procmat::viz::fill_previews;
use procmat::{registry_builtin, Channel, MaterialGraph, RenderSettings};

use manifest::{events, ConfigSnapshot, ManifestProposer, RunManifest};

const SBSC: &str = ".sbsc";
const SBSV: &str = ".sbsv.xml";

#[derive(Debug)]
enum CliError {
    /// Bad flags or arguments.
    Usage(String),
    Io(String),
    /// The input was read but is invalid, or the run failed.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

type CliResult = Result<(), CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "procmat", version, about = "Procedural material graph toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mixed,
    Graph,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ner,
    Kid,
    Consec,
    PixelL1,
    Gram,
    Compression,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a graph file.
    Validate { path: PathBuf },
    /// Convert between `.sbsc` and `.sbsv.xml`.
    Transpile {
        input: PathBuf,
        output: PathBuf,
        /// Also allowed for same-format pairs; rewrites the file canonically.
        #[arg(long)]
        canonical: bool,
    },
    /// Render the five PBR channels and the shaded composite.
    Render {
        input: PathBuf,
        #[arg(long, default_value_t = 512)]
        res: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "render")]
        outdir: PathBuf,
        /// Also write a preview of every node.
        #[arg(long)]
        per_node: bool,
    },
    /// Flatten, prune and filter every graph file of a directory.
    Preprocess {
        indir: PathBuf,
        outdir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_NODES)]
        max_nodes: usize,
    },
    /// Generate a graph node by node.
    Synth {
        #[arg(long, value_enum, default_value_t = Mode::Mixed)]
        mode: Mode,
        /// `replay:FILE`, `random[:SEED]` or `http:URL`.
        #[arg(long, default_value = "random")]
        proposer: String,
        #[arg(long, default_value = "procmat-vlm")]
        model: String,
        /// Corrupt each node proposal with this probability.
        #[arg(long)]
        corrupt: Option<f64>,
        /// PNG render to condition on.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Render budget for fitting continuous params to the target.
        #[arg(long, default_value_t = 0)]
        optimize: usize,
        #[arg(long, default_value_t = 128)]
        max_nodes: usize,
        #[arg(long, default_value_t = 2048)]
        max_proposals: usize,
        #[arg(long, default_value_t = 256)]
        preview_res: u32,
        #[arg(long, default_value_t = 512)]
        render_res: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_repair: bool,
        #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET)]
        token_budget: usize,
        #[arg(long, default_value = "synth")]
        outdir: PathBuf,
        /// Re-run the proposals and config recorded in a manifest.
        #[arg(long)]
        replay_manifest: Option<PathBuf>,
    },
    /// Compute an evaluation metric.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        /// KID block size.
        #[arg(long)]
        block: Option<usize>,
        inputs: Vec<PathBuf>,
    },
    /// Write random valid graphs as `.sbsc` + `.sbsv.xml` pairs.
    Corpusgen {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        max_nodes: usize,
        /// Raw-looking graphs with subgraphs, dead chains and bitmaps.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value = "corpus")]
        outdir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Validate { path } => cmd_validate(&path),
        Cmd::Transpile { input, output, canonical } => cmd_transpile(&input, &output, canonical),
        Cmd::Render { input, res, seed, outdir, per_node } => cmd_render(&input, res, seed, &outdir, per_node),
        Cmd::Preprocess { indir, outdir, max_nodes } => cmd_preprocess(&indir, &outdir, max_nodes),
        Cmd::Synth {
            mode,
            proposer,
            model,
            corrupt,
            target,
            optimize,
            max_nodes,
            max_proposals,
            preview_res,
            render_res,
            seed,
            no_repair,
            token_budget,
            outdir,
            replay_manifest,
        } => {
            let snapshot = ConfigSnapshot {
                mode: match mode {
                    Mode::Mixed => "mixed",
                    Mode::Graph => "graph",
                    Mode::Text => "text",
                }
                .into(),
                proposer,
                max_nodes,
                max_total_proposals: max_proposals,
                preview_resolution: preview_res,
                render_resolution: render_res,
                seed,
                repair: !no_repair,
                token_budget,
                corrupt,
                target: target.map(|p| p.display().to_string()),
                optimize,
            };
            cmd_synth(snapshot, &model, &outdir, replay_manifest.as_deref())
        }
        Cmd::Eval { metric, block, inputs } => cmd_eval(metric, block, &inputs),
        Cmd::Corpusgen { n, seed, max_nodes, raw, outdir } => cmd_corpusgen(n, seed, max_nodes, raw, &outdir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("usage error: {m}"),
                CliError::Io(m) => eprintln!("io error: {m}"),
                CliError::Failed(m) => eprintln!("{m}"),
            }
            ExitCode::from(e.code())
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Compact,
    Verbose,
}

fn format_of(path: &Path) -> Result<Format, CliError> {
    let name = path.to_string_lossy();
    if name.ends_with(SBSC) {
        Ok(Format::Compact)
    } else if name.ends_with(SBSV) {
        Ok(Format::Verbose)
    } else {
        Err(CliError::Usage(format!(
            "{}: expected a `{SBSC}` or `{SBSV}` file",
            path.display()
        )))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Reads and parses a graph file; parse errors are printed with spans.
fn load_graph(path: &Path) -> Result<MaterialGraph, CliError> {
    let fmt = format_of(path)?;
    let text = read(path)?;
    let parsed = match fmt {
        Format::Compact => parse_compact(&text),
        Format::Verbose => parse_verbose(&text),
    };
    parsed.map_err(|errs| CliError::Failed(format!("{}:\n{}", path.display(), format_errors(&errs))))
}

fn emit(g: &MaterialGraph, fmt: Format) -> String {
    match fmt {
        Format::Compact => emit_compact(g),
        Format::Verbose => emit_verbose(g),
    }
}

fn cmd_validate(path: &Path) -> CliResult {
    let g = load_graph(path)?;
    let report = g.validate(registry_builtin());
    println!("{report}");
    if report.ok {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{}: invalid", path.display())))
    }
}

fn cmd_transpile(input: &Path, output: &Path, canonical: bool) -> CliResult {
    let (from, to) = (format_of(input)?, format_of(output)?);
    if from == to && !canonical {
        return Err(CliError::Usage(
            "input and output share a format; pass --canonical to rewrite".into(),
        ));
    }
    let g = load_graph(input)?;
    write(output, emit(&g, to))
}

fn settings(res: u32, seed: u64) -> Result<RenderSettings, CliError> {
    RenderSettings::new(res, seed).map_err(|e| CliError::Usage(e.to_string()))
}

fn channel_file(ch: Channel) -> String {
    format!("{}.png", ch.as_str())
}

/// Writes the five channel maps and the composite into `outdir`.
fn write_renders(g: &MaterialGraph, s: &RenderSettings, outdir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let maps = eval_graph(g, s).map_err(|e| CliError::Failed(e.to_string()))?;
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;
    let mut written = Vec::new();
    for (ch, img) in &maps {
        let p = outdir.join(channel_file(*ch));
        export_png(img, &p).map_err(|e| io_err(&p, e))?;
        written.push(p);
    }
    let p = outdir.join("composite.png");
    export_png(&composite(&maps), &p).map_err(|e| io_err(&p, e))?;
    written.push(p);
    Ok(written)
}

fn cmd_render(input: &Path, res: u32, seed: u64, outdir: &Path, per_node: bool) -> CliResult {
    let s = settings(res, seed)?;
    let g = load_graph(input)?;
    let report = g.validate(registry_builtin());
    if !report.ok {
        return Err(CliError::Failed(report.to_string()));
    }
    let written = write_renders(&g, &s, outdir)?;
    if per_node {
        let cache = RenderCache::new(s);
        fill_previews(&g, &cache).map_err(|e| CliError::Failed(e.to_string()))?;
        let dir = outdir.join("nodes");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for n in &g.nodes {
            let imgs = cache.get(&n.name).expect("previews were filled");
            let p = dir.join(format!("{}.png", n.name));
            export_png(imgs.primary(), &p).map_err(|e| io_err(&p, e))?;
        }
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

/// Graph files of a directory, sorted by name.
fn graph_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| format_of(p).is_ok())
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    name.trim_end_matches(SBSV).trim_end_matches(SBSC).to_string()
}

fn cmd_preprocess(indir: &Path, outdir: &Path, max_nodes: usize) -> CliResult {
    let files = graph_files(indir)?;
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;
    let lines: Vec<(String, bool)> = files
        .par_iter()
        .map(|path| {
            let name = stem(path);
            let g = match load_graph(path) {
                Ok(g) => g,
                Err(CliError::Failed(m) | CliError::Io(m) | CliError::Usage(m)) => {
                    return (format!("{name}: error {}", m.replace('\n', " ")), false)
                }
            };
            match standardize(&g, max_nodes) {
                Ok(Standardized::Accepted(out)) => {
                    let p = outdir.join(format!("{name}{SBSC}"));
                    match fs::write(&p, emit_compact(&out)) {
                        Ok(()) => (format!("{name}: accepted"), true),
                        Err(e) => (format!("{name}: error {e}"), false),
                    }
                }
                Ok(Standardized::Rejected(v)) => (format!("{name}: {}", v.summary()), true),
                Err(e) => (format!("{name}: error {e}"), false),
            }
        })
        .collect();
    let mut report = String::new();
    for (line, _) in &lines {
        println!("{line}");
        let _ = writeln!(report, "{line}");
    }
    write(&outdir.join("report.txt"), report)?;
    let failed = lines.iter().filter(|(_, ok)| !ok).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} file(s) failed")));
    }
    Ok(())
}

fn build_proposer(cfg: &ConfigSnapshot, model: &str, log_dir: &Path) -> Result<Box<dyn Proposer>, CliError> {
    let spec = cfg.proposer.as_str();
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let inner: Box<dyn Proposer> = match kind {
        "replay" => {
            let path = Path::new(arg);
            let g = load_graph(path)?;
            let text = emit_compact(&g);
            Box::new(replay_proposer(&text).map_err(|e| CliError::Failed(format_errors(&e)))?)
        }
        "random" => {
            let seed = if arg.is_empty() {
                cfg.seed
            } else {
                arg.parse().map_err(|_| CliError::Usage(format!("bad random seed `{arg}`")))?
            };
            Box::new(random_proposer(seed, RandomProposerConfig::default()))
        }
        "http" => {
            let mut p = HttpProposer::new(arg, model);
            p.log_dir = Some(log_dir.join("http"));
            Box::new(p)
        }
        _ => {
            return Err(CliError::Usage(format!(
                "unknown proposer `{spec}` (replay:FILE, random[:SEED], http:URL)"
            )))
        }
    };
    Ok(match cfg.corrupt {
        Some(p) if (0.0..=1.0).contains(&p) => Box::new(corrupting_proposer(
            inner,
            FaultPlan::Random { p, seed: cfg.seed },
        )),
        Some(p) => return Err(CliError::Usage(format!("--corrupt {p} is not a probability"))),
        None => inner,
    })
}

fn stats_text(o: &SynthOutcome) -> String {
    let s = &o.stats;
    let mut t = String::new();
    let _ = writeln!(t, "proposals={}", s.proposals);
    let _ = writeln!(t, "nodes_generated={}", s.nodes_generated);
    let _ = writeln!(t, "nodes_discarded={}", s.nodes_discarded);
    let _ = writeln!(t, "ner={}", s.ner());
    let _ = writeln!(t, "repairs={}", s.repairs);
    let _ = writeln!(t, "converters_inserted={}", s.converters_inserted);
    let _ = writeln!(t, "auto_bound={}", s.auto_bound);
    let _ = writeln!(t, "final_nodes={}", o.graph.len());
    for (code, n) in &s.failures {
        let _ = writeln!(t, "failures.{code}={n}");
    }
    let b: Vec<String> = s.backtracks.iter().map(|b| b.to_string()).collect();
    let _ = writeln!(t, "backtracks={}", b.join(","));
    let secs = |d: std::time::Duration| d.as_secs_f64();
    let _ = writeln!(t, "time.context_s={}", secs(s.timings.context));
    let _ = writeln!(t, "time.propose_s={}", secs(s.timings.propose));
    let _ = writeln!(t, "time.validate_s={}", secs(s.timings.validate));
    let _ = writeln!(t, "time.render_s={}", secs(s.timings.render));
    t
}

fn load_target(path: &Path, res: u32) -> Result<ImageBuffer, CliError> {
    let img = load_png(path).map_err(|e| io_err(path, e))?.to_color();
    let r = res as usize;
    Ok(if img.width == r && img.height == r { img } else { img.resample(r, r) })
}

fn cmd_synth(mut snapshot: ConfigSnapshot, model: &str, outdir: &Path, replay: Option<&Path>) -> CliResult {
    let recorded = match replay {
        Some(p) => {
            let m = RunManifest::load(p).map_err(CliError::Io)?;
            snapshot = m.config.clone();
            Some(m)
        }
        None => None,
    };
    let mut cfg = snapshot.synth_config().map_err(CliError::Usage)?;
    let render = settings(snapshot.render_resolution, snapshot.seed)?;
    let log_dir = outdir.join("log");
    cfg.log_dir = Some(log_dir.clone());
    if snapshot.optimize > 0 && snapshot.target.is_none() {
        return Err(CliError::Usage("--optimize needs --target".into()));
    }
    let target = match &snapshot.target {
        Some(p) => Some(load_target(Path::new(p), snapshot.render_resolution)?),
        None => None,
    };
    let mut proposer: Box<dyn Proposer> = match &recorded {
        Some(m) => Box::new(ManifestProposer::new(m)),
        None => build_proposer(&snapshot, model, &log_dir)?,
    };
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;

    let result = synthesize(proposer.as_mut(), &cfg, target.as_ref());
    let (outcome, failure) = match result {
        Ok(o) => (o, None),
        Err(SynthError::BudgetExhausted { best, tree, stats }) => {
            let msg = format!("BUDGET_EXHAUSTED after {} proposals", stats.proposals);
            (SynthOutcome { graph: best, tree, stats }, Some(msg))
        }
        Err(SynthError::ProposerFailure { message, tree, stats }) => {
            let graph = tree.active_graph();
            (SynthOutcome { graph, tree, stats }, Some(format!("PROPOSER_FAILURE: {message}")))
        }
        Err(e @ SynthError::Config(_)) => return Err(CliError::Usage(e.to_string())),
    };

    let mut graph = outcome.graph.clone();
    let mut outputs = BTreeMap::new();
    if failure.is_none() {
        if let (Some(t), true) = (&target, snapshot.optimize > 0) {
            let r = optimize_params(&graph, t, snapshot.optimize, &render, snapshot.seed);
            println!(
                "optimize.initial_loss={}\noptimize.final_loss={}\noptimize.evaluations={}",
                r.initial_loss.unwrap_or(f64::NAN),
                r.final_loss.unwrap_or(f64::NAN),
                r.evaluations
            );
            graph = r.graph;
        }
        for (fmt, name) in [(Format::Compact, "final.sbsc"), (Format::Verbose, "final.sbsv.xml")] {
            let p = outdir.join(name);
            write(&p, emit(&graph, fmt))?;
            outputs.insert(name.to_string(), p.display().to_string());
        }
        for p in write_renders(&graph, &render, &outdir.join("renders"))? {
            outputs.insert(
                format!("render.{}", p.file_stem().unwrap_or_default().to_string_lossy()),
                p.display().to_string(),
            );
        }
    } else {
        let p = outdir.join("partial.sbsc");
        write(&p, emit_compact(&graph))?;
        outputs.insert("partial.sbsc".into(), p.display().to_string());
    }
    let stats = stats_text(&outcome);
    let stats_path = outdir.join("stats.txt");
    write(&stats_path, &stats)?;
    outputs.insert("stats".into(), stats_path.display().to_string());
    outputs.insert("log".into(), log_dir.display().to_string());

    let manifest = RunManifest {
        run_id: snapshot.run_id(),
        config: snapshot,
        events: events(&outcome.tree, &outcome.stats),
        outputs,
    };
    let mpath = outdir.join("manifest.json");
    manifest.save(&mpath).map_err(|e| io_err(&mpath, e))?;
    print!("{stats}");
    match failure {
        Some(m) => Err(CliError::Failed(m)),
        None => Ok(()),
    }
}

/// `key=value` lines of a stats file.
fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    Ok(read(path)?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn expand(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(graph_files(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn need(inputs: &[PathBuf], n: usize, what: &str) -> CliResult {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(CliError::Usage(format!("expected {what}")))
    }
}

fn metric_err(e: procmat::metrics::MetricsError) -> CliError {
    match e {
        procmat::metrics::MetricsError::Io(e) => CliError::Io(e.to_string()),
        e => CliError::Failed(e.to_string()),
    }
}

fn feature_map(path: &Path) -> Result<FeatureMap, CliError> {
    let m = load_features(path).map_err(metric_err)?;
    Ok(FeatureMap {
        channels: m.rows,
        positions: m.cols,
        data: m.data,
    })
}

fn cmd_eval(metric: Metric, block: Option<usize>, inputs: &[PathBuf]) -> CliResult {
    match metric {
        Metric::Ner => {
            if inputs.is_empty() {
                return Err(CliError::Usage("expected one or more stats files".into()));
            }
            let mut ratios = Vec::new();
            for p in inputs {
                let kv = read_kv(p)?;
                let get = |k: &str| -> Result<usize, CliError> {
                    kv.get(k)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| CliError::Failed(format!("{}: missing `{k}`", p.display())))
                };
                let r = ner_ratio(get("nodes_discarded")?, get("nodes_generated")?);
                println!("{}: ner={r}", p.display());
                ratios.push(r);
            }
            println!("ner={}", mean_ner(&ratios));
        }
        Metric::Kid => {
            need(inputs, 2, "two feature files")?;
            let x = load_features(&inputs[0]).map_err(metric_err)?;
            let y = load_features(&inputs[1]).map_err(metric_err)?;
            let v = kid(&x, &y, block).map_err(metric_err)?;
            println!("kid={v}");
            println!("kid_x100={}", v * 100.0);
        }
        Metric::Consec => {
            let files = expand(inputs)?;
            if files.len() < 2 {
                return Err(CliError::Usage("expected a candidate and at least one corpus file".into()));
            }
            let masked = |p: &PathBuf| -> Result<_, CliError> {
                let g = load_graph(p)?;
                mask_params(&emit_compact(&g)).map_err(metric_err)
            };
            let candidate = masked(&files[0])?;
            let refs = files[1..].iter().map(masked).collect::<Result<Vec<_>, _>>()?;
            println!("consec_match={}", consec_match_score(&candidate, &refs));
        }
        Metric::PixelL1 => {
            need(inputs, 2, "two PNG files")?;
            let a = load_png(&inputs[0]).map_err(|e| io_err(&inputs[0], e))?;
            let b = load_png(&inputs[1]).map_err(|e| io_err(&inputs[1], e))?;
            println!("pixel_l1={}", pixel_l1(&a, &b).map_err(metric_err)?);
        }
        Metric::Gram => {
            if inputs.len() < 2 || inputs.len() % 2 != 0 {
                return Err(CliError::Usage("expected layer files A1..An B1..Bn".into()));
            }
            let half = inputs.len() / 2;
            let fa = inputs[..half].iter().map(|p| feature_map(p)).collect::<Result<Vec<_>, _>>()?;
            let fb = inputs[half..].iter().map(|p| feature_map(p)).collect::<Result<Vec<_>, _>>()?;
            println!("gram_l1={}", gram_l1(&fa, &fb).map_err(metric_err)?);
        }
        Metric::Compression => {
            let files = expand(inputs)?;
            if files.is_empty() {
                return Err(CliError::Usage("expected graph files or directories".into()));
            }
            let ratios = files
                .par_iter()
                .map(|p| load_graph(p).map(|g| compression_ratio(&g)))
                .collect::<Result<Vec<_>, _>>()?;
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            println!("files={}", ratios.len());
            println!("compression_ratio={mean}");
        }
    }
    Ok(())
}

fn cmd_corpusgen(n: usize, seed: u64, max_nodes: usize, raw: bool, outdir: &Path) -> CliResult {
    let opts = CorpusOptions {
        max_nodes,
        ..if raw { CorpusOptions::raw() } else { CorpusOptions::default() }
    };
    let graphs = corpus(n, seed, &opts);
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;
    graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            write(&outdir.join(format!("graph_{i:05}{SBSC}")), emit_compact(g))?;
            write(&outdir.join(format!("graph_{i:05}{SBSV}")), emit_verbose(g))
        })
        .collect::<Result<Vec<()>, _>>()?;
    println!("wrote {n} graphs to {}", outdir.display());
    Ok(())
}
