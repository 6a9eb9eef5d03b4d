use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use procmat::metrics::{save_features, FeatureMatrix};
use procmat::transpiler::{emit_compact, parse_compact, parse_verbose};

fn procmat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procmat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GRAPH: &str = "\
nodes:
  n:
    type: perlin_noise
    params: {scale: 3}
  c:
    type: gradient_map
    inputs: {input: n.output}
  h:
    type: normal_from_height
    inputs: {input: n.output}
outputs:
  basecolor: c.output
  normal: h.output
  height: n.output
";

fn graph_file(dir: &Path) -> PathBuf {
    let p = dir.join("g.sbsc");
    std::fs::write(&p, GRAPH).unwrap();
    p
}

/// Relative path → contents of every file below `dir`.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = graph_file(dir.path());
    let o = procmat(&["validate", s(&ok)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("ok"));

    let bad = dir.path().join("fwd.sbsc");
    std::fs::write(
        &bad,
        "nodes:\n  i:\n    type: invert\n    inputs: {input: c.output}\n  c:\n    type: checker\noutputs:\n  height: i.output\n",
    )
    .unwrap();
    let o = procmat(&["validate", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("TOPOLOGY_VIOLATION"), "{}", text(&o));

    let o = procmat(&["validate", s(&dir.path().join("missing.sbsc"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn transpile_round_trip_and_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let src = graph_file(dir.path());
    let xml = dir.path().join("g.sbsv.xml");
    let back = dir.path().join("back.sbsc");
    let xml2 = dir.path().join("g2.sbsv.xml");
    assert_eq!(code(&procmat(&["transpile", s(&src), s(&xml)])), 0);
    assert_eq!(code(&procmat(&["transpile", s(&xml), s(&back)])), 0);
    assert_eq!(code(&procmat(&["transpile", s(&back), s(&xml2)])), 0);
    let a = parse_verbose(&std::fs::read_to_string(&xml).unwrap()).unwrap();
    let b = parse_verbose(&std::fs::read_to_string(&xml2).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, parse_compact(GRAPH).unwrap());

    // sloppy spacing and param order normalise to the canonical text
    let messy = dir.path().join("messy.sbsc");
    std::fs::write(
        &messy,
        "nodes:\n  n:\n    type: perlin_noise\n    params: {seed: 0,   scale: 3}\n\noutputs:\n  height: n.output\n",
    )
    .unwrap();
    let canon = dir.path().join("canon.sbsc");
    assert_eq!(code(&procmat(&["transpile", "--canonical", s(&messy), s(&canon)])), 0);
    let out = std::fs::read_to_string(&canon).unwrap();
    assert_eq!(out, emit_compact(&parse_compact(&out).unwrap()));
    assert_ne!(out, std::fs::read_to_string(&messy).unwrap());

    let o = procmat(&["transpile", s(&src), s(&dir.path().join("g.txt"))]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("usage"));
}

#[test]
fn render_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let src = graph_file(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = procmat(&["render", s(&src), "--res", "32", "--seed", "5", "--outdir", s(out), "--per-node"]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    assert_eq!(tree(&a), tree(&b));
    let names: Vec<String> = tree(&a).into_iter().map(|(n, _)| n).collect();
    for ch in ["basecolor", "normal", "roughness", "metallic", "height", "composite"] {
        assert!(names.contains(&format!("{ch}.png")), "{names:?}");
    }
    assert_eq!(names.iter().filter(|n| n.starts_with("nodes")).count(), 3);

    let o = procmat(&["render", s(&src), "--res", "100", "--outdir", s(&a)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corpusgen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = procmat(&["corpusgen", "--n", "100", "--seed", "1", "--max-nodes", "24", "--outdir", s(out)]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    let ta = tree(&a);
    assert_eq!(ta.len(), 200);
    assert_eq!(ta, tree(&b));

    let o = procmat(&["eval", "--metric", "compression", s(&a)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("files=200"));
}

#[test]
fn preprocess_directory() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let out = dir.path().join("clean");
    assert_eq!(code(&procmat(&["corpusgen", "--n", "20", "--seed", "3", "--max-nodes", "30", "--raw", "--outdir", s(&raw)])), 0);
    let o = procmat(&["preprocess", s(&raw), s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report.lines().count(), 40);
    for (name, bytes) in tree(&out) {
        if name.ends_with(".sbsc") {
            let g = parse_compact(std::str::from_utf8(&bytes).unwrap()).unwrap();
            assert!(g.nodes.iter().all(|n| n.subgraph.is_none()));
        }
    }
}

#[test]
fn synth_replay_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let src = graph_file(dir.path());
    let out = dir.path().join("run");
    let replay = format!("replay:{}", s(&src));
    let o = procmat(&[
        "synth", "--proposer", &replay, "--preview-res", "16", "--render-res", "32", "--outdir", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("ner=0\n"));
    let final_graph = std::fs::read_to_string(out.join("final.sbsc")).unwrap();
    assert_eq!(parse_compact(&final_graph).unwrap(), parse_compact(GRAPH).unwrap());
    assert!(out.join("final.sbsv.xml").exists());
    assert!(out.join("renders/composite.png").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["events"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["events"][3]["kind"], "end");

    // faulty random run, then replay from its manifest
    let a = dir.path().join("a");
    let o = procmat(&[
        "synth", "--proposer", "random:7", "--corrupt", "0.3", "--max-nodes", "10", "--preview-res", "16",
        "--render-res", "16", "--mode", "text", "--outdir", s(&a),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let b = dir.path().join("b");
    let o = procmat(&["synth", "--replay-manifest", s(&a.join("manifest.json")), "--outdir", s(&b)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(
        std::fs::read_to_string(a.join("final.sbsc")).unwrap(),
        std::fs::read_to_string(b.join("final.sbsc")).unwrap()
    );
    let ma: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let kv = std::fs::read_to_string(a.join("stats.txt")).unwrap();
    let proposals: usize = kv
        .lines()
        .find_map(|l| l.strip_prefix("proposals="))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(ma["events"].as_array().unwrap().len(), proposals);

    let o = procmat(&["eval", "--metric", "ner", s(&a.join("stats.txt")), s(&out.join("stats.txt"))]);
    assert_eq!(code(&o), 0, "{}", text(&o));

    let o = procmat(&["eval", "--metric", "consec", s(&out.join("final.sbsc")), s(&src)]);
    assert!(text(&o).contains("consec_match=1\n"), "{}", text(&o));
}

#[test]
fn synth_rejects_bad_flags() {
    let o = procmat(&["synth", "--proposer", "oracle", "--outdir", "/tmp/unused"]);
    assert_eq!(code(&o), 2);
    let o = procmat(&["synth", "--optimize", "10", "--outdir", "/tmp/unused"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_kid() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.fmat");
    let y = dir.path().join("y.fmat");
    let one = dir.path().join("one.fmat");
    save_features(&x, &FeatureMatrix::new(2, 1, vec![0.0, 0.0]).unwrap()).unwrap();
    save_features(&y, &FeatureMatrix::new(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
    save_features(&one, &FeatureMatrix::new(1, 1, vec![0.0]).unwrap()).unwrap();

    let o = procmat(&["eval", "--metric", "kid", s(&x), s(&y)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("kid=7\n"), "{}", text(&o));
    assert!(text(&o).contains("kid_x100=700\n"));

    let o = procmat(&["eval", "--metric", "kid", s(&one), s(&y)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("INSUFFICIENT_SAMPLES"));

    let o = procmat(&["eval", "--metric", "gram", s(&x), s(&x)]);
    assert!(text(&o).contains("gram_l1=0\n"), "{}", text(&o));
}
