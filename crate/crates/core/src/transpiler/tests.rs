use super::*;
use crate::corpus::{random_graph, CorpusOptions};
use crate::graph::{registry_builtin, Channel, ErrorCode, NodeDef, SignalType};

const ONE_NODE: &str = "\
nodes:
  u:
    type: uniform_color
    outputs: {output: grayscale}
    params: {luminance: 0.25}
outputs:
  height: u.output
";

fn reg() -> &'static crate::graph::Registry {
    registry_builtin()
}

fn codes(errs: &[ParseError]) -> Vec<ParseErrorCode> {
    errs.iter().map(|e| e.code).collect()
}

#[test]
fn one_node_document() {
    let g = parse_compact(ONE_NODE).unwrap();
    assert_eq!(g.len(), 1);
    assert_eq!(g.outputs[&Channel::Height].node, "u");
    assert_eq!(g.nodes[0].params["luminance"], ParamValue::Float(0.25));
    assert_eq!(emit_compact(&g), ONE_NODE);
}

#[test]
fn forward_reference_is_structure_error() {
    let text = "\
nodes:
  i:
    type: invert
    inputs: {input: c.output}
  c:
    type: checker
outputs:
  height: i.output
";
    let errs = parse_compact(text).unwrap_err();
    let e = errs.iter().find(|e| e.validation == Some(ErrorCode::TopologyViolation)).expect("topology error");
    assert_eq!(e.code, ParseErrorCode::Structure);
    assert_eq!(e.node.as_deref(), Some("i"));
    assert_eq!(e.span.line, 2);
}

#[test]
fn truncated_document_is_syntax_at_end() {
    let full = emit_compact(&random_graph(3, &CorpusOptions { max_nodes: 8, ..Default::default() }));
    let cut = full.find("params: {").map(|i| i + 12).expect("some params");
    let text = &full[..cut];
    let errs = parse_compact(text).unwrap_err();
    assert_eq!(errs[0].code, ParseErrorCode::Syntax);
    assert!(errs[0].node.is_none());
    assert_eq!(errs[0].span.line, text.lines().count());

    let header_only = "nodes:\n  a:\n";
    let errs = parse_compact(header_only).unwrap_err();
    assert_eq!(codes(&errs), vec![ParseErrorCode::Syntax]);
    assert_eq!(errs[0].span.line, 2);
}

#[test]
fn defaults_omitted_and_restored() {
    let mut g = crate::graph::MaterialGraph::new();
    g.try_push(
        NodeDef::new("c", "checker")
            .with_param("tiles", ParamValue::Int(4))
            .with_param("high", ParamValue::Float(0.5)),
        reg(),
    )
    .unwrap();
    let text = emit_compact(&g);
    assert!(text.contains("params: {high: 0.5}"), "{text}");
    assert!(!text.contains("tiles"));
    let back = parse_compact(&text).unwrap();
    assert_eq!(back.nodes[0].params["tiles"], ParamValue::Int(4));
    assert_eq!(back, g);
}

#[test]
fn param_key_order_does_not_matter() {
    let a = "nodes:\n  c:\n    type: checker\n    params: {low: 0.1, high: 0.9}\noutputs:\n";
    let b = "nodes:\n  c:\n    type: checker\n    params: {high: 0.9, low: 0.1}\noutputs:\n";
    let ga = parse_compact(a).unwrap();
    let gb = parse_compact(b).unwrap();
    assert_eq!(emit_compact(&ga), emit_compact(&gb));
}

#[test]
fn error_codes() {
    let cases = [
        ("nodes:\n  c:\n    type: checker\n    colour: red\n", ParseErrorCode::UnknownKey),
        ("nodes:\n  c:\n    type: checker\n    params: {tiles: [1,}\n", ParseErrorCode::Syntax),
        ("nodes:\n  c:\n    type: checker\n    params: {tiles: 1.2.3}\n", ParseErrorCode::BadValue),
        ("nodes:\n  c:\n    type: checker\n    type: checker\n", ParseErrorCode::DuplicateKey),
        ("nodes:\n  c:\n    type: checker\n  c:\n    type: checker\n", ParseErrorCode::DuplicateKey),
        ("nodes:\n   c:\n    type: checker\n", ParseErrorCode::Syntax),
        ("nodes:\n\tc:\n", ParseErrorCode::Syntax),
        ("nodes:\n  c:\n    type: checker\noutputs:\n  glow: c.output\n", ParseErrorCode::UnknownKey),
        ("nodes:\n  c:\n    type: checker\n    params: {tiles: 999}\n", ParseErrorCode::Structure),
        ("nodes:\n  c:\n    type: chequer\n", ParseErrorCode::Structure),
        ("nodes:\n  c:\n    type: checker\n    inputs: {input: x}\n", ParseErrorCode::BadValue),
    ];
    for (text, want) in cases {
        let errs = parse_compact(text).unwrap_err();
        assert_eq!(errs[0].code, want, "{text}\n{}", format_errors(&errs));
        for e in &errs {
            assert!(e.span.offset <= text.len());
            if e.code == ParseErrorCode::Syntax {
                assert!(e.node.is_none());
            }
        }
    }
}

#[test]
fn structure_error_carries_validation_code() {
    let text = "nodes:\n  c:\n    type: checker\n    params: {tiles: 999}\n";
    let e = &parse_compact(text).unwrap_err()[0];
    assert_eq!(e.validation, Some(ErrorCode::BadParamValue));
    assert_eq!(e.node.as_deref(), Some("c"));
    assert_eq!((e.span.line, e.span.column), (2, 3));
}

#[test]
fn fragments() {
    let node = "  b:\n    type: blur_box\n    inputs: {input: c.output}\n";
    match parse_node_fragment(node).unwrap() {
        NodeFragment::Node(n) => {
            assert_eq!(n.type_name, "blur_box");
            assert_eq!(n.connections[0].src_node, "c");
        }
        other => panic!("{other:?}"),
    }
    match parse_node_fragment("outputs:\n  height: b.output\n").unwrap() {
        NodeFragment::Outputs(o) => assert_eq!(o[&Channel::Height].node, "b"),
        other => panic!("{other:?}"),
    }
    assert!(parse_node_fragment("").is_err());
    assert!(parse_node_fragment("  b:\n    typo: x\n").is_err());
    let n = random_graph(1, &CorpusOptions::default()).nodes[3].clone();
    match parse_node_fragment(&emit_node(&n)).unwrap() {
        NodeFragment::Node(mut back) => {
            let mut want = n.clone();
            want.output_types.retain(|_, _| false);
            back.output_types.retain(|_, _| false);
            reg().canonicalize(&mut back);
            assert_eq!(back, want);
        }
        other => panic!("{other:?}"),
    }
}

/// Repeatedly removes the minimum-index node with no unplaced sources.
fn oracle_topo(names: &[(String, Vec<String>)]) -> Vec<String> {
    let mut left: Vec<(String, Vec<String>)> = names.to_vec();
    let mut out = Vec::new();
    while !left.is_empty() {
        let i = left
            .iter()
            .position(|(_, deps)| deps.iter().all(|d| out.contains(d) || !names.iter().any(|(n, _)| n == d)))
            .expect("acyclic");
        out.push(left.remove(i).0);
    }
    out
}

#[test]
fn verbose_reverse_order_is_sorted() {
    let g = random_graph(11, &CorpusOptions { max_nodes: 30, ..Default::default() });
    let xml = emit_verbose(&g);
    // Reverse the <node> blocks.
    let start = xml.find("  <node ").unwrap();
    let end = xml.find("  <outputs>").unwrap();
    let blocks: Vec<&str> = xml[start..end].split_inclusive("  </node>\n").collect();
    let reversed: String = blocks.iter().rev().copied().collect();
    let text = format!("{}{}{}", &xml[..start], reversed, &xml[end..]);
    let back = parse_verbose(&text).unwrap();

    let rev_doc: Vec<(String, Vec<String>)> = g
        .nodes
        .iter()
        .rev()
        .map(|n| (n.name.clone(), n.connections.iter().map(|c| c.src_node.clone()).collect()))
        .collect();
    let got: Vec<String> = back.nodes.iter().map(|n| n.name.clone()).collect();
    assert_eq!(got, oracle_topo(&rev_doc));
    assert_eq!(back.nodes.len(), g.nodes.len());
    assert!(back.validate(reg()).ok);
}

#[test]
fn verbose_bitmap_resource() {
    let text = r#"<?xml version="1.0" encoding="UTF-8"?>
<material>
  <node name="img" type="bitmap">
    <param name="resource" value="7"/>
    <resource encoding="base64">iVBORw0KGgo=</resource>
  </node>
  <outputs><output channel="basecolor" from="img.output"/></outputs>
</material>
"#;
    let g = parse_verbose(text).unwrap();
    assert_eq!(g.nodes[0].type_name, "bitmap");
    assert_eq!(g.nodes[0].output_types["output"], SignalType::Color);
}

#[test]
fn verbose_malformed_nesting() {
    let text = "<material><node name=\"a\" type=\"checker\"></material></node>";
    let errs = parse_verbose(text).unwrap_err();
    assert_eq!(codes(&errs), vec![ParseErrorCode::Syntax]);
    let unclosed = "<material><node name=\"a\" type=\"checker\">";
    assert_eq!(parse_verbose(unclosed).unwrap_err()[0].code, ParseErrorCode::Syntax);
    let wrong_root = "<graph/>";
    assert_eq!(parse_verbose(wrong_root).unwrap_err()[0].code, ParseErrorCode::Structure);
}

#[test]
fn verbose_declares_defaults() {
    let g = parse_compact(ONE_NODE).unwrap();
    let xml = emit_verbose(&g);
    assert!(xml.contains(r#"<param name="value" type="float-tuple" value="[0.5, 0.5, 0.5, 1.0]"/>"#), "{xml}");
    assert!(xml.contains("guid=\""));
    assert_eq!(parse_verbose(&xml).unwrap(), g);
}

#[test]
fn round_trips_on_random_graphs() {
    let opts = CorpusOptions {
        subgraph_prob: 0.1,
        extra_output_prob: 0.0,
        ..Default::default()
    };
    for seed in 0..40 {
        let g = random_graph(seed, &opts);
        let c = emit_compact(&g);
        let from_c = parse_compact(&c).unwrap_or_else(|e| panic!("seed {seed}: {}\n{c}", format_errors(&e)));
        assert_eq!(from_c, g, "seed {seed}");
        assert_eq!(emit_compact(&from_c), c);
        let v = emit_verbose(&g);
        let from_v = parse_verbose(&v).unwrap_or_else(|e| panic!("seed {seed}: {}", format_errors(&e)));
        assert_eq!(from_v, g, "seed {seed}");
    }
}

#[test]
fn round_trip_128_nodes() {
    let g = random_graph(5, &CorpusOptions { min_nodes: 128, max_nodes: 128, ..Default::default() });
    assert_eq!(g.len(), 128);
    assert_eq!(parse_verbose(&emit_verbose(&g)).unwrap(), g);
    assert_eq!(parse_compact(&emit_compact(&g)).unwrap(), g);
}

#[test]
fn extra_outputs_survive_verbose_only() {
    let opts = CorpusOptions {
        extra_output_prob: 1.0,
        ..Default::default()
    };
    let g = random_graph(2, &opts);
    assert!(!g.extra_outputs.is_empty());
    assert_eq!(parse_verbose(&emit_verbose(&g)).unwrap(), g);
    let c = parse_compact(&emit_compact(&g)).unwrap();
    assert!(c.extra_outputs.is_empty());
}

#[test]
fn compression_ratio_bounds() {
    let g = parse_compact("nodes:\n  c:\n    type: invert\n    inputs: {input: d.output}\noutputs:\n").err();
    assert!(g.is_some());
    let single = parse_compact("nodes:\n  c:\n    type: checker\noutputs:\n").unwrap();
    let r = compression_ratio(&single);
    assert!(r > 0.0 && r < 1.0, "{r}");
    let mut total = 0.0;
    for seed in 0..30 {
        let r = compression_ratio(&random_graph(seed, &CorpusOptions::default()));
        assert!(r > 0.0 && r < 1.0);
        total += r;
    }
    assert!(total / 30.0 >= 0.70, "{}", total / 30.0);
}

#[test]
fn literal_parsing() {
    assert_eq!(parse_value("4"), Some(ParamValue::Int(4)));
    assert_eq!(parse_value("-4"), Some(ParamValue::Int(-4)));
    assert_eq!(parse_value("0.5"), Some(ParamValue::Float(0.5)));
    assert_eq!(parse_value("1e-7"), Some(ParamValue::Float(1e-7)));
    assert_eq!(parse_value("true"), Some(ParamValue::Bool(true)));
    assert_eq!(parse_value("r90"), Some(ParamValue::Enum("r90".into())));
    assert_eq!(parse_value("[1, 2]"), Some(ParamValue::IntTuple(vec![1, 2])));
    assert_eq!(parse_value("[1, 2.5]"), Some(ParamValue::FloatTuple(vec![1.0, 2.5])));
    assert!(!matches!(parse_value("inf"), Some(ParamValue::Float(_))));
    assert_eq!(parse_value("NaN"), None);
    assert_eq!(parse_value("[]"), None);
    assert_eq!(parse_value("1.2.3"), None);
}
