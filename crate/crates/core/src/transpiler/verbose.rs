//! SBSV: the verbose XML authoring format.
//!
//! ```xml
//! <material format="sbsv" version="1.0">
//!   <node name="n" type="perlin_noise" guid="..." x="0" y="0">
//!     <param name="scale" value="4"/>
//!     <suboutput slot="output" type="grayscale"/>
//!     <connect input="input" from="m.output"/>
//!     <subgraph><material>...</material></subgraph>
//!   </node>
//!   <outputs><output channel="height" from="n.output"/></outputs>
//! </material>
//! ```
//!
//! Nodes may appear in any order; loading sorts them topologically with
//! ties broken by document order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use sha2::{Digest, Sha256};

use super::{parse_value, ParseError, ParseErrorCode as Code, SourceSpan};
use crate::graph::{
    is_valid_name, registry_builtin, topo_positions, Channel, Connection, MaterialGraph, NodeDef,
    OutputRef, SignalType,
};

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
    text: String,
    span: SourceSpan,
}

impl Element {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn span_at(text: &str, offset: usize) -> SourceSpan {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    SourceSpan {
        line,
        column: offset - line_start + 1,
        offset,
    }
}

fn open(e: &BytesStart<'_>, span: SourceSpan) -> Result<Element, ParseError> {
    let name = e.name().into_inner().to_string();
    let mut attrs = Vec::new();
    for a in e.attributes() {
        let a = a.map_err(|err| ParseError::new(Code::Syntax, span, format!("bad attribute: {err}")))?;
        let key = a.key.into_inner().to_string();
        let value = a
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| ParseError::new(Code::Syntax, span, format!("bad attribute value: {err}")))?;
        attrs.push((key, value.into_owned()));
    }
    Ok(Element {
        name,
        attrs,
        children: Vec::new(),
        text: String::new(),
        span,
    })
}

/// Reads the document into an element tree.
fn dom(text: &str) -> Result<Element, ParseError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().expand_empty_elements = true;
    let mut stack: Vec<Element> = Vec::new();
    let mut root = None;
    loop {
        let pos = reader.buffer_position() as usize;
        let ev = reader.read_event().map_err(|e| {
            ParseError::new(Code::Syntax, span_at(text, reader.error_position() as usize), e.to_string())
        })?;
        let span = span_at(text, pos);
        match ev {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(ParseError::new(Code::Syntax, span, "content after the root element"));
                }
                stack.push(open(&e, span)?);
            }
            Event::End(_) => {
                let done = stack.pop().expect("reader checks end names");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(done),
                    None => root = Some(done),
                }
            }
            Event::Text(t) => {
                let s = t.xml_content(XmlVersion::Implicit1_0).into_owned();
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&s),
                    None if s.trim().is_empty() => {}
                    None => return Err(ParseError::new(Code::Syntax, span, "text outside the root element")),
                }
            }
            Event::CData(t) => {
                if let Some(el) = stack.last_mut() {
                    el.text.push_str(&t);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if let Some(open) = stack.last() {
        return Err(ParseError::new(
            Code::Syntax,
            span_at(text, text.len()),
            format!("unclosed element `{}` opened at {}", open.name, open.span),
        ));
    }
    root.ok_or_else(|| ParseError::new(Code::Syntax, span_at(text, text.len()), "no root element"))
}

fn check_attrs(el: &Element, allowed: &[&str], required: &[&str], errors: &mut Vec<ParseError>) -> bool {
    let mut ok = true;
    for (k, _) in &el.attrs {
        if !allowed.contains(&k.as_str()) {
            errors.push(ParseError::new(Code::UnknownKey, el.span, format!("unknown attribute `{k}` on <{}>", el.name)));
            ok = false;
        }
    }
    for r in required {
        if el.attr(r).is_none() {
            errors.push(ParseError::new(Code::Structure, el.span, format!("<{}> is missing `{r}`", el.name)));
            ok = false;
        }
    }
    ok
}

fn output_ref(s: &str) -> Option<OutputRef> {
    let (node, slot) = s.split_once('.')?;
    (is_valid_name(node) && is_valid_name(slot)).then(|| OutputRef::new(node, slot))
}

#[derive(Default)]
struct Spans {
    nodes: HashMap<String, SourceSpan>,
    bindings: HashMap<String, SourceSpan>,
}

fn read_node(el: &Element, prefix: &str, spans: &mut Spans, errors: &mut Vec<ParseError>) -> Option<NodeDef> {
    if !check_attrs(el, &["name", "type", "guid", "x", "y"], &["name", "type"], errors) {
        return None;
    }
    let name = el.attr("name").unwrap_or_default();
    let path = format!("{prefix}{name}");
    let before = errors.len();
    if !is_valid_name(name) {
        errors.push(ParseError::new(Code::BadValue, el.span, format!("invalid node name `{name}`")));
        return None;
    }
    spans.nodes.insert(path.clone(), el.span);
    let mut def = NodeDef::new(name, el.attr("type").unwrap_or_default());
    let mut inputs = HashSet::new();
    for c in &el.children {
        match c.name.as_str() {
            "param" => {
                if !check_attrs(c, &["name", "type", "value"], &["name", "value"], errors) {
                    continue;
                }
                let key = c.attr("name").unwrap_or_default();
                let raw = c.attr("value").unwrap_or_default();
                let Some(v) = parse_value(raw).filter(|v| c.attr("type").is_none_or(|t| t == v.kind_name())) else {
                    errors.push(ParseError::new(Code::BadValue, c.span, format!("bad value `{raw}` for `{key}`")).with_node(&path));
                    continue;
                };
                if def.params.insert(key.to_string(), v).is_some() {
                    errors.push(ParseError::new(Code::DuplicateKey, c.span, format!("duplicate param `{key}`")).with_node(&path));
                }
            }
            "suboutput" => {
                if !check_attrs(c, &["slot", "type"], &["slot", "type"], errors) {
                    continue;
                }
                let slot = c.attr("slot").unwrap_or_default();
                let raw = c.attr("type").unwrap_or_default();
                let Some(t) = SignalType::parse(raw) else {
                    errors.push(ParseError::new(Code::BadValue, c.span, format!("`{raw}` is not grayscale or color")).with_node(&path));
                    continue;
                };
                if def.output_types.insert(slot.to_string(), t).is_some() {
                    errors.push(ParseError::new(Code::DuplicateKey, c.span, format!("duplicate output `{slot}`")).with_node(&path));
                }
            }
            "connect" => {
                if !check_attrs(c, &["input", "from", "ref"], &["input", "from"], errors) {
                    continue;
                }
                let slot = c.attr("input").unwrap_or_default();
                let raw = c.attr("from").unwrap_or_default();
                let Some(r) = output_ref(raw) else {
                    errors.push(ParseError::new(Code::BadValue, c.span, format!("expected `node.slot`, got `{raw}`")).with_node(&path));
                    continue;
                };
                if !inputs.insert(slot.to_string()) {
                    errors.push(ParseError::new(Code::DuplicateKey, c.span, format!("input `{slot}` connected twice")).with_node(&path));
                    continue;
                }
                def.connections.push(Connection::new(slot, &r.node, &r.slot));
            }
            "subgraph" => {
                let inner: Vec<&Element> = c.children.iter().collect();
                match inner.as_slice() {
                    [m] if m.name == "material" => {
                        if def.subgraph.is_some() {
                            errors.push(ParseError::new(Code::DuplicateKey, c.span, "second <subgraph>").with_node(&path));
                            continue;
                        }
                        let g = read_material(m, &format!("{path}/"), spans, errors);
                        def.subgraph = Some(Box::new(g));
                    }
                    _ => errors.push(
                        ParseError::new(Code::Structure, c.span, "<subgraph> must hold exactly one <material>").with_node(&path),
                    ),
                }
            }
            // Embedded payload of bitmap/svg nodes; the engine never reads it.
            "resource" => {}
            other => errors.push(ParseError::new(Code::UnknownKey, c.span, format!("unknown element <{other}>")).with_node(&path)),
        }
    }
    (errors.len() == before).then_some(def)
}

/// Stable topological order: repeatedly take the earliest node in document
/// order whose sources are all placed. Leftovers (cycles) keep document
/// order so validation can report them.
fn topo_sort(nodes: Vec<NodeDef>) -> Vec<NodeDef> {
    let n = nodes.len();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, v) in nodes.iter().enumerate() {
        index.entry(v.name.as_str()).or_insert(i);
    }
    let deps: Vec<Vec<usize>> = nodes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.connections
                .iter()
                .filter_map(|c| index.get(c.src_node.as_str()).copied())
                .filter(|&j| j != i)
                .collect()
        })
        .collect();
    let mut remaining: Vec<usize> = deps.iter().map(Vec::len).collect();
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, ds) in deps.iter().enumerate() {
        for &d in ds {
            users[d].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while let Some(i) = ready.pop_first() {
        order.push(i);
        placed[i] = true;
        for &u in &users[i] {
            remaining[u] -= 1;
            if remaining[u] == 0 {
                ready.insert(u);
            }
        }
    }
    order.extend((0..n).filter(|&i| !placed[i]));
    let mut slots: Vec<Option<NodeDef>> = nodes.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().expect("each index once")).collect()
}

fn read_material(el: &Element, prefix: &str, spans: &mut Spans, errors: &mut Vec<ParseError>) -> MaterialGraph {
    check_attrs(el, &["format", "version"], &[], errors);
    let mut nodes = Vec::new();
    let mut outputs = BTreeMap::new();
    let mut extra = BTreeMap::new();
    let mut seen_outputs = false;
    for c in &el.children {
        match c.name.as_str() {
            "node" => {
                if let Some(n) = read_node(c, prefix, spans, errors) {
                    nodes.push(n);
                }
            }
            "outputs" => {
                if seen_outputs {
                    errors.push(ParseError::new(Code::DuplicateKey, c.span, "second <outputs> section"));
                    continue;
                }
                seen_outputs = true;
                for o in &c.children {
                    if o.name != "output" {
                        errors.push(ParseError::new(Code::UnknownKey, o.span, format!("unknown element <{}>", o.name)));
                        continue;
                    }
                    if !check_attrs(o, &["channel", "from"], &["channel", "from"], errors) {
                        continue;
                    }
                    let ch = o.attr("channel").unwrap_or_default();
                    let raw = o.attr("from").unwrap_or_default();
                    let Some(r) = output_ref(raw) else {
                        errors.push(ParseError::new(Code::BadValue, o.span, format!("expected `node.slot`, got `{raw}`")));
                        continue;
                    };
                    let dup = match Channel::parse(ch) {
                        Some(c) => outputs.insert(c, r).is_some(),
                        None if is_valid_name(ch) => extra.insert(ch.to_string(), r).is_some(),
                        None => {
                            errors.push(ParseError::new(Code::BadValue, o.span, format!("invalid output name `{ch}`")));
                            continue;
                        }
                    };
                    if dup {
                        errors.push(ParseError::new(Code::DuplicateKey, o.span, format!("output `{ch}` bound twice")));
                    }
                    spans.bindings.insert(format!("{prefix}{ch}"), o.span);
                }
            }
            other => errors.push(ParseError::new(Code::UnknownKey, c.span, format!("unknown element <{other}>"))),
        }
    }
    let mut g = MaterialGraph::assemble(topo_sort(nodes), registry_builtin());
    g.outputs = outputs;
    g.extra_outputs = extra;
    g
}

/// Parses an SBSV document, accepting nodes in any order.
pub fn parse_verbose(text: &str) -> Result<MaterialGraph, Vec<ParseError>> {
    let root = dom(text).map_err(|e| vec![e])?;
    if root.name != "material" {
        return Err(vec![ParseError::new(Code::Structure, root.span, format!("root element is <{}>, expected <material>", root.name))]);
    }
    let mut errors = Vec::new();
    let mut spans = Spans::default();
    let g = read_material(&root, "", &mut spans, &mut errors);
    if !errors.is_empty() {
        return Err(errors);
    }
    let end = span_at(text, text.len());
    let structural: Vec<ParseError> = g
        .validate(registry_builtin())
        .errors
        .iter()
        .map(|e| {
            let span = if e.binding {
                spans.bindings.get(&e.subject)
            } else {
                spans.nodes.get(&e.subject)
            };
            ParseError::structure(span.copied().unwrap_or(end), e)
        })
        .collect();
    if structural.is_empty() {
        Ok(g)
    } else {
        Err(structural)
    }
}

/// Deterministic GUID-shaped id for a node path.
fn guid(path: &str, type_name: &str) -> String {
    let h = Sha256::digest(format!("{path}\0{type_name}").as_bytes());
    let x: String = h[..16].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{}-{}-{}-{}", &x[..8], &x[8..12], &x[12..16], &x[16..20], &x[20..32])
}

fn write_material(g: &MaterialGraph, prefix: &str, indent: usize, out: &mut String) {
    let reg = registry_builtin();
    let pad = " ".repeat(indent);
    let _ = writeln!(out, "{pad}<material format=\"sbsv\" version=\"1.0\">");
    let depth = topo_positions(g);
    let mut row: HashMap<usize, usize> = HashMap::new();
    for n in &g.nodes {
        let d = depth.get(&n.name).copied().unwrap_or(0);
        let r = row.entry(d).or_insert(0);
        let (x, y) = (d * 160, *r * 120);
        *r += 1;
        let path = format!("{prefix}{}", n.name);
        let _ = writeln!(
            out,
            "{pad}  <node name=\"{}\" type=\"{}\" guid=\"{}\" x=\"{x}\" y=\"{y}\">",
            escape(n.name.as_str()),
            escape(n.type_name.as_str()),
            guid(&path, &n.type_name)
        );
        let spec = reg.interface(n);
        let mut written = HashSet::new();
        if let Some(spec) = &spec {
            for p in &spec.params {
                let v = n.params.get(p.name).unwrap_or(&p.default);
                written.insert(p.name);
                let _ = writeln!(
                    out,
                    "{pad}    <param name=\"{}\" type=\"{}\" value=\"{}\"/>",
                    p.name,
                    v.kind_name(),
                    escape(v.to_string())
                );
            }
        }
        for (k, v) in &n.params {
            if !written.contains(k.as_str()) {
                let _ = writeln!(
                    out,
                    "{pad}    <param name=\"{}\" type=\"{}\" value=\"{}\"/>",
                    escape(k.as_str()),
                    v.kind_name(),
                    escape(v.to_string())
                );
            }
        }
        let slot_rank = |s: &str| {
            spec.as_ref()
                .and_then(|sp| sp.outputs.iter().position(|o| o.name == s))
                .unwrap_or(usize::MAX)
        };
        let mut slots: Vec<(&String, &SignalType)> = n.output_types.iter().collect();
        slots.sort_by_key(|(s, _)| (slot_rank(s), s.as_str()));
        for (slot, t) in slots {
            let _ = writeln!(out, "{pad}    <suboutput slot=\"{}\" type=\"{t}\"/>", escape(slot.as_str()));
        }
        for c in &n.connections {
            let src_type = g.node(&c.src_node).map_or("", |s| s.type_name.as_str());
            let _ = writeln!(
                out,
                "{pad}    <connect input=\"{}\" from=\"{}.{}\" ref=\"{}\"/>",
                escape(c.dst_slot.as_str()),
                escape(c.src_node.as_str()),
                escape(c.src_slot.as_str()),
                guid(&format!("{prefix}{}", c.src_node), src_type)
            );
        }
        if let Some(inner) = &n.subgraph {
            let _ = writeln!(out, "{pad}    <subgraph>");
            write_material(inner, &format!("{path}/"), indent + 6, out);
            let _ = writeln!(out, "{pad}    </subgraph>");
        }
        let _ = writeln!(out, "{pad}  </node>");
    }
    let _ = writeln!(out, "{pad}  <outputs>");
    for ch in Channel::ALL {
        if let Some(r) = g.outputs.get(&ch) {
            let _ = writeln!(out, "{pad}    <output channel=\"{ch}\" from=\"{r}\"/>");
        }
    }
    for (name, r) in &g.extra_outputs {
        let _ = writeln!(out, "{pad}    <output channel=\"{}\" from=\"{r}\"/>", escape(name.as_str()));
    }
    let _ = writeln!(out, "{pad}  </outputs>");
    let _ = writeln!(out, "{pad}</material>");
}

/// SBSV text with every parameter written out, per-node GUIDs and editor
/// positions. Both are regenerated deterministically from the graph.
pub fn emit_verbose(g: &MaterialGraph) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    write_material(g, "", 0, &mut out);
    out
}
