//! SBSC: two-space indented `key: value` lines, inline `{k: v}` maps for
//! node outputs, params and inputs, and a trailing `outputs:` block.
//!
//! Parsing has two layers. The syntax layer turns lines into an item tree
//! and node definitions; the build layer assembles a [`MaterialGraph`] and
//! reports graph violations as `STRUCTURE` errors at the node's span.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use super::{parse_scalar, tuple_value, ParseError, ParseErrorCode as Code, SourceSpan};
use crate::graph::{
    is_valid_name, registry_builtin, Channel, Connection, MaterialGraph, NodeDef, OutputRef,
    OutputType, SignalType, SUBGRAPH,
};

const NODE_KEYS: [&str; 5] = ["type", "graph", "outputs", "params", "inputs"];

#[derive(Debug)]
struct Line<'a> {
    /// Start of the key.
    span: SourceSpan,
    /// Just past the last byte of the line.
    end: SourceSpan,
    indent: usize,
    key: &'a str,
    value: Option<(&'a str, SourceSpan)>,
}

#[derive(Debug)]
struct Item<'a> {
    line: Line<'a>,
    children: Vec<Item<'a>>,
}

impl Item<'_> {
    fn last_end(&self) -> SourceSpan {
        self.children.last().map_or(self.line.end, |c| c.last_end())
    }
}

fn at(base: SourceSpan, delta: usize) -> SourceSpan {
    SourceSpan {
        line: base.line,
        column: base.column + delta,
        offset: base.offset + delta,
    }
}

fn lex<'a>(text: &'a str, errors: &mut Vec<ParseError>) -> Vec<Line<'a>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let start = SourceSpan {
            line: i + 1,
            column: 1,
            offset,
        };
        offset += raw.len();
        let content = raw.strip_suffix('\n').unwrap_or(raw);
        let content = content.strip_suffix('\r').unwrap_or(content);
        let end = at(start, content.len());
        if content.trim().is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start_matches(' ').len();
        let body = &content[indent..];
        let span = at(start, indent);
        if body.starts_with('\t') {
            errors.push(ParseError::new(Code::Syntax, span, "tabs are not allowed in indentation"));
            continue;
        }
        if indent % 2 != 0 {
            errors.push(ParseError::new(Code::Syntax, span, "indentation must be a multiple of two spaces"));
            continue;
        }
        let Some(colon) = body.find(':') else {
            errors.push(ParseError::new(Code::Syntax, end, "expected `key:`"));
            continue;
        };
        let key = &body[..colon];
        if key.is_empty() || !key.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            errors.push(ParseError::new(Code::Syntax, span, format!("malformed key `{key}`")));
            continue;
        }
        let rest = &body[colon + 1..];
        let value = if rest.trim().is_empty() {
            None
        } else if let Some(v) = rest.strip_prefix(' ') {
            let lead = v.len() - v.trim_start().len();
            Some((v.trim(), at(span, colon + 2 + lead)))
        } else {
            errors.push(ParseError::new(Code::Syntax, at(span, colon + 1), "expected a space after `:`"));
            continue;
        };
        out.push(Line {
            span,
            end,
            indent,
            key,
            value,
        });
    }
    out
}

fn tree<'a>(
    lines: &mut std::iter::Peekable<std::vec::IntoIter<Line<'a>>>,
    indent: usize,
    errors: &mut Vec<ParseError>,
) -> Vec<Item<'a>> {
    let mut items = Vec::new();
    while let Some(l) = lines.peek() {
        if l.indent < indent {
            break;
        }
        let line = lines.next().expect("peeked");
        if line.indent > indent {
            errors.push(ParseError::new(Code::Syntax, line.span, "unexpected indentation"));
            while lines.peek().is_some_and(|n| n.indent > indent) {
                lines.next();
            }
            continue;
        }
        let children = tree(lines, indent + 2, errors);
        if line.value.is_some() && !children.is_empty() {
            errors.push(ParseError::new(
                Code::Syntax,
                children[0].line.span,
                format!("`{}` has an inline value and a nested block", line.key),
            ));
        }
        items.push(Item { line, children });
    }
    items
}

enum Raw {
    Scalar(String),
    Tuple(Vec<String>),
}

struct Entry {
    key: String,
    key_span: SourceSpan,
    value: Raw,
    value_span: SourceSpan,
}

/// Parses `{k: v, k: [a, b]}`.
fn inline_map(text: &str, base: SourceSpan) -> Result<Vec<Entry>, ParseError> {
    let b = text.as_bytes();
    let mut i = 0;
    let syntax = |i: usize, msg: &str| ParseError::new(Code::Syntax, at(base, i), msg);
    let skip = |i: &mut usize| {
        while *i < b.len() && b[*i] == b' ' {
            *i += 1;
        }
    };
    let token = |i: &mut usize| {
        let s = *i;
        while *i < b.len() && !matches!(b[*i], b',' | b'[' | b']' | b'{' | b'}' | b' ' | b':') {
            *i += 1;
        }
        text[s..*i].to_string()
    };
    if b.first() != Some(&b'{') {
        return Err(syntax(0, "expected `{`"));
    }
    i += 1;
    let mut entries = Vec::new();
    skip(&mut i);
    if b.get(i) == Some(&b'}') {
        i += 1;
    } else {
        loop {
            skip(&mut i);
            let key_span = at(base, i);
            let key = token(&mut i);
            if key.is_empty() {
                return Err(syntax(i, "expected a key"));
            }
            if b.get(i) != Some(&b':') {
                return Err(syntax(i, "expected `:`"));
            }
            i += 1;
            skip(&mut i);
            let value_span = at(base, i);
            let value = if b.get(i) == Some(&b'[') {
                i += 1;
                let mut items = Vec::new();
                loop {
                    skip(&mut i);
                    let t = token(&mut i);
                    if t.is_empty() {
                        return Err(syntax(i, "expected a tuple element"));
                    }
                    items.push(t);
                    skip(&mut i);
                    match b.get(i) {
                        Some(b',') => i += 1,
                        Some(b']') => {
                            i += 1;
                            break;
                        }
                        Some(_) => return Err(syntax(i, "expected `,` or `]`")),
                        None => return Err(syntax(i, "unterminated tuple")),
                    }
                }
                Raw::Tuple(items)
            } else {
                let t = token(&mut i);
                if t.is_empty() {
                    return Err(syntax(i, "expected a value"));
                }
                Raw::Scalar(t)
            };
            entries.push(Entry {
                key,
                key_span,
                value,
                value_span,
            });
            skip(&mut i);
            match b.get(i) {
                Some(b',') => i += 1,
                Some(b'}') => {
                    i += 1;
                    break;
                }
                Some(_) => return Err(syntax(i, "expected `,` or `}`")),
                None => return Err(syntax(i, "unterminated map")),
            }
        }
    }
    if i != b.len() {
        return Err(syntax(i, "trailing characters after `}`"));
    }
    Ok(entries)
}

fn output_ref(s: &str) -> Option<OutputRef> {
    let (node, slot) = s.split_once('.')?;
    (is_valid_name(node) && is_valid_name(slot)).then(|| OutputRef::new(node, slot))
}

/// Source positions recorded while parsing, for mapping graph errors back.
#[derive(Default)]
struct Spans {
    nodes: HashMap<String, SourceSpan>,
    bindings: HashMap<String, SourceSpan>,
}

struct Ctx<'e> {
    errors: &'e mut Vec<ParseError>,
    spans: Spans,
}

impl Ctx<'_> {
    fn push(&mut self, e: ParseError) {
        self.errors.push(e);
    }

    fn node(&mut self, n: &Item<'_>, prefix: &str) -> Option<NodeDef> {
        let name = n.line.key;
        let path = format!("{prefix}{name}");
        let errs_before = self.errors.len();
        if !is_valid_name(name) {
            self.push(ParseError::new(Code::BadValue, n.line.span, format!("invalid node name `{name}`")));
        }
        if n.line.value.is_some() {
            self.push(ParseError::new(Code::Syntax, n.line.span, "node header takes no inline value"));
        }
        self.spans.nodes.insert(path.clone(), n.line.span);

        let mut seen = HashSet::new();
        let mut type_name = None;
        let mut def = NodeDef::new(name, "");
        let mut nested = None;
        for item in &n.children {
            let l = &item.line;
            if !NODE_KEYS.contains(&l.key) {
                self.push(ParseError::new(Code::UnknownKey, l.span, format!("unknown node key `{}`", l.key)).with_node(&path));
                continue;
            }
            if !seen.insert(l.key) {
                self.push(ParseError::new(Code::DuplicateKey, l.span, format!("duplicate key `{}`", l.key)).with_node(&path));
                continue;
            }
            if l.key == "graph" {
                if l.value.is_some() {
                    self.push(ParseError::new(Code::Syntax, l.span, "`graph` takes a nested block"));
                } else {
                    nested = Some(item);
                }
                continue;
            }
            let Some((value, vspan)) = l.value else {
                self.push(ParseError::new(Code::Syntax, l.end, format!("`{}` needs a value", l.key)));
                continue;
            };
            match l.key {
                "type" => {
                    if is_valid_name(value) {
                        type_name = Some(value);
                    } else {
                        self.push(ParseError::new(Code::BadValue, vspan, format!("invalid type name `{value}`")).with_node(&path));
                    }
                }
                key => {
                    let entries = match inline_map(value, vspan) {
                        Ok(e) => e,
                        Err(e) => {
                            self.push(e);
                            continue;
                        }
                    };
                    let mut keys = HashSet::new();
                    for e in entries {
                        if !keys.insert(e.key.clone()) {
                            self.push(ParseError::new(Code::DuplicateKey, e.key_span, format!("duplicate key `{}`", e.key)).with_node(&path));
                            continue;
                        }
                        let bad = |msg: String| ParseError::new(Code::BadValue, e.value_span, msg).with_node(&path);
                        match (key, &e.value) {
                            ("params", Raw::Scalar(s)) => match parse_scalar(s) {
                                Some(v) => {
                                    def.params.insert(e.key, v);
                                }
                                None => self.push(bad(format!("bad value `{s}` for `{}`", e.key))),
                            },
                            ("params", Raw::Tuple(items)) => {
                                let refs: Vec<&str> = items.iter().map(String::as_str).collect();
                                match tuple_value(&refs) {
                                    Some(v) => {
                                        def.params.insert(e.key, v);
                                    }
                                    None => self.push(bad(format!("bad tuple for `{}`", e.key))),
                                }
                            }
                            ("outputs", Raw::Scalar(s)) => match SignalType::parse(s) {
                                Some(t) => {
                                    def.output_types.insert(e.key, t);
                                }
                                None => self.push(bad(format!("`{s}` is not grayscale or color"))),
                            },
                            ("inputs", Raw::Scalar(s)) => match output_ref(s) {
                                Some(r) => def.connections.push(Connection::new(&e.key, &r.node, &r.slot)),
                                None => self.push(bad(format!("expected `node.slot`, got `{s}`"))),
                            },
                            _ => self.push(bad(format!("tuple not allowed in `{key}`"))),
                        }
                    }
                }
            }
        }
        let Some(type_name) = type_name else {
            if self.errors.len() == errs_before {
                self.push(ParseError::new(Code::Syntax, n.last_end(), "node ended before its `type`"));
            }
            return None;
        };
        def.type_name = type_name.to_string();
        if let Some(item) = nested {
            if type_name != SUBGRAPH {
                self.push(
                    ParseError::new(Code::UnknownKey, item.line.span, "only subgraph nodes take `graph`").with_node(&path),
                );
                return None;
            }
            let inner = self.document(&item.children, &format!("{path}/"));
            def.subgraph = Some(Box::new(inner));
        }
        (self.errors.len() == errs_before).then_some(def)
    }

    fn bindings(&mut self, items: &[Item<'_>], prefix: &str) -> BTreeMap<Channel, OutputRef> {
        let mut out = BTreeMap::new();
        for b in items {
            let l = &b.line;
            if !b.children.is_empty() {
                self.push(ParseError::new(Code::Syntax, b.children[0].line.span, "unexpected nested block"));
            }
            let Some(ch) = Channel::parse(l.key) else {
                self.push(ParseError::new(Code::UnknownKey, l.span, format!("unknown output channel `{}`", l.key)));
                continue;
            };
            let Some((value, vspan)) = l.value else {
                self.push(ParseError::new(Code::Syntax, l.end, format!("`{}` needs a value", l.key)));
                continue;
            };
            let Some(r) = output_ref(value) else {
                self.push(ParseError::new(Code::BadValue, vspan, format!("expected `node.slot`, got `{value}`")));
                continue;
            };
            if out.insert(ch, r).is_some() {
                self.push(ParseError::new(Code::DuplicateKey, l.span, format!("duplicate output `{}`", l.key)));
            }
            self.spans.bindings.insert(format!("{prefix}{}", l.key), l.span);
        }
        out
    }

    fn document(&mut self, items: &[Item<'_>], prefix: &str) -> MaterialGraph {
        let mut nodes = Vec::new();
        let mut outputs = BTreeMap::new();
        let mut seen = HashSet::new();
        let mut names = HashSet::new();
        for item in items {
            let l = &item.line;
            if l.key != "nodes" && l.key != "outputs" {
                self.push(ParseError::new(Code::UnknownKey, l.span, format!("unknown section `{}`", l.key)));
                continue;
            }
            if !seen.insert(l.key) {
                self.push(ParseError::new(Code::DuplicateKey, l.span, format!("duplicate section `{}`", l.key)));
                continue;
            }
            if l.value.is_some() {
                self.push(ParseError::new(Code::Syntax, l.span, format!("`{}` takes a nested block", l.key)));
                continue;
            }
            if l.key == "nodes" {
                for n in &item.children {
                    if !names.insert(n.line.key) {
                        self.push(
                            ParseError::new(Code::DuplicateKey, n.line.span, format!("node `{}` defined twice", n.line.key))
                                .with_node(&format!("{prefix}{}", n.line.key)),
                        );
                        continue;
                    }
                    if let Some(def) = self.node(n, prefix) {
                        nodes.push(def);
                    }
                }
            } else {
                outputs = self.bindings(&item.children, prefix);
            }
        }
        let mut g = MaterialGraph::assemble(nodes, registry_builtin());
        g.outputs = outputs;
        g
    }
}

fn structure_errors(g: &MaterialGraph, spans: &Spans, fallback: SourceSpan) -> Vec<ParseError> {
    g.validate(registry_builtin())
        .errors
        .iter()
        .map(|e| {
            let span = if e.binding {
                spans.bindings.get(&e.subject)
            } else {
                spans.nodes.get(&e.subject)
            };
            ParseError::structure(span.copied().unwrap_or(fallback), e)
        })
        .collect()
}

fn end_of(text: &str) -> SourceSpan {
    let line = text.matches('\n').count() + 1;
    let last = text.rsplit('\n').next().unwrap_or("");
    SourceSpan {
        line,
        column: last.len() + 1,
        offset: text.len(),
    }
}

/// Parses an SBSC document. Nodes must be in topological order.
pub fn parse_compact(text: &str) -> Result<MaterialGraph, Vec<ParseError>> {
    let mut errors = Vec::new();
    let lines = lex(text, &mut errors);
    let items = tree(&mut lines.into_iter().peekable(), 0, &mut errors);
    let end = end_of(text);
    let mut ctx = Ctx {
        errors: &mut errors,
        spans: Spans::default(),
    };
    let g = ctx.document(&items, "");
    let spans = ctx.spans;
    if !errors.is_empty() {
        return Err(errors);
    }
    let structural = structure_errors(&g, &spans, end);
    if structural.is_empty() {
        Ok(g)
    } else {
        Err(structural)
    }
}

/// One generation step in SBSC: a node block or the closing `outputs:`
/// block.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeFragment {
    Node(NodeDef),
    Outputs(BTreeMap<Channel, OutputRef>),
}

/// Parses a continuation of an SBSC document: either one node block indented
/// as under `nodes:`, or an `outputs:` section. Only syntax is checked; the
/// node's graph validity is up to the caller.
pub fn parse_node_fragment(text: &str) -> Result<NodeFragment, Vec<ParseError>> {
    let mut errors = Vec::new();
    let lines = lex(text, &mut errors);
    let end = end_of(text);
    let Some(first) = lines.first() else {
        errors.push(ParseError::new(Code::Syntax, end, "empty fragment"));
        return Err(errors);
    };
    let top = first.indent;
    let is_outputs = top == 0 && first.key == "outputs";
    let items = tree(&mut lines.into_iter().peekable(), top, &mut errors);
    let mut ctx = Ctx {
        errors: &mut errors,
        spans: Spans::default(),
    };
    let result = if is_outputs {
        if items.len() != 1 {
            ctx.push(ParseError::new(Code::Syntax, items[1].line.span, "text after the outputs block"));
        }
        if items[0].line.value.is_some() {
            ctx.push(ParseError::new(Code::Syntax, items[0].line.span, "`outputs` takes a nested block"));
        }
        Some(NodeFragment::Outputs(ctx.bindings(&items[0].children, "")))
    } else if top != 2 {
        ctx.push(ParseError::new(Code::Syntax, SourceSpan { line: 1, column: 1, offset: 0 }, "node blocks are indented two spaces"));
        None
    } else {
        if items.len() > 1 {
            ctx.push(ParseError::new(Code::Syntax, items[1].line.span, "more than one node in fragment"));
        }
        ctx.node(&items[0], "").map(NodeFragment::Node)
    };
    match result {
        Some(f) if errors.is_empty() => Ok(f),
        _ => Err(errors),
    }
}

fn write_map(out: &mut String, pad: &str, key: &str, entries: &[(String, String)]) {
    if entries.is_empty() {
        return;
    }
    let body: Vec<String> = entries.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let _ = writeln!(out, "{pad}{key}: {{{}}}", body.join(", "));
}

fn write_node(n: &NodeDef, indent: usize, out: &mut String) {
    let reg = registry_builtin();
    let pad = " ".repeat(indent);
    let inner = " ".repeat(indent + 2);
    let _ = writeln!(out, "{pad}{}:", n.name);
    let _ = writeln!(out, "{inner}type: {}", n.type_name);
    if let Some(g) = &n.subgraph {
        let _ = writeln!(out, "{inner}graph:");
        write_graph(g, indent + 4, out);
    }
    let spec = reg.interface(n);

    let mut outputs = Vec::new();
    if let Some(spec) = &spec {
        for slot in &spec.outputs {
            if matches!(slot.ty, OutputType::Declared(_)) {
                if let Some(t) = n.output_types.get(&slot.name) {
                    outputs.push((slot.name.clone(), t.to_string()));
                }
            }
        }
    }
    write_map(out, &inner, "outputs", &outputs);

    let mut params = Vec::new();
    let mut known = HashSet::new();
    if let Some(spec) = &spec {
        for p in &spec.params {
            known.insert(p.name);
            if let Some(v) = n.params.get(p.name) {
                if *v != p.default {
                    params.push((p.name.to_string(), v.to_string()));
                }
            }
        }
    }
    for (k, v) in &n.params {
        if !known.contains(k.as_str()) {
            params.push((k.clone(), v.to_string()));
        }
    }
    write_map(out, &inner, "params", &params);

    let inputs: Vec<(String, String)> = n
        .connections
        .iter()
        .map(|c| (c.dst_slot.clone(), format!("{}.{}", c.src_node, c.src_slot)))
        .collect();
    write_map(out, &inner, "inputs", &inputs);
}

fn write_outputs(g: &MaterialGraph, indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    let _ = writeln!(out, "{pad}outputs:");
    for ch in Channel::ALL {
        if let Some(r) = g.outputs.get(&ch) {
            let _ = writeln!(out, "{pad}  {ch}: {r}");
        }
    }
}

fn write_graph(g: &MaterialGraph, indent: usize, out: &mut String) {
    let _ = writeln!(out, "{}nodes:", " ".repeat(indent));
    for n in &g.nodes {
        write_node(n, indent + 2, out);
    }
    write_outputs(g, indent, out);
}

/// Canonical SBSC text. Parameters equal to their registry default are
/// omitted; non-PBR outputs are not representable and are dropped.
pub fn emit_compact(g: &MaterialGraph) -> String {
    let mut out = String::new();
    write_graph(g, 0, &mut out);
    out
}

/// A graph's `nodes:`/`outputs:` block at the given indent.
pub fn emit_graph_block(g: &MaterialGraph, indent: usize) -> String {
    let mut out = String::new();
    write_graph(g, indent, &mut out);
    out
}

/// One node block as it appears under `nodes:`.
pub fn emit_node(n: &NodeDef) -> String {
    let mut out = String::new();
    write_node(n, 2, &mut out);
    out
}

/// The trailing `outputs:` section.
pub fn emit_outputs(g: &MaterialGraph) -> String {
    let mut out = String::new();
    write_outputs(g, 0, &mut out);
    out
}
