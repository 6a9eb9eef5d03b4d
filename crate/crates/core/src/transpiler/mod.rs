//! Conversion between the verbose XML authoring format (SBSV) and the
//! compact, indentation-based topological text format (SBSC).
//!
//! SBSC is strict: nodes must appear in topological order and unknown keys
//! are errors. SBSV accepts any node order and is sorted on load.

mod compact;
mod verbose;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use compact::{
    emit_compact, emit_graph_block, emit_node, emit_outputs, parse_compact, parse_node_fragment,
    NodeFragment,
};
pub use verbose::{emit_verbose, parse_verbose};

use crate::graph::{ErrorCode, MaterialGraph, ParamValue, ValidationError};

/// Location of a parsed element. Line and column are 1-based; column counts
/// bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub offset: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseErrorCode {
    Syntax,
    UnknownKey,
    BadValue,
    DuplicateKey,
    Structure,
}

impl ParseErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorCode::Syntax => "SYNTAX",
            ParseErrorCode::UnknownKey => "UNKNOWN_KEY",
            ParseErrorCode::BadValue => "BAD_VALUE",
            ParseErrorCode::DuplicateKey => "DUPLICATE_KEY",
            ParseErrorCode::Structure => "STRUCTURE",
        }
    }
}

impl fmt::Display for ParseErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub span: SourceSpan,
    pub code: ParseErrorCode,
    pub message: String,
    /// Offending node, when known. Never set for [`ParseErrorCode::Syntax`].
    pub node: Option<String>,
    /// Underlying graph error for [`ParseErrorCode::Structure`].
    pub validation: Option<ErrorCode>,
}

impl ParseError {
    pub(crate) fn new(code: ParseErrorCode, span: SourceSpan, message: impl Into<String>) -> Self {
        ParseError {
            span,
            code,
            message: message.into(),
            node: None,
            validation: None,
        }
    }

    pub(crate) fn with_node(mut self, node: &str) -> Self {
        if self.code != ParseErrorCode::Syntax {
            self.node = Some(node.to_string());
        }
        self
    }

    pub(crate) fn structure(span: SourceSpan, e: &ValidationError) -> Self {
        ParseError {
            span,
            code: ParseErrorCode::Structure,
            message: format!("{}: {}", e.code, e.message),
            node: Some(e.subject.clone()),
            validation: Some(e.code),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.code, self.span)?;
        if let Some(n) = &self.node {
            write!(f, " (node `{n}`)")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ParseError {}

/// Joins errors one per line.
pub fn format_errors(errors: &[ParseError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
}

/// `1 - len(compact) / len(verbose)`, in UTF-8 bytes.
pub fn compression_ratio(g: &MaterialGraph) -> f64 {
    let c = emit_compact(g).len() as f64;
    let v = emit_verbose(g).len() as f64;
    1.0 - c / v
}

/// Reads one scalar literal: booleans, integers, decimals or bare symbols.
pub(crate) fn parse_scalar(s: &str) -> Option<ParamValue> {
    match s {
        "true" => return Some(ParamValue::Bool(true)),
        "false" => return Some(ParamValue::Bool(false)),
        _ => {}
    }
    let first = s.chars().next()?;
    if first.is_ascii_digit() || first == '-' || first == '.' {
        let body = s.strip_prefix('-').unwrap_or(s);
        if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
            return s.parse().ok().map(ParamValue::Int);
        }
        let numeric = body
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'-' | b'+'));
        if numeric && body.bytes().any(|b| b.is_ascii_digit()) {
            return s.parse::<f64>().ok().filter(|v| v.is_finite()).map(ParamValue::Float);
        }
        return None;
    }
    crate::graph::is_valid_name(s).then(|| ParamValue::Enum(s.to_string()))
}

/// Builds a tuple value from scalar literals; all-integer tuples stay integer.
pub(crate) fn tuple_value(items: &[&str]) -> Option<ParamValue> {
    if items.is_empty() {
        return None;
    }
    let vals: Option<Vec<ParamValue>> = items.iter().map(|s| parse_scalar(s)).collect();
    let vals = vals?;
    if vals.iter().all(|v| matches!(v, ParamValue::Int(_))) {
        return Some(ParamValue::IntTuple(
            vals.iter()
                .map(|v| match v {
                    ParamValue::Int(i) => *i,
                    _ => unreachable!(),
                })
                .collect(),
        ));
    }
    let floats: Option<Vec<f64>> = vals
        .iter()
        .map(|v| match v {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            _ => None,
        })
        .collect();
    floats.map(ParamValue::FloatTuple)
}

/// Parses a literal as written by [`ParamValue`]'s `Display`.
pub fn parse_value(s: &str) -> Option<ParamValue> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let items: Vec<&str> = inner.split(',').map(str::trim).collect();
        return tuple_value(&items);
    }
    parse_scalar(s)
}

#[cfg(test)]
mod tests;
