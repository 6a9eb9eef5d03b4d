//! Evaluation metrics: node error rate, masked memorisation score, KID, Gram
//! style distance and pixel L1.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::engine::ImageBuffer;
use crate::synth::SynthStats;
use crate::transpiler::{parse_compact, ParseError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("DIMENSION_MISMATCH: {0}")]
    DimensionMismatch(String),
    #[error("INSUFFICIENT_SAMPLES: {0}")]
    InsufficientSamples(String),
    #[error("parse error: {}", crate::transpiler::format_errors(.0))]
    Parse(Vec<ParseError>),
    #[error("feature file: {0}")]
    FeatureFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Discarded over generated nodes for one run; 0 when nothing was generated.
pub fn ner(stats: &SynthStats) -> f64 {
    ner_ratio(stats.nodes_discarded, stats.nodes_generated)
}

pub fn ner_ratio(discarded: usize, generated: usize) -> f64 {
    if generated == 0 {
        0.0
    } else {
        discarded as f64 / generated as f64
    }
}

/// Corpus NER: the mean of per-run ratios.
pub fn mean_ner(ratios: &[f64]) -> f64 {
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

pub const MASK: &str = "_";

/// An SBSC token stream with parameter values replaced by [`MASK`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedProgram {
    pub tokens: Vec<String>,
}

impl MaskedProgram {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Splits SBSC text into tokens. Each line starts with an indent token
/// `>N` (N = leading spaces). Runs of other characters split at whitespace,
/// and each of `:{}[],` is a token of its own.
pub fn tokenize(doc: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in doc.lines() {
        let body = line.trim_start_matches(' ');
        if body.trim().is_empty() {
            continue;
        }
        out.push(format!(">{}", line.len() - body.len()));
        let mut cur = String::new();
        for ch in body.chars() {
            if ch.is_whitespace() || ":{}[],".contains(ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                if !ch.is_whitespace() {
                    out.push(ch.to_string());
                }
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Replaces each value inside a `params: {...}` map with a single mask
/// token. Tuples collapse to one token too.
pub fn mask_tokens(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let is_params = tokens[i] == "params"
            && tokens.get(i + 1).map(String::as_str) == Some(":")
            && tokens.get(i + 2).map(String::as_str) == Some("{");
        if !is_params {
            out.push(tokens[i].clone());
            i += 1;
            continue;
        }
        out.extend(tokens[i..i + 3].iter().cloned());
        i += 3;
        // key : value (, key : value)* }
        while i < tokens.len() && tokens[i] != "}" {
            if tokens[i] == "," {
                out.push(tokens[i].clone());
                i += 1;
                continue;
            }
            out.push(tokens[i].clone());
            i += 1;
            if tokens.get(i).map(String::as_str) == Some(":") {
                out.push(":".into());
                i += 1;
            }
            let mut depth = 0usize;
            while i < tokens.len() {
                match tokens[i].as_str() {
                    "[" => depth += 1,
                    "]" => depth = depth.saturating_sub(1),
                    "," | "}" if depth == 0 => break,
                    _ => {}
                }
                i += 1;
            }
            out.push(MASK.into());
        }
        if i < tokens.len() {
            out.push(tokens[i].clone());
            i += 1;
        }
    }
    out
}

/// Parses `doc` as SBSC, then masks its parameter values.
pub fn mask_params(doc: &str) -> Result<MaskedProgram, MetricsError> {
    parse_compact(doc).map_err(MetricsError::Parse)?;
    Ok(MaskedProgram {
        tokens: mask_tokens(&tokenize(doc)),
    })
}

fn longest_common_run(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

fn intern<'a>(ids: &mut HashMap<&'a str, u32>, tokens: &'a [String]) -> Vec<u32> {
    tokens
        .iter()
        .map(|s| {
            let n = ids.len() as u32;
            *ids.entry(s.as_str()).or_insert(n)
        })
        .collect()
}

/// Longest run of consecutive tokens shared with any corpus program,
/// divided by the candidate length.
pub fn consec_match_score(candidate: &MaskedProgram, corpus: &[MaskedProgram]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let c = intern(&mut ids, &candidate.tokens);
    let refs: Vec<Vec<u32>> = corpus.iter().map(|r| intern(&mut ids, &r.tokens)).collect();
    let best = crate::par::map_slice(&refs, |r| longest_common_run(&c, r))
        .into_iter()
        .max()
        .unwrap_or(0);
    best as f64 / c.len() as f64
}

/// Dense row-major `rows × cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if data.len() != rows * cols {
            return Err(MetricsError::DimensionMismatch(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::FeatureFile("non-finite feature value".into()));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MetricsError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn slice_rows(&self, start: usize, n: usize) -> FeatureMatrix {
        FeatureMatrix {
            rows: n,
            cols: self.cols,
            data: self.data[start * self.cols..(start + n) * self.cols].to_vec(),
        }
    }
}

pub const FEATURE_MAGIC: &[u8; 4] = b"FMAT";

/// `FMAT`, then `n` and `d` as little-endian u32, then `n·d` little-endian
/// f32 values row by row.
pub fn write_features(w: &mut impl Write, m: &FeatureMatrix) -> Result<(), MetricsError> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(m.rows as u32).to_le_bytes())?;
    w.write_all(&(m.cols as u32).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features(r: &mut impl Read) -> Result<FeatureMatrix, MetricsError> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| MetricsError::FeatureFile("truncated header".into()))?;
    if &head[..4] != FEATURE_MAGIC {
        return Err(MetricsError::FeatureFile("bad magic".into()));
    }
    let n = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != n * d * 4 {
        return Err(MetricsError::FeatureFile(format!(
            "expected {} bytes of data, found {}",
            n * d * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(n, d, data)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix, MetricsError> {
    read_features(&mut std::fs::File::open(path)?)
}

pub fn save_features(path: &Path, m: &FeatureMatrix) -> Result<(), MetricsError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_features(&mut f, m)?;
    f.flush()?;
    Ok(())
}

fn poly_kernel(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / a.len() as f64 + 1.0).powi(3)
}

/// Sum of `k(a_i, b_j)` over all pairs, skipping `i == j` when `same`.
/// Row sums are computed in parallel and added in row order.
fn kernel_sum(a: &FeatureMatrix, b: &FeatureMatrix, same: bool) -> f64 {
    crate::par::map_range(a.rows, |i| {
        let ai = a.row(i);
        (0..b.rows)
            .filter(|&j| !(same && i == j))
            .map(|j| poly_kernel(ai, b.row(j)))
            .sum::<f64>()
    })
    .into_iter()
    .sum()
}

fn mmd2_unbiased(x: &FeatureMatrix, y: &FeatureMatrix) -> f64 {
    let (m, n) = (x.rows as f64, y.rows as f64);
    kernel_sum(x, x, true) / (m * (m - 1.0)) + kernel_sum(y, y, true) / (n * (n - 1.0))
        - 2.0 * kernel_sum(x, y, false) / (m * n)
}

/// Kernel Inception Distance: unbiased MMD² with the cubic polynomial kernel
/// `k(a, b) = (a·b / d + 1)³`. With `block`, rows are split into disjoint
/// consecutive blocks of that size (as many as both sets allow) and the
/// per-block estimates are averaged.
pub fn kid(x: &FeatureMatrix, y: &FeatureMatrix, block: Option<usize>) -> Result<f64, MetricsError> {
    if x.cols != y.cols {
        return Err(MetricsError::DimensionMismatch(format!(
            "feature dimension {} vs {}",
            x.cols, y.cols
        )));
    }
    if x.rows < 2 || y.rows < 2 {
        return Err(MetricsError::InsufficientSamples(format!(
            "need at least 2 rows per set, got {} and {}",
            x.rows, y.rows
        )));
    }
    match block {
        None => Ok(mmd2_unbiased(x, y)),
        Some(b) => {
            let count = x.rows.min(y.rows) / b.max(1);
            if b < 2 || count == 0 {
                return Err(MetricsError::InsufficientSamples(format!(
                    "block size {b} with {} and {} rows",
                    x.rows, y.rows
                )));
            }
            let total: f64 = (0..count)
                .map(|k| mmd2_unbiased(&x.slice_rows(k * b, b), &y.slice_rows(k * b, b)))
                .sum();
            Ok(total / count as f64)
        }
    }
}

/// One layer of feature maps: `channels` rows of `positions` (h·w) values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub positions: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, positions: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if data.len() != channels * positions {
            return Err(MetricsError::DimensionMismatch(format!(
                "{} values for {channels} channels × {positions} positions",
                data.len()
            )));
        }
        Ok(FeatureMap { channels, positions, data })
    }

    /// `f·fᵀ / (channels·positions)`, row-major `channels × channels`.
    pub fn gram(&self) -> Vec<f64> {
        let (c, p) = (self.channels, self.positions);
        let norm = (c * p) as f64;
        let mut g = vec![0.0; c * c];
        for i in 0..c {
            let fi = &self.data[i * p..(i + 1) * p];
            for j in i..c {
                let fj = &self.data[j * p..(j + 1) * p];
                let v = fi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() / norm;
                g[i * c + j] = v;
                g[j * c + i] = v;
            }
        }
        g
    }
}

/// Sum over layers of the mean absolute difference between Gram matrices.
pub fn gram_l1(fa: &[FeatureMap], fb: &[FeatureMap]) -> Result<f64, MetricsError> {
    if fa.len() != fb.len() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} layers vs {}",
            fa.len(),
            fb.len()
        )));
    }
    let mut total = 0.0;
    for (k, (a, b)) in fa.iter().zip(fb).enumerate() {
        if (a.channels, a.positions) != (b.channels, b.positions) {
            return Err(MetricsError::DimensionMismatch(format!(
                "layer {k}: {}×{} vs {}×{}",
                a.channels, a.positions, b.channels, b.positions
            )));
        }
        let (ga, gb) = (a.gram(), b.gram());
        let diff: f64 = ga.iter().zip(&gb).map(|(x, y)| (x - y).abs()).sum();
        total += diff / ga.len().max(1) as f64;
    }
    Ok(total)
}

/// Mean absolute difference over all samples.
pub fn pixel_l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}×{}×{} vs {}×{}×{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum();
    Ok(sum / a.data.len() as f64)
}
