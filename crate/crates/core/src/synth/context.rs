//! Serialising a partial graph into what a proposer conditions on.

use std::fmt::Write as _;

use thiserror::Error;

use super::{ContextMode, ProposerContext};
use crate::engine::{ImageBuffer, RenderCache};
use crate::graph::MaterialGraph;
use crate::transpiler::emit_compact;
use crate::viz::{render_graph_card, render_thumbnail, VizError, THUMB};

/// Pixels per patch side when estimating image tokens (140 px → 5×5 patches).
pub const PATCH_PX: usize = 28;
pub const DEFAULT_TOKEN_BUDGET: usize = 6144;
pub const IMG_MARKER: &str = "<img>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("MISSING_PREVIEW: no preview for node `{0}`")]
    MissingPreview(String),
}

impl From<VizError> for ContextError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::MissingPreview(n) => ContextError::MissingPreview(n),
        }
    }
}

/// `ceil(w/28)·ceil(h/28)`
pub fn estimate_tokens(width: usize, height: usize) -> usize {
    width.div_ceil(PATCH_PX) * height.div_ceil(PATCH_PX)
}

/// Downscales `img` (aspect preserved) until its token estimate fits.
pub fn fit_to_budget(img: &ImageBuffer, budget: usize) -> ImageBuffer {
    let (w, h) = (img.width, img.height);
    if estimate_tokens(w, h) <= budget {
        return img.clone();
    }
    let mut s = (budget as f64 / estimate_tokens(w, h) as f64).sqrt();
    loop {
        let nw = ((w as f64 * s).floor() as usize).max(1);
        let nh = ((h as f64 * s).round() as usize).max(1);
        if estimate_tokens(nw, nh) <= budget {
            return img.resample(nw, nh);
        }
        s *= 0.99;
    }
}

/// Program text without params, with every output type spelled out and an
/// image marker per node, plus one 140×140 preview per node.
pub fn serialize_mixed(g: &MaterialGraph, cache: &RenderCache) -> Result<ProposerContext, ContextError> {
    let mut text = String::from("nodes:\n");
    let mut slots = Vec::with_capacity(g.len());
    for n in &g.nodes {
        let imgs = cache
            .get(&n.name)
            .ok_or_else(|| ContextError::MissingPreview(n.name.clone()))?;
        slots.push(render_thumbnail(imgs.primary(), THUMB));
        let _ = writeln!(text, "  {}:", n.name);
        let _ = writeln!(text, "    type: {}", n.type_name);
        let outs: Vec<String> = n.output_types.iter().map(|(s, t)| format!("{s}: {t}")).collect();
        if !outs.is_empty() {
            let _ = writeln!(text, "    outputs: {{{}}}", outs.join(", "));
        }
        let ins: Vec<String> = n
            .connections
            .iter()
            .map(|c| format!("{}: {}.{}", c.dst_slot, c.src_node, c.src_slot))
            .collect();
        if !ins.is_empty() {
            let _ = writeln!(text, "    inputs: {{{}}}", ins.join(", "));
        }
        let _ = writeln!(text, "    img: {IMG_MARKER}");
    }
    Ok(ProposerContext {
        mode: ContextMode::Mixed,
        program_text: text,
        image_slots: slots,
        partial: g.clone(),
        step: 0,
    })
}

/// The whole graph as a single card image within `budget` patch tokens.
pub fn serialize_graph_mode(
    g: &MaterialGraph,
    cache: &RenderCache,
    budget: usize,
) -> Result<ProposerContext, ContextError> {
    let card = render_graph_card(g, cache)?;
    Ok(ProposerContext {
        mode: ContextMode::Graph,
        program_text: String::new(),
        image_slots: vec![fit_to_budget(&card, budget)],
        partial: g.clone(),
        step: 0,
    })
}

/// Context for `mode`; a target render, when given, is the first image slot.
pub fn build_context(
    g: &MaterialGraph,
    cache: &RenderCache,
    mode: ContextMode,
    target: Option<&ImageBuffer>,
    budget: usize,
    step: usize,
) -> Result<ProposerContext, ContextError> {
    let mut ctx = match mode {
        ContextMode::Mixed => serialize_mixed(g, cache)?,
        ContextMode::Graph => serialize_graph_mode(g, cache, budget)?,
        ContextMode::TextOnly => ProposerContext {
            mode,
            program_text: emit_compact(g),
            image_slots: Vec::new(),
            partial: g.clone(),
            step: 0,
        },
    };
    if let Some(t) = target {
        ctx.image_slots.insert(0, t.clone());
    }
    ctx.step = step;
    Ok(ctx)
}
