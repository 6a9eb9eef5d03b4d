//! Node thumbnails and whole-graph cards.
//!
//! A card lays nodes out in columns by topological depth. Each cell holds the
//! node name and type in an 8×8 bitmap font above a 140×140 preview. Edges
//! run from the right edge of a source preview to the left edge of its
//! consumer and end in an arrowhead. A last column lists the five output
//! channels as terminal markers.

use std::collections::BTreeMap;

use font8x8::legacy::BASIC_LEGACY;
use thiserror::Error;

use crate::engine::ImageBuffer;
use crate::graph::{topo_positions, Channel, MaterialGraph};
use crate::RenderCache;

pub const THUMB: usize = 140;
/// Resolution previews are evaluated at before downsampling to [`THUMB`].
pub const PREVIEW_RESOLUTION: u32 = 256;
pub const GLYPH: usize = 8;
/// Characters per label line; longer labels are cut with `~`.
pub const LABEL_CHARS: usize = 22;

const PAD: usize = 4;
const LINE: usize = GLYPH + 2;
const CELL_W: usize = LABEL_CHARS * GLYPH + 2 * PAD;
const CELL_H: usize = PAD + 2 * LINE + THUMB + PAD;
const HGAP: usize = 48;
const VGAP: usize = 24;
const MARGIN: usize = 16;
const TERM_W: usize = 12 * GLYPH;
const TERM_ROW: usize = 28;

const BG: [f32; 4] = [0.12, 0.12, 0.13, 1.0];
const CELL_BG: [f32; 4] = [0.22, 0.22, 0.24, 1.0];
const TEXT: [f32; 4] = [0.95, 0.95, 0.95, 1.0];
const DIM_TEXT: [f32; 4] = [0.65, 0.7, 0.75, 1.0];
const EDGE: [f32; 4] = [0.85, 0.75, 0.35, 1.0];
const TERM_ON: [f32; 4] = [0.35, 0.8, 0.45, 1.0];
const TERM_OFF: [f32; 4] = [0.4, 0.4, 0.4, 1.0];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VizError {
    #[error("MISSING_PREVIEW: no preview for node `{0}`")]
    MissingPreview(String),
}

/// Pixel rectangle `x, y, w, h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub name: String,
    pub column: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutPlan {
    /// In graph node order.
    pub nodes: Vec<Placement>,
    pub cell: (usize, usize),
    pub canvas: (usize, usize),
    pub columns: usize,
    pub rows: usize,
}

impl LayoutPlan {
    pub fn place(&self, name: &str) -> Option<&Placement> {
        self.nodes.iter().find(|p| p.name == name)
    }

    pub fn cell_rect(&self, p: &Placement) -> Rect {
        Rect {
            x: MARGIN + p.column * (CELL_W + HGAP),
            y: MARGIN + p.row * (CELL_H + VGAP),
            w: CELL_W,
            h: CELL_H,
        }
    }

    /// Area holding the two label lines of a node.
    pub fn label_rect(&self, p: &Placement) -> Rect {
        let c = self.cell_rect(p);
        Rect {
            x: c.x + PAD,
            y: c.y + PAD,
            w: LABEL_CHARS * GLYPH,
            h: 2 * LINE,
        }
    }

    pub fn thumb_rect(&self, p: &Placement) -> Rect {
        let c = self.cell_rect(p);
        Rect {
            x: c.x + (CELL_W - THUMB) / 2,
            y: c.y + PAD + 2 * LINE,
            w: THUMB,
            h: THUMB,
        }
    }

    fn terminal_anchor(&self, i: usize) -> (usize, usize) {
        let x = MARGIN + self.columns * (CELL_W + HGAP);
        (x, MARGIN + PAD + 2 * LINE + i * TERM_ROW)
    }
}

/// Box-filter resample to `size`×`size`, as RGBA.
pub fn render_thumbnail(buf: &ImageBuffer, size: usize) -> ImageBuffer {
    buf.resample(size, size).to_color()
}

/// Columns are topological depth. Rows within a column are ordered by the
/// mean row of each node's sources, ties broken by node order.
pub fn layout(g: &MaterialGraph) -> LayoutPlan {
    let depth = topo_positions(g);
    let columns = depth.values().map(|d| d + 1).max().unwrap_or(0);
    let mut row_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rows = 0;
    for col in 0..columns {
        let mut members: Vec<(f64, usize, &str)> = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| depth[&n.name] == col)
            .map(|(i, n)| {
                let src: Vec<f64> = n
                    .connections
                    .iter()
                    .filter_map(|c| row_of.get(c.src_node.as_str()))
                    .map(|&r| r as f64)
                    .collect();
                let key = if src.is_empty() {
                    0.0
                } else {
                    src.iter().sum::<f64>() / src.len() as f64
                };
                (key, i, n.name.as_str())
            })
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        rows = rows.max(members.len());
        for (r, (_, _, name)) in members.into_iter().enumerate() {
            row_of.insert(name, r);
        }
    }
    let nodes: Vec<Placement> = g
        .nodes
        .iter()
        .map(|n| Placement {
            name: n.name.clone(),
            column: depth[&n.name],
            row: row_of[n.name.as_str()],
        })
        .collect();
    let grid_h = rows * (CELL_H + VGAP);
    let term_h = PAD + 2 * LINE + Channel::ALL.len() * TERM_ROW;
    let width = MARGIN + columns * (CELL_W + HGAP) + TERM_W + MARGIN;
    let height = MARGIN + grid_h.max(term_h) + MARGIN;
    LayoutPlan {
        nodes,
        cell: (CELL_W, CELL_H),
        canvas: (width, height),
        columns,
        rows,
    }
}

struct Canvas {
    img: ImageBuffer,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Canvas {
            img: ImageBuffer::filled(w, h, &BG),
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [f32; 4]) {
        if x < 0 || y < 0 || x as usize >= self.img.width || y as usize >= self.img.height {
            return;
        }
        let i = (y as usize * self.img.width + x as usize) * 4;
        self.img.data[i..i + 4].copy_from_slice(&c);
    }

    fn fill(&mut self, r: Rect, c: [f32; 4]) {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                self.set(x as i64, y as i64, c);
            }
        }
    }

    fn blit(&mut self, x0: usize, y0: usize, src: &ImageBuffer) {
        for y in 0..src.height {
            for x in 0..src.width {
                let p = src.pixel(x, y);
                self.set((x0 + x) as i64, (y0 + y) as i64, [p[0], p[1], p[2], 1.0]);
            }
        }
    }

    fn text(&mut self, x0: usize, y0: usize, s: &str, c: [f32; 4]) {
        for (k, ch) in s.chars().enumerate() {
            let code = if ch.is_ascii() { ch as usize } else { b'?' as usize };
            let glyph = BASIC_LEGACY[code];
            for (gy, bits) in glyph.iter().enumerate() {
                for gx in 0..8 {
                    if bits >> gx & 1 == 1 {
                        self.set((x0 + k * GLYPH + gx) as i64, (y0 + gy) as i64, c);
                    }
                }
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [f32; 4]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + ((x1 - x0) * s + steps / 2 * (x1 - x0).signum()) / steps;
            let y = y0 + ((y1 - y0) * s + steps / 2 * (y1 - y0).signum()) / steps;
            self.set(x, y, c);
        }
    }

    /// Filled right-pointing arrowhead with its tip at `(x, y)`.
    fn arrowhead(&mut self, x: i64, y: i64, c: [f32; 4]) {
        for d in 0..6i64 {
            for dy in -d..=d {
                self.set(x - 6 + d, y + dy, c);
            }
        }
    }
}

fn clip_label(s: &str) -> String {
    if s.chars().count() <= LABEL_CHARS {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(LABEL_CHARS - 1).collect();
        t.push('~');
        t
    }
}

/// Renders the whole graph. Every node needs a preview in `cache`.
pub fn render_graph_card(g: &MaterialGraph, cache: &RenderCache) -> Result<ImageBuffer, VizError> {
    let plan = layout(g);
    let mut thumbs = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        let imgs = cache
            .get(&n.name)
            .ok_or_else(|| VizError::MissingPreview(n.name.clone()))?;
        thumbs.push(render_thumbnail(imgs.primary(), THUMB));
    }

    let mut cv = Canvas::new(plan.canvas.0, plan.canvas.1);
    for ((n, p), thumb) in g.nodes.iter().zip(&plan.nodes).zip(&thumbs) {
        cv.fill(plan.cell_rect(p), CELL_BG);
        let l = plan.label_rect(p);
        cv.text(l.x, l.y, &clip_label(&n.name), TEXT);
        cv.text(l.x, l.y + LINE, &clip_label(&n.type_name), DIM_TEXT);
        let t = plan.thumb_rect(p);
        cv.blit(t.x, t.y, thumb);
    }

    for (n, p) in g.nodes.iter().zip(&plan.nodes) {
        let dst = plan.thumb_rect(p);
        let k = n.connections.len();
        for (j, c) in n.connections.iter().enumerate() {
            let Some(sp) = plan.place(&c.src_node) else { continue };
            let src = plan.thumb_rect(sp);
            let from = ((src.x + src.w) as i64, (src.y + src.h / 2) as i64);
            let to_y = dst.y + (j + 1) * dst.h / (k + 1);
            let to = (dst.x as i64 - 1, to_y as i64);
            cv.line(from, to, EDGE);
            cv.arrowhead(to.0, to.1, EDGE);
        }
    }

    for (i, ch) in Channel::ALL.iter().enumerate() {
        let (x, y) = plan.terminal_anchor(i);
        let bound = g.outputs.get(ch);
        let color = if bound.is_some() { TERM_ON } else { TERM_OFF };
        cv.fill(Rect { x, y, w: 10, h: 10 }, color);
        cv.text(x + 14, y + 1, ch.as_str(), TEXT);
        if let Some(p) = bound.and_then(|r| plan.place(&r.node)) {
            let src = plan.thumb_rect(p);
            let from = ((src.x + src.w) as i64, (src.y + src.h / 2) as i64);
            let to = (x as i64 - 1, (y + 5) as i64);
            cv.line(from, to, TERM_ON);
            cv.arrowhead(to.0, to.1, TERM_ON);
        }
    }
    Ok(cv.img)
}

/// Evaluates every node of `g` into `cache` so a card can be drawn.
pub fn fill_previews(g: &MaterialGraph, cache: &RenderCache) -> Result<(), crate::engine::EvalError> {
    for n in &g.nodes {
        crate::engine::eval_node_outputs(g, &n.name, cache)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::encode_png;
    use crate::graph::{registry_builtin, NodeDef, ParamValue};
    use crate::RenderSettings;

    fn reg() -> &'static crate::Registry {
        registry_builtin()
    }

    fn diamond() -> MaterialGraph {
        let mut g = MaterialGraph::new();
        g.try_push(NodeDef::new("gen", "perlin_noise"), reg()).unwrap();
        g.try_push(NodeDef::new("f1", "invert").with_input("input", "gen", "output"), reg())
            .unwrap();
        g.try_push(NodeDef::new("f2", "levels").with_input("input", "gen", "output"), reg())
            .unwrap();
        g.try_push(
            NodeDef::new("mix", "blend")
                .with_input("foreground", "f1", "output")
                .with_input("background", "f2", "output"),
            reg(),
        )
        .unwrap();
        g.bind(Channel::Height, "mix", "output");
        g
    }

    fn card(g: &MaterialGraph) -> ImageBuffer {
        let cache = RenderCache::new(RenderSettings::new(64, 1).unwrap());
        fill_previews(g, &cache).unwrap();
        render_graph_card(g, &cache).unwrap()
    }

    #[test]
    fn thumbnail_same_size_keeps_content() {
        let mut img = ImageBuffer::new(140, 140, 1);
        for (i, s) in img.data.iter_mut().enumerate() {
            *s = (i % 7) as f32 / 7.0;
        }
        let t = render_thumbnail(&img, 140);
        assert_eq!(t, img.to_color());
    }

    #[test]
    fn thumbnail_of_constant_is_constant() {
        for size in [17, 140, 300, 512] {
            let img = ImageBuffer::filled(size, size, &[0.2, 0.4, 0.6, 1.0]);
            let t = render_thumbnail(&img, 140);
            for p in t.data.chunks(4) {
                for (a, b) in p.iter().zip([0.2, 0.4, 0.6, 1.0]) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn thumbnail_halves_checker_cells() {
        // 280×280 with 2×2 cells of 140 px
        let mut img = ImageBuffer::new(280, 280, 1);
        for y in 0..280 {
            for x in 0..280 {
                img.data[y * 280 + x] = ((x / 140 + y / 140) % 2) as f32;
            }
        }
        let t = render_thumbnail(&img, 140);
        for y in 0..140 {
            for x in 0..140 {
                let mut acc = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    acc += img.data[(2 * y + dy) * 280 + 2 * x + dx];
                }
                assert_eq!(t.get(x, y, 0), acc / 4.0);
                assert_eq!(t.get(x, y, 0), ((x / 70 + y / 70) % 2) as f32);
            }
        }
    }

    #[test]
    fn layout_chain() {
        let mut g = MaterialGraph::new();
        g.try_push(NodeDef::new("a", "checker"), reg()).unwrap();
        g.try_push(NodeDef::new("b", "invert").with_input("input", "a", "output"), reg())
            .unwrap();
        g.try_push(NodeDef::new("c", "invert").with_input("input", "b", "output"), reg())
            .unwrap();
        let p = layout(&g);
        assert_eq!((p.columns, p.rows), (3, 1));
        let cols: Vec<usize> = p.nodes.iter().map(|n| n.column).collect();
        assert_eq!(cols, [0, 1, 2]);
    }

    #[test]
    fn layout_independent_generators() {
        let mut g = MaterialGraph::new();
        g.try_push(NodeDef::new("a", "checker"), reg()).unwrap();
        g.try_push(NodeDef::new("b", "perlin_noise"), reg()).unwrap();
        let p = layout(&g);
        assert_eq!(p.place("a").unwrap(), &Placement { name: "a".into(), column: 0, row: 0 });
        assert_eq!(p.place("b").unwrap(), &Placement { name: "b".into(), column: 0, row: 1 });
    }

    #[test]
    fn layout_diamond() {
        let p = layout(&diamond());
        let mid: Vec<_> = p.nodes.iter().filter(|n| n.column == 1).collect();
        assert_eq!(mid.len(), 2);
        assert_eq!(p.rows, 2);
    }

    #[test]
    fn layout_cells_are_unique_and_columns_follow_depth() {
        let opts = crate::corpus::CorpusOptions { max_nodes: 60, ..Default::default() };
        for g in crate::corpus::corpus(20, 5, &opts) {
            let p = layout(&g);
            let mut seen = std::collections::HashSet::new();
            for n in &p.nodes {
                assert!(seen.insert((n.column, n.row)));
            }
            let depth = topo_positions(&g);
            for node in &g.nodes {
                let me = p.place(&node.name).unwrap();
                assert_eq!(me.column, depth[&node.name]);
                for c in &node.connections {
                    assert!(p.place(&c.src_node).unwrap().column < me.column);
                }
            }
        }
    }

    #[test]
    fn layout_ignores_params() {
        let g = diamond();
        let mut h = g.clone();
        h.nodes[2].params.insert("in_low".into(), ParamValue::Float(0.3));
        assert_eq!(layout(&g), layout(&h));
    }

    #[test]
    fn one_node_card() {
        let mut g = MaterialGraph::new();
        g.try_push(NodeDef::new("tiles", "checker"), reg()).unwrap();
        let img = card(&g);
        let plan = layout(&g);
        assert_eq!((img.width, img.height), plan.canvas);
        let p = &plan.nodes[0];
        let t = plan.thumb_rect(p);
        // checker thumbnail is drawn: both black and white pixels appear
        let mut values = std::collections::BTreeSet::new();
        for y in t.y..t.y + t.h {
            for x in t.x..t.x + t.w {
                values.insert((img.get(x, y, 0) * 255.0) as u32);
            }
        }
        assert!(values.contains(&0) && values.contains(&255));
        // label has text pixels
        let l = plan.label_rect(p);
        let ink = (l.y..l.y + l.h)
            .flat_map(|y| (l.x..l.x + l.w).map(move |x| (x, y)))
            .filter(|&(x, y)| img.pixel(x, y) == TEXT)
            .count();
        assert!(ink > 20);
    }

    #[test]
    fn cards_are_deterministic() {
        let a = encode_png(&card(&diamond())).unwrap();
        let b = encode_png(&card(&diamond())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_graph_card_shows_terminals() {
        let g = MaterialGraph::new();
        let cache = RenderCache::new(RenderSettings::new(16, 0).unwrap());
        let img = render_graph_card(&g, &cache).unwrap();
        let off = img.data.chunks(4).filter(|p| *p == TERM_OFF).count();
        assert_eq!(off, 5 * 100);
    }

    #[test]
    fn missing_preview() {
        let g = diamond();
        let cache = RenderCache::new(RenderSettings::new(16, 0).unwrap());
        assert_eq!(
            render_graph_card(&g, &cache),
            Err(VizError::MissingPreview("gen".into()))
        );
    }

    #[test]
    fn renaming_changes_only_label_pixels() {
        let g = diamond();
        let h = g.renamed(|n| if n == "f2" { "second_filter".into() } else { n.to_string() });
        let (a, b) = (card(&g), card(&h));
        assert_eq!((a.width, a.height), (b.width, b.height));
        let plan = layout(&g);
        let label = plan.label_rect(plan.place("f2").unwrap());
        let mut diffs = 0;
        for y in 0..a.height {
            for x in 0..a.width {
                if a.pixel(x, y) != b.pixel(x, y) {
                    diffs += 1;
                    assert!(label.contains(x, y), "pixel ({x},{y}) outside label");
                }
            }
        }
        assert!(diffs > 0);
    }

    #[test]
    fn glyphs_are_legible_height() {
        // ink rows of capital letters and digits at 1:1 scale
        for ch in ('A'..='Z').chain('0'..='9') {
            let g = BASIC_LEGACY[ch as usize];
            let rows: Vec<usize> = (0..8).filter(|&r| g[r] != 0).collect();
            let span = rows.last().unwrap() - rows.first().unwrap() + 1;
            assert!(span >= 7, "{ch}: {span}");
        }
        assert!(LINE >= 7 && GLYPH >= 7);
    }

    #[test]
    fn long_names_are_clipped() {
        let s = "a".repeat(40);
        let c = clip_label(&s);
        assert_eq!(c.chars().count(), LABEL_CHARS);
        assert!(c.ends_with('~'));
    }
}
