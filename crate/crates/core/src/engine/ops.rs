//! Node kernels. Generators are functions of tile coordinates
//! `u = (x + 0.5) / tile`; filters wrap toroidally when tiling is on and clamp
//! to the edge otherwise. Every result passes through [`ImageBuffer::finalize`].

use std::collections::HashMap;

use super::image::{sanitize, ImageBuffer};
use super::noise::{node_key, perlin, to_unit};
use super::{EvalError, EvalErrorCode};
use crate::graph::{NodeDef, NodeTypeSpec, ParamValue, SignalType};
use crate::par::for_each_row;

/// Per-evaluation constants shared by every kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ctx {
    /// Pixels per unit tile.
    pub tile: usize,
    /// Image side in pixels (`tile` × number of periods rendered).
    pub size: usize,
    pub seed: u64,
    pub tiling: bool,
}

impl Ctx {
    #[inline]
    fn coord(&self, i: usize) -> f32 {
        ((i % self.tile) as f32 + 0.5) / self.tile as f32
    }

    /// Neighbour index along one axis.
    #[inline]
    fn offset(&self, i: usize, d: isize) -> usize {
        let n = self.size as isize;
        let j = i as isize + d;
        if self.tiling {
            j.rem_euclid(n) as usize
        } else {
            j.clamp(0, n - 1) as usize
        }
    }
}

/// Typed parameter access with registry defaults as fallback.
pub(crate) struct Params<'a> {
    node: &'a NodeDef,
    spec: &'a NodeTypeSpec,
}

impl<'a> Params<'a> {
    pub fn new(node: &'a NodeDef, spec: &'a NodeTypeSpec) -> Self {
        Params { node, spec }
    }

    fn value(&self, key: &str) -> &ParamValue {
        self.node
            .params
            .get(key)
            .or_else(|| self.spec.param(key).map(|p| &p.default))
            .unwrap_or_else(|| panic!("`{}` has no parameter `{key}`", self.spec.type_name))
    }

    pub fn f(&self, key: &str) -> f32 {
        self.value(key).as_f64().unwrap_or(0.0) as f32
    }

    pub fn i(&self, key: &str) -> i64 {
        match self.value(key) {
            ParamValue::Int(v) => *v,
            v => v.as_f64().unwrap_or(0.0) as i64,
        }
    }

    pub fn floats(&self, key: &str) -> Vec<f32> {
        self.value(key)
            .components()
            .unwrap_or_default()
            .into_iter()
            .map(|v| v as f32)
            .collect()
    }

    pub fn ints(&self, key: &str) -> Vec<i64> {
        match self.value(key) {
            ParamValue::IntTuple(v) => v.clone(),
            v => v
                .components()
                .unwrap_or_default()
                .into_iter()
                .map(|x| x as i64)
                .collect(),
        }
    }

    pub fn symbol(&self, key: &str) -> &str {
        match self.value(key) {
            ParamValue::Enum(s) => s,
            _ => "",
        }
    }

    pub fn flag(&self, key: &str) -> bool {
        matches!(self.value(key), ParamValue::Bool(true))
    }
}

fn generate(ctx: &Ctx, channels: usize, f: impl Fn(usize, usize, &mut [f32]) + Sync + Send) -> ImageBuffer {
    let mut img = ImageBuffer::new(ctx.size, ctx.size, channels);
    for_each_row(&mut img.data, ctx.size * channels, |y, row| {
        for x in 0..ctx.size {
            f(x, y, &mut row[x * channels..(x + 1) * channels]);
        }
    });
    img.finalize()
}

fn map_samples(src: &ImageBuffer, f: impl Fn(&[f32], &mut [f32]) + Sync + Send, out_channels: usize) -> ImageBuffer {
    let mut out = ImageBuffer::new(src.width, src.height, out_channels);
    let w = src.width;
    for_each_row(&mut out.data, w * out_channels, |y, row| {
        for x in 0..w {
            f(src.pixel(x, y), &mut row[x * out_channels..(x + 1) * out_channels]);
        }
    });
    out.finalize()
}

#[inline]
fn fract(v: f32) -> f32 {
    v - v.floor()
}

/// Runs the kernel for an evaluable node type.
pub(crate) fn run(
    ctx: &Ctx,
    node: &NodeDef,
    spec: &NodeTypeSpec,
    qualified_name: &str,
    inputs: &HashMap<&str, &ImageBuffer>,
) -> Result<ImageBuffer, EvalError> {
    let p = Params::new(node, spec);
    let input = |slot: &str| {
        inputs.get(slot).copied().ok_or_else(|| {
            EvalError::new(
                EvalErrorCode::MissingNode,
                qualified_name,
                format!("input `{slot}` is not connected"),
            )
        })
    };
    let out_type = node
        .output_types
        .get("output")
        .copied()
        .unwrap_or(SignalType::Grayscale);
    let img = match spec.type_name {
        "uniform_color" => {
            let px = match out_type {
                SignalType::Color => p.floats("value"),
                SignalType::Grayscale => vec![p.f("luminance")],
            };
            ImageBuffer::filled(ctx.size, ctx.size, &px)
        }
        "perlin_noise" => {
            let key = node_key(ctx.seed, qualified_name, p.i("seed"));
            let scale = p.i("scale").max(1);
            generate(ctx, 1, |x, y, out| {
                let u = ctx.coord(x) * scale as f32;
                let v = ctx.coord(y) * scale as f32;
                out[0] = to_unit(perlin(key, u, v, scale));
            })
        }
        "fbm_noise" => {
            let key = node_key(ctx.seed, qualified_name, p.i("seed"));
            let scale = p.i("scale").max(1);
            let octaves = p.i("octaves").clamp(1, 8) as u32;
            let persistence = p.f("persistence");
            let amps: Vec<f32> = (0..octaves).map(|o| persistence.powi(o as i32)).collect();
            let total: f32 = amps.iter().sum();
            generate(ctx, 1, |x, y, out| {
                let mut acc = 0.0f32;
                for (o, amp) in amps.iter().enumerate() {
                    let period = scale << o;
                    let u = ctx.coord(x) * period as f32;
                    let v = ctx.coord(y) * period as f32;
                    acc += amp * perlin(super::noise::splitmix64(key ^ o as u64), u, v, period);
                }
                out[0] = to_unit(acc / total);
            })
        }
        "checker" => {
            let tiles = p.i("tiles").max(1);
            let (low, high) = (p.f("low"), p.f("high"));
            generate(ctx, 1, |x, y, out| {
                let cx = ((ctx.coord(x) * tiles as f32).floor() as i64).rem_euclid(tiles);
                let cy = ((ctx.coord(y) * tiles as f32).floor() as i64).rem_euclid(tiles);
                out[0] = if (cx + cy) % 2 == 0 { high } else { low };
            })
        }
        "gradient_linear" => {
            let vertical = p.symbol("direction") == "vertical";
            let repeat = p.i("repeat").max(1) as f32;
            generate(ctx, 1, |x, y, out| {
                let t = if vertical { ctx.coord(y) } else { ctx.coord(x) };
                out[0] = fract(t * repeat);
            })
        }
        "brick" => {
            let cols = p.i("columns").max(1) as f32;
            let rows = (2 * p.i("row_pairs").max(1)) as f32;
            let mortar = p.f("mortar");
            let shift = p.f("offset");
            let half = mortar * 0.5;
            generate(ctx, 1, |x, y, out| {
                let rv = ctx.coord(y) * rows;
                let row = rv.floor() as i64;
                let fy = fract(rv);
                let s = if row % 2 == 1 { shift } else { 0.0 };
                let fx = fract(fract(ctx.coord(x) * cols) + s);
                let inside = fx >= half && fx <= 1.0 - half && fy >= half && fy <= 1.0 - half;
                out[0] = if inside { 1.0 } else { 0.0 };
            })
        }
        "polygon_shape" => {
            let sides = p.i("sides").clamp(3, 12) as f32;
            let radius = p.f("radius");
            let smooth = p.f("smoothness");
            let rotation = p.f("rotation") * std::f32::consts::TAU;
            let sector = std::f32::consts::TAU / sides;
            let apothem = radius * (std::f32::consts::PI / sides).cos();
            generate(ctx, 1, |x, y, out| {
                let lx = fract(ctx.coord(x)) - 0.5;
                let ly = fract(ctx.coord(y)) - 0.5;
                let r = (lx * lx + ly * ly).sqrt();
                let a = (ly.atan2(lx) - rotation).rem_euclid(sector) - sector * 0.5;
                let edge = apothem / a.cos();
                let d = r - edge;
                out[0] = if smooth <= 0.0 {
                    if d <= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    1.0 - smoothstep(-smooth * 0.5, smooth * 0.5, d)
                };
            })
        }
        "blend" => {
            let mode = BlendMode::parse(p.symbol("mode")).unwrap_or(BlendMode::Copy);
            let mask = inputs.get("mask").copied();
            blend(input("foreground")?, input("background")?, mask, mode, p.f("opacity"))
                .map_err(|e| e.at(qualified_name))?
        }
        "levels" => levels(
            input("input")?,
            LevelsParams {
                in_low: p.f("in_low"),
                in_high: p.f("in_high"),
                gamma: p.f("gamma"),
                out_low: p.f("out_low"),
                out_high: p.f("out_high"),
            },
        ),
        "blur_box" => {
            let r = (p.f("radius") * ctx.tile as f32).round() as usize;
            let w = vec![1.0f64 / (2 * r + 1) as f64; 2 * r + 1];
            convolve_separable(ctx, input("input")?, &w)
        }
        "blur_gaussian" => {
            let sigma = p.f("sigma") as f64 * ctx.tile as f64;
            convolve_separable(ctx, input("input")?, &gaussian_weights(sigma))
        }
        "invert" => {
            let src = input("input")?;
            let color = src.channels == 4;
            map_samples(
                src,
                |s, o| {
                    for (c, (dst, v)) in o.iter_mut().zip(s).enumerate() {
                        *dst = if color && c == 3 { *v } else { 1.0 - v };
                    }
                },
                src.channels,
            )
        }
        "grayscale_conversion" => {
            let w = p.floats("weights");
            grayscale_conversion(input("input")?, [w[0], w[1], w[2]])
        }
        "gradient_map" => {
            let mut stops = vec![(0.0, rgba(&p.floats("low")))];
            if p.flag("use_mid") {
                stops.push((p.f("mid_position"), rgba(&p.floats("mid"))));
            }
            stops.push((1.0, rgba(&p.floats("high"))));
            gradient_map(input("input")?, &stops).map_err(|e| e.at(qualified_name))?
        }
        "transform_2d" => {
            let off = p.floats("offset");
            let rep = p.ints("repeat");
            transform(
                ctx,
                input("input")?,
                (off[0], off[1]),
                (rep[0].max(1) as f32, rep[1].max(1) as f32),
                p.symbol("rotation"),
            )
        }
        "normal_from_height" => normal_from_height(ctx, input("input")?, p.f("intensity")),
        other => {
            return Err(EvalError::new(
                EvalErrorCode::EvalUnsupported,
                qualified_name,
                format!("no kernel for `{other}`"),
            ))
        }
    };
    Ok(img)
}

fn rgba(v: &[f32]) -> [f32; 4] {
    [v[0], v[1], v[2], v[3]]
}

#[inline]
fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendMode {
    Copy,
    Add,
    Subtract,
    Multiply,
    Screen,
    Max,
    Min,
}

impl BlendMode {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "copy" => BlendMode::Copy,
            "add" => BlendMode::Add,
            "subtract" => BlendMode::Subtract,
            "multiply" => BlendMode::Multiply,
            "screen" => BlendMode::Screen,
            "max" => BlendMode::Max,
            "min" => BlendMode::Min,
            _ => return None,
        })
    }

    #[inline]
    fn apply(self, fg: f32, bg: f32) -> f32 {
        match self {
            BlendMode::Copy => fg,
            BlendMode::Add => bg + fg,
            BlendMode::Subtract => bg - fg,
            BlendMode::Multiply => bg * fg,
            BlendMode::Screen => 1.0 - (1.0 - bg) * (1.0 - fg),
            BlendMode::Max => bg.max(fg),
            BlendMode::Min => bg.min(fg),
        }
    }
}

/// `bg + (mode(fg, bg) - bg) * opacity * mask`, clamped.
pub fn blend(
    fg: &ImageBuffer,
    bg: &ImageBuffer,
    mask: Option<&ImageBuffer>,
    mode: BlendMode,
    opacity: f32,
) -> Result<ImageBuffer, EvalError> {
    if !fg.same_shape(bg) {
        return Err(EvalError::new(
            EvalErrorCode::DimensionMismatch,
            "",
            "foreground and background differ in shape".into(),
        ));
    }
    if let Some(m) = mask {
        if m.channels != 1 || m.width != bg.width || m.height != bg.height {
            return Err(EvalError::new(
                EvalErrorCode::DimensionMismatch,
                "",
                "mask must be grayscale with the background's dimensions".into(),
            ));
        }
    }
    let ch = bg.channels;
    let w = bg.width;
    let mut out = ImageBuffer::new(w, bg.height, ch);
    for_each_row(&mut out.data, w * ch, |y, row| {
        for x in 0..w {
            let m = mask.map_or(1.0, |m| m.get(x, y, 0));
            let k = opacity * m;
            let f = fg.pixel(x, y);
            let b = bg.pixel(x, y);
            for c in 0..ch {
                row[x * ch + c] = b[c] + (mode.apply(f[c], b[c]) - b[c]) * k;
            }
        }
    });
    Ok(out.finalize())
}

#[derive(Debug, Clone, Copy)]
pub struct LevelsParams {
    pub in_low: f32,
    pub in_high: f32,
    pub gamma: f32,
    pub out_low: f32,
    pub out_high: f32,
}

/// Input range remap, gamma, output range remap. RGB only for color input.
/// A collapsed input range (`|in_high - in_low| < 1e-8`) becomes a hard step.
pub fn levels(src: &ImageBuffer, lp: LevelsParams) -> ImageBuffer {
    let span = lp.in_high - lp.in_low;
    let inv_gamma = 1.0 / lp.gamma.max(1e-3);
    let color = src.channels == 4;
    map_samples(
        src,
        |s, o| {
            for (c, (dst, &v)) in o.iter_mut().zip(s).enumerate() {
                if color && c == 3 {
                    *dst = v;
                    continue;
                }
                let t = if span.abs() < 1e-8 {
                    if v >= lp.in_low {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    ((v - lp.in_low) / span).clamp(0.0, 1.0)
                };
                let t = if inv_gamma == 1.0 { t } else { t.powf(inv_gamma) };
                *dst = lp.out_low + (lp.out_high - lp.out_low) * t;
            }
        },
        src.channels,
    )
}

/// Weighted luminance of a color image.
pub fn grayscale_conversion(src: &ImageBuffer, weights: [f32; 3]) -> ImageBuffer {
    if src.channels == 1 {
        return src.clone();
    }
    map_samples(
        src,
        |s, o| o[0] = weights[0] * s[0] + weights[1] * s[1] + weights[2] * s[2],
        1,
    )
}

/// Piecewise-linear color ramp lookup by grayscale value. Values outside the
/// stop range take the end colors.
pub fn gradient_map(src: &ImageBuffer, stops: &[(f32, [f32; 4])]) -> Result<ImageBuffer, EvalError> {
    if stops.is_empty() {
        return Err(EvalError::new(
            EvalErrorCode::BadParamValue,
            "",
            "gradient map needs at least one stop".into(),
        ));
    }
    let lookup = |t: f32| -> [f32; 4] {
        let first = &stops[0];
        if t <= first.0 {
            return first.1;
        }
        for pair in stops.windows(2) {
            let (p0, c0) = pair[0];
            let (p1, c1) = pair[1];
            if t < p1 {
                if p1 <= p0 {
                    return c1;
                }
                let f = (t - p0) / (p1 - p0);
                return std::array::from_fn(|i| c0[i] + (c1[i] - c0[i]) * f);
            }
        }
        stops[stops.len() - 1].1
    };
    let gray = grayscale_conversion(src, [0.299, 0.587, 0.114]);
    Ok(map_samples(&gray, |s, o| o.copy_from_slice(&lookup(s[0])), 4))
}

fn gaussian_weights(sigma_px: f64) -> Vec<f64> {
    if sigma_px < 0.1 {
        return vec![1.0];
    }
    let r = (3.0 * sigma_px).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Horizontal then vertical pass of a symmetric odd-length kernel, summed in
/// `f64` in a fixed order per output sample.
fn convolve_separable(ctx: &Ctx, src: &ImageBuffer, weights: &[f64]) -> ImageBuffer {
    if weights.len() == 1 {
        return src.clone();
    }
    let r = (weights.len() / 2) as isize;
    let (w, h, ch) = (src.width, src.height, src.channels);
    let axis = Ctx { size: w, ..*ctx };
    let mut tmp = vec![0f64; w * h * ch];
    for_each_row(&mut tmp, w * ch, |y, row| {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0f64;
                for (k, wk) in weights.iter().enumerate() {
                    let sx = axis.offset(x, k as isize - r);
                    acc += *wk * src.get(sx, y, c) as f64;
                }
                row[x * ch + c] = acc;
            }
        }
    });
    let axis = Ctx { size: h, ..*ctx };
    let mut out = ImageBuffer::new(w, h, ch);
    for_each_row(&mut out.data, w * ch, |y, row| {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0f64;
                for (k, wk) in weights.iter().enumerate() {
                    let sy = axis.offset(y, k as isize - r);
                    acc += *wk * tmp[(sy * w + x) * ch + c];
                }
                row[x * ch + c] = sanitize(acc as f32);
            }
        }
    });
    out
}

/// Resamples the input through a rotation by a multiple of 90 degrees about
/// the tile centre, integer repetition and a fractional offset. Coordinates
/// are computed from the tile-local pixel so periodic copies are identical.
fn transform(ctx: &Ctx, src: &ImageBuffer, offset: (f32, f32), repeat: (f32, f32), rotation: &str) -> ImageBuffer {
    let tile = ctx.tile;
    let ch = src.channels;
    let t = tile as f32;
    let read = |ix: i64, iy: i64, c: usize| -> f32 {
        let (x, y) = if ctx.tiling {
            (ix.rem_euclid(tile as i64), iy.rem_euclid(tile as i64))
        } else {
            (ix.clamp(0, tile as i64 - 1), iy.clamp(0, tile as i64 - 1))
        };
        src.get(x as usize, y as usize, c)
    };
    let mut out = ImageBuffer::new(src.width, src.height, ch);
    let w = src.width;
    for_each_row(&mut out.data, w * ch, |y, row| {
        let ly = y % tile;
        for x in 0..w {
            let lx = x % tile;
            let u = (lx as f32 + 0.5) / t - 0.5;
            let v = (ly as f32 + 0.5) / t - 0.5;
            let (ru, rv) = match rotation {
                "r90" => (-v, u),
                "r180" => (-u, -v),
                "r270" => (v, -u),
                _ => (u, v),
            };
            let su = ru * repeat.0 + 0.5 - offset.0;
            let sv = rv * repeat.1 + 0.5 - offset.1;
            let px = su * t - 0.5;
            let py = sv * t - 0.5;
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..ch {
                let a = read(x0, y0, c) + (read(x0 + 1, y0, c) - read(x0, y0, c)) * fx;
                let b = read(x0, y0 + 1, c) + (read(x0 + 1, y0 + 1, c) - read(x0, y0 + 1, c)) * fx;
                row[x * ch + c] = a + (b - a) * fy;
            }
        }
    });
    out.finalize()
}

/// Tangent-space normal map from central differences of the height field
/// (per-pixel units): `n = normalize(-k*dx, -k*dy, 1)`, stored as `(n+1)/2`.
pub(crate) fn normal_from_height(ctx: &Ctx, src: &ImageBuffer, intensity: f32) -> ImageBuffer {
    let w = src.width;
    let h = src.height;
    let ax = Ctx { size: w, ..*ctx };
    let ay = Ctx { size: h, ..*ctx };
    let mut out = ImageBuffer::new(w, h, 4);
    for_each_row(&mut out.data, w * 4, |y, row| {
        for x in 0..w {
            let dx = (src.get(ax.offset(x, 1), y, 0) - src.get(ax.offset(x, -1), y, 0)) * 0.5;
            let dy = (src.get(x, ay.offset(y, 1), 0) - src.get(x, ay.offset(y, -1), 0)) * 0.5;
            let nx = -intensity * dx;
            let ny = -intensity * dy;
            let len = (nx * nx + ny * ny + 1.0).sqrt();
            row[x * 4] = (nx / len + 1.0) * 0.5;
            row[x * 4 + 1] = (ny / len + 1.0) * 0.5;
            row[x * 4 + 2] = (1.0 / len + 1.0) * 0.5;
            row[x * 4 + 3] = 1.0;
        }
    });
    out.finalize()
}
