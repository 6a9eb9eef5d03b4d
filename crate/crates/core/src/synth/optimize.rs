//! Derivative-free fitting of continuous parameters to a target render.
//!
//! Coordinate descent over every continuous scalar (tuple components count
//! separately). Each coordinate gets a coarse grid scan over its range, then
//! a golden-section search inside the bracket around the best grid point.
//! Later sweeps skip the scan, and each sweep ends with a line search along
//! its net displacement, which stops coupled params from zig-zagging. A move
//! is kept only if it lowers the loss, so the loss never increases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{render_composite, ImageBuffer, RenderSettings};
use crate::graph::{registry_builtin, MaterialGraph, ParamValue};
use crate::metrics::pixel_l1;

const GRID: usize = 9;
const GOLDEN_STEPS: usize = 14;
/// Refinement sweeps search a two-cell bracket; 8 steps reach 0.5% of range.
const LOCAL_STEPS: usize = 8;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// One optimisable scalar: `node.param[component]` within `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub node: usize,
    pub param: String,
    pub component: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub graph: MaterialGraph,
    /// `None` when the budget allowed no evaluation.
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub evaluations: usize,
}

/// Continuous float params of every node, in node and declaration order.
pub fn continuous_params(g: &MaterialGraph) -> Vec<Coordinate> {
    let reg = registry_builtin();
    let mut out = Vec::new();
    for (i, n) in g.nodes.iter().enumerate() {
        let Some(spec) = reg.interface(n) else { continue };
        for p in spec.params.iter().filter(|p| p.continuous) {
            let (lo, hi) = p.range.unwrap_or((0.0, 1.0));
            let arity = match n.params.get(p.name) {
                Some(ParamValue::Float(_)) => 1,
                Some(ParamValue::FloatTuple(v)) => v.len(),
                _ => 0,
            };
            for component in 0..arity {
                out.push(Coordinate {
                    node: i,
                    param: p.name.to_string(),
                    component,
                    lo,
                    hi,
                });
            }
        }
    }
    out
}

impl Coordinate {
    /// Wide positive ranges (gamma-like) are searched on a log scale.
    fn log_scale(&self) -> bool {
        self.lo > 0.0 && self.hi / self.lo >= 10.0
    }

    fn to_u(&self, x: f64) -> f64 {
        if self.log_scale() {
            x.ln()
        } else {
            x
        }
    }

    fn from_u(&self, u: f64) -> f64 {
        let x = if self.log_scale() { u.exp() } else { u };
        x.clamp(self.lo, self.hi)
    }
}

fn get(g: &MaterialGraph, c: &Coordinate) -> f64 {
    match &g.nodes[c.node].params[&c.param] {
        ParamValue::Float(v) => *v,
        ParamValue::FloatTuple(v) => v[c.component],
        _ => unreachable!("continuous params are floats"),
    }
}

fn set(g: &mut MaterialGraph, c: &Coordinate, x: f64) {
    match g.nodes[c.node].params.get_mut(&c.param) {
        Some(ParamValue::Float(v)) => *v = x,
        Some(ParamValue::FloatTuple(v)) => v[c.component] = x,
        _ => unreachable!("continuous params are floats"),
    }
}

struct Search<'a> {
    target: &'a ImageBuffer,
    settings: &'a RenderSettings,
    budget: usize,
    used: usize,
}

impl Search<'_> {
    fn loss(&mut self, g: &MaterialGraph) -> Option<f64> {
        if self.used >= self.budget {
            return None;
        }
        self.used += 1;
        Some(
            render_composite(g, self.settings)
                .ok()
                .and_then(|img| pixel_l1(&img, self.target).ok())
                .unwrap_or(f64::INFINITY),
        )
    }
}

/// Fits continuous params of `g` so its composite render approaches
/// `target`, using at most `budget` renders. Discrete params are untouched.
pub fn optimize_params(
    g: &MaterialGraph,
    target: &ImageBuffer,
    budget: usize,
    settings: &RenderSettings,
    seed: u64,
) -> OptimizeReport {
    let mut s = Search {
        target,
        settings,
        budget,
        used: 0,
    };
    let mut best = g.clone();
    let Some(initial) = s.loss(&best) else {
        return OptimizeReport {
            graph: best,
            initial_loss: None,
            final_loss: None,
            evaluations: 0,
        };
    };
    let mut best_loss = initial;
    let mut coords = continuous_params(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut first = true;
    'sweeps: while best_loss > 0.0 {
        coords.shuffle(&mut rng);
        let before = best_loss;
        let start = best.clone();
        for c in &coords {
            let mut trial = best.clone();
            let mut eval_at = |u: f64, s: &mut Search| {
                set(&mut trial, c, c.from_u(u));
                s.loss(&trial)
            };
            let (ulo, uhi) = (c.to_u(c.lo), c.to_u(c.hi));
            let step = (uhi - ulo) / (GRID - 1) as f64;
            let (mut cand_u, mut cand_l) = (c.to_u(get(&best, c)), best_loss);
            // coarse scan on the first sweep only; later sweeps refine locally
            if first {
                for k in 0..GRID {
                    let u = ulo + step * k as f64;
                    let Some(l) = eval_at(u, &mut s) else { break 'sweeps };
                    if l < cand_l {
                        (cand_u, cand_l) = (u, l);
                    }
                }
            }
            let steps = if first { GOLDEN_STEPS } else { LOCAL_STEPS };
            let bracket = ((cand_u - step).max(ulo), (cand_u + step).min(uhi));
            let Some((u, l)) = golden(&mut |u, s| eval_at(u, s), &mut s, bracket.0, bracket.1, steps) else {
                break 'sweeps;
            };
            if l < cand_l {
                (cand_u, cand_l) = (u, l);
            }
            let cand_x = c.from_u(cand_u);
            if cand_l < best_loss {
                set(&mut best, c, cand_x);
                best_loss = cand_l;
            }
            if s.used >= s.budget {
                break 'sweeps;
            }
        }
        first = false;

        // pattern move along the sweep's net displacement
        let delta: Vec<(f64, f64)> = coords.iter().map(|c| (c.to_u(get(&start, c)), c.to_u(get(&best, c)))).collect();
        if delta.iter().any(|(a, b)| a != b) {
            let mut trial = best.clone();
            let mut along = |t: f64, s: &mut Search| {
                for (c, (a, b)) in coords.iter().zip(&delta) {
                    set(&mut trial, c, c.from_u(a + t * (b - a)));
                }
                s.loss(&trial)
            };
            let Some((t, l)) = golden(&mut along, &mut s, 1.0, 8.0, LOCAL_STEPS) else { break };
            if l < best_loss {
                for (c, (a, b)) in coords.iter().zip(&delta) {
                    set(&mut best, c, c.from_u(a + t * (b - a)));
                }
                best_loss = l;
            }
        }
        if best_loss >= before {
            break;
        }
    }
    OptimizeReport {
        graph: best,
        initial_loss: Some(initial),
        final_loss: Some(best_loss),
        evaluations: s.used,
    }
}

/// Golden-section search of `f` on `[a, b]`; the best point seen, or `None`
/// if the budget ran out before the two interior probes.
fn golden(
    f: &mut dyn FnMut(f64, &mut Search) -> Option<f64>,
    s: &mut Search,
    mut a: f64,
    mut b: f64,
    steps: usize,
) -> Option<(f64, f64)> {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1, s)?, f(x2, s)?);
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 0..steps {
        if f1 <= f2 {
            (b, x2, f2) = (x2, x1, f1);
            x1 = b - INV_PHI * (b - a);
            let Some(v) = f(x1, s) else { break };
            f1 = v;
        } else {
            (a, x1, f1) = (x1, x2, f2);
            x2 = a + INV_PHI * (b - a);
            let Some(v) = f(x2, s) else { break };
            f2 = v;
        }
        for (x, v) in [(x1, f1), (x2, f2)] {
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    Some(best)
}

/// Current value of every coordinate, for reports.
pub fn coordinate_values(g: &MaterialGraph) -> Vec<(Coordinate, f64)> {
    continuous_params(g)
        .into_iter()
        .map(|c| {
            let v = get(g, &c);
            (c, v)
        })
        .collect()
}
