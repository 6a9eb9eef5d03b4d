//! Counter-based hashing and tileable gradient noise.
//!
//! No global RNG: every lattice gradient is a pure function of
//! `(render seed, node name, seed parameter, octave, cell)`, so nodes can be
//! evaluated in any order or in parallel.

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Stream key for one stochastic node.
pub fn node_key(render_seed: u64, node_name: &str, seed_param: i64) -> u64 {
    splitmix64(render_seed ^ splitmix64(fnv1a(node_name) ^ splitmix64(seed_param as u64)))
}

const DIAG: f32 = std::f32::consts::FRAC_1_SQRT_2;
const GRADIENTS: [(f32, f32); 8] = [
    (1.0, 0.0),
    (DIAG, DIAG),
    (0.0, 1.0),
    (-DIAG, DIAG),
    (-1.0, 0.0),
    (-DIAG, -DIAG),
    (0.0, -1.0),
    (DIAG, -DIAG),
];

#[inline]
fn gradient(key: u64, ix: i64, iy: i64) -> (f32, f32) {
    let h = splitmix64(key ^ splitmix64(((ix as u64) << 32) ^ (iy as u64 & 0xFFFF_FFFF)));
    GRADIENTS[(h >> 61) as usize]
}

#[inline]
fn fade(t: f32) -> f32 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// 2-D gradient noise in roughly [-0.71, 0.71], periodic with `period`
/// lattice cells along both axes.
pub fn perlin(key: u64, x: f32, y: f32, period: i64) -> f32 {
    let fx0 = x.floor();
    let fy0 = y.floor();
    let tx = x - fx0;
    let ty = y - fy0;
    let x0 = (fx0 as i64).rem_euclid(period);
    let y0 = (fy0 as i64).rem_euclid(period);
    let x1 = (x0 + 1).rem_euclid(period);
    let y1 = (y0 + 1).rem_euclid(period);

    let dot = |ix, iy, dx: f32, dy: f32| {
        let (gx, gy) = gradient(key, ix, iy);
        gx * dx + gy * dy
    };
    let n00 = dot(x0, y0, tx, ty);
    let n10 = dot(x1, y0, tx - 1.0, ty);
    let n01 = dot(x0, y1, tx, ty - 1.0);
    let n11 = dot(x1, y1, tx - 1.0, ty - 1.0);
    let u = fade(tx);
    let v = fade(ty);
    let a = n00 + u * (n10 - n00);
    let b = n01 + u * (n11 - n01);
    a + v * (b - a)
}

/// Maps [`perlin`] output to [0, 1].
#[inline]
pub fn to_unit(n: f32) -> f32 {
    0.5 + n * DIAG
}
