use crate::graph::SignalType;

/// Quantisation grid for stored samples. Values on this grid satisfy
/// `1 - (1 - x) == x` exactly in `f32`, so `invert` is an exact involution.
const GRID: f32 = 16_777_216.0; // 2^24

/// Clamps to [0, 1], maps NaN to 0 and snaps to the 2^-24 grid.
#[inline]
pub fn sanitize(x: f32) -> f32 {
    if x.is_nan() {
        return 0.0;
    }
    (x.clamp(0.0, 1.0) * GRID).round() / GRID
}

/// Row-major raster with 1 (grayscale) or 4 (RGBA) samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 4, "channels must be 1 or 4");
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Every pixel set to `pixel` (length 1 or 4).
    pub fn filled(width: usize, height: usize, pixel: &[f32]) -> Self {
        let mut img = ImageBuffer::new(width, height, pixel.len());
        for (i, s) in img.data.iter_mut().enumerate() {
            *s = sanitize(pixel[i % pixel.len()]);
        }
        img
    }

    pub fn signal_type(&self) -> SignalType {
        if self.channels == 1 {
            SignalType::Grayscale
        } else {
            SignalType::Color
        }
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Applies [`sanitize`] to every sample.
    pub fn finalize(mut self) -> Self {
        for s in &mut self.data {
            *s = sanitize(*s);
        }
        self
    }

    /// RGBA view: grayscale is replicated into RGB with alpha 1.
    pub fn to_color(&self) -> ImageBuffer {
        if self.channels == 4 {
            return self.clone();
        }
        let mut out = ImageBuffer::new(self.width, self.height, 4);
        for (i, &v) in self.data.iter().enumerate() {
            out.data[i * 4..i * 4 + 4].copy_from_slice(&[v, v, v, 1.0]);
        }
        out
    }

    /// Area-weighted resample to `new_w`×`new_h`. Integer ratios reduce to
    /// plain box averaging; a same-size resample is the identity.
    pub fn resample(&self, new_w: usize, new_h: usize) -> ImageBuffer {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let xw = area_weights(self.width, new_w);
        let yw = area_weights(self.height, new_h);
        let ch = self.channels;
        let mut out = ImageBuffer::new(new_w, new_h, ch);
        crate::par::for_each_row(&mut out.data, new_w * ch, |oy, row| {
            let mut acc = vec![0f64; ch];
            for ox in 0..new_w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for &(sy, wy) in &yw[oy] {
                    for &(sx, wx) in &xw[ox] {
                        let w = wy * wx;
                        let p = self.pixel(sx, sy);
                        for c in 0..ch {
                            acc[c] += p[c] as f64 * w;
                        }
                    }
                }
                for c in 0..ch {
                    row[ox * ch + c] = sanitize(acc[c] as f32);
                }
            }
        });
        out
    }

    /// Box downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> ImageBuffer {
        assert!(factor >= 1 && self.width % factor == 0 && self.height % factor == 0);
        self.resample(self.width / factor, self.height / factor)
    }

    pub fn is_constant(&self) -> bool {
        let first = &self.data[..self.channels];
        self.data.chunks(self.channels).all(|p| p == first)
    }
}

/// For each destination cell, the source cells it overlaps and the fraction
/// of the destination cell each covers.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut v = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let a = lo.max(s as f64);
                let b = hi.min((s + 1) as f64);
                if b > a {
                    v.push((s, (b - a) / scale));
                }
                s += 1;
            }
            v
        })
        .collect()
}
