use std::io::{self, Cursor};
use std::path::Path;

use super::image::ImageBuffer;

/// 8-bit sample: `round(clamp(x) * 255)`.
#[inline]
fn to_u8(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes as 8-bit grayscale or RGBA PNG. Identical buffers always produce
/// identical bytes.
pub fn encode_png(buf: &ImageBuffer) -> io::Result<Vec<u8>> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, buf.width as u32, buf.height as u32);
        enc.set_color(if buf.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgba
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(io::Error::other)?;
        let samples: Vec<u8> = buf.data.iter().map(|&x| to_u8(x)).collect();
        writer.write_image_data(&samples).map_err(io::Error::other)?;
        writer.finish().map_err(io::Error::other)?;
    }
    Ok(bytes)
}

pub fn export_png(buf: &ImageBuffer, path: impl AsRef<Path>) -> io::Result<()> {
    std::fs::write(path, encode_png(buf)?)
}

/// Decodes 8-bit (or expandable) PNG. Gray stays single-channel; everything
/// else becomes RGBA.
pub fn decode_png(bytes: &[u8]) -> io::Result<ImageBuffer> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(io::Error::other)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| io::Error::other("image too large"))?;
    let mut raw = vec![0u8; size];
    let info = reader.next_frame(&mut raw).map_err(io::Error::other)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let raw = &raw[..info.buffer_size()];
    let to_f = |b: u8| b as f32 / 255.0;
    let img = match info.color_type {
        png::ColorType::Grayscale => ImageBuffer {
            width: w,
            height: h,
            channels: 1,
            data: raw.iter().map(|&b| to_f(b)).collect(),
        },
        png::ColorType::GrayscaleAlpha => ImageBuffer {
            width: w,
            height: h,
            channels: 4,
            data: raw
                .chunks(2)
                .flat_map(|p| [to_f(p[0]), to_f(p[0]), to_f(p[0]), to_f(p[1])])
                .collect(),
        },
        png::ColorType::Rgb => ImageBuffer {
            width: w,
            height: h,
            channels: 4,
            data: raw
                .chunks(3)
                .flat_map(|p| [to_f(p[0]), to_f(p[1]), to_f(p[2]), 1.0])
                .collect(),
        },
        png::ColorType::Rgba => ImageBuffer {
            width: w,
            height: h,
            channels: 4,
            data: raw.iter().map(|&b| to_f(b)).collect(),
        },
        other => return Err(io::Error::other(format!("unsupported PNG color type {other:?}"))),
    };
    Ok(img.finalize())
}

pub fn load_png(path: impl AsRef<Path>) -> io::Result<ImageBuffer> {
    decode_png(&std::fs::read(path)?)
}
