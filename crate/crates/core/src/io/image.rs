//! Binary PPM (P6) and 8-bit PNG images as `3×H×W` grids in `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Grid, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    /// PNG for a `.png` extension, PPM otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("png") => ImageFormat::Png,
            _ => ImageFormat::Ppm,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn load_image(path: &Path) -> Result<Grid> {
    decode_image(&std::fs::read(path)?)
}

/// Sniffs the format from the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Grid> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else {
        Err(Error::parse(0, "unsupported image format (expected binary PPM or PNG)"))
    }
}

fn rgb_grid(width: usize, height: usize, pixels: &[u8], maxval: f64) -> Result<Grid> {
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f64::from(px[c]) / maxval;
        }
    }
    Grid::from_vec(Shape::new(3, height, width), data)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::parse(start as u64, format!("{what} out of range")))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Grid> {
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos as u64;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(3, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(
            maxval_at,
            format!("unsupported maxval {maxval} (8-bit only)"),
        ));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(Error::parse(h.pos as u64, "expected whitespace after maxval"));
    }
    let start = h.pos + 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::parse(3, "image dimensions overflow"))?;
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated pixel data: expected {need} bytes from offset {start}, found {have}"),
        ));
    }
    rgb_grid(width, height, &bytes[start..start + need], maxval as f64)
}

fn decode_png(bytes: &[u8]) -> Result<Grid> {
    let png_err = |e: png::DecodingError| Error::parse(0, format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::parse(0, "png: image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::parse(
            0,
            format!("png: unsupported bit depth {:?}", info.bit_depth),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let samples = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::parse(0, format!("png: unsupported color type {other:?}"))),
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * samples].chunks_exact(samples) {
            match samples {
                1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    rgb_grid(w, h, &rgb, 255.0)
}

fn to_bytes(image: &Grid) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::invalid(format!(
            "expected a 3-channel image, got {}",
            image.shape()
        )));
    }
    let plane = image.shape().plane();
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = image.data()[c * plane + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn encode_image(image: &Grid, format: ImageFormat) -> Result<Vec<u8>> {
    let pixels = to_bytes(image)?;
    let (w, h) = (image.width(), image.height());
    match format {
        ImageFormat::Ppm => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&pixels);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let io_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
            let mut writer = enc.write_header().map_err(io_err)?;
            writer.write_image_data(&pixels).map_err(io_err)?;
            writer.finish().map_err(io_err)?;
            Ok(out)
        }
    }
}

/// Quantizes to 8 bits (values saturate at 0 and 1); format by extension.
pub fn save_image(path: &Path, image: &Grid) -> Result<()> {
    std::fs::write(path, encode_image(image, ImageFormat::from_path(path))?)?;
    Ok(())
}
