use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

/// Reads an 8-bit PNG (gray or RGB) or a binary PPM/PGM as a `1 x c x h x w`
/// tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let named = |e: Error| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    };
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(named)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        decode_pnm(&bytes).map_err(named)
    } else {
        Err(Error::Format(format!("{}: unsupported image format", path.display())))
    }
}

/// Writes 8-bit PNG for `.png`, otherwise binary PPM (RGB) or PGM (gray).
pub fn save_image(img: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_image(img, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes with the format picked by the extension of `path`.
pub fn encode_image(img: &Tensor, path: &Path) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) || s.h == 0 || s.w == 0 {
        return Err(Error::dim("c", format!("cannot store a {s} tensor as an image")));
    }
    let pixels = interleave(img);
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => encode_png(&pixels, s),
        Some("ppm") | Some("pgm") | None => Ok(encode_pnm(&pixels, s)),
        Some(other) => Err(Error::Format(format!("unsupported output extension `.{other}`"))),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn interleave(img: &Tensor) -> Vec<u8> {
    let s = img.shape();
    let mut out = Vec::with_capacity(s.c * s.plane());
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                out.push(to_u8(img.at(0, c, y, x)));
            }
        }
    }
    out
}

fn deinterleave(bytes: &[u8], c: usize, h: usize, w: usize) -> Result<Tensor> {
    if bytes.len() < c * h * w {
        return Err(Error::Format(format!("truncated pixel data: {} of {} bytes", bytes.len(), c * h * w)));
    }
    Ok(Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
        bytes[(y * w + x) * c + ch] as f64 / 255.0
    }))
}

fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("bad PNG: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("only 8-bit PNG is supported, found {:?}", info.bit_depth)));
    }
    let c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Format(format!("unsupported PNG color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(c * w * h)];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("bad PNG data: {e}")))?;
    deinterleave(&buf[..frame.buffer_size()], c, h, w)
}

fn encode_png(pixels: &[u8], s: Shape) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), s.w as u32, s.h as u32);
        enc.set_color(if s.c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
    }
    Ok(out)
}

fn encode_pnm(pixels: &[u8], s: Shape) -> Vec<u8> {
    let magic = if s.c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let c = if bytes[1] == b'6' { 3 } else { 1 };
    let mut fields = Vec::with_capacity(3);
    let mut i = 2;
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated PNM header".into()));
        }
        let v: usize = std::str::from_utf8(&bytes[start..i])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad PNM header number".into()))?;
        fields.push(v);
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PNM is supported, maxval is {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("PNM image has zero size".into()));
    }
    // a single whitespace byte separates the header from the raster
    deinterleave(bytes.get(i + 1..).unwrap_or(&[]), c, h, w)
}
