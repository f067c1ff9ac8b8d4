//! PNG and binary PPM (P6) images at 8 or 16 bits per channel. Samples are
//! normalized to `[0, 1]` on read; writing clamps and rounds half up.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    /// Rounds every sample to the nearest representable level.
    pub fn quantize(self, image: &ImageBuffer<f32>) -> ImageBuffer<f32> {
        let (w, h) = (image.width(), image.height());
        match self {
            BitDepth::Eight => ImageBuffer::from_u8(w, h, &image.to_u8()),
            BitDepth::Sixteen => ImageBuffer::from_u16(w, h, &image.to_u16()),
        }
        .expect("quantized buffer has the source dimensions")
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Ppm,
}

fn sniff(data: &[u8]) -> Result<Format> {
    if data.starts_with(&PNG_SIGNATURE) {
        Ok(Format::Png)
    } else if data.starts_with(b"P6") {
        Ok(Format::Ppm)
    } else if data.len() < 2 {
        Err(Error::ImageFormat { offset: 0, msg: "file too short to identify".into() })
    } else {
        Err(Error::UnsupportedFormat(format!("unrecognized signature {:02x?}", &data[..data.len().min(8)])))
    }
}

fn format_for_path(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(Format::Png),
        Some("ppm") | Some("pnm") => Ok(Format::Ppm),
        other => Err(Error::UnsupportedFormat(format!("cannot write extension {other:?}"))),
    }
}

pub fn read_image(path: &Path) -> Result<(ImageBuffer<f32>, BitDepth)> {
    decode(&std::fs::read(path)?)
}

pub fn decode(data: &[u8]) -> Result<(ImageBuffer<f32>, BitDepth)> {
    match sniff(data)? {
        Format::Png => decode_png(data),
        Format::Ppm => decode_ppm(data),
    }
}

/// Writes PNG or PPM depending on the file extension.
pub fn write_image(image: &ImageBuffer<f32>, path: &Path, depth: BitDepth) -> Result<()> {
    let bytes = encode(image, format_for_path(path)?, depth)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn encode(image: &ImageBuffer<f32>, format: Format, depth: BitDepth) -> Result<Vec<u8>> {
    match format {
        Format::Png => encode_png(image, depth),
        Format::Ppm => Ok(encode_ppm(image, depth)),
    }
}

pub fn encode_png(image: &ImageBuffer<f32>, depth: BitDepth) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        let samples = match depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                image.to_u8()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                image.to_u16().iter().flat_map(|v| v.to_be_bytes()).collect()
            }
        };
        let mut writer = enc.write_header().map_err(png_encode_error)?;
        writer.write_image_data(&samples).map_err(png_encode_error)?;
        writer.finish().map_err(png_encode_error)?;
    }
    Ok(out)
}

fn png_encode_error(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

fn decode_png(data: &[u8]) -> Result<(ImageBuffer<f32>, BitDepth)> {
    let mut cursor = Cursor::new(data);
    let png_err = |e: png::DecodingError, at: u64| Error::ImageFormat { offset: at, msg: format!("png: {e}") };
    let mut decoder = png::Decoder::new(&mut cursor);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_err(e, 0))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::ImageFormat { offset: 0, msg: "png: image too large".into() })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(e, 0))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::UnsupportedFormat("unexpanded palette png".into())),
    };
    let to_rgb = |samples: &[u32]| -> Vec<u32> {
        samples
            .chunks_exact(channels)
            .flat_map(|px| if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] })
            .collect()
    };
    let rows = &buf[..info.line_size * h];
    match info.bit_depth {
        png::BitDepth::Eight => {
            let samples: Vec<u32> = rows
                .chunks_exact(info.line_size)
                .flat_map(|r| r[..w * channels].iter().map(|&b| b as u32))
                .collect();
            let rgb: Vec<u8> = to_rgb(&samples).into_iter().map(|v| v as u8).collect();
            Ok((ImageBuffer::from_u8(w, h, &rgb)?, BitDepth::Eight))
        }
        png::BitDepth::Sixteen => {
            let samples: Vec<u32> = rows
                .chunks_exact(info.line_size)
                .flat_map(|r| r[..w * channels * 2].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as u32))
                .collect();
            let rgb: Vec<u16> = to_rgb(&samples).into_iter().map(|v| v as u16).collect();
            Ok((ImageBuffer::from_u16(w, h, &rgb)?, BitDepth::Sixteen))
        }
        other => Err(Error::UnsupportedFormat(format!("png bit depth {other:?}"))),
    }
}

pub fn encode_ppm(image: &ImageBuffer<f32>, depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n{}\n", image.width(), image.height(), depth.max_value()).into_bytes();
    match depth {
        BitDepth::Eight => out.extend(image.to_u8()),
        BitDepth::Sixteen => out.extend(image.to_u16().iter().flat_map(|v| v.to_be_bytes())),
    }
    out
}

/// Header tokenizer for netpbm: whitespace separated, `#` comments run to
/// the end of the line.
struct PpmHeader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl PpmHeader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::ImageFormat { offset: self.pos as u64, msg: format!("ppm: {}", msg.into()) }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while self.data.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.data.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.data.len() { self.err("truncated header") } else { self.err("expected a number") });
        }
        let text = std::str::from_utf8(&self.data[start..self.pos]).expect("digits are ascii");
        text.parse().map_err(|_| Error::ImageFormat { offset: start as u64, msg: format!("ppm: number {text} too large") })
    }
}

fn decode_ppm(data: &[u8]) -> Result<(ImageBuffer<f32>, BitDepth)> {
    let mut hdr = PpmHeader { data, pos: 2 };
    let width = hdr.number()? as usize;
    let height = hdr.number()? as usize;
    let maxval = hdr.number()?;
    if width == 0 || height == 0 {
        return Err(hdr.err("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(hdr.err(format!("maxval {maxval} out of range")));
    }
    match data.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        Some(_) => return Err(hdr.err("expected whitespace after maxval")),
        None => return Err(hdr.err("truncated header")),
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3 * bytes_per))
        .ok_or_else(|| hdr.err("image dimensions overflow"))?;
    let body = &data[hdr.pos..];
    if body.len() < need {
        return Err(Error::ImageFormat {
            offset: (hdr.pos + body.len()) as u64,
            msg: format!("ppm: truncated pixel data, expected {need} bytes, found {}", body.len()),
        });
    }
    let samples: Vec<u32> = if bytes_per == 1 {
        body[..need].iter().map(|&b| b as u32).collect()
    } else {
        body[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as u32).collect()
    };
    if let Some(i) = samples.iter().position(|&v| v > maxval) {
        return Err(Error::ImageFormat {
            offset: (hdr.pos + i * bytes_per) as u64,
            msg: format!("ppm: sample {} exceeds maxval {maxval}", samples[i]),
        });
    }
    let scale = 1.0 / maxval as f64;
    let values = samples.iter().map(|&v| (v as f64 * scale) as f32).collect();
    let depth = if maxval < 256 { BitDepth::Eight } else { BitDepth::Sixteen };
    Ok((ImageBuffer::new(width, height, values)?, depth))
}
