//! PNG and binary PPM (P6) reading and writing.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes a PNG or P6 PPM file into an 8-bit RGB grid.
pub fn decode_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes, path)
}

pub fn decode_bytes(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    if bytes.starts_with(PNG_MAGIC) {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::parse(format!("PNG {}", path.display()), e))?;
        Ok(img.to_rgb8())
    } else if bytes.starts_with(b"P6") {
        parse_ppm(bytes, path)
    } else {
        Err(Error::UnsupportedFormat(path.to_path_buf()))
    }
}

fn parse_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let bad = |msg: &str| Error::parse(format!("PPM {}", path.display()), msg);
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after header"));
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }

    let expected = width as usize * height as usize * 3;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            expected: format!("{width}x{height} ({expected} bytes)"),
            found: format!("{} bytes", data.len()),
        });
    }
    let mut pixels = data.to_vec();
    if maxval != 255 {
        for v in &mut pixels {
            *v = ((u32::from(*v).min(maxval) * 255 + maxval / 2) / maxval) as u8;
        }
    }
    RgbImage::from_raw(width, height, pixels).ok_or_else(|| bad("pixel buffer size"))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    out
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::parse("PNG encoding", e))?;
    Ok(out.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Png,
    Ppm,
}

impl ImageKind {
    pub fn extension(self) -> &'static str {
        match self {
            ImageKind::Png => "png",
            ImageKind::Ppm => "ppm",
        }
    }
}

pub fn write_image(img: &RgbImage, path: impl AsRef<Path>, kind: ImageKind) -> Result<()> {
    let path = path.as_ref();
    let bytes = match kind {
        ImageKind::Png => encode_png(img)?,
        ImageKind::Ppm => encode_ppm(img),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
