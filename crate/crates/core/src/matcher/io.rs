//! Disparity files: PFM (lossless float) and 16-bit PNG (1/256 px steps, 0 = invalid).

use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DisparityMap;

/// PNG16 stores `round(d * 256)`.
pub const PNG16_SCALE: f32 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisparityFormat {
    #[default]
    Pfm,
    Png16,
}

impl DisparityFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DisparityFormat::Pfm => "pfm",
            DisparityFormat::Png16 => "png",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pfm" => Some(DisparityFormat::Pfm),
            "png" => Some(DisparityFormat::Png16),
            _ => None,
        }
    }
}

impl FromStr for DisparityFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pfm" => Ok(DisparityFormat::Pfm),
            "png16" | "png" => Ok(DisparityFormat::Png16),
            other => Err(format!("unknown disparity format {other:?} (expected pfm or png16)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Reads a disparity file, picking the format from the extension.
pub fn read_disparity_file(path: &Path) -> Result<DisparityMap> {
    match DisparityFormat::from_path(path) {
        Some(DisparityFormat::Pfm) => read_pfm(path),
        Some(DisparityFormat::Png16) => read_png16(path),
        None => Err(Error::Malformed {
            format: "disparity",
            path: path.to_path_buf(),
            reason: "extension must be .pfm or .png".into(),
        }),
    }
}

pub fn write_disparity_file(map: &DisparityMap, path: &Path, format: DisparityFormat) -> Result<()> {
    match format {
        DisparityFormat::Pfm => write_pfm(map, path, Endian::Little),
        DisparityFormat::Png16 => write_png16(map, path),
    }
}

pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|reason| Error::Malformed {
        format: "PFM",
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_pfm(bytes: &[u8]) -> std::result::Result<DisparityMap, String> {
    // Header: magic, width, height, scale as whitespace-separated tokens,
    // then exactly one whitespace byte before the raster.
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?);
    }
    if pos >= bytes.len() {
        return Err("missing raster".into());
    }
    pos += 1;

    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("bad magic {other:?}")),
    };
    let width: usize = tokens[1].parse().map_err(|_| format!("bad width {:?}", tokens[1]))?;
    let height: usize = tokens[2].parse().map_err(|_| format!("bad height {:?}", tokens[2]))?;
    let scale: f32 = tokens[3].parse().map_err(|_| format!("bad scale {:?}", tokens[3]))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(format!("scale must be finite and non-zero, got {scale}"));
    }
    let endian = if scale < 0.0 { Endian::Little } else { Endian::Big };

    let need = width * height * channels * 4;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!("raster has {} bytes, expected {need}", raster.len()));
    }
    let mut values = vec![0.0f32; width * height];
    for row in 0..height {
        // Rows are stored bottom-up.
        let y = height - 1 - row;
        for x in 0..width {
            let off = ((row * width + x) * channels) * 4;
            let word: [u8; 4] = raster[off..off + 4].try_into().expect("4 bytes");
            values[y * width + x] = match endian {
                Endian::Little => f32::from_le_bytes(word),
                Endian::Big => f32::from_be_bytes(word),
            };
        }
    }
    DisparityMap::from_values(width, height, values, |d| d.is_finite() && d > 0.0).map_err(|e| e.to_string())
}

/// Writes a single-channel PFM; masked pixels are stored as +inf.
pub fn write_pfm(map: &DisparityMap, path: &Path, endian: Endian) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    let io = |e| Error::io(path, e);
    write!(w, "Pf\n{} {}\n{scale}\n", map.width(), map.height()).map_err(io)?;
    for y in (0..map.height()).rev() {
        for x in 0..map.width() {
            let v = map.get(x, y).unwrap_or(f32::INFINITY);
            let bytes = match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            };
            w.write_all(&bytes).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_png16(path: &Path) -> Result<DisparityMap> {
    let img = image::open(path)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::Malformed {
            format: "PNG16",
            path: path.to_path_buf(),
            reason: format!("scale mismatch: expected 16-bit grayscale, found {:?}", img.color()),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let valid = raw.iter().map(|&v| v != 0).collect();
    let values = raw.iter().map(|&v| v as f32 / PNG16_SCALE).collect();
    DisparityMap::new(w, h, values, valid)
}

/// Writes `round(d * 256)`; masked pixels become 0.
pub fn write_png16(map: &DisparityMap, path: &Path) -> Result<()> {
    let max = u16::MAX as f32 / PNG16_SCALE;
    let mut raw = Vec::with_capacity(map.len());
    for (&v, &ok) in map.values().iter().zip(map.mask()) {
        if !ok {
            raw.push(0u16);
            continue;
        }
        if !(v >= 0.0 && v <= max) {
            return Err(Error::ValueOutOfRange { value: v, max });
        }
        // A tiny positive disparity must not collapse onto the invalid code.
        raw.push(((v * PNG16_SCALE).round() as u16).max(1));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw).expect("buffer matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
