//! Raster I/O: grayscale PNG in (8/16-bit), 8-bit PNG out, and the PFM
//! float sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ImageGrid;

/// Reads a PNG (or any format the decoder recognizes) as intensities in `[0, 1]`.
///
/// 8-bit data is scaled by 1/255, 16-bit data by 1/65535. Multi-channel input
/// is reduced to luma.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path)?;
    Ok(from_dynamic(img))
}

pub fn from_dynamic(img: DynamicImage) -> ImageGrid {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            Grid::from_vec(h, w, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        other => {
            let buf = other.to_luma16();
            Grid::from_vec(h, w, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
    }
    .expect("decoder dimensions are consistent")
}

/// Quantizes `[0, 1]` intensities to 8 bits; out-of-range values are clamped.
pub fn to_gray8(img: &ImageGrid) -> GrayImage {
    let data = img
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer size matches")
}

pub fn encode_png8(img: &ImageGrid) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    to_gray8(img).write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png8(path: &Path, img: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_png8(img)?)
}

/// Encodes a single-channel Portable Float Map (little-endian, bottom row first).
pub fn encode_pfm(img: &ImageGrid) -> Vec<u8> {
    let (h, w) = img.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for r in (0..h).rev() {
        for c in 0..w {
            out.extend_from_slice(&(img.get(r, c) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], origin: &str) -> Result<ImageGrid> {
    let bad = |m: &str| Error::Format {
        path: origin.to_string(),
        message: m.to_string(),
    };
    // three whitespace-terminated header tokens: magic, dims, scale
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    pos += 1; // single whitespace byte after the scale
    if fields[0] != "Pf" {
        return Err(bad("only grayscale PFM (Pf) is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let payload = bytes.get(pos..).ok_or_else(|| bad("missing payload"))?;
    if payload.len() != w * h * 4 {
        return Err(bad("payload length does not match dimensions"));
    }
    let mut grid = Grid::zeros(h, w);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, c) = (h - 1 - i / w, i % w);
        grid.set(r, c, v as f64);
    }
    Ok(grid)
}

pub fn write_pfm(path: &Path, img: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_pfm(img))
}

pub fn read_pfm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pfm(&bytes, &path.display().to_string())
}

/// Writes `bytes` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming onto {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_lossless_for_f32_values() {
        let g = Grid::from_fn(3, 5, |r, c| ((r * 5 + c) as f32 * 0.173).sin() as f64);
        let back = decode_pfm(&encode_pfm(&g), "mem").unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn png8_round_trip_quantizes() {
        let g = Grid::from_fn(4, 4, |r, c| (r * 4 + c) as f64 / 15.0);
        let bytes = encode_png8(&g).unwrap();
        let back = from_dynamic(image::load_from_memory(&bytes).unwrap());
        for (a, b) in back.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_input_is_scaled() {
        let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(2, 1, vec![0, 65535]).unwrap();
        let g = from_dynamic(DynamicImage::ImageLuma16(buf));
        assert_eq!(g.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn pfm_rejects_bad_payload() {
        let mut bytes = encode_pfm(&Grid::zeros(2, 2));
        bytes.pop();
        assert!(decode_pfm(&bytes, "t").is_err());
    }
}
