//! Raster encodings used on disk and on the wire.
//!
//! - RGB images: 8-bit PNG.
//! - Ground-truth maps: 8-bit grayscale PNG (`round(255·s)`) plus an exact JSON sidecar.
//! - Saliency maps on the wire: 16-bit grayscale PNG (`round(65535·s)`).
//! - Binary masks: 1-bit grayscale PNG.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, SaliencyMap};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

/// Quantize a map to 8 bits per pixel.
pub fn map_to_gray8(map: &SaliencyMap) -> GrayImage {
    let px = map
        .values()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    GrayImage::from_raw(map.width(), map.height(), px).expect("dimensions match by construction")
}

pub fn gray8_to_map(img: &GrayImage) -> Result<SaliencyMap> {
    SaliencyMap::new(
        img.width(),
        img.height(),
        img.as_raw().iter().map(|&p| p as f64 / 255.0).collect(),
    )
}

fn png_error(e: impl std::fmt::Display) -> Error {
    Error::Codec(format!("png: {e}"))
}

fn write_gray_png(width: u32, height: u32, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        let mut w = enc.write_header().map_err(png_error)?;
        w.write_image_data(data).map_err(png_error)?;
        w.finish().map_err(png_error)?;
    }
    Ok(out)
}

struct RawGray {
    width: u32,
    height: u32,
    depth: png::BitDepth,
    line_size: usize,
    data: Vec<u8>,
}

fn read_gray_png(bytes: &[u8]) -> Result<RawGray> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_error)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Codec("png: image too large".into()))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(png_error)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Codec(format!(
            "png: expected grayscale, got {:?}",
            info.color_type
        )));
    }
    data.truncate(info.buffer_size());
    Ok(RawGray {
        width: info.width,
        height: info.height,
        depth: info.bit_depth,
        line_size: info.line_size,
        data,
    })
}

pub fn encode_map_png16(map: &SaliencyMap) -> Result<Vec<u8>> {
    let data: Vec<u8> = map
        .values()
        .iter()
        .flat_map(|v| ((v * 65535.0).round() as u16).to_be_bytes())
        .collect();
    write_gray_png(map.width(), map.height(), png::BitDepth::Sixteen, &data)
}

pub fn decode_map_png16(bytes: &[u8]) -> Result<SaliencyMap> {
    let raw = read_gray_png(bytes)?;
    if raw.depth != png::BitDepth::Sixteen {
        return Err(Error::Codec(format!(
            "png: expected 16-bit saliency map, got {:?}",
            raw.depth
        )));
    }
    let values = raw
        .data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    SaliencyMap::new(raw.width, raw.height, values)
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let w = mask.width() as usize;
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * mask.height() as usize];
    for (i, _) in mask.bits().iter().enumerate().filter(|(_, b)| **b) {
        let (x, y) = (i % w, i / w);
        data[y * stride + x / 8] |= 0x80 >> (x % 8);
    }
    write_gray_png(mask.width(), mask.height(), png::BitDepth::One, &data)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let raw = read_gray_png(bytes)?;
    if raw.depth != png::BitDepth::One {
        return Err(Error::Codec(format!(
            "png: expected 1-bit mask, got {:?}",
            raw.depth
        )));
    }
    let stride = raw.line_size;
    BinaryMask::from_fn(raw.width, raw.height, |x, y| {
        let (x, y) = (x as usize, y as usize);
        raw.data[y * stride + x / 8] & (0x80 >> (x % 8)) != 0
    })
}

/// Write a map as an 8-bit PNG at `png_path` and its exact values as JSON at `sidecar_path`.
pub fn write_map_outputs(map: &SaliencyMap, png_path: &Path, sidecar_path: &Path) -> Result<()> {
    map_to_gray8(map)
        .save(png_path)
        .map_err(|e| Error::Codec(format!("{}: {e}", png_path.display())))?;
    write_sidecar(map, sidecar_path)
}

pub fn write_sidecar(map: &SaliencyMap, path: &Path) -> Result<()> {
    let json = serde_json::to_vec(map).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<SaliencyMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Load a map from an exact JSON sidecar or, failing that, an 8-bit grayscale raster.
pub fn read_map(path: &Path) -> Result<SaliencyMap> {
    if path.extension().is_some_and(|e| e == "json") {
        return read_sidecar(path);
    }
    let img = image::open(path)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?
        .to_luma8();
    gray8_to_map(&img)
}

pub(crate) mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_is_exact_on_grid_values() {
        let m = SaliencyMap::from_fn(5, 3, |x, y| ((x * 7 + y * 13) % 65536) as f64 / 65535.0)
            .unwrap();
        let back = decode_map_png16(&encode_map_png16(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn png16_quantization_error_is_bounded() {
        let m = SaliencyMap::from_fn(9, 4, |x, y| (x as f64 * 0.37 + y as f64 * 0.11) % 1.0)
            .unwrap();
        let back = decode_map_png16(&encode_map_png16(&m).unwrap()).unwrap();
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn mask_png_roundtrip_odd_width() {
        let m = BinaryMask::from_fn(11, 5, |x, y| (x + 2 * y) % 3 == 0).unwrap();
        let bytes = encode_mask_png(&m).unwrap();
        assert_eq!(decode_mask_png(&bytes).unwrap(), m);
    }

    #[test]
    fn gray8_rounds() {
        let m = SaliencyMap::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(map_to_gray8(&m).as_raw(), &[0, 128, 255]);
    }

    #[test]
    fn sidecar_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = SaliencyMap::from_fn(4, 4, |x, y| 1.0 / (1.0 + x as f64 * 3.0 + y as f64)).unwrap();
        let p = dir.path().join("m.json");
        write_sidecar(&m, &p).unwrap();
        assert_eq!(read_map(&p).unwrap(), m);
    }
}
