//! File formats: 8-bit PNG rasters, little-endian PFM depth, the `GSIP`
//! Gaussian container and ASCII PLY point clouds.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::gaussian::{Gaussian, PARAMS_PER_GAUSSIAN};
use super::grid::{BinaryMask, DepthMap, Grid, ImageRgb, LabelMap, NO_DEPTH};
use super::pointcloud::ColoredPointCloud;
use crate::error::{Error, Result};

pub const GSIP_MAGIC: &[u8; 4] = b"GSIP";
pub const GSIP_VERSION: u32 = 1;
const GSIP_HEADER_LEN: usize = 4 + 4 + 8;

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every channel to the nearest 8-bit level.
pub fn quantize_rgb(image: &ImageRgb) -> ImageRgb {
    image.map(|c| c.map(|v| to_u8(v) as f64 / 255.0))
}

pub fn write_png_rgb(path: &Path, image: &ImageRgb) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = image.dims();
    let buf: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Rgb(image.get(x as usize, y as usize).map(to_u8))
    });
    buf.save(path)
        .map_err(|e| Error::decode(path, format!("png write: {e}")))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    image::open(path).map_err(|e| Error::decode(path, e.to_string()))
}

pub fn read_png_rgb(path: &Path) -> Result<ImageRgb> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
        img.get_pixel(x as u32, y as u32).0.map(|v| v as f64 / 255.0)
    }))
}

fn write_gray(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Result<()> {
    ensure_parent(path)?;
    let buf: GrayImage =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([f(x as usize, y as usize)]));
    buf.save(path)
        .map_err(|e| Error::decode(path, format!("png write: {e}")))
}

fn read_gray(path: &Path) -> Result<Grid<u8>> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
        img.get_pixel(x as u32, y as u32).0[0]
    }))
}

pub fn write_png_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray(path, mask.width(), mask.height(), |x, y| {
        if *mask.get(x, y) {
            255
        } else {
            0
        }
    })
}

pub fn read_png_mask(path: &Path) -> Result<BinaryMask> {
    Ok(read_gray(path)?.map(|&v| v >= 128))
}

pub fn write_png_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_gray(path, labels.width(), labels.height(), |x, y| *labels.get(x, y))
}

pub fn read_png_labels(path: &Path) -> Result<LabelMap> {
    read_gray(path)
}

/// Writes a single-channel little-endian PFM. The no-surface sentinel is
/// stored as 0.
pub fn write_pfm_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = depth.dims();
    let mut out = Vec::with_capacity(32 + 4 * w * h);
    write!(out, "Pf\n{w} {h}\n-1.0\n").expect("write to vec");
    // PFM scanlines run bottom to top.
    for y in (0..h).rev() {
        for x in 0..w {
            let d = *depth.get(x, y);
            let v = if d > 0.0 { d as f32 } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pfm_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::decode(path, m.to_string());
    // Header: three whitespace-terminated tokens.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
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
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ascii"))?);
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    if tokens[0] != "Pf" {
        return Err(bad("only single-channel `Pf` files are supported"));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != 4 * w * h {
        return Err(bad("pixel data length does not match header"));
    }
    let mut depth = Grid::filled(w, h, NO_DEPTH);
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        } as f64;
        let (x, y_up) = (i % w, i / w);
        depth.set(x, h - 1 - y_up, if v > 0.0 { v } else { NO_DEPTH });
    }
    Ok(depth)
}

pub fn encode_gaussians(gaussians: &[Gaussian]) -> Vec<u8> {
    let mut out = Vec::with_capacity(GSIP_HEADER_LEN + gaussians.len() * PARAMS_PER_GAUSSIAN * 4);
    out.extend_from_slice(GSIP_MAGIC);
    out.extend_from_slice(&GSIP_VERSION.to_le_bytes());
    out.extend_from_slice(&(gaussians.len() as u64).to_le_bytes());
    for g in gaussians {
        for v in g.to_params() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_gaussians(bytes: &[u8], path: &Path) -> Result<Vec<Gaussian>> {
    if bytes.len() < GSIP_HEADER_LEN || &bytes[0..4] != GSIP_MAGIC {
        return Err(Error::decode(path, "missing GSIP header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GSIP_VERSION {
        return Err(Error::Version {
            found: version,
            expected: GSIP_VERSION,
        });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let record = PARAMS_PER_GAUSSIAN * 4;
    let body = &bytes[GSIP_HEADER_LEN..];
    if count.checked_mul(record) != Some(body.len()) {
        return Err(Error::decode(
            path,
            format!(
                "expected {count} records ({} bytes), found {} bytes",
                count.saturating_mul(record),
                body.len()
            ),
        ));
    }
    let gaussians = body
        .chunks_exact(record)
        .map(|rec| {
            let mut p = [0.0; PARAMS_PER_GAUSSIAN];
            for (v, b) in p.iter_mut().zip(rec.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
            Gaussian::from_params(&p)
        })
        .collect();
    Ok(gaussians)
}

/// Writes a `GSIP` scene. Fields are stored as single precision.
pub fn save_gaussians(gaussians: &[Gaussian], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, encode_gaussians(gaussians)).map_err(|e| Error::io(path, e))
}

pub fn load_gaussians(path: &Path) -> Result<Vec<Gaussian>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gaussians(&bytes, path)
}

/// ASCII PLY with `x y z` and 8-bit `red green blue` per vertex.
pub fn write_ply(path: &Path, cloud: &ColoredPointCloud) -> Result<()> {
    ensure_parent(path)?;
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for p in &cloud.points {
        let [r, g, b] = p.color.map(to_u8);
        out.push_str(&format!(
            "{} {} {} {r} {g} {b}\n",
            p.position.x, p.position.y, p.position.z
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
