//! 2D inpainting of an RGB image and its depth map inside a mask.
//!
//! Every backend returns the input unchanged outside the mask and a positive
//! depth inside it. RGB and depth are always handled by the same backend call.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::scene::io::{read_pfm_depth, read_png_rgb, to_u8, write_pfm_depth, write_png_mask, write_png_rgb};
use crate::scene::{BinaryMask, DepthMap, Grid, ImageRgb, ScalarImage};

#[derive(Clone, Debug)]
pub struct InpaintRequest<'a> {
    pub image: &'a ImageRgb,
    pub depth: &'a DepthMap,
    pub mask: &'a BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintResult {
    pub image: ImageRgb,
    pub depth: DepthMap,
}

/// Ground truth used by the oracle backend.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    pub image: &'a ImageRgb,
    pub depth: &'a DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    /// Fills RGB with a constant and depth with the mean boundary depth.
    Constant { value: f64 },
    /// Harmonic (Jacobi) fill of each channel.
    Diffuse { iterations: usize, tolerance: f64 },
    /// Copies the masked region from ground truth.
    Oracle,
    /// Hands the request to an external tool through files in `dir`.
    External { dir: PathBuf, timeout: Duration },
}

pub const BACKEND_NAMES: [&str; 4] = ["constant", "diffuse", "oracle", "external"];

impl Backend {
    pub fn diffuse() -> Self {
        Backend::Diffuse {
            iterations: 20_000,
            tolerance: 1e-7,
        }
    }

    /// Built-in backend by name; `external` needs an exchange directory.
    pub fn from_name(name: &str, exchange_dir: Option<&Path>, timeout: Duration) -> Result<Self> {
        match name {
            "constant" => Ok(Backend::Constant { value: 0.5 }),
            "diffuse" => Ok(Backend::diffuse()),
            "oracle" => Ok(Backend::Oracle),
            "external" => Ok(Backend::External {
                dir: exchange_dir
                    .ok_or_else(|| Error::Validation("external inpainter needs an exchange directory".into()))?
                    .to_path_buf(),
                timeout,
            }),
            other => Err(Error::UnknownBackend(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Constant { .. } => "constant",
            Backend::Diffuse { .. } => "diffuse",
            Backend::Oracle => "oracle",
            Backend::External { .. } => "external",
        }
    }
}

/// Inpaints the request with `backend`. `truth` is required by the oracle.
pub fn inpaint(request: &InpaintRequest<'_>, backend: &Backend, truth: Option<GroundTruth<'_>>) -> Result<InpaintResult> {
    request.image.check_same_dims(request.mask)?;
    request.image.check_same_dims(request.depth)?;
    if request.mask.count() == 0 {
        return Ok(InpaintResult {
            image: request.image.clone(),
            depth: request.depth.clone(),
        });
    }
    match backend {
        Backend::Constant { value } => Ok(constant_fill(request, *value)),
        Backend::Diffuse { iterations, tolerance } => Ok(diffuse_request(request, *iterations, *tolerance)),
        Backend::Oracle => {
            let truth = truth.ok_or_else(|| Error::Inpaint("oracle backend needs ground truth".into()))?;
            oracle_fill(request, truth)
        }
        Backend::External { dir, timeout } => Ok(external_exchange(request, dir, *timeout)?.result),
    }
}

/// Mean of the valid unmasked depths 4-adjacent to the mask, falling back to
/// the mean of all valid depths, then to 1.
fn boundary_depth_mean(depth: &DepthMap, mask: &BinaryMask) -> f64 {
    let (w, h) = mask.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if *mask.get(x, y) || !depth.is_valid_at(x, y) {
                continue;
            }
            if neighbors4(x, y, w, h).any(|(nx, ny)| *mask.get(nx, ny)) {
                sum += depth.get(x, y);
                n += 1;
            }
        }
    }
    if n > 0 {
        return sum / n as f64;
    }
    let valid: Vec<f64> = depth.as_slice().iter().copied().filter(|&d| d > 0.0).collect();
    if valid.is_empty() {
        1.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    }
}

fn constant_fill(request: &InpaintRequest<'_>, value: f64) -> InpaintResult {
    let fill_depth = boundary_depth_mean(request.depth, request.mask);
    let m = request.mask.as_slice();
    let image = Grid::from_vec(
        request.image.width(),
        request.image.height(),
        request
            .image
            .as_slice()
            .iter()
            .zip(m)
            .map(|(&c, &k)| if k { [value; 3] } else { c })
            .collect(),
    )
    .expect("dims");
    let depth = Grid::from_vec(
        request.depth.width(),
        request.depth.height(),
        request
            .depth
            .as_slice()
            .iter()
            .zip(m)
            .map(|(&d, &k)| if k { fill_depth } else { d })
            .collect(),
    )
    .expect("dims");
    InpaintResult { image, depth }
}

fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (x.wrapping_sub(1), y),
        (x + 1, y),
        (x, y.wrapping_sub(1)),
        (x, y + 1),
    ];
    cand.into_iter().filter(move |&(nx, ny)| nx < w && ny < h)
}

/// 4-connected components of `mask`, as pixel index lists.
fn components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.as_slice()[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let p = comp[head];
            head += 1;
            for (nx, ny) in neighbors4(p % w, p / w, w, h) {
                let q = ny * w + nx;
                if !seen[q] && mask.as_slice()[q] {
                    seen[q] = true;
                    comp.push(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Harmonic fill of one channel inside `mask` by Jacobi iteration of
/// 4-neighbor averaging, stopping when the largest update drops below
/// `tolerance` or after `iterations` sweeps.
///
/// Components with no unmasked neighbor take the mean of all unmasked
/// values (0.5 when there are none).
pub fn diffuse_fill(values: &ScalarImage, mask: &BinaryMask, iterations: usize, tolerance: f64) -> ScalarImage {
    diffuse_fill_known(values, mask, None, iterations, tolerance)
}

/// Like [`diffuse_fill`], but unmasked pixels outside `known` are neither
/// boundary values nor filled.
fn diffuse_fill_known(
    values: &ScalarImage,
    mask: &BinaryMask,
    known: Option<&BinaryMask>,
    iterations: usize,
    tolerance: f64,
) -> ScalarImage {
    let (w, h) = values.dims();
    let is_fixed = |p: usize| !mask.as_slice()[p] && known.is_none_or(|k| k.as_slice()[p]);
    let fixed_vals: Vec<f64> = (0..w * h).filter(|&p| is_fixed(p)).map(|p| values.as_slice()[p]).collect();
    let global_mean = if fixed_vals.is_empty() {
        0.5
    } else {
        fixed_vals.iter().sum::<f64>() / fixed_vals.len() as f64
    };

    let mut out = values.clone();
    // Per-pixel neighbor lists over the pixels that participate.
    let mut active: Vec<(usize, Vec<usize>)> = Vec::new();
    for comp in components(mask) {
        let mut boundary = Vec::new();
        for &p in &comp {
            for (nx, ny) in neighbors4(p % w, p / w, w, h) {
                let q = ny * w + nx;
                if is_fixed(q) {
                    boundary.push(values.as_slice()[q]);
                }
            }
        }
        if boundary.is_empty() {
            for &p in &comp {
                out.as_mut_slice()[p] = global_mean;
            }
            continue;
        }
        // Start inside the boundary range so every iterate obeys the maximum principle.
        let start = boundary.iter().sum::<f64>() / boundary.len() as f64;
        for &p in &comp {
            out.as_mut_slice()[p] = start;
            let nbrs: Vec<usize> = neighbors4(p % w, p / w, w, h)
                .map(|(nx, ny)| ny * w + nx)
                .filter(|&q| mask.as_slice()[q] || is_fixed(q))
                .collect();
            active.push((p, nbrs));
        }
    }

    let mut next = out.as_slice().to_vec();
    for _ in 0..iterations {
        let cur = out.as_slice();
        let mut max_delta: f64 = 0.0;
        for (p, nbrs) in &active {
            let v = nbrs.iter().map(|&q| cur[q]).sum::<f64>() / nbrs.len() as f64;
            max_delta = max_delta.max((v - cur[*p]).abs());
            next[*p] = v;
        }
        for (p, _) in &active {
            out.as_mut_slice()[*p] = next[*p];
        }
        if max_delta < tolerance {
            break;
        }
    }
    out
}

fn diffuse_request(request: &InpaintRequest<'_>, iterations: usize, tolerance: f64) -> InpaintResult {
    let (w, h) = request.image.dims();
    let mut image = request.image.clone();
    for c in 0..3 {
        let channel = request.image.map(|p| p[c]);
        let filled = diffuse_fill(&channel, request.mask, iterations, tolerance);
        for (dst, &v) in image.as_mut_slice().iter_mut().zip(filled.as_slice()) {
            dst[c] = v;
        }
    }
    let valid = request.depth.map(|&d| d > 0.0);
    let mut depth = diffuse_fill_known(request.depth, request.mask, Some(&valid), iterations, tolerance);
    if !depth.as_slice().iter().zip(request.mask.as_slice()).all(|(&d, &m)| !m || d > 0.0) {
        // no valid depth anywhere
        let fallback = boundary_depth_mean(request.depth, request.mask);
        for (d, &m) in depth.as_mut_slice().iter_mut().zip(request.mask.as_slice()) {
            if m && !(*d > 0.0) {
                *d = fallback;
            }
        }
    }
    debug_assert_eq!(depth.dims(), (w, h));
    InpaintResult { image, depth }
}

/// Copies the masked region from ground truth.
pub fn oracle_fill(request: &InpaintRequest<'_>, truth: GroundTruth<'_>) -> Result<InpaintResult> {
    request.image.check_same_dims(truth.image)?;
    request.image.check_same_dims(truth.depth)?;
    let mut image = request.image.clone();
    let mut depth = request.depth.clone();
    let fallback = boundary_depth_mean(truth.depth, request.mask);
    for (p, &m) in request.mask.as_slice().iter().enumerate() {
        if m {
            image.as_mut_slice()[p] = truth.image.as_slice()[p];
            let d = truth.depth.as_slice()[p];
            depth.as_mut_slice()[p] = if d > 0.0 { d } else { fallback };
        }
    }
    Ok(InpaintResult { image, depth })
}

/// Outcome of an external exchange.
#[derive(Clone, Debug)]
pub struct ExchangeOutcome {
    pub result: InpaintResult,
    /// Pixels outside the mask that the external tool changed and that were
    /// restored from the input.
    pub restored_pixels: usize,
}

pub const EXCHANGE_IN_RGB: &str = "in_rgb.png";
pub const EXCHANGE_IN_DEPTH: &str = "in_depth.pfm";
pub const EXCHANGE_IN_MASK: &str = "in_mask.png";
pub const EXCHANGE_OUT_RGB: &str = "out_rgb.png";
pub const EXCHANGE_OUT_DEPTH: &str = "out_depth.pfm";

/// Writes the request into `dir`, waits for the external tool's outputs and
/// enforces outside-mask identity on them.
pub fn external_exchange(request: &InpaintRequest<'_>, dir: &Path, timeout: Duration) -> Result<ExchangeOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out_rgb = dir.join(EXCHANGE_OUT_RGB);
    let out_depth = dir.join(EXCHANGE_OUT_DEPTH);
    for stale in [&out_rgb, &out_depth] {
        if stale.exists() {
            std::fs::remove_file(stale).map_err(|e| Error::io(stale, e))?;
        }
    }
    write_png_rgb(&dir.join(EXCHANGE_IN_RGB), request.image)?;
    write_pfm_depth(&dir.join(EXCHANGE_IN_DEPTH), request.depth)?;
    write_png_mask(&dir.join(EXCHANGE_IN_MASK), request.mask)?;

    let started = Instant::now();
    // Depth is written last by convention, but wait for both and retry
    // decoding in case a file is still being written.
    let (image, depth) = loop {
        if out_rgb.exists() && out_depth.exists() {
            if let (Ok(i), Ok(d)) = (read_png_rgb(&out_rgb), read_pfm_depth(&out_depth)) {
                break (i, d);
            }
        }
        if started.elapsed() >= timeout {
            return Err(Error::Inpaint(format!(
                "external inpainter timed out after {:.1}s; exchange files kept in {}",
                timeout.as_secs_f64(),
                dir.display()
            )));
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    request.image.check_same_dims(&image)?;
    request.image.check_same_dims(&depth)?;

    let mut result = InpaintResult { image, depth };
    let mut restored = 0;
    for (p, &m) in request.mask.as_slice().iter().enumerate() {
        let src_c = request.image.as_slice()[p];
        let src_d = request.depth.as_slice()[p];
        if m {
            if !(result.depth.as_slice()[p] > 0.0) {
                return Err(Error::Inpaint(format!(
                    "external inpainter returned non-positive depth inside the mask; exchange files kept in {}",
                    dir.display()
                )));
            }
            continue;
        }
        let dst_c = result.image.as_slice()[p];
        let dst_d = result.depth.as_slice()[p];
        let rgb_changed = dst_c.map(to_u8) != src_c.map(to_u8);
        let depth_changed = (src_d > 0.0) != (dst_d > 0.0) || (src_d > 0.0 && dst_d != src_d as f32 as f64);
        if rgb_changed || depth_changed {
            restored += 1;
        }
        result.image.as_mut_slice()[p] = src_c;
        result.depth.as_mut_slice()[p] = src_d;
    }
    if restored > 0 {
        log::warn!("external inpainter edited {restored} pixels outside the mask; restored them");
    }
    Ok(ExchangeOutcome {
        result,
        restored_pixels: restored,
    })
}
