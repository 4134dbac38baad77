//! Tile-binned front-to-back compositing and its reverse-mode adjoint.

use rayon::prelude::*;

use super::project::{project_with_cache, ProjectionCache, Splat, SplatGrad, CUTOFF_MAHALANOBIS_SQ};
use crate::scene::{CameraPose, Gaussian, IDENTITY_DIM};

pub(crate) const TILE: usize = 8;

/// Compositing stops once transmittance drops below this; whatever lies
/// behind could change no output by more than this fraction.
pub const MIN_TRANSMITTANCE: f64 = 1e-7;

pub(crate) struct Prepared {
    /// Projected splats in compositing order (camera depth, then input index).
    pub splats: Vec<Splat>,
    pub caches: Vec<ProjectionCache>,
    pub tiles_x: usize,
    /// Per-tile indices into `splats`, ascending.
    pub bins: Vec<Vec<u32>>,
}

pub(crate) fn prepare(gaussians: &[Gaussian], pose: &CameraPose) -> Prepared {
    let mut projected: Vec<(Splat, ProjectionCache)> = gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_with_cache(g, i, pose))
        .collect();
    projected.sort_by(|a, b| {
        a.0.depth
            .total_cmp(&b.0.depth)
            .then(a.0.index.cmp(&b.0.index))
    });
    let (splats, caches): (Vec<_>, Vec<_>) = projected.into_iter().unzip();

    let tiles_x = pose.width.div_ceil(TILE);
    let mut bins = vec![Vec::new(); tiles_x * pose.height.div_ceil(TILE)];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bounds;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Prepared {
        splats,
        caches,
        tiles_x,
        bins,
    }
}

/// Footprint weight and the offset from the splat center, or `None` outside
/// the cutoff ellipse.
#[inline]
pub(crate) fn footprint(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if !(m <= CUTOFF_MAHALANOBIS_SQ) {
        return None;
    }
    Some(((-0.5 * m).exp(), dx, dy, m))
}

/// Composited quantities of one pixel.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PixelOut {
    pub rgb: [f64; 3],
    pub coverage: f64,
    /// Unnormalized depth sum `Σ w z`.
    pub depth_sum: f64,
}

pub(crate) struct TileOut {
    pub pixels: Vec<(usize, PixelOut)>,
    pub identity: Vec<[f64; IDENTITY_DIM]>,
}

pub(crate) fn forward_tile(
    prep: &Prepared,
    gaussians: &[Gaussian],
    pose: &CameraPose,
    tile: usize,
    with_identity: bool,
) -> TileOut {
    let tx = tile % prep.tiles_x;
    let ty = tile / prep.tiles_x;
    let bin = &prep.bins[tile];
    let x_end = ((tx + 1) * TILE).min(pose.width);
    let y_end = ((ty + 1) * TILE).min(pose.height);
    let mut pixels = Vec::with_capacity(TILE * TILE);
    let mut identity = Vec::new();
    for y in ty * TILE..y_end {
        for x in tx * TILE..x_end {
            let mut out = PixelOut::default();
            let mut id = [0.0; IDENTITY_DIM];
            let mut trans = 1.0;
            for &k in bin {
                let s = &prep.splats[k as usize];
                let Some((gval, ..)) = footprint(s, x as f64, y as f64) else {
                    continue;
                };
                let alpha = s.opacity * gval;
                let w = alpha * trans;
                for c in 0..3 {
                    out.rgb[c] += w * s.color[c];
                }
                out.coverage += w;
                out.depth_sum += w * s.depth;
                if with_identity {
                    let e = &gaussians[s.index].identity;
                    for c in 0..IDENTITY_DIM {
                        id[c] += w * e[c];
                    }
                }
                trans *= 1.0 - alpha;
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
            }
            pixels.push((y * pose.width + x, out));
            if with_identity {
                identity.push(id);
            }
        }
    }
    TileOut { pixels, identity }
}

/// Per-pixel adjoint of the composited outputs.
pub(crate) struct PixelAdjointRef<'a> {
    pub rgb: &'a [[f64; 3]],
    /// Gradient w.r.t. expected depth; zero where depth is undefined.
    pub depth: Option<&'a [f64]>,
    pub identity: Option<&'a [[f64; IDENTITY_DIM]]>,
}

/// Sparse per-tile gradient contributions, keyed by splat position.
pub(crate) struct TileGrad {
    pub splat: Vec<u32>,
    pub grad: Vec<SplatGrad>,
    pub identity: Vec<[f64; IDENTITY_DIM]>,
}

struct Contribution {
    k: u32,
    slot: usize,
    gval: f64,
    alpha: f64,
    trans: f64,
    dx: f64,
    dy: f64,
}

pub(crate) fn backward_tile(
    prep: &Prepared,
    gaussians: &[Gaussian],
    pose: &CameraPose,
    tile: usize,
    adjoint: &PixelAdjointRef<'_>,
    coverage_floor: f64,
) -> TileGrad {
    let tx = tile % prep.tiles_x;
    let ty = tile / prep.tiles_x;
    let bin = &prep.bins[tile];
    let with_identity = adjoint.identity.is_some();
    let mut grads = vec![SplatGrad::default(); bin.len()];
    let mut id_grads = if with_identity {
        vec![[0.0; IDENTITY_DIM]; bin.len()]
    } else {
        Vec::new()
    };
    let mut touched = vec![false; bin.len()];
    let mut contrib: Vec<Contribution> = Vec::new();
    let x_end = ((tx + 1) * TILE).min(pose.width);
    let y_end = ((ty + 1) * TILE).min(pose.height);

    for y in ty * TILE..y_end {
        for x in tx * TILE..x_end {
            let pix = y * pose.width + x;
            let g_rgb = adjoint.rgb[pix];
            let g_depth = adjoint.depth.map_or(0.0, |d| d[pix]);
            let g_id = adjoint.identity.map(|d| &d[pix]);
            if g_rgb == [0.0; 3] && g_depth == 0.0 && g_id.is_none_or(|g| g.iter().all(|&v| v == 0.0))
            {
                continue;
            }

            contrib.clear();
            let mut trans = 1.0;
            let mut coverage = 0.0;
            let mut depth_sum = 0.0;
            for (slot, &k) in bin.iter().enumerate() {
                let s = &prep.splats[k as usize];
                let Some((gval, dx, dy, _)) = footprint(s, x as f64, y as f64) else {
                    continue;
                };
                let alpha = s.opacity * gval;
                let w = alpha * trans;
                coverage += w;
                depth_sum += w * s.depth;
                contrib.push(Contribution {
                    k,
                    slot,
                    gval,
                    alpha,
                    trans,
                    dx,
                    dy,
                });
                trans *= 1.0 - alpha;
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
            }
            if contrib.is_empty() {
                continue;
            }

            // depth = depth_sum / coverage
            let (g_zsum, g_cov) = if coverage >= coverage_floor && g_depth != 0.0 {
                let d = depth_sum / coverage;
                (g_depth / coverage, -g_depth * d / coverage)
            } else {
                (0.0, 0.0)
            };

            let mut rest_rgb = [0.0; 3];
            let mut rest_cov = 0.0;
            let mut rest_z = 0.0;
            let mut rest_id = [0.0; IDENTITY_DIM];
            for c in contrib.iter().rev() {
                let s = &prep.splats[c.k as usize];
                let w = c.alpha * c.trans;
                let mut g_alpha = 0.0;
                for ch in 0..3 {
                    g_alpha += g_rgb[ch] * (s.color[ch] - rest_rgb[ch]);
                }
                g_alpha += g_zsum * (s.depth - rest_z) + g_cov * (1.0 - rest_cov);
                if let Some(g_id) = g_id {
                    let e = &gaussians[s.index].identity;
                    let ig = &mut id_grads[c.slot];
                    for ch in 0..IDENTITY_DIM {
                        g_alpha += g_id[ch] * (e[ch] - rest_id[ch]);
                        ig[ch] += g_id[ch] * w;
                        rest_id[ch] = c.alpha * e[ch] + (1.0 - c.alpha) * rest_id[ch];
                    }
                }
                g_alpha *= c.trans;

                let sg = &mut grads[c.slot];
                touched[c.slot] = true;
                for ch in 0..3 {
                    sg.color[ch] += g_rgb[ch] * w;
                }
                sg.depth += g_zsum * w;
                sg.opacity += g_alpha * c.gval;
                // alpha = o exp(-m/2)
                let g_m = -0.5 * c.alpha * g_alpha;
                let [qa, qb, qc] = s.conic;
                sg.mean[0] += g_m * -2.0 * (qa * c.dx + qb * c.dy);
                sg.mean[1] += g_m * -2.0 * (qb * c.dx + qc * c.dy);
                sg.conic[0] += g_m * c.dx * c.dx;
                sg.conic[1] += g_m * 2.0 * c.dx * c.dy;
                sg.conic[2] += g_m * c.dy * c.dy;

                for ch in 0..3 {
                    rest_rgb[ch] = c.alpha * s.color[ch] + (1.0 - c.alpha) * rest_rgb[ch];
                }
                rest_cov = c.alpha + (1.0 - c.alpha) * rest_cov;
                rest_z = c.alpha * s.depth + (1.0 - c.alpha) * rest_z;
            }
        }
    }

    let mut out = TileGrad {
        splat: Vec::new(),
        grad: Vec::new(),
        identity: Vec::new(),
    };
    for (slot, &k) in bin.iter().enumerate() {
        if touched[slot] {
            out.splat.push(k);
            out.grad.push(grads[slot]);
            if with_identity {
                out.identity.push(id_grads[slot]);
            }
        }
    }
    out
}
