//! Mean local SSIM with an 11×11 Gaussian window (σ = 1.5), and its gradient.
//!
//! The window is clipped at the image border and renormalized, so constant
//! images give the closed-form value everywhere.

use crate::scene::{Grid, ImageRgb};

pub const WINDOW_RADIUS: usize = 5;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut k = [0.0; 2 * WINDOW_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - WINDOW_RADIUS as f64;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    k
}

/// Unnormalized clipped 1D filtering along x then y of a `w × h` plane.
fn blur_raw(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = WINDOW_RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                let xx = x as isize + d;
                if xx >= 0 && (xx as usize) < w {
                    s += k[(d + r) as usize] * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                let yy = y as isize + d;
                if yy >= 0 && (yy as usize) < h {
                    s += k[(d + r) as usize] * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Window weight sums per pixel (`Nx(x) * Ny(y)`).
fn norms(w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    blur_raw(&vec![1.0; w * h], w, h, k)
}

struct Stats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn channel_stats(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64], norm: &[f64]) -> Stats {
    let f = |v: Vec<f64>| -> Vec<f64> {
        blur_raw(&v, w, h, k).iter().zip(norm).map(|(s, n)| s / n).collect()
    };
    Stats {
        mu_a: f(a.to_vec()),
        mu_b: f(b.to_vec()),
        e_aa: f(a.iter().map(|v| v * v).collect()),
        e_bb: f(b.iter().map(|v| v * v).collect()),
        e_ab: f(a.iter().zip(b).map(|(x, y)| x * y).collect()),
    }
}

fn split_channels(img: &ImageRgb) -> [Vec<f64>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for p in img.as_slice() {
        for c in 0..3 {
            out[c].push(p[c]);
        }
    }
    out
}

fn ssim_terms(s: &Stats, p: usize) -> (f64, f64, f64, f64, f64) {
    let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
    let va = s.e_aa[p] - ma * ma;
    let vb = s.e_bb[p] - mb * mb;
    let cov = s.e_ab[p] - ma * mb;
    let a1 = 2.0 * ma * mb + C1;
    let a2 = 2.0 * cov + C2;
    let b1 = ma * ma + mb * mb + C1;
    let b2 = va + vb + C2;
    (a1, a2, b1, b2, a1 * a2 / (b1 * b2))
}

/// Mean SSIM over pixels and channels. Panics on mismatched sizes.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> f64 {
    ssim_map_mean(a, b, None).0
}

/// Mean SSIM restricted to the pixels where `mask` is set (all channels).
pub fn ssim_masked(a: &ImageRgb, b: &ImageRgb, mask: &Grid<bool>) -> Option<f64> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    Some(ssim_map_mean(a, b, Some(mask)).0)
}

fn ssim_map_mean(a: &ImageRgb, b: &ImageRgb, mask: Option<&Grid<bool>>) -> (f64, usize) {
    assert_eq!(a.dims(), b.dims(), "ssim: resolution mismatch");
    let (w, h) = a.dims();
    let k = kernel();
    let norm = norms(w, h, &k);
    let ca = split_channels(a);
    let cb = split_channels(b);
    let mut vals = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        let s = channel_stats(&ca[c], &cb[c], w, h, &k, &norm);
        for p in 0..w * h {
            if mask.is_none_or(|m| m.as_slice()[p]) {
                vals.push(ssim_terms(&s, p).4);
            }
        }
    }
    let n = vals.len();
    (super::tree_sum(&vals) / n.max(1) as f64, n)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &ImageRgb, b: &ImageRgb) -> (f64, ImageRgb) {
    assert_eq!(a.dims(), b.dims(), "ssim: resolution mismatch");
    let (w, h) = a.dims();
    let n = (3 * w * h) as f64;
    let k = kernel();
    let norm = norms(w, h, &k);
    let ca = split_channels(a);
    let cb = split_channels(b);
    let mut vals = Vec::with_capacity(3 * w * h);
    let mut grad = Grid::filled(w, h, [0.0; 3]);
    for c in 0..3 {
        let s = channel_stats(&ca[c], &cb[c], w, h, &k, &norm);
        let mut p_mu = vec![0.0; w * h];
        let mut p_aa = vec![0.0; w * h];
        let mut p_ab = vec![0.0; w * h];
        for p in 0..w * h {
            let (a1, a2, b1, b2, v) = ssim_terms(&s, p);
            vals.push(v);
            let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
            let d_mu = (2.0 * mb * a2 - 2.0 * mb * a1) / (b1 * b2) - v * (2.0 * ma / b1 - 2.0 * ma / b2);
            let d_aa = -v / b2;
            let d_ab = 2.0 * a1 / (b1 * b2);
            // transposed normalized window: divide by the window sum at p
            p_mu[p] = d_mu / (n * norm[p]);
            p_aa[p] = d_aa / (n * norm[p]);
            p_ab[p] = d_ab / (n * norm[p]);
        }
        let t_mu = blur_raw(&p_mu, w, h, &k);
        let t_aa = blur_raw(&p_aa, w, h, &k);
        let t_ab = blur_raw(&p_ab, w, h, &k);
        for q in 0..w * h {
            grad.as_mut_slice()[q][c] = t_mu[q] + 2.0 * ca[c][q] * t_aa[q] + cb[c][q] * t_ab[q];
        }
    }
    (super::tree_sum(&vals) / n, grad)
}
