//! Perceptual distance from a frozen, randomly initialized convolutional
//! feature stack.
//!
//! Three scales: a 3×3 convolution with `tanh` at full resolution, then 2×2
//! average pooling followed by another convolution per extra scale. Features
//! are unit-normalized across channels at every pixel; the distance is the
//! sum over scales of the mean squared feature difference. The weights are a
//! pure function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{Grid, ImageRgb};

pub const DEFAULT_PERCEPTUAL_SEED: u64 = 0x5eed_1e55;

const CHANNELS: [usize; 4] = [3, 8, 16, 16];
const NORM_EPS: f64 = 1e-10;

/// Box–Muller standard normal sample.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Debug)]
struct Conv {
    cin: usize,
    cout: usize,
    /// `[cout][cin][3][3]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Channel-major feature tensor.
#[derive(Clone, Debug)]
struct Tensor {
    c: usize,
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, w: usize, h: usize) -> Self {
        Tensor { c, w, h, data: vec![0.0; c * w * h] }
    }

    #[inline]
    fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// Output rows/columns `[lo, hi)` whose tap at offset `d` stays inside
/// `[0, n)`.
#[inline]
fn valid_range(d: isize, n: usize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    lo..hi.max(lo)
}

impl Conv {
    fn forward(&self, input: &Tensor) -> Tensor {
        let (w, h) = (input.w, input.h);
        let plane = w * h;
        let mut out = Tensor::zeros(self.cout, w, h);
        for o in 0..self.cout {
            let dst = &mut out.data[o * plane..(o + 1) * plane];
            dst.fill(self.bias[o]);
            for i in 0..self.cin {
                let src = &input.data[i * plane..(i + 1) * plane];
                let wb = &self.weight[(o * self.cin + i) * 9..][..9];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let wv = wb[ky * 3 + kx];
                        let xs = valid_range(dx, w);
                        for y in valid_range(dy, h) {
                            let sy = (y as isize + dy) as usize;
                            let d = &mut dst[y * w + xs.start..y * w + xs.end];
                            let s0 = (sy * w) as isize + xs.start as isize + dx;
                            let s = &src[s0 as usize..s0 as usize + d.len()];
                            for (a, b) in d.iter_mut().zip(s) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradient with respect to the input given the gradient of the output.
    fn backward(&self, grad_out: &Tensor) -> Tensor {
        let (w, h) = (grad_out.w, grad_out.h);
        let plane = w * h;
        let mut g = Tensor::zeros(self.cin, w, h);
        for o in 0..self.cout {
            let go = &grad_out.data[o * plane..(o + 1) * plane];
            for i in 0..self.cin {
                let dst = &mut g.data[i * plane..(i + 1) * plane];
                let wb = &self.weight[(o * self.cin + i) * 9..][..9];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let wv = wb[ky * 3 + kx];
                        let xs = valid_range(dx, w);
                        for y in valid_range(dy, h) {
                            let sy = (y as isize + dy) as usize;
                            let src = &go[y * w + xs.start..y * w + xs.end];
                            let d0 = (sy * w) as isize + xs.start as isize + dx;
                            let d = &mut dst[d0 as usize..d0 as usize + src.len()];
                            for (a, b) in d.iter_mut().zip(src) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
        g
    }
}

fn avg_pool(t: &Tensor) -> Tensor {
    let (w, h) = (t.w / 2, t.h / 2);
    let mut out = Tensor::zeros(t.c, w, h);
    for c in 0..t.c {
        for y in 0..h {
            for x in 0..w {
                let s = t.at(c, 2 * x, 2 * y)
                    + t.at(c, 2 * x + 1, 2 * y)
                    + t.at(c, 2 * x, 2 * y + 1)
                    + t.at(c, 2 * x + 1, 2 * y + 1);
                out.data[(c * h + y) * w + x] = 0.25 * s;
            }
        }
    }
    out
}

fn avg_pool_backward(g: &Tensor, w: usize, h: usize) -> Tensor {
    let mut out = Tensor::zeros(g.c, w, h);
    for c in 0..g.c {
        for y in 0..g.h {
            for x in 0..g.w {
                let v = 0.25 * g.at(c, x, y);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out.data[(c * h + 2 * y + dy) * w + 2 * x + dx] += v;
                }
            }
        }
    }
    out
}

/// Per-scale activations kept for the backward pass.
struct Activations {
    /// Conv input at each scale (after pooling).
    inputs: Vec<Tensor>,
    /// `tanh` outputs.
    features: Vec<Tensor>,
    /// Unit-normalized features.
    normalized: Vec<Tensor>,
    /// Per-pixel norms.
    norms: Vec<Vec<f64>>,
}

/// Frozen random feature stack.
#[derive(Clone, Debug)]
pub struct PerceptualNet {
    convs: Vec<Conv>,
    seed: u64,
}

impl Default for PerceptualNet {
    fn default() -> Self {
        PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED)
    }
}

impl PerceptualNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = CHANNELS
            .windows(2)
            .map(|pair| {
                let (cin, cout) = (pair[0], pair[1]);
                let std = (2.0 / (9 * cin) as f64).sqrt();
                let weight = (0..cout * cin * 9).map(|_| std * standard_normal(&mut rng)).collect();
                let bias = (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect();
                Conv { cin, cout, weight, bias }
            })
            .collect();
        PerceptualNet { convs, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn forward(&self, img: &ImageRgb) -> Activations {
        let (w, h) = img.dims();
        let mut x = Tensor::zeros(3, w, h);
        for (p, px) in img.as_slice().iter().enumerate() {
            for c in 0..3 {
                x.data[c * w * h + p] = 2.0 * px[c] - 1.0;
            }
        }
        let mut acts = Activations {
            inputs: Vec::new(),
            features: Vec::new(),
            normalized: Vec::new(),
            norms: Vec::new(),
        };
        for (level, conv) in self.convs.iter().enumerate() {
            if level > 0 {
                x = avg_pool(acts.features.last().unwrap());
                if x.w == 0 || x.h == 0 {
                    break;
                }
            }
            let mut f = conv.forward(&x);
            for v in &mut f.data {
                *v = v.tanh();
            }
            let plane = f.w * f.h;
            let mut norms = vec![0.0; plane];
            for c in 0..f.c {
                for p in 0..plane {
                    norms[p] += f.data[c * plane + p].powi(2);
                }
            }
            for n in &mut norms {
                *n = (*n + NORM_EPS).sqrt();
            }
            let mut nf = f.clone();
            for c in 0..f.c {
                for p in 0..plane {
                    nf.data[c * plane + p] /= norms[p];
                }
            }
            acts.inputs.push(x.clone());
            acts.features.push(f);
            acts.normalized.push(nf);
            acts.norms.push(norms);
        }
        acts
    }

    /// Distance between two images of equal size.
    pub fn distance(&self, a: &ImageRgb, b: &ImageRgb) -> f64 {
        assert_eq!(a.dims(), b.dims(), "perceptual: resolution mismatch");
        let fa = self.forward(a);
        let fb = self.forward(b);
        level_distances(&fa, &fb).iter().sum()
    }

    /// Distance and its gradient with respect to `a` (`b` held fixed).
    pub fn distance_with_grad(&self, a: &ImageRgb, b: &ImageRgb) -> (f64, ImageRgb) {
        assert_eq!(a.dims(), b.dims(), "perceptual: resolution mismatch");
        let (w, h) = a.dims();
        let fa = self.forward(a);
        let fb = self.forward(b);
        let value = level_distances(&fa, &fb).iter().sum();

        let levels = fa.features.len();
        let mut carry: Option<Tensor> = None;
        for level in (0..levels).rev() {
            let f = &fa.features[level];
            let na = &fa.normalized[level];
            let nb = &fb.normalized[level];
            let norms = &fa.norms[level];
            let plane = f.w * f.h;
            // d(dist)/d(normalized)
            let mut g = Tensor::zeros(f.c, f.w, f.h);
            for i in 0..g.data.len() {
                g.data[i] = 2.0 * (na.data[i] - nb.data[i]) / plane as f64;
            }
            // through unit normalization
            let mut dot = vec![0.0; plane];
            for c in 0..f.c {
                for p in 0..plane {
                    dot[p] += na.data[c * plane + p] * g.data[c * plane + p];
                }
            }
            let mut gf = Tensor::zeros(f.c, f.w, f.h);
            for c in 0..f.c {
                for p in 0..plane {
                    let i = c * plane + p;
                    gf.data[i] = (g.data[i] - na.data[i] * dot[p]) / norms[p];
                }
            }
            // plus gradient flowing back from coarser scales
            if let Some(c) = carry.take() {
                for (x, y) in gf.data.iter_mut().zip(&c.data) {
                    *x += y;
                }
            }
            // through tanh
            for (gv, fv) in gf.data.iter_mut().zip(&f.data) {
                *gv *= 1.0 - fv * fv;
            }
            let g_in = self.convs[level].backward(&gf);
            carry = Some(if level > 0 {
                let prev = &fa.features[level - 1];
                avg_pool_backward(&g_in, prev.w, prev.h)
            } else {
                g_in
            });
        }
        let g0 = carry.expect("at least one level");
        let grad = Grid::from_fn(w, h, |x, y| {
            let p = y * w + x;
            // input was 2a - 1
            [2.0 * g0.data[p], 2.0 * g0.data[w * h + p], 2.0 * g0.data[2 * w * h + p]]
        });
        (value, grad)
    }
}

fn level_distances(fa: &Activations, fb: &Activations) -> Vec<f64> {
    fa.normalized
        .iter()
        .zip(&fb.normalized)
        .map(|(a, b)| {
            let plane = (a.w * a.h) as f64;
            let sq: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).collect();
            super::tree_sum(&sq) / plane
        })
        .collect()
}
