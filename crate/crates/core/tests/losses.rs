//! Loss terms and metrics against independent reference implementations.

mod common;

use common::rng;
use gsinpaint_core::losses::{
    identity_ce, l_cross, l_depth, l_image, perceptual_distance, ImageLossVariant, PerceptualNet, C1, C2,
    DEFAULT_LAMBDA,
};
use gsinpaint_core::render::IdentityImage;
use gsinpaint_core::scene::{Grid, LabelMap, IDENTITY_DIM, NO_DEPTH};
use gsinpaint_core::synth::eval_metrics;
use gsinpaint_core::ImageRgb;
use rand::Rng;

fn random_image(seed: u64, w: usize, h: usize) -> ImageRgb {
    let mut r = rng(seed);
    Grid::from_fn(w, h, |_, _| std::array::from_fn(|_| r.random_range(0.0..1.0)))
}

fn smooth_image(seed: u64, w: usize, h: usize) -> ImageRgb {
    let mut r = rng(seed);
    let f: [f64; 6] = std::array::from_fn(|_| r.random_range(0.05..0.4));
    Grid::from_fn(w, h, |x, y| {
        std::array::from_fn(|c| 0.5 + 0.4 * (f[c] * x as f64 + f[c + 3] * y as f64 + c as f64).sin())
    })
}

/// Mean SSIM with the window summed directly in 2D at every pixel, clipped
/// at the border and renormalized, statistics in centered form.
fn reference_ssim(a: &ImageRgb, b: &ImageRgb) -> f64 {
    let (w, h) = a.dims();
    let mut total = 0.0;
    for c in 0..3 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut win = Vec::new();
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                            let wt = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                            let (xx, yy) = (xx as usize, yy as usize);
                            win.push((wt, a.get(xx, yy)[c], b.get(xx, yy)[c]));
                        }
                    }
                }
                let z: f64 = win.iter().map(|t| t.0).sum();
                let ma = win.iter().map(|t| t.0 * t.1).sum::<f64>() / z;
                let mb = win.iter().map(|t| t.0 * t.2).sum::<f64>() / z;
                let va = win.iter().map(|t| t.0 * (t.1 - ma).powi(2)).sum::<f64>() / z;
                let vb = win.iter().map(|t| t.0 * (t.2 - mb).powi(2)).sum::<f64>() / z;
                let cov = win.iter().map(|t| t.0 * (t.1 - ma) * (t.2 - mb)).sum::<f64>() / z;
                total += (2.0 * ma * mb + 0.01f64.powi(2)) * (2.0 * cov + 0.03f64.powi(2))
                    / ((ma * ma + mb * mb + 0.01f64.powi(2)) * (va + vb + 0.03f64.powi(2)));
            }
        }
    }
    total / (3 * w * h) as f64
}

fn reference_l1(a: &ImageRgb, b: &ImageRgb) -> f64 {
    let mut s = 0.0;
    for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
        for c in 0..3 {
            s += (p[c] - q[c]).abs();
        }
    }
    s / (3 * a.len()) as f64
}

#[test]
fn image_loss_matches_reference() {
    for seed in 0..4 {
        let (a, b) = (random_image(seed, 23, 17), smooth_image(seed + 50, 23, 17));
        let want = DEFAULT_LAMBDA * reference_l1(&a, &b) + (1.0 - reference_ssim(&a, &b));
        let got = l_image(&a, &b, DEFAULT_LAMBDA, ImageLossVariant::Literal).unwrap();
        assert!((got.value - want).abs() < 1e-6, "{} vs {want}", got.value);
        let weighted = l_image(&a, &b, DEFAULT_LAMBDA, ImageLossVariant::Weighted).unwrap();
        let want_w = (1.0 - DEFAULT_LAMBDA) * reference_l1(&a, &b) + DEFAULT_LAMBDA * (1.0 - reference_ssim(&a, &b));
        assert!((weighted.value - want_w).abs() < 1e-6);
    }
}

#[test]
fn image_loss_of_a_constant_shift() {
    let a = Grid::from_fn(16, 16, |x, y| [0.2 + 0.01 * x as f64, 0.3 + 0.02 * y as f64, 0.4]);
    let b = a.map(|p| p.map(|v| v + 0.1));
    let got = l_image(&a, &b, 0.2, ImageLossVariant::Literal).unwrap();
    assert!((got.l1 - 0.1).abs() < 1e-12);
    assert!((got.value - (0.02 + got.ssim_loss)).abs() < 1e-12);
    assert!((got.ssim_loss - (1.0 - reference_ssim(&a, &b))).abs() < 1e-9);
}

#[test]
fn ssim_constants_are_standard() {
    assert_eq!((C1, C2), (0.01f64.powi(2), 0.03f64.powi(2)));
}

fn reference_depth_l1(a: &gsinpaint_core::DepthMap, b: &gsinpaint_core::DepthMap) -> f64 {
    let pairs: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x - y).abs())
        .collect();
    pairs.iter().sum::<f64>() / pairs.len() as f64
}

#[test]
fn depth_loss_matches_reference() {
    let mut r = rng(2);
    for _ in 0..5 {
        let a = Grid::from_fn(31, 19, |_, _| if r.random_bool(0.1) { NO_DEPTH } else { r.random_range(0.5..6.0) });
        let b = Grid::from_fn(31, 19, |_, _| if r.random_bool(0.1) { NO_DEPTH } else { r.random_range(0.5..6.0) });
        let got = l_depth(&a, &b).unwrap().value;
        assert!((got - reference_depth_l1(&a, &b)).abs() < 1e-6);
        let shifted = a.map(|&d| if d > 0.0 { d + 1.0 } else { d });
        assert!((l_depth(&shifted, &a).unwrap().value - 1.0).abs() < 1e-12);
    }
}

#[test]
fn perceptual_distance_shrinks_along_a_blend() {
    let net = PerceptualNet::new(gsinpaint_core::losses::DEFAULT_PERCEPTUAL_SEED);
    let a = smooth_image(1, 32, 32);
    let b = random_image(2, 32, 32);
    let d: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&alpha| {
            let blend = Grid::from_fn(32, 32, |x, y| {
                let (p, q) = (a.get(x, y), b.get(x, y));
                std::array::from_fn(|c| alpha * p[c] + (1.0 - alpha) * q[c])
            });
            perceptual_distance(&net, &a, &blend).unwrap()
        })
        .collect();
    for pair in d.windows(2) {
        assert!(pair[1] < pair[0], "{d:?}");
    }
    assert_eq!(d[4], 0.0);
}

#[test]
fn cross_loss_of_one_differing_view_is_its_distance() {
    let net = PerceptualNet::new(5);
    let (a, b, c) = (smooth_image(3, 20, 16), smooth_image(4, 20, 16), random_image(5, 20, 16));
    let loss = l_cross(&net, &[a.clone(), c.clone()], &[a.clone(), b.clone()]).unwrap();
    assert_eq!(loss.value, perceptual_distance(&net, &c, &b).unwrap());
    assert_eq!(l_cross(&net, &[a.clone(), b.clone()], &[a, b]).unwrap().value, 0.0);
}

#[test]
fn cross_loss_gradient_matches_finite_differences() {
    let net = PerceptualNet::new(6);
    let renders = vec![random_image(10, 16, 16), smooth_image(11, 16, 16)];
    let supervision = vec![smooth_image(12, 16, 16), random_image(13, 16, 16)];
    let loss = l_cross(&net, &renders, &supervision).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for v in 0..2 {
        for p in 0..256 {
            for c in 0..3 {
                let eval = |delta: f64| {
                    let mut r = renders.clone();
                    r[v].as_mut_slice()[p][c] += delta;
                    l_cross(&net, &r, &supervision).unwrap().value
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = loss.grad[v].as_slice()[p][c];
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    assert!(worst < 1e-3, "relative error {worst}");
}

#[test]
fn identity_loss_extremes() {
    let labels: LabelMap = Grid::from_fn(7, 5, |x, y| ((x * 3 + y) % IDENTITY_DIM) as u8);
    let uniform: IdentityImage = Grid::filled(7, 5, [0.3; IDENTITY_DIM]);
    let ce = identity_ce(&uniform, &labels).unwrap().value;
    assert!((ce - (IDENTITY_DIM as f64).ln()).abs() < 1e-12);
    let one_hot = Grid::from_fn(7, 5, |x, y| gsinpaint_core::Gaussian::one_hot_identity(*labels.get(x, y), 10.0));
    assert!(identity_ce(&one_hot, &labels).unwrap().value < 1e-3);
}

#[test]
fn identity_loss_gradient_matches_finite_differences() {
    let mut r = rng(21);
    let logits: IdentityImage = Grid::from_fn(5, 4, |_, _| std::array::from_fn(|_| r.random_range(-3.0..3.0)));
    let labels: LabelMap = Grid::from_fn(5, 4, |_, _| r.random_range(0..IDENTITY_DIM as u8));
    let loss = identity_ce(&logits, &labels).unwrap();
    let h = 1e-6;
    for p in 0..20 {
        for c in 0..IDENTITY_DIM {
            let eval = |delta: f64| {
                let mut z = logits.clone();
                z.as_mut_slice()[p][c] += delta;
                identity_ce(&z, &labels).unwrap().value
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = loss.grad.as_slice()[p][c];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!((analytic - numeric).abs() / scale < 1e-4, "pixel {p} channel {c}");
        }
    }
}

#[test]
fn metrics_match_reference() {
    for seed in 0..3 {
        let (a, b) = (random_image(seed, 29, 21), smooth_image(seed + 9, 29, 21));
        let mask = Grid::from_fn(29, 21, |x, y| (x * y) % 5 == 1);
        let m = eval_metrics(&a, &b, &mask);
        let psnr = |sel: &dyn Fn(usize) -> bool| {
            let mut se = 0.0;
            let mut n = 0.0;
            for (i, (p, q)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
                if sel(i) {
                    for c in 0..3 {
                        se += (p[c] - q[c]).powi(2);
                        n += 1.0;
                    }
                }
            }
            10.0 * (1.0 / (se / n)).log10()
        };
        assert!((m.psnr - psnr(&|_| true)).abs() < 1e-6);
        assert!((m.masked_psnr.unwrap() - psnr(&|i| mask.as_slice()[i])).abs() < 1e-6);
        assert!((m.ssim - reference_ssim(&a, &b)).abs() < 1e-6);
    }
    let zero: ImageRgb = Grid::filled(8, 8, [0.0; 3]);
    let one: ImageRgb = Grid::filled(8, 8, [1.0; 3]);
    let m = eval_metrics(&zero, &one, &Grid::filled(8, 8, true));
    assert_eq!(m.psnr, 0.0);
    assert_eq!(m.masked_psnr, Some(0.0));
}
