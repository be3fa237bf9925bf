use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robench::metrics::zoo::{self, MEAN_PIXEL, NATURALNESS, PATCH_WEIGHTED, TINY_CNN};
use robench::metrics::{build_metric, proxy_scores, ssim, InputPolicy, MetricModel};
use robench::synth::textured;
use robench::{Error, Image};

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.05..0.95))
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * scale).max(1e-12)
}

/// Central differences on sampled coordinates plus one random direction.
/// Coordinates whose ±h probes switch a ReLU/pool/clamp branch are skipped.
fn fd_check(m: &MetricModel, img: &Image, rng: &mut ChaCha8Rng, coords: usize) -> (f64, usize) {
    let (_, grad) = m.score_and_gradient(img).unwrap();
    let sig = m.branch_signature(img).unwrap();
    let scale = grad.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let probe = |delta: &dyn Fn(&mut Image, f64)| -> Option<f64> {
        let (mut p, mut q) = (img.clone(), img.clone());
        delta(&mut p, H);
        delta(&mut q, -H);
        if m.branch_signature(&p).unwrap() != sig || m.branch_signature(&q).unwrap() != sig {
            return None;
        }
        Some((m.score(&p).unwrap() - m.score(&q).unwrap()) / (2.0 * H))
    };
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for _ in 0..coords {
        let i = rng.gen_range(0..img.len());
        match probe(&|x: &mut Image, d| x.data_mut()[i] += d) {
            Some(fd) => worst = worst.max(rel_err(grad.data()[i], fd, scale)),
            None => skipped += 1,
        }
    }
    let dir: Vec<f64> = (0..img.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic: f64 = dir.iter().zip(grad.data()).map(|(a, b)| a * b).sum();
    match probe(&|x: &mut Image, d| x.data_mut().iter_mut().zip(&dir).for_each(|(v, u)| *v += d * u)) {
        Some(fd) => worst = worst.max(rel_err(analytic, fd, analytic.abs().max(scale))),
        None => skipped += 1,
    }
    (worst, skipped)
}

#[test]
fn shipped_metric_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in [TINY_CNN, PATCH_WEIGHTED, NATURALNESS] {
        let m = build_metric(name, None).unwrap();
        let mut skipped = 0;
        for _ in 0..20 {
            let img = random_image(&mut rng, 16, 16);
            let (err, s) = fd_check(&m, &img, &mut rng, 12);
            skipped += s;
            assert!(err < TOL, "{name}: relative error {err}");
        }
        assert!(skipped < 20 * 13 / 10, "{name}: {skipped} probes skipped");
    }
}

#[test]
fn mean_metric_closed_forms() {
    let m = build_metric(MEAN_PIXEL, None).unwrap();
    let img = Image::filled(4, 5, 3, 0.5);
    assert_eq!(m.score(&img).unwrap(), 0.5);
    let g = m.score_gradient(&img).unwrap();
    assert!(g.data().iter().all(|&v| v == 1.0 / 60.0));
}

#[test]
fn saturated_clamp_has_zero_gradient() {
    let m = build_metric(zoo::SATURATED_CLAMP, None).unwrap();
    let img = textured(5, 8, 8);
    assert_eq!(m.score(&img).unwrap(), 2.0);
    assert!(m.score_gradient(&img).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn scoring_is_deterministic() {
    let img = textured(21, 32, 32);
    for name in [TINY_CNN, PATCH_WEIGHTED, NATURALNESS] {
        let m = build_metric(name, None).unwrap();
        let a = m.score(&img).unwrap();
        assert_eq!(a.to_bits(), m.score(&img).unwrap().to_bits());
        assert_eq!(a.to_bits(), build_metric(name, None).unwrap().score(&img).unwrap().to_bits());
        assert!(a.is_finite());
    }
}

#[test]
fn calibration_examples() {
    let mut m = build_metric(MEAN_PIXEL, None).unwrap();
    let set: Vec<Image> = [0.2, 0.7, 0.4].iter().map(|&v| Image::filled(2, 2, 3, v)).collect();
    let (lo, hi) = m.calibrate_range(&set).unwrap();
    assert!((lo - 0.2).abs() < 1e-15 && (hi - 0.7).abs() < 1e-15, "({lo}, {hi})");
    assert_eq!(m.declared_range(), Some((lo, hi)));
    let single = [Image::filled(2, 2, 3, 0.3)];
    assert!(matches!(m.calibrate_range(&single), Err(Error::Calibration { .. })));
    assert!(matches!(m.calibrate_range(&[]), Err(Error::Empty(_))));
    let fresh = build_metric(MEAN_PIXEL, None).unwrap();
    assert!(matches!(fresh.range_width(), Err(Error::Uncalibrated(_))));
}

#[test]
fn center_crop_gradient_is_zero_outside_the_crop() {
    let m = build_metric(TINY_CNN, Some(InputPolicy::CenterCrop { size: 8 })).unwrap();
    let img = textured(8, 16, 12);
    let g = m.score_gradient(&img).unwrap();
    let (oy, ox) = ((16 - 8) / 2, (12 - 8) / 2);
    let mut inside = 0.0f64;
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..12 {
                let v = g.get(y, x, c);
                if (oy..oy + 8).contains(&y) && (ox..ox + 8).contains(&x) {
                    inside = inside.max(v.abs());
                } else {
                    assert_eq!(v, 0.0, "gradient leaked to ({y}, {x}, {c})");
                }
            }
        }
    }
    assert!(inside > 0.0);
    let cropped = Image::from_fn(8, 8, 3, |y, x, c| img.get(y + oy, x + ox, c));
    let full = build_metric(TINY_CNN, None).unwrap();
    assert_eq!(m.score(&img).unwrap(), full.score(&cropped).unwrap());
    assert!(m.score(&Image::filled(6, 6, 3, 0.5)).is_err());
}

#[test]
fn resize_policy_spreads_gradient_everywhere() {
    let m = build_metric(PATCH_WEIGHTED, None).unwrap();
    assert_eq!(m.input_policy(), InputPolicy::Resize { size: 24 });
    let img = textured(9, 16, 16);
    let g = m.score_gradient(&img).unwrap();
    assert_eq!(g.tensor_shape(), img.tensor_shape());
}

#[test]
fn rejects_wrong_channel_count() {
    let m = build_metric(TINY_CNN, None).unwrap();
    assert!(matches!(m.score(&Image::filled(8, 8, 1, 0.5)), Err(Error::Shape(_))));
}

#[test]
fn weights_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.json");
    let m = build_metric(TINY_CNN, None).unwrap();
    m.save_weights(&path).unwrap();
    let mut other = build_metric(TINY_CNN, None).unwrap();
    other.load_weights(&path).unwrap();
    let img = textured(3, 16, 16);
    assert_eq!(m.score(&img).unwrap(), other.score(&img).unwrap());
}

// --- proxies -------------------------------------------------------------

/// Straightforward SSIM: luma, Gaussian window, valid positions, no reuse of
/// library code.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (h, w) = (a.height(), a.width());
    let luma = |img: &Image, y: usize, x: usize| {
        0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2)
    };
    let k = 11.min(h).min(w);
    let k = if k % 2 == 0 { k - 1 } else { k };
    let r = (k / 2) as i64;
    let mut weights = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as i64 - r, j as i64 - r);
            *v = (-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0.0;
    for y0 in 0..=(h - k) {
        for x0 in 0..=(w - k) {
            let mut s = [0.0f64; 5];
            for i in 0..k {
                for j in 0..k {
                    let wv = weights[i][j] / total;
                    let (p, q) = (luma(a, y0 + i, x0 + j), luma(b, y0 + i, x0 + j));
                    s[0] += wv * p;
                    s[1] += wv * q;
                    s[2] += wv * p * p;
                    s[3] += wv * q * q;
                    s[4] += wv * p * q;
                }
            }
            let (mx, my) = (s[0], s[1]);
            let (vx, vy, cxy) = (s[2] - mx * mx, s[3] - my * my, s[4] - mx * my);
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    acc / count
}

#[test]
fn ssim_matches_independent_oracle_and_negative_is_dissimilar() {
    let img = textured(17, 24, 20);
    let neg = Image::from_fn(24, 20, 3, |y, x, c| 1.0 - img.get(y, x, c));
    let s = ssim(&img, &neg).unwrap();
    assert!((s - ssim_oracle(&img, &neg)).abs() < 1e-12);
    assert!(s < 0.1, "ssim(I, 1 - I) = {s}");
    let other = textured(18, 24, 20);
    assert!((ssim(&img, &other).unwrap() - ssim_oracle(&img, &other)).abs() < 1e-12);
    let small = textured(19, 6, 9);
    let small2 = textured(20, 6, 9);
    assert!((ssim(&small, &small2).unwrap() - ssim_oracle(&small, &small2)).abs() < 1e-12);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn image_pair() -> impl Strategy<Value = (Image, Image)> {
        (4usize..14, 4usize..14).prop_flat_map(|(h, w)| {
            let n = h * w * 3;
            (
                prop::collection::vec(0.0f64..=1.0, n),
                prop::collection::vec(0.0f64..=1.0, n),
            )
                .prop_map(move |(a, b)| (Image::new(h, w, 3, a).unwrap(), Image::new(h, w, 3, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn proxy_identities((a, b) in image_pair()) {
            let p = proxy_scores(&a, &b).unwrap();
            prop_assert!(p.mse >= 0.0);
            prop_assert!(p.ssim <= 1.0 + 1e-12 && p.ssim >= -1.0 - 1e-12);
            if p.mse > 0.0 {
                prop_assert!((p.psnr + 10.0 * p.mse.log10()).abs() < 1e-9);
            }
            let same = proxy_scores(&a, &a).unwrap();
            prop_assert_eq!(same.mse, 0.0);
            prop_assert!(same.psnr.is_infinite());
            prop_assert!((same.ssim - 1.0).abs() < 1e-9);
            let sym = proxy_scores(&b, &a).unwrap();
            prop_assert!((sym.ssim - p.ssim).abs() < 1e-12);
        }
    }
}
