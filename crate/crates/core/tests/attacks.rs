use gradcore::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robench::attacks::*;
use robench::metrics::zoo::{MEAN_PIXEL, SATURATED_CLAMP, TINY_CNN};
use robench::metrics::{build_metric, mse, InputPolicy, MetricModel, IMAGE_INPUT};
use robench::synth::textured;
use robench::{Error, Image};

fn calibrated(name: &str) -> MetricModel {
    let mut m = build_metric(name, None).unwrap();
    let calib: Vec<Image> = (0..16).map(|i| textured(500 + i, 16, 16)).collect();
    m.calibrate_range(&calib).unwrap();
    m
}

fn mean_metric() -> MetricModel {
    build_metric(MEAN_PIXEL, None).unwrap().with_range(0.0, 0.5).unwrap()
}

/// Score `mean((I - 0.5)²)`: gradient sign flips around mid-gray.
fn bowl_metric() -> MetricModel {
    let mut g = Graph::new();
    let x = g.input(IMAGE_INPUT);
    let c = g.shift(x, -0.5);
    let s = g.square(c);
    let out = g.mean(s);
    g.set_output(out);
    MetricModel::new("bowl", g, 3, InputPolicy::FullFrame).with_range(0.0, 0.25).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..=1.0))
}


#[test]
fn loss_is_the_normalized_score() {
    let m = mean_metric();
    assert!((attack_loss(&m, &Image::filled(2, 2, 3, 0.3)).unwrap() - 0.4).abs() < 1e-15);
    assert_eq!(attack_loss(&m, &Image::filled(2, 2, 3, 0.5)).unwrap(), 0.0);
    assert_eq!(attack_loss(&m, &Image::filled(2, 2, 3, 0.0)).unwrap(), 1.0);
    let tiny = calibrated(TINY_CNN);
    let img = textured(1, 16, 16);
    let (_, gj) = loss_and_gradient(&tiny, &img).unwrap();
    let gs = tiny.score_gradient(&img).unwrap();
    let r = tiny.range_width().unwrap();
    for (a, b) in gj.data().iter().zip(gs.data()) {
        assert!((a + b / r).abs() <= 1e-15 * b.abs().max(1e-300) / r + 1e-18);
    }
    let raw = build_metric(TINY_CNN, None).unwrap();
    assert!(matches!(attack_loss(&raw, &img), Err(Error::Uncalibrated(_))));
}

#[test]
fn fgsm_on_the_mean_metric_raises_the_score_by_epsilon() {
    let m = mean_metric();
    let img = Image::from_fn(8, 8, 3, |y, x, c| 0.2 + 0.05 * ((y + x + c) % 7) as f64);
    let spec = AttackSpec::new(AttackKind::Fgsm).with_epsilon(0.05);
    let out = run_attack(&m, "i", &img, &spec, &ConstantProvider(20.0)).unwrap();
    assert!((out.result.score_after - out.result.score_before - 0.05).abs() < 1e-12);
    assert!(out.result.flags.is_empty());
    let zero = fgsm(&m, &img, &AttackSpec::new(AttackKind::Fgsm).with_epsilon(0.0)).unwrap();
    assert_eq!(zero.image, img);
}

#[test]
fn zero_gradient_is_flagged_as_noop() {
    let m = build_metric(SATURATED_CLAMP, None).unwrap().with_range(0.0, 1.0).unwrap();
    let img = textured(2, 8, 8);
    for kind in [AttackKind::Fgsm, AttackKind::Ifgsm, AttackKind::Mifgsm, AttackKind::Korhonen] {
        let out = run_attack(&m, "i", &img, &AttackSpec::new(kind), &ConstantProvider(20.0)).unwrap();
        assert_eq!(out.image, img, "{kind}");
        assert_eq!(out.result.flags, vec![Flag::NoOp], "{kind}");
    }
}

#[test]
fn ifgsm_displacement_is_min_of_budget_and_total_step() {
    let m = mean_metric();
    let img = Image::filled(6, 6, 3, 0.4);
    for (t, expected) in [(10, 0.05), (3, 0.03), (5, 0.05)] {
        let spec = AttackSpec::new(AttackKind::Ifgsm).with_alpha(0.01).with_iterations(t).with_epsilon(0.05);
        let a = ifgsm(&m, &img, &spec).unwrap();
        for (v, v0) in a.image.data().iter().zip(img.data()) {
            assert!((v - v0 - expected).abs() < 1e-12, "T={t}: {}", v - v0);
        }
    }
}

#[test]
fn family_collapse_identities_are_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let metrics = [calibrated(TINY_CNN), calibrated("patch-weighted"), calibrated("naturalness-lite")];
    for trial in 0..6 {
        let m = &metrics[trial % 3];
        let img = random_image(&mut rng, 16, 16);
        let eps = rng.gen_range(0.001..0.1);
        let f = fgsm(m, &img, &AttackSpec::new(AttackKind::Fgsm).with_epsilon(eps)).unwrap();
        let one = AttackSpec::new(AttackKind::Ifgsm).with_iterations(1).with_alpha(eps).with_epsilon(eps);
        assert_eq!(ifgsm(m, &img, &one).unwrap().image, f.image);
        let spec = AttackSpec::new(AttackKind::Ifgsm).with_epsilon(eps).with_iterations(4);
        let i = ifgsm(m, &img, &spec).unwrap();
        let mi = mifgsm(m, &img, &spec.clone().with_momentum(0.0)).unwrap();
        assert_eq!(i.image, mi.image);
    }
}

#[test]
fn momentum_does_not_change_a_constant_gradient() {
    let m = mean_metric();
    let img = Image::filled(5, 5, 3, 0.3);
    let spec = AttackSpec::new(AttackKind::Mifgsm).with_momentum(0.9).with_alpha(0.01).with_epsilon(0.04);
    assert_eq!(mifgsm(&m, &img, &spec).unwrap().image, ifgsm(&m, &img, &spec).unwrap().image);
}

#[test]
fn epsilon_ball_and_range_containment() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = calibrated(TINY_CNN);
    for _ in 0..12 {
        let img = random_image(&mut rng, 16, 16);
        let eps = rng.gen_range(0.0..0.2);
        for kind in [AttackKind::Fgsm, AttackKind::Ifgsm, AttackKind::Mifgsm] {
            let spec = AttackSpec::new(kind).with_epsilon(eps).with_alpha(rng.gen_range(0.001..0.05)).with_iterations(5);
            let out = run_attack(&m, "i", &img, &spec, &ConstantProvider(20.0)).unwrap();
            assert!(out.result.linf <= eps + 1e-12);
            assert!(out.image.in_unit_range());
        }
    }
}

#[test]
fn amifgsm_uses_the_provider_budget() {
    let m = calibrated(TINY_CNN);
    let img = textured(6, 16, 16);
    let spec = AttackSpec::new(AttackKind::Amifgsm);
    let a = amifgsm(&m, &img, &spec, &ConstantProvider(20.0)).unwrap();
    assert_eq!(a.epsilon, Some(0.05));
    let b = mifgsm(&m, &img, &spec.clone().with_epsilon(0.05)).unwrap();
    assert_eq!(a.image, b.image);
    for bad in [0.0, -1.0, f64::NAN] {
        assert!(matches!(amifgsm(&m, &img, &spec, &ConstantProvider(bad)), Err(Error::Provider { .. })));
    }
    let q = NaturalnessProvider::new().quality(&img).unwrap();
    assert!(q >= 20.0);
    let c = amifgsm(&m, &img, &spec, &NaturalnessProvider::new()).unwrap();
    assert_eq!(c.epsilon, Some(1.0 / q));
    assert!(c.image.linf_distance(&img).unwrap() <= 1.0 / q + 1e-12);
}

#[test]
fn cumulative_uap_examples() {
    let m = calibrated(TINY_CNN);
    let img = textured(7, 16, 16);
    let spec = AttackSpec::new(AttackKind::UapCumulative);
    let p = train_uap(&m, std::slice::from_ref(&img), "one", &spec).unwrap();
    let (_, g) = loss_and_gradient(&m, &img).unwrap();
    for (v, d) in p.pattern.data().iter().zip(g.data()) {
        let s = if *d > 0.0 { -1.0 } else if *d < 0.0 { 1.0 } else { 0.0 };
        assert_eq!(*v, s);
    }

    let mean = mean_metric();
    let set: Vec<Image> = (0..3).map(|i| textured(i, 8, 8)).collect();
    let p = train_uap(&mean, &set, "s", &spec).unwrap();
    assert!(p.pattern.data().iter().all(|&v| v == 1.0));

    let bowl = bowl_metric();
    let pair = [Image::filled(4, 4, 3, 0.7), Image::filled(4, 4, 3, 0.3)];
    let p = train_uap(&bowl, &pair, "pair", &spec).unwrap();
    assert!(p.is_zero());
    assert_eq!(p.flags, vec![Flag::Degenerate]);
    assert!(matches!(train_uap(&bowl, &[], "empty", &spec), Err(Error::Empty(_))));
}

#[test]
fn optimized_uap_reaches_the_linear_optimum() {
    let m = mean_metric();
    let set: Vec<Image> = (0..4).map(|i| Image::filled(6, 6, 3, 0.1 + 0.05 * i as f64)).collect();
    let spec = AttackSpec::new(AttackKind::UapOptimized)
        .with_amplitude(0.2)
        .with_extra("lr", 0.05)
        .with_extra("epochs", 40)
        .with_extra("batch_size", 4);
    let p = train_uap(&m, &set, "flat", &spec).unwrap();
    assert!(p.pattern.data().iter().all(|&v| v == 1.0));
    assert_eq!(p.loss_history.len(), 40);
    assert!(p.loss_history.last().unwrap() < p.loss_history.first().unwrap());

    let none = train_uap(&m, &set, "flat", &spec.clone().with_extra("epochs", 0)).unwrap();
    assert!(none.is_zero());
}

#[test]
fn optimized_uap_dominates_cumulative_on_its_training_set() {
    let m = calibrated(TINY_CNN);
    let train: Vec<Image> = (0..8).map(|i| textured(900 + i, 16, 16)).collect();
    for amp in [0.2, 0.4] {
        let mean_after = |kind| {
            let spec = AttackSpec::new(kind).with_amplitude(amp);
            let p = train_uap(&m, &train, "t", &spec).unwrap();
            train.iter().map(|im| m.score(&apply_uap(&p, im, amp).unwrap()).unwrap()).sum::<f64>()
        };
        assert!(mean_after(AttackKind::UapOptimized) >= mean_after(AttackKind::UapCumulative));
    }
}

#[test]
fn generative_uap_examples() {
    let m = mean_metric();
    let set: Vec<Image> = (0..4).map(|i| Image::filled(8, 8, 3, 0.2 + 0.05 * i as f64)).collect();
    let untrained = AttackSpec::new(AttackKind::UapGenerative).with_extra("epochs", 0).with_extra("width", 4);
    let p = train_uap(&m, &set, "s", &untrained).unwrap();
    assert!(p.is_zero());
    assert_eq!(apply_uap(&p, &set[0], 0.8).unwrap(), set[0]);

    let spec = AttackSpec::new(AttackKind::UapGenerative).with_extra("epochs", 5).with_extra("width", 4).with_seed(3);
    let p = train_uap(&m, &set, "s", &spec).unwrap();
    let mean = p.pattern.data().iter().sum::<f64>() / p.pattern.len() as f64;
    assert!(mean > 0.0, "mean pattern {mean}");
    assert_eq!(train_uap(&m, &set, "s", &spec).unwrap(), p);

    let odd: Vec<Image> = vec![Image::filled(6, 6, 3, 0.5)];
    assert!(train_uap(&m, &odd, "odd", &spec).is_err());
}

#[test]
fn apply_uap_examples() {
    let p = Perturbation {
        pattern: Tensor::full(&[3, 4, 4], 1.0),
        ..Default::default()
    };
    let gray = Image::filled(6, 5, 3, 0.5);
    assert_eq!(apply_uap(&p, &gray, 0.0).unwrap(), gray);
    let up = apply_uap(&p, &gray, 0.2).unwrap();
    assert!(up.data().iter().all(|&v| v == 0.7));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Perturbation {
        pattern: Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(-1.0..=1.0)),
        ..Default::default()
    };
    let imgs: Vec<Image> = (0..6).map(|i| textured(40 + i, 12, 12)).collect();
    let mses: Vec<f64> = [0.2, 0.4, 0.8]
        .iter()
        .map(|&a| imgs.iter().map(|im| mse(im, &apply_uap(&p, im, a).unwrap()).unwrap()).sum::<f64>())
        .collect();
    assert!(mses[0] < mses[1] && mses[1] < mses[2], "{mses:?}");
}

#[test]
fn korhonen_examples() {
    let m = calibrated(TINY_CNN);
    let flat = Image::filled(16, 16, 3, 0.4);
    assert!(activity_map(&flat).unwrap().iter().all(|&v| v == 0.0));
    let a = korhonen(&m, &flat, &AttackSpec::new(AttackKind::Korhonen)).unwrap();
    assert_eq!(a.image, flat);
    assert_eq!(a.flags, vec![Flag::NoOp]);

    // Vertical step edge between columns 7 and 8.
    let edge = Image::from_fn(16, 16, 3, |_, x, _| if x < 8 { 0.3 } else { 0.7 });
    let s = activity_map(&edge).unwrap();
    assert_eq!(s.iter().fold(0.0f64, |a, &b| a.max(b)), 1.0);
    let out = korhonen(&m, &edge, &AttackSpec::new(AttackKind::Korhonen)).unwrap();
    let (mut near, mut total) = (0.0, 0.0);
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                let d = (out.image.get(y, x, c) - edge.get(y, x, c)).powi(2);
                total += d;
                if (7..=8).contains(&x) {
                    near += d;
                }
            }
        }
    }
    assert!(total > 0.0);
    assert!(near / total >= 0.9, "{}", near / total);

    for i in 0..6 {
        let img = textured(60 + i, 16, 16);
        let out = run_attack(&m, "i", &img, &AttackSpec::new(AttackKind::Korhonen), &ConstantProvider(20.0)).unwrap();
        assert!(out.result.score_after >= out.result.score_before);
    }
}

#[test]
fn madc_lands_on_the_mse_budget() {
    let m = calibrated(TINY_CNN);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for units in ["unit", "eight-bit"] {
        let budget = if units == "unit" { 1e-3 } else { 40.0 };
        let spec = AttackSpec::new(AttackKind::Madc)
            .with_extra("units", units)
            .with_extra("mse_budget", budget)
            .with_iterations(4);
        for _ in 0..4 {
            let img = random_image(&mut rng, 16, 16);
            let out = run_attack(&m, "i", &img, &spec, &ConstantProvider(20.0)).unwrap();
            let scale = if units == "unit" { 1.0 } else { 255.0 * 255.0 };
            let achieved: f64 = img
                .data()
                .iter()
                .zip(out.image.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / img.len() as f64
                * scale;
            assert!((achieved - budget).abs() <= 0.04, "{units}: {achieved}");
            assert!(!out.result.flags.contains(&Flag::NonConverged));
            assert!(out.image.in_unit_range());
        }
    }
    let unreachable = AttackSpec::new(AttackKind::Madc).with_extra("mse_budget", 0.9).with_iterations(2);
    let out = run_attack(&m, "i", &Image::filled(16, 16, 3, 0.5), &unreachable, &ConstantProvider(20.0)).unwrap();
    assert!(out.result.flags.contains(&Flag::NonConverged));
}

#[test]
fn madc_skips_a_step_when_the_gradient_is_radial() {
    // For the bowl metric the score gradient is parallel to I - I0 when I0 is
    // mid-gray, so after the first step the projection vanishes.
    let bowl = bowl_metric();
    let img = Image::filled(8, 8, 3, 0.5);
    let spec = AttackSpec::new(AttackKind::Madc).with_iterations(3);
    let a = madc(&bowl, &img, &spec).unwrap();
    assert!(a.flags.contains(&Flag::ParallelSkip));
}

#[test]
fn uap_kinds_must_be_trained_first() {
    let m = mean_metric();
    let img = Image::filled(4, 4, 3, 0.5);
    let spec = AttackSpec::new(AttackKind::UapOptimized);
    assert!(matches!(run_attack(&m, "i", &img, &spec, &ConstantProvider(20.0)), Err(Error::InvalidSpec(_))));
}

#[test]
fn attacks_are_deterministic() {
    let m = calibrated(TINY_CNN);
    let img = textured(70, 16, 16);
    for kind in [AttackKind::Mifgsm, AttackKind::Korhonen, AttackKind::Madc] {
        let spec = AttackSpec::new(kind);
        let a = run_attack(&m, "i", &img, &spec, &ConstantProvider(20.0)).unwrap();
        let b = run_attack(&m, "i", &img, &spec, &ConstantProvider(20.0)).unwrap();
        assert_eq!(a.result, b.result);
    }
}
