use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robench::eval::*;
use robench::Error;

fn series(before: &[f64], after: &[f64]) -> ScoreSeries {
    ScoreSeries::new("m", "d", "a", before.to_vec(), after.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn gains_worked_example() {
    let g = gains(&series(&[0.2, 0.4], &[0.5, 0.7]));
    assert!(close(g.abs, 0.3, 1e-15));
    assert!(close(g.rel, (0.3 / 1.2 + 0.3 / 1.4) / 2.0, 1e-15));
    assert!(close(g.rel, 0.232_142_857_142_857_1, 1e-12));
}

#[test]
fn r_score_worked_example() {
    let r = r_score(&series(&[0.5], &[0.6]));
    assert!(close(r.value.unwrap(), 5f64.log10(), 1e-12));
    assert_eq!(r.used, 1);
    // Numerator is max(1 - after, before); a decrease uses the same formula.
    let r = r_score(&series(&[0.8], &[0.6]));
    assert!(close(r.value.unwrap(), (0.8f64 / 0.2).log10(), 1e-12));
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn wasserstein_matches_the_best_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=8 {
        let perms = permutations(n);
        for _ in 0..5 {
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let best = perms
                .iter()
                .map(|s| s.iter().enumerate().map(|(i, &j)| (p[i] - q[j]).abs()).sum::<f64>() / n as f64)
                .fold(f64::INFINITY, f64::min);
            assert!(close(wasserstein1(&p, &q), best, 1e-12), "n={n}");
        }
    }
}

#[test]
fn point_mass_distances() {
    for (a, b) in [(0.0, 1.0), (0.3, 0.7), (-2.0, 0.5)] {
        assert!(close(wasserstein1(&[a], &[b]), (a - b).abs(), 1e-15));
        assert!(close(energy_distance(&[a], &[b]), (2.0 * (a - b).abs()).sqrt(), 1e-12));
    }
    assert_eq!(energy_distance(&[0.4, 0.1], &[0.1, 0.4]), 0.0);
}

#[test]
fn signed_scores_follow_the_mean_shift() {
    let before = [0.1, 0.5, 0.3, 0.9];
    let down: Vec<f64> = before.iter().map(|v| v - 0.2).collect();
    let up: Vec<f64> = before.iter().map(|v| v + 0.2).collect();
    assert!(close(w_score(&series(&before, &down)), -0.2, 1e-12));
    assert!(close(w_score(&series(&before, &up)), 0.2, 1e-12));
    assert!(e_score(&series(&before, &down)) < 0.0);
    assert!(e_score(&series(&before, &up)) > 0.0);
}

/// `P(W+ <= w)` by walking all sign assignments of the mid-ranks.
fn enumerate_lower_tail(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let less = d.iter().filter(|u| u.abs() < v.abs()).count() as f64;
            let equal = d.iter().filter(|u| u.abs() == v.abs()).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            hits += 1;
        }
    }
    (w, hits as f64 / (1u64 << n) as f64)
}

#[test]
fn wilcoxon_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=10 {
        for _ in 0..8 {
            // Coarse values force ties and zero differences.
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 4.0).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 4.0).collect();
            let Ok(res) = wilcoxon_one_sided(&a, &b) else {
                assert!(a == b);
                continue;
            };
            let (w, p) = enumerate_lower_tail(&a, &b);
            assert!(res.exact);
            assert_eq!(res.statistic, w);
            assert!(close(res.p_value, p, 1e-12), "n={n}: {} vs {p}", res.p_value);
        }
    }
}

#[test]
fn wilcoxon_direction_and_antisymmetry() {
    let a = [0.1, 0.2, 0.15, 0.05, 0.3, 0.12];
    let b = [0.4, 0.5, 0.45, 0.35, 0.6, 0.42];
    let ab = wilcoxon_one_sided(&a, &b).unwrap();
    let ba = wilcoxon_one_sided(&b, &a).unwrap();
    assert!(close(ab.p_value, 1.0 / 64.0, 1e-15));
    assert_eq!(ba.p_value, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (p, q) = (wilcoxon_one_sided(&x, &y).unwrap(), wilcoxon_one_sided(&y, &x).unwrap());
        // Without ties the two tails overlap in exactly the observed atom.
        let (_, at_most) = enumerate_lower_tail(&x, &y);
        assert!(close(p.p_value, at_most, 1e-12));
        assert!(p.p_value + q.p_value >= 1.0 - 1e-12);
    }
    assert!(matches!(wilcoxon_one_sided(&[0.2, 0.3], &[0.2, 0.3]), Err(Error::Undefined(_))));
}

#[test]
fn wilcoxon_normal_branch_tracks_the_exact_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let a: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let res = wilcoxon_one_sided(&a, &b).unwrap();
        assert!(!res.exact);
        let (_, p) = enumerate_lower_tail(&a, &b);
        assert!(close(res.p_value, p, 0.02), "{} vs {p}", res.p_value);
    }
}

proptest! {
    #[test]
    fn scaling_is_affine_invariant(
        raw in prop::collection::vec(-5.0f64..5.0, 3..12),
        shift in prop::collection::vec(-0.5f64..0.5, 3..12),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let n = raw.len().min(shift.len());
        let before = raw[..n].to_vec();
        prop_assume!(before.iter().any(|v| *v != before[0]));
        let after: Vec<f64> = before.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let t = |v: &[f64]| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
        let (s1, _) = minmax_scale(&series(&before, &after)).unwrap();
        let (s2, _) = minmax_scale(&series(&t(&before), &t(&after))).unwrap();
        prop_assert_eq!(&s1.before, &s2.before);
        prop_assert_eq!(&s1.after, &s2.after);
        prop_assert_eq!(gains(&s1), gains(&s2));
        prop_assert_eq!(w_score(&s1), w_score(&s2));
    }

    #[test]
    fn transport_is_monotone_and_hits_target_quantiles(
        src in prop::collection::vec(-3.0f64..3.0, 2..30),
        tgt in prop::collection::vec(0.0f64..1.0, 2..30),
        probes in prop::collection::vec(-4.0f64..4.0, 2..20),
    ) {
        let map = fit_transport(&src, &tgt, 101).unwrap();
        let mut p = probes.clone();
        p.sort_by(f64::total_cmp);
        let out = apply_transport(&map, &p);
        for w in out.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
        let lo = tgt.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = tgt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in out {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        let smin = src.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if smin < smax {
            prop_assert!(close(map.apply(smin), lo, 1e-12));
            prop_assert!(close(map.apply(smax), hi, 1e-12));
        }
    }
}

#[test]
fn transport_onto_itself_is_the_identity() {
    let s = [0.1, 0.4, 0.35, 0.9, 0.6];
    let map = fit_transport(&s, &s, 5).unwrap();
    for v in [0.1, 0.2, 0.35, 0.5, 0.9] {
        assert!(close(map.apply(v), v, 1e-12));
    }
    assert!(fit_transport(&[], &s, 5).is_err());
    assert!(fit_transport(&s, &s, 1).is_err());
}

fn cell(id: &str, before: &[f64], after: &[f64]) -> CellData {
    CellData {
        id: id.into(),
        metric: "m".into(),
        attack: "a".into(),
        dataset: "d".into(),
        variant: String::new(),
        series: series(before, after),
        ssim: vec![0.9; before.len()],
        psnr: vec![f64::INFINITY; before.len()],
        mse: vec![0.001; before.len()],
    }
}

#[test]
fn aggregation_examples() {
    let c = cell("c1", &[0.1, 0.4, 0.7, 0.9], &[0.3, 0.5, 0.95, 0.85]);
    let row = summarize(&[&c], "cell", ["m", "a", "d", ""], 500).unwrap();
    let g = gains(&c.series);
    assert_eq!(row.abs_gain.value, g.abs);
    assert_eq!(row.rel_gain.value, g.rel);
    assert_eq!(row.abs_gain_cell_mean, g.abs);
    assert_eq!(row.w_score, w_score(&c.series));
    assert_eq!(row.e_score, e_score(&c.series));
    assert_eq!(row.r_score.unwrap().value, r_score(&c.series).value.unwrap());
    assert_eq!(row.mean_psnr, None);
    assert!(row.abs_gain.lo <= row.abs_gain.value && row.abs_gain.value <= row.abs_gain.hi);

    let twin = cell("c2", &[0.1, 0.4, 0.7, 0.9], &[0.3, 0.5, 0.95, 0.85]);
    let pooled = summarize(&[&twin, &c], "pool", ["m", "a", "d", ""], 500).unwrap();
    assert!(close(pooled.e_score, row.e_score, 1e-12));
    assert!(close(pooled.w_score, row.w_score, 1e-12));
    assert!(close(pooled.abs_gain.value, row.abs_gain.value, 1e-15));
    assert_eq!(pooled.n, 8);
    assert_eq!(pooled.constituents, vec!["c1".to_string(), "c2".to_string()]);
    // Order of constituents does not change the seeded interval.
    assert_eq!(summarize(&[&c, &twin], "pool", ["m", "a", "d", ""], 500).unwrap(), pooled);

    let skewed = cell("c3", &[0.0], &[1.0]);
    let mix = summarize(&[&c, &skewed], "pool", ["m", "a", "d", ""], 0).unwrap();
    assert!(close(mix.abs_gain.value, (g.abs * 4.0 + 1.0) / 5.0, 1e-15));
    assert!(close(mix.abs_gain_cell_mean, (g.abs + 1.0) / 2.0, 1e-15));
}

#[test]
fn strata_weigh_groups_equally() {
    let c = cell("c1", &[0.1, 0.4, 0.7, 0.9], &[0.3, 0.5, 0.95, 0.85]);
    let skewed = cell("c3", &[0.0], &[1.0]);
    let one = summarize_strata(&[vec![&c, &skewed]], "pool", ["m", "", "", ""], 300).unwrap();
    assert_eq!(one, summarize(&[&c, &skewed], "pool", ["m", "", "", ""], 300).unwrap());

    let two = summarize_strata(&[vec![&c], vec![&skewed]], "metric", ["m", "", "", ""], 300).unwrap();
    let g = gains(&c.series);
    assert!(close(two.abs_gain.value, (g.abs + 1.0) / 2.0, 1e-15));
    assert!(close(two.rel_gain.value, (g.rel + 1.0) / 2.0, 1e-15));
    assert!(close(two.w_score, (w_score(&c.series) + w_score(&skewed.series)) / 2.0, 1e-15));
    assert!(close(two.e_score, (e_score(&c.series) + e_score(&skewed.series)) / 2.0, 1e-15));
    // (0 -> 1) has no room left to move, so only the first group has an R-score.
    assert_eq!(two.r_score.unwrap().value, r_score(&c.series).value.unwrap());
    assert_eq!(two.n, 5);
    assert!(summarize_strata(&[vec![&c], vec![]], "metric", ["m", "", "", ""], 10).is_err());
}

#[test]
fn constant_before_scores_cannot_be_scaled() {
    assert!(matches!(minmax_scale(&series(&[0.3, 0.3], &[0.1, 0.9])), Err(Error::Undefined(_))));
}
