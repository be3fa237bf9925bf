//! Reverse-mode gradients against central finite differences.
//!
//! Points where a perturbation of ±h flips a discrete branch (ReLU mask,
//! max-pool winner, clamp region) are not valid finite-difference points and
//! are skipped; the skip rate is bounded so the check cannot pass vacuously.

use gradcore::{ConvSpec, EvalContext, Graph, NodeId, PadMode, SobelAxis, Tensor, Wrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn eval(g: &Graph, x: &Tensor) -> (f64, u64) {
    let mut ctx = EvalContext::new(g);
    let v = ctx.forward(&[("x", x)]).unwrap().item().unwrap();
    (v, ctx.branch_signature().unwrap())
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * scale).max(1e-9)
}

/// Returns (max relative error, checked coordinates, skipped coordinates).
fn fd_check(g: &Graph, x: &Tensor) -> (f64, usize, usize) {
    let mut ctx = EvalContext::new(g);
    ctx.forward(&[("x", x)]).unwrap();
    let sig0 = ctx.branch_signature().unwrap();
    let grad = ctx.backward("x").unwrap();
    let scale = grad.max_abs();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let (fp, sp) = eval(g, &xp);
        let (fm, sm) = eval(g, &xm);
        if sp != sig0 || sm != sig0 {
            skipped += 1;
            continue;
        }
        checked += 1;
        worst = worst.max(rel_err(grad.data()[i], (fp - fm) / (2.0 * H), scale));
    }
    (worst, checked, skipped)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn param(g: &mut Graph, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> NodeId {
    let t = rand_tensor(rng, shape, -0.8, 0.8);
    g.param(name, "test", "uniform", t)
}

/// A random scalar graph built around one op under test.
fn op_graph(rng: &mut ChaCha8Rng, which: usize) -> (Graph, Vec<usize>, &'static str) {
    let mut g = Graph::new();
    let x = g.input("x");
    let (out, shape, name) = build_op(&mut g, x, rng, which);
    g.set_output(out);
    (g, shape, name)
}

fn build_op(g: &mut Graph, x: NodeId, rng: &mut ChaCha8Rng, which: usize) -> (NodeId, Vec<usize>, &'static str) {
    let c = rng.gen_range(1..=3);
    let hw = rng.gen_range(4..=7);
    let shape = vec![c, hw, hw];
    let name;
    let y = match which % 22 {
        0 => {
            name = "conv2d-reflect";
            let w = param(g, rng, "w", &[2, c, 3, 3]);
            let b = param(g, rng, "b", &[2]);
            g.conv2d(x, w, Some(b), ConvSpec::same(3))
        }
        1 => {
            name = "conv2d-zero-stride2";
            let w = param(g, rng, "w", &[3, c, 3, 3]);
            g.conv2d(x, w, None, ConvSpec::same(3).with_stride(2).with_pad_mode(PadMode::Zero))
        }
        2 => {
            name = "conv2d-depthwise";
            let w = param(g, rng, "w", &[c, 1, 3, 3]);
            g.conv2d(x, w, None, ConvSpec::same(3).depthwise(c))
        }
        3 => {
            name = "max_pool2d";
            g.max_pool2d(x, 2, 2)
        }
        4 => {
            name = "avg_pool2d";
            g.avg_pool2d(x, 3, 1)
        }
        5 => {
            name = "global_avg_pool";
            g.global_avg_pool(x)
        }
        6 => {
            name = "relu";
            g.relu(x)
        }
        7 => {
            name = "sigmoid";
            g.sigmoid(x)
        }
        8 => {
            name = "affine";
            let n = c * hw * hw;
            let w = param(g, rng, "w", &[3, n]);
            let b = param(g, rng, "b", &[3]);
            g.affine(x, w, b)
        }
        9 => {
            name = "add";
            let k = param(g, rng, "k", &shape);
            g.add(x, k)
        }
        10 => {
            name = "sub";
            let k = param(g, rng, "k", &shape);
            g.sub(k, x)
        }
        11 => {
            name = "mul";
            let sq = g.sigmoid(x);
            g.mul(x, sq)
        }
        12 => {
            name = "div";
            let s = g.sigmoid(x);
            let d = g.shift(s, 0.5);
            g.div(x, d)
        }
        13 => {
            name = "scale-shift";
            let s = g.scale(x, -1.7);
            g.shift(s, 0.3)
        }
        14 => {
            name = "sobel-h";
            g.sobel(x, SobelAxis::Horizontal)
        }
        15 => {
            name = "sobel-v";
            g.sobel(x, SobelAxis::Vertical)
        }
        16 => {
            name = "square";
            g.square(x)
        }
        17 => {
            name = "sqrt";
            let s = g.square(x);
            let s = g.shift(s, 0.1);
            g.sqrt(s)
        }
        18 => {
            name = "clamp";
            g.clamp(x, -0.3, 0.4)
        }
        19 => {
            name = "concat-upsample";
            let s = g.sigmoid(x);
            let cat = g.concat(x, s);
            g.upsample(cat, 2)
        }
        20 => {
            name = "center-crop";
            g.center_crop(x, hw - 2, hw - 1)
        }
        _ => {
            name = "resize";
            let (ho, wo) = (rng.gen_range(2..=9), rng.gen_range(2..=9));
            g.resize(x, ho, wo)
        }
    };
    // Weighted sum makes every output element matter with a distinct weight.
    let sq = g.square(y);
    let s = g.sum(sq);
    let m = g.mean(y);
    let out = g.add(s, m);
    (out, shape, name)
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut total_checked, mut total_skipped) = (0, 0);
    for trial in 0..132 {
        let (g, shape, name) = op_graph(&mut rng, trial);
        let x = rand_tensor(&mut rng, &shape, -1.0, 1.0);
        let (err, checked, skipped) = fd_check(&g, &x);
        assert!(err < TOL, "{name}: relative error {err:e}");
        total_checked += checked;
        total_skipped += skipped;
    }
    assert!(
        total_skipped * 50 < total_checked,
        "too many kink crossings: {total_skipped} of {}",
        total_checked + total_skipped
    );
}

#[test]
fn param_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::new();
    let x = g.input("x");
    let w = param(&mut g, &mut rng, "w", &[2, 2, 3, 3]);
    let b = param(&mut g, &mut rng, "b", &[2]);
    let y = g.conv2d(x, w, Some(b), ConvSpec::same(3).with_stride(2));
    let y = g.sigmoid(y);
    let s = g.mean(y);
    g.set_output(s);
    let xin = rand_tensor(&mut rng, &[2, 6, 5], -1.0, 1.0);

    let mut ctx = EvalContext::new(&g);
    ctx.forward(&[("x", &xin)]).unwrap();
    let grads = ctx
        .vjp(&Tensor::scalar(1.0), &[Wrt::Param("w"), Wrt::Param("b")])
        .unwrap();
    for (name, grad) in ["w", "b"].iter().zip(&grads) {
        let base = g.find_param(name).unwrap().value.clone();
        for i in 0..base.len() {
            let eval_at = |delta: f64| {
                let mut gg = g.clone();
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                gg.set_param(name, t).unwrap();
                eval(&gg, &xin).0
            };
            let fd = (eval_at(H) - eval_at(-H)) / (2.0 * H);
            assert!(rel_err(grad.data()[i], fd, grad.max_abs()) < TOL, "{name}[{i}]");
        }
    }
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    fn sobel_energy(g: &mut Graph, x: NodeId) -> NodeId {
        let s = g.sobel(x, SobelAxis::Vertical);
        let q = g.square(s);
        g.mean(q)
    }
    for trial in 0..22 {
        let seed = 100 + trial as u64;
        let mut ga = Graph::new();
        let xa = ga.input("x");
        let (oa, shape, name) = build_op(&mut ga, xa, &mut ChaCha8Rng::seed_from_u64(seed), trial);
        ga.set_output(oa);

        let mut gb = Graph::new();
        let xb = gb.input("x");
        let ob = sobel_energy(&mut gb, xb);
        gb.set_output(ob);

        // Same random parameters for A's part, since the rng is reseeded.
        let mut gc = Graph::new();
        let xc = gc.input("x");
        let (oa, _, _) = build_op(&mut gc, xc, &mut ChaCha8Rng::seed_from_u64(seed), trial);
        let ob = sobel_energy(&mut gc, xc);
        let total = gc.add(oa, ob);
        gc.set_output(total);

        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed + 1000), &shape, -1.0, 1.0);
        let ga_grad = gradcore::value_and_grad(&ga, &[("x", &x)], "x").unwrap().1;
        let gb_grad = gradcore::value_and_grad(&gb, &[("x", &x)], "x").unwrap().1;
        let gc_grad = gradcore::value_and_grad(&gc, &[("x", &x)], "x").unwrap().1;
        for i in 0..x.len() {
            let expect = ga_grad.data()[i] + gb_grad.data()[i];
            assert!(
                (gc_grad.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()),
                "{name}"
            );
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic_across_threads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (g, shape, _) = op_graph(&mut rng, 0);
    let x = rand_tensor(&mut rng, &shape, -1.0, 1.0);
    let reference = gradcore::value_and_grad(&g, &[("x", &x)], "x").unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (g, x) = (g.clone(), x.clone());
            std::thread::spawn(move || gradcore::value_and_grad(&g, &[("x", &x)], "x").unwrap())
        })
        .collect();
    for h in handles {
        let (v, grad) = h.join().unwrap();
        assert_eq!(v.to_bits(), reference.0.to_bits());
        assert_eq!(grad, reference.1);
    }
}

#[test]
fn closed_form_examples() {
    // mean of zeros
    let mut g = Graph::new();
    let x = g.input("x");
    let m = g.mean(x);
    g.set_output(m);
    let z = Tensor::zeros(&[2, 2]);
    let (v, grad) = gradcore::value_and_grad(&g, &[("x", &z)], "x").unwrap();
    assert_eq!(v, 0.0);
    assert!(grad.data().iter().all(|&d| d == 0.25));

    // sum of squares
    let mut g = Graph::new();
    let x = g.input("x");
    let q = g.square(x);
    let s = g.sum(q);
    g.set_output(s);
    let t = Tensor::new(vec![4], vec![0.5, -1.5, 2.0, 0.0]).unwrap();
    let (_, grad) = gradcore::value_and_grad(&g, &[("x", &t)], "x").unwrap();
    assert_eq!(grad.data(), &[1.0, -3.0, 4.0, 0.0]);
}

#[test]
fn error_paths() {
    let mut g = Graph::new();
    let x = g.input("x");
    let r = g.relu(x);
    g.set_output(r);
    let ctx = EvalContext::new(&g);
    assert!(matches!(ctx.backward("x"), Err(gradcore::GradError::NoForward)));

    let mut ctx = EvalContext::new(&g);
    let t = Tensor::zeros(&[3]);
    ctx.forward(&[("x", &t)]).unwrap();
    assert!(matches!(ctx.backward("x"), Err(gradcore::GradError::NonScalarOutput(_))));

    let mut ctx = EvalContext::new(&g);
    assert!(matches!(ctx.forward(&[]), Err(gradcore::GradError::UnboundInput(_))));

    let mut g = Graph::new();
    let a = g.input("a");
    let b = g.input("b");
    let d = g.div(a, b);
    g.set_output(d);
    let mut ctx = EvalContext::new(&g);
    let one = Tensor::scalar(1.0);
    let zero = Tensor::scalar(0.0);
    assert!(matches!(
        ctx.forward(&[("a", &one), ("b", &zero)]),
        Err(gradcore::GradError::NonFinite { .. })
    ));
    let two = Tensor::zeros(&[2]);
    assert!(matches!(
        ctx.forward(&[("a", &one), ("b", &two)]),
        Err(gradcore::GradError::Shape { .. })
    ));
}

#[test]
fn clamp_gradient_is_zero_at_and_beyond_bounds() {
    let mut g = Graph::new();
    let x = g.input("x");
    let c = g.clamp(x, 0.0, 1.0);
    let s = g.sum(c);
    g.set_output(s);
    let t = Tensor::new(vec![5], vec![-0.5, 0.0, 0.5, 1.0, 1.5]).unwrap();
    let (_, grad) = gradcore::value_and_grad(&g, &[("x", &t)], "x").unwrap();
    assert_eq!(grad.data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
}
