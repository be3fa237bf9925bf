use gradcore::{Graph, SobelAxis, Tensor};
use robench::metrics::{InputPolicy, MetricModel, IMAGE_INPUT};
use robench::synth::textured;

/// Mean Sobel gradient magnitude times a learned gain.
fn edge_energy(policy: InputPolicy) -> MetricModel {
    let mut g = Graph::new();
    let x = g.input(IMAGE_INPUT);
    let h = policy.apply(&mut g, x);
    let gx = g.sobel(h, SobelAxis::Horizontal);
    let gy = g.sobel(h, SobelAxis::Vertical);
    let (gx2, gy2) = (g.square(gx), g.square(gy));
    let sum = g.add(gx2, gy2);
    let mag = g.sqrt(sum);
    let e = g.mean(mag);
    let gain = g.param("head.gain", "scale", "fixed", Tensor::from_fn(&[1], |_| 1.0));
    let out = g.mul(e, gain);
    g.set_output(out);
    MetricModel::new("edge-energy", g, 3, policy)
}

#[test]
fn authored_metric_scores_differentiates_and_round_trips_weights() {
    let mut m = edge_energy(InputPolicy::CenterCrop { size: 12 });
    let img = textured(7, 16, 16);
    let (s, grad) = m.score_and_gradient(&img).unwrap();
    assert!(s > 0.0 && grad.same_shape(&img));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edge.json");
    let mut doubled = edge_energy(InputPolicy::CenterCrop { size: 12 });
    let mut g = doubled.graph().clone();
    g.set_param("head.gain", Tensor::from_fn(&[1], |_| 2.0)).unwrap();
    doubled = MetricModel::new("edge-energy", g, 3, InputPolicy::CenterCrop { size: 12 });
    doubled.save_weights(&path).unwrap();
    m.load_weights(&path).unwrap();
    assert!((m.score(&img).unwrap() - 2.0 * s).abs() < 1e-12);

    let calib: Vec<_> = (0..4).map(|i| textured(100 + i, 16, 16)).collect();
    let (lo, hi) = m.calibrate_range(&calib).unwrap();
    assert!(lo < hi);
}

#[test]
fn authored_metric_gradient_matches_central_differences() {
    let m = edge_energy(InputPolicy::FullFrame);
    let img = textured(9, 10, 10);
    let (_, grad) = m.score_and_gradient(&img).unwrap();
    let sig = m.branch_signature(&img).unwrap();
    let h = 1e-5;
    for i in (0..img.len()).step_by(7) {
        let (mut p, mut q) = (img.clone(), img.clone());
        p.data_mut()[i] += h;
        q.data_mut()[i] -= h;
        if m.branch_signature(&p).unwrap() != sig || m.branch_signature(&q).unwrap() != sig {
            continue;
        }
        let fd = (m.score(&p).unwrap() - m.score(&q).unwrap()) / (2.0 * h);
        assert!((fd - grad.data()[i]).abs() <= 1e-3 * fd.abs().max(1e-6), "coordinate {i}: {fd} vs {}", grad.data()[i]);
    }
}
