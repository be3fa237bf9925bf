//! Deterministic procedural test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// A smooth colour gradient plus a few oriented sinusoids, a disc and mild
/// noise, all drawn from `seed`. Values stay inside `[0.02, 0.98]`.
pub fn textured(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let tilt: [f64; 2] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    let waves: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let freq = rng.gen_range(0.15..1.2);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.03..0.15);
            let tint = [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)];
            (theta, freq, phase, amp, tint)
        })
        .collect();
    let (cy, cx) = (rng.gen_range(0.2..0.8) * height as f64, rng.gen_range(0.2..0.8) * width as f64);
    let radius = rng.gen_range(0.1..0.3) * height.min(width) as f64;
    let disc: [f64; 3] = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
    let noise = rng.gen_range(0.0..0.04);
    let jitter: Vec<f64> = (0..height * width * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Image::from_fn(height, width, 3, |y, x, c| {
        let (fy, fx) = (y as f64 / height as f64 - 0.5, x as f64 / width as f64 - 0.5);
        let mut v = base[c] + tilt[0] * fy + tilt[1] * fx;
        for (theta, freq, phase, amp, tint) in &waves {
            let t = (x as f64) * theta.cos() + (y as f64) * theta.sin();
            v += amp * tint[c] * (freq * t + phase).sin();
        }
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        if dy * dy + dx * dx < radius * radius {
            v += disc[c];
        }
        v += noise * jitter[(c * height + y) * width + x];
        v.clamp(0.02, 0.98)
    })
}

/// The fixed image that golden values are recorded on.
pub fn reference_image() -> Image {
    textured(0, 32, 32)
}
