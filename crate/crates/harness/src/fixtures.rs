//! Bundled fixture datasets, written as 8-bit PNGs from procedural textures.

use std::path::Path;

use robench::synth::textured;

use crate::dataset::save_png;
use crate::error::{PathContext, Result};

pub const FIXTURE_SIZE: usize = 32;

/// `(directory, first seed, count)` of every bundled image set. Seed ranges
/// are disjoint, so no image repeats across sets.
pub const IMAGE_SETS: [(&str, u64, usize); 5] = [
    ("calib", 10_000, 32),
    ("test", 20_000, 32),
    ("train-a", 30_000, 8),
    ("train-b", 31_000, 8),
    ("train-c", 32_000, 8),
];

/// `(clip, first seed, frames)` of the bundled frame-sequence set.
pub const CLIPS: [(&str, u64, usize); 2] = [("clip-0", 40_000, 4), ("clip-1", 41_000, 3)];

/// Writes `count` textured images named `img-NN.png` into `dir`.
pub fn write_image_set(dir: &Path, first_seed: u64, count: usize, size: usize) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for i in 0..count {
        let img = textured(first_seed + i as u64, size, size);
        save_png(&img, &dir.join(format!("img-{i:02}.png")))?;
    }
    Ok(())
}

/// Writes a clip as frames `0000.png`, `0001.png`, ...
pub fn write_clip(dir: &Path, first_seed: u64, frames: usize, size: usize) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for i in 0..frames {
        let img = textured(first_seed + i as u64, size, size);
        save_png(&img, &dir.join(format!("{i:04}.png")))?;
    }
    Ok(())
}

/// Regenerates the whole bundled data tree under `root`.
pub fn write_fixture_data(root: &Path) -> Result<()> {
    for (name, seed, count) in IMAGE_SETS {
        write_image_set(&root.join(name), seed, count, FIXTURE_SIZE)?;
    }
    for (name, seed, frames) in CLIPS {
        write_clip(&root.join("clips").join(name), seed, frames, FIXTURE_SIZE)?;
    }
    Ok(())
}
