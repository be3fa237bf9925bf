//! Dataset ingestion: 8-bit PNG/PPM image sets and numbered frame directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use robench::Image;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetKind, Role};
use crate::error::{HarnessError, Result};

const EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// A still image or a clip. Clips are attacked frame by frame and their
/// scores averaged.
#[derive(Debug, Clone)]
pub struct Item {
    /// SHA-256 of the decoded values (for clips, of the frame digests).
    pub id: String,
    pub name: String,
    pub frames: Vec<Image>,
    pub frame_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ImageSet {
    pub id: String,
    pub kind: DatasetKind,
    pub role: Role,
    pub items: Vec<Item>,
    /// SHA-256 over the item ids in order.
    pub digest: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub id: String,
    pub role: Role,
    pub kind: DatasetKind,
    pub items: usize,
    pub frames: usize,
    pub digest: String,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Every frame of every item, in order.
    pub fn frames(&self) -> Vec<Image> {
        self.items.iter().flat_map(|i| i.frames.iter().cloned()).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            id: self.id.clone(),
            role: self.role,
            kind: self.kind,
            items: self.items.len(),
            frames: self.items.iter().map(|i| i.frames.len()).sum(),
            digest: self.digest.clone(),
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

/// Decodes an image file to RGB values in `[0, 1]` (8-bit 255 maps to 1.0).
pub fn decode_image(path: &Path) -> std::result::Result<Image, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = raw[(y * w + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    Image::new(h, w, 3, data).map_err(|e| e.to_string())
}

/// Writes an image as 8-bit RGB PNG, rounding to the nearest level.
pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let mut raw = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let ch = c.min(image.channels() - 1);
                raw[(y * w + x) * 3 + c] = (image.get(y, x, ch).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    image::save_buffer(path, &raw, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| HarnessError::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

fn sha_of(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads a dataset directory. Image sets take every image file in name
/// order. Frame sequences take one clip per subdirectory (or the directory
/// itself when it holds frames directly); frames are numbered by file stem
/// and the numbering must be contiguous.
pub fn ingest(id: &str, kind: DatasetKind, role: Role, dir: &Path) -> Result<ImageSet> {
    let err = |reason: String| HarnessError::Ingest {
        dataset: id.to_string(),
        reason,
    };
    let entries = sorted_entries(dir).map_err(|e| err(format!("{}: {e}", dir.display())))?;
    let mut items = Vec::new();
    match kind {
        DatasetKind::ImageSet => {
            for path in entries.iter().filter(|p| is_image(p)) {
                let img = decode_image(path).map_err(err)?;
                let digest = img.digest();
                items.push(Item {
                    id: digest.clone(),
                    name: stem(path),
                    frames: vec![img],
                    frame_ids: vec![digest],
                });
            }
        }
        DatasetKind::FrameSequence => {
            let clips: Vec<PathBuf> = if entries.iter().any(|p| is_image(p)) {
                vec![dir.to_path_buf()]
            } else {
                entries.into_iter().filter(|p| p.is_dir()).collect()
            };
            for clip in clips {
                items.push(ingest_clip(&clip).map_err(err)?);
            }
        }
    }
    if items.is_empty() {
        return Err(err(format!("no images found in {}", dir.display())));
    }
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    Ok(ImageSet {
        id: id.to_string(),
        kind,
        role,
        digest: sha_of(&ids),
        items,
    })
}

fn ingest_clip(dir: &Path) -> std::result::Result<Item, String> {
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let entries = sorted_entries(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut numbered: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for path in entries.into_iter().filter(|p| is_image(p)) {
        let s = stem(&path);
        let idx: u64 = s
            .parse()
            .map_err(|_| format!("clip `{name}`: frame file `{s}` has no numeric index"))?;
        if let Some(prev) = numbered.insert(idx, path.clone()) {
            return Err(format!(
                "clip `{name}`: frame index {idx} appears twice ({} and {})",
                prev.display(),
                path.display()
            ));
        }
    }
    let Some(&first) = numbered.keys().next() else {
        return Err(format!("clip `{name}` has no frames"));
    };
    for (expected, &idx) in (first..).zip(numbered.keys()) {
        if idx != expected {
            return Err(format!("clip `{name}`: frame index {expected} is missing"));
        }
    }
    let mut frames = Vec::new();
    let mut frame_ids = Vec::new();
    for path in numbered.values() {
        let img = decode_image(path)?;
        frame_ids.push(img.digest());
        frames.push(img);
    }
    Ok(Item {
        id: sha_of(&frame_ids),
        name,
        frames,
        frame_ids,
    })
}

/// Fails when any frame of a train dataset also appears in a test dataset.
pub fn check_leakage(sets: &[&ImageSet]) -> Result<()> {
    let mut train: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    for s in sets.iter().filter(|s| s.role == Role::Train) {
        for item in &s.items {
            for f in &item.frame_ids {
                train.entry(f.as_str()).or_insert((s.id.as_str(), item.name.as_str()));
            }
        }
    }
    for s in sets.iter().filter(|s| s.role == Role::Test) {
        for item in &s.items {
            for f in &item.frame_ids {
                if let Some((tid, tname)) = train.get(f.as_str()) {
                    return Err(HarnessError::config(
                        "datasets",
                        format!(
                            "train/test leakage: `{}` in test set `{}` is identical to `{tname}` in train set `{tid}`",
                            item.name, s.id
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}
