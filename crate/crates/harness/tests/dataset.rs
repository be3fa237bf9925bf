mod common;

use std::path::Path;

use common::fixture_data;
use robench_harness::config::{DatasetKind, Role};
use robench_harness::dataset::{check_leakage, decode_image, ingest};
use robench_harness::fixtures::{write_clip, write_fixture_data, CLIPS, FIXTURE_SIZE};
use robench_harness::{exit, HarnessError};

fn write_rgb(path: &Path, w: u32, h: u32, px: impl Fn(u32, u32) -> [u8; 3]) {
    let mut raw = Vec::new();
    for y in 0..h {
        for x in 0..w {
            raw.extend(px(x, y));
        }
    }
    image::save_buffer(path, &raw, w, h, image::ExtendedColorType::Rgb8).unwrap();
}

#[test]
fn eight_bit_levels_map_onto_the_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.png");
    write_rgb(&p, 3, 2, |x, y| [255, 0, (x * 10 + y) as u8]);
    let img = decode_image(&p).unwrap();
    assert_eq!((img.channels(), img.height(), img.width()), (3, 2, 3));
    assert_eq!(img.get(1, 2, 0), 1.0);
    assert_eq!(img.get(0, 0, 1), 0.0);
    assert_eq!(img.get(1, 2, 2), 21.0 / 255.0);

    let q = dir.path().join("b.ppm");
    write_rgb(&q, 3, 2, |x, y| [255, 0, (x * 10 + y) as u8]);
    assert_eq!(decode_image(&q).unwrap(), img);
}

#[test]
fn bundled_sets_have_their_documented_sizes() {
    let calib = ingest("calib", DatasetKind::ImageSet, Role::Calibration, &fixture_data().join("calib")).unwrap();
    assert_eq!(calib.len(), 32);
    let test = ingest("test", DatasetKind::ImageSet, Role::Test, &fixture_data().join("test")).unwrap();
    assert_eq!(test.len(), 32);
    for img in test.frames() {
        assert_eq!((img.height(), img.width(), img.channels()), (FIXTURE_SIZE, FIXTURE_SIZE, 3));
    }
    let clips = ingest("clips", DatasetKind::FrameSequence, Role::Test, &fixture_data().join("clips")).unwrap();
    let frames: Vec<usize> = clips.items.iter().map(|i| i.frames.len()).collect();
    assert_eq!(frames, CLIPS.iter().map(|c| c.2).collect::<Vec<_>>());
}

#[test]
fn bundled_data_regenerates_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture_data(dir.path()).unwrap();
    let mut n = 0;
    for set in ["calib", "test", "train-a", "train-b", "train-c", "clips/clip-0", "clips/clip-1"] {
        for e in std::fs::read_dir(dir.path().join(set)).unwrap() {
            let p = e.unwrap().path();
            let bundled = fixture_data().join(set).join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&bundled).unwrap(), "{}", bundled.display());
            n += 1;
        }
    }
    assert_eq!(n, 32 + 32 + 8 * 3 + 4 + 3);
}

#[test]
fn frame_gaps_name_the_missing_index() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip");
    write_clip(&clip, 1, 4, 8).unwrap();
    std::fs::remove_file(clip.join("0002.png")).unwrap();
    let e = ingest("v", DatasetKind::FrameSequence, Role::Test, dir.path()).unwrap_err();
    assert_eq!(e.exit_code(), exit::PARTIAL);
    assert!(matches!(&e, HarnessError::Ingest { dataset, .. } if dataset == "v"));
    assert!(e.to_string().contains("frame index 2 is missing"), "{e}");

    std::fs::copy(clip.join("0001.png"), clip.join("frame.png")).unwrap();
    let e = ingest("v", DatasetKind::FrameSequence, Role::Test, dir.path()).unwrap_err();
    assert!(e.to_string().contains("no numeric index"), "{e}");
}

#[test]
fn a_directory_of_frames_is_one_clip() {
    let dir = tempfile::tempdir().unwrap();
    write_clip(dir.path(), 5, 3, 8).unwrap();
    let set = ingest("v", DatasetKind::FrameSequence, Role::Test, dir.path()).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(set.items[0].frames.len(), 3);
}

#[test]
fn empty_and_corrupt_sets_fail_ingest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ingest("e", DatasetKind::ImageSet, Role::Test, dir.path()).is_err());
    std::fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
    let e = ingest("e", DatasetKind::ImageSet, Role::Test, dir.path()).unwrap_err();
    assert!(e.to_string().contains("bad.png"), "{e}");
}

#[test]
fn train_test_overlap_is_a_config_error() {
    let train = ingest("tr", DatasetKind::ImageSet, Role::Train, &fixture_data().join("train-a")).unwrap();
    let test = ingest("te", DatasetKind::ImageSet, Role::Test, &fixture_data().join("test")).unwrap();
    check_leakage(&[&train, &test]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    for f in ["img-00.png", "img-01.png"] {
        std::fs::copy(fixture_data().join("test").join(f), dir.path().join(f)).unwrap();
    }
    std::fs::copy(fixture_data().join("train-a/img-03.png"), dir.path().join("img-02.png")).unwrap();
    let leaky = ingest("leaky", DatasetKind::ImageSet, Role::Test, dir.path()).unwrap();
    let e = check_leakage(&[&train, &leaky]).unwrap_err();
    assert!(matches!(&e, HarnessError::Config { key, .. } if key == "datasets"), "{e}");
    assert!(e.to_string().contains("img-02") && e.to_string().contains("img-03"), "{e}");
}
