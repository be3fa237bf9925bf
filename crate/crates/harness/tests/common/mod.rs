#![allow(dead_code)]

use std::path::{Path, PathBuf};

use robench_harness::config::{parse_config, resolve, ResolvedConfig};

pub fn fixture_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/data")
}

pub fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bench.toml")
}

pub fn no_env(_: &str) -> Option<String> {
    None
}

/// Resolves `body` with the bundled fixture data as data directory and `out`
/// as output directory.
pub fn config(body: &str, out: &Path) -> ResolvedConfig {
    let text = format!(
        "[run]\noutput_dir = {:?}\ndata_dir = {:?}\nworkers = 2\nbootstrap_resamples = 200\n{body}",
        out.display().to_string(),
        fixture_data().display().to_string(),
    );
    resolve(parse_config(&text).unwrap(), out, &no_env).unwrap()
}

pub const SMALL: &str = r#"
[[metrics]]
name = "tiny-cnn-nr"

[[datasets]]
id = "calib"
path = "calib"
role = "calibration"

[[datasets]]
id = "test"
path = "train-c"
role = "test"

[[datasets]]
id = "train-a"
path = "train-a"
role = "train"
"#;
