//! Regenerates `fixtures/data` from the procedural textures.
//!
//! cargo run -p robench-harness --example write_fixtures [-- <root>]

use std::path::PathBuf;

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/data"));
    if let Err(e) = robench_harness::fixtures::write_fixture_data(&root) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    eprintln!("wrote fixtures under {}", root.display());
}
