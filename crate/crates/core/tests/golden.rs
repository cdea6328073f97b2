use std::path::Path;

#[path = "support/preprocess.rs"]
mod preprocess;

#[test]
fn preprocessing_matches_golden_files() {
    let dir = preprocess::fixtures_dir(Path::new(env!("CARGO_MANIFEST_DIR")));
    let bad = preprocess::mismatches(&dir);
    assert!(bad.is_empty(), "golden mismatch: {bad:?}");
}
