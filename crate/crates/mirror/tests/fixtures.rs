//! The checked-in `fixtures/` directory matches what the code produces.
//! Run with `MIRROR_REGENERATE_FIXTURES=1` to rewrite it.

use std::path::PathBuf;

use mirror_runtime::bundle;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn fixtures_are_current() {
    let dir = fixture_dir();
    if std::env::var_os("MIRROR_REGENERATE_FIXTURES").is_some() {
        bundle::write_all(&dir).unwrap();
    }
    let mut stale = Vec::new();
    for (name, expected) in bundle::files() {
        match std::fs::read(dir.join(&name)) {
            Ok(actual) if actual == expected => {}
            _ => stale.push(name),
        }
    }
    assert!(
        stale.is_empty(),
        "stale fixtures {stale:?}; rerun with MIRROR_REGENERATE_FIXTURES=1"
    );
}

#[test]
fn golden_poems_are_stable_across_runs() {
    for seed in bundle::GOLDEN_SEEDS {
        let first = bundle::golden_poem(seed);
        for _ in 0..9 {
            assert_eq!(bundle::golden_poem(seed), first);
        }
    }
}
