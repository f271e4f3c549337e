mod oracle;

use mirror_core::detect::{detect_multiscale, iou, DetectParams};
use mirror_core::fixtures::{self, FacePlacement};
use mirror_core::Frame;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A face fixture over a noisy background, or pure noise.
fn synthetic_frame(seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.random_range(48..=80);
    let place = FacePlacement { x: rng.random_range(0..=128 - size), y: rng.random_range(0..=128 - size), size };
    let mut f = fixtures::face_frame(128, 128, place, 0).into_pixels();
    let noise = rng.random_range(0..40);
    for p in f.iter_mut() {
        let n: i32 = rng.random_range(-noise..=noise);
        *p = (*p as i32 + n).clamp(0, 255) as u8;
    }
    if rng.random_bool(0.2) {
        f.iter_mut().for_each(|p| *p = rng.random());
    }
    Frame::new(f, 128, 128, 1, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn matches_exhaustive_window_scan(seed in any::<u64>(), min_neighbors in 1u32..4, step in 1u32..4) {
        let m = fixtures::fixture_cascade();
        let params = DetectParams { min_neighbors, step, ..Default::default() };
        let f = synthetic_frame(seed);
        prop_assert_eq!(detect_multiscale(&m, &f, &params), oracle::exhaustive_detect(&m, &f, &params));
    }

    /// Faces clear of the frame edge; see `edge_faces_lose_neighbors`.
    #[test]
    fn clean_face_is_found_once(x in 3u32..60, y in 3u32..60, size in 54u32..68) {
        prop_assume!(x + size + 3 <= 128 && y + size + 3 <= 128);
        let place = FacePlacement { x, y, size };
        let f = fixtures::face_frame(128, 128, place, 0);
        let boxes = detect_multiscale(&fixtures::fixture_cascade(), &f, &DetectParams::default());
        prop_assert_eq!(boxes.len(), 1, "{:?}", boxes);
        prop_assert!(iou(&boxes[0], &place.face_box()) >= 0.9);
    }

    #[test]
    fn uniform_frames_are_empty(v in any::<u8>()) {
        let f = Frame::uniform(128, 128, v, 0).unwrap();
        prop_assert!(detect_multiscale(&fixtures::fixture_cascade(), &f, &DetectParams::default()).is_empty());
    }
}

/// Windows cannot extend past the frame, so a face flush with the edge
/// collects fewer overlapping hits: it may be missed at `min_neighbors` 3
/// or found with its box pulled inwards.
#[test]
fn edge_faces_lose_neighbors() {
    let m = fixtures::fixture_cascade();
    let params = DetectParams::default();
    let at = |x, y, size| {
        let place = FacePlacement { x, y, size };
        let boxes = detect_multiscale(&m, &fixtures::face_frame(128, 128, place, 0), &params);
        (boxes.len(), boxes.first().map(|b| iou(b, &place.face_box())))
    };
    assert_eq!(at(0, 0, 62).0, 0);
    let (n, overlap) = at(0, 0, 58);
    assert_eq!(n, 1);
    assert!(overlap.unwrap() < 0.9);
    // Three pixels in, the same faces are found cleanly.
    for size in [58, 62] {
        let (n, overlap) = at(3, 3, size);
        assert_eq!(n, 1);
        assert!(overlap.unwrap() >= 0.9);
    }
}
