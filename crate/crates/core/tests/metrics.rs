mod common;

use common::oracles::{brute_metrics, random_mask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rma_core::metrics::{compute_metrics, hausdorff, BinaryMask, MetricsRecord};

#[test]
fn all_six_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let pred = random_mask(&mut rng, 32, 32);
        let gt = random_mask(&mut rng, 32, 32);
        let got = compute_metrics(&pred, &gt).unwrap().values();
        let want = brute_metrics(&pred, &gt);
        for (k, name) in MetricsRecord::COLUMNS.iter().enumerate() {
            if *name == "HD" {
                assert_eq!(got[k], want[k], "pair {i}: HD");
            } else {
                assert!((got[k] - want[k]).abs() <= 1e-9, "pair {i}: {name} {} vs {}", got[k], want[k]);
            }
        }
    }
}

#[test]
fn dice_and_iou_are_tied_on_every_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let pred = random_mask(&mut rng, 32, 32);
        let gt = random_mask(&mut rng, 32, 32);
        let c = rma_core::metrics::confusion_counts(&pred, &gt).unwrap();
        let (dice, iou) = (c.dice(), c.iou());
        assert!((dice - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
        assert!(dice >= iou);
    }
}

#[test]
fn hausdorff_is_symmetric_and_zero_on_identical_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let a = random_mask(&mut rng, 20, 24);
        let b = random_mask(&mut rng, 20, 24);
        assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn empty_mask_conventions() {
    let empty = BinaryMask::from_fn(6, 8, |_, _| false);
    let some = BinaryMask::from_fn(6, 8, |y, x| y < 2 && x < 3);
    assert_eq!(compute_metrics(&empty, &empty).unwrap().values(), [1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    let r = compute_metrics(&empty, &some).unwrap();
    assert_eq!((r.dice, r.recall, r.precision, r.hd), (0.0, 0.0, 0.0, 10.0));
}
