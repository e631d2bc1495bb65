use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rma_core::ss2d::{expand_routes, merge_routes, ScanRoute};
use rma_core::{Tape, Tensor};

fn grid(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_route_round_trips(seed in any::<u64>(), c in 1usize..4, h in 1usize..=8, w in 1usize..=8) {
        let x = grid(seed, 2, c, h, w);
        for route in ScanRoute::ALL {
            let seq = route.flatten(&x).unwrap();
            prop_assert_eq!(seq.shape(), &[2, c, h * w][..]);
            prop_assert_eq!(route.unflatten(&seq, h, w).unwrap(), x.clone());
        }
    }

    #[test]
    fn orders_are_permutations(h in 1usize..=8, w in 1usize..=8) {
        for route in ScanRoute::ALL {
            let mut seen = route.order(h, w);
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..h * w).collect::<Vec<_>>());
        }
    }

    #[test]
    fn merge_of_expand_is_exactly_four_times(seed in any::<u64>(), h in 1usize..=8, w in 1usize..=8) {
        let x = grid(seed, 1, 3, h, w);
        let tape = Tape::inference();
        let v = tape.constant(x.clone());
        let merged = merge_routes(&tape, &expand_routes(&tape, &v).unwrap(), h, w).unwrap();
        prop_assert_eq!(merged.value(), &x.map(|v| 4.0 * v));
    }
}

#[test]
fn reversed_routes_visit_in_opposite_order() {
    let (h, w) = (3, 5);
    let fwd = ScanRoute::RowForward.order(h, w);
    let mut back = ScanRoute::RowBackward.order(h, w);
    back.reverse();
    assert_eq!(fwd, back);
    assert_eq!(&ScanRoute::ColForward.order(h, w)[..4], &[0, 5, 10, 1]);
}
