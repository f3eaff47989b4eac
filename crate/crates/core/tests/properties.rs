mod common;

use amrberger::graph::isomorphic;
use amrberger::smatch::{smatch, smatch_exact};
use amrberger::{parse_penman, serialize_penman, serialize_penman_compact};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{fuzz_sequence, random_graph};

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 300,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn penman_round_trip_is_isomorphic(seed in any::<u64>()) {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        for text in [serialize_penman(&g).unwrap(), serialize_penman_compact(&g).unwrap()] {
            let back = parse_penman(&text).unwrap();
            prop_assert!(isomorphic(&g, &back), "{}", text);
        }
    }

    #[test]
    fn hill_climbing_never_beats_exact(seed in any::<u64>(), restarts in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_graph(&mut rng, 6);
        let b = random_graph(&mut rng, 6);
        let hill = smatch(&a, &b, restarts, seed);
        let exact = smatch_exact(&a, &b).unwrap();
        prop_assert!(hill.matched <= exact.matched);
        prop_assert_eq!((hill.total_a, hill.total_b), (exact.total_a, exact.total_b));
    }

    #[test]
    fn smatch_of_a_graph_with_itself_is_one(seed in any::<u64>()) {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        prop_assert_eq!(smatch(&g, &g, 1, seed).f1(), 1.0);
    }

    #[test]
    fn scores_lie_in_the_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_graph(&mut rng, 7);
        let b = random_graph(&mut rng, 7);
        let r = smatch(&a, &b, 2, seed);
        for v in [r.precision(), r.recall(), r.f1()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn random_legal_sequences_terminate(seed in any::<u64>()) {
        let r = fuzz_sequence(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}
