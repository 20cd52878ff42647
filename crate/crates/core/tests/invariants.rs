use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use incnas::env::{decode_architecture, encode_architecture, Observation};
use incnas::neighborhood::neighbors;
use incnas::oracle::{shape, step_reward, ShapingConfig};
use incnas::space::sample_uniform;
use incnas::training::{ReplayBuffer, ReplayEntry};
use incnas::{canonical_hash, SpaceSpec};

fn entry(k: u8) -> ReplayEntry {
    let obs = Arc::new(Observation::from_parts(1, vec![k], vec![true]));
    ReplayEntry {
        obs: obs.clone(),
        action: 0,
        reward: 0.0,
        next_obs: obs,
        discount: 0.9,
        terminated: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn digest_ignores_vertex_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let spec = SpaceSpec::nb101();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample_uniform(&spec, &mut rng).unwrap().cells()[0].graph().clone();
        let n = g.num_vertices();
        let d = canonical_hash(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        let mut tried = 0;
        while tried < 20 {
            let mut inner: Vec<usize> = (1..n - 1).collect();
            inner.shuffle(&mut rng);
            let order: Vec<usize> = std::iter::once(0).chain(inner).chain(std::iter::once(n - 1)).collect();
            if let Some(h) = g.reorder(&order) {
                prop_assert_eq!(canonical_hash(&h).unwrap(), d);
            }
            tried += 1;
        }
    }

    #[test]
    fn neighbors_are_valid_and_distinct(seed in any::<u64>(), cap in 1usize..60, template in any::<bool>()) {
        let spec = if template { SpaceSpec::nb301() } else { SpaceSpec::nb101() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = sample_uniform(&spec, &mut rng).unwrap();
        let set = neighbors(&a, &spec, cap, &mut rng);
        prop_assert_eq!(set.candidates.len(), set.pool_size.min(cap));
        let mut seen = HashSet::from([a.digest()]);
        for c in &set.candidates {
            prop_assert!(c.validate(&spec).is_ok());
            prop_assert!(seen.insert(c.digest()));
        }
    }

    #[test]
    fn token_round_trip(seed in any::<u64>(), template in any::<bool>()) {
        let spec = if template { SpaceSpec::nb301() } else { SpaceSpec::nb101() };
        let a = sample_uniform(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let tok = encode_architecture(&a, &spec).unwrap();
        let back = decode_architecture(&tok, &spec).unwrap();
        prop_assert_eq!(back.digest(), a.digest());
    }

    #[test]
    fn shaping_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, alpha in 0.1f64..30.0) {
        let cfg = ShapingConfig::normalized(alpha);
        if a < b {
            prop_assert!(shape(a, &cfg) < shape(b, &cfg));
            prop_assert!(step_reward(Some(a), b, &cfg) > 0.0);
        }
        prop_assert!(shape(a, &cfg) <= 1.0);
        prop_assert_eq!(step_reward(None, a, &cfg), 0.0);
    }

    #[test]
    fn replay_samples_live_entries(
        pushes in 1usize..80,
        capacity in 1usize..40,
        shards in 1usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(shards <= capacity);
        let mut buf = ReplayBuffer::new(capacity, shards, 0.6, 0.4).unwrap();
        let ids: Vec<_> = (0..pushes).map(|i| buf.push(entry(i as u8))).collect();
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = buf.sample(16, &mut rng).unwrap();
        for (id, w) in batch.ids.iter().zip(&batch.weights) {
            prop_assert!(buf.priority(*id).is_some());
            prop_assert!(ids.contains(id));
            prop_assert!(*w > 0.0 && *w <= 1.0 + 1e-12);
        }
    }
}
