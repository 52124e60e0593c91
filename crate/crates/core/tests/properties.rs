mod common;

use colonmapper::localizer::{likelihood_from_scores, node_score, update};
use colonmapper::{
    similarity, Descriptor, DescriptorSet, Frame, LocalizationConfig, Localizer, MatchCache, Node,
    Posterior, State,
};
use proptest::prelude::*;

fn descriptor() -> impl Strategy<Value = Descriptor> {
    prop::collection::vec(-1.0f32..1.0, 512)
        .prop_filter_map("zero vector", |v| Descriptor::normalize(&v).ok())
}

fn localization_config() -> impl Strategy<Value = LocalizationConfig> {
    (1usize..=5, any::<bool>()).prop_map(|(m, lost)| LocalizationConfig {
        m,
        lost_state_enabled: lost,
        ..Default::default()
    })
}

/// A chain plus a few random shortcut edges.
fn graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_n).prop_flat_map(|n| {
        let extra = prop::collection::vec((0..n, 0..n), 0..4);
        extra.prop_map(move |pairs| {
            let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (k - 1, k)).collect();
            for (a, b) in pairs {
                let e = (a.min(b), a.max(b));
                if a != b && !edges.contains(&e) {
                    edges.push(e);
                }
            }
            (n, edges)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_symmetric_and_bounded(a in descriptor(), b in descriptor()) {
        let s = similarity(&a, &b);
        prop_assert_eq!(s, similarity(&b, &a));
        prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&s));
        prop_assert!((similarity(&a, &a) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn descriptor_file_round_trip(descs in prop::collection::vec(descriptor(), 0..6), start in 0u32..1000) {
        let frames = descs
            .into_iter()
            .enumerate()
            .map(|(i, d)| Frame::new(start + 3 * i as u32, d))
            .collect();
        let set = DescriptorSet::new(frames).unwrap();
        let bytes = set.to_bytes();
        prop_assert_eq!(bytes.len(), 16 + set.len() * (4 + 4 * 512));
        let back = DescriptorSet::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, set);
    }

    #[test]
    fn match_cache_symmetric_round_trip(pairs in prop::collection::btree_map((0u32..50, 0u32..50), 0u32..500, 0..30)) {
        let mut cache = MatchCache::new();
        for (&(a, b), &n) in &pairs {
            if a != b && cache.get(a, b).is_none() {
                cache.insert(a, b, n);
            }
        }
        for ((a, b), n) in cache.iter() {
            prop_assert_eq!(cache.get(b, a), Some(n));
        }
        let back = MatchCache::parse(&cache.to_text()).unwrap();
        prop_assert_eq!(back, cache);
    }

    #[test]
    fn transition_rows_stochastic((n, edges) in graph(60), config in localization_config()) {
        let map = common::graph_map(n, &edges);
        let localizer = Localizer::new(&map, config).unwrap();
        let space = localizer.space();
        for k in 0..space.len() {
            let row = localizer.transition_row(space.state(k)).unwrap();
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn predict_matches_dense_oracle(
        (n, edges) in graph(30),
        config in localization_config(),
        weights in prop::collection::vec(0.0f64..1.0, 31),
    ) {
        let map = common::graph_map(n, &edges);
        let localizer = Localizer::new(&map, config).unwrap();
        let size = localizer.space().len();
        let mut probs = weights[..size].to_vec();
        probs[0] += 1e-3;
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        let prior = Posterior::from_probs(localizer.space(), probs.clone()).unwrap();
        let got = localizer.predict(&prior).unwrap();
        let dense = common::dense_transition(n, &edges, config.m, config.lost_state_enabled, 0.9, 0.1);
        let ones = vec![1.0; size];
        let want = common::dense_step(&dense, &probs, &ones);
        for (a, b) in got.probs().iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn posterior_stays_valid(
        n in 1usize..40,
        config in localization_config(),
        steps in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 40), 1..40),
    ) {
        let map = common::chain_map(n);
        let localizer = Localizer::new(&map, config).unwrap();
        let mut posterior = localizer.initial_posterior();
        for scores in steps {
            let lik = likelihood_from_scores(&scores[..n], &config);
            let predicted = localizer.predict(&posterior).unwrap();
            prop_assert!((predicted.sum() - 1.0).abs() <= 1e-9);
            posterior = update(&predicted, &lik).unwrap();
            prop_assert!((posterior.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(posterior.probs().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn likelihood_scaling_leaves_posterior_unchanged(
        n in 1usize..30,
        scores in prop::collection::vec(0.0f64..1.0, 30),
        c in 0.01f64..100.0,
    ) {
        let config = LocalizationConfig::default();
        let map = common::chain_map(n);
        let localizer = Localizer::new(&map, config).unwrap();
        let prior = localizer.predict(&localizer.initial_posterior()).unwrap();
        let lik = likelihood_from_scores(&scores[..n], &config);
        let scaled: Vec<f64> = lik.iter().map(|v| v * c).collect();
        let a = update(&prior, &lik).unwrap();
        let b = update(&prior, &scaled).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(
            localizer.check_acceptance(&a).map(|d| d.map_node_id),
            localizer.check_acceptance(&b).map(|d| d.map_node_id)
        );
    }

    #[test]
    fn uniform_posterior_never_accepted(config in localization_config(), extra in 0usize..100) {
        // Enough states that every window's share stays below the threshold.
        let bound = ((2 * config.m + 1) as f64 / config.accept_threshold).ceil() as usize;
        let states = bound + 1 + extra;
        let n = states - usize::from(config.lost_state_enabled);
        let map = common::chain_map(n);
        let localizer = Localizer::new(&map, config).unwrap();
        prop_assert!(localizer.check_acceptance(&localizer.initial_posterior()).is_none());
    }

    #[test]
    fn node_score_permutation_invariant(
        query in prop::collection::vec(descriptor(), 1..4),
        node in prop::collection::vec(descriptor(), 1..4),
        rot_q in 0usize..4,
        rot_n in 0usize..4,
    ) {
        let frames = |ds: &[Descriptor], base: u32| -> Vec<Frame> {
            ds.iter().enumerate().map(|(i, d)| Frame::new(base + i as u32, d.clone())).collect()
        };
        let q = frames(&query, 0);
        let nf = frames(&node, 100);
        let mut q2 = q.clone();
        q2.rotate_left(rot_q % q.len());
        q2.reverse();
        let mut n2 = nf.clone();
        n2.rotate_left(rot_n % nf.len());
        let a = node_score(&q, &Node { node_id: 0, frames: nf }).unwrap();
        let b = node_score(&q2, &Node { node_id: 0, frames: n2 }).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn delta_posterior_propagates_to_its_row() {
    let map = common::chain_map(10);
    let config = LocalizationConfig::default();
    let localizer = Localizer::new(&map, config).unwrap();
    let space = localizer.space();
    let mut probs = vec![0.0; space.len()];
    probs[space.index(State::Node(5)).unwrap()] = 1.0;
    let predicted = localizer
        .predict(&Posterior::from_probs(space, probs).unwrap())
        .unwrap();
    assert_eq!(
        predicted.probs(),
        localizer.transition_row(State::Node(5)).unwrap()
    );
}
