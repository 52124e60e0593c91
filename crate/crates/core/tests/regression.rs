//! Fixtures pinned from the seed-42 synthetic world.

use colonmapper::eval::majority_place;
use colonmapper::synth::PlaceLabel;
use colonmapper::{
    build_map, classify_decision, generate_session, generate_world, localize_sequence,
    session_seed, similarity, DecisionRecord, GroundTruth, LocalizationConfig, MappingConfig,
    SessionParams, SyntheticMatchParams, SyntheticMatcher, Verdict, World, WorldParams,
};

const NODE_SIZES: [usize; 62] = [
    7, 5, 3, 5, 7, 14, 4, 4, 11, 6, 14, 9, 6, 6, 4, 5, 14, 10, 5, 4, 4, 8, 4, 14, 4, 6, 6, 7, 6, 4,
    11, 3, 7, 8, 4, 3, 6, 10, 3, 10, 5, 10, 3, 6, 13, 19, 4, 4, 5, 6, 3, 14, 11, 9, 14, 12, 11, 5,
    10, 13, 11, 12,
];

const DECISIONS: [(usize, usize); 63] = [
    (4, 3),
    (5, 3),
    (6, 3),
    (7, 3),
    (8, 5),
    (9, 7),
    (10, 7),
    (11, 9),
    (12, 9),
    (13, 10),
    (14, 10),
    (17, 12),
    (18, 12),
    (19, 15),
    (20, 15),
    (21, 15),
    (22, 16),
    (27, 18),
    (29, 20),
    (30, 20),
    (31, 21),
    (33, 22),
    (34, 22),
    (40, 24),
    (41, 25),
    (42, 25),
    (44, 28),
    (45, 28),
    (47, 29),
    (49, 29),
    (51, 30),
    (52, 30),
    (53, 30),
    (55, 32),
    (57, 34),
    (58, 34),
    (59, 34),
    (60, 35),
    (61, 35),
    (62, 37),
    (63, 37),
    (64, 37),
    (65, 37),
    (66, 37),
    (72, 40),
    (73, 43),
    (75, 43),
    (79, 45),
    (96, 51),
    (97, 51),
    (114, 56),
    (115, 56),
    (116, 56),
    (117, 56),
    (118, 56),
    (119, 56),
    (120, 58),
    (121, 58),
    (122, 58),
    (123, 59),
    (128, 60),
    (129, 60),
    (130, 61),
];

fn world() -> World {
    generate_world(&WorldParams::default()).unwrap()
}

fn session(world: &World, k: usize) -> (colonmapper::DescriptorSet, GroundTruth) {
    let params = SessionParams {
        seed: session_seed(42, k),
        ..Default::default()
    };
    generate_session(world, &params).unwrap()
}

fn oracle() -> SyntheticMatcher {
    SyntheticMatcher::new(SyntheticMatchParams {
        seed: 42,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn latent_separation() {
    let w = world();
    let mut pairs = 0;
    for i in 0..40 {
        for j in i + 1..40 {
            assert!(similarity(&w.latents[i], &w.latents[j]) <= 0.6);
            pairs += 1;
        }
    }
    assert_eq!(pairs, 780);
    assert_eq!(w.region_of.first(), Some(&0));
    assert_eq!(w.region_of.last(), Some(&6));
    assert!(w.region_of.windows(2).all(|r| r[0] <= r[1]));
}

#[test]
fn session_similarity_profile() {
    let w = world();
    let (frames, truth) = session(&w, 1);
    let (mut within, mut within_ok) = (0usize, 0usize);
    let mut cross_max: f64 = 0.0;
    let mut within_sum = 0.0;
    let mut cross_sum = 0.0;
    let mut cross = 0usize;
    let f = frames.frames();
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            let (a, b) = (truth.frames()[i].place, truth.frames()[j].place);
            let (PlaceLabel::Place(pa), PlaceLabel::Place(pb)) = (a, b) else {
                continue;
            };
            let s = similarity(&f[i].descriptor, &f[j].descriptor);
            if pa == pb {
                within += 1;
                within_sum += s;
                if s >= 0.85 {
                    within_ok += 1;
                }
            } else {
                cross += 1;
                cross_sum += s;
                cross_max = cross_max.max(s);
            }
        }
    }
    assert!(
        within_ok as f64 >= 0.9 * within as f64,
        "{within_ok}/{within}"
    );
    assert!(cross_max <= 0.7, "{cross_max}");
    assert!(within_sum / within as f64 > cross_sum / cross as f64);
}

#[test]
fn sessions_share_place_order_but_not_frames() {
    let w = world();
    let (f1, t1) = session(&w, 1);
    let (f2, t2) = session(&w, 2);
    let order = |t: &GroundTruth| {
        let mut places: Vec<usize> = t.frames().iter().filter_map(|f| f.place.place()).collect();
        places.dedup();
        places
    };
    assert_eq!(order(&t1), (0..40).collect::<Vec<_>>());
    assert_eq!(order(&t2), order(&t1));
    assert_ne!(f1.frames()[0].descriptor, f2.frames()[0].descriptor);
    assert_eq!((f1.len(), f2.len()), (704, 631));
}

#[test]
fn mapping_session_map() {
    let w = world();
    let (frames, _) = session(&w, 1);
    let (map, _) = build_map(&frames, MappingConfig::default(), oracle()).unwrap();
    let sizes: Vec<usize> = map.nodes().iter().map(|n| n.len()).collect();
    assert_eq!(sizes, NODE_SIZES);
    assert!(map.is_chain());
}

#[test]
fn localization_decisions() {
    let w = world();
    let (f1, t1) = session(&w, 1);
    let (f2, t2) = session(&w, 2);
    let oracle = oracle();
    let (map, _) = build_map(&f1, MappingConfig::default(), &oracle).unwrap();
    let run = localize_sequence(
        &f2,
        &map,
        &MappingConfig::default(),
        &LocalizationConfig::default(),
        &oracle,
    )
    .unwrap();
    let got: Vec<(usize, usize)> = run
        .decisions
        .iter()
        .map(|d| (d.query_node_index, d.map_node_id))
        .collect();
    assert_eq!(got, DECISIONS);
    for d in &run.decisions {
        let v = classify_decision(&DecisionRecord::from(d), &t2, &map, &t1).unwrap();
        assert_eq!(v, Verdict::SamePlace);
    }
}

#[test]
fn self_localization_advances_through_places() {
    let w = world();
    let (frames, truth) = session(&w, 1);
    let oracle = oracle();
    let (map, _) = build_map(&frames, MappingConfig::default(), &oracle).unwrap();
    let run = localize_sequence(
        &frames,
        &map,
        &MappingConfig::default(),
        &LocalizationConfig::default(),
        &oracle,
    )
    .unwrap();
    assert!(
        run.decisions.len() * 2 >= map.len(),
        "{}",
        run.decisions.len()
    );
    let node_place =
        |id: usize| majority_place(&map.node(id).unwrap().frame_ids(), &truth).unwrap();
    // Walls can split one place into neighbouring nodes, so progression is
    // monotone in place rather than in node id.
    let places: Vec<Option<usize>> = run
        .decisions
        .iter()
        .map(|d| node_place(d.map_node_id))
        .collect();
    assert!(places.windows(2).all(|p| p[0] <= p[1]), "{places:?}");
    let same = run
        .decisions
        .iter()
        .filter(|d| {
            let q = majority_place(&d.query_frame_ids, &truth).unwrap();
            q.is_some() && q == node_place(d.map_node_id)
        })
        .count();
    assert!(
        same * 10 > run.decisions.len() * 9,
        "{same}/{}",
        run.decisions.len()
    );
}

#[test]
fn zero_noise_frames_equal_latents() {
    let w = generate_world(&WorldParams {
        n_places: 5,
        n_regions: 2,
        ..Default::default()
    })
    .unwrap();
    let params = SessionParams {
        frame_noise: 0.0,
        session_noise: 0.0,
        wall_prob: 0.0,
        ..Default::default()
    };
    let (frames, truth) = generate_session(&w, &params).unwrap();
    for (f, t) in frames.frames().iter().zip(truth.frames()) {
        let p = t.place.place().unwrap();
        assert!((similarity(&f.descriptor, &w.latents[p]) - 1.0).abs() < 1e-6);
    }
}
