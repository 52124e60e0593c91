//! Shared fixtures for the benchmarks.

use colonmapper::{
    build_map, generate_session, generate_world, session_seed, DescriptorSet, MappingConfig,
    SessionParams, SyntheticMatchParams, SyntheticMatcher, TopoMap, WorldParams,
};

/// A synthetic world, two passes through it and the map of the first pass.
pub struct Fixture {
    pub mapping_session: DescriptorSet,
    pub query_session: DescriptorSet,
    pub oracle: SyntheticMatcher,
    pub map: TopoMap,
}

impl Fixture {
    pub fn new(n_places: usize, seed: u64) -> Self {
        let world = generate_world(&WorldParams {
            n_places,
            seed,
            ..Default::default()
        })
        .expect("world");
        let session = |k| {
            let params = SessionParams {
                seed: session_seed(seed, k),
                ..Default::default()
            };
            generate_session(&world, &params).expect("session").0
        };
        let mapping_session = session(1);
        let query_session = session(2);
        let oracle = SyntheticMatcher::new(SyntheticMatchParams {
            seed,
            ..Default::default()
        })
        .expect("oracle");
        let (map, _) = build_map(&mapping_session, MappingConfig::default(), &oracle).expect("map");
        Self {
            mapping_session,
            query_session,
            oracle,
            map,
        }
    }

    /// The default 40-place world used throughout the tests.
    pub fn standard() -> Self {
        Self::new(40, 42)
    }
}
