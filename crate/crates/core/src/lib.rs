//! Topological mapping of a descriptor stream and discrete Bayesian place
//! localization of a second stream against the resulting map.
//!
//! The pipeline is split into:
//!
//! * [`descriptor`]: unit-norm global descriptors, similarity, `CMD1` files.
//! * [`matching`]: pairwise match counts (precomputed cache or synthetic).
//! * [`mapper`]: proto-node based map construction and the `colonmap-v1` file.
//! * [`localizer`]: the Bayes filter, acceptance rule and `colonloc-v1` file.
//! * [`synth`]: synthetic worlds, sessions and ground truth.
//! * [`eval`]: verdicts, metrics, the retrieval baseline and SVG figures.

pub mod descriptor;
pub mod eval;
pub mod localizer;
pub mod mapper;
pub mod matching;
pub mod synth;

pub use descriptor::{
    load_descriptors, save_descriptors, similarity, Descriptor, DescriptorError, DescriptorSet,
    Frame, FrameId, DESCRIPTOR_DIM,
};
pub use eval::{
    classify_decision, compute_metrics, emit_posterior_trace, emit_timeline, EvalError, Metrics,
    Report, Verdict,
};
pub use localizer::{
    load_decisions, localize_sequence, save_decisions, DecisionRecord, DecisionsFile,
    LocalizationConfig, LocalizationDecision, LocalizationRun, LocalizeError, Localizer, Posterior,
    State,
};
pub use mapper::{
    build_map, load_map, save_map, MapError, Mapper, MappingConfig, MappingEvent, Node, TopoMap,
};
pub use matching::{
    load_match_cache, save_match_cache, MatchCache, MatchError, MatchOracle, SyntheticMatchParams,
    SyntheticMatcher,
};
pub use synth::{
    generate_session, generate_world, load_truth, save_truth, session_seed, GroundTruth,
    SessionParams, SynthError, World, WorldParams,
};
