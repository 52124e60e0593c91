//! Discrete Bayes filter localizing a new sequence against a built map.
//!
//! The incoming stream is cut into small query nodes with the same
//! skip / match gate the mapper uses. Every completed query node runs one
//! filter iteration:
//!
//! 1. predict with a transition model favouring nodes within `m` hops,
//! 2. weight by a likelihood built from mean-of-max descriptor similarity,
//!    keeping the `top_k` node scores and flooring the rest,
//! 3. normalize,
//! 4. accept when some `m`-hop window holds more than `accept_threshold`
//!    of the posterior mass.
//!
//! With `lost_state_enabled`, state index 0 is a virtual "not in the map"
//! state and map node `i` lives at index `i + 1`.

use std::cmp::Ordering;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{similarity, DescriptorSet, Frame, FrameId};
use crate::mapper::{GateStep, MappingConfig, Node, ProtoNodeBuilder, TopoMap};
use crate::matching::{MatchError, MatchOracle};

pub const DECISIONS_FORMAT: &str = "colonloc-v1";

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("invalid localization config: {0}")]
    Config(String),
    #[error("cannot localize against an empty map")]
    EmptyMap,
    #[error("node {0} has no frames")]
    EmptyNode(usize),
    #[error("query node has no frames")]
    EmptyQuery,
    #[error("state vector has {found} entries, expected {expected}")]
    StateMismatch { expected: usize, found: usize },
    #[error("state {0} does not exist")]
    UnknownState(String),
    #[error("likelihood entry {index} is {value}, must be finite and >= 0")]
    InvalidLikelihood { index: usize, value: f64 },
    #[error("posterior collapsed: likelihood and prior have disjoint support")]
    FilterCollapse,
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    /// Hop radius of both the transition window and the acceptance window.
    pub m: usize,
    pub accept_threshold: f64,
    pub top_k: usize,
    pub likelihood_floor: f64,
    pub query_node_size: usize,
    pub neighbor_mass: f64,
    pub far_mass: f64,
    pub lost_state_enabled: bool,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            m: 3,
            accept_threshold: 0.9,
            top_k: 7,
            likelihood_floor: 0.05,
            query_node_size: 3,
            neighbor_mass: 0.9,
            far_mass: 0.1,
            lost_state_enabled: true,
        }
    }
}

impl LocalizationConfig {
    /// Thresholds above 1 are allowed; they simply never accept.
    pub fn validate(&self) -> Result<(), LocalizeError> {
        let bad = |msg: String| Err(LocalizeError::Config(msg));
        if !(self.neighbor_mass >= 0.0 && self.far_mass >= 0.0) {
            return bad("transition masses must be >= 0".into());
        }
        if (self.neighbor_mass + self.far_mass - 1.0).abs() > 1e-12 {
            return bad(format!(
                "neighbor_mass + far_mass = {}, must be 1",
                self.neighbor_mass + self.far_mass
            ));
        }
        if !(self.accept_threshold > 0.0) {
            return bad("accept_threshold must be > 0".into());
        }
        if self.top_k < 1 {
            return bad("top_k must be >= 1".into());
        }
        if self.query_node_size < 1 {
            return bad("query_node_size must be >= 1".into());
        }
        if !(self.likelihood_floor >= 0.0 && self.likelihood_floor.is_finite()) {
            return bad("likelihood_floor must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// A filter state: the virtual lost state or a map node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum State {
    Lost,
    Node(usize),
}

/// Layout of the state vector for a map of `n_nodes` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateSpace {
    pub n_nodes: usize,
    pub lost: bool,
}

impl StateSpace {
    pub fn new(n_nodes: usize, lost: bool) -> Self {
        Self { n_nodes, lost }
    }

    pub fn len(&self) -> usize {
        self.n_nodes + usize::from(self.lost)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offset(&self) -> usize {
        usize::from(self.lost)
    }

    pub fn index(&self, state: State) -> Result<usize, LocalizeError> {
        match state {
            State::Lost if self.lost => Ok(0),
            State::Node(i) if i < self.n_nodes => Ok(i + self.offset()),
            other => Err(LocalizeError::UnknownState(format!("{other:?}"))),
        }
    }

    pub fn state(&self, index: usize) -> State {
        if self.lost && index == 0 {
            State::Lost
        } else {
            State::Node(index - self.offset())
        }
    }
}

/// Probability distribution over a [`StateSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    space: StateSpace,
    probs: Vec<f64>,
}

impl Posterior {
    pub fn uniform(space: StateSpace) -> Self {
        let s = space.len();
        Self {
            space,
            probs: vec![1.0 / s as f64; s],
        }
    }

    pub fn from_probs(space: StateSpace, probs: Vec<f64>) -> Result<Self, LocalizeError> {
        if probs.len() != space.len() {
            return Err(LocalizeError::StateMismatch {
                expected: space.len(),
                found: probs.len(),
            });
        }
        Ok(Self { space, probs })
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Probabilities of the map nodes only, indexed by node id.
    pub fn node_probs(&self) -> &[f64] {
        &self.probs[self.space.offset()..]
    }

    pub fn lost_prob(&self) -> Option<f64> {
        self.space.lost.then(|| self.probs[0])
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Transition distribution out of state `from`.
pub fn transition_row(
    map: &TopoMap,
    from: State,
    config: &LocalizationConfig,
) -> Result<Vec<f64>, LocalizeError> {
    let space = StateSpace::new(map.len(), config.lost_state_enabled);
    space.index(from)?;
    let window = match from {
        State::Lost => Vec::new(),
        State::Node(j) => map.within_hops(j, config.m),
    };
    Ok(row_from_window(space, from, &window, config))
}

fn row_from_window(
    space: StateSpace,
    from: State,
    window: &[usize],
    config: &LocalizationConfig,
) -> Vec<f64> {
    let s = space.len();
    let mut row = match from {
        State::Lost => vec![1.0 / s as f64; s],
        State::Node(_) => {
            let rest = s - window.len();
            let (near, far) = if rest == 0 {
                (1.0 / window.len() as f64, 0.0)
            } else {
                (
                    config.neighbor_mass / window.len() as f64,
                    config.far_mass / rest as f64,
                )
            };
            let mut row = vec![far; s];
            for &i in window {
                row[i + space.offset()] = near;
            }
            row
        }
    };
    let head: f64 = row[..s - 1].iter().sum();
    row[s - 1] = (1.0 - head).max(0.0);
    row
}

/// Mean over query frames of the best similarity against the node's frames.
pub fn node_score(query: &[Frame], node: &Node) -> Result<f64, LocalizeError> {
    if query.is_empty() {
        return Err(LocalizeError::EmptyQuery);
    }
    if node.is_empty() {
        return Err(LocalizeError::EmptyNode(node.node_id));
    }
    let total: f64 = query
        .iter()
        .map(|q| {
            node.frames
                .iter()
                .map(|f| similarity(&q.descriptor, &f.descriptor))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / query.len() as f64)
}

/// Node ids of the `k` largest scores; ties go to the lower id.
pub fn top_k_nodes(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Likelihood over states from raw node scores: the top `k` scores kept
/// verbatim, every other node and the lost state set to the floor.
pub fn likelihood_from_scores(scores: &[f64], config: &LocalizationConfig) -> Vec<f64> {
    let space = StateSpace::new(scores.len(), config.lost_state_enabled);
    let mut lik = vec![config.likelihood_floor; space.len()];
    for i in top_k_nodes(scores, config.top_k) {
        lik[i + space.offset()] = scores[i];
    }
    lik
}

pub fn predict(
    posterior: &Posterior,
    map: &TopoMap,
    config: &LocalizationConfig,
) -> Result<Posterior, LocalizeError> {
    Localizer::new(map, *config)?.predict(posterior)
}

pub fn likelihood(
    query: &[Frame],
    map: &TopoMap,
    config: &LocalizationConfig,
) -> Result<Vec<f64>, LocalizeError> {
    Localizer::new(map, *config)?.likelihood(query)
}

/// Element-wise product followed by normalization.
pub fn update(prior: &Posterior, likelihood: &[f64]) -> Result<Posterior, LocalizeError> {
    if likelihood.len() != prior.probs.len() {
        return Err(LocalizeError::StateMismatch {
            expected: prior.probs.len(),
            found: likelihood.len(),
        });
    }
    if let Some((index, &value)) = likelihood
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(LocalizeError::InvalidLikelihood { index, value });
    }
    let mut probs: Vec<f64> = prior
        .probs
        .iter()
        .zip(likelihood)
        .map(|(p, l)| p * l)
        .collect();
    let eta: f64 = probs.iter().sum();
    if !(eta > 0.0) {
        return Err(LocalizeError::FilterCollapse);
    }
    probs.iter_mut().for_each(|p| *p /= eta);
    Ok(Posterior {
        space: prior.space,
        probs,
    })
}

pub fn check_acceptance(
    posterior: &Posterior,
    map: &TopoMap,
    config: &LocalizationConfig,
) -> Result<Option<Acceptance>, LocalizeError> {
    Ok(Localizer::new(map, *config)?.check_acceptance(posterior))
}

/// Outcome of the acceptance rule on one posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Acceptance {
    /// Node with the highest single-state probability inside the window.
    pub map_node_id: usize,
    /// Center of the heaviest window.
    pub window_center: usize,
    pub window_mass: f64,
}

/// Filter bound to one map, with windows and transition rows precomputed.
pub struct Localizer<'m> {
    map: &'m TopoMap,
    config: LocalizationConfig,
    space: StateSpace,
    windows: Vec<Vec<usize>>,
    // rows[j][i] = p(S_t = i | S_{t-1} = j)
    rows: Vec<Vec<f64>>,
    parallel: bool,
}

impl<'m> Localizer<'m> {
    pub fn new(map: &'m TopoMap, config: LocalizationConfig) -> Result<Self, LocalizeError> {
        config.validate()?;
        if map.is_empty() {
            return Err(LocalizeError::EmptyMap);
        }
        let space = StateSpace::new(map.len(), config.lost_state_enabled);
        let windows: Vec<Vec<usize>> = (0..map.len())
            .map(|j| map.within_hops(j, config.m))
            .collect();
        let rows = (0..space.len())
            .map(|idx| {
                let from = space.state(idx);
                let window: &[usize] = match from {
                    State::Lost => &[],
                    State::Node(j) => &windows[j],
                };
                row_from_window(space, from, window, &config)
            })
            .collect();
        Ok(Self {
            map,
            config,
            space,
            windows,
            rows,
            parallel: false,
        })
    }

    /// Score map nodes on the rayon pool. Results are identical to the
    /// sequential path.
    pub fn map(&self) -> &'m TopoMap {
        self.map
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn config(&self) -> &LocalizationConfig {
        &self.config
    }

    pub fn window(&self, node: usize) -> &[usize] {
        &self.windows[node]
    }

    pub fn transition_row(&self, from: State) -> Result<&[f64], LocalizeError> {
        Ok(&self.rows[self.space.index(from)?])
    }

    pub fn initial_posterior(&self) -> Posterior {
        Posterior::uniform(self.space)
    }

    fn check_space(&self, posterior: &Posterior) -> Result<(), LocalizeError> {
        if posterior.space != self.space {
            return Err(LocalizeError::StateMismatch {
                expected: self.space.len(),
                found: posterior.probs.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, posterior: &Posterior) -> Result<Posterior, LocalizeError> {
        self.check_space(posterior)?;
        let mut predicted = vec![0.0; self.space.len()];
        for (row, &p) in self.rows.iter().zip(&posterior.probs) {
            if p == 0.0 {
                continue;
            }
            for (out, &t) in predicted.iter_mut().zip(row) {
                *out += t * p;
            }
        }
        Ok(Posterior {
            space: self.space,
            probs: predicted,
        })
    }

    pub fn node_scores(&self, query: &[Frame]) -> Result<Vec<f64>, LocalizeError> {
        let nodes = self.map.nodes();
        if self.parallel {
            nodes.par_iter().map(|n| node_score(query, n)).collect()
        } else {
            nodes.iter().map(|n| node_score(query, n)).collect()
        }
    }

    pub fn likelihood(&self, query: &[Frame]) -> Result<Vec<f64>, LocalizeError> {
        Ok(likelihood_from_scores(
            &self.node_scores(query)?,
            &self.config,
        ))
    }

    /// Probability mass of every node's `m`-hop window. The lost state is
    /// never part of a window.
    pub fn window_masses(&self, posterior: &Posterior) -> Vec<f64> {
        let probs = posterior.node_probs();
        self.windows
            .iter()
            .map(|w| w.iter().map(|&i| probs[i]).sum())
            .collect()
    }

    pub fn check_acceptance(&self, posterior: &Posterior) -> Option<Acceptance> {
        let masses = self.window_masses(posterior);
        let center = argmax_lowest(&masses)?;
        let window_mass = masses[center];
        if !(window_mass > self.config.accept_threshold) {
            return None;
        }
        let probs = posterior.node_probs();
        let window = &self.windows[center];
        let best = window[argmax_lowest(&window.iter().map(|&i| probs[i]).collect::<Vec<_>>())?];
        Some(Acceptance {
            map_node_id: best,
            window_center: center,
            window_mass,
        })
    }

    /// One filter iteration: predict, weight, normalize.
    pub fn step(&self, posterior: &Posterior, query: &[Frame]) -> Result<Posterior, LocalizeError> {
        let predicted = self.predict(posterior)?;
        let lik = self.likelihood(query)?;
        update(&predicted, &lik)
    }
}

fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v > values[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// A completed query node cut from the incoming stream.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryNode {
    pub index: usize,
    pub frames: Vec<Frame>,
}

impl QueryNode {
    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }
}

/// Cuts a frame stream into query nodes of exactly `size` frames using the
/// mapper's skip / match gate. Proto-nodes that close early are dropped, as
/// is an incomplete trailing one.
pub fn build_query_nodes<O: MatchOracle + ?Sized>(
    frames: &DescriptorSet,
    mapping: &MappingConfig,
    size: usize,
    oracle: &O,
) -> Result<Vec<QueryNode>, LocalizeError> {
    let mut builder = ProtoNodeBuilder::new();
    let mut out = Vec::new();
    for frame in frames {
        let step = builder.offer(frame.clone(), mapping, oracle)?;
        if matches!(step, GateStep::Skipped { .. }) {
            continue;
        }
        if builder.current().is_some_and(|p| p.frames.len() >= size) {
            let proto = builder.take().expect("checked above");
            out.push(QueryNode {
                index: out.len(),
                frames: proto.frames,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationDecision {
    pub query_node_index: usize,
    pub query_frame_ids: Vec<FrameId>,
    pub map_node_id: usize,
    pub window_mass: f64,
    pub posterior_snapshot: Posterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub query_node_index: usize,
    pub posterior: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LocalizationRun {
    pub query_nodes: Vec<QueryNode>,
    pub decisions: Vec<LocalizationDecision>,
    /// Posterior after every update, one entry per query node.
    pub trace: Vec<TraceEntry>,
}

/// Runs the filter over a whole stream.
pub fn localize_sequence<O: MatchOracle + ?Sized>(
    frames: &DescriptorSet,
    map: &TopoMap,
    mapping: &MappingConfig,
    config: &LocalizationConfig,
    oracle: &O,
) -> Result<LocalizationRun, LocalizeError> {
    let localizer = Localizer::new(map, *config)?;
    let queries = build_query_nodes(frames, mapping, config.query_node_size, oracle)?;
    run_filter(&localizer, queries)
}

/// Runs the filter over query nodes that were already built.
pub fn run_filter(
    localizer: &Localizer<'_>,
    query_nodes: Vec<QueryNode>,
) -> Result<LocalizationRun, LocalizeError> {
    run_filter_timed(localizer, query_nodes).map(|(run, _)| run)
}

/// [`run_filter`] plus the wall time of every filter step.
pub fn run_filter_timed(
    localizer: &Localizer<'_>,
    query_nodes: Vec<QueryNode>,
) -> Result<(LocalizationRun, Vec<Duration>), LocalizeError> {
    let mut posterior = localizer.initial_posterior();
    let mut decisions = Vec::new();
    let mut trace = Vec::with_capacity(query_nodes.len());
    let mut timings = Vec::with_capacity(query_nodes.len());
    for query in &query_nodes {
        let start = Instant::now();
        posterior = localizer.step(&posterior, &query.frames)?;
        timings.push(start.elapsed());
        trace.push(TraceEntry {
            query_node_index: query.index,
            posterior: posterior.probs.clone(),
        });
        if let Some(acc) = localizer.check_acceptance(&posterior) {
            decisions.push(LocalizationDecision {
                query_node_index: query.index,
                query_frame_ids: query.frame_ids(),
                map_node_id: acc.map_node_id,
                window_mass: acc.window_mass,
                posterior_snapshot: posterior.clone(),
            });
        }
    }
    let run = LocalizationRun {
        query_nodes,
        decisions,
        trace,
    };
    Ok((run, timings))
}

/// Decision as stored in a decisions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub query_node_index: usize,
    pub query_frame_ids: Vec<FrameId>,
    pub map_node_id: usize,
    pub window_mass: f64,
}

impl From<&LocalizationDecision> for DecisionRecord {
    fn from(d: &LocalizationDecision) -> Self {
        Self {
            query_node_index: d.query_node_index,
            query_frame_ids: d.query_frame_ids.clone(),
            map_node_id: d.map_node_id,
            window_mass: d.window_mass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionsFile {
    pub format: String,
    pub config: LocalizationConfig,
    pub decisions: Vec<DecisionRecord>,
    #[serde(default)]
    pub trace: Vec<TraceEntry>,
}

impl DecisionsFile {
    pub fn new(config: LocalizationConfig, run: &LocalizationRun, with_trace: bool) -> Self {
        Self {
            format: DECISIONS_FORMAT.to_string(),
            config,
            decisions: run.decisions.iter().map(DecisionRecord::from).collect(),
            trace: if with_trace {
                run.trace.clone()
            } else {
                Vec::new()
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("decisions serialize");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, LocalizeError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: Self =
            serde_path_to_error::deserialize(de).map_err(|e| LocalizeError::Schema {
                path: e.path().to_string(),
                message: e.into_inner().to_string(),
            })?;
        if doc.format != DECISIONS_FORMAT {
            return Err(LocalizeError::Schema {
                path: "format".into(),
                message: format!("expected {DECISIONS_FORMAT:?}, found {:?}", doc.format),
            });
        }
        Ok(doc)
    }
}

pub fn save_decisions(doc: &DecisionsFile, path: impl AsRef<Path>) -> Result<(), LocalizeError> {
    fs::write(path, doc.to_json())?;
    Ok(())
}

pub fn load_decisions(path: impl AsRef<Path>) -> Result<DecisionsFile, LocalizeError> {
    DecisionsFile::from_json(&fs::read_to_string(path)?)
}
