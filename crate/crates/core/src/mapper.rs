//! Sequential topological map construction.
//!
//! Frames arrive one at a time and are grouped into proto-nodes. A frame
//! nearly identical to the last one added is skipped (up to a budget); any
//! other frame is matched against the last added frame and either joins the
//! proto-node or closes it. Closed proto-nodes with enough frames become
//! map nodes, each linked to the previously inserted one.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{similarity, Descriptor, DescriptorSet, Frame, FrameId};
use crate::matching::{MatchError, MatchOracle};

pub const MAP_FORMAT: &str = "colonmap-v1";

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid mapping config: {0}")]
    Config(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("event log does not replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> MapError {
    MapError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    /// Frames more similar than this to the last added frame are skipped.
    pub skip_similarity: f64,
    /// Consecutive skips allowed before a match is forced.
    pub max_skips: u32,
    /// A frame joins the proto-node only with strictly more matches.
    pub min_matches: u32,
    pub min_node_images: usize,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            skip_similarity: 0.95,
            max_skips: 5,
            min_matches: 100,
            min_node_images: 3,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.skip_similarity > 0.0 && self.skip_similarity <= 1.0) {
            return Err(MapError::Config(format!(
                "skip_similarity {} not in (0, 1]",
                self.skip_similarity
            )));
        }
        if self.min_node_images < 1 {
            return Err(MapError::Config("min_node_images must be >= 1".into()));
        }
        Ok(())
    }
}

/// A node under construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProtoNode {
    pub frames: Vec<Frame>,
    pub skip_counter: u32,
}

impl ProtoNode {
    fn seeded(frame: Frame) -> Self {
        Self {
            frames: vec![frame],
            skip_counter: 0,
        }
    }

    pub fn last_added(&self) -> &Frame {
        self.frames.last().expect("proto-node is never empty")
    }

    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }
}

/// What happened to a frame offered to a [`ProtoNodeBuilder`].
#[derive(Debug)]
pub enum GateStep {
    /// No proto-node was open; the frame starts one.
    Seeded,
    Skipped {
        similarity: f64,
        skip_count: u32,
    },
    Added {
        matches: u32,
    },
    /// Matching failed: `closed` holds the previous proto-node and the frame
    /// seeds a new one.
    Rejected {
        matches: u32,
        closed: ProtoNode,
    },
}

/// The skip / match gate shared by mapping and query-node construction.
#[derive(Debug, Default)]
pub struct ProtoNodeBuilder {
    current: Option<ProtoNode>,
}

impl ProtoNodeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<&ProtoNode> {
        self.current.as_ref()
    }

    pub fn take(&mut self) -> Option<ProtoNode> {
        self.current.take()
    }

    pub fn offer<O: MatchOracle + ?Sized>(
        &mut self,
        frame: Frame,
        config: &MappingConfig,
        oracle: &O,
    ) -> Result<GateStep, MatchError> {
        let Some(proto) = self.current.as_mut() else {
            self.current = Some(ProtoNode::seeded(frame));
            return Ok(GateStep::Seeded);
        };

        let anchor = proto.last_added();
        let sim = similarity(&frame.descriptor, &anchor.descriptor);
        if sim > config.skip_similarity && proto.skip_counter < config.max_skips {
            proto.skip_counter += 1;
            return Ok(GateStep::Skipped {
                similarity: sim,
                skip_count: proto.skip_counter,
            });
        }

        let matches = oracle.match_count(&frame, anchor)?;
        if matches > config.min_matches {
            proto.frames.push(frame);
            proto.skip_counter = 0;
            Ok(GateStep::Added { matches })
        } else {
            let closed = self
                .current
                .replace(ProtoNode::seeded(frame))
                .expect("checked above");
            Ok(GateStep::Rejected { matches, closed })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub node_id: usize,
    pub frames: Vec<Frame>,
}

impl Node {
    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &Descriptor> {
        self.frames.iter().map(|f| &f.descriptor)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Nodes with undirected edges. Node ids are dense and equal to their index.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoMap {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    config: MappingConfig,
}

impl TopoMap {
    pub fn new(
        nodes: Vec<Node>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        config: MappingConfig,
    ) -> Result<Self, MapError> {
        let mut seen = HashSet::new();
        for (index, node) in nodes.iter().enumerate() {
            if node.node_id != index {
                return Err(schema(
                    format!("nodes[{index}].id"),
                    format!("expected {index}, found {}", node.node_id),
                ));
            }
            if node.frames.is_empty() {
                return Err(schema(
                    format!("nodes[{index}].frames"),
                    "node has no frames",
                ));
            }
            for (k, frame) in node.frames.iter().enumerate() {
                if !seen.insert(frame.frame_id) {
                    return Err(schema(
                        format!("nodes[{index}].frames[{k}].frame_id"),
                        format!("frame {} belongs to more than one node", frame.frame_id),
                    ));
                }
            }
        }

        let mut canonical = BTreeSet::new();
        for (k, (a, b)) in edges.into_iter().enumerate() {
            for end in [a, b] {
                if end >= nodes.len() {
                    return Err(schema(
                        format!("edges[{k}]"),
                        format!(
                            "references node {end} but the map has {} nodes",
                            nodes.len()
                        ),
                    ));
                }
            }
            if a == b {
                return Err(schema(format!("edges[{k}]"), "self loop"));
            }
            canonical.insert((a.min(b), a.max(b)));
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &canonical {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        Ok(Self {
            nodes,
            edges: canonical.into_iter().collect(),
            adjacency,
            config,
        })
    }

    pub fn empty(config: MappingConfig) -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
            config,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Edges as `(smaller, larger)` pairs in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn config(&self) -> &MappingConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_chain(&self) -> bool {
        self.edges.len() == self.nodes.len().saturating_sub(1)
            && self.edges.iter().enumerate().all(|(k, &e)| e == (k, k + 1))
    }

    /// Breadth-first hop count; `Ok(None)` when the nodes are disconnected.
    pub fn hop_distance(&self, from: usize, to: usize) -> Result<Option<usize>, MapError> {
        for id in [from, to] {
            if id >= self.nodes.len() {
                return Err(MapError::UnknownNode(id));
            }
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[from] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                return Ok(Some(dist[u]));
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        Ok(None)
    }

    /// Nodes within `radius` hops of `center` (inclusive), ascending.
    pub fn within_hops(&self, center: usize, radius: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[center] = 0;
        let mut queue = VecDeque::from([center]);
        while let Some(u) = queue.pop_front() {
            if dist[u] == radius {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (0..self.nodes.len())
            .filter(|&i| dist[i] != usize::MAX)
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = MapDoc {
            format: MAP_FORMAT.to_string(),
            config: self.config,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.node_id,
                    frames: n
                        .frames
                        .iter()
                        .map(|f| FrameDoc {
                            frame_id: f.frame_id,
                            descriptor: f.descriptor.values().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
        };
        let mut out = serde_json::to_string(&doc).expect("map serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: MapDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(path, e.into_inner().to_string())
        })?;
        if doc.format != MAP_FORMAT {
            return Err(schema(
                "format",
                format!("expected {MAP_FORMAT:?}, found {:?}", doc.format),
            ));
        }
        doc.config
            .validate()
            .map_err(|e| schema("config", e.to_string()))?;
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (i, node) in doc.nodes.into_iter().enumerate() {
            let mut frames = Vec::with_capacity(node.frames.len());
            for (k, f) in node.frames.into_iter().enumerate() {
                let descriptor = Descriptor::new(f.descriptor).map_err(|e| {
                    schema(format!("nodes[{i}].frames[{k}].descriptor"), e.to_string())
                })?;
                frames.push(Frame::new(f.frame_id, descriptor));
            }
            nodes.push(Node {
                node_id: node.id,
                frames,
            });
        }
        Self::new(
            nodes,
            doc.edges.into_iter().map(|[a, b]| (a, b)),
            doc.config,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    format: String,
    config: MappingConfig,
    nodes: Vec<NodeDoc>,
    edges: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: usize,
    frames: Vec<FrameDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    frame_id: FrameId,
    descriptor: Vec<f32>,
}

pub fn save_map(map: &TopoMap, path: impl AsRef<Path>) -> Result<(), MapError> {
    fs::write(path, map.to_json())?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<TopoMap, MapError> {
    TopoMap::from_json(&fs::read_to_string(path)?)
}

/// One step of the mapping trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MappingEvent {
    FrameSkipped {
        frame_id: FrameId,
        similarity: f64,
        skip_count: u32,
    },
    /// `matches` is `None` when the frame opened a new proto-node.
    FrameAdded {
        frame_id: FrameId,
        matches: Option<u32>,
    },
    /// `frame_id` is the frame whose failed match closed the proto-node,
    /// or `None` at end of stream.
    NodeInserted {
        frame_id: Option<FrameId>,
        node_id: usize,
        frame_ids: Vec<FrameId>,
    },
    ProtoDiscarded {
        frame_id: Option<FrameId>,
        frame_ids: Vec<FrameId>,
    },
}

impl MappingEvent {
    pub fn frame_id(&self) -> Option<FrameId> {
        match self {
            Self::FrameSkipped { frame_id, .. } | Self::FrameAdded { frame_id, .. } => {
                Some(*frame_id)
            }
            Self::NodeInserted { frame_id, .. } | Self::ProtoDiscarded { frame_id, .. } => {
                *frame_id
            }
        }
    }

    pub fn node_id(&self) -> Option<usize> {
        match self {
            Self::NodeInserted { node_id, .. } => Some(*node_id),
            _ => None,
        }
    }

    pub fn reason(&self, config: &MappingConfig) -> String {
        match self {
            Self::FrameSkipped {
                similarity,
                skip_count,
                ..
            } => format!(
                "similarity {similarity:.4} > {} (skip {skip_count}/{})",
                config.skip_similarity, config.max_skips
            ),
            Self::FrameAdded { matches: None, .. } => "opened a new proto-node".into(),
            Self::FrameAdded {
                matches: Some(m), ..
            } => format!("{m} matches > {}", config.min_matches),
            Self::NodeInserted { frame_ids, .. } => format!(
                "proto-node closed with {} frames >= {}",
                frame_ids.len(),
                config.min_node_images
            ),
            Self::ProtoDiscarded { frame_ids, .. } => format!(
                "proto-node closed with {} frames < {}",
                frame_ids.len(),
                config.min_node_images
            ),
        }
    }
}

/// Single-owner mapping state machine.
pub struct Mapper<O> {
    config: MappingConfig,
    oracle: O,
    builder: ProtoNodeBuilder,
    nodes: Vec<Node>,
}

impl<O: MatchOracle> Mapper<O> {
    pub fn new(config: MappingConfig, oracle: O) -> Result<Self, MapError> {
        config.validate()?;
        Ok(Self {
            config,
            oracle,
            builder: ProtoNodeBuilder::new(),
            nodes: Vec::new(),
        })
    }

    pub fn config(&self) -> &MappingConfig {
        &self.config
    }

    pub fn proto_node(&self) -> Option<&ProtoNode> {
        self.builder.current()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Feeds one frame. Returns one event, or two when a failed match closes
    /// the proto-node (the closing event, then the new proto-node's seed).
    pub fn process_frame(&mut self, frame: Frame) -> Result<Vec<MappingEvent>, MapError> {
        let frame_id = frame.frame_id;
        let step = self.builder.offer(frame, &self.config, &self.oracle)?;
        Ok(match step {
            GateStep::Seeded => vec![MappingEvent::FrameAdded {
                frame_id,
                matches: None,
            }],
            GateStep::Skipped {
                similarity,
                skip_count,
            } => vec![MappingEvent::FrameSkipped {
                frame_id,
                similarity,
                skip_count,
            }],
            GateStep::Added { matches } => vec![MappingEvent::FrameAdded {
                frame_id,
                matches: Some(matches),
            }],
            GateStep::Rejected { closed, .. } => vec![
                self.close(closed, Some(frame_id)),
                MappingEvent::FrameAdded {
                    frame_id,
                    matches: None,
                },
            ],
        })
    }

    fn close(&mut self, proto: ProtoNode, trigger: Option<FrameId>) -> MappingEvent {
        let frame_ids = proto.frame_ids();
        if proto.frames.len() < self.config.min_node_images {
            return MappingEvent::ProtoDiscarded {
                frame_id: trigger,
                frame_ids,
            };
        }
        let node_id = self.nodes.len();
        self.nodes.push(Node {
            node_id,
            frames: proto.frames,
        });
        MappingEvent::NodeInserted {
            frame_id: trigger,
            node_id,
            frame_ids,
        }
    }

    /// Closes any pending proto-node through the usual size gate.
    pub fn finalize(mut self) -> (TopoMap, Option<MappingEvent>) {
        let event = self.builder.take().map(|p| self.close(p, None));
        let n = self.nodes.len();
        let map = TopoMap::new(self.nodes, (1..n).map(|k| (k - 1, k)), self.config)
            .expect("mapper output satisfies map invariants");
        (map, event)
    }
}

pub fn build_map<O: MatchOracle>(
    frames: &DescriptorSet,
    config: MappingConfig,
    oracle: O,
) -> Result<(TopoMap, Vec<MappingEvent>), MapError> {
    let mut mapper = Mapper::new(config, oracle)?;
    let mut events = Vec::new();
    for frame in frames {
        events.extend(mapper.process_frame(frame.clone())?);
    }
    let (map, last) = mapper.finalize();
    events.extend(last);
    Ok((map, events))
}

/// Rebuilds a map from its event log and the original frames.
pub fn replay(
    events: &[MappingEvent],
    frames: &DescriptorSet,
    config: MappingConfig,
) -> Result<TopoMap, MapError> {
    let mut pending: Vec<FrameId> = Vec::new();
    let mut nodes: Vec<Node> = Vec::new();
    for (k, event) in events.iter().enumerate() {
        match event {
            MappingEvent::FrameSkipped { .. } => {}
            MappingEvent::FrameAdded { frame_id, matches } => {
                if matches.is_none() && !pending.is_empty() {
                    return Err(MapError::Replay(format!(
                        "event {k}: proto-node opened while another is pending"
                    )));
                }
                pending.push(*frame_id);
            }
            MappingEvent::NodeInserted {
                node_id, frame_ids, ..
            } => {
                if *frame_ids != pending || *node_id != nodes.len() {
                    return Err(MapError::Replay(format!(
                        "event {k}: inserted node does not match pending proto-node"
                    )));
                }
                let node_frames = pending
                    .drain(..)
                    .map(|id| {
                        frames.get(id).cloned().ok_or_else(|| {
                            MapError::Replay(format!("event {k}: frame {id} not in input"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                nodes.push(Node {
                    node_id: *node_id,
                    frames: node_frames,
                });
            }
            MappingEvent::ProtoDiscarded { frame_ids, .. } => {
                if *frame_ids != pending {
                    return Err(MapError::Replay(format!(
                        "event {k}: discarded frames do not match pending proto-node"
                    )));
                }
                pending.clear();
            }
        }
    }
    let n = nodes.len();
    TopoMap::new(nodes, (1..n).map(|k| (k - 1, k)), config)
}
