//! Independent oracles and hand-built fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use colonmapper::{
    Descriptor, DescriptorSet, Frame, FrameId, MappingConfig, MappingEvent, MatchCache, Node,
    TopoMap,
};

// --- transition / filter oracle ---------------------------------------------

/// All-pairs hop distances by BFS over an adjacency list built from `edges`.
pub fn hop_matrix(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|src| {
            let mut dist = vec![None; n];
            dist[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let d = dist[u].unwrap();
                for &v in &adj[u] {
                    if dist[v].is_none() {
                        dist[v] = Some(d + 1);
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Dense transition matrix `t[from][to]` over `[lost?, node 0, .., node n-1]`.
pub fn dense_transition(
    n: usize,
    edges: &[(usize, usize)],
    m: usize,
    lost: bool,
    near: f64,
    far: f64,
) -> Vec<Vec<f64>> {
    let off = usize::from(lost);
    let size = n + off;
    let hops = hop_matrix(n, edges);
    let mut t = vec![vec![0.0; size]; size];
    if lost {
        t[0] = vec![1.0 / size as f64; size];
    }
    for j in 0..n {
        let in_window: Vec<bool> = (0..n).map(|i| hops[j][i].is_some_and(|d| d <= m)).collect();
        let w = in_window.iter().filter(|&&x| x).count();
        let r = size - w;
        let row = &mut t[j + off];
        for to in 0..size {
            let is_window = to >= off && in_window[to - off];
            row[to] = match (is_window, r) {
                (true, 0) => 1.0 / w as f64,
                (true, _) => near / w as f64,
                (false, _) => far / r as f64,
            };
        }
    }
    t
}

/// One brute-force filter step: `normalize((Tᵀ p) ⊙ l)`.
pub fn dense_step(t: &[Vec<f64>], prior: &[f64], lik: &[f64]) -> Vec<f64> {
    let size = prior.len();
    let mut out = vec![0.0; size];
    for (to, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for from in 0..size {
            acc += t[from][to] * prior[from];
        }
        *o = acc * lik[to];
    }
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

// --- likelihood oracle ------------------------------------------------------

/// Sort-based reference: the `k` best scores (lower index first on ties)
/// are kept verbatim, everything else and the lost state get `floor`.
pub fn likelihood_oracle(scores: &[f64], k: usize, floor: f64, lost: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut node_lik = vec![floor; scores.len()];
    for &i in order.iter().take(k) {
        node_lik[i] = scores[i];
    }
    let mut out = Vec::with_capacity(scores.len() + 1);
    if lost {
        out.push(floor);
    }
    out.extend(node_lik);
    out
}

// --- maps -------------------------------------------------------------------

/// Chain map whose node `i` holds the single frame `i`.
pub fn chain_map(n: usize) -> TopoMap {
    graph_map(n, &(1..n).map(|k| (k - 1, k)).collect::<Vec<_>>())
}

pub fn graph_map(n: usize, edges: &[(usize, usize)]) -> TopoMap {
    let nodes = (0..n)
        .map(|i| Node {
            node_id: i,
            frames: vec![Frame::new(i as FrameId, Descriptor::basis(i % 512))],
        })
        .collect::<Vec<_>>();
    TopoMap::new(nodes, edges.iter().copied(), MappingConfig::default()).unwrap()
}

// --- mapping fixtures -------------------------------------------------------

/// Unit descriptor in the plane of the first two axes at `theta` radians;
/// two such descriptors have similarity `cos(a - b)`.
pub fn planar(theta: f64) -> Descriptor {
    let mut v = vec![0.0f64; 512];
    v[0] = theta.cos();
    v[1] = theta.sin();
    Descriptor::normalize_f64(&v).unwrap()
}

/// Angle whose cosine is `sim`.
pub fn at_similarity(sim: f64) -> f64 {
    sim.acos()
}

pub struct MappingFixture {
    pub name: &'static str,
    pub frames: DescriptorSet,
    pub cache: MatchCache,
    pub events: Vec<MappingEvent>,
    pub node_frames: Vec<Vec<FrameId>>,
}

fn set(descs: Vec<Descriptor>) -> DescriptorSet {
    DescriptorSet::new(
        descs
            .into_iter()
            .enumerate()
            .map(|(i, d)| Frame::new(i as FrameId, d))
            .collect(),
    )
    .unwrap()
}

fn cache(pairs: &[(FrameId, FrameId, u32)]) -> MatchCache {
    let mut c = MatchCache::new();
    for &(a, b, n) in pairs {
        c.insert(a, b, n);
    }
    c
}

fn seed(frame_id: FrameId) -> MappingEvent {
    MappingEvent::FrameAdded {
        frame_id,
        matches: None,
    }
}

fn added(frame_id: FrameId, matches: u32) -> MappingEvent {
    MappingEvent::FrameAdded {
        frame_id,
        matches: Some(matches),
    }
}

fn inserted(frame_id: Option<FrameId>, node_id: usize, frame_ids: &[FrameId]) -> MappingEvent {
    MappingEvent::NodeInserted {
        frame_id,
        node_id,
        frame_ids: frame_ids.to_vec(),
    }
}

fn discarded(frame_id: Option<FrameId>, frame_ids: &[FrameId]) -> MappingEvent {
    MappingEvent::ProtoDiscarded {
        frame_id,
        frame_ids: frame_ids.to_vec(),
    }
}

/// Orthogonal frames, so the skip test never fires.
fn distinct(n: usize) -> Vec<Descriptor> {
    (0..n).map(Descriptor::basis).collect()
}

/// Two clusters A x4 and B x4: within-cluster matches 300, cross 0.
pub fn two_clusters() -> MappingFixture {
    MappingFixture {
        name: "add and finalize-insert",
        frames: set(distinct(8)),
        cache: cache(&[
            (0, 1, 300),
            (1, 2, 300),
            (2, 3, 300),
            (3, 4, 0),
            (4, 5, 300),
            (5, 6, 300),
            (6, 7, 300),
        ]),
        events: vec![
            seed(0),
            added(1, 300),
            added(2, 300),
            added(3, 300),
            inserted(Some(4), 0, &[0, 1, 2, 3]),
            seed(4),
            added(5, 300),
            added(6, 300),
            added(7, 300),
            inserted(None, 1, &[4, 5, 6, 7]),
        ],
        node_frames: vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]],
    }
}

/// Near-duplicate frames are skipped against the last added frame.
pub fn skip() -> MappingFixture {
    let near = at_similarity(0.99);
    let frames = set(vec![
        planar(0.0),
        planar(near),
        planar(1.0),
        planar(1.0 + near),
        planar(2.0),
    ]);
    let sim = |a: f64, b: f64| colonmapper::similarity(&planar(a), &planar(b));
    MappingFixture {
        name: "skip",
        frames,
        cache: cache(&[(0, 2, 250), (2, 4, 250)]),
        events: vec![
            seed(0),
            MappingEvent::FrameSkipped {
                frame_id: 1,
                similarity: sim(near, 0.0),
                skip_count: 1,
            },
            added(2, 250),
            MappingEvent::FrameSkipped {
                frame_id: 3,
                similarity: sim(1.0 + near, 1.0),
                skip_count: 1,
            },
            added(4, 250),
            inserted(None, 0, &[0, 2, 4]),
        ],
        node_frames: vec![vec![0, 2, 4]],
    }
}

/// After `max_skips` consecutive skips the next near-duplicate is matched.
pub fn skip_budget() -> MappingFixture {
    let frames = set(vec![planar(0.0); 9]);
    let skipped = |frame_id, skip_count| MappingEvent::FrameSkipped {
        frame_id,
        similarity: colonmapper::similarity(&planar(0.0), &planar(0.0)),
        skip_count,
    };
    MappingFixture {
        name: "skip-budget exhaustion",
        frames,
        cache: cache(&[(0, 6, 150), (6, 7, 150), (7, 8, 150)]),
        events: vec![
            seed(0),
            skipped(1, 1),
            skipped(2, 2),
            skipped(3, 3),
            skipped(4, 4),
            skipped(5, 5),
            added(6, 150),
            skipped(7, 1),
            skipped(8, 2),
            discarded(None, &[0, 6]),
        ],
        node_frames: vec![],
    }
}

/// Short runs closed by a failed match are dropped; only the frame that
/// closed them survives as the next seed. Exactly `min_matches` is a failure.
pub fn finalize_discard() -> MappingFixture {
    MappingFixture {
        name: "finalize-discard",
        frames: set(distinct(7)),
        cache: cache(&[
            (0, 1, 200),
            (1, 2, 100),
            (2, 3, 0),
            (3, 4, 400),
            (4, 5, 400),
            (5, 6, 400),
        ]),
        events: vec![
            seed(0),
            added(1, 200),
            discarded(Some(2), &[0, 1]),
            seed(2),
            discarded(Some(3), &[2]),
            seed(3),
            added(4, 400),
            added(5, 400),
            added(6, 400),
            inserted(None, 0, &[3, 4, 5, 6]),
        ],
        node_frames: vec![vec![3, 4, 5, 6]],
    }
}

/// The stream ends with an open proto-node: kept if large enough, else dropped.
pub fn end_of_stream() -> MappingFixture {
    MappingFixture {
        name: "end-of-stream",
        frames: set(distinct(5)),
        cache: cache(&[(0, 1, 300), (1, 2, 300), (2, 3, 50), (3, 4, 300)]),
        events: vec![
            seed(0),
            added(1, 300),
            added(2, 300),
            inserted(Some(3), 0, &[0, 1, 2]),
            seed(3),
            added(4, 300),
            discarded(None, &[3, 4]),
        ],
        node_frames: vec![vec![0, 1, 2]],
    }
}

pub fn mapping_fixtures() -> Vec<MappingFixture> {
    vec![
        two_clusters(),
        skip(),
        skip_budget(),
        finalize_discard(),
        end_of_stream(),
    ]
}
