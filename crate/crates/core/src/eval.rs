//! Scoring localization decisions against ground truth.
//!
//! Every accepted decision gets one verdict: the query node and the map node
//! show the same place, a different place of the same region, or neither.
//! Node places are majority votes over their non-wall frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{DescriptorSet, FrameId};
use crate::localizer::{
    build_query_nodes, DecisionRecord, LocalizationConfig, LocalizeError, Localizer, QueryNode,
    TraceEntry,
};
use crate::mapper::{MappingConfig, TopoMap};
use crate::matching::MatchOracle;
use crate::synth::GroundTruth;

pub const REPORT_FORMAT: &str = "colonreport-v1";

const SAME_PLACE_COLOR: &str = "#2ca02c";
const SAME_REGION_COLOR: &str = "#e6b800";
const ERRONEOUS_COLOR: &str = "#d62728";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frame {0} is missing from the ground truth")]
    MissingFrame(FrameId),
    #[error("map node {0} does not exist")]
    UnknownNode(usize),
    #[error("{decisions} decisions but {verdicts} verdicts")]
    LengthMismatch { decisions: usize, verdicts: usize },
    #[error("posterior trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SamePlace,
    SameRegion,
    Erroneous,
}

impl Verdict {
    pub fn color(self) -> &'static str {
        match self {
            Self::SamePlace => SAME_PLACE_COLOR,
            Self::SameRegion => SAME_REGION_COLOR,
            Self::Erroneous => ERRONEOUS_COLOR,
        }
    }
}

/// Most frequent non-wall place among `frame_ids`, lowest id on ties.
/// `None` when every frame is a wall.
pub fn majority_place(
    frame_ids: &[FrameId],
    truth: &GroundTruth,
) -> Result<Option<usize>, EvalError> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &id in frame_ids {
        let label = truth.get(id).ok_or(EvalError::MissingFrame(id))?;
        if let Some(place) = label.place.place() {
            *counts.entry(place).or_default() += 1;
        }
    }
    // BTreeMap iterates in ascending place order, so the first maximum wins.
    let mut best: Option<(usize, usize)> = None;
    for (place, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((place, count));
        }
    }
    Ok(best.map(|(p, _)| p))
}

/// Verdict for a query node matched to a map node.
pub fn classify(
    query_frame_ids: &[FrameId],
    query_truth: &GroundTruth,
    map: &TopoMap,
    map_node_id: usize,
    map_truth: &GroundTruth,
) -> Result<Verdict, EvalError> {
    let node = map
        .node(map_node_id)
        .ok_or(EvalError::UnknownNode(map_node_id))?;
    let query_place = majority_place(query_frame_ids, query_truth)?;
    let map_place = majority_place(&node.frame_ids(), map_truth)?;
    let (Some(q), Some(m)) = (query_place, map_place) else {
        return Ok(Verdict::Erroneous);
    };
    if q == m {
        return Ok(Verdict::SamePlace);
    }
    let q_region = query_truth.region_of_place(q);
    let m_region = map_truth.region_of_place(m);
    Ok(match (q_region, m_region) {
        (Some(a), Some(b)) if a == b => Verdict::SameRegion,
        _ => Verdict::Erroneous,
    })
}

pub fn classify_decision(
    decision: &DecisionRecord,
    query_truth: &GroundTruth,
    map: &TopoMap,
    map_truth: &GroundTruth,
) -> Result<Verdict, EvalError> {
    classify(
        &decision.query_frame_ids,
        query_truth,
        map,
        decision.map_node_id,
        map_truth,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accepted: usize,
    pub same_place: usize,
    pub same_region: usize,
    pub erroneous: usize,
    /// `None` when nothing was accepted.
    pub same_place_precision: Option<f64>,
    pub region_or_better_precision: Option<f64>,
    /// Fraction of query-session places with at least one same-place decision.
    pub coverage: Option<f64>,
}

impl Metrics {
    /// Counts and precisions from verdicts alone; coverage left unset.
    pub fn from_verdicts(verdicts: &[Verdict]) -> Self {
        let count = |v: Verdict| verdicts.iter().filter(|&&x| x == v).count();
        let accepted = verdicts.len();
        let same_place = count(Verdict::SamePlace);
        let same_region = count(Verdict::SameRegion);
        let ratio = |n: usize| (accepted > 0).then(|| n as f64 / accepted as f64);
        Self {
            accepted,
            same_place,
            same_region,
            erroneous: count(Verdict::Erroneous),
            same_place_precision: ratio(same_place),
            region_or_better_precision: ratio(same_place + same_region),
            coverage: None,
        }
    }
}

pub fn compute_metrics(
    decisions: &[DecisionRecord],
    verdicts: &[Verdict],
    query_truth: &GroundTruth,
) -> Result<Metrics, EvalError> {
    if decisions.len() != verdicts.len() {
        return Err(EvalError::LengthMismatch {
            decisions: decisions.len(),
            verdicts: verdicts.len(),
        });
    }
    let mut metrics = Metrics::from_verdicts(verdicts);
    let all_places: BTreeSet<usize> = query_truth
        .frames()
        .iter()
        .filter_map(|f| f.place.place())
        .collect();
    let mut covered = BTreeSet::new();
    for (d, v) in decisions.iter().zip(verdicts) {
        if *v == Verdict::SamePlace {
            if let Some(p) = majority_place(&d.query_frame_ids, query_truth)? {
                covered.insert(p);
            }
        }
    }
    metrics.coverage =
        (!all_places.is_empty()).then(|| covered.len() as f64 / all_places.len() as f64);
    Ok(metrics)
}

/// Raw retrieval answer for one query node: the best-scoring map node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineDecision {
    pub query_node_index: usize,
    pub query_frame_ids: Vec<FrameId>,
    pub map_node_id: usize,
    pub score: f64,
}

/// Best map node for every query node, regardless of score.
pub fn baseline_candidates(
    localizer: &Localizer<'_>,
    query_nodes: &[QueryNode],
) -> Result<Vec<BaselineDecision>, EvalError> {
    query_nodes
        .iter()
        .map(|q| {
            let scores = localizer.node_scores(&q.frames)?;
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            Ok(BaselineDecision {
                query_node_index: q.index,
                query_frame_ids: q.frame_ids(),
                map_node_id: best,
                score: scores[best],
            })
        })
        .collect()
}

/// Retrieval without the temporal model: same query nodes as the filter,
/// accepted whenever the best raw score exceeds `threshold`.
pub fn baseline_retrieval<O: MatchOracle + ?Sized>(
    frames: &DescriptorSet,
    map: &TopoMap,
    mapping: &MappingConfig,
    config: &LocalizationConfig,
    oracle: &O,
    threshold: f64,
) -> Result<Vec<BaselineDecision>, EvalError> {
    let localizer = Localizer::new(map, *config)?;
    let queries = build_query_nodes(frames, mapping, config.query_node_size, oracle)?;
    Ok(baseline_candidates(&localizer, &queries)?
        .into_iter()
        .filter(|d| d.score > threshold)
        .collect())
}

/// The `count` most confident candidates; ties go to the earlier query node.
pub fn baseline_top(candidates: &[BaselineDecision], count: usize) -> Vec<BaselineDecision> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.query_node_index.cmp(&b.query_node_index))
    });
    sorted.truncate(count);
    sorted.sort_by_key(|d| d.query_node_index);
    sorted
}

pub fn classify_baseline(
    decisions: &[BaselineDecision],
    query_truth: &GroundTruth,
    map: &TopoMap,
    map_truth: &GroundTruth,
) -> Result<Vec<Verdict>, EvalError> {
    decisions
        .iter()
        .map(|d| {
            classify(
                &d.query_frame_ids,
                query_truth,
                map,
                d.map_node_id,
                map_truth,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub accepted: usize,
    pub same_place_precision: Option<f64>,
    pub region_or_better_precision: Option<f64>,
}

/// Thresholds 0.00, 0.02, ..., 1.00.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=50).map(|k| f64::from(k) / 50.0).collect()
}

/// Precision/acceptance trade-off of the baseline over a threshold grid.
/// `verdicts` must be aligned with `candidates`.
pub fn baseline_curve(
    candidates: &[BaselineDecision],
    verdicts: &[Verdict],
    thresholds: &[f64],
) -> Vec<CurvePoint> {
    thresholds
        .iter()
        .map(|&threshold| {
            let kept: Vec<Verdict> = candidates
                .iter()
                .zip(verdicts)
                .filter(|(c, _)| c.score > threshold)
                .map(|(_, &v)| v)
                .collect();
            let m = Metrics::from_verdicts(&kept);
            CurvePoint {
                threshold,
                accepted: m.accepted,
                same_place_precision: m.same_place_precision,
                region_or_better_precision: m.region_or_better_precision,
            }
        })
        .collect()
}

/// Filter and baseline compared at the same number of acceptances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub filter: Metrics,
    pub baseline_matched: Metrics,
    pub curve: Vec<CurvePoint>,
}

impl BaselineComparison {
    pub fn filter_at_least_as_precise(&self) -> bool {
        match (
            self.filter.same_place_precision,
            self.baseline_matched.same_place_precision,
        ) {
            (Some(f), Some(b)) => f >= b,
            (None, None) => true,
            _ => false,
        }
    }
}

pub fn compare_with_baseline(
    localizer: &Localizer<'_>,
    query_nodes: &[QueryNode],
    filter_verdicts: &[Verdict],
    query_truth: &GroundTruth,
    map_truth: &GroundTruth,
) -> Result<BaselineComparison, EvalError> {
    let map = localizer.map();
    let candidates = baseline_candidates(localizer, query_nodes)?;
    let verdicts = classify_baseline(&candidates, query_truth, map, map_truth)?;
    let matched = baseline_top(&candidates, filter_verdicts.len());
    let matched_verdicts = classify_baseline(&matched, query_truth, map, map_truth)?;
    Ok(BaselineComparison {
        filter: Metrics::from_verdicts(filter_verdicts),
        baseline_matched: Metrics::from_verdicts(&matched_verdicts),
        curve: baseline_curve(&candidates, &verdicts, &default_threshold_grid()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionVerdict {
    pub query_node_index: usize,
    pub map_node_id: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub metrics: Metrics,
    pub per_decision: Vec<DecisionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
}

impl Report {
    pub fn new(metrics: Metrics, decisions: &[DecisionRecord], verdicts: &[Verdict]) -> Self {
        Self {
            format: REPORT_FORMAT.to_string(),
            metrics,
            per_decision: decisions
                .iter()
                .zip(verdicts)
                .map(|(d, &verdict)| DecisionVerdict {
                    query_node_index: d.query_node_index,
                    map_node_id: d.map_node_id,
                    verdict,
                })
                .collect(),
            baseline: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

// --- figures ---------------------------------------------------------------

const TIMELINE_WIDTH: f64 = 1000.0;
const TIMELINE_MARGIN: f64 = 40.0;
const MAP_BAR_Y: f64 = 60.0;
const QUERY_BAR_Y: f64 = 200.0;

struct Axis {
    first: f64,
    span: f64,
}

impl Axis {
    fn new(truth: &GroundTruth) -> Self {
        let ids = truth.frames().iter().map(|f| f64::from(f.frame_id));
        let first = ids.clone().fold(f64::INFINITY, f64::min);
        let last = ids.fold(f64::NEG_INFINITY, f64::max);
        if first.is_finite() {
            Self {
                first,
                span: (last - first).max(1.0),
            }
        } else {
            Self {
                first: 0.0,
                span: 1.0,
            }
        }
    }

    fn x(&self, frame: f64) -> f64 {
        TIMELINE_MARGIN
            + (frame - self.first) / self.span * (TIMELINE_WIDTH - 2.0 * TIMELINE_MARGIN)
    }

    fn mean_x(&self, ids: &[FrameId]) -> f64 {
        if ids.is_empty() {
            return self.x(self.first);
        }
        let mean = ids.iter().map(|&i| f64::from(i)).sum::<f64>() / ids.len() as f64;
        self.x(mean)
    }
}

fn region_ticks(out: &mut String, truth: &GroundTruth, axis: &Axis, y: f64) {
    let mut last_region = None;
    for f in truth.frames() {
        let Some(region) = f.region else { continue };
        if last_region.is_some_and(|r| r != region) {
            let x = axis.x(f64::from(f.frame_id));
            writeln!(
                out,
                r##"<rect class="region-boundary" x="{:.2}" y="{:.2}" width="1" height="24" fill="#444"/>"##,
                x - 0.5,
                y - 12.0
            )
            .unwrap();
        }
        last_region = Some(region);
    }
}

/// Two sequence bars, region boundaries as ticks and one coloured `<line>`
/// per decision. Bars and ticks are `<rect>`s so the line count equals the
/// decision count.
pub fn timeline_svg(
    decisions: &[DecisionRecord],
    verdicts: &[Verdict],
    query_truth: &GroundTruth,
    map: &TopoMap,
    map_truth: &GroundTruth,
) -> Result<String, EvalError> {
    if decisions.len() != verdicts.len() {
        return Err(EvalError::LengthMismatch {
            decisions: decisions.len(),
            verdicts: verdicts.len(),
        });
    }
    let map_axis = Axis::new(map_truth);
    let query_axis = Axis::new(query_truth);
    let height = QUERY_BAR_Y + 40.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{TIMELINE_WIDTH}" height="{height}" viewBox="0 0 {TIMELINE_WIDTH} {height}">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect x="0" y="0" width="{TIMELINE_WIDTH}" height="{height}" fill="white"/>"#
    )
    .unwrap();
    for (label, y) in [("map", MAP_BAR_Y), ("query", QUERY_BAR_Y)] {
        writeln!(
            out,
            r#"<rect class="sequence" x="{TIMELINE_MARGIN}" y="{:.2}" width="{:.2}" height="4" fill="black"/>"#,
            y - 2.0,
            TIMELINE_WIDTH - 2.0 * TIMELINE_MARGIN
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="4" y="{:.2}" font-family="sans-serif" font-size="12">{label}</text>"#,
            y + 4.0
        )
        .unwrap();
    }
    region_ticks(&mut out, map_truth, &map_axis, MAP_BAR_Y);
    region_ticks(&mut out, query_truth, &query_axis, QUERY_BAR_Y);
    for (d, v) in decisions.iter().zip(verdicts) {
        let node = map
            .node(d.map_node_id)
            .ok_or(EvalError::UnknownNode(d.map_node_id))?;
        writeln!(
            out,
            r#"<line x1="{:.2}" y1="{MAP_BAR_Y}" x2="{:.2}" y2="{QUERY_BAR_Y}" stroke="{}" stroke-width="1.5"/>"#,
            map_axis.mean_x(&node.frame_ids()),
            query_axis.mean_x(&d.query_frame_ids),
            v.color()
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_timeline(
    decisions: &[DecisionRecord],
    verdicts: &[Verdict],
    query_truth: &GroundTruth,
    map: &TopoMap,
    map_truth: &GroundTruth,
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    fs::write(
        path,
        timeline_svg(decisions, verdicts, query_truth, map, map_truth)?,
    )?;
    Ok(())
}

const CELL_W: f64 = 6.0;
const CELL_H: f64 = 4.0;
const STRIP_GAP: f64 = 24.0;

fn heat(value: f64, max: f64) -> u8 {
    let t = if max > 0.0 {
        (value / max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (255.0 * (1.0 - t)).round() as u8
}

/// Heat strips of the raw posterior (steps × states) and of the window mass
/// per map node, with a marker above every accepted step.
pub fn posterior_trace_svg(
    trace: &[TraceEntry],
    localizer: &Localizer<'_>,
    accepted_steps: &[usize],
) -> Result<String, EvalError> {
    if trace.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let space = localizer.space();
    let states = space.len();
    let nodes = space.n_nodes;
    let width = trace.len() as f64 * CELL_W;
    let top = 12.0;
    let second = top + states as f64 * CELL_H + STRIP_GAP;
    let height = second + nodes as f64 * CELL_H + 4.0;

    let masses: Vec<Vec<f64>> = trace
        .iter()
        .map(|t| {
            let posterior = crate::localizer::Posterior::from_probs(space, t.posterior.clone())?;
            Ok(localizer.window_masses(&posterior))
        })
        .collect::<Result<_, LocalizeError>>()?;
    let raw_max = trace
        .iter()
        .flat_map(|t| t.posterior.iter().copied())
        .fold(0.0, f64::max);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    )
    .unwrap();
    writeln!(out, r#"<g class="posterior">"#).unwrap();
    for (col, t) in trace.iter().enumerate() {
        for (row, &p) in t.posterior.iter().enumerate() {
            let g = heat(p, raw_max);
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{CELL_W}" height="{CELL_H}" fill="rgb({g},{g},255)"/>"#,
                col as f64 * CELL_W,
                top + row as f64 * CELL_H
            )
            .unwrap();
        }
    }
    writeln!(out, "</g>").unwrap();
    writeln!(out, r#"<g class="window-mass">"#).unwrap();
    for (col, m) in masses.iter().enumerate() {
        for (row, &v) in m.iter().enumerate() {
            let g = heat(v, 1.0);
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{CELL_W}" height="{CELL_H}" fill="rgb(255,{g},{g})"/>"#,
                col as f64 * CELL_W,
                second + row as f64 * CELL_H
            )
            .unwrap();
        }
    }
    writeln!(out, "</g>").unwrap();
    for &step in accepted_steps {
        if let Some(col) = trace.iter().position(|t| t.query_node_index == step) {
            writeln!(
                out,
                r#"<circle class="accept" data-step="{step}" cx="{:.2}" cy="{:.2}" r="2.5" fill="{SAME_PLACE_COLOR}"/>"#,
                col as f64 * CELL_W + CELL_W / 2.0,
                second - STRIP_GAP / 2.0
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_posterior_trace(
    trace: &[TraceEntry],
    localizer: &Localizer<'_>,
    accepted_steps: &[usize],
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    fs::write(path, posterior_trace_svg(trace, localizer, accepted_steps)?)?;
    Ok(())
}
