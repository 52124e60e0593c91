//! Deterministic synthetic worlds and sessions with ground truth.
//!
//! A world is a line of places, each with a latent non-negative unit
//! descriptor, grouped into contiguous regions. A session walks the places
//! in order: every place gets a session-specific drifted anchor, then a run
//! of noisy frames around that anchor, with occasional wall frames that
//! belong to no place.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{similarity, Descriptor, DescriptorSet, Frame, FrameId, DESCRIPTOR_DIM};

pub const TRUTH_FORMAT: &str = "colontruth-v1";

const MAX_ATTEMPTS: usize = 1000;

/// Region names used when a world has exactly seven regions, in withdrawal
/// order.
const ANATOMICAL_REGIONS: [&str; 7] = [
    "cecum",
    "ascending",
    "transverse",
    "descending",
    "sigmoid",
    "rectum",
    "retroflexion",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(
        "place {place}: no latent within similarity {cap} of earlier places after \
         {MAX_ATTEMPTS} attempts; raise the dimension or loosen place_separation"
    )]
    Separation { place: usize, cap: f64 },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub n_places: usize,
    pub n_regions: usize,
    pub dim: usize,
    /// Target maximum latent similarity between distinct places. Latents are
    /// rejected above `place_separation + 0.1`.
    pub place_separation: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_places: 40,
            n_regions: 7,
            dim: DESCRIPTOR_DIM,
            place_separation: 0.5,
            seed: 42,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_regions < 1 || self.n_places < self.n_regions {
            return Err(SynthError::Params(format!(
                "need n_places >= n_regions >= 1, got {} places and {} regions",
                self.n_places, self.n_regions
            )));
        }
        if self.dim != DESCRIPTOR_DIM {
            return Err(SynthError::Params(format!("dim must be {DESCRIPTOR_DIM}")));
        }
        if !(0.0..1.0).contains(&self.place_separation) {
            return Err(SynthError::Params(
                "place_separation must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn similarity_cap(&self) -> f64 {
        self.place_separation + 0.1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub params: WorldParams,
    pub latents: Vec<Descriptor>,
    pub region_of: Vec<usize>,
}

impl World {
    pub fn n_places(&self) -> usize {
        self.latents.len()
    }

    pub fn region_names(&self) -> BTreeMap<usize, String> {
        let n = self.params.n_regions;
        (0..n)
            .map(|r| {
                let name = if n == ANATOMICAL_REGIONS.len() {
                    ANATOMICAL_REGIONS[r].to_string()
                } else {
                    format!("region-{r}")
                };
                (r, name)
            })
            .collect()
    }

    /// Largest latent similarity over distinct place pairs.
    pub fn max_pair_similarity(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (i, a) in self.latents.iter().enumerate() {
            for b in &self.latents[i + 1..] {
                best = best.max(similarity(a, b));
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub dwell_min: usize,
    pub dwell_max: usize,
    /// Per-frame perturbation around the session anchor.
    pub frame_noise: f64,
    /// Lag-one correlation of the frame noise within a dwell; consecutive
    /// frames of a slow camera look alike.
    pub frame_correlation: f64,
    /// Per-session drift of every place's anchor away from its latent.
    pub session_noise: f64,
    pub wall_prob: f64,
    pub seed: u64,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            dwell_min: 5,
            dwell_max: 25,
            frame_noise: 0.4,
            frame_correlation: 0.5,
            session_noise: 0.15,
            wall_prob: 0.05,
            seed: 1,
        }
    }
}

impl SessionParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dwell_min < 1 || self.dwell_min > self.dwell_max {
            return Err(SynthError::Params(format!(
                "need 1 <= dwell_min <= dwell_max, got {}..{}",
                self.dwell_min, self.dwell_max
            )));
        }
        if !(self.frame_noise >= 0.0 && self.session_noise >= 0.0) {
            return Err(SynthError::Params("noise levels must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.wall_prob) {
            return Err(SynthError::Params("wall_prob must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.frame_correlation) {
            return Err(SynthError::Params(
                "frame_correlation must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Standard normal vector scaled to unit expected norm.
fn gaussian(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = 1.0 / (DESCRIPTOR_DIM as f64).sqrt();
    (0..DESCRIPTOR_DIM)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

/// Rectified gaussian: a sparse non-negative direction.
fn random_rectified(rng: &mut ChaCha8Rng) -> Descriptor {
    loop {
        let v: Vec<f64> = gaussian(rng).into_iter().map(|x| x.max(0.0)).collect();
        if let Ok(d) = Descriptor::normalize_f64(&v) {
            return d;
        }
    }
}

/// `normalize(|base + scale · g|)` for a fresh gaussian `g`.
fn perturb(base: &Descriptor, scale: f64, rng: &mut ChaCha8Rng) -> Descriptor {
    perturb_with(base, scale, gaussian(rng))
}

fn perturb_with(base: &Descriptor, scale: f64, noise: Vec<f64>) -> Descriptor {
    let v: Vec<f64> = base
        .values()
        .iter()
        .zip(noise)
        .map(|(&b, g)| (f64::from(b) + scale * g).abs())
        .collect();
    Descriptor::normalize_f64(&v).unwrap_or_else(|_| base.clone())
}

pub fn generate_world(params: &WorldParams) -> Result<World, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cap = params.similarity_cap();
    let mut latents: Vec<Descriptor> = Vec::with_capacity(params.n_places);
    for place in 0..params.n_places {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let candidate = random_rectified(&mut rng);
            if latents.iter().all(|l| similarity(l, &candidate) <= cap) {
                accepted = Some(candidate);
                break;
            }
        }
        latents.push(accepted.ok_or(SynthError::Separation { place, cap })?);
    }
    let region_of = (0..params.n_places)
        .map(|p| p * params.n_regions / params.n_places)
        .collect();
    Ok(World {
        params: *params,
        latents,
        region_of,
    })
}

/// Ground-truth label of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlaceRepr", into = "PlaceRepr")]
pub enum PlaceLabel {
    Place(usize),
    Wall,
}

impl PlaceLabel {
    pub fn place(self) -> Option<usize> {
        match self {
            Self::Place(p) => Some(p),
            Self::Wall => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PlaceRepr {
    Id(usize),
    Tag(String),
}

impl TryFrom<PlaceRepr> for PlaceLabel {
    type Error = String;

    fn try_from(value: PlaceRepr) -> Result<Self, Self::Error> {
        match value {
            PlaceRepr::Id(p) => Ok(Self::Place(p)),
            PlaceRepr::Tag(t) if t == "WALL" => Ok(Self::Wall),
            PlaceRepr::Tag(t) => Err(format!("expected a place id or \"WALL\", found {t:?}")),
        }
    }
}

impl From<PlaceLabel> for PlaceRepr {
    fn from(value: PlaceLabel) -> Self {
        match value {
            PlaceLabel::Place(p) => Self::Id(p),
            PlaceLabel::Wall => Self::Tag("WALL".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFrame {
    pub frame_id: FrameId,
    pub place: PlaceLabel,
    pub region: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    frames: Vec<TruthFrame>,
    index: BTreeMap<FrameId, usize>,
    pub regions: BTreeMap<usize, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthDoc {
    format: String,
    frames: Vec<TruthFrame>,
    #[serde(default)]
    regions: BTreeMap<usize, String>,
}

impl GroundTruth {
    pub fn new(
        frames: Vec<TruthFrame>,
        regions: BTreeMap<usize, String>,
    ) -> Result<Self, SynthError> {
        let mut index = BTreeMap::new();
        for (k, f) in frames.iter().enumerate() {
            if index.insert(f.frame_id, k).is_some() {
                return Err(SynthError::Schema {
                    path: format!("frames[{k}].frame_id"),
                    message: format!("frame {} labeled twice", f.frame_id),
                });
            }
            if f.place == PlaceLabel::Wall && f.region.is_some() {
                return Err(SynthError::Schema {
                    path: format!("frames[{k}].region"),
                    message: "WALL frames have a null region".into(),
                });
            }
        }
        Ok(Self {
            frames,
            index,
            regions,
        })
    }

    pub fn frames(&self) -> &[TruthFrame] {
        &self.frames
    }

    pub fn get(&self, frame_id: FrameId) -> Option<&TruthFrame> {
        self.index.get(&frame_id).map(|&k| &self.frames[k])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Region of a place, looked up from any frame carrying it.
    pub fn region_of_place(&self, place: usize) -> Option<usize> {
        self.frames
            .iter()
            .find(|f| f.place == PlaceLabel::Place(place))
            .and_then(|f| f.region)
    }

    pub fn to_json(&self) -> String {
        let doc = TruthDoc {
            format: TRUTH_FORMAT.to_string(),
            frames: self.frames.clone(),
            regions: self.regions.clone(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("truth serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: TruthDoc =
            serde_path_to_error::deserialize(de).map_err(|e| SynthError::Schema {
                path: e.path().to_string(),
                message: e.into_inner().to_string(),
            })?;
        if doc.format != TRUTH_FORMAT {
            return Err(SynthError::Schema {
                path: "format".into(),
                message: format!("expected {TRUTH_FORMAT:?}, found {:?}", doc.format),
            });
        }
        Self::new(doc.frames, doc.regions)
    }
}

pub fn save_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<(), SynthError> {
    fs::write(path, truth.to_json())?;
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth, SynthError> {
    GroundTruth::from_json(&fs::read_to_string(path)?)
}

/// Seed of the `session`-th pass (1-based) through the world seeded with `world_seed`.
pub fn session_seed(world_seed: u64, session: usize) -> u64 {
    world_seed.wrapping_mul(1000).wrapping_add(session as u64)
}

/// Emits one pass over the world's places in order.
pub fn generate_session(
    world: &World,
    params: &SessionParams,
) -> Result<(DescriptorSet, GroundTruth), SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    let mut next_id: FrameId = 0;
    let mut emit = |descriptor: Descriptor, place: PlaceLabel, region: Option<usize>| {
        frames.push(Frame::new(next_id, descriptor));
        truth.push(TruthFrame {
            frame_id: next_id,
            place,
            region,
        });
        next_id += 1;
    };

    for (place, latent) in world.latents.iter().enumerate() {
        let anchor = perturb(latent, params.session_noise, &mut rng);
        let dwell = rng.random_range(params.dwell_min..=params.dwell_max);
        let rho = params.frame_correlation;
        let fresh = (1.0 - rho * rho).sqrt();
        let mut noise = gaussian(&mut rng);
        for k in 0..dwell {
            if rng.random::<f64>() < params.wall_prob {
                emit(random_rectified(&mut rng), PlaceLabel::Wall, None);
            }
            if k > 0 {
                noise = noise
                    .iter()
                    .zip(gaussian(&mut rng))
                    .map(|(prev, g)| rho * prev + fresh * g)
                    .collect();
            }
            let frame = perturb_with(&anchor, params.frame_noise, noise.clone());
            emit(
                frame,
                PlaceLabel::Place(place),
                Some(world.region_of[place]),
            );
        }
    }

    let set = DescriptorSet::new(frames).expect("ids are sequential");
    let truth = GroundTruth::new(truth, world.region_names())?;
    Ok((set, truth))
}
