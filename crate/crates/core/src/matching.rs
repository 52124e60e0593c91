//! Pairwise feature-match counts between frames.
//!
//! The mapper only needs to know whether two frames share "enough"
//! correspondences. [`MatchCache`] serves counts precomputed by an external
//! matcher; [`SyntheticMatcher`] derives them from descriptor similarity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{similarity, Frame, FrameId};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("no match count for frame pair ({0}, {1})")]
    UnknownPair(FrameId, FrameId),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: pair ({a}, {b}) already has count {existing}, got {count}")]
    Conflict {
        line: usize,
        a: FrameId,
        b: FrameId,
        existing: u32,
        count: u32,
    },
    #[error("invalid synthetic matcher parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Source of pairwise match counts. Implementations must be symmetric and
/// deterministic.
pub trait MatchOracle {
    fn match_count(&self, a: &Frame, b: &Frame) -> Result<u32, MatchError>;
}

impl<T: MatchOracle + ?Sized> MatchOracle for &T {
    fn match_count(&self, a: &Frame, b: &Frame) -> Result<u32, MatchError> {
        (**self).match_count(a, b)
    }
}

fn canonical(a: FrameId, b: FrameId) -> (FrameId, FrameId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Precomputed match counts keyed by unordered frame pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchCache {
    counts: BTreeMap<(FrameId, FrameId), u32>,
}

impl MatchCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a count, returning the previous one for the same pair.
    pub fn insert(&mut self, a: FrameId, b: FrameId, count: u32) -> Option<u32> {
        self.counts.insert(canonical(a, b), count)
    }

    pub fn get(&self, a: FrameId, b: FrameId) -> Option<u32> {
        self.counts.get(&canonical(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((FrameId, FrameId), u32)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    pub fn parse(text: &str) -> Result<Self, MatchError> {
        let mut cache = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.starts_with('#') || raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(' ').collect();
            if fields.len() != 3 {
                return Err(MatchError::Malformed {
                    line,
                    message: format!("expected `<frame_a> <frame_b> <count>`, got {raw:?}"),
                });
            }
            let parse = |s: &str, what: &str| {
                s.parse::<u32>().map_err(|e| MatchError::Malformed {
                    line,
                    message: format!("bad {what} {s:?}: {e}"),
                })
            };
            let a = parse(fields[0], "frame id")?;
            let b = parse(fields[1], "frame id")?;
            let count = parse(fields[2], "count")?;
            if let Some(existing) = cache.get(a, b) {
                if existing != count {
                    return Err(MatchError::Conflict {
                        line,
                        a,
                        b,
                        existing,
                        count,
                    });
                }
            }
            cache.insert(a, b, count);
        }
        Ok(cache)
    }

    /// Canonical text form: smaller id first, pairs in ascending order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((a, b), count) in self.iter() {
            writeln!(out, "{a} {b} {count}").expect("write to String");
        }
        out
    }
}

impl MatchOracle for MatchCache {
    fn match_count(&self, a: &Frame, b: &Frame) -> Result<u32, MatchError> {
        self.get(a.frame_id, b.frame_id).ok_or_else(|| {
            let (x, y) = canonical(a.frame_id, b.frame_id);
            MatchError::UnknownPair(x, y)
        })
    }
}

pub fn load_match_cache(path: impl AsRef<Path>) -> Result<MatchCache, MatchError> {
    MatchCache::parse(&fs::read_to_string(path)?)
}

pub fn save_match_cache(cache: &MatchCache, path: impl AsRef<Path>) -> Result<(), MatchError> {
    fs::write(path, cache.to_text())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMatchParams {
    pub max_matches: u32,
    pub sim_floor: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticMatchParams {
    fn default() -> Self {
        Self {
            max_matches: 400,
            sim_floor: 0.6,
            noise_scale: 10.0,
            seed: 0,
        }
    }
}

impl SyntheticMatchParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.max_matches == 0 {
            return Err(MatchError::InvalidParams("max_matches must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.sim_floor) {
            return Err(MatchError::InvalidParams(
                "sim_floor must lie in [0, 1)".into(),
            ));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(MatchError::InvalidParams(
                "noise_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Match counts as an affine ramp of descriptor similarity above
/// `sim_floor`, plus per-pair seeded integer noise.
#[derive(Clone, Debug)]
pub struct SyntheticMatcher {
    params: SyntheticMatchParams,
}

impl SyntheticMatcher {
    pub fn new(params: SyntheticMatchParams) -> Result<Self, MatchError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &SyntheticMatchParams {
        &self.params
    }

    /// Noise-free part of the count for a given similarity.
    pub fn ramp(&self, sim: f64) -> i64 {
        let p = &self.params;
        let t = ((sim - p.sim_floor) / (1.0 - p.sim_floor)).clamp(0.0, 1.0);
        (f64::from(p.max_matches) * t).round() as i64
    }

    /// Integer noise for an unordered pair, independent of query order.
    pub fn pair_noise(&self, a: FrameId, b: FrameId) -> i64 {
        let scale = self.params.noise_scale;
        if scale == 0.0 {
            return 0;
        }
        let (lo, hi) = canonical(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(self.params.seed, lo, hi));
        rng.random_range(-scale..=scale).round() as i64
    }

    pub fn count_for(&self, sim: f64, a: FrameId, b: FrameId) -> u32 {
        (self.ramp(sim) + self.pair_noise(a, b)).max(0) as u32
    }
}

impl MatchOracle for SyntheticMatcher {
    fn match_count(&self, a: &Frame, b: &Frame) -> Result<u32, MatchError> {
        let sim = similarity(&a.descriptor, &b.descriptor);
        Ok(self.count_for(sim, a.frame_id, b.frame_id))
    }
}

pub fn synthetic_match_count(
    params: &SyntheticMatchParams,
    a: &Frame,
    b: &Frame,
) -> Result<u32, MatchError> {
    SyntheticMatcher::new(*params)?.match_count(a, b)
}

// splitmix64 finalizer over the seed and both ids.
fn pair_seed(seed: u64, lo: FrameId, hi: FrameId) -> u64 {
    let mut z = seed ^ ((u64::from(lo) << 32) | u64::from(hi));
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{Descriptor, DESCRIPTOR_DIM};

    fn frame(id: FrameId, d: Descriptor) -> Frame {
        Frame::new(id, d)
    }

    fn quiet() -> SyntheticMatcher {
        SyntheticMatcher::new(SyntheticMatchParams {
            noise_scale: 0.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn cache_is_symmetric() {
        let mut cache = MatchCache::new();
        cache.insert(3, 7, 142);
        let a = frame(7, Descriptor::basis(0));
        let b = frame(3, Descriptor::basis(0));
        assert_eq!(cache.match_count(&a, &b).unwrap(), 142);
        assert_eq!(cache.match_count(&b, &a).unwrap(), 142);
    }

    #[test]
    fn cache_unknown_pair_names_it() {
        let cache = MatchCache::new();
        let err = cache
            .match_count(
                &frame(9, Descriptor::basis(0)),
                &frame(2, Descriptor::basis(0)),
            )
            .unwrap_err();
        assert!(matches!(err, MatchError::UnknownPair(2, 9)));
    }

    #[test]
    fn parse_examples() {
        assert!(MatchCache::parse("").unwrap().is_empty());
        let cache = MatchCache::parse("# header\n7 3 142\n").unwrap();
        assert_eq!(cache.get(3, 7), Some(142));
        let cache = MatchCache::parse("1 2 5\n2 1 5\n").unwrap();
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match MatchCache::parse("1 2 3\n4 5\n") {
            Err(MatchError::Malformed { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match MatchCache::parse("1 2 3\n# c\n2 1 4\n") {
            Err(MatchError::Conflict { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(MatchCache::parse("1  2 3\n").is_err());
        assert!(MatchCache::parse("1 2 -3\n").is_err());
    }

    #[test]
    fn synthetic_identical_and_orthogonal() {
        let m = quiet();
        let a = frame(0, Descriptor::basis(0));
        let b = frame(1, Descriptor::basis(0));
        let c = frame(2, Descriptor::basis(1));
        assert_eq!(m.match_count(&a, &b).unwrap(), 400);
        assert_eq!(m.match_count(&a, &c).unwrap(), 0);
    }

    #[test]
    fn synthetic_ramp_values() {
        let m = quiet();
        assert_eq!(m.ramp(0.8), 200);
        assert_eq!(m.ramp(0.6), 0);
        assert_eq!(m.ramp(-0.5), 0);
        assert_eq!(m.ramp(1.0), 400);
    }

    #[test]
    fn synthetic_noise_is_per_pair() {
        let m = SyntheticMatcher::new(SyntheticMatchParams {
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let mut values = vec![0.0f32; DESCRIPTOR_DIM];
        values[0] = 0.9;
        values[1] = 0.3;
        let a = frame(4, Descriptor::normalize(&values).unwrap());
        let b = frame(8, Descriptor::basis(0));
        let first = m.match_count(&a, &b).unwrap();
        assert_eq!(first, m.match_count(&b, &a).unwrap());
        assert_eq!(first, m.match_count(&a, &b).unwrap());
        for (x, y) in [(1, 2), (5, 900), (77, 3)] {
            let n = m.pair_noise(x, y);
            assert!((-10..=10).contains(&n));
            assert_eq!(n, m.pair_noise(y, x));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        for p in [
            SyntheticMatchParams {
                max_matches: 0,
                ..Default::default()
            },
            SyntheticMatchParams {
                sim_floor: 1.0,
                ..Default::default()
            },
            SyntheticMatchParams {
                noise_scale: -1.0,
                ..Default::default()
            },
        ] {
            assert!(SyntheticMatcher::new(p).is_err());
        }
    }
}
