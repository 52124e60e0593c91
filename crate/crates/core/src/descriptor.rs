//! Global image descriptors, the dot-product similarity, and the `CMD1`
//! binary descriptor file.
//!
//! A descriptor file is little-endian:
//!
//! ```text
//! "CMD1" | count: u32 | dimension: u32 | padding: u32 (0)
//! count × ( frame_id: u32 | dimension × f32 )
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

/// Number of components in every descriptor.
pub const DESCRIPTOR_DIM: usize = 512;

/// Maximum deviation of a stored descriptor's Euclidean norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-5;

const MAGIC: &[u8; 4] = b"CMD1";
const HEADER_LEN: usize = 16;

/// Identifier of a frame within one sequence.
pub type FrameId = u32;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptor has {found} components, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("descriptor contains a non-finite component")]
    NonFinite,
    #[error("descriptor norm {norm} is not 1 within {NORM_TOLERANCE}")]
    NotUnit { norm: f64 },
    #[error("bad magic {found:?}, expected \"CMD1\"")]
    BadMagic { found: [u8; 4] },
    #[error("file is {found} bytes, header announces {expected}")]
    Truncated { expected: u64, found: u64 },
    #[error("frame id {current} at record {index} does not follow {previous}")]
    FrameOrder {
        index: usize,
        previous: FrameId,
        current: FrameId,
    },
    #[error("invalid descriptor at record {index} (frame {frame_id}): {source}")]
    Record {
        index: usize,
        frame_id: FrameId,
        #[source]
        source: Box<DescriptorError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A unit-norm global descriptor of fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(Box<[f32]>);

impl Descriptor {
    /// Wraps `values` after checking dimension, finiteness and unit norm.
    pub fn new(values: Vec<f32>) -> Result<Self, DescriptorError> {
        check_dimension(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DescriptorError::NotUnit { norm });
        }
        Ok(Self(values.into_boxed_slice()))
    }

    /// Scales `values` to unit Euclidean norm.
    pub fn normalize(values: &[f32]) -> Result<Self, DescriptorError> {
        check_dimension(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        let norm = l2_norm(values);
        if norm == 0.0 {
            return Err(DescriptorError::ZeroVector);
        }
        Ok(Self(
            values
                .iter()
                .map(|&v| (f64::from(v) / norm) as f32)
                .collect(),
        ))
    }

    /// Same as [`Descriptor::normalize`] for a vector built in double precision.
    pub fn normalize_f64(values: &[f64]) -> Result<Self, DescriptorError> {
        check_dimension(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(DescriptorError::ZeroVector);
        }
        Ok(Self(values.iter().map(|&v| (v / norm) as f32).collect()))
    }

    /// Unit vector along axis `axis`.
    pub fn basis(axis: usize) -> Self {
        let mut values = vec![0.0; DESCRIPTOR_DIM];
        values[axis] = 1.0;
        Self(values.into_boxed_slice())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

fn check_dimension(found: usize) -> Result<(), DescriptorError> {
    if found != DESCRIPTOR_DIM {
        return Err(DescriptorError::Dimension {
            expected: DESCRIPTOR_DIM,
            found,
        });
    }
    Ok(())
}

fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Dot product of two descriptors, accumulated in 64 bits. Not clamped.
pub fn similarity(a: &Descriptor, b: &Descriptor) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.0.iter()
        .zip(b.0.iter())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Checked variant of [`similarity`] for raw slices of unknown provenance.
pub fn try_similarity(a: &[f32], b: &[f32]) -> Result<f64, DescriptorError> {
    if a.len() != b.len() {
        return Err(DescriptorError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub frame_id: FrameId,
    pub descriptor: Descriptor,
}

impl Frame {
    pub fn new(frame_id: FrameId, descriptor: Descriptor) -> Self {
        Self {
            frame_id,
            descriptor,
        }
    }
}

/// An ordered stream of frames with strictly increasing ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorSet {
    frames: Vec<Frame>,
}

impl DescriptorSet {
    pub fn new(frames: Vec<Frame>) -> Result<Self, DescriptorError> {
        for (index, pair) in frames.windows(2).enumerate() {
            if pair[1].frame_id <= pair[0].frame_id {
                return Err(DescriptorError::FrameOrder {
                    index: index + 1,
                    previous: pair[0].frame_id,
                    current: pair[1].frame_id,
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, frame_id: FrameId) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.frame_id)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    /// Serialized `CMD1` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let record_len = 4 + 4 * DESCRIPTOR_DIM;
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len() * record_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        out.extend_from_slice(&(DESCRIPTOR_DIM as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for frame in &self.frames {
            out.extend_from_slice(&frame.frame_id.to_le_bytes());
            for v in frame.descriptor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses `CMD1` bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DescriptorError> {
        if bytes.len() < HEADER_LEN {
            return Err(DescriptorError::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
        if &magic != MAGIC {
            return Err(DescriptorError::BadMagic { found: magic });
        }
        let count = read_u32(bytes, 4) as usize;
        let dim = read_u32(bytes, 8) as usize;
        check_dimension(dim)?;
        let record_len = 4 + 4 * dim;
        let expected = HEADER_LEN as u64 + count as u64 * record_len as u64;
        if bytes.len() as u64 != expected {
            return Err(DescriptorError::Truncated {
                expected,
                found: bytes.len() as u64,
            });
        }

        let mut frames = Vec::with_capacity(count);
        for (index, record) in bytes[HEADER_LEN..].chunks_exact(record_len).enumerate() {
            let frame_id = read_u32(record, 0);
            let values = record[4..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            let descriptor = Descriptor::new(values).map_err(|e| DescriptorError::Record {
                index,
                frame_id,
                source: Box::new(e),
            })?;
            frames.push(Frame::new(frame_id, descriptor));
        }
        Self::new(frames)
    }
}

impl<'a> IntoIterator for &'a DescriptorSet {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet, DescriptorError> {
    let bytes = fs::read(path)?;
    DescriptorSet::from_bytes(&bytes)
}

pub fn save_descriptors(
    set: &DescriptorSet,
    path: impl AsRef<Path>,
) -> Result<(), DescriptorError> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&set.to_bytes())?;
    file.flush()?;
    Ok(())
}
