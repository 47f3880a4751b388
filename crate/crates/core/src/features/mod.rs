//! Per-image keypoints and 128-d descriptors, synthetic scenes and the
//! binary feature file format.

mod io;
mod synth;

pub use io::{
    read_correspondences, read_features, read_pairs, write_correspondences, write_features,
    write_pairs, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synth::{generate_synthetic, Correspondence, GroundTruth, SyntheticScene, IMAGE_SIZE};

use std::f32::consts::TAU;
use thiserror::Error;

/// Descriptor dimensionality (SIFT layout).
pub const DESCRIPTOR_DIM: usize = 128;

pub type ImageId = u64;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("descriptor has no non-zero component")]
    ZeroVector,
    #[error("descriptor component {0} is not finite")]
    NonFinite(usize),
    #[error("descriptor dimension {0}, expected 128")]
    BadDimension(usize),
    #[error("keypoint scale must be > 0, got {0}")]
    BadScale(f32),
    #[error("keypoint coordinate is not finite")]
    BadCoordinate,
    #[error("{keypoints} keypoints but {descriptors} descriptors")]
    LengthMismatch {
        keypoints: usize,
        descriptors: usize,
    },
    #[error("invalid synthetic scene: {0}")]
    InvalidScene(String),
    #[error("format error: {0}")]
    FormatError(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Keypoint geometry in pixels; orientation kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub orientation: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32, scale: f32, orientation: f32) -> Result<Self, FeatureError> {
        if !x.is_finite() || !y.is_finite() || !orientation.is_finite() {
            return Err(FeatureError::BadCoordinate);
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(FeatureError::BadScale(scale));
        }
        Ok(Self {
            x,
            y,
            scale,
            orientation: wrap_angle(orientation),
        })
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

pub(crate) fn wrap_angle(a: f32) -> f32 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// A unit-norm 128-component descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub(crate) [f32; DESCRIPTOR_DIM]);

impl Descriptor {
    /// Wraps values that are already known to be normalized (e.g. read back from disk).
    pub fn from_raw_unchecked(values: [f32; DESCRIPTOR_DIM]) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn values(&self) -> &[f32; DESCRIPTOR_DIM] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Scales a raw 128-vector to unit L2 norm.
pub fn normalize(raw: &[f32]) -> Result<Descriptor, FeatureError> {
    if raw.len() != DESCRIPTOR_DIM {
        return Err(FeatureError::BadDimension(raw.len()));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(i));
    }
    let norm = raw
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(FeatureError::ZeroVector);
    }
    let mut out = [0f32; DESCRIPTOR_DIM];
    for (o, &v) in out.iter_mut().zip(raw) {
        *o = (v as f64 / norm) as f32;
    }
    Ok(Descriptor(out))
}

pub(crate) fn normalize_f64(raw: &[f64]) -> Result<Descriptor, FeatureError> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(FeatureError::ZeroVector);
    }
    let mut out = [0f32; DESCRIPTOR_DIM];
    for (o, &v) in out.iter_mut().zip(raw) {
        *o = (v / norm) as f32;
    }
    Ok(Descriptor(out))
}

/// All features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    image_id: ImageId,
    keypoints: Vec<Keypoint>,
    descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn new(
        image_id: ImageId,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<Descriptor>,
    ) -> Result<Self, FeatureError> {
        if keypoints.len() != descriptors.len() {
            return Err(FeatureError::LengthMismatch {
                keypoints: keypoints.len(),
                descriptors: descriptors.len(),
            });
        }
        Ok(Self {
            image_id,
            keypoints,
            descriptors,
        })
    }

    pub fn empty(image_id: ImageId) -> Self {
        Self {
            image_id,
            keypoints: Vec::new(),
            descriptors: Vec::new(),
        }
    }

    pub fn image_id(&self) -> ImageId {
        self.image_id
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.keypoints.iter().map(Keypoint::position).collect()
    }
}

/// Mean descriptor over any number of feature sets; zero vector when there are no features.
pub fn mean_descriptor<'a>(
    sets: impl IntoIterator<Item = &'a FeatureSet>,
) -> [f32; DESCRIPTOR_DIM] {
    let mut acc = [0f64; DESCRIPTOR_DIM];
    let mut count = 0usize;
    for fs in sets {
        for d in fs.descriptors() {
            for (a, &v) in acc.iter_mut().zip(d.values()) {
                *a += v as f64;
            }
            count += 1;
        }
    }
    let mut out = [0f32; DESCRIPTOR_DIM];
    if count > 0 {
        for (o, a) in out.iter_mut().zip(acc) {
            *o = (a / count as f64) as f32;
        }
    }
    out
}
