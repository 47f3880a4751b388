use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    Correspondence, Descriptor, FeatureError, FeatureSet, ImageId, Keypoint, DESCRIPTOR_DIM,
};

pub const FEATURE_MAGIC: &[u8; 4] = b"BMF1";
pub const FEATURE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;
const RECORD_LEN: usize = 4 * (4 + DESCRIPTOR_DIM);

/// Writes a feature set as little-endian `BMF1`.
pub fn write_features(path: impl AsRef<Path>, fs: &FeatureSet) -> Result<(), FeatureError> {
    fs::write(path, encode_features(fs))?;
    Ok(())
}

pub(crate) fn encode_features(fs: &FeatureSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + fs.len() * RECORD_LEN);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&fs.image_id().to_le_bytes());
    buf.extend_from_slice(&(fs.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(DESCRIPTOR_DIM as u32).to_le_bytes());
    for (kp, d) in fs.keypoints().iter().zip(fs.descriptors()) {
        for v in [kp.x, kp.y, kp.scale, kp.orientation] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in d.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet, FeatureError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_features(&bytes).map_err(|e| match e {
        FeatureError::TruncatedFile(m) => {
            FeatureError::TruncatedFile(format!("{}: {m}", path.display()))
        }
        FeatureError::FormatError(m) => {
            FeatureError::FormatError(format!("{}: {m}", path.display()))
        }
        other => other,
    })
}

pub(crate) fn decode_features(bytes: &[u8]) -> Result<FeatureSet, FeatureError> {
    if bytes.len() < 4 {
        return Err(FeatureError::TruncatedFile("missing magic".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(FeatureError::FormatError("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::TruncatedFile("short header".into()));
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(FeatureError::FormatError(format!(
            "unsupported version {version}"
        )));
    }
    let image_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let count = u32_at(bytes, 16) as usize;
    let dim = u32_at(bytes, 20) as usize;
    if dim != DESCRIPTOR_DIM {
        return Err(FeatureError::FormatError(format!("descriptor dim {dim}")));
    }
    let need = HEADER_LEN + count * RECORD_LEN;
    if bytes.len() < need {
        return Err(FeatureError::TruncatedFile(format!(
            "expected {need} bytes, found {}",
            bytes.len()
        )));
    }
    let mut keypoints = Vec::with_capacity(count);
    let mut descriptors = Vec::with_capacity(count);
    for rec in bytes[HEADER_LEN..need].chunks_exact(RECORD_LEN) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        keypoints.push(Keypoint {
            x: f(0),
            y: f(1),
            scale: f(2),
            orientation: f(3),
        });
        let mut values = [0f32; DESCRIPTOR_DIM];
        for (k, v) in values.iter_mut().enumerate() {
            *v = f(4 + k);
        }
        descriptors.push(Descriptor::from_raw_unchecked(values));
    }
    FeatureSet::new(image_id, keypoints, descriptors)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// One `i j` pair per line.
pub fn write_pairs(
    path: impl AsRef<Path>,
    pairs: impl IntoIterator<Item = (ImageId, ImageId)>,
) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (i, j) in pairs {
        writeln!(w, "{i} {j}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(ImageId, ImageId)>, FeatureError> {
    let mut out = Vec::new();
    for line in data_lines(path.as_ref())? {
        let v = parse_fields::<2>(&line)?;
        out.push((v[0], v[1]));
    }
    Ok(out)
}

/// One `pair_i pair_j query_idx train_idx` line per correspondence.
pub fn write_correspondences(
    path: impl AsRef<Path>,
    corrs: &[Correspondence],
) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in corrs {
        writeln!(
            w,
            "{} {} {} {}",
            c.pair.0, c.pair.1, c.query_idx, c.train_idx
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence>, FeatureError> {
    let mut out = Vec::new();
    for line in data_lines(path.as_ref())? {
        let v = parse_fields::<4>(&line)?;
        out.push(Correspondence {
            pair: (v[0], v[1]),
            query_idx: v[2] as usize,
            train_idx: v[3] as usize,
        });
    }
    Ok(out)
}

fn data_lines(path: &Path) -> Result<Vec<String>, FeatureError> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.to_string());
    }
    Ok(out)
}

fn parse_fields<const N: usize>(line: &str) -> Result<[u64; N], FeatureError> {
    let mut out = [0u64; N];
    let mut it = line.split_whitespace();
    for o in out.iter_mut() {
        *o = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FeatureError::FormatError(format!("bad line '{line}'")))?;
    }
    if it.next().is_some() {
        return Err(FeatureError::FormatError(format!(
            "extra fields in '{line}'"
        )));
    }
    Ok(out)
}
