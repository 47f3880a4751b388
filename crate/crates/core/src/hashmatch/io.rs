//! Match files: a text listing and a little-endian binary form.

use std::fmt::Write as _;
use std::path::Path;

use super::{HashError, MatchStage, PairMatches};

pub const MATCHES_MAGIC: &[u8; 4] = b"BMMT";
pub const MATCHES_VERSION: u32 = 1;

/// Header `# pairs <n> matches <m>`, then one
/// `query_image train_image query_idx train_idx` line per match.
pub fn matches_to_text(all: &[PairMatches]) -> String {
    let total: usize = all.iter().map(PairMatches::len).sum();
    let mut out = format!("# pairs {} matches {}\n", all.len(), total);
    for pm in all {
        for &(qi, ti) in &pm.matches {
            writeln!(out, "{} {} {} {}", pm.pair.0, pm.pair.1, qi, ti).unwrap();
        }
    }
    out
}

/// Groups lines back into per-pair lists (pairs without matches have no
/// lines and are not returned). Stage is reported as `stage`.
pub fn matches_from_text(text: &str, stage: MatchStage) -> Result<Vec<PairMatches>, HashError> {
    let mut out: Vec<PairMatches> = Vec::new();
    let mut declared = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            let f: Vec<&str> = rest.split_whitespace().collect();
            if f.len() >= 2 && f[0] == "pairs" {
                declared = Some(f[1].parse::<usize>().map_err(|_| bad_line(n, line))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let v: Vec<u64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad_line(n, line))?;
        let [a, b, qi, ti] = v[..] else {
            return Err(bad_line(n, line));
        };
        match out.last_mut() {
            Some(pm) if pm.pair == (a, b) => pm.matches.push((qi as usize, ti as usize)),
            _ => out.push(PairMatches::new(
                (a, b),
                vec![(qi as usize, ti as usize)],
                stage,
            )),
        }
    }
    if let Some(d) = declared {
        if out.len() > d {
            return Err(HashError::Format(format!(
                "{} pairs listed, header declares {d}",
                out.len()
            )));
        }
    }
    Ok(out)
}

fn bad_line(n: usize, line: &str) -> HashError {
    HashError::Format(format!("line {}: {line:?}", n + 1))
}

pub fn encode_matches(all: &[PairMatches]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MATCHES_MAGIC);
    b.extend_from_slice(&MATCHES_VERSION.to_le_bytes());
    b.extend_from_slice(&(all.len() as u32).to_le_bytes());
    for pm in all {
        b.extend_from_slice(&pm.pair.0.to_le_bytes());
        b.extend_from_slice(&pm.pair.1.to_le_bytes());
        b.push(match pm.stage {
            MatchStage::Initial => 0,
            MatchStage::Verified => 1,
        });
        b.extend_from_slice(&(pm.matches.len() as u32).to_le_bytes());
        for &(q, t) in &pm.matches {
            b.extend_from_slice(&(q as u32).to_le_bytes());
            b.extend_from_slice(&(t as u32).to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], HashError> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| HashError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HashError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, HashError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_matches(buf: &[u8]) -> Result<Vec<PairMatches>, HashError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MATCHES_MAGIC {
        return Err(HashError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MATCHES_VERSION {
        return Err(HashError::Format(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let pair = (r.u64()?, r.u64()?);
        let stage = match r.take(1)?[0] {
            0 => MatchStage::Initial,
            1 => MatchStage::Verified,
            s => return Err(HashError::Format(format!("bad stage {s}"))),
        };
        let count = r.u32()? as usize;
        let mut matches = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            matches.push((r.u32()? as usize, r.u32()? as usize));
        }
        out.push(PairMatches::new(pair, matches, stage));
    }
    if r.pos != buf.len() {
        return Err(HashError::Format("trailing bytes".into()));
    }
    Ok(out)
}

pub fn write_matches_text(path: impl AsRef<Path>, all: &[PairMatches]) -> Result<(), HashError> {
    std::fs::write(path, matches_to_text(all))?;
    Ok(())
}

pub fn read_matches_text(
    path: impl AsRef<Path>,
    stage: MatchStage,
) -> Result<Vec<PairMatches>, HashError> {
    matches_from_text(&std::fs::read_to_string(path)?, stage)
}

pub fn write_matches_binary(path: impl AsRef<Path>, all: &[PairMatches]) -> Result<(), HashError> {
    std::fs::write(path, encode_matches(all))?;
    Ok(())
}

pub fn read_matches_binary(path: impl AsRef<Path>) -> Result<Vec<PairMatches>, HashError> {
    decode_matches(&std::fs::read(path)?)
}
