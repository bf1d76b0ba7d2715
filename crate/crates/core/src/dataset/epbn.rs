//! EPBN: the little-endian binary container exchanged with the converter.
//!
//! ```text
//! "EPBN" | version u16 | fs u16 | count u32
//! count x { id_len u16 | id utf-8 | n u32 | ppg f32 x n | abp f32 x n }
//! optional: "NRM1" | ppg_mean ppg_std abp_mean abp_std (f64)
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{Episode, EpisodeSet, NormalizationSpec};
use crate::error::{Error, Result};

pub const EPBN_MAGIC: &[u8; 4] = b"EPBN";
pub const EPBN_VERSION: u16 = 1;
pub const NRM_MARKER: &[u8; 4] = b"NRM1";

fn u16_le(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn u32_le(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn f32_block(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Parses an EPBN byte image.
///
/// Truncation inside an episode or the trailer surfaces as [`Error::Io`]; a
/// payload that ends cleanly but short of the declared count is a
/// [`Error::Format`] error.
pub fn read_episodes(bytes: &[u8]) -> Result<EpisodeSet> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)?;
    if &magic != EPBN_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u16_le(&mut cur)?;
    if version != EPBN_VERSION {
        return Err(Error::Format(format!("unsupported EPBN version {version}")));
    }
    let fs = u16_le(&mut cur)?;
    if fs == 0 {
        return Err(Error::Format("sample rate is zero".into()));
    }
    let count = u32_le(&mut cur)? as usize;

    let mut episodes = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        if cur.position() as usize == bytes.len() {
            return Err(Error::Format(format!(
                "header declares {count} episodes, payload holds {i}"
            )));
        }
        let id_len = u16_le(&mut cur)? as usize;
        let mut id = vec![0u8; id_len];
        cur.read_exact(&mut id)?;
        let subject_id = String::from_utf8(id).map_err(|e| Error::Format(format!("episode {i}: subject id: {e}")))?;
        let n = u32_le(&mut cur)? as usize;
        if n.saturating_mul(8) > bytes.len() - cur.position() as usize {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("episode {i} declares {n} samples past end of file"),
            )));
        }
        let ppg = f32_block(&mut cur, n)?;
        let abp = f32_block(&mut cur, n)?;
        episodes.push(Episode {
            subject_id,
            fs,
            ppg,
            abp,
        });
    }

    let rest = &bytes[cur.position() as usize..];
    let norm = if rest.is_empty() {
        None
    } else if rest.starts_with(NRM_MARKER) {
        let mut tail = Cursor::new(&rest[4..]);
        let mut vals = [0f64; 4];
        for v in &mut vals {
            let mut b = [0u8; 8];
            tail.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        if tail.position() as usize != rest.len() - 4 {
            return Err(Error::Format("trailing bytes after normalization block".into()));
        }
        Some(NormalizationSpec {
            ppg_mean: vals[0],
            ppg_std: vals[1],
            abp_mean: vals[2],
            abp_std: vals[3],
        })
    } else {
        return Err(Error::Format(format!(
            "{} trailing bytes after last episode",
            rest.len()
        )));
    };

    Ok(EpisodeSet {
        episodes,
        provenance: String::new(),
        norm,
    })
}

/// Serialises to EPBN. Samples are narrowed to f32.
pub fn write_episodes(set: &EpisodeSet) -> Result<Vec<u8>> {
    let fs = set.fs();
    let mut out = Vec::new();
    out.extend_from_slice(EPBN_MAGIC);
    out.extend_from_slice(&EPBN_VERSION.to_le_bytes());
    out.extend_from_slice(&fs.to_le_bytes());
    let count = u32::try_from(set.len()).map_err(|_| Error::Format("too many episodes".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (i, e) in set.episodes.iter().enumerate() {
        if e.fs != fs {
            return Err(Error::Format(format!(
                "episode {i} has fs {} but the set uses {fs}",
                e.fs
            )));
        }
        if e.ppg.len() != e.abp.len() {
            return Err(Error::Dimension(format!("episode {i}: ppg/abp length mismatch")));
        }
        let id = e.subject_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("episode {i}: id too long")))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        let n = u32::try_from(e.len()).map_err(|_| Error::Format(format!("episode {i}: too long")))?;
        out.extend_from_slice(&n.to_le_bytes());
        for v in e.ppg.iter().chain(&e.abp) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(n) = set.norm {
        out.extend_from_slice(NRM_MARKER);
        for v in [n.ppg_mean, n.ppg_std, n.abp_mean, n.abp_std] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<EpisodeSet> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut set = read_episodes(&bytes)?;
    set.provenance = path.display().to_string();
    Ok(set)
}

pub fn store_episodes(path: impl AsRef<Path>, set: &EpisodeSet) -> Result<()> {
    let bytes = write_episodes(set)?;
    fs::write(path, bytes)?;
    Ok(())
}
