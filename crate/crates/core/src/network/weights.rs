//! BPNW weight files.
//!
//! ```text
//! "BPNW" | version u16 | config_len u32 | config (key=value lines, UTF-8)
//! | count u32 | count x { name_len u16 | name | rank u8 | extents u32 x rank | f32 values }
//! ```
//!
//! Batch-norm running statistics are stored as `<prefix>.running_mean` and
//! `<prefix>.running_var`. The normalization used in training rides along in
//! the config block as `norm.*` keys.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{build_bpnet, NetworkConfig, ParameterSet};
use crate::autodiff::Tensor;
use crate::dataset::NormalizationSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BPNW_MAGIC: &[u8; 4] = b"BPNW";
pub const BPNW_VERSION: u16 = 1;

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile<T> {
    pub config: NetworkConfig,
    pub params: ParameterSet<T>,
    pub norm: Option<NormalizationSpec>,
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[T]) -> Result<()> {
    put_name(out, name)?;
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: extent too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    Ok(())
}

pub fn encode_weights<T: Scalar>(
    config: &NetworkConfig,
    params: &ParameterSet<T>,
    norm: Option<&NormalizationSpec>,
) -> Result<Vec<u8>> {
    let mut text = String::new();
    let mut pairs = config.to_pairs();
    if let Some(n) = norm {
        for (k, v) in [
            ("ppg_mean", n.ppg_mean),
            ("ppg_std", n.ppg_std),
            ("abp_mean", n.abp_mean),
            ("abp_std", n.abp_std),
        ] {
            pairs.push((format!("norm.{k}"), format!("{v:?}")));
        }
    }
    for (k, v) in pairs {
        text.push_str(&format!("{k}={v}\n"));
    }

    let mut out = Vec::new();
    out.extend_from_slice(BPNW_MAGIC);
    out.extend_from_slice(&BPNW_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let count = params.params.len() + 2 * params.running.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in &params.params {
        put_tensor(&mut out, name, t.shape(), t.data())?;
    }
    for (name, r) in &params.running {
        put_tensor(&mut out, &format!("{name}{RUNNING_MEAN}"), &[r.mean.len()], &r.mean)?;
        put_tensor(&mut out, &format!("{name}{RUNNING_VAR}"), &[r.var.len()], &r.var)?;
    }
    Ok(out)
}

fn take<const N: usize>(cur: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    cur.read_exact(&mut b)?;
    Ok(b)
}

fn take_string(cur: &mut Cursor<&[u8]>, len: usize, what: &str) -> Result<String> {
    let mut b = vec![0u8; len];
    cur.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn norm_from(map: &BTreeMap<String, String>) -> Result<Option<NormalizationSpec>> {
    let keys = ["norm.ppg_mean", "norm.ppg_std", "norm.abp_mean", "norm.abp_std"];
    let present = keys.iter().filter(|k| map.contains_key(**k)).count();
    if present == 0 {
        return Ok(None);
    }
    if present != keys.len() {
        return Err(Error::Format("partial normalization block".into()));
    }
    let v = |k: &str| -> Result<f64> {
        map[k]
            .parse()
            .map_err(|_| Error::Format(format!("config key {k} is not a number")))
    };
    Ok(Some(NormalizationSpec {
        ppg_mean: v(keys[0])?,
        ppg_std: v(keys[1])?,
        abp_mean: v(keys[2])?,
        abp_std: v(keys[3])?,
    }))
}

/// Parses a BPNW image and checks every tensor against the shapes its own
/// config implies.
pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<WeightFile<T>> {
    let mut cur = Cursor::new(bytes);
    let magic: [u8; 4] = take(&mut cur)?;
    if &magic != BPNW_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(take(&mut cur)?);
    if version != BPNW_VERSION {
        return Err(Error::Format(format!("unsupported BPNW version {version}")));
    }
    let text_len = u32::from_le_bytes(take(&mut cur)?) as usize;
    let text = take_string(&mut cur, text_len, "config block")?;
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("config line without '=': {line}")))?;
        map.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let config = NetworkConfig::from_pairs(&map)?;
    config
        .validate()
        .map_err(|e| Error::Format(format!("stored config invalid: {e}")))?;
    let norm = norm_from(&map)?;

    let (_, mut template) = build_bpnet::<T>(&config, 0)?;
    let count = u32::from_le_bytes(take(&mut cur)?) as usize;
    let expected = template.params.len() + 2 * template.running.len();
    if count != expected {
        return Err(Error::Format(format!(
            "file holds {count} tensors, config implies {expected}"
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut cur)?) as usize;
        let name = take_string(&mut cur, name_len, "parameter name")?;
        let rank = take::<1>(&mut cur)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut cur)?) as usize);
        }
        let numel: usize = shape.iter().product();
        if numel.saturating_mul(4) > bytes.len() - cur.position() as usize {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("{name}: values run past end of file"),
            )));
        }
        let mut raw = vec![0u8; numel * 4];
        cur.read_exact(&mut raw)?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        let mismatch = |want: &[usize]| Error::Format(format!("{name}: shape {shape:?}, config implies {want:?}"));
        if let Some(t) = template.params.get_mut(&name) {
            if t.shape() != shape.as_slice() {
                return Err(mismatch(t.shape()));
            }
            *t = Tensor::new(&shape, values)?;
        } else if let Some((prefix, slot)) = running_slot(&name) {
            let r = template
                .running
                .get_mut(prefix)
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
            let target = if slot { &mut r.var } else { &mut r.mean };
            if shape != [target.len()] {
                return Err(mismatch(&[target.len()]));
            }
            *target = values;
        } else {
            return Err(Error::Format(format!("unexpected tensor {name}")));
        }
    }
    if cur.position() as usize != bytes.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(WeightFile {
        config,
        params: template,
        norm,
    })
}

/// `(prefix, is_var)` for running-statistic tensor names.
fn running_slot(name: &str) -> Option<(&str, bool)> {
    name.strip_suffix(RUNNING_MEAN)
        .map(|p| (p, false))
        .or_else(|| name.strip_suffix(RUNNING_VAR).map(|p| (p, true)))
}

pub fn save_weights<T: Scalar>(
    path: impl AsRef<Path>,
    config: &NetworkConfig,
    params: &ParameterSet<T>,
    norm: Option<&NormalizationSpec>,
) -> Result<()> {
    fs::write(path, encode_weights(config, params, norm)?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<WeightFile<T>> {
    decode_weights(&fs::read(path)?)
}
