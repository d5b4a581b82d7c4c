//! Binary checkpoints: `"SCNW"`, `u32` version, `u32` tensor count, then per
//! tensor a `u16`-prefixed UTF-8 name, `u8` rank, `u32` dims and `f32` data, all
//! little-endian.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SCNW";
const VERSION: u32 = 1;
/// Prefix of the exponential-moving-average copies stored next to raw weights.
pub const EMA_PREFIX: &str = "ema.";

pub fn write_checkpoint(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let n = name.as_bytes();
        let len = u16::try_from(n.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(n);
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated checkpoint: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// All tensors of a checkpoint in file order.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a weight checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

/// Writes the network's parameters in graph order.
pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    let t: Vec<_> = net.params().iter().map(|p| (p.name.clone(), &p.tensor)).collect();
    write_checkpoint(path, &t)
}

/// Which copy of the weights to load from a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSet {
    Raw,
    Ema,
    /// EMA if the checkpoint has it, raw otherwise.
    Auto,
}

pub fn load_weights(net: &mut Network, path: &Path) -> Result<()> {
    load_weights_as(net, path, WeightSet::Auto)
}

pub fn load_weights_as(net: &mut Network, path: &Path, set: WeightSet) -> Result<()> {
    let all = read_checkpoint(path)?;
    let has_ema = all.iter().any(|(n, _)| n.starts_with(EMA_PREFIX));
    let use_ema = match set {
        WeightSet::Raw => false,
        WeightSet::Ema => true,
        WeightSet::Auto => has_ema,
    };
    let selected: Vec<(String, Tensor)> = all
        .into_iter()
        .filter_map(|(n, t)| match (use_ema, n.strip_prefix(EMA_PREFIX)) {
            (true, Some(s)) => Some((s.to_string(), t)),
            (false, None) => Some((n, t)),
            _ => None,
        })
        .collect();
    let want: BTreeSet<&str> = net.params().iter().map(|p| p.name.as_str()).collect();
    let have: BTreeSet<&str> = selected.iter().map(|(n, _)| n.as_str()).collect();
    if want != have || have.len() != selected.len() {
        return Err(Error::NameMismatch {
            missing: want.difference(&have).map(|s| s.to_string()).collect(),
            unexpected: have.difference(&want).map(|s| s.to_string()).collect(),
        });
    }
    let mut tensors = Vec::with_capacity(selected.len());
    for p in net.params() {
        let (_, t) = selected.iter().find(|(n, _)| *n == p.name).expect("name sets match");
        if t.shape() != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: checkpoint shape {:?}, graph shape {:?}",
                p.name,
                t.shape(),
                p.tensor.shape()
            )));
        }
        tensors.push(t.clone());
    }
    net.set_param_tensors(tensors)
}
