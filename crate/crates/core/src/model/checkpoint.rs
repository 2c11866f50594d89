//! Binary checkpoint format.
//!
//! ```text
//! "CNET" | version: u16 LE | payload | crc32(payload): u32 LE
//! payload = 6 × f64 LE normalization statistics
//!           then 12 parameter tensors, each: rank u32 LE, rank × extent u32 LE,
//!           product(extents) × f64 LE
//! ```
//!
//! Tensors appear in [`CoilNet::params`] order. Channel widths are recovered
//! from the stored extents.

use std::fs;
use std::path::Path;

use super::{CoilNet, NormStats};
use crate::error::{Error, Result};
use crate::ops::{ConvKernel, DenseLayer, PoolMode, PoolSpec};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNET";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 6;
const CRC_LEN: usize = 4;
const PARAM_TENSORS: usize = 12;
const MAX_RANK: usize = 4;

pub fn to_bytes(net: &CoilNet) -> Vec<u8> {
    let mut payload = Vec::with_capacity(net.num_parameters() * 8 + 256);
    for v in net.norm_stats.to_array() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for t in net.params() {
        payload.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            payload.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<CoilNet> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::Checkpoint(format!("file is truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            std::str::from_utf8(CHECKPOINT_MAGIC).unwrap()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (this build reads version {CHECKPOINT_VERSION})"
        )));
    }
    let (payload, crc) = bytes[HEADER_LEN..].split_at(bytes.len() - HEADER_LEN - CRC_LEN);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let mut stats = [0.0; 6];
    for s in &mut stats {
        *s = r.f64()?;
    }
    let norm_stats = NormStats::from_array(stats);
    if [norm_stats.std_log_l, norm_stats.std_log_q, norm_stats.std_log_f]
        .iter()
        .any(|s| !(*s > 0.0))
    {
        return Err(Error::Checkpoint("normalization spread is not positive".into()));
    }
    let mut tensors = Vec::with_capacity(PARAM_TENSORS);
    for _ in 0..PARAM_TENSORS {
        tensors.push(r.tensor()?);
    }
    if r.pos != payload.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected trailing bytes",
            payload.len() - r.pos
        )));
    }

    let mut it = tensors.into_iter();
    let mut next = || it.next().unwrap();
    let pool = PoolSpec::new((2, 2), PoolMode::Max);
    let mut conv = || -> Result<super::ConvBlock> {
        let kernel = ConvKernel::new(next(), next()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(super::ConvBlock { kernel, pool })
    };
    let conv_blocks = [conv()?, conv()?, conv()?];
    let mut dense = || DenseLayer::new(next(), next()).map_err(|e| Error::Checkpoint(e.to_string()));
    let freq_embed = dense()?;
    let decoder_fc1 = dense()?;
    let decoder_fc2 = dense()?;
    let net = CoilNet {
        conv_blocks,
        freq_embed,
        decoder_fc1,
        decoder_fc2,
        norm_stats,
    };
    net.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(net)
}

pub fn save(net: &CoilNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load(path: impl AsRef<Path>) -> Result<CoilNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "payload truncated at byte {} (wanted {n} more)",
                HEADER_LEN + self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n > 0 && n <= (self.buf.len() - self.pos) / 8)
            .ok_or_else(|| Error::Checkpoint(format!("tensor extents {shape:?} exceed the payload")))?;
        let raw = self.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
