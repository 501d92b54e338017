//! Parameter checkpoints.
//!
//! Layout, little-endian throughout:
//! `"QLWM" | u16 version | u16 d | u64 epoch | config | u32 tensors |
//! per tensor (u16 name length, name, u64 offset, u32 rows, u32 cols) |
//! u64 scalars | f64 values`.
//! The config block is `u32 hidden, u32 heads, u32 blocks, u32 kernel,
//! u16 distance_cap, f64 lambda_logic, f64 lambda_loss, f64 dropout, u64 seed`.

use super::config::ModelConfig;
use super::model::Stgnn;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::lattice::build_layout;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"QLWM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A model together with the number of epochs it has been trained for.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Stgnn,
    pub epoch: usize,
}

pub fn save_checkpoint(model: &Stgnn, epoch: usize) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layout().distance() as u16).to_le_bytes());
    out.extend_from_slice(&(epoch as u64).to_le_bytes());
    for v in [c.hidden, c.heads, c.blocks, c.kernel] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.distance_cap.to_le_bytes());
    for v in [c.lambda_logic, c.lambda_loss, c.dropout] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    let manifest = model.params.manifest();
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    for (name, off, rows, cols) in &manifest {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(*off as u64).to_le_bytes());
        out.extend_from_slice(&(*rows as u32).to_le_bytes());
        out.extend_from_slice(&(*cols as u32).to_le_bytes());
    }
    let flat = model.params.flatten();
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr(what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr(what)?))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.arr("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let d = r.u16("distance")? as usize;
    let epoch = r.u64("epoch")? as usize;
    let config = ModelConfig {
        hidden: r.u32("config")? as usize,
        heads: r.u32("config")? as usize,
        blocks: r.u32("config")? as usize,
        kernel: r.u32("config")? as usize,
        distance_cap: r.u16("config")?,
        lambda_logic: r.f64("config")?,
        lambda_loss: r.f64("config")?,
        dropout: r.f64("config")?,
        seed: r.u64("config")?,
    };
    config.validate()?;
    let layout = build_layout(d)?;
    let expected = ModelParams::init(&config, layout.num_nodes())?.manifest();
    let count = r.u32("manifest")? as usize;
    if count != expected.len() {
        return Err(Error::Corrupt(format!(
            "manifest lists {count} tensors, configuration has {}",
            expected.len()
        )));
    }
    for want in &expected {
        let len = r.u16("manifest")? as usize;
        let name = std::str::from_utf8(r.take(len, "manifest")?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let off = r.u64("manifest")? as usize;
        let rows = r.u32("manifest")? as usize;
        let cols = r.u32("manifest")? as usize;
        if (name, off, rows, cols) != (want.0.as_str(), want.1, want.2, want.3) {
            return Err(Error::Corrupt(format!(
                "manifest entry {name} at {off} ({rows}x{cols}) does not match {} at {} ({}x{})",
                want.0, want.1, want.2, want.3
            )));
        }
    }
    let n = r.u64("parameter count")? as usize;
    let needed = n.checked_mul(8).ok_or(Error::Truncated("parameters"))?;
    let raw = r.take(needed, "parameters")?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let flat: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ModelParams::from_flat(&config, layout.num_nodes(), &flat)?;
    Ok(Checkpoint {
        model: Stgnn::with_params(config, &layout, params)?,
        epoch,
    })
}
