//! `UNT1` checkpoints, little-endian:
//!
//! ```text
//! "UNT1" | u32 version | u32 input_size | u32 depth | u32 base_width
//! | u8 channel order | u32 layer count
//! | per layer: u16 name length, name, u8 rank, u32 dims[rank], f32 data
//! ```
//!
//! The fixed-size header can be read without touching the weights.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use deepwarp_core::netpbm::atomic_write;
use deepwarp_core::{Error, Result};

use crate::real::Real;
use crate::tensor::Tensor;
use crate::unet::{UNetConfig, UNetModel};

pub const MAGIC: &[u8; 4] = b"UNT1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 25;
/// Output channel 0 is `phi_i` (rows), channel 1 is `phi_j` (columns).
pub const CHANNELS_PHI_I_FIRST: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: UNetConfig,
    pub channel_order: u8,
    pub layer_count: u32,
}

pub fn encode_model<T: Real>(model: &UNetModel<T>) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * model.param_count() + 64 * model.params.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, c.input_size as u32, c.depth as u32, c.base_width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(CHANNELS_PHI_I_FIRST);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, p) in model.names.iter().zip(&model.params) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn parse_header(cur: &mut Cursor<'_>) -> Result<CheckpointHeader> {
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected \"UNT1\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, supported {VERSION}")));
    }
    let input_size = cur.u32("input size")? as usize;
    let depth = cur.u32("depth")? as usize;
    let base_width = cur.u32("base width")? as usize;
    let channel_order = cur.take(1, "channel order")?[0];
    if channel_order != CHANNELS_PHI_I_FIRST {
        return Err(Error::Format(format!("unknown channel order tag {channel_order}")));
    }
    let layer_count = cur.u32("layer count")?;
    let config = UNetConfig {
        input_size,
        depth,
        base_width,
    };
    config.validate().map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    Ok(CheckpointHeader {
        version,
        config,
        channel_order,
        layer_count,
    })
}

pub fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    parse_header(&mut Cursor { bytes, pos: 0 })
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<UNetModel<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let header = parse_header(&mut cur)?;
    let mut names = Vec::with_capacity(header.layer_count as usize);
    let mut params = Vec::with_capacity(header.layer_count as usize);
    for _ in 0..header.layer_count {
        let len = u16::from_le_bytes(cur.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len, "layer name")?)
            .map_err(|_| Error::Format("layer name is not UTF-8".into()))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(4 * n, &format!("weights of '{name}'"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        params.push(Tensor::new(&shape, data)?);
        names.push(name);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - cur.pos
        )));
    }
    UNetModel::from_parts(header.config, names, params)
}

pub fn save_model<T: Real>(model: &UNetModel<T>, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &encode_model(model))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<UNetModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Reads only the fixed-size header.
pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    f.by_ref()
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode_header(&buf)
}
