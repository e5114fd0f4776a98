//! Writes intermediate feature maps as greyscale tiles.

use std::fmt::Write as _;
use std::path::Path;

use deepwarp_core::netpbm::{atomic_write, save_pgm};
use deepwarp_core::{Error, Image, Result};

use crate::graph::Graph;
use crate::real::Real;
use crate::unet::UNetModel;

/// One dumped level: its 1-based number, layer name and channel count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DumpedLevel {
    pub level: usize,
    pub layer: String,
    pub channels: usize,
}

pub const INDEX_NAME: &str = "levels.txt";

/// Runs a dropout-free forward pass and writes every 3x3 convolution output
/// channel as `level_{n}_chan_{c}.pgm` (levels from 1, channels from 0), each
/// min-max normalized. The last level is the feature block the head reads.
/// `levels.txt` lists `level layer height width channels` per line.
pub fn dump_activations<T: Real>(
    model: &UNetModel<T>,
    s: &Image<T>,
    t: &Image<T>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<DumpedLevel>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut g = Graph::new(&model.params);
    let fv = model.forward(&mut g, s, t, None)?;
    let mut levels = Vec::with_capacity(fv.convs.len());
    let mut index = String::new();
    for (k, (layer, var)) in fv.convs.iter().enumerate() {
        let level = k + 1;
        let act = g.tensor(*var);
        let (h, w, c) = act.hwc();
        for ch in 0..c {
            let tile = act.channel(ch)?.normalize();
            save_pgm(&tile, dir.join(format!("level_{level}_chan_{ch}.pgm")))?;
        }
        writeln!(index, "{level} {layer} {h} {w} {c}").unwrap();
        levels.push(DumpedLevel {
            level,
            layer: layer.clone(),
            channels: c,
        });
    }
    atomic_write(dir.join(INDEX_NAME), index.as_bytes())?;
    Ok(levels)
}
