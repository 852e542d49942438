//! Multi-scale backbone: an `L`-level temporal pyramid with per-level halving,
//! and the bookkeeping between flat pyramid indices and level coordinates.
//!
//! Level `l` (1-based) has length `T_pad / 2^(l-1)` where `T_pad` is the input
//! length right-padded with zeros to a multiple of `2^(L-1)`. The flat axis
//! concatenates levels in order; a snippet at within-level position `p` on
//! level `l` sits at level-1 coordinate `p · 2^(l-1)`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Graph, NodeId, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidLayout {
    lengths: Vec<usize>,
    offsets: Vec<usize>,
}

/// Where a flat index lives: 1-based `level`, within-level `pos`, and
/// `scale = 2^(level-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelPos {
    pub level: usize,
    pub pos: usize,
    pub scale: usize,
}

impl LevelPos {
    /// Level-1 coordinate of the snippet.
    pub fn coord(&self) -> f64 {
        (self.pos * self.scale) as f64
    }
}

/// Input length after right-padding to a multiple of `2^(levels-1)`.
pub fn padded_len(len: usize, levels: usize) -> usize {
    let m = 1usize << (levels - 1);
    len.div_ceil(m) * m
}

impl PyramidLayout {
    /// Layout for an input of `len` snippets.
    pub fn new(len: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
        }
        if levels > 30 || len < (1usize << (levels - 1)) {
            return Err(Error::TooShort {
                length: len,
                levels,
            });
        }
        let base = padded_len(len, levels);
        let lengths: Vec<usize> = (0..levels).map(|l| base >> l).collect();
        let offsets = lengths
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        Ok(Self { lengths, offsets })
    }

    pub fn levels(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// `T_pad`, the level-1 length.
    pub fn padded_len(&self) -> usize {
        self.lengths[0]
    }

    /// `T_ms`, the total flat length.
    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Flat index range of the 1-based `level`.
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        let o = self.offsets[level - 1];
        o..o + self.lengths[level - 1]
    }

    pub fn flat_to_level(&self, t: usize) -> Result<LevelPos> {
        if t >= self.total() {
            return Err(Error::OutOfRange {
                index: t,
                len: self.total(),
            });
        }
        let l = self.offsets.partition_point(|&o| o <= t) - 1;
        Ok(LevelPos {
            level: l + 1,
            pos: t - self.offsets[l],
            scale: 1 << l,
        })
    }

    pub fn level_to_flat(&self, level: usize, pos: usize) -> Result<usize> {
        if level == 0 || level > self.levels() || pos >= self.lengths[level - 1] {
            return Err(Error::OutOfRange {
                index: pos,
                len: self.lengths.get(level.wrapping_sub(1)).copied().unwrap_or(0),
            });
        }
        Ok(self.offsets[level - 1] + pos)
    }

    /// All flat positions in order; cheaper than repeated `flat_to_level`.
    pub fn positions(&self) -> Vec<LevelPos> {
        let mut out = Vec::with_capacity(self.total());
        for (l, &n) in self.lengths.iter().enumerate() {
            for pos in 0..n {
                out.push(LevelPos {
                    level: l + 1,
                    pos,
                    scale: 1 << l,
                });
            }
        }
        out
    }
}

/// Concatenated pyramid features `T_ms × D_ms`.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeatures {
    pub layout: PyramidLayout,
    pub values: Tensor,
}

impl PyramidFeatures {
    pub fn level(&self, level: usize) -> Tensor {
        let r = self.layout.level_range(level);
        self.values.slice_rows(r.start, r.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsbConfig {
    pub levels: usize,
    pub width: usize,
}

/// Adds the backbone parameters for `input_dim`-dimensional snippet features.
pub fn init_params(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    input_dim: usize,
    cfg: &MsbConfig,
) -> Result<()> {
    params.init_conv(rng, "msb.embed", 3, input_dim, cfg.width)?;
    for l in 1..=cfg.levels {
        if l > 1 {
            params.init_conv(rng, &format!("msb.l{l}.down"), 3, cfg.width, cfg.width)?;
        }
        params.init_conv(rng, &format!("msb.l{l}.ctx"), 3, cfg.width, cfg.width)?;
    }
    Ok(())
}

/// Records the pyramid on `g`. `padded` must already be padded to the layout.
/// Returns one node per level.
pub fn pyramid_nodes(g: &mut Graph<'_>, padded: NodeId, levels: usize) -> Result<Vec<NodeId>> {
    let mut out = Vec::with_capacity(levels);
    let e = g.conv_named(padded, "msb.embed", 1, 1)?;
    let mut h = g.relu(e);
    for l in 1..=levels {
        if l > 1 {
            let d = g.conv_named(h, &format!("msb.l{l}.down"), 2, 1)?;
            h = g.relu(d);
        }
        let c = g.conv_named(h, &format!("msb.l{l}.ctx"), 1, 1)?;
        h = g.relu(c);
        out.push(h);
    }
    Ok(out)
}

/// Runs the backbone on a `T × D` feature sequence.
pub fn build_pyramid(features: &Tensor, params: &ParamSet, levels: usize) -> Result<PyramidFeatures> {
    let layout = PyramidLayout::new(features.rows(), levels)?;
    let mut g = Graph::new(params);
    let x = g.input(features.pad_rows(layout.padded_len()));
    let nodes = pyramid_nodes(&mut g, x, levels)?;
    let parts: Vec<&Tensor> = nodes.iter().map(|&n| g.value(n)).collect();
    for (p, &want) in parts.iter().zip(layout.lengths()) {
        debug_assert_eq!(p.rows(), want);
    }
    let values = Tensor::concat_rows(&parts)?;
    Ok(PyramidFeatures { layout, values })
}
