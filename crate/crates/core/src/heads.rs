//! Prediction networks.
//!
//! * coarse boundary classification: per snippet, `W` start bins and `W` end
//!   bins, sigmoid probabilities
//! * boundary refinement: one signed residual per bin, linear
//! * snippet classification on pyramid features, sigmoid per class
//! * video-level (reliable) classification on raw snippet features
//!
//! The pyramid heads are three `k=3` temporal convolutions applied to each
//! level separately with the same weights, then concatenated along the flat
//! axis, so a row's output never depends on which level it sits in.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msb::PyramidFeatures;
use crate::numkit::{Graph, NodeId, ParamSet, Tensor};

/// `W` bins of length `b` laid out from a snippet toward each boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub bins: usize,
    pub coverage: f64,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            bins: 8,
            coverage: 0.25,
        }
    }
}

impl BinGrid {
    pub fn new(bins: usize, coverage: f64) -> Result<Self> {
        if bins == 0 || !(coverage > 0.0 && coverage.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bin grid needs W >= 1 and b > 0, got W = {bins}, b = {coverage}"
            )));
        }
        Ok(Self { bins, coverage })
    }

    /// Center of bin `w`: `w·b + b/2`.
    pub fn center(&self, w: usize) -> f64 {
        w as f64 * self.coverage + self.coverage / 2.0
    }

    /// Total span `W·b` covered by the bins, in level units.
    pub fn span(&self) -> f64 {
        self.bins as f64 * self.coverage
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadsConfig {
    pub width: usize,
    pub bins: usize,
    pub num_classes: usize,
}

/// Per-snippet outputs on the flat pyramid axis.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub p_cs: Tensor,
    pub p_ce: Tensor,
    pub p_rs: Tensor,
    pub p_re: Tensor,
    pub p_sc: Tensor,
}

const STACKS: [&str; 3] = ["ccsm", "rrsm", "cls"];

pub fn init_params(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    pyramid_dim: usize,
    feature_dim: usize,
    cfg: &HeadsConfig,
) -> Result<()> {
    for name in STACKS {
        let out = if name == "cls" {
            cfg.num_classes
        } else {
            2 * cfg.bins
        };
        params.init_conv(rng, &format!("{name}.0"), 3, pyramid_dim, cfg.width)?;
        params.init_conv(rng, &format!("{name}.1"), 3, cfg.width, cfg.width)?;
        params.init_conv(rng, &format!("{name}.2"), 3, cfg.width, out)?;
    }
    params.init_conv(rng, "rcm.0", 3, feature_dim, cfg.width)?;
    params.init_conv(rng, "rcm.1", 3, cfg.width, cfg.num_classes)?;
    Ok(())
}

fn out_channels(params: &ParamSet, prefix: &str) -> Result<usize> {
    let w = params.get(&format!("{prefix}.weight"))?;
    Ok(*w.shape().last().unwrap_or(&0))
}

/// Three convs (relu between) on every level, concatenated. Linear output.
fn stack(g: &mut Graph<'_>, levels: &[NodeId], name: &str) -> Result<NodeId> {
    let mut outs = Vec::with_capacity(levels.len());
    for &x in levels {
        let h = g.conv_named(x, &format!("{name}.0"), 1, 1)?;
        let h = g.relu(h);
        let h = g.conv_named(h, &format!("{name}.1"), 1, 1)?;
        let h = g.relu(h);
        outs.push(g.conv_named(h, &format!("{name}.2"), 1, 1)?);
    }
    g.concat_rows(&outs)
}

fn split_bins(g: &mut Graph<'_>, x: NodeId, bins: usize) -> Result<(NodeId, NodeId)> {
    let cols = g.value(x).cols();
    if cols != 2 * bins {
        return Err(Error::Shape {
            op: "bin head",
            axis: "output channels",
            expected: 2 * bins,
            got: cols,
        });
    }
    Ok((g.slice_cols(x, 0, bins)?, g.slice_cols(x, bins, 2 * bins)?))
}

/// Coarse start/end bin probabilities, each `T_ms × W`.
pub fn ccsm_nodes(g: &mut Graph<'_>, levels: &[NodeId], bins: usize) -> Result<(NodeId, NodeId)> {
    let logits = stack(g, levels, "ccsm")?;
    let p = g.sigmoid(logits);
    split_bins(g, p, bins)
}

/// Start/end residuals, each `T_ms × W`, in level-1 units.
pub fn rrsm_nodes(g: &mut Graph<'_>, levels: &[NodeId], bins: usize) -> Result<(NodeId, NodeId)> {
    let r = stack(g, levels, "rrsm")?;
    split_bins(g, r, bins)
}

/// Snippet class probabilities, `T_ms × K`.
pub fn snippet_cls_nodes(g: &mut Graph<'_>, levels: &[NodeId]) -> Result<NodeId> {
    let logits = stack(g, levels, "cls")?;
    Ok(g.sigmoid(logits))
}

/// Per-snippet class probabilities on unpadded snippet features, `T × K`.
pub fn rcm_nodes(g: &mut Graph<'_>, features: NodeId) -> Result<NodeId> {
    let h = g.conv_named(features, "rcm.0", 1, 1)?;
    let h = g.relu(h);
    let logits = g.conv_named(h, "rcm.1", 1, 1)?;
    Ok(g.sigmoid(logits))
}

fn level_inputs(g: &mut Graph<'_>, f: &PyramidFeatures) -> Vec<NodeId> {
    (1..=f.layout.levels()).map(|l| g.input(f.level(l))).collect()
}

pub fn ccsm_forward(f: &PyramidFeatures, params: &ParamSet, bins: usize) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new(params);
    let levels = level_inputs(&mut g, f);
    let (s, e) = ccsm_nodes(&mut g, &levels, bins)?;
    Ok((g.value(s).clone(), g.value(e).clone()))
}

pub fn rrsm_forward(f: &PyramidFeatures, params: &ParamSet, bins: usize) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new(params);
    let levels = level_inputs(&mut g, f);
    let (s, e) = rrsm_nodes(&mut g, &levels, bins)?;
    Ok((g.value(s).clone(), g.value(e).clone()))
}

pub fn snippet_cls_forward(f: &PyramidFeatures, params: &ParamSet) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let levels = level_inputs(&mut g, f);
    let p = snippet_cls_nodes(&mut g, &levels)?;
    Ok(g.value(p).clone())
}

pub fn rcm_forward(features: &Tensor, params: &ParamSet) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let x = g.input(features.clone());
    let p = rcm_nodes(&mut g, x)?;
    Ok(g.value(p).clone())
}

/// All pyramid head outputs for one video.
pub fn heads_forward(f: &PyramidFeatures, params: &ParamSet, bins: usize) -> Result<HeadOutputs> {
    let mut g = Graph::new(params);
    let levels = level_inputs(&mut g, f);
    let (cs, ce) = ccsm_nodes(&mut g, &levels, bins)?;
    let (rs, re) = rrsm_nodes(&mut g, &levels, bins)?;
    let sc = snippet_cls_nodes(&mut g, &levels)?;
    Ok(HeadOutputs {
        p_cs: g.value(cs).clone(),
        p_ce: g.value(ce).clone(),
        p_rs: g.value(rs).clone(),
        p_re: g.value(re).clone(),
        p_sc: g.value(sc).clone(),
    })
}

/// Number of classes a parameter set was built for.
pub fn num_classes(params: &ParamSet) -> Result<usize> {
    out_channels(params, "cls.2")
}
