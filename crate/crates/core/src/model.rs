//! Backbone plus heads under one configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{self, BinGrid, HeadOutputs, HeadsConfig};
use crate::losses::OutputNodes;
use crate::msb::{self, MsbConfig, PyramidLayout};
use crate::numkit::{Graph, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub levels: usize,
    pub width: usize,
    pub grid: BinGrid,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 || self.levels == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        BinGrid::new(self.grid.bins, self.grid.coverage)?;
        Ok(())
    }

    fn msb(&self) -> MsbConfig {
        MsbConfig {
            levels: self.levels,
            width: self.width,
        }
    }

    fn heads(&self) -> HeadsConfig {
        HeadsConfig {
            width: self.width,
            bins: self.grid.bins,
            num_classes: self.num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Everything the decoder needs for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoOutputs {
    pub layout: PyramidLayout,
    pub heads: HeadOutputs,
    /// Per-snippet video-level classifier output, `T × K`.
    pub p_rc: Tensor,
    pub num_snippets: usize,
}

impl Model {
    /// Fresh model with seeded uniform initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        msb::init_params(&mut params, &mut rng, config.feature_dim, &config.msb())?;
        heads::init_params(
            &mut params,
            &mut rng,
            config.width,
            config.feature_dim,
            &config.heads(),
        )?;
        Ok(Self { config, params })
    }

    pub(crate) fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::Shape {
                op: "model input",
                axis: "feature dimension",
                expected: self.config.feature_dim,
                got: features.cols(),
            });
        }
        Ok(())
    }

    /// Records the forward pass on `g`. `P_vl` is left for the caller since it
    /// depends on the top-snippet count.
    pub(crate) fn record(
        &self,
        g: &mut Graph<'_>,
        features: &Tensor,
    ) -> Result<(PyramidLayout, OutputNodesPartial)> {
        self.check_features(features)?;
        let layout = PyramidLayout::new(features.rows(), self.config.levels)?;
        let padded = g.input(features.pad_rows(layout.padded_len()));
        let levels = msb::pyramid_nodes(g, padded, self.config.levels)?;
        let bins = self.config.grid.bins;
        let (p_cs, p_ce) = heads::ccsm_nodes(g, &levels, bins)?;
        let (p_rs, p_re) = heads::rrsm_nodes(g, &levels, bins)?;
        let p_sc = heads::snippet_cls_nodes(g, &levels)?;
        let raw = g.input(features.clone());
        let p_rc = heads::rcm_nodes(g, raw)?;
        Ok((
            layout,
            OutputNodesPartial {
                p_cs,
                p_ce,
                p_rs,
                p_re,
                p_sc,
                p_rc,
            },
        ))
    }

    pub fn forward(&self, features: &Tensor) -> Result<VideoOutputs> {
        let mut g = Graph::new(&self.params);
        let (layout, n) = self.record(&mut g, features)?;
        Ok(VideoOutputs {
            layout,
            heads: HeadOutputs {
                p_cs: g.value(n.p_cs).clone(),
                p_ce: g.value(n.p_ce).clone(),
                p_rs: g.value(n.p_rs).clone(),
                p_re: g.value(n.p_re).clone(),
                p_sc: g.value(n.p_sc).clone(),
            },
            p_rc: g.value(n.p_rc).clone(),
            num_snippets: features.rows(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct OutputNodesPartial {
    pub p_cs: crate::numkit::NodeId,
    pub p_ce: crate::numkit::NodeId,
    pub p_rs: crate::numkit::NodeId,
    pub p_re: crate::numkit::NodeId,
    pub p_sc: crate::numkit::NodeId,
    pub p_rc: crate::numkit::NodeId,
}

impl OutputNodesPartial {
    pub fn with_video_level(self, p_vl: crate::numkit::NodeId) -> OutputNodes {
        OutputNodes {
            p_cs: self.p_cs,
            p_ce: self.p_ce,
            p_rs: self.p_rs,
            p_re: self.p_re,
            p_sc: self.p_sc,
            p_vl,
        }
    }
}

/// Number of top snippets aggregated per class: `ceil(T_ms / 8)`, clamped to
/// `[1, T]` because the video-level classifier sees the `T` unpadded snippets.
pub fn num_top_snippets(pyramid_len: usize, num_snippets: usize) -> usize {
    pyramid_len.div_ceil(8).clamp(1, num_snippets.max(1))
}
