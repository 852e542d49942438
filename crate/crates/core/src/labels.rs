//! Ground-truth assignment for the four heads.
//!
//! For a snippet at level-1 coordinate `c` on a level with scale `S` that lies
//! inside annotation `[y_s, y_e]`, the boundary offsets in level units are
//! `d_s = (c − y_s)/S` and `d_e = (y_e − c)/S`. Bin `w` (center `x_w`) gets the
//! Gaussian heatmap value `N(x_w; d, σ)` and, where that value exceeds
//! `λ_rs`, the refinement target `(d − x_w)·S`. Overlapping annotations
//! combine by element-wise max; the refinement target follows the annotation
//! achieving the max.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::ActionAnnotation;
use crate::error::{Error, Result};
use crate::heads::BinGrid;
use crate::msb::PyramidLayout;
use crate::numkit::Tensor;

/// Sentinel for bins without a refinement target.
pub const UNASSIGNED: f64 = f64::INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub sigma: f64,
    pub lambda_rs: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            sigma: 0.2f64.sqrt(),
            lambda_rs: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub cs: Tensor,
    pub ce: Tensor,
    pub rs: Tensor,
    pub re: Tensor,
    pub sc: Tensor,
    pub vl: Vec<f64>,
}

/// Normal density with standard deviation `sigma` evaluated at `x`.
pub fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

pub fn is_assigned(v: f64) -> bool {
    v.is_finite()
}

pub fn assign_targets(
    annotations: &[ActionAnnotation],
    layout: &PyramidLayout,
    grid: &BinGrid,
    num_classes: usize,
    cfg: &LabelConfig,
) -> Result<TargetSet> {
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", cfg.sigma)));
    }
    let limit = layout.padded_len() as f64;
    for a in annotations {
        if !(a.start >= 0.0 && a.end <= limit && a.start < a.end) {
            return Err(Error::InvalidArgument(format!(
                "annotation [{}, {}] outside the padded range [0, {limit}]",
                a.start, a.end
            )));
        }
        if a.label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "annotation label {} >= {num_classes}",
                a.label
            )));
        }
    }

    let (tms, w) = (layout.total(), grid.bins);
    let mut cs = Tensor::zeros(&[tms, w]);
    let mut ce = Tensor::zeros(&[tms, w]);
    let mut rs = Tensor::full(&[tms, w], UNASSIGNED);
    let mut re = Tensor::full(&[tms, w], UNASSIGNED);
    let mut sc = Tensor::zeros(&[tms, num_classes]);

    // regression candidates before thresholding
    let mut rs_raw = vec![0.0; w];
    let mut re_raw = vec![0.0; w];

    for (t, lp) in layout.positions().into_iter().enumerate() {
        let coord = lp.coord();
        let scale = lp.scale as f64;
        let mut covered = false;
        for a in annotations {
            if coord < a.start || coord > a.end {
                continue;
            }
            covered = true;
            sc.set2(t, a.label, 1.0);
            let d_s = (coord - a.start) / scale;
            let d_e = (a.end - coord) / scale;
            for bin in 0..w {
                let x = grid.center(bin);
                let hs = gaussian(x - d_s, cfg.sigma);
                if hs > cs.get2(t, bin) {
                    cs.set2(t, bin, hs);
                    rs_raw[bin] = (d_s - x) * scale;
                }
                let he = gaussian(x - d_e, cfg.sigma);
                if he > ce.get2(t, bin) {
                    ce.set2(t, bin, he);
                    re_raw[bin] = (d_e - x) * scale;
                }
            }
        }
        if !covered {
            continue;
        }
        for bin in 0..w {
            if cs.get2(t, bin) > cfg.lambda_rs {
                rs.set2(t, bin, rs_raw[bin]);
            }
            if ce.get2(t, bin) > cfg.lambda_rs {
                re.set2(t, bin, re_raw[bin]);
            }
        }
    }

    let vl = assign_video_level(&sc);
    Ok(TargetSet {
        cs,
        ce,
        rs,
        re,
        sc,
        vl,
    })
}

/// `vl(k) = 1` iff some snippet is labelled with class `k`.
pub fn assign_video_level(sc: &Tensor) -> Vec<f64> {
    let mut vl = vec![0.0; sc.cols()];
    for t in 0..sc.rows() {
        for (k, &v) in sc.row(t).iter().enumerate() {
            if v == 1.0 {
                vl[k] = 1.0;
            }
        }
    }
    vl
}
