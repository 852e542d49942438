//! Training objectives: focal loss on the coarse bin heatmaps, smooth-L1 on
//! assigned refinement bins, binary cross-entropy on snippet and video-level
//! classes. Every term is a plain sum divided by `lambda_norm`.
//!
//! Each term exists twice: as a value function on tensors and as a graph node
//! (`*_node`) that carries its derivative for training. Both share the same
//! per-element kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{is_assigned, TargetSet};
use crate::numkit::{Graph, NodeId, Tensor};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// How continuous heatmap targets enter the focal loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FocalTargets {
    /// Penalty-reduced focal loss on the raw Gaussian values.
    Soft,
    /// Targets above `threshold` become 1, the rest 0.
    Binarized { threshold: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_norm: f64,
    pub focal_gamma: f64,
    pub focal_beta: f64,
    pub smooth_l1_beta: f64,
    pub focal_targets: FocalTargets,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_norm: 90.0,
            focal_gamma: 2.0,
            focal_beta: 4.0,
            smooth_l1_beta: 1.0,
            focal_targets: FocalTargets::Binarized { threshold: 0.5 },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ccsm: f64,
    pub l_rrsm: f64,
    pub l_cls: f64,
    pub l_rcm: f64,
    pub total: f64,
}

pub fn total_loss(l_ccsm: f64, l_rrsm: f64, l_cls: f64, l_rcm: f64) -> LossBreakdown {
    LossBreakdown {
        l_ccsm,
        l_rrsm,
        l_cls,
        l_rcm,
        total: l_ccsm + l_rrsm + l_cls + l_rcm,
    }
}

fn check_prob(op: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Probability { op, value: p })
    }
}

/// `(log max(x, eps), d/dx)`.
fn clamped_log(x: f64) -> (f64, f64) {
    if x > LOG_EPS {
        (x.ln(), 1.0 / x)
    } else {
        (LOG_EPS.ln(), 0.0)
    }
}

fn focal_target(y: f64, cfg: &LossConfig) -> f64 {
    match cfg.focal_targets {
        FocalTargets::Soft => y,
        FocalTargets::Binarized { threshold } => {
            if y > threshold {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Focal loss of one element and its derivative in `p`.
///
/// At target 1: `−(1−p)^γ log p`; otherwise `−(1−y)^β p^γ log(1−p)`.
pub fn focal_elem(p: f64, y: f64, cfg: &LossConfig) -> Result<(f64, f64)> {
    check_prob("focal loss", p)?;
    let (g, b) = (cfg.focal_gamma, cfg.focal_beta);
    let y = focal_target(y, cfg);
    if y >= 1.0 - 1e-6 {
        let (lp, dlp) = clamped_log(p);
        let w = (1.0 - p).powf(g);
        let dw = if g == 0.0 { 0.0 } else { -g * (1.0 - p).powf(g - 1.0) };
        Ok((-w * lp, -(dw * lp + w * dlp)))
    } else {
        let (lq, dlq) = clamped_log(1.0 - p);
        let neg = (1.0 - y).powf(b);
        let w = p.powf(g);
        let dw = if g == 0.0 { 0.0 } else { g * p.powf(g - 1.0) };
        Ok((-neg * w * lq, -neg * (dw * lq - w * dlq)))
    }
}

pub fn smooth_l1_elem(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// Binary cross-entropy with clamped logs.
pub fn bce_elem(p: f64, y: f64) -> Result<(f64, f64)> {
    check_prob("cross-entropy", p)?;
    let (lp, dlp) = clamped_log(p);
    let (lq, dlq) = clamped_log(1.0 - p);
    Ok((-(y * lp + (1.0 - y) * lq), -(y * dlp - (1.0 - y) * dlq)))
}

fn check_pair(pred: &Tensor, target: &Tensor, op: &'static str) -> Result<()> {
    pred.same_shape(target, op)
}

fn focal_sum(p: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64> {
    check_pair(p, y, "ccsm_loss")?;
    let mut s = 0.0;
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        s += focal_elem(pi, yi, cfg)?.0;
    }
    Ok(s)
}

pub fn ccsm_loss(p_cs: &Tensor, p_ce: &Tensor, g_cs: &Tensor, g_ce: &Tensor, cfg: &LossConfig) -> Result<f64> {
    Ok((focal_sum(p_cs, g_cs, cfg)? + focal_sum(p_ce, g_ce, cfg)?) / cfg.lambda_norm)
}

fn smooth_l1_sum(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    check_pair(pred, target, "rrsm_loss")?;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .filter(|(_, &t)| is_assigned(t))
        .map(|(&p, &t)| smooth_l1_elem(p - t, cfg.smooth_l1_beta).0)
        .sum())
}

/// Smooth-L1 over bins with an assigned target; unassigned bins contribute 0.
pub fn rrsm_loss(p_rs: &Tensor, p_re: &Tensor, g_rs: &Tensor, g_re: &Tensor, cfg: &LossConfig) -> Result<f64> {
    Ok((smooth_l1_sum(p_rs, g_rs, cfg)? + smooth_l1_sum(p_re, g_re, cfg)?) / cfg.lambda_norm)
}

fn bce_sum(p: &[f64], y: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        s += bce_elem(pi, yi)?.0;
    }
    Ok(s)
}

/// `(l_cls, l_rcm)`: snippet-level and video-level cross-entropy.
pub fn cls_losses(p_sc: &Tensor, g_sc: &Tensor, p_vl: &[f64], g_vl: &[f64], cfg: &LossConfig) -> Result<(f64, f64)> {
    check_pair(p_sc, g_sc, "cls_loss")?;
    if p_vl.len() != g_vl.len() {
        return Err(Error::Shape {
            op: "rcm_loss",
            axis: "classes",
            expected: g_vl.len(),
            got: p_vl.len(),
        });
    }
    Ok((
        bce_sum(p_sc.data(), g_sc.data())? / cfg.lambda_norm,
        bce_sum(p_vl, g_vl)? / cfg.lambda_norm,
    ))
}

// ---- graph nodes ----

pub fn focal_node(g: &mut Graph<'_>, p: NodeId, target: &Tensor, cfg: &LossConfig) -> Result<NodeId> {
    check_pair(g.value(p), target, "ccsm_loss")?;
    let y = target.data();
    let s = g.pointwise_sum(p, |v, i| focal_elem(v, y[i], cfg))?;
    Ok(g.scale(s, 1.0 / cfg.lambda_norm))
}

pub fn smooth_l1_node(g: &mut Graph<'_>, pred: NodeId, target: &Tensor, cfg: &LossConfig) -> Result<NodeId> {
    check_pair(g.value(pred), target, "rrsm_loss")?;
    let y = target.data();
    let beta = cfg.smooth_l1_beta;
    let s = g.pointwise_sum(pred, |v, i| {
        Ok(if is_assigned(y[i]) {
            smooth_l1_elem(v - y[i], beta)
        } else {
            (0.0, 0.0)
        })
    })?;
    Ok(g.scale(s, 1.0 / cfg.lambda_norm))
}

pub fn bce_node(g: &mut Graph<'_>, p: NodeId, target: &[f64], cfg: &LossConfig) -> Result<NodeId> {
    if g.value(p).len() != target.len() {
        return Err(Error::Shape {
            op: "cross-entropy",
            axis: "elements",
            expected: target.len(),
            got: g.value(p).len(),
        });
    }
    let s = g.pointwise_sum(p, |v, i| bce_elem(v, target[i]))?;
    Ok(g.scale(s, 1.0 / cfg.lambda_norm))
}

/// Graph nodes of the four terms plus their sum.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub ccsm: NodeId,
    pub rrsm: NodeId,
    pub cls: NodeId,
    pub rcm: NodeId,
    pub total: NodeId,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph<'_>) -> LossBreakdown {
        let v = |n: NodeId| g.value(n).data()[0];
        LossBreakdown {
            l_ccsm: v(self.ccsm),
            l_rrsm: v(self.rrsm),
            l_cls: v(self.cls),
            l_rcm: v(self.rcm),
            total: v(self.total),
        }
    }
}

/// Head outputs as graph nodes, the inputs to [`objective_nodes`].
#[derive(Clone, Copy, Debug)]
pub struct OutputNodes {
    pub p_cs: NodeId,
    pub p_ce: NodeId,
    pub p_rs: NodeId,
    pub p_re: NodeId,
    pub p_sc: NodeId,
    pub p_vl: NodeId,
}

/// Records the full objective `l_ccsm + l_rrsm + l_cls + l_rcm`.
pub fn objective_nodes(
    g: &mut Graph<'_>,
    out: &OutputNodes,
    targets: &TargetSet,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    let cs = focal_node(g, out.p_cs, &targets.cs, cfg)?;
    let ce = focal_node(g, out.p_ce, &targets.ce, cfg)?;
    let ccsm = g.add(cs, ce)?;
    let rs = smooth_l1_node(g, out.p_rs, &targets.rs, cfg)?;
    let re = smooth_l1_node(g, out.p_re, &targets.re, cfg)?;
    let rrsm = g.add(rs, re)?;
    let cls = bce_node(g, out.p_sc, targets.sc.data(), cfg)?;
    let rcm = bce_node(g, out.p_vl, &targets.vl, cfg)?;
    let a = g.add(ccsm, rrsm)?;
    let b = g.add(cls, rcm)?;
    let total = g.add(a, b)?;
    Ok(LossNodes {
        ccsm,
        rrsm,
        cls,
        rcm,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft() -> LossConfig {
        LossConfig {
            focal_targets: FocalTargets::Soft,
            ..Default::default()
        }
    }

    #[test]
    fn focal_examples() {
        let cfg = soft();
        let (l, _) = focal_elem(1.0 - 1e-12, 1.0, &cfg).unwrap();
        assert!(l < 1e-20);
        let (l, _) = focal_elem(0.5, 1.0, &cfg).unwrap();
        assert!((l - 0.173_286_795_139_986_3).abs() < 1e-12);
        let (l, _) = focal_elem(1e-9, 0.0, &cfg).unwrap();
        assert!(l < 1e-20);
        assert!(focal_elem(1.2, 0.0, &cfg).is_err());
        assert!(focal_elem(f64::NAN, 0.0, &cfg).is_err());
    }

    #[test]
    fn ccsm_loss_scales_by_lambda_norm() {
        let cfg = soft();
        let p = Tensor::full(&[2, 3], 0.5);
        let y = Tensor::full(&[2, 3], 1.0);
        let l = ccsm_loss(&p, &p, &y, &y, &cfg).unwrap();
        assert!((l - 12.0 * 0.25 * 2f64.ln() / 90.0).abs() < 1e-12);
        let zeros = Tensor::zeros(&[2, 3]);
        let eps = Tensor::full(&[2, 3], 1e-12);
        assert!(ccsm_loss(&eps, &eps, &zeros, &zeros, &cfg).unwrap() < 1e-20);
        assert!(ccsm_loss(&p, &p, &Tensor::zeros(&[3, 2]), &y, &cfg).is_err());
    }

    #[test]
    fn binarized_targets() {
        let cfg = LossConfig::default();
        // 0.8 > 0.5 counts as a positive
        let (a, _) = focal_elem(0.3, 0.8, &cfg).unwrap();
        let (b, _) = focal_elem(0.3, 1.0, &soft()).unwrap();
        assert_eq!(a, b);
        let (a, _) = focal_elem(0.3, 0.4, &cfg).unwrap();
        let (b, _) = focal_elem(0.3, 0.0, &soft()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1_elem(0.5, 1.0).0, 0.125);
        assert_eq!(smooth_l1_elem(2.0, 1.0).0, 1.5);
        assert_eq!(smooth_l1_elem(-2.0, 1.0).0, 1.5);
    }

    #[test]
    fn rrsm_ignores_unassigned_bins() {
        let cfg = LossConfig::default();
        let inf = f64::INFINITY;
        let target = Tensor::new(vec![1, 3], vec![inf, 1.0, inf]).unwrap();
        let none = Tensor::full(&[1, 3], inf);
        let a = Tensor::new(vec![1, 3], vec![9.0, 1.5, -4.0]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![-7.0, 1.5, 123.0]).unwrap();
        let la = rrsm_loss(&a, &a, &target, &none, &cfg).unwrap();
        let lb = rrsm_loss(&b, &b, &target, &none, &cfg).unwrap();
        assert_eq!(la, lb);
        assert!((la - 0.125 / 90.0).abs() < 1e-15);
        assert_eq!(rrsm_loss(&a, &a, &none, &none, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let cfg = LossConfig::default();
        assert!((bce_elem(0.5, 1.0).unwrap().0 - 2f64.ln()).abs() < 1e-15);
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let (l_cls, l_rcm) = cls_losses(&p, &p, &[0.5], &[0.0], &cfg).unwrap();
        assert!(l_cls < 1e-10);
        assert!((l_rcm - 2f64.ln() / 90.0).abs() < 1e-15);
        assert!(cls_losses(&p, &p, &[0.5, 0.5], &[0.0], &cfg).is_err());
    }

    #[test]
    fn total_is_sum() {
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0).total, 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0).total, 10.0);
    }

    #[test]
    fn element_derivatives_match_finite_differences() {
        let h = 1e-6;
        for cfg in [soft(), LossConfig::default()] {
            for &(p, y) in &[(0.3, 1.0), (0.7, 0.0), (0.45, 0.62), (0.9, 0.2), (0.05, 0.85)] {
                let (_, d) = focal_elem(p, y, &cfg).unwrap();
                let num = (focal_elem(p + h, y, &cfg).unwrap().0
                    - focal_elem(p - h, y, &cfg).unwrap().0)
                    / (2.0 * h);
                assert!((d - num).abs() <= 1e-6 * d.abs().max(1e-3), "{p} {y}: {d} vs {num}");
                let (_, d) = bce_elem(p, y).unwrap();
                let num = (bce_elem(p + h, y).unwrap().0 - bce_elem(p - h, y).unwrap().0) / (2.0 * h);
                assert!((d - num).abs() <= 1e-6 * d.abs().max(1e-3));
            }
        }
        for &x in &[-3.0, -0.4, 0.2, 0.99, 1.7] {
            let (_, d) = smooth_l1_elem(x, 1.0);
            let num = (smooth_l1_elem(x + h, 1.0).0 - smooth_l1_elem(x - h, 1.0).0) / (2.0 * h);
            assert!((d - num).abs() < 1e-6);
        }
    }
}
