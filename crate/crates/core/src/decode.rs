//! Inference: bin decoding, refinement, video-level gating, score fusion and
//! class-wise NMS.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DetectionCandidate, Predictions, VideoRecord};
use crate::error::{Error, Result};
use crate::eval::tiou;
use crate::heads::BinGrid;
use crate::model::{num_top_snippets, Model, VideoOutputs};
use crate::numkit::{top_k_mean_col, Tensor};
use crate::par::Exec;

/// Confidence fusion between the class probability and the peak bin
/// probabilities of the snippet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    ClsOnly,
    ClsStart,
    ClsEnd,
    ClsStartEnd,
    #[default]
    ClsSqrtStartEnd,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cls_only" | "1" => ScoreMode::ClsOnly,
            "cls_start" | "2" => ScoreMode::ClsStart,
            "cls_end" | "3" => ScoreMode::ClsEnd,
            "cls_start_end" | "4" => ScoreMode::ClsStartEnd,
            "cls_sqrt_start_end" | "5" => ScoreMode::ClsSqrtStartEnd,
            other => {
                return Err(Error::InvalidArgument(format!("unknown score mode `{other}`")))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub lambda_cls: f64,
    pub lambda_vid: f64,
    pub nms_tiou: f64,
    pub max_keep: usize,
    pub score_mode: ScoreMode,
    /// Gate snippet detections by the video-level categories.
    pub use_rcm: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 0.1,
            lambda_vid: 0.1,
            nms_tiou: 0.2,
            max_keep: 200,
            score_mode: ScoreMode::default(),
            use_rcm: true,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_vid", self.lambda_vid),
            ("nms_tiou", self.nms_tiou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.max_keep == 0 {
            return Err(Error::InvalidArgument("max_keep must be >= 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseBoundary {
    pub start: f64,
    pub end: f64,
    pub start_bin: usize,
    pub end_bin: usize,
}

/// Coarse boundaries from the arg-max bins. `coord` is the snippet's level-1
/// coordinate and `scale` its level scale; bin offsets are in level units.
pub fn decode_coarse(cs_row: &[f64], ce_row: &[f64], coord: f64, scale: f64, grid: &BinGrid) -> CoarseBoundary {
    let ws = argmax(cs_row);
    let we = argmax(ce_row);
    CoarseBoundary {
        start: coord - grid.center(ws) * scale,
        end: coord + grid.center(we) * scale,
        start_bin: ws,
        end_bin: we,
    }
}

/// Applies the residuals stored at the chosen bins.
pub fn refine(coarse: &CoarseBoundary, rs_row: &[f64], re_row: &[f64]) -> (f64, f64) {
    (
        coarse.start - rs_row[coarse.start_bin],
        coarse.end + re_row[coarse.end_bin],
    )
}

/// Clamps to `[0, limit]`; `None` for an empty or inverted segment.
pub fn clamp_segment(start: f64, end: f64, limit: f64) -> Option<(f64, f64)> {
    let (s, e) = (start.clamp(0.0, limit), end.clamp(0.0, limit));
    (s < e).then_some((s, e))
}

/// Per class, mean of the `n_v` largest snippet probabilities.
pub fn video_level_probs(p_rc: &Tensor, n_v: usize) -> Result<Vec<f64>> {
    if n_v == 0 || n_v > p_rc.rows() {
        return Err(Error::InvalidArgument(format!(
            "top-snippet count {n_v} outside [1, {}]",
            p_rc.rows()
        )));
    }
    Ok((0..p_rc.cols())
        .map(|k| top_k_mean_col(p_rc, k, n_v))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoLevelResult {
    pub probs: Vec<f64>,
    /// Sorted categories with probability above `lambda_vid`.
    pub categories: Vec<usize>,
}

pub fn reliable_categories(probs: Vec<f64>, lambda_vid: f64) -> VideoLevelResult {
    let categories = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > lambda_vid)
        .map(|(k, _)| k)
        .collect();
    VideoLevelResult { probs, categories }
}

/// `(t, k)` pairs with `P_sc(t, k) > lambda_cls` and `k` among `categories`,
/// in `(t, k)` order.
pub fn collect_locations(p_sc: &Tensor, categories: &[usize], lambda_cls: f64) -> Vec<(usize, usize)> {
    let mut allowed = vec![false; p_sc.cols()];
    for &k in categories {
        if k < allowed.len() {
            allowed[k] = true;
        }
    }
    let mut out = Vec::new();
    for t in 0..p_sc.rows() {
        for (k, &p) in p_sc.row(t).iter().enumerate() {
            if allowed[k] && p > lambda_cls {
                out.push((t, k));
            }
        }
    }
    out
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn confidence(p_sc: f64, cs_row: &[f64], ce_row: &[f64], mode: ScoreMode) -> f64 {
    let (s, e) = (row_max(cs_row), row_max(ce_row));
    match mode {
        ScoreMode::ClsOnly => p_sc,
        ScoreMode::ClsStart => p_sc * s,
        ScoreMode::ClsEnd => p_sc * e,
        ScoreMode::ClsStartEnd => p_sc * s * e,
        ScoreMode::ClsSqrtStartEnd => p_sc * (s * e).sqrt(),
    }
}

/// Greedy class-wise hard NMS.
///
/// Candidates are visited by descending score (ties: earlier start, then
/// input order); one is kept iff its tIoU with every kept candidate of the
/// same class is at most `tiou_threshold`. Output is in visiting order.
pub fn nms(candidates: &[DetectionCandidate], tiou_threshold: f64) -> Vec<DetectionCandidate> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.score
            .total_cmp(&ca.score)
            .then(ca.start.total_cmp(&cb.start))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<DetectionCandidate> = Vec::new();
    for i in order {
        let c = candidates[i];
        let clear = kept
            .iter()
            .filter(|k| k.label == c.label)
            .all(|k| tiou(k.segment(), c.segment()) <= tiou_threshold);
        if clear {
            kept.push(c);
        }
    }
    kept
}

/// Decodes detections from already computed outputs.
pub fn detect_from_outputs(out: &VideoOutputs, grid: &BinGrid, cfg: &InferenceConfig) -> Result<Vec<DetectionCandidate>> {
    let heads = &out.heads;
    let n_v = num_top_snippets(out.layout.total(), out.p_rc.rows());
    let categories = if cfg.use_rcm {
        reliable_categories(video_level_probs(&out.p_rc, n_v)?, cfg.lambda_vid).categories
    } else {
        (0..heads.p_sc.cols()).collect()
    };
    let locations = collect_locations(&heads.p_sc, &categories, cfg.lambda_cls);
    let positions = out.layout.positions();
    let limit = out.num_snippets as f64;

    let mut candidates = Vec::with_capacity(locations.len());
    let mut cache: Option<(usize, Option<(f64, f64)>)> = None;
    for (t, k) in locations {
        let segment = match cache {
            Some((ct, seg)) if ct == t => seg,
            _ => {
                let lp = positions[t];
                let (cs, ce) = (heads.p_cs.row(t), heads.p_ce.row(t));
                let coarse = decode_coarse(cs, ce, lp.coord(), lp.scale as f64, grid);
                let (s, e) = refine(&coarse, heads.p_rs.row(t), heads.p_re.row(t));
                let seg = clamp_segment(s, e, limit);
                cache = Some((t, seg));
                seg
            }
        };
        let Some((start, end)) = segment else { continue };
        let score = confidence(
            heads.p_sc.get2(t, k),
            heads.p_cs.row(t),
            heads.p_ce.row(t),
            cfg.score_mode,
        );
        candidates.push(DetectionCandidate {
            start,
            end,
            label: k,
            score,
        });
    }
    let mut kept = nms(&candidates, cfg.nms_tiou);
    kept.truncate(cfg.max_keep);
    Ok(kept)
}

pub fn detect_video(video: &VideoRecord, model: &Model, cfg: &InferenceConfig) -> Result<Vec<DetectionCandidate>> {
    let out = model.forward(&video.features)?;
    detect_from_outputs(&out, &model.config.grid, cfg)
}

/// Runs [`detect_video`] over every video; results keyed by video id.
pub fn detect_dataset(dataset: &Dataset, model: &Model, cfg: &InferenceConfig, exec: Exec) -> Result<Predictions> {
    cfg.validate()?;
    if dataset.feature_dim != model.config.feature_dim {
        return Err(Error::Checkpoint(format!(
            "model expects {}-dimensional features, dataset has {}",
            model.config.feature_dim, dataset.feature_dim
        )));
    }
    if dataset.num_classes() != model.config.num_classes {
        return Err(Error::Checkpoint(format!(
            "model predicts {} classes, dataset has {}",
            model.config.num_classes,
            dataset.num_classes()
        )));
    }
    let per_video = exec.try_map(&dataset.videos, |v| detect_video(v, model, cfg))?;
    Ok(dataset
        .videos
        .iter()
        .zip(per_video)
        .map(|(v, d)| (v.id.clone(), d))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ActionAnnotation;
    use crate::heads::HeadOutputs;
    use crate::labels::{assign_targets, LabelConfig};
    use crate::model::ModelConfig;
    use crate::msb::PyramidLayout;
    use proptest::prelude::*;

    fn cand(start: f64, end: f64, score: f64) -> DetectionCandidate {
        DetectionCandidate {
            start,
            end,
            label: 0,
            score,
        }
    }

    #[test]
    fn coarse_examples() {
        let grid = BinGrid::new(8, 1.0).unwrap();
        let c = decode_coarse(&[1.0, 0.0], &[1.0, 0.0], 0.0, 1.0, &grid);
        assert_eq!((c.start, c.end), (-0.5, 0.5));

        let grid = BinGrid::new(4, 0.25).unwrap();
        let row = [0.1, 0.2, 0.9, 0.3];
        let c = decode_coarse(&row, &row, 4.0, 1.0, &grid);
        assert_eq!(c.start, 3.375);
        let c = decode_coarse(&row, &row, 4.0, 2.0, &grid);
        assert_eq!(c.start, 2.75);
        assert_eq!(c.start_bin, 2);
    }

    #[test]
    fn coarse_round_trip_against_labels() {
        // a start boundary at 2.75 seen from coordinate 4 on a scale-2 level:
        // d_s = 0.625, the center of bin 2
        let layout = PyramidLayout::new(8, 2).unwrap();
        let grid = BinGrid::new(4, 0.25).unwrap();
        let t = assign_targets(
            &[ActionAnnotation {
                start: 2.75,
                end: 6.0,
                label: 0,
            }],
            &layout,
            &grid,
            1,
            &LabelConfig::default(),
        )
        .unwrap();
        let flat = layout.level_to_flat(2, 2).unwrap();
        let c = decode_coarse(t.cs.row(flat), t.ce.row(flat), 4.0, 2.0, &grid);
        assert_eq!(c.start_bin, 2);
        assert_eq!(c.start, 2.75);
    }

    #[test]
    fn argmax_ties_to_smallest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[0.3]), 0);
    }

    #[test]
    fn refine_examples() {
        let c = CoarseBoundary {
            start: 3.0,
            end: 7.0,
            start_bin: 1,
            end_bin: 0,
        };
        assert_eq!(refine(&c, &[0.0; 3], &[0.0; 3]), (3.0, 7.0));
        assert_eq!(refine(&c, &[9.0, 0.5, 9.0], &[-0.25, 9.0, 9.0]), (2.5, 6.75));
        let (s, e) = refine(&c, &[0.0, -5.0, 0.0], &[0.0; 3]);
        assert_eq!(clamp_segment(s, e, 10.0), None);
        assert_eq!(clamp_segment(-1.0, 12.0, 10.0), Some((0.0, 10.0)));
    }

    #[test]
    fn video_level_examples() {
        let col = Tensor::new(vec![3, 1], vec![0.9, 0.5, 0.1]).unwrap();
        assert_eq!(video_level_probs(&col, 1).unwrap(), vec![0.9]);
        assert!((video_level_probs(&col, 2).unwrap()[0] - 0.7).abs() < 1e-15);
        assert!((video_level_probs(&col, 3).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(video_level_probs(&col, 0).is_err());
        assert!(video_level_probs(&col, 4).is_err());
        let r = reliable_categories(vec![0.05, 0.5, 0.1, 0.11], 0.1);
        assert_eq!(r.categories, vec![1, 3]);
    }

    #[test]
    fn location_examples() {
        let p = Tensor::new(vec![2, 2], vec![0.5, 0.05, 0.2, 0.9]).unwrap();
        assert!(collect_locations(&p, &[], 0.1).is_empty());
        assert_eq!(collect_locations(&p, &[0, 1], 0.0).len(), 4);
        assert_eq!(collect_locations(&p, &[0, 1], 0.1), vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(collect_locations(&p, &[1], 0.1), vec![(1, 1)]);
    }

    #[test]
    fn confidence_examples() {
        let ones = [1.0, 1.0];
        assert_eq!(confidence(1.0, &ones, &ones, ScoreMode::ClsSqrtStartEnd), 1.0);
        let v = confidence(0.8, &[0.1, 0.64], &[0.25, 0.2], ScoreMode::ClsSqrtStartEnd);
        assert!((v - 0.32).abs() < 1e-15);
        assert_eq!(confidence(0.8, &[0.1, 0.64], &[0.25], ScoreMode::ClsOnly), 0.8);
        assert!((confidence(0.8, &[0.5], &[0.25], ScoreMode::ClsStart) - 0.4).abs() < 1e-15);
        assert!((confidence(0.8, &[0.5], &[0.25], ScoreMode::ClsEnd) - 0.2).abs() < 1e-15);
        assert!((confidence(0.8, &[0.5], &[0.25], ScoreMode::ClsStartEnd) - 0.1).abs() < 1e-15);
        assert_eq!("5".parse::<ScoreMode>().unwrap(), ScoreMode::ClsSqrtStartEnd);
        assert!("7".parse::<ScoreMode>().is_err());
    }

    #[test]
    fn nms_examples() {
        let kept = nms(&[cand(0.0, 1.0, 0.5), cand(2.0, 3.0, 0.6)], 0.2);
        assert_eq!(kept.len(), 2);
        let kept = nms(&[cand(0.0, 1.0, 0.5), cand(0.0, 1.0, 0.6)], 0.2);
        assert_eq!(kept, vec![cand(0.0, 1.0, 0.6)]);
        let kept = nms(
            &[cand(0.0, 1.0, 0.9), cand(0.4, 1.4, 0.8), cand(0.8, 1.8, 0.7)],
            0.4,
        );
        assert_eq!(kept, vec![cand(0.0, 1.0, 0.9), cand(0.8, 1.8, 0.7)]);
        // different classes never suppress each other
        let mut other = cand(0.0, 1.0, 0.4);
        other.label = 1;
        assert_eq!(nms(&[cand(0.0, 1.0, 0.9), other], 0.2).len(), 2);
    }

    fn tiny_model() -> Model {
        Model::init(
            ModelConfig {
                feature_dim: 3,
                num_classes: 2,
                levels: 2,
                width: 4,
                grid: BinGrid::new(4, 0.5).unwrap(),
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn untrained_output_is_capped() {
        let mut model = tiny_model();
        model.params = model.params.zeros_like();
        let video = VideoRecord {
            id: "v".into(),
            features: Tensor::full(&[40, 3], 0.2),
            annotations: vec![],
        };
        let cfg = InferenceConfig {
            max_keep: 5,
            ..Default::default()
        };
        let d = detect_video(&video, &model, &cfg).unwrap();
        assert!(d.len() <= 5);
        assert!(!d.is_empty());
    }

    #[test]
    fn nothing_above_threshold_gives_nothing() {
        let model = tiny_model();
        let mut out = model.forward(&Tensor::full(&[16, 3], 0.1)).unwrap();
        out.heads.p_sc = Tensor::full(out.heads.p_sc.shape(), 0.05);
        assert!(detect_from_outputs(&out, &model.config.grid, &InferenceConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn oracle_outputs_recover_annotations() {
        let grid = BinGrid::default();
        let layout = PyramidLayout::new(96, 4).unwrap();
        let anns = vec![
            ActionAnnotation {
                start: 10.0,
                end: 22.0,
                label: 1,
            },
            ActionAnnotation {
                start: 50.0,
                end: 57.0,
                label: 0,
            },
        ];
        let t = assign_targets(&anns, &layout, &grid, 2, &LabelConfig::default()).unwrap();
        let sanitize = |x: &Tensor| x.map(|v| if v.is_finite() { v } else { 0.0 });
        // snippets whose boundaries fall outside the bins carry no usable heatmap
        let mut p_sc = t.sc.clone();
        for row in 0..layout.total() {
            let covered = t.rs.row(row).iter().any(|v| v.is_finite())
                && t.re.row(row).iter().any(|v| v.is_finite());
            if !covered {
                p_sc.row_mut(row).fill(0.0);
            }
        }
        let out = VideoOutputs {
            layout: layout.clone(),
            heads: HeadOutputs {
                p_cs: t.cs.clone(),
                p_ce: t.ce.clone(),
                p_rs: sanitize(&t.rs),
                p_re: sanitize(&t.re),
                p_sc,
            },
            p_rc: Tensor::full(&[96, 2], 0.9),
            num_snippets: 96,
        };
        let dets = detect_from_outputs(&out, &grid, &InferenceConfig::default()).unwrap();
        for a in &anns {
            let hit = dets.iter().any(|d| {
                d.label == a.label && tiou(d.segment(), (a.start, a.end)) >= 0.9
            });
            assert!(hit, "{a:?} not recovered from {dets:?}");
        }
    }

    fn candidates() -> impl Strategy<Value = Vec<DetectionCandidate>> {
        prop::collection::vec((0.0f64..30.0, 0.1f64..8.0, 0usize..3, 0.0f64..1.0), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|(start, len, label, score)| DetectionCandidate {
                    start,
                    end: start + len,
                    label,
                    score,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn nms_keeps_separated_subset(c in candidates(), thr in 0.0f64..1.0) {
            let kept = nms(&c, thr);
            prop_assert!(kept.len() <= c.len());
            for (i, a) in kept.iter().enumerate() {
                prop_assert!(c.contains(a));
                for b in &kept[i + 1..] {
                    if a.label == b.label {
                        prop_assert!(tiou(a.segment(), b.segment()) <= thr);
                    }
                }
            }
        }

        #[test]
        fn nms_ignores_input_order(c in candidates(), thr in 0.0f64..1.0, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = c.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // continuous scores make ties vanishingly unlikely
            prop_assert_eq!(nms(&c, thr), nms(&shuffled, thr));
        }
    }
}
