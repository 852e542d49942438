//! Temporal IoU, average precision, mAP over a tIoU grid and category F1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Predictions};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Intersection over union of two intervals; 0 when they do not overlap.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// One scored prediction of a fixed class; `video` indexes the dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassDetection {
    pub video: usize,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassGroundTruth {
    pub video: usize,
    pub start: f64,
    pub end: f64,
}

/// Visiting order: score descending, then earlier start, then input order.
fn ranking(preds: &[ClassDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(preds[a].start.total_cmp(&preds[b].start))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching in ranking order. Returns the ranking and, per
/// ranked prediction, whether it is a true positive.
fn match_ranked(preds: &[ClassDetection], gts: &[ClassGroundTruth], thr: f64) -> (Vec<usize>, Vec<bool>) {
    let order = ranking(preds);
    let mut taken = vec![false; gts.len()];
    let hits = order
        .iter()
        .map(|&i| {
            let p = &preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.video != p.video {
                    continue;
                }
                let iou = tiou((p.start, p.end), (g.start, g.end));
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (order, hits)
}

fn interpolated_ap(hits: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r != prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

fn ap_and_hits(preds: &[ClassDetection], gts: &[ClassGroundTruth], thr: f64) -> (Option<f64>, usize) {
    if gts.is_empty() {
        return (if preds.is_empty() { None } else { Some(0.0) }, 0);
    }
    let (_, hits) = match_ranked(preds, gts, thr);
    let tp = hits.iter().filter(|&&h| h).count();
    (Some(interpolated_ap(&hits, gts.len())), tp)
}

/// All-point interpolated AP of one class at tIoU threshold `thr`.
///
/// `None` when the class has neither ground truth nor predictions; such a
/// class is left out of the mean.
pub fn average_precision(preds: &[ClassDetection], gts: &[ClassGroundTruth], thr: f64) -> Option<f64> {
    ap_and_hits(preds, gts, thr).0
}

/// Parses `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("bad threshold grid `{spec}`"));
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, step, stop) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
            .collect()
    } else {
        spec.split(',').map(parse).collect::<Result<_>>()?
    };
    validate_thresholds(&grid)?;
    Ok(grid)
}

fn validate_thresholds(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidArgument(format!("tIoU threshold {t} outside (0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    /// Only detections scoring at least this much count toward category F1.
    pub f1_score_threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            f1_score_threshold: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub tiou: f64,
    pub map: f64,
    /// AP per class; `None` for classes without ground truth or predictions.
    pub class_ap: Vec<Option<f64>>,
    pub counts: MatchCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<String>,
    pub thresholds: Vec<ThresholdResult>,
    pub average_map: f64,
    pub category_f1: f64,
}

impl EvalReport {
    pub fn map_at(&self, tiou: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| (t.tiou - tiou).abs() < 1e-9)
            .map(|t| t.map)
    }

    /// Plain-text table: one row per class, one column per threshold.
    pub fn to_table(&self) -> String {
        let name_w = self
            .categories
            .iter()
            .map(|c| c.len())
            .chain(["average mAP".len()])
            .max()
            .unwrap_or(0);
        let mut s = format!("{:name_w$}", "class");
        for t in &self.thresholds {
            let _ = write!(s, "  {:>7}", format!("@{:.2}", t.tiou));
        }
        s.push('\n');
        let cell = |v: Option<f64>| v.map_or("      -".to_string(), |v| format!("{:>7.4}", v));
        for (k, name) in self.categories.iter().enumerate() {
            let _ = write!(s, "{name:name_w$}");
            for t in &self.thresholds {
                let _ = write!(s, "  {}", cell(t.class_ap[k]));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:name_w$}", "mAP");
        for t in &self.thresholds {
            let _ = write!(s, "  {}", cell(Some(t.map)));
        }
        s.push('\n');
        let _ = writeln!(s, "{:name_w$}  {:.4}", "average mAP", self.average_map);
        let _ = writeln!(s, "{:name_w$}  {:.4}", "category F1", self.category_f1);
        s
    }
}

fn check_results(results: &Predictions, dataset: &Dataset) -> Result<()> {
    let k = dataset.num_classes();
    for (id, dets) in results {
        if dataset.video(id).is_none() {
            return Err(Error::UnknownVideo(id.clone()));
        }
        if let Some(d) = dets.iter().find(|d| d.label >= k) {
            return Err(Error::LabelOutOfRange {
                video: id.clone(),
                label: d.label,
                num_classes: k,
            });
        }
    }
    Ok(())
}

/// Micro-averaged F1 over `(video, category)` pairs.
pub fn category_f1(results: &Predictions, dataset: &Dataset, score_threshold: Option<f64>) -> Result<f64> {
    check_results(results, dataset)?;
    let (mut tp, mut predicted, mut actual) = (0usize, 0usize, 0usize);
    for v in &dataset.videos {
        let gt: BTreeSet<usize> = v.annotations.iter().map(|a| a.label).collect();
        let pred: BTreeSet<usize> = results
            .get(&v.id)
            .into_iter()
            .flatten()
            .filter(|d| score_threshold.is_none_or(|t| d.score >= t))
            .map(|d| d.label)
            .collect();
        tp += pred.intersection(&gt).count();
        predicted += pred.len();
        actual += gt.len();
    }
    let p = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
    let r = if actual > 0 { tp as f64 / actual as f64 } else { 0.0 };
    Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

pub fn evaluate(results: &Predictions, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_with(results, dataset, cfg, Exec::default())
}

/// [`evaluate`] with an explicit execution policy for the per-class work.
pub fn evaluate_with(results: &Predictions, dataset: &Dataset, cfg: &EvalConfig, exec: Exec) -> Result<EvalReport> {
    validate_thresholds(&cfg.thresholds)?;
    check_results(results, dataset)?;
    let k = dataset.num_classes();

    let mut preds: Vec<Vec<ClassDetection>> = vec![Vec::new(); k];
    let mut gts: Vec<Vec<ClassGroundTruth>> = vec![Vec::new(); k];
    for (vi, v) in dataset.videos.iter().enumerate() {
        for a in &v.annotations {
            gts[a.label].push(ClassGroundTruth {
                video: vi,
                start: a.start,
                end: a.end,
            });
        }
        for d in results.get(&v.id).into_iter().flatten() {
            preds[d.label].push(ClassDetection {
                video: vi,
                start: d.start,
                end: d.end,
                score: d.score,
            });
        }
    }
    let classes: Vec<usize> = (0..k).collect();

    let thresholds: Vec<ThresholdResult> = cfg
        .thresholds
        .iter()
        .map(|&thr| {
            let per_class = exec.map(&classes, |&c| ap_and_hits(&preds[c], &gts[c], thr));
            let included: Vec<f64> = per_class.iter().filter_map(|(ap, _)| *ap).collect();
            let map = if included.is_empty() {
                0.0
            } else {
                included.iter().sum::<f64>() / included.len() as f64
            };
            let tp: usize = per_class.iter().map(|(_, tp)| tp).sum();
            let num_pred: usize = preds.iter().map(Vec::len).sum();
            let num_gt: usize = gts.iter().map(Vec::len).sum();
            ThresholdResult {
                tiou: thr,
                map,
                class_ap: per_class.into_iter().map(|(ap, _)| ap).collect(),
                counts: MatchCounts {
                    tp,
                    fp: num_pred - tp,
                    fn_: num_gt - tp,
                },
            }
        })
        .collect();
    let average_map = thresholds.iter().map(|t| t.map).sum::<f64>() / thresholds.len() as f64;
    Ok(EvalReport {
        categories: dataset.categories.clone(),
        thresholds,
        average_map,
        category_f1: category_f1(results, dataset, cfg.f1_score_threshold)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ActionAnnotation, DetectionCandidate, VideoRecord};
    use crate::numkit::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(video: usize, start: f64, end: f64, score: f64) -> ClassDetection {
        ClassDetection {
            video,
            start,
            end,
            score,
        }
    }

    fn gt(video: usize, start: f64, end: f64) -> ClassGroundTruth {
        ClassGroundTruth { video, start, end }
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((1.0, 3.0), (1.0, 3.0)), 1.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(tiou((0.0, 1.0), (1.0, 2.0)), 0.0);
        assert!((tiou((0.0, 1.0), (0.5, 1.5)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ap_examples() {
        let g = [gt(0, 1.0, 4.0)];
        assert_eq!(average_precision(&[det(0, 1.0, 4.0, 0.3)], &g, 0.5), Some(1.0));
        assert_eq!(average_precision(&[], &g, 0.5), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5), None);
        assert_eq!(average_precision(&[det(0, 1.0, 4.0, 0.3)], &[], 0.5), Some(0.0));
        // right segment, wrong video
        assert_eq!(average_precision(&[det(1, 1.0, 4.0, 0.3)], &g, 0.5), Some(0.0));
        // FP ranked first halves precision
        let preds = [det(0, 8.0, 9.0, 0.9), det(0, 1.0, 4.0, 0.5)];
        assert_eq!(average_precision(&preds, &g, 0.5), Some(0.5));
    }

    #[test]
    fn duplicate_detections_match_once() {
        let g = [gt(0, 0.0, 2.0)];
        let preds = [det(0, 0.0, 2.0, 0.9), det(0, 0.0, 2.0, 0.8)];
        let (_, hits) = match_ranked(&preds, &g, 0.5);
        assert_eq!(hits, vec![true, false]);
        assert_eq!(average_precision(&preds, &g, 0.5), Some(1.0));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.3:0.1:0.7").unwrap(), vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0.5,0.75").unwrap(), vec![0.5, 0.75]);
        assert!(parse_grid("0.7:0.1:0.3").is_err());
        assert!(parse_grid("0:0.5:1").is_err());
        assert!(parse_grid("a").is_err());
    }

    /// Independent reference: brute-force matching and the "max precision at
    /// recall ≥ r" integral taken at every true positive.
    fn naive_ap(preds: &[ClassDetection], gts: &[ClassGroundTruth], thr: f64) -> Option<f64> {
        if gts.is_empty() {
            return if preds.is_empty() { None } else { Some(0.0) };
        }
        let mut idx: Vec<usize> = (0..preds.len()).collect();
        // selection sort by (score desc, start asc, index asc)
        for i in 0..idx.len() {
            let mut best = i;
            for j in i + 1..idx.len() {
                let (a, b) = (&preds[idx[j]], &preds[idx[best]]);
                let better = a.score > b.score
                    || (a.score == b.score && a.start < b.start)
                    || (a.score == b.score && a.start == b.start && idx[j] < idx[best]);
                if better {
                    best = j;
                }
            }
            idx.swap(i, best);
        }
        let mut used = vec![false; gts.len()];
        let mut tp_flags = Vec::new();
        for &i in &idx {
            let p = preds[i];
            let mut choice = None;
            let mut choice_iou = -1.0;
            for (j, g) in gts.iter().enumerate() {
                if used[j] || g.video != p.video {
                    continue;
                }
                let inter = (p.end.min(g.end) - p.start.max(g.start)).max(0.0);
                let iou = inter / ((p.end - p.start) + (g.end - g.start) - inter);
                if iou >= thr && iou > choice_iou {
                    choice = Some(j);
                    choice_iou = iou;
                }
            }
            if let Some(j) = choice {
                used[j] = true;
            }
            tp_flags.push(choice.is_some());
        }
        let mut total = 0.0;
        for k in 0..tp_flags.len() {
            if !tp_flags[k] {
                continue;
            }
            let mut best = 0.0f64;
            for m in k..tp_flags.len() {
                let tp = tp_flags[..=m].iter().filter(|&&f| f).count();
                best = best.max(tp as f64 / (m + 1) as f64);
            }
            total += best;
        }
        Some(total / gts.len() as f64)
    }

    fn random_case(rng: &mut ChaCha8Rng, n_pred: usize, n_gt: usize, videos: usize) -> (Vec<ClassDetection>, Vec<ClassGroundTruth>) {
        let seg = |rng: &mut ChaCha8Rng| {
            let s = rng.random_range(0.0..20.0);
            (s, s + rng.random_range(0.5..6.0))
        };
        let gts = (0..n_gt)
            .map(|_| {
                let (s, e) = seg(rng);
                gt(rng.random_range(0..videos), s, e)
            })
            .collect();
        let preds = (0..n_pred)
            .map(|_| {
                let (s, e) = seg(rng);
                // coarse scores so ties occur
                let score = (rng.random_range(0..8) as f64) / 8.0;
                det(rng.random_range(0..videos), s, e, score)
            })
            .collect();
        (preds, gts)
    }

    #[test]
    fn ap_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..500 {
            let (preds, gts) = random_case(&mut rng, 20, 5, 2);
            for thr in [0.1, 0.3, 0.5, 0.7] {
                let (a, b) = (average_precision(&preds, &gts, thr), naive_ap(&preds, &gts, thr));
                assert!(
                    (a.unwrap() - b.unwrap()).abs() < 1e-12,
                    "trial {trial} thr {thr}: {a:?} vs {b:?}"
                );
            }
        }
    }

    fn video(id: &str, anns: &[(f64, f64, usize)]) -> VideoRecord {
        VideoRecord {
            id: id.into(),
            features: Tensor::zeros(&[32, 1]),
            annotations: anns
                .iter()
                .map(|&(start, end, label)| ActionAnnotation { start, end, label })
                .collect(),
        }
    }

    fn dataset() -> Dataset {
        Dataset {
            categories: vec!["a".into(), "b".into()],
            feature_dim: 1,
            videos: vec![
                video("v0", &[(2.0, 6.0, 0), (10.0, 14.0, 1)]),
                video("v1", &[(0.0, 8.0, 0)]),
            ],
        }
    }

    fn perfect(ds: &Dataset) -> Predictions {
        ds.videos
            .iter()
            .map(|v| {
                let dets = v
                    .annotations
                    .iter()
                    .map(|a| DetectionCandidate {
                        start: a.start,
                        end: a.end,
                        label: a.label,
                        score: 0.9,
                    })
                    .collect();
                (v.id.clone(), dets)
            })
            .collect()
    }

    #[test]
    fn evaluate_extremes() {
        let ds = dataset();
        let r = evaluate(&perfect(&ds), &ds, &EvalConfig::default()).unwrap();
        assert!(r.thresholds.iter().all(|t| t.map == 1.0));
        assert_eq!(r.average_map, 1.0);
        assert_eq!(r.category_f1, 1.0);
        assert_eq!(r.thresholds[0].counts, MatchCounts { tp: 3, fp: 0, fn_: 0 });

        let r = evaluate(&Predictions::new(), &ds, &EvalConfig::default()).unwrap();
        assert!(r.thresholds.iter().all(|t| t.map == 0.0));
        assert_eq!(r.category_f1, 0.0);
        assert_eq!(r.thresholds[0].counts, MatchCounts { tp: 0, fp: 0, fn_: 3 });
        assert!(r.to_table().contains("average mAP"));
    }

    #[test]
    fn evaluate_rejects_unknown_video() {
        let ds = dataset();
        let mut p = perfect(&ds);
        p.insert("ghost".into(), vec![]);
        assert!(matches!(
            evaluate(&p, &ds, &EvalConfig::default()),
            Err(Error::UnknownVideo(id)) if id == "ghost"
        ));
    }

    #[test]
    fn f1_examples() {
        let ds = Dataset {
            categories: vec!["A".into(), "B".into()],
            feature_dim: 1,
            videos: vec![video("v", &[(0.0, 1.0, 0), (2.0, 3.0, 1)])],
        };
        let mut p = Predictions::new();
        p.insert(
            "v".into(),
            vec![DetectionCandidate {
                start: 0.0,
                end: 1.0,
                label: 0,
                score: 0.4,
            }],
        );
        assert!((category_f1(&p, &ds, None).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(category_f1(&p, &ds, Some(0.5)).unwrap(), 0.0);
        assert_eq!(category_f1(&perfect(&ds), &ds, None).unwrap(), 1.0);

        let disjoint = Dataset {
            videos: vec![video("v", &[(2.0, 3.0, 1)])],
            ..ds
        };
        assert_eq!(category_f1(&p, &disjoint, None).unwrap(), 0.0);
    }

    /// End-to-end reference built on `naive_ap`.
    fn naive_evaluate(results: &Predictions, ds: &Dataset, thr: f64) -> f64 {
        let mut aps = Vec::new();
        for c in 0..ds.num_classes() {
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for (vi, v) in ds.videos.iter().enumerate() {
                for a in v.annotations.iter().filter(|a| a.label == c) {
                    gts.push(gt(vi, a.start, a.end));
                }
                if let Some(ds) = results.get(&v.id) {
                    for d in ds.iter().filter(|d| d.label == c) {
                        preds.push(det(vi, d.start, d.end, d.score));
                    }
                }
            }
            if let Some(ap) = naive_ap(&preds, &gts, thr) {
                aps.push(ap);
            }
        }
        if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        }
    }

    #[test]
    fn evaluate_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..=10);
            let mut ds = Dataset {
                categories: vec!["a".into(), "b".into(), "c".into()],
                feature_dim: 1,
                videos: Vec::new(),
            };
            let mut results = Predictions::new();
            for vi in 0..n {
                let id = format!("v{vi}");
                let anns: Vec<(f64, f64, usize)> = (0..rng.random_range(0..4))
                    .map(|_| {
                        let s = rng.random_range(0.0..20.0);
                        (s, s + rng.random_range(1.0..8.0), rng.random_range(0..3))
                    })
                    .collect();
                ds.videos.push(video(&id, &anns));
                let dets = (0..rng.random_range(0..6))
                    .map(|_| {
                        let s = rng.random_range(0.0..20.0);
                        DetectionCandidate {
                            start: s,
                            end: s + rng.random_range(1.0..8.0),
                            label: rng.random_range(0..3),
                            score: rng.random_range(0.0..1.0),
                        }
                    })
                    .collect();
                results.insert(id, dets);
            }
            let report = evaluate(&results, &ds, &EvalConfig::default()).unwrap();
            for t in &report.thresholds {
                let want = naive_evaluate(&results, &ds, t.tiou);
                assert!((t.map - want).abs() < 1e-9, "{} vs {want}", t.map);
            }
            let sequential = evaluate_with(&results, &ds, &EvalConfig::default(), Exec::Sequential).unwrap();
            assert_eq!(sequential, report);
        }
    }

    fn case_strategy() -> impl Strategy<Value = (Vec<ClassDetection>, Vec<ClassGroundTruth>)> {
        let seg = (0.0f64..20.0, 0.5f64..6.0);
        let preds = prop::collection::vec((0usize..2, seg.clone(), 0.0f64..1.0), 0..15).prop_map(|v| {
            v.into_iter()
                .map(|(video, (s, l), score)| det(video, s, s + l, score))
                .collect()
        });
        let gts = prop::collection::vec((0usize..2, seg), 1..6).prop_map(|v| {
            v.into_iter().map(|(video, (s, l))| gt(video, s, s + l)).collect()
        });
        (preds, gts)
    }

    proptest! {
        #[test]
        fn ap_depends_only_on_ranking((preds, gts) in case_strategy(), thr in 0.1f64..0.9) {
            let a = average_precision(&preds, &gts, thr).unwrap();
            let moved: Vec<_> = preds
                .iter()
                .map(|p| ClassDetection { score: (3.0 * p.score).exp() - 7.0, ..*p })
                .collect();
            prop_assert_eq!(a, average_precision(&moved, &gts, thr).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn false_positive_never_helps((preds, gts) in case_strategy(), thr in 0.1f64..0.9, score in 0.0f64..1.0) {
            let before = average_precision(&preds, &gts, thr).unwrap();
            let mut more = preds.clone();
            // a video with no ground truth, so it can never match
            more.push(det(9, 0.0, 1.0, score));
            prop_assert!(average_precision(&more, &gts, thr).unwrap() <= before);
        }

        #[test]
        fn top_ranked_true_positive_never_hurts((preds, gts) in case_strategy(), thr in 0.1f64..0.9) {
            let before = average_precision(&preds, &gts, thr).unwrap();
            let (_, hits) = match_ranked(&preds, &gts, thr);
            // ground truths nobody matched stay available, so the new top
            // detection takes one without changing other matches
            let matched: usize = hits.iter().filter(|&&h| h).count();
            if matched < gts.len() {
                let free = gts.iter().position(|g| {
                    let mut with = preds.clone();
                    with.insert(0, det(g.video, g.start, g.end, 2.0));
                    let (_, h) = match_ranked(&with, &gts, thr);
                    h.iter().filter(|&&x| x).count() == matched + 1
                });
                if let Some(j) = free {
                    let g = gts[j];
                    let mut with = preds.clone();
                    with.push(det(g.video, g.start, g.end, 2.0));
                    prop_assert!(average_precision(&with, &gts, thr).unwrap() >= before);
                }
            }
        }

        #[test]
        fn map_is_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = dataset();
            let mut results = Predictions::new();
            for v in &ds.videos {
                let dets = (0..4)
                    .map(|_| {
                        let s = rng.random_range(0.0..12.0);
                        DetectionCandidate { start: s, end: s + 4.0, label: rng.random_range(0..2), score: rng.random_range(0.0..1.0) }
                    })
                    .collect();
                results.insert(v.id.clone(), dets);
            }
            let base = evaluate(&results, &ds, &EvalConfig::default()).unwrap();
            let mut shuffled = ds.clone();
            shuffled.videos.reverse();
            let flipped = evaluate(&results, &shuffled, &EvalConfig::default()).unwrap();
            for (a, b) in base.thresholds.iter().zip(&flipped.thresholds) {
                prop_assert!((a.map - b.map).abs() < 1e-12);
            }
            // relabel classes 0 <-> 1 everywhere
            let swap = |l: usize| 1 - l;
            let mut relabelled = ds.clone();
            for v in &mut relabelled.videos {
                for a in &mut v.annotations { a.label = swap(a.label); }
            }
            let swapped_results: Predictions = results
                .iter()
                .map(|(k, ds)| (k.clone(), ds.iter().map(|d| DetectionCandidate { label: swap(d.label), ..*d }).collect()))
                .collect();
            let r = evaluate(&swapped_results, &relabelled, &EvalConfig::default()).unwrap();
            for (a, b) in base.thresholds.iter().zip(&r.thresholds) {
                prop_assert!((a.map - b.map).abs() < 1e-12);
            }
        }
    }
}
