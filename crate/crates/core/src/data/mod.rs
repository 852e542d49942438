//! Datasets, prediction files and the synthetic generator.
//!
//! All temporal quantities are in level-1 snippet units; [`seconds_to_snippets`]
//! and [`snippets_to_seconds`] convert when a snippet stride is known.

mod manifest;
mod predictions;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub use manifest::{load_dataset, save_dataset, FeatureStorage, MANIFEST_VERSION};
pub use predictions::{load_predictions, save_predictions, Predictions};
pub use synth::{synth_generate, SynthSpec};

/// Ground-truth action instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionAnnotation {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

/// One video: a `T × D` feature matrix and its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: Tensor,
    pub annotations: Vec<ActionAnnotation>,
}

impl VideoRecord {
    pub fn num_snippets(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Sorted, deduplicated labels of the annotations.
    pub fn label_set(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.annotations.iter().map(|a| a.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub categories: Vec<String>,
    pub feature_dim: usize,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Checks every dataset invariant, naming the offending video.
    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            validate_video(v, self.feature_dim, self.num_classes())?;
        }
        Ok(())
    }

    /// Copy of the dataset restricted to the videos in `range`.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            categories: self.categories.clone(),
            feature_dim: self.feature_dim,
            videos: self.videos[range].to_vec(),
        }
    }
}

pub(crate) fn validate_video(v: &VideoRecord, dim: usize, num_classes: usize) -> Result<()> {
    if v.num_snippets() == 0 {
        return Err(Error::Dimension {
            video: v.id.clone(),
            what: "snippet count (must be >= 1)",
            expected: 1,
            got: 0,
        });
    }
    if v.feature_dim() != dim {
        return Err(Error::Dimension {
            video: v.id.clone(),
            what: "feature dimension",
            expected: dim,
            got: v.feature_dim(),
        });
    }
    let t = v.num_snippets() as f64;
    for a in &v.annotations {
        if a.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                video: v.id.clone(),
                label: a.label,
                num_classes,
            });
        }
        let reason = if !(a.start.is_finite() && a.end.is_finite()) {
            Some("non-finite boundary")
        } else if a.start < 0.0 {
            Some("start before 0")
        } else if a.start >= a.end {
            Some("start not before end")
        } else if a.end > t {
            Some("end beyond the last snippet")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(Error::Annotation {
                video: v.id.clone(),
                start: a.start,
                end: a.end,
                reason,
            });
        }
    }
    Ok(())
}

/// A scored prediction `(start, end, label, score)` in level-1 snippet units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionCandidate {
    pub start: f64,
    pub end: f64,
    pub label: usize,
    pub score: f64,
}

impl DetectionCandidate {
    pub fn segment(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

pub fn seconds_to_snippets(seconds: f64, seconds_per_snippet: f64) -> f64 {
    seconds / seconds_per_snippet
}

pub fn snippets_to_seconds(snippets: f64, seconds_per_snippet: f64) -> f64 {
    snippets * seconds_per_snippet
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(annotations: Vec<ActionAnnotation>) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            features: Tensor::zeros(&[10, 2]),
            annotations,
        }
    }

    #[test]
    fn validation_errors_are_distinct() {
        let ok = ActionAnnotation {
            start: 1.0,
            end: 4.0,
            label: 1,
        };
        assert!(validate_video(&video(vec![ok]), 2, 2).is_ok());
        assert!(matches!(
            validate_video(&video(vec![ok]), 3, 2),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            validate_video(&video(vec![ok]), 2, 1),
            Err(Error::LabelOutOfRange { label: 1, .. })
        ));
        let backwards = ActionAnnotation {
            start: 4.0,
            end: 4.0,
            label: 0,
        };
        assert!(matches!(
            validate_video(&video(vec![backwards]), 2, 2),
            Err(Error::Annotation { .. })
        ));
        let too_long = ActionAnnotation {
            start: 4.0,
            end: 10.5,
            label: 0,
        };
        assert!(validate_video(&video(vec![too_long]), 2, 2).is_err());
    }

    #[test]
    fn unit_conversion() {
        let s = snippets_to_seconds(12.5, 0.5333);
        assert!((seconds_to_snippets(s, 0.5333) - 12.5).abs() < 1e-12);
    }
}
