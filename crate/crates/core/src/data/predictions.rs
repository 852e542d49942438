use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DetectionCandidate;
use crate::error::{Error, Result};

/// Detections per video id, ordered by id.
pub type Predictions = BTreeMap<String, Vec<DetectionCandidate>>;

#[derive(Serialize, Deserialize)]
struct Entry {
    segment: [f64; 2],
    label: usize,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct ResultsFile {
    results: BTreeMap<String, Vec<Entry>>,
}

pub(crate) fn predictions_to_json(results: &Predictions) -> String {
    let file = ResultsFile {
        results: results
            .iter()
            .map(|(id, cands)| {
                let entries = cands
                    .iter()
                    .map(|c| Entry {
                        segment: [c.start, c.end],
                        label: c.label,
                        score: c.score,
                    })
                    .collect();
                (id.clone(), entries)
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("predictions serialize")
}

pub fn save_predictions(results: &Predictions, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, predictions_to_json(results)).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Predictions> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ResultsFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(file
        .results
        .into_iter()
        .map(|(id, entries)| {
            let cands = entries
                .into_iter()
                .map(|e| DetectionCandidate {
                    start: e.segment[0],
                    end: e.segment[1],
                    label: e.label,
                    score: e.score,
                })
                .collect();
            (id, cands)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_results() {
        assert_eq!(predictions_to_json(&Predictions::new()), r#"{"results":{}}"#);
    }

    #[test]
    fn one_candidate() {
        let mut p = Predictions::new();
        p.insert(
            "v1".into(),
            vec![DetectionCandidate {
                start: 1.5,
                end: 4.0,
                label: 2,
                score: 0.75,
            }],
        );
        assert_eq!(
            predictions_to_json(&p),
            r#"{"results":{"v1":[{"segment":[1.5,4.0],"label":2,"score":0.75}]}}"#
        );
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Predictions::new();
        for i in 0..1000 {
            let s = rng.random_range(0.0..100.0);
            p.entry(format!("v{}", i % 17))
                .or_default()
                .push(DetectionCandidate {
                    start: s,
                    end: s + rng.random_range(0.1..20.0),
                    label: rng.random_range(0..20),
                    score: rng.random(),
                });
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.json");
        save_predictions(&p, &path).unwrap();
        let back = load_predictions(&path).unwrap();
        assert_eq!(back.len(), p.len());
        for (id, cands) in &p {
            for (a, b) in cands.iter().zip(&back[id]) {
                assert_eq!(a.label, b.label);
                assert!((a.score - b.score).abs() < 1e-9);
                assert!((a.start - b.start).abs() < 1e-9 && (a.end - b.end).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn io_error_names_path() {
        let err = load_predictions("/definitely/not/here.json").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.json"));
    }
}
