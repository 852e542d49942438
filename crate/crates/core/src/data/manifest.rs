use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_video, ActionAnnotation, Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::par::Exec;

pub const MANIFEST_VERSION: &str = "bdrc-1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    categories: Vec<String>,
    feature_dim: usize,
    videos: Vec<ManifestVideo>,
}

#[derive(Serialize, Deserialize)]
struct ManifestVideo {
    id: String,
    num_snippets: usize,
    features: FeatureSource,
    annotations: Vec<ActionAnnotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeatureSource {
    /// Little-endian f32 blob, row-major `T × D`, relative to the manifest.
    Path(String),
    Inline(Vec<Vec<f32>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureStorage {
    Inline,
    /// One blob per video under `features/` next to the manifest.
    Blobs,
}

fn widen(video: &str, rows: &[f32], t: usize, d: usize) -> Result<Tensor> {
    if rows.len() != t * d {
        return Err(Error::Dimension {
            video: video.to_string(),
            what: "feature element count",
            expected: t * d,
            got: rows.len(),
        });
    }
    Tensor::new(vec![t, d], rows.iter().map(|&x| f64::from(x)).collect())
}

fn load_video(base: &Path, mv: &ManifestVideo, dim: usize, num_classes: usize) -> Result<VideoRecord> {
    let (t, id) = (mv.num_snippets, mv.id.as_str());
    let features = match &mv.features {
        FeatureSource::Path(rel) => {
            let path = base.join(rel);
            let bytes = fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingBlob {
                    video: id.to_string(),
                    path: path.clone(),
                },
                _ => Error::io(&path, e),
            })?;
            if bytes.len() != t * dim * 4 {
                return Err(Error::Dimension {
                    video: id.to_string(),
                    what: "blob byte length",
                    expected: t * dim * 4,
                    got: bytes.len(),
                });
            }
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            widen(id, &values, t, dim)?
        }
        FeatureSource::Inline(rows) => {
            if rows.len() != t {
                return Err(Error::Dimension {
                    video: id.to_string(),
                    what: "inline row count",
                    expected: t,
                    got: rows.len(),
                });
            }
            if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
                return Err(Error::Dimension {
                    video: id.to_string(),
                    what: "feature dimension",
                    expected: dim,
                    got: bad.len(),
                });
            }
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            widen(id, &flat, t, dim)?
        }
    };
    let video = VideoRecord {
        id: id.to_string(),
        features,
        annotations: mv.annotations.clone(),
    };
    validate_video(&video, dim, num_classes)?;
    Ok(video)
}

/// Reads a manifest and every feature source it references, validating all
/// dataset invariants.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::ManifestVersion(manifest.version));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let (dim, k) = (manifest.feature_dim, manifest.categories.len());
    let videos = Exec::default().try_map(&manifest.videos, |mv| load_video(&base, mv, dim, k))?;
    Ok(Dataset {
        categories: manifest.categories,
        feature_dim: dim,
        videos,
    })
}

fn narrow(t: &Tensor) -> Vec<f32> {
    t.data().iter().map(|&x| x as f32).collect()
}

/// Writes `dataset` as a manifest at `manifest_path`. Features are narrowed to
/// f32, so values that came from f32 round-trip bit-exactly.
pub fn save_dataset(
    dataset: &Dataset,
    manifest_path: impl AsRef<Path>,
    storage: FeatureStorage,
) -> Result<()> {
    let path = manifest_path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let features = match storage {
            FeatureStorage::Inline => FeatureSource::Inline(
                (0..v.num_snippets())
                    .map(|r| v.features.row(r).iter().map(|&x| x as f32).collect())
                    .collect(),
            ),
            FeatureStorage::Blobs => {
                let rel = format!("features/{}.bin", v.id);
                let blob: PathBuf = base.join(&rel);
                if let Some(dir) = blob.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let bytes: Vec<u8> = narrow(&v.features)
                    .iter()
                    .flat_map(|x| x.to_le_bytes())
                    .collect();
                fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
                FeatureSource::Path(rel)
            }
        };
        videos.push(ManifestVideo {
            id: v.id.clone(),
            num_snippets: v.num_snippets(),
            features,
            annotations: v.annotations.clone(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION.to_string(),
        categories: dataset.categories.clone(),
        feature_dim: dataset.feature_dim,
        videos,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
