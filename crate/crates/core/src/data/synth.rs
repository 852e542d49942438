use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActionAnnotation, Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::par::Exec;

/// Parameters of the synthetic generator.
///
/// Snippets inside a class-`k` instance carry the unit vector `e_k` plus
/// Gaussian noise; background snippets carry noise only. Instance lengths are
/// integers drawn from `[min_len, max_len]` and instances never touch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub length: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub instances_per_video: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_videos: 80,
            length: 96,
            feature_dim: 16,
            num_classes: 3,
            instances_per_video: 2,
            noise_sigma: 0.25,
            seed: 7,
            min_len: 24,
            max_len: 31,
        }
    }
}

impl SynthSpec {
    fn check(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        if self.length == 0 {
            return Err(Error::InvalidArgument("length must be >= 1".into()));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "feature_dim {} cannot hold {} orthogonal class signatures",
                self.feature_dim, self.num_classes
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "instance length range [{}, {}] is empty",
                self.min_len, self.max_len
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        let n = self.instances_per_video;
        if n > 0 && n * self.max_len + (n - 1) > self.length {
            return Err(Error::InfeasiblePacking {
                instances: n,
                max_len: self.max_len,
                length: self.length,
            });
        }
        Ok(())
    }

    fn video(&self, index: usize) -> VideoRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let n = self.instances_per_video;

        let lengths: Vec<usize> = (0..n)
            .map(|_| rng.random_range(self.min_len..=self.max_len))
            .collect();
        let used: usize = lengths.iter().sum::<usize>() + n.saturating_sub(1);
        let free = self.length - used;
        // random composition of the free space into n + 1 gaps
        let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=free)).collect();
        cuts.sort_unstable();

        let mut annotations = Vec::with_capacity(n);
        let mut cursor = 0;
        let mut prev_cut = 0;
        for (i, (&len, &cut)) in lengths.iter().zip(&cuts).enumerate() {
            cursor += cut - prev_cut + usize::from(i > 0);
            prev_cut = cut;
            annotations.push(ActionAnnotation {
                start: cursor as f64,
                end: (cursor + len) as f64,
                label: rng.random_range(0..self.num_classes),
            });
            cursor += len;
        }

        let d = self.feature_dim;
        let mut data = vec![0.0f64; self.length * d];
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).expect("valid sigma");
            for x in data.iter_mut() {
                *x = noise.sample(&mut rng);
            }
        }
        for a in &annotations {
            for t in a.start as usize..a.end as usize {
                data[t * d + a.label] += 1.0;
            }
        }
        // features are stored as f32 on disk
        for x in data.iter_mut() {
            *x = f64::from(*x as f32);
        }

        VideoRecord {
            id: format!("video_{index:05}"),
            features: Tensor::new(vec![self.length, d], data).expect("synth shape"),
            annotations,
        }
    }
}

/// Generates a dataset fully determined by `spec` (including its seed).
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.check()?;
    let indices: Vec<usize> = (0..spec.num_videos).collect();
    let videos = Exec::default().map(&indices, |&i| spec.video(i));
    Ok(Dataset {
        categories: (0..spec.num_classes).map(|k| format!("class_{k}")).collect(),
        feature_dim: spec.feature_dim,
        videos,
    })
}
