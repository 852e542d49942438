//! Deterministic training loop and checkpoint files.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::heads::BinGrid;
use crate::labels::{assign_targets, LabelConfig, TargetSet};
use crate::losses::{objective_nodes, LossBreakdown, LossConfig};
use crate::model::{num_top_snippets, Model, ModelConfig};
use crate::msb::PyramidLayout;
use crate::numkit::{Graph, Optimizer, OptimizerConfig, ParamSet, Tensor};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// First epoch (0-based) trained with `decayed_lr`; `None` keeps `lr`.
    pub decay_epoch: Option<usize>,
    pub decayed_lr: f64,
    pub optimizer: OptimizerConfig,
    /// Videos per parameter update; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    pub levels: usize,
    pub width: usize,
    pub grid: BinGrid,
    pub labels: LabelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 7e-4,
            decay_epoch: Some(45),
            decayed_lr: 7e-5,
            optimizer: OptimizerConfig::default(),
            batch_size: 4,
            seed: 0,
            levels: 4,
            width: 64,
            grid: BinGrid::default(),
            labels: LabelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.decayed_lr >= 0.0 && self.decayed_lr.is_finite()) {
            return bad(format!("learning rates must be finite and >= 0: {} / {}", self.lr, self.decayed_lr));
        }
        match self.optimizer {
            OptimizerConfig::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return bad(format!("momentum {momentum} outside [0, 1)"));
            }
            OptimizerConfig::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                return bad(format!("bad Adam parameters {beta1}, {beta2}, {eps}"));
            }
            _ => {}
        }
        if self.batch_size == 0 || self.levels == 0 || self.width == 0 {
            return bad("batch size, levels and width must be >= 1".into());
        }
        if let Some(d) = self.decay_epoch {
            if d > self.epochs {
                return bad(format!("decay epoch {d} > epochs {}", self.epochs));
            }
        }
        if !(self.labels.sigma > 0.0) || !(self.loss.lambda_norm > 0.0) {
            return bad("sigma and lambda_norm must be > 0".into());
        }
        BinGrid::new(self.grid.bins, self.grid.coverage)?;
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_epoch {
            Some(d) if epoch >= d => self.decayed_lr,
            _ => self.lr,
        }
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            feature_dim: dataset.feature_dim,
            num_classes: dataset.num_classes(),
            levels: self.levels,
            width: self.width,
            grid: self.grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean loss terms per epoch.
    pub history: Vec<LossBreakdown>,
}

/// Targets for one video, computed once.
pub fn video_targets(video: &VideoRecord, config: &ModelConfig, labels: &LabelConfig) -> Result<TargetSet> {
    let layout = PyramidLayout::new(video.num_snippets(), config.levels)?;
    assign_targets(&video.annotations, &layout, &config.grid, config.num_classes, labels)
}

/// Loss terms and parameter gradients of the full objective on one video.
pub fn video_gradients(
    model: &Model,
    video: &VideoRecord,
    targets: &TargetSet,
    loss: &LossConfig,
) -> Result<(LossBreakdown, ParamSet)> {
    let mut g = Graph::new(&model.params);
    let (layout, nodes) = model.record(&mut g, &video.features)?;
    let n_v = num_top_snippets(layout.total(), video.num_snippets());
    let p_vl = g.top_k_mean(nodes.p_rc, n_v)?;
    let out = nodes.with_video_level(p_vl);
    let terms = objective_nodes(&mut g, &out, targets, loss)?;
    let breakdown = terms.breakdown(&g);
    let (_, grads) = g.backward(terms.total)?;
    Ok((breakdown, grads))
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, Exec::default(), |_, _| {})
}

/// [`train`] with an execution policy for per-video work inside a batch and a
/// callback invoked after every epoch.
///
/// Gradients inside a batch are reduced in shuffled order regardless of the
/// policy, so results are identical for every policy.
pub fn train_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.videos.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    dataset.validate()?;
    let model_cfg = cfg.model_config(dataset);
    let mut model = Model::init(model_cfg, cfg.seed)?;
    let targets = exec.try_map(&dataset.videos, |v| video_targets(v, &model_cfg, &cfg.labels))?;

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut optimizer = Optimizer::new(&cfg.optimizer);
    let mut order: Vec<usize> = (0..dataset.videos.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let lr = cfg.lr_at(epoch);
        let mut per_video = vec![LossBreakdown::default(); dataset.videos.len()];
        for batch in order.chunks(cfg.batch_size) {
            let results = exec.try_map(batch, |&i| {
                video_gradients(&model, &dataset.videos[i], &targets[i], &cfg.loss).map_err(|e| match e {
                    Error::Probability { value, .. } if value.is_nan() => Error::Diverged {
                        epoch,
                        video: dataset.videos[i].id.clone(),
                        loss: f64::NAN,
                    },
                    e => e,
                })
            })?;
            let mut grads = model.params.zeros_like();
            for (&i, (b, g)) in batch.iter().zip(&results) {
                if !b.total.is_finite() || !g.all_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        video: dataset.videos[i].id.clone(),
                        loss: b.total,
                    });
                }
                per_video[i] = *b;
                for (name, t) in g.iter() {
                    grads.accumulate(name, t)?;
                }
            }
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f64;
                let names: Vec<String> = grads.names().cloned().collect();
                for name in names {
                    let scaled = grads.get(&name)?.map(|v| v * inv);
                    grads.assign(&name, scaled)?;
                }
            }
            optimizer.step(&mut model.params, &grads, lr)?;
            if !model.params.all_finite() {
                let last = batch[batch.len() - 1];
                return Err(Error::Diverged {
                    epoch,
                    video: dataset.videos[last].id.clone(),
                    loss: per_video[last].total,
                });
            }
        }
        // summed in dataset order so the mean does not depend on the shuffle
        let mut sum = LossBreakdown::default();
        for b in &per_video {
            accumulate(&mut sum, b);
        }
        let n = dataset.videos.len() as f64;
        let mean = LossBreakdown {
            l_ccsm: sum.l_ccsm / n,
            l_rrsm: sum.l_rrsm / n,
            l_cls: sum.l_cls / n,
            l_rcm: sum.l_rcm / n,
            total: sum.total / n,
        };
        on_epoch(epoch, &mean);
        history.push(mean);
    }
    Ok(TrainOutcome { model, history })
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.l_ccsm += b.l_ccsm;
    sum.l_rrsm += b.l_rrsm;
    sum.l_cls += b.l_cls;
    sum.l_rcm += b.l_rcm;
    sum.total += b.total;
}

// ---- checkpoints ----

const MAGIC: &[u8; 8] = b"BDRCCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    seed: u64,
    params: Vec<(String, Vec<usize>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
}

/// Layout: magic, version (u32 LE), header length (u64 LE), JSON header with
/// configs and parameter shapes, then every parameter as f64 LE in header order.
pub fn checkpoint_bytes(model: &Model, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let header = Header {
        model: model.config,
        train: train.copied(),
        seed: model.params.seed(),
        params: model
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + 8 * model.params.num_scalars() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, train: Option<&TrainConfig>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, train)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let fail = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| fail("truncated header"))?;
    let header: Header = serde_json::from_slice(body)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    // the stored tensors must be exactly those the config implies
    let reference = Model::init(header.model, header.seed)?;
    let expected: Vec<(String, Vec<usize>)> = reference
        .params
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if expected != header.params {
        return Err(fail("parameter names or shapes do not match the model config"));
    }
    let mut params = ParamSet::new(header.seed);
    let mut data = &bytes[20 + hlen..];
    for (name, shape) in &header.params {
        let n: usize = shape.iter().product();
        if data.len() < 8 * n {
            return Err(Error::Checkpoint(format!("truncated data for `{name}`")));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        data = &data[8 * n..];
        params.insert(name.clone(), Tensor::new(shape.clone(), values)?)?;
    }
    if !data.is_empty() {
        return Err(fail("trailing bytes after parameter data"));
    }
    Ok(Checkpoint {
        model: Model {
            config: header.model,
            params,
        },
        train: header.train,
    })
}
