use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use bdrc::data::{
    load_dataset, load_predictions, save_dataset, save_predictions, seconds_to_snippets, snippets_to_seconds,
    synth_generate, FeatureStorage, Predictions, SynthSpec,
};
use bdrc::decode::{detect_dataset, InferenceConfig};
use bdrc::eval::{evaluate_with, parse_grid, EvalConfig, EvalReport};
use bdrc::heads::BinGrid;
use bdrc::losses::LossBreakdown;
use bdrc::par::{with_workers, Exec};
use bdrc::train::{load_checkpoint, save_checkpoint, train_with, TrainConfig};

use crate::args::{Common, EvalArgs, InferArgs, PlotArgs, SynthArgs, TrainArgs};
use crate::plot;

pub const CONFIG_ECHO: &str = "config.json";

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn prepare_out(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(&common.out)
}

fn echo<T: Serialize>(out: &Path, run: &T) -> Result<()> {
    write_file(&out.join(CONFIG_ECHO), serde_json::to_string_pretty(run)?.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match value {
        Some(p) => Ok(p),
        None => bail!("missing --{flag} (flag or config file)"),
    }
}

fn exec_for(workers: usize) -> Exec {
    if workers == 1 {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

// ---- synth ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    pub spec: SynthSpec,
    pub test_videos: usize,
    pub inline: bool,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut run: SynthRun = load_config(args.common.config.as_deref())?;
    let s = &mut run.spec;
    set(&mut s.seed, args.seed);
    set(&mut s.num_videos, args.videos);
    set(&mut s.length, args.length);
    set(&mut s.feature_dim, args.feature_dim);
    set(&mut s.num_classes, args.classes);
    set(&mut s.instances_per_video, args.instances);
    set(&mut s.noise_sigma, args.noise);
    set(&mut s.min_len, args.min_len);
    set(&mut s.max_len, args.max_len);
    set(&mut run.test_videos, args.test_videos);
    run.inline |= args.inline;
    if run.test_videos > run.spec.num_videos {
        bail!("--test-videos {} exceeds --videos {}", run.test_videos, run.spec.num_videos);
    }

    let out = prepare_out(&args.common)?;
    let ds = synth_generate(&run.spec)?;
    let storage = if run.inline { FeatureStorage::Inline } else { FeatureStorage::Blobs };
    if run.test_videos == 0 {
        save_dataset(&ds, out.join("dataset.json"), storage)?;
    } else {
        let cut = ds.videos.len() - run.test_videos;
        save_dataset(&ds.subset(0..cut), out.join("train.json"), storage)?;
        save_dataset(&ds.subset(cut..ds.videos.len()), out.join("test.json"), storage)?;
    }
    echo(out, &run)?;
    eprintln!("wrote {} videos to {}", ds.videos.len(), out.display());
    Ok(())
}

// ---- train ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    pub workers: usize,
    pub train: TrainConfig,
}

pub fn history_csv(history: &[LossBreakdown], cfg: &TrainConfig) -> String {
    let mut s = String::from("epoch,lr,ccsm,rrsm,cls,rcm,total\n");
    for (e, h) in history.iter().enumerate() {
        s.push_str(&format!(
            "{e},{},{},{},{},{},{}\n",
            cfg.lr_at(e),
            h.l_ccsm,
            h.l_rrsm,
            h.l_cls,
            h.l_rcm,
            h.total
        ));
    }
    s
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut run: TrainRun = load_config(args.common.config.as_deref())?;
    if args.data.is_some() {
        run.data = args.data;
    }
    set(&mut run.workers, args.workers);
    let t = &mut run.train;
    set(&mut t.seed, args.seed);
    set(&mut t.epochs, args.epochs);
    set(&mut t.lr, args.lr);
    set(&mut t.batch_size, args.batch_size);
    set(&mut t.levels, args.levels);
    set(&mut t.width, args.width);
    set(&mut t.labels.sigma, args.sigma);
    set(&mut t.labels.lambda_rs, args.lambda_rs);
    set(&mut t.loss.lambda_norm, args.lambda_norm);
    if args.bins.is_some() || args.bin_cov.is_some() {
        t.grid = BinGrid::new(args.bins.unwrap_or(t.grid.bins), args.bin_cov.unwrap_or(t.grid.coverage))?;
    }
    // an unchanged decay epoch past a shortened run would fail validation
    if let Some(d) = t.decay_epoch {
        if args.epochs.is_some() && d > t.epochs {
            t.decay_epoch = None;
        }
    }

    let data = load_dataset(required(&run.data, "data")?)?;
    let out = prepare_out(&args.common)?;
    let cfg = run.train;
    let epochs = cfg.epochs;
    let outcome = with_workers(run.workers, || {
        train_with(&data, &cfg, exec_for(run.workers), |epoch, loss| {
            eprintln!("epoch {:>3}/{epochs}  loss {:.5}", epoch + 1, loss.total);
        })
    })?;
    save_checkpoint(out.join("model.ckpt"), &outcome.model, Some(&cfg))?;
    write_file(&out.join("history.csv"), history_csv(&outcome.history, &cfg).as_bytes())?;
    echo(out, &run)?;
    Ok(())
}

// ---- infer ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferRun {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub workers: usize,
    pub snippet_seconds: Option<f64>,
    pub inference: InferenceConfig,
}

fn check_snippet_seconds(s: Option<f64>) -> Result<()> {
    match s {
        Some(v) if !(v > 0.0 && v.is_finite()) => bail!("--snippet-seconds must be > 0, got {v}"),
        _ => Ok(()),
    }
}

fn convert(preds: &mut Predictions, f: impl Fn(f64) -> f64) {
    for d in preds.values_mut().flatten() {
        d.start = f(d.start);
        d.end = f(d.end);
    }
}

pub fn infer(args: InferArgs) -> Result<()> {
    let mut run: InferRun = load_config(args.common.config.as_deref())?;
    if args.checkpoint.is_some() {
        run.checkpoint = args.checkpoint;
    }
    if args.data.is_some() {
        run.data = args.data;
    }
    set(&mut run.workers, args.workers);
    if args.snippet_seconds.is_some() {
        run.snippet_seconds = args.snippet_seconds;
    }
    let c = &mut run.inference;
    set(&mut c.lambda_vid, args.lambda_vid);
    set(&mut c.lambda_cls, args.lambda_cls);
    set(&mut c.nms_tiou, args.nms);
    set(&mut c.max_keep, args.max_keep);
    set(&mut c.score_mode, args.score_mode);
    if args.no_rcm {
        c.use_rcm = false;
    }
    check_snippet_seconds(run.snippet_seconds)?;

    let ckpt = load_checkpoint(required(&run.checkpoint, "checkpoint")?)?;
    let data = load_dataset(required(&run.data, "data")?)?;
    let out = prepare_out(&args.common)?;
    let mut preds = with_workers(run.workers, || {
        detect_dataset(&data, &ckpt.model, &run.inference, exec_for(run.workers))
    })?;
    if let Some(sps) = run.snippet_seconds {
        convert(&mut preds, |x| snippets_to_seconds(x, sps));
    }
    save_predictions(&preds, out.join("predictions.json"))?;
    echo(out, &run)?;
    let n: usize = preds.values().map(Vec::len).sum();
    eprintln!("{n} detections over {} videos", preds.len());
    Ok(())
}

// ---- eval ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    pub predictions: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub workers: usize,
    pub snippet_seconds: Option<f64>,
    pub plot: bool,
    pub eval: EvalConfig,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            predictions: None,
            data: None,
            workers: 0,
            snippet_seconds: None,
            plot: false,
            eval: EvalConfig {
                thresholds: parse_grid("0.3:0.1:0.7").expect("default grid"),
                f1_score_threshold: None,
            },
        }
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut run: EvalRun = load_config(args.common.config.as_deref())?;
    if args.predictions.is_some() {
        run.predictions = args.predictions;
    }
    if args.data.is_some() {
        run.data = args.data;
    }
    set(&mut run.workers, args.workers);
    if args.snippet_seconds.is_some() {
        run.snippet_seconds = args.snippet_seconds;
    }
    run.plot |= args.plot;
    if let Some(spec) = &args.thresholds {
        run.eval.thresholds = parse_grid(spec)?;
    }
    if args.f1_score_threshold.is_some() {
        run.eval.f1_score_threshold = args.f1_score_threshold;
    }
    check_snippet_seconds(run.snippet_seconds)?;

    let mut preds = load_predictions(required(&run.predictions, "predictions")?)?;
    let data = load_dataset(required(&run.data, "data")?)?;
    if let Some(sps) = run.snippet_seconds {
        convert(&mut preds, |x| seconds_to_snippets(x, sps));
    }
    let out = prepare_out(&args.common)?;
    let report = with_workers(run.workers, || evaluate_with(&preds, &data, &run.eval, exec_for(run.workers)))?;
    let table = report.to_table();
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_file(&out.join("report.txt"), table.as_bytes())?;
    if run.plot {
        write_file(&out.join("map.svg"), plot::map_bars(&report).as_bytes())?;
    }
    echo(out, &run)?;
    std::io::stdout().write_all(table.as_bytes())?;
    Ok(())
}

// ---- plot ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotRun {
    pub report: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let mut run: PlotRun = load_config(args.common.config.as_deref())?;
    if args.report.is_some() {
        run.report = args.report;
    }
    if args.history.is_some() {
        run.history = args.history;
    }
    if run.report.is_none() && run.history.is_none() {
        bail!("nothing to plot: pass --report and/or --history");
    }
    let out = prepare_out(&args.common)?;
    if let Some(path) = &run.report {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        write_file(&out.join("map.svg"), plot::map_bars(&report).as_bytes())?;
    }
    if let Some(path) = &run.history {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let totals = plot::parse_history_totals(&text).with_context(|| format!("parsing {}", path.display()))?;
        write_file(&out.join("loss.svg"), plot::loss_curve(&totals).as_bytes())?;
    }
    echo(out, &run)?;
    Ok(())
}
