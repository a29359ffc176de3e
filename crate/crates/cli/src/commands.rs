//! Subcommand implementations. Each returns data for the caller to print so
//! the same paths are exercised by tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dal_core::data::{generate_synthetic, load_features, save_dataset};
use dal_core::eval::{association_rate, evaluate, true_match_rate};
use dal_core::{Checkpoint, DalError, Dataset, EvalReport, MergeState, Result, Scalar, Trainer};

use crate::config::{Precision, RunConfig};
use crate::metrics::{read_metrics, MetricsRow, MetricsWriter};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.dalc";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

/// Generates the synthetic dataset named by the config and writes it to the
/// configured feature and manifest paths.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Dataset> {
    let syn = cfg.synthetic();
    syn.validate()?;
    let data = generate_synthetic(&syn)?;
    ensure_parent(&cfg.features)?;
    ensure_parent(&cfg.manifest)?;
    save_dataset(&data.dataset, &cfg.features, &cfg.manifest)?;
    let resolved = cfg.features.with_extension("config");
    fs::write(resolved, cfg.to_text())?;
    Ok(data.dataset)
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("iter_{iteration:08}.dalc"))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub iterations: u64,
    pub last: Option<MetricsRow>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Runs the training loop, writing metrics, checkpoints and the resolved
/// config under `output_dir`. With `resume`, training continues from the
/// checkpoint and metrics rows past its iteration are discarded.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_features(&cfg.features, &cfg.manifest)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join(RESOLVED_CONFIG), cfg.to_text())?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, &data, resume),
        Precision::F64 => train_with::<f64>(cfg, &data, resume),
    }
}

fn snapshot<T: Scalar>(trainer: &Trainer<T>, data: &Dataset) -> (f64, Option<f64>) {
    let bank = trainer.bank();
    let tmr = data.labels.as_ref().and_then(|l| true_match_rate(bank, l).ok());
    (association_rate(bank), tmr)
}

fn train_with<T: Scalar>(cfg: &RunConfig, data: &Dataset, resume: Option<&Path>) -> Result<TrainSummary> {
    let tc = cfg.train();
    let frames = &data.frames;
    let metrics_path = cfg.output_dir.join(METRICS_FILE);
    let (mut trainer, mut writer) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.precision != T::NAME {
                return Err(DalError::InvalidConfig(format!(
                    "checkpoint was trained in {} but precision = {}",
                    ckpt.precision,
                    T::NAME
                )));
            }
            let kept: Vec<MetricsRow> = match read_metrics(&metrics_path) {
                Ok(rows) => rows.into_iter().filter(|r| r.iter <= ckpt.iteration).collect(),
                Err(DalError::Io(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            (Trainer::<T>::from_checkpoint(&ckpt, frames, &tc)?, MetricsWriter::create(&metrics_path, &kept)?)
        }
        None => {
            let trainer = Trainer::<T>::new(frames, &tc)?;
            let mut w = MetricsWriter::create(&metrics_path, &[])?;
            let (assoc_rate, true_match_rate) = snapshot(&trainer, data);
            w.write(&MetricsRow {
                iter: 0,
                loss_intra: None,
                loss_cross: None,
                loss_total: None,
                assoc_rate,
                true_match_rate,
            })?;
            (trainer, w)
        }
    };
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(cfg.output_dir.join(CHECKPOINT_DIR))?;
    }

    let mut last = None;
    while trainer.iteration() < cfg.max_iter {
        let report = trainer.step(frames)?;
        let it = report.iteration;
        if it % cfg.eval_every == 0 || it == cfg.max_iter {
            let (assoc_rate, true_match_rate) = snapshot(&trainer, data);
            let row = MetricsRow {
                iter: it,
                loss_intra: Some(report.loss.loss_intra.as_f64()),
                loss_cross: Some(report.loss.loss_cross.as_f64()),
                loss_total: Some(report.loss.loss_total.as_f64()),
                assoc_rate,
                true_match_rate,
            };
            writer.write(&row)?;
            last = Some(row);
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            trainer.checkpoint().save(&checkpoint_path(&cfg.output_dir, it))?;
        }
    }
    writer.finish()?;
    let checkpoint = cfg.output_dir.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&checkpoint)?;
    Ok(TrainSummary { iterations: trainer.iteration(), last, checkpoint, metrics: metrics_path })
}

/// Evaluates a checkpoint against a labelled dataset.
pub fn cmd_eval(checkpoint: &Path, features: &Path, manifest: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = load_features(features, manifest)?;
    let labels = data.labels.as_ref().ok_or(DalError::MissingLabels)?;
    evaluate(&ckpt.head, &ckpt.bank, &data.frames, labels, ckpt.iteration)
}

pub const EVAL_HEADER: [&str; 8] =
    ["iter", "rank1", "rank5", "rank10", "rank20", "map", "assoc_rate", "true_match_rate"];

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_HEADER)?;
    w.write_record([
        report.iteration.to_string(),
        report.rank(1).to_string(),
        report.rank(5).to_string(),
        report.rank(10).to_string(),
        report.rank(20).to_string(),
        report.map.to_string(),
        report.association_rate.to_string(),
        report.true_match_rate.map(|v| v.to_string()).unwrap_or_default(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn format_eval(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "iteration        {}", report.iteration);
    let _ = writeln!(s, "queries          {}", report.queries);
    for r in [1, 5, 10, 20] {
        let _ = writeln!(s, "rank-{r:<2}          {:.4}", report.rank(r));
    }
    let _ = writeln!(s, "mAP              {:.4}", report.map);
    let _ = writeln!(s, "association rate {:.4}", report.association_rate);
    match report.true_match_rate {
        Some(v) => {
            let _ = writeln!(s, "true match rate  {v:.4}");
        }
        None => {
            let _ = writeln!(s, "true match rate  n/a (no merged anchors)");
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inspection {
    pub iteration: u64,
    pub precision: String,
    pub head: String,
    pub anchors_per_camera: Vec<usize>,
    pub merged_per_camera: Vec<usize>,
    pub association_rate: f64,
    pub param_norms: Vec<(&'static str, f64)>,
    pub learning_rate: f64,
}

pub fn cmd_inspect(checkpoint: &Path) -> Result<Inspection> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let spec = ckpt.head.spec();
    let merged_per_camera = ckpt
        .bank
        .cameras()
        .iter()
        .map(|c| c.merge_states().iter().filter(|m| matches!(m, MergeState::Merged { .. })).count())
        .collect();
    Ok(Inspection {
        iteration: ckpt.iteration,
        precision: ckpt.precision.clone(),
        head: format!("{} {}→{}", spec.kind.name(), spec.d_in, spec.d_out),
        anchors_per_camera: ckpt.bank.cameras().iter().map(|c| c.len()).collect(),
        merged_per_camera,
        association_rate: association_rate(&ckpt.bank),
        param_norms: ckpt
            .head
            .param_blocks()
            .into_iter()
            .map(|(name, v)| (name, v.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect(),
        learning_rate: ckpt.optimizer.rate(),
    })
}

impl std::fmt::Display for Inspection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "iteration     {}", self.iteration)?;
        writeln!(f, "precision     {}", self.precision)?;
        writeln!(f, "head          {}", self.head)?;
        writeln!(f, "learning rate {}", self.learning_rate)?;
        writeln!(f, "camera  anchors  merged  unmerged")?;
        for (k, (&n, &m)) in self.anchors_per_camera.iter().zip(&self.merged_per_camera).enumerate() {
            writeln!(f, "{k:>6}  {n:>7}  {m:>6}  {:>8}", n - m)?;
        }
        writeln!(f, "association rate {:.4}", self.association_rate)?;
        for (name, norm) in &self.param_norms {
            writeln!(f, "‖{name}‖ = {norm:.6}")?;
        }
        Ok(())
    }
}

pub const REPORT_HEADER: [&str; 8] =
    ["iter", "loss_I", "loss_C", "loss_total", "assoc_rate", "true_match_rate", "rank1", "map"];

/// Per-iteration curve for plotting. Rows come from the metrics CSV; when a
/// dataset is given, `rank1` and `map` are filled at iterations that have a
/// saved checkpoint in `run_dir/checkpoints`.
pub fn cmd_report(run_dir: &Path, dataset: Option<(&Path, &Path)>, out: &Path) -> Result<usize> {
    let rows = read_metrics(&run_dir.join(METRICS_FILE))?;
    if let Some(w) = rows.windows(2).find(|w| w[1].iter <= w[0].iter) {
        return Err(DalError::BadMetrics { row: 0, message: format!("iteration {} follows {}", w[1].iter, w[0].iter) });
    }
    let data = dataset.map(|(f, m)| load_features(f, m)).transpose()?;
    let labels = match &data {
        Some(d) => Some(d.labels.as_ref().ok_or(DalError::MissingLabels)?),
        None => None,
    };
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(REPORT_HEADER)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        let mut rank1 = None;
        let mut map = None;
        if let (Some(d), Some(l)) = (&data, labels) {
            let p = checkpoint_path(run_dir, r.iter);
            if p.exists() {
                let c = Checkpoint::load(&p)?;
                let e = evaluate(&c.head, &c.bank, &d.frames, l, c.iteration)?;
                rank1 = Some(e.rank(1));
                map = Some(e.map);
            }
        }
        w.write_record([
            r.iter.to_string(),
            fmt(r.loss_intra),
            fmt(r.loss_cross),
            fmt(r.loss_total),
            r.assoc_rate.to_string(),
            fmt(r.true_match_rate),
            fmt(rank1),
            fmt(map),
        ])?;
    }
    w.flush()?;
    Ok(rows.len())
}
