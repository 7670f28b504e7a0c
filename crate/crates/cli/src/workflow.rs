//! The fuse → pretrain → finetune → eval → report workflow.
//!
//! Everything lives under the configured output directory:
//!
//! ```text
//! <out>/fused/{train,test}.ebfr, frame_stats.ebst, fused_stats.ebst
//! <out>/rep-<i>/pretrained.ebdn    DBN only
//! <out>/rep-<i>/finetuned.ebdn     DBN + head + Adam state
//! <out>/rep-<i>/pretrain.jsonl     one line per layer epoch
//! <out>/rep-<i>/finetune.jsonl     one line per batch, then per epoch
//! <out>/rep-<i>/report.json        the run's RunReport
//! ```
//!
//! Repetition `i` uses seed `seed + i`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use adbn_core::head::{build_head, finetune, predict_clip, OptimizerState};
use adbn_core::metrics::{accuracy, aggregate_by_model, confusion_matrix, format_table, Aggregate};
use adbn_core::pipeline::{load_manifest, prepare_dataset, PrepareOptions};
use adbn_core::{dbn, DbnStack, Error, Network, Result, RngStream, RunReport};
use serde::Serialize;

use crate::cache::{self, CachedSplit};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fused_dir(&self) -> PathBuf {
        self.root.join("fused")
    }

    pub fn rep_dir(&self, rep: usize) -> PathBuf {
        self.root.join(format!("rep-{rep}"))
    }

    pub fn pretrained(&self, rep: usize) -> PathBuf {
        self.rep_dir(rep).join("pretrained.ebdn")
    }

    pub fn finetuned(&self, rep: usize) -> PathBuf {
        self.rep_dir(rep).join("finetuned.ebdn")
    }

    pub fn report(&self, rep: usize) -> PathBuf {
        self.rep_dir(rep).join("report.json")
    }

    pub fn pretrain_log(&self, rep: usize) -> PathBuf {
        self.rep_dir(rep).join("pretrain.jsonl")
    }

    pub fn finetune_log(&self, rep: usize) -> PathBuf {
        self.rep_dir(rep).join("finetune.jsonl")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuseSummary {
    pub fusion_mode: String,
    pub train_clips: usize,
    pub test_clips: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub features: usize,
}

pub fn cmd_fuse(cfg: &ExperimentConfig) -> Result<FuseSummary> {
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let data = prepare_dataset(&manifest, cfg.fusion, &PrepareOptions::default())?;
    let layout = RunLayout::new(&cfg.out);
    cache::save_dataset(&layout.fused_dir(), &data)?;
    Ok(FuseSummary {
        fusion_mode: cfg.fusion.to_string(),
        train_clips: data.train.clip_ids.len(),
        test_clips: data.test.clip_ids.len(),
        train_rows: data.train.rows.rows(),
        test_rows: data.test.rows.rows(),
        features: data.train.rows.cols(),
    })
}

fn load_cached(cfg: &ExperimentConfig, path: &Path) -> Result<CachedSplit> {
    let cached = cache::load_split(path)?;
    if cached.mode != cfg.fusion {
        return Err(Error::config(format!(
            "{} holds {} rows but the experiment uses {} fusion; rerun fuse",
            path.display(),
            cached.mode,
            cfg.fusion
        )));
    }
    Ok(cached)
}

/// Writes JSON lines, remembering the first write error.
struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
    error: Option<Error>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonLines {
            path,
            out: BufWriter::new(file),
            error: None,
        })
    }

    fn write<T: Serialize>(&mut self, value: &T) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(value).expect("log records serialize");
        if let Err(e) = writeln!(self.out, "{line}") {
            self.error = Some(Error::io(&self.path, e));
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunReport::from_json_line(text.trim()).map_err(|e| e.context(path.display()))
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut line = report.to_json_line()?;
    line.push('\n');
    write_atomic(path, line.as_bytes())
}

fn existing_report(cfg: &ExperimentConfig, layout: &RunLayout, rep: usize) -> Result<RunReport> {
    let path = layout.report(rep);
    if path.exists() {
        read_report(&path)
    } else {
        Ok(new_report(cfg, rep))
    }
}

fn new_report(cfg: &ExperimentConfig, rep: usize) -> RunReport {
    RunReport::new(
        format!("{}/rep-{rep}", cfg.model_name()),
        cfg.repetition_seed(rep),
        cfg.fusion,
        cfg.arch,
    )
}

/// Greedy pre-training of every repetition. Progress goes to `progress`.
pub fn cmd_pretrain(cfg: &ExperimentConfig, progress: &mut dyn Write) -> Result<Vec<RunReport>> {
    let layout = RunLayout::new(&cfg.out);
    let train = load_cached(cfg, &cache::train_path(&layout.fused_dir()))?;
    (0..cfg.repetitions)
        .map(|rep| pretrain_repetition(cfg, &layout, rep, &train, progress))
        .collect()
}

fn pretrain_repetition(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    rep: usize,
    train: &CachedSplit,
    progress: &mut dyn Write,
) -> Result<RunReport> {
    let seed = cfg.repetition_seed(rep);
    let rng = RngStream::new(seed);
    let rows = &train.split.rows;
    let mut stack = DbnStack::with_layout(
        cfg.arch,
        cfg.fusion,
        rows.cols(),
        &cfg.hidden_sizes(),
        cfg.cd_configs(),
        &rng,
    )?;
    let mut log = JsonLines::create(layout.pretrain_log(rep))?;
    let start = Instant::now();
    let epochs = dbn::pretrain_greedy(&mut stack, rows, &rng, &mut |e| {
        log.write(e);
        let _ = writeln!(
            progress,
            "rep {rep} layer {} epoch {}: recon error {:.6}, {} rows, {:.2}s",
            e.layer, e.epoch, e.reconstruction_error, e.rows, e.wall_seconds
        );
    })
    .map_err(|e| e.context(format!("{} repetition {rep}", cfg.model_name())))?;
    let seconds = start.elapsed().as_secs_f64();
    log.finish()?;
    Checkpoint::pretrained(stack).save(&layout.pretrained(rep))?;

    let mut report = new_report(cfg, rep);
    report.pretrain_recon_errors = vec![Vec::new(); cfg.layers.len()];
    for e in &epochs {
        report.pretrain_recon_errors[e.layer].push(e.reconstruction_error);
    }
    report.pretrain_seconds = seconds;
    write_report(&layout.report(rep), &report)?;
    Ok(report)
}

fn check_matches(cfg: &ExperimentConfig, stack: &DbnStack, path: &Path) -> Result<()> {
    if stack.arch != cfg.arch || stack.fusion_mode != cfg.fusion {
        return Err(Error::config(format!(
            "{} holds {} but the experiment is {}",
            path.display(),
            stack.arch.model_name(stack.fusion_mode),
            cfg.model_name()
        )));
    }
    Ok(())
}

/// One checkpoint path per repetition, or the explicit one for a single
/// repetition.
fn checkpoint_paths(
    cfg: &ExperimentConfig,
    explicit: Option<&Path>,
    default: impl Fn(usize) -> PathBuf,
) -> Result<Vec<PathBuf>> {
    match explicit {
        Some(_) if cfg.repetitions != 1 => Err(Error::config(
            "an explicit checkpoint needs --repetitions 1",
        )),
        Some(p) => Ok(vec![p.to_path_buf()]),
        None => Ok((0..cfg.repetitions).map(default).collect()),
    }
}

/// Attaches a fresh head to each pre-trained stack and fine-tunes it.
pub fn cmd_finetune(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    progress: &mut dyn Write,
) -> Result<Vec<RunReport>> {
    let layout = RunLayout::new(&cfg.out);
    let train = load_cached(cfg, &cache::train_path(&layout.fused_dir()))?;
    let labels = train.split.row_labels();
    let paths = checkpoint_paths(cfg, checkpoint, |r| layout.pretrained(r))?;
    let mut reports = Vec::new();
    for (rep, path) in paths.iter().enumerate() {
        let ckpt = Checkpoint::load(path)?;
        check_matches(cfg, &ckpt.stack, path)?;
        if !ckpt.head.is_empty() {
            return Err(Error::precondition(format!(
                "{} is already fine-tuned",
                path.display()
            )));
        }
        let rng = RngStream::new(cfg.repetition_seed(rep));
        let head = build_head(ckpt.stack.top_dim(), train.n_classes, cfg.strict, &rng)?;
        let mut net = Network::new(ckpt.stack, head)?;
        let mut optimizer = OptimizerState::for_network(&net);
        let start = Instant::now();
        let log = finetune(&mut net, &cfg.finetune, &train.split.rows, &labels, &mut optimizer, &rng)
            .map_err(|e| e.context(format!("{} repetition {rep}", cfg.model_name())))?;
        let seconds = start.elapsed().as_secs_f64();

        let mut lines = JsonLines::create(layout.finetune_log(rep))?;
        log.batches.iter().for_each(|b| lines.write(b));
        log.epochs.iter().for_each(|e| lines.write(e));
        lines.finish()?;
        for e in &log.epochs {
            let _ = writeln!(
                progress,
                "rep {rep} finetune epoch {}: loss {:.6}, train accuracy {:.4}, {:.2}s",
                e.epoch, e.loss, e.accuracy, e.wall_seconds
            );
        }
        Checkpoint::finetuned(net, Some(optimizer)).save(&layout.finetuned(rep))?;

        let mut report = existing_report(cfg, &layout, rep)?;
        report.finetune_losses = log.epochs.iter().map(|e| e.loss).collect();
        report.finetune_seconds = seconds;
        report.test_accuracy = None;
        report.confusion = None;
        write_report(&layout.report(rep), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Clip-level test accuracy of each fine-tuned repetition.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<RunReport>> {
    let layout = RunLayout::new(&cfg.out);
    let test = load_cached(cfg, &cache::test_path(&layout.fused_dir()))?;
    if test.split.clip_ids.is_empty() {
        return Err(Error::data("the fused cache has no test clips"));
    }
    let paths = checkpoint_paths(cfg, checkpoint, |r| layout.finetuned(r))?;
    let mut reports = Vec::new();
    for (rep, path) in paths.iter().enumerate() {
        let ckpt = Checkpoint::load(path)?;
        check_matches(cfg, &ckpt.stack, path)?;
        let net = ckpt.network()?;
        if net.n_classes() != test.n_classes {
            return Err(Error::data(format!(
                "model predicts {} classes, test split has {}",
                net.n_classes(),
                test.n_classes
            )));
        }
        let start = Instant::now();
        let predictions = predict_clip(&net, &test.split.rows, &test.split.row_clip)?;
        let predicted: Vec<usize> = predictions.iter().map(|p| p.class).collect();
        let acc = accuracy(&predicted, &test.split.clip_labels)?;
        let confusion = confusion_matrix(&predicted, &test.split.clip_labels, test.n_classes)?;

        let mut report = existing_report(cfg, &layout, rep)?;
        report.test_accuracy = Some(acc);
        report.confusion = Some(confusion);
        report.eval_seconds = start.elapsed().as_secs_f64();
        write_report(&layout.report(rep), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Every `report.json` below `dir`, in path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<RunReport>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.iter().map(|p| read_report(p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub aggregates: Vec<Aggregate>,
    pub table: String,
}

/// Mean ± std table over the evaluated runs below `dir`.
pub fn cmd_report(dir: &Path) -> Result<ReportOutput> {
    let evaluated: Vec<RunReport> = collect_reports(dir)?
        .into_iter()
        .filter(|r| r.test_accuracy.is_some())
        .collect();
    if evaluated.is_empty() {
        return Err(Error::precondition(format!(
            "no evaluated run reports under {}",
            dir.display()
        )));
    }
    let aggregates = aggregate_by_model(&evaluated)?;
    let table = format_table(&aggregates);
    Ok(ReportOutput { aggregates, table })
}

/// All stages in sequence.
pub fn cmd_run(cfg: &ExperimentConfig, progress: &mut dyn Write) -> Result<(Vec<RunReport>, ReportOutput)> {
    let summary = cmd_fuse(cfg)?;
    let _ = writeln!(
        progress,
        "fused {} train rows, {} test rows ({} fusion)",
        summary.train_rows, summary.test_rows, summary.fusion_mode
    );
    cmd_pretrain(cfg, progress)?;
    cmd_finetune(cfg, None, progress)?;
    let reports = cmd_eval(cfg, None)?;
    let table = cmd_report(&cfg.out)?;
    Ok((reports, table))
}
