//! Config-driven commands: plain training, pruning runs, cost comparison,
//! table recomputation and colormap export. Each writes its artifacts under
//! the configured output directory and reports progress lines to `out`.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::ae::{AeHistory, AeSample};
use crate::arch::{builtin_arch, ArchSpec, Shape3, BUILTIN_NAMES};
use crate::checkpoint;
use crate::colormap::{activation_maps, write_export, ColormapExport};
use crate::config::{DatasetFormat, RunConfig};
use crate::cost::{network_cost_with, CostConventions, CostReport};
use crate::data::{load_cifar_binary_with, load_idx_with, subset, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::prune::{run_pruning_in_training, AeProfile, NetRole, NetworkTrainer, PruneEvent, RunObserver, StageRecord};
use crate::rng::{derive_seed, PURPOSE_SUBSET_TEST, PURPOSE_SUBSET_TRAIN};
use crate::tables::{CellStatus, TablesReport};
use crate::train::{EpochStats, SgdTrainer};

pub const THREADS_ENV: &str = "DENSIPRUNE_THREADS";

/// Caps the worker pool at `DENSIPRUNE_THREADS` when set. Returns the cap.
pub fn init_thread_pool() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a pool may already exist in this process (tests); the first cap wins
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let d = &cfg.dataset;
    let norm = d.normalization();
    let load = |files: &[PathBuf]| -> Result<Dataset> {
        match d.format {
            DatasetFormat::Idx => load_idx_with(&files[0], &files[1], norm.clone(), d.num_classes),
            DatasetFormat::Cifar => {
                let paths: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
                load_cifar_binary_with(&paths, norm.clone(), d.num_classes)
            }
        }
    };
    let mut train = load(&d.train)?;
    let mut test = load(&d.test)?;
    if let Some(n) = d.train_per_class {
        train = subset(&train, n, derive_seed(cfg.seed, PURPOSE_SUBSET_TRAIN, 0))
            .map_err(|e| Error::Config(format!("training subset: {e}")))?;
    }
    if let Some(n) = d.test_per_class {
        test = subset(&test, n, derive_seed(cfg.seed, PURPOSE_SUBSET_TEST, 0))
            .map_err(|e| Error::Config(format!("test subset: {e}")))?;
    }
    if train.sample_shape() != test.sample_shape() {
        return Err(Error::Config(format!(
            "train images are {:?}, test images {:?}",
            train.sample_shape(),
            test.sample_shape()
        )));
    }
    Ok(Datasets { train, test })
}

pub fn resolve_arch(cfg: &RunConfig, data: &Datasets) -> Result<ArchSpec> {
    let [c, h, w] = data.train.sample_shape();
    cfg.arch.resolve(Shape3::new(c, h, w), cfg.dataset.num_classes)
}

/// Append-only, timestamped run log; the only non-deterministic artifact.
#[derive(Clone)]
pub struct RunLog {
    file: Rc<RefCell<File>>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<RunLog> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            file: Rc::new(RefCell::new(file)),
        })
    }

    pub fn line(&self, msg: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        // logging is best-effort
        let _ = writeln!(self.file.borrow_mut(), "[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis());
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text)
}

fn start_run(cfg: &RunConfig) -> Result<RunLog> {
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("resolved_config.toml"), cfg.resolved().to_toml_string())?;
    let log = RunLog::create(&cfg.output_dir.join("run.log"))?;
    log.line(&format!("output_dir {}", cfg.output_dir.display()));
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub total_ae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkMetrics {
    pub arch: String,
    pub prunable_sizes: Vec<usize>,
    pub total_params: u64,
    pub total_macs: u64,
    pub final_test_accuracy: f64,
    pub epochs: Vec<EpochMetrics>,
}

/// SGD trainer that logs every epoch and keeps per-epoch metrics.
struct Logged<'a> {
    inner: SgdTrainer<'a>,
    log: RunLog,
    metrics: Vec<EpochMetrics>,
}

impl Logged<'_> {
    fn record(&mut self, role: NetRole, sample: &AeSample) {
        let stats = self.inner.last_stats.unwrap_or(EpochStats {
            mean_loss: f64::NAN,
            train_accuracy: f64::NAN,
        });
        self.log.line(&format!(
            "{} epoch {}: loss {:.5} train_acc {:.4} test_acc {:.4} total_ae {:.5}",
            role_name(role),
            sample.epoch,
            stats.mean_loss,
            stats.train_accuracy,
            sample.accuracy,
            sample.total_ae
        ));
        self.metrics.push(EpochMetrics {
            epoch: sample.epoch,
            loss: stats.mean_loss,
            train_accuracy: stats.train_accuracy,
            test_accuracy: sample.accuracy,
            total_ae: sample.total_ae,
        });
    }
}

impl NetworkTrainer for Logged<'_> {
    type Net = Model<f32>;

    fn instantiate(&mut self, arch: &ArchSpec, role: NetRole) -> Result<Model<f32>> {
        self.log.line(&format!("{}: widths {:?}", role_name(role), arch.prunable_sizes()));
        self.metrics.clear();
        self.inner.instantiate(arch, role)
    }

    fn train_epoch(&mut self, net: &mut Model<f32>, role: NetRole, epoch: usize, phase: usize) -> Result<AeSample> {
        let sample = self.inner.train_epoch(net, role, epoch, phase)?;
        self.record(role, &sample);
        Ok(sample)
    }
}

fn role_name(role: NetRole) -> String {
    match role {
        NetRole::Stage(i) => format!("net{i}"),
        NetRole::Final => "final".into(),
    }
}

fn network_metrics(arch: &ArchSpec, cost: &CostReport, history: &AeHistory, epochs: Vec<EpochMetrics>) -> NetworkMetrics {
    NetworkMetrics {
        arch: arch.name.clone(),
        prunable_sizes: arch.prunable_sizes(),
        total_params: cost.total_params,
        total_macs: cost.total_macs,
        final_test_accuracy: history.last().map_or(0.0, |s| s.accuracy),
        epochs,
    }
}

pub struct TrainOutcome {
    pub arch: ArchSpec,
    pub history: AeHistory,
    pub metrics: NetworkMetrics,
    pub model: Model<f32>,
}

/// Trains the configured architecture for `epochs_budget` epochs without
/// pruning. Writes `ae_history.csv`, `metrics.json`, `model.ckpt`,
/// `resolved_config.toml` and `run.log`.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_datasets(cfg)?;
    let arch = resolve_arch(cfg, &data)?;
    let log = start_run(cfg)?;
    let mut trainer = Logged {
        inner: SgdTrainer::new(&data.train, &data.test, cfg.optimizer.clone(), cfg.seed),
        log: log.clone(),
        metrics: Vec::new(),
    };
    let role = NetRole::Stage(0);
    let mut model = trainer.instantiate(&arch, role)?;
    let mut history = AeHistory::new(0);
    for epoch in 0..cfg.epochs_budget {
        let sample = trainer.train_epoch(&mut model, role, epoch, cfg.epochs_budget)?;
        progress(out, &format!("epoch {epoch}: test accuracy {:.4}, total AE {:.4}", sample.accuracy, sample.total_ae));
        history.push(sample)?;
    }
    let dir = &cfg.output_dir;
    history.write_csv(&dir.join("ae_history.csv"))?;
    let cost = network_cost_with(&arch, CostConventions::default())?;
    let metrics = network_metrics(&arch, &cost, &history, std::mem::take(&mut trainer.metrics));
    write_json(&dir.join("metrics.json"), &metrics)?;
    checkpoint::save(&model, &dir.join("model.ckpt"))?;
    log.line("done");
    Ok(TrainOutcome {
        arch,
        history,
        metrics,
        model,
    })
}

fn progress(out: &mut dyn Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

/// One line of `events.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventRecord {
    Stage(StageSummary),
    Prune(PruneEvent),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub network_index: usize,
    pub epochs_trained: usize,
    /// False when the stage hit the epoch budget before saturating.
    pub saturated: bool,
    pub profile: AeProfile,
    pub final_accuracy: f64,
    pub final_total_ae: f64,
    pub prunable_sizes: Vec<usize>,
    pub total_params: u64,
    pub total_macs: u64,
    pub params_reduction: f64,
    pub ops_reduction: f64,
}

impl StageSummary {
    /// `net{i}` row: epochs to ρ, parameter and OPS reduction, accuracy.
    pub fn line(&self) -> String {
        let rho = if self.saturated {
            format!("{}", self.epochs_trained)
        } else {
            format!("{} (budget, no saturation)", self.epochs_trained)
        };
        format!(
            "net{}: epochs to rho {rho}, params reduction {:.1}x, ops reduction {:.1}x, accuracy {:.2}%, profile {:?}",
            self.network_index,
            self.params_reduction,
            self.ops_reduction,
            100.0 * self.final_accuracy,
            self.profile
        )
    }
}

struct FileObserver<'a> {
    dir: PathBuf,
    events: File,
    baseline: CostReport,
    log: RunLog,
    out: &'a mut dyn Write,
    summaries: Vec<StageSummary>,
}

impl RunObserver for FileObserver<'_> {
    fn on_stage_end(&mut self, stage: &StageRecord) -> Result<()> {
        let cost = network_cost_with(&stage.arch, self.baseline.conventions)?.against(&self.baseline)?;
        let summary = StageSummary {
            network_index: stage.network_index,
            epochs_trained: stage.epochs_trained,
            saturated: stage.saturated,
            profile: stage.profile,
            final_accuracy: stage.final_accuracy,
            final_total_ae: stage.history.last().map_or(0.0, |s| s.total_ae),
            prunable_sizes: stage.arch.prunable_sizes(),
            total_params: cost.total_params,
            total_macs: cost.total_macs,
            params_reduction: cost.params_reduction.unwrap_or(1.0),
            ops_reduction: cost.ops_reduction.unwrap_or(1.0),
        };
        let dir = self.dir.join(format!("stage_{}", stage.network_index));
        create_dir(&dir)?;
        stage.history.write_csv(&dir.join("ae_history.csv"))?;
        stage.arch.save(&dir.join("arch.toml"))?;
        write_json(&dir.join("summary.json"), &summary)?;
        self.append(&EventRecord::Stage(summary.clone()))?;
        self.log.line(&summary.line());
        progress(self.out, &summary.line());
        self.summaries.push(summary);
        Ok(())
    }

    fn on_prune(&mut self, event: &PruneEvent) -> Result<()> {
        self.append(&EventRecord::Prune(event.clone()))?;
        let line = format!("prune net{}: {:?} -> {:?}", event.from_index, event.old_sizes, event.new_sizes);
        self.log.line(&line);
        progress(self.out, &line);
        Ok(())
    }
}

impl FileObserver<'_> {
    fn append(&mut self, record: &EventRecord) -> Result<()> {
        let path = self.dir.join("events.jsonl");
        let mut line = serde_json::to_string(record).expect("serializable");
        line.push('\n');
        self.events
            .write_all(line.as_bytes())
            .and_then(|_| self.events.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageCost {
    pub network_index: usize,
    pub total_params: u64,
    pub total_macs: u64,
    pub params_reduction: f64,
    pub ops_reduction: f64,
}

/// Contents of `cost_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunCostReport {
    pub baseline: CostReport,
    pub final_network: CostReport,
    pub stages: Vec<StageCost>,
}

pub struct PruneRunOutcome {
    pub stages: Vec<StageSummary>,
    pub events: Vec<PruneEvent>,
    pub final_index: usize,
    pub final_arch: ArchSpec,
    pub final_history: AeHistory,
    pub final_metrics: NetworkMetrics,
    pub cost: RunCostReport,
    /// Per-stage histories, in order.
    pub histories: Vec<AeHistory>,
}

impl PruneRunOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.final_metrics.final_test_accuracy
    }
}

/// Runs pruning in training. Stage files (`stage_{i}/`) and `events.jsonl`
/// lines are written as each stage ends; `final/` and `cost_report.json`
/// once the final network is trained.
pub fn cmd_prune_run(cfg: &RunConfig, out: &mut dyn Write) -> Result<PruneRunOutcome> {
    cfg.validate()?;
    let data = load_datasets(cfg)?;
    let arch = resolve_arch(cfg, &data)?;
    let log = start_run(cfg)?;
    let dir = cfg.output_dir.clone();
    let events_path = dir.join("events.jsonl");
    let events = File::create(&events_path).map_err(|e| Error::io(&events_path, e))?;
    let conventions = CostConventions::default();
    let baseline = network_cost_with(&arch, conventions)?;
    let mut trainer = Logged {
        inner: SgdTrainer::new(&data.train, &data.test, cfg.optimizer.clone(), cfg.seed),
        log: log.clone(),
        metrics: Vec::new(),
    };
    let mut observer = FileObserver {
        dir: dir.clone(),
        events,
        baseline: baseline.clone(),
        log: log.clone(),
        out,
        summaries: Vec::new(),
    };
    let outcome = run_pruning_in_training(&mut trainer, &arch, &cfg.criteria, cfg.epochs_budget, &mut observer)?;
    let summaries = std::mem::take(&mut observer.summaries);

    let final_dir = dir.join("final");
    create_dir(&final_dir)?;
    let final_cost = network_cost_with(&outcome.final_arch, conventions)?.against(&baseline)?;
    outcome.final_history.write_csv(&final_dir.join("ae_history.csv"))?;
    outcome.final_arch.save(&final_dir.join("arch.toml"))?;
    checkpoint::save(&outcome.final_net, &final_dir.join("model.ckpt"))?;
    let final_metrics = network_metrics(
        &outcome.final_arch,
        &final_cost,
        &outcome.final_history,
        std::mem::take(&mut trainer.metrics),
    );
    write_json(&final_dir.join("metrics.json"), &final_metrics)?;
    let cost = RunCostReport {
        baseline,
        stages: summaries
            .iter()
            .map(|s| StageCost {
                network_index: s.network_index,
                total_params: s.total_params,
                total_macs: s.total_macs,
                params_reduction: s.params_reduction,
                ops_reduction: s.ops_reduction,
            })
            .collect(),
        final_network: final_cost,
    };
    write_json(&dir.join("cost_report.json"), &cost)?;
    let line = format!(
        "final net{}: {} epochs, params reduction {:.1}x, ops reduction {:.1}x, accuracy {:.2}%",
        outcome.final_index,
        outcome.final_history.len(),
        cost.final_network.params_reduction.unwrap_or(1.0),
        cost.final_network.ops_reduction.unwrap_or(1.0),
        100.0 * final_metrics.final_test_accuracy
    );
    log.line(&line);
    progress(observer.out, &line);
    Ok(PruneRunOutcome {
        histories: outcome.stages.iter().map(|s| s.history.clone()).collect(),
        stages: summaries,
        events: outcome.events,
        final_index: outcome.final_index,
        final_arch: outcome.final_arch,
        final_history: outcome.final_history,
        final_metrics,
        cost,
    })
}

/// Reads an architecture argument: a file path, or a built-in name when no
/// such file exists. `input`/`classes` override the file's own values.
pub fn resolve_arch_arg(arg: &str, input: Option<Shape3>, classes: Option<usize>) -> Result<ArchSpec> {
    let path = Path::new(arg);
    if !path.exists() && BUILTIN_NAMES.contains(&arg) {
        return builtin_arch(arg, input.unwrap_or(Shape3::new(3, 32, 32)), classes.unwrap_or(10));
    }
    let mut arch = ArchSpec::load(path)?;
    if input.is_some() || classes.is_some() {
        if let Some(i) = input {
            arch.input_shape = [i.channels, i.height, i.width];
        }
        if let Some(c) = classes {
            arch.num_classes = c;
            if let Some(crate::arch::LayerSpec::Fc { out_features }) = arch.layers.last_mut() {
                *out_features = c;
            }
        }
        arch.refresh_projections().map_err(|e| Error::Config(format!("{arg}: {e}")))?;
        arch.validate().map_err(|e| Error::Config(format!("{arg}: {e}")))?;
    }
    Ok(arch)
}

/// Parses `CxHxW`.
pub fn parse_shape(s: &str) -> Result<Shape3> {
    let parts: Vec<usize> = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("input shape must look like 3x32x32, got {s:?}")))?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape3::new(c, h, w)),
        _ => Err(Error::Config(format!("input shape must look like 3x32x32, got {s:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostComparison {
    pub baseline: CostReport,
    pub pruned: CostReport,
    pub ops_reduction: f64,
    pub params_reduction: f64,
}

pub fn cmd_cost(a: &ArchSpec, b: &ArchSpec, conventions: CostConventions) -> Result<CostComparison> {
    let baseline = network_cost_with(a, conventions)?;
    let pruned = network_cost_with(b, conventions)?.against(&baseline)?;
    Ok(CostComparison {
        ops_reduction: pruned.ops_reduction.expect("set by against"),
        params_reduction: pruned.params_reduction.expect("set by against"),
        baseline,
        pruned,
    })
}

fn format_report(s: &mut String, r: &CostReport) {
    let _ = writeln!(s, "{}", r.arch);
    let _ = writeln!(s, "  {:<18} {:>6} {:>6} {:>3} {:>9} {:>14} {:>12}", "layer", "N", "M", "k", "O", "MACs", "params");
    for l in &r.per_layer {
        let _ = writeln!(
            s,
            "  {:<18} {:>6} {:>6} {:>3} {:>9} {:>14} {:>12}",
            l.name,
            l.n,
            l.m,
            l.k,
            format!("{}x{}", l.output_size.0, l.output_size.1),
            l.macs,
            l.params
        );
    }
    let _ = writeln!(s, "  total MACs {}  total params {}", r.total_macs, r.total_params);
}

pub fn format_cost(c: &CostComparison) -> String {
    let mut s = String::new();
    format_report(&mut s, &c.baseline);
    format_report(&mut s, &c.pruned);
    let _ = writeln!(s, "ops reduction {:.4}x", c.ops_reduction);
    let _ = writeln!(s, "params reduction {:.4}x", c.params_reduction);
    s
}

pub fn format_tables(r: &TablesReport) -> String {
    let mut s = String::new();
    let mut table = "";
    for c in r.cells() {
        if c.table != table {
            table = &c.table;
            let _ = writeln!(s, "\n== {table} ==");
        }
        let recomputed = c.recomputed.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = write!(
            s,
            "{:<18} {:<22} published {:>7.2}  recomputed {:>7}  [{}]",
            c.row,
            c.column,
            c.published,
            recomputed,
            c.status.label()
        );
        if !c.formula.is_empty() {
            let _ = write!(s, "  = {}", c.formula);
        }
        if let Some(n) = &c.note {
            let _ = write!(s, "  ({n})");
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "\n== reduction ratios (bias {}, projections {}) ==",
        if r.conventions.include_bias { "counted" } else { "excluded" },
        if r.conventions.count_projections { "counted" } else { "excluded" }
    );
    for c in &r.ratios {
        let _ = writeln!(
            s,
            "{:<22} net{} {:<6} published {:>6.1}x  recomputed {:>7.2}x  rel.err {:>5.1}%  [{}]",
            c.setting,
            c.net,
            c.metric,
            c.published,
            c.recomputed,
            100.0 * c.relative_error,
            if c.pass { "within 15%" } else { "outside 15%" }
        );
    }
    let failed = r.cells().filter(|c| c.status == CellStatus::Fail).count();
    let _ = writeln!(s, "\nderivable cells failing: {failed}");
    s
}

/// Channel-mean maps of one test image through a checkpointed model,
/// written to `<output_dir>/colormap/image{index}/`.
pub fn cmd_export_colormap(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    layers: &[usize],
    image_index: usize,
) -> Result<(ColormapExport, Vec<PathBuf>)> {
    let data = load_datasets(cfg)?;
    let mut model: Model<f32> = checkpoint::load(checkpoint_path)?;
    if image_index >= data.test.len() {
        return Err(Error::InvalidArgument(format!(
            "image index {image_index} out of range ({} test images)",
            data.test.len()
        )));
    }
    let (image, _) = data.test.gather(&[image_index])?;
    let export = activation_maps(&mut model, &image, image_index, layers)?;
    let dir = cfg.output_dir.join("colormap").join(format!("image{image_index}"));
    let paths = write_export(&export, &dir)?;
    Ok((export, paths))
}
