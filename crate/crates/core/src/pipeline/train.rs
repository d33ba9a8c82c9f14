use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{
    harvest_by_entropy, harvest_by_loss, harvest_top_loss, plan_stages, review_mix, ChallengeArchive, CurriculumPlan,
    HarvestConfig, HarvestRule, LossStats, RosterEntry, ScheduleConfig, StageSpec,
};
use crate::data::{LoadedDataset, Manifest};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParameterSet, SimpleIr};
use crate::numerics::DiffGraph;
use crate::objective::{loss_on_graph, ImagePair, LossConfig, MetricReport};

use super::augment::crop_and_flip;
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::eval::evaluate;
use super::optim::{adamw_step, AdamWConfig, OptimizerState};

/// Stage order of a full run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainOrder {
    /// Ascending mean entropy difference, as ranked.
    #[default]
    Entropy,
    /// The ranked plan shuffled by the run seed.
    Random,
}

impl fmt::Display for TrainOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainOrder::Entropy => "entropy",
            TrainOrder::Random => "random",
        })
    }
}

impl FromStr for TrainOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" | "ordered" => Ok(TrainOrder::Entropy),
            "random" => Ok(TrainOrder::Random),
            other => Err(Error::Config(format!("unknown order `{other}` (expected entropy or random)"))),
        }
    }
}

/// Missing sections of a config file take their defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub order: TrainOrder,
    /// Largest side evaluated in one piece; bigger images are tiled.
    pub eval_tile: usize,
    /// Mid-stage checkpoint period in iterations, 0 for stage ends only.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            optimizer: AdamWConfig::default(),
            schedule: ScheduleConfig::default(),
            seed: 0,
            order: TrainOrder::Entropy,
            eval_tile: 256,
            checkpoint_every: 0,
        }
    }
}

/// Everything the training loop mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    /// Global iteration counter across stages.
    pub iteration: u64,
    /// 1-based stage the loop is in.
    pub stage: usize,
    /// Iterations finished within `stage`.
    pub stage_iteration: usize,
    /// Per-iteration sample and crop draws are a pure function of
    /// `(seed, stage, stage_iteration)`, so this is the whole RNG state.
    pub seed: u64,
    pub loss_stats: LossStats,
}

impl TrainState {
    pub fn new(params: ParameterSet, seed: u64) -> Self {
        let optimizer = OptimizerState::new(&params);
        TrainState { params, optimizer, iteration: 0, stage: 1, stage_iteration: 0, seed, loss_stats: LossStats::new() }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub stage: usize,
    pub dataset: String,
    pub id: String,
    pub loss: f64,
}

impl LogRecord {
    /// Tab-separated; the loss prints with round-trip precision.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}/{}\t{:?}", self.iteration, self.stage, self.dataset, self.id, self.loss)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad log line `{line}`"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let (dataset, id) = f[2].split_once('/').ok_or_else(bad)?;
        Ok(LogRecord {
            iteration: f[0].parse().map_err(|_| bad())?,
            stage: f[1].parse().map_err(|_| bad())?,
            dataset: dataset.into(),
            id: id.into(),
            loss: f[3].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Hooks called by the training loop.
pub trait TrainObserver {
    /// After every optimizer step. Returning [`Flow::Stop`] interrupts the run.
    fn on_iteration(&mut self, _record: &LogRecord, _state: &TrainState) -> Result<Flow> {
        Ok(Flow::Continue)
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Collects the log in memory and optionally stops after a global iteration.
#[derive(Default)]
pub struct Recorder {
    pub log: Vec<LogRecord>,
    pub stop_after: Option<u64>,
}

impl TrainObserver for Recorder {
    fn on_iteration(&mut self, record: &LogRecord, _state: &TrainState) -> Result<Flow> {
        self.log.push(record.clone());
        Ok(match self.stop_after {
            Some(k) if record.iteration >= k => Flow::Stop,
            _ => Flow::Continue,
        })
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SAMPLER_TAG: u64 = 0x5a4d_504c;
const CROP_TAG: u64 = 0x4352_4f50;

/// Roster index used at `it`: each epoch visits the roster once in a fresh
/// permutation keyed by `(seed, stage, epoch)`.
pub fn roster_index(seed: u64, stage: usize, it: usize, len: usize) -> usize {
    let epoch = (it / len) as u64;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed ^ SAMPLER_TAG, stage as u64, epoch)));
    perm[it % len]
}

/// Samples resolvable by `(dataset, id)`.
pub struct SamplePool<'a> {
    datasets: BTreeMap<&'a str, &'a LoadedDataset>,
}

impl<'a> SamplePool<'a> {
    pub fn new(datasets: &'a [LoadedDataset]) -> Self {
        SamplePool { datasets: datasets.iter().map(|d| (d.name.as_str(), d)).collect() }
    }

    pub fn dataset(&self, name: &str) -> Result<&'a LoadedDataset> {
        self.datasets.get(name).copied().ok_or_else(|| Error::Data(format!("no loaded dataset `{name}`")))
    }

    fn sample(&self, e: &RosterEntry) -> Result<&'a crate::data::Sample> {
        self.dataset(&e.dataset)?
            .train_sample(&e.id)
            .ok_or_else(|| Error::Data(format!("dataset `{}` has no training sample `{}`", e.dataset, e.id)))
    }

    fn known(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.datasets
            .iter()
            .map(|(n, d)| (n.to_string(), d.train.iter().map(|s| s.id.clone()).collect()))
            .collect()
    }
}

/// Loss and gradients of one crop.
pub fn train_step_loss(
    net: &SimpleIr,
    params: &ParameterSet,
    pair: &ImagePair,
    loss: &LossConfig,
) -> Result<(f64, Vec<crate::numerics::Tensor>)> {
    let mut g = DiffGraph::new();
    let vars = net.bind(&mut g, params)?;
    let x = g.leaf(pair.restored.clone());
    let y = g.leaf(pair.reference.clone());
    let out = net.forward(&mut g, &vars, x)?;
    let l = loss_on_graph(&mut g, out.restored, y, loss)?;
    let value = g.value(l).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric { op: "restoration_loss".into(), detail: format!("loss is {value}") });
    }
    let mut grads = g.backward(l)?;
    let grads = vars
        .iter()
        .map(|v| grads.take(*v).ok_or_else(|| Error::Contract("missing parameter gradient".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Settings shared by every stage of a run.
pub struct StageContext<'a> {
    pub net: &'a SimpleIr,
    pub loss: &'a LossConfig,
    pub optimizer: &'a AdamWConfig,
    pub harvest: &'a HarvestConfig,
    pub pool: &'a SamplePool<'a>,
}

fn harvest(
    spec: &StageSpec,
    stats: &LossStats,
    cfg: &HarvestConfig,
    dataset: &LoadedDataset,
) -> Result<ChallengeArchive> {
    let n = dataset.train.len();
    match (spec.harvest_rule, cfg.review_fraction) {
        (HarvestRule::None, _) => Ok(ChallengeArchive::empty(&spec.dataset, spec.index)),
        (HarvestRule::Loss, _) if stats.len() < 2 => Ok(ChallengeArchive::empty(&spec.dataset, spec.index)),
        (HarvestRule::Loss, Some(f)) => harvest_top_loss(stats, f, n, &spec.dataset, spec.index),
        (HarvestRule::Loss, None) => harvest_by_loss(stats, cfg.kappa, &spec.dataset, spec.index),
        (HarvestRule::Entropy, f) => {
            harvest_by_entropy(&dataset.entropy_stats()?, f.unwrap_or(cfg.top_fraction), &spec.dataset, spec.index)
        }
    }
}

/// Runs the remaining iterations of `spec` from `state.stage_iteration`.
///
/// Returns `None` if the observer stopped the run, otherwise the stage's
/// archive. Only losses of the stage's own dataset from `harvest_start` on
/// enter the harvesting window.
pub fn run_stage(
    ctx: &StageContext<'_>,
    state: &mut TrainState,
    spec: &StageSpec,
    roster: &[RosterEntry],
    observer: &mut dyn TrainObserver,
) -> Result<Option<ChallengeArchive>> {
    if roster.is_empty() {
        return Err(Error::Contract(format!("stage {} has an empty roster", spec.index)));
    }
    if spec.harvest_start > spec.iterations {
        return Err(Error::Contract(format!(
            "harvest start {} exceeds the {} iterations of stage {}",
            spec.harvest_start, spec.iterations, spec.index
        )));
    }
    let dataset = ctx.pool.dataset(&spec.dataset)?;
    let smallest = dataset.train.iter().map(|s| s.degraded.shape().h.min(s.degraded.shape().w)).min().unwrap_or(0);
    if spec.iterations > 0 && spec.crop_size > smallest {
        return Err(Error::Config(format!(
            "crop {} exceeds the smallest training image side {smallest} of `{}`",
            spec.crop_size, spec.dataset
        )));
    }
    while state.stage_iteration < spec.iterations {
        let it = state.stage_iteration;
        let entry = &roster[roster_index(state.seed, spec.index, it, roster.len())];
        let sample = ctx.pool.sample(entry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(state.seed ^ CROP_TAG, spec.index as u64, it as u64));
        let pair = ImagePair::new(sample.degraded.clone(), sample.reference.clone())?;
        let crop = crop_and_flip(&pair, spec.crop_size, &mut rng)?;
        let (loss, grads) = train_step_loss(ctx.net, &state.params, &crop, ctx.loss)?;
        adamw_step(&mut state.params, &mut state.optimizer, &grads, spec.lr, ctx.optimizer)?;
        if it >= spec.harvest_start && entry.dataset == spec.dataset {
            state.loss_stats.record(&entry.id, loss);
        }
        state.stage_iteration += 1;
        state.iteration += 1;
        let record = LogRecord {
            iteration: state.iteration,
            stage: spec.index,
            dataset: entry.dataset.clone(),
            id: entry.id.clone(),
            loss,
        };
        if observer.on_iteration(&record, state)? == Flow::Stop {
            return Ok(None);
        }
    }
    harvest(spec, &state.loss_stats, ctx.harvest, dataset).map(Some)
}

/// Metrics on one dataset's test split after one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub stage: usize,
    pub trained: String,
    pub dataset: String,
    pub report: MetricReport,
}

impl GridCell {
    pub const TSV_HEADER: &'static str = "stage\ttrained\tdataset\tpsnr\tssim\tloss\tsamples";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:?}\t{:?}\t{:?}\t{}",
            self.stage, self.trained, self.dataset, self.report.psnr, self.report.ssim, self.report.loss, self.report.sample_count
        )
    }

    pub fn parse_tsv(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad metric line `{line}`"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(GridCell {
            stage: f[0].parse().map_err(|_| bad())?,
            trained: f[1].into(),
            dataset: f[2].into(),
            report: MetricReport {
                psnr: num(f[3])?,
                ssim: num(f[4])?,
                loss: num(f[5])?,
                sample_count: f[6].parse().map_err(|_| bad())?,
            },
        })
    }
}

pub fn grid_to_tsv(cells: &[GridCell]) -> String {
    let mut s = String::from(GridCell::TSV_HEADER);
    s.push('\n');
    for c in cells {
        s.push_str(&c.to_tsv());
        s.push('\n');
    }
    s
}

pub fn grid_from_tsv(text: &str) -> Result<Vec<GridCell>> {
    text.lines()
        .filter(|l| !l.is_empty() && *l != GridCell::TSV_HEADER)
        .map(GridCell::parse_tsv)
        .collect()
}

/// Result of a full curriculum run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// False when the observer interrupted the run.
    pub finished: bool,
    pub checkpoints: Vec<PathBuf>,
}

/// Loads every dataset the plan names.
pub fn load_plan_datasets(manifest: &Manifest, plan: &CurriculumPlan) -> Result<Vec<LoadedDataset>> {
    plan.stages.iter().map(|s| manifest.load_dataset(&s.name)).collect()
}

/// Metrics on every loaded dataset's test split, in plan order.
pub fn evaluate_all(
    net: &SimpleIr,
    params: &ParameterSet,
    datasets: &[LoadedDataset],
    loss: &LossConfig,
    tile: usize,
) -> Result<Vec<(String, MetricReport)>> {
    datasets.iter().map(|d| Ok((d.name.clone(), evaluate(net, params, &d.test, loss, tile)?))).collect()
}

/// A fresh run state for `config` and `plan`, ordered per `config.order`.
pub fn initial_checkpoint(config: &TrainConfig, plan: &CurriculumPlan) -> Result<Checkpoint> {
    LossConfig::new(config.loss.lambda)?;
    plan.harvest.validate()?;
    let net = SimpleIr::new(config.model)?;
    let plan = match config.order {
        TrainOrder::Entropy => plan.clone(),
        TrainOrder::Random => plan.shuffled(config.seed),
    };
    Ok(Checkpoint {
        config: *config,
        plan,
        state: TrainState::new(net.init_params(config.seed), config.seed),
        archives: Vec::new(),
        grid: Vec::new(),
    })
}

/// Sequential review-learning run over the plan, continuing from `start`.
///
/// Each stage trains on its dataset mixed with the decayed tops of earlier
/// archives, harvests its own archive, and is evaluated on every dataset's
/// test split. With `out_dir` set, writes `stage-<k>.ck` after every stage
/// (plus `iter-<n>.ck` every `checkpoint_every` iterations) and appends the
/// per-iteration log to `train.log`.
pub fn train_review_learning(
    manifest: &Manifest,
    start: Checkpoint,
    out_dir: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let cfg = start.config;
    let net = SimpleIr::new(cfg.model)?;
    let stages = plan_stages(&start.plan, &cfg.schedule)?;
    let datasets = load_plan_datasets(manifest, &start.plan)?;
    let pool = SamplePool::new(&datasets);
    let known = pool.known();
    let harvest_cfg = start.plan.harvest;
    let ctx = StageContext {
        net: &net,
        loss: &cfg.loss,
        optimizer: &cfg.optimizer,
        harvest: &harvest_cfg,
        pool: &pool,
    };
    let mut ck = start;
    let mut written = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    let mut log = out_dir.map(|d| LogSink::new(&d.join("train.log"), ck.state.iteration)).transpose()?;

    while ck.state.stage <= stages.len() {
        let spec = &stages[ck.state.stage - 1];
        let ds = pool.dataset(&spec.dataset)?;
        let ids: Vec<String> = ds.train.iter().map(|s| s.id.clone()).collect();
        let archives: &[ChallengeArchive] = if spec.review { &ck.archives } else { &[] };
        let roster = review_mix(&spec.dataset, &ids, archives, &known, spec.index, ck.plan.harvest.decay, cfg.seed)?;

        let snapshot = ck.clone();
        let mut hook = StageHook {
            inner: observer,
            log: log.as_mut(),
            every: cfg.checkpoint_every,
            out_dir,
            snapshot: &snapshot,
            written: &mut written,
            last_good: &mut last_good,
        };
        let result = run_stage(&ctx, &mut ck.state, spec, &roster, &mut hook);
        let archive = match result {
            Ok(Some(a)) => a,
            Ok(None) => return Ok(TrainOutcome { checkpoint: ck, finished: false, checkpoints: written }),
            Err(e) => return Err(with_checkpoint_hint(e, last_good.as_deref())),
        };
        if let Some(l) = log.as_mut() {
            l.flush()?;
        }
        for (dataset, report) in evaluate_all(&net, &ck.state.params, &datasets, &cfg.loss, cfg.eval_tile)? {
            ck.grid.push(GridCell { stage: spec.index, trained: spec.dataset.clone(), dataset, report });
        }
        ck.archives.push(archive);
        ck.state.stage += 1;
        ck.state.stage_iteration = 0;
        ck.state.loss_stats = LossStats::new();
        if let Some(dir) = out_dir {
            let path = dir.join(format!("stage-{}.ck", spec.index));
            save_checkpoint(&ck, &path)?;
            last_good = Some(path.clone());
            written.push(path);
        }
    }
    Ok(TrainOutcome { checkpoint: ck, finished: true, checkpoints: written })
}

fn with_checkpoint_hint(e: Error, last: Option<&Path>) -> Error {
    match e {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: match last {
                Some(p) => format!("{detail}; last good checkpoint: {}", p.display()),
                None => format!("{detail}; no checkpoint written yet"),
            },
        },
        other => other,
    }
}

/// Append-only log file, truncated to the resume point on open.
struct LogSink {
    path: PathBuf,
    pending: String,
}

impl LogSink {
    fn new(path: &Path, resume_at: u64) -> Result<Self> {
        let mut kept = String::new();
        if resume_at > 0 {
            if let Ok(text) = std::fs::read_to_string(path) {
                for line in text.lines() {
                    if LogRecord::parse(line)?.iteration <= resume_at {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        Ok(LogSink { path: path.to_path_buf(), pending: String::new() })
    }

    fn push(&mut self, r: &LogRecord) -> Result<()> {
        self.pending.push_str(&r.to_line());
        self.pending.push('\n');
        if self.pending.len() > 1 << 16 {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        use std::io::Write;
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        f.write_all(self.pending.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.pending.clear();
        Ok(())
    }
}

struct StageHook<'a, 'b> {
    inner: &'a mut dyn TrainObserver,
    log: Option<&'a mut LogSink>,
    every: usize,
    out_dir: Option<&'a Path>,
    snapshot: &'b Checkpoint,
    written: &'a mut Vec<PathBuf>,
    last_good: &'a mut Option<PathBuf>,
}

impl TrainObserver for StageHook<'_, '_> {
    fn on_iteration(&mut self, record: &LogRecord, state: &TrainState) -> Result<Flow> {
        if let Some(l) = self.log.as_mut() {
            l.push(record)?;
        }
        let flow = self.inner.on_iteration(record, state)?;
        let periodic = self.every > 0 && record.iteration.is_multiple_of(self.every as u64);
        if let (Some(dir), true) = (self.out_dir, periodic || flow == Flow::Stop) {
            if let Some(l) = self.log.as_mut() {
                l.flush()?;
            }
            let ck = Checkpoint { state: state.clone(), ..self.snapshot.clone() };
            let path = dir.join(format!("iter-{}.ck", record.iteration));
            save_checkpoint(&ck, &path)?;
            *self.last_good = Some(path.clone());
            self.written.push(path);
        }
        Ok(flow)
    }
}
