use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use reviewir::curriculum::{
    harvest_by_entropy, harvest_by_loss, harvest_top_loss, rank_datasets, ChallengeArchive, CurriculumPlan,
    EntropyStats, HarvestConfig, HarvestRule, LossStats,
};
use reviewir::data::{
    build_manifest, encode_image, load_image, synthetic_sources, DegradationKind, Manifest, SplitCounts,
};
use reviewir::model::{ModelConfig, SimpleIr};
use reviewir::numerics::{Shape, Tensor};
use reviewir::objective::{fmt_metric, restoration_loss, ImagePair, MetricReport};
use reviewir::pipeline::{
    evaluate, grid_from_tsv, grid_to_tsv, initial_checkpoint, load_checkpoint, restore_image, train_review_learning,
    write_atomic, Recorder, TrainConfig, TrainOrder,
};

use crate::report::{render_report, RunTable};
use crate::{CliError, CliResult, EvalArgs, HarvestArgs, HarvestFlags, InferArgs, InitArgs, RankArgs, ReportArgs, SynthArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| reviewir::Error::Io { path: dir.to_path_buf(), source: e }.into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn to_toml<T: Serialize>(value: &T, what: &str) -> CliResult<String> {
    toml::to_string(value).map_err(|e| reviewir::Error::Format(format!("cannot encode {what}: {e}")).into())
}

fn apply_harvest_flags(mut h: HarvestConfig, f: &HarvestFlags) -> CliResult<HarvestConfig> {
    if let Some(v) = f.kappa {
        h.kappa = v;
    }
    if let Some(v) = f.top_fraction {
        h.top_fraction = v;
    }
    if let Some(v) = f.decay {
        h.decay = v;
    }
    if f.review_fraction.is_some() {
        h.review_fraction = f.review_fraction;
    }
    h.validate()?;
    Ok(h)
}

fn parse_kinds(a: &SynthArgs) -> CliResult<Vec<(DegradationKind, f64)>> {
    let mut kinds: Vec<(DegradationKind, f64)> = Vec::new();
    for k in &a.kinds {
        let kind: DegradationKind = k.trim().parse().map_err(|e: reviewir::Error| usage(e.to_string()))?;
        if kinds.iter().any(|(q, _)| *q == kind) {
            return Err(usage(format!("degradation `{kind}` listed twice")));
        }
        kinds.push((kind, kind.default_strength()));
    }
    for s in &a.strengths {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--strength expects KIND=S, got `{s}`")))?;
        let kind: DegradationKind = k.parse().map_err(|e: reviewir::Error| usage(e.to_string()))?;
        let v: f64 = v.parse().map_err(|_| usage(format!("bad strength `{v}`")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(format!("strength must lie in [0, 1], got {v}")));
        }
        let slot = kinds.iter_mut().find(|(q, _)| *q == kind).ok_or_else(|| usage(format!("`{kind}` is not in --kinds")))?;
        slot.1 = v;
    }
    Ok(kinds)
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let kinds = parse_kinds(&a)?;
    if a.train == 0 || a.test == 0 {
        return Err(usage("--train and --test must be positive"));
    }
    if a.size < 16 {
        return Err(usage(format!("--size must be at least 16, got {}", a.size)));
    }
    let out = a.out.resolve();
    let count = (a.train + a.test) * kinds.len();
    let sources = synthetic_sources(count, a.seed, a.size, a.size);
    create_dir(&out)?;
    let manifest = build_manifest(&sources, &kinds, SplitCounts { train: a.train, test: a.test }, a.seed, &out)?;
    for d in &manifest.datasets {
        let vals: Vec<f64> = d.train.iter().filter_map(|r| r.entropy_difference).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        println!("{}\ttrain={}\ttest={}\tmean_entropy_difference={mean:.6}", d.name, d.train.len(), d.test.len());
    }
    println!("manifest: {}", out.join("manifest.toml").display());
    Ok(())
}

fn entropy_stats(manifest: &Manifest) -> CliResult<Vec<(String, EntropyStats)>> {
    let names = manifest.names();
    if names.is_empty() {
        return Err(reviewir::Error::Data("manifest lists no datasets".into()).into());
    }
    names
        .into_iter()
        .map(|n| {
            let stats = manifest.load_dataset(&n)?.entropy_stats()?;
            Ok((n, stats))
        })
        .collect()
}

fn rank_plan(manifest: &Manifest, harvest: HarvestConfig) -> CliResult<(CurriculumPlan, Vec<(String, EntropyStats)>)> {
    let stats = entropy_stats(manifest)?;
    let entries: Vec<(String, Option<&EntropyStats>)> = stats.iter().map(|(n, s)| (n.clone(), Some(s))).collect();
    Ok((rank_datasets(&entries, harvest)?, stats))
}

#[derive(Serialize)]
struct RankSummary<'a> {
    command: &'a str,
    manifest: String,
    order: Vec<&'a str>,
    mean_entropy_difference: Vec<f64>,
    files: Vec<&'a str>,
}

pub fn rank(a: RankArgs) -> CliResult<()> {
    let harvest = apply_harvest_flags(HarvestConfig::default(), &a.harvest)?;
    let manifest = Manifest::load(&a.manifest)?;
    let (plan, stats) = rank_plan(&manifest, harvest)?;

    let mut tsv = String::from("dataset\tid\tentropy_difference\n");
    let mut csv = String::from("dataset,bin,lo,hi,count\n");
    for (name, s) in &stats {
        for (id, v) in &s.samples {
            tsv.push_str(&format!("{name}\t{id}\t{v:?}\n"));
        }
        let h = &s.histogram;
        for (i, c) in h.counts.iter().enumerate() {
            csv.push_str(&format!("{name},{i},{:.2},{:.2},{c}\n", h.edges[i], h.edges[i + 1]));
        }
    }
    let out = a.out.resolve();
    create_dir(&out)?;
    write_text(&out.join("plan.toml"), &plan.to_toml()?)?;
    write_text(&out.join("entropy.tsv"), &tsv)?;
    write_text(&out.join("histogram.csv"), &csv)?;
    let summary = RankSummary {
        command: "rank",
        manifest: a.manifest.display().to_string(),
        order: plan.order(),
        mean_entropy_difference: plan.stages.iter().map(|s| s.mean_entropy_difference).collect(),
        files: vec!["plan.toml", "entropy.tsv", "histogram.csv"],
    };
    write_text(&out.join("summary.toml"), &to_toml(&summary, "summary")?)?;
    for (i, s) in plan.stages.iter().enumerate() {
        println!("{}\t{}\tmean_entropy_difference={:.6}", i + 1, s.name, s.mean_entropy_difference);
    }
    println!("plan: {}", out.join("plan.toml").display());
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| reviewir::Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str::<TrainConfig>(&read_text(p)?)
            .map_err(|e| reviewir::Error::Format(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(p) = &a.preset {
        cfg.model = ModelConfig::preset(p)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.scale {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage(format!("--scale must be positive, got {s}")));
        }
        cfg.schedule.scale = s;
    }
    if let Some(o) = &a.order {
        cfg.order = o.parse::<TrainOrder>()?;
    }
    if let Some(c) = a.crop {
        cfg.schedule.crop_size = c;
    }
    if let Some(k) = a.checkpoint_every {
        cfg.checkpoint_every = k;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct ArchiveSummary {
    stage: usize,
    dataset: String,
    size: usize,
}

#[derive(Serialize)]
struct FinalMetric {
    dataset: String,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    command: &'static str,
    status: &'static str,
    seed: String,
    scale: f64,
    order: String,
    review_fraction: Option<f64>,
    stages: Vec<String>,
    iterations: u64,
    final_mean_psnr: Option<f64>,
    checkpoints: Vec<String>,
    archives: Vec<ArchiveSummary>,
    #[serde(rename = "final")]
    final_metrics: Vec<FinalMetric>,
}

fn checkpoint_names(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| reviewir::Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ck"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let start = match &a.resume {
        Some(p) => load_checkpoint(p)?,
        None => {
            let cfg = train_config(&a)?;
            let plan = match &a.plan {
                Some(p) => {
                    let mut plan = CurriculumPlan::from_toml(&read_text(p)?)?;
                    plan.harvest = apply_harvest_flags(plan.harvest, &a.harvest)?;
                    plan
                }
                None => rank_plan(&manifest, apply_harvest_flags(HarvestConfig::default(), &a.harvest)?)?.0,
            };
            initial_checkpoint(&cfg, &plan)?
        }
    };
    if a.resume.is_some() && (a.harvest.kappa.is_some() || a.harvest.review_fraction.is_some() || a.harvest.decay.is_some() || a.harvest.top_fraction.is_some()) {
        return Err(usage("harvest flags cannot change a resumed run"));
    }
    for s in &start.plan.stages {
        manifest.dataset(&s.name)?;
    }

    let out = a.out.resolve();
    create_dir(&out)?;
    if a.resume.is_none() {
        write_text(&out.join("config.toml"), &to_toml(&start.config, "config")?)?;
        write_text(&out.join("plan.toml"), &start.plan.to_toml()?)?;
    }
    let mut rec = Recorder { log: Vec::new(), stop_after: a.stop_after };
    let outcome = train_review_learning(&manifest, start, Some(&out), &mut rec)?;
    let ck = &outcome.checkpoint;

    for arch in &ck.archives {
        write_text(&out.join(format!("archive-stage-{}.tsv", arch.stage)), &arch.to_tsv())?;
    }
    write_text(&out.join("metrics.tsv"), &grid_to_tsv(&ck.grid))?;
    let last_stage = ck.grid.iter().map(|c| c.stage).max();
    let final_cells: Vec<_> = ck.grid.iter().filter(|c| Some(c.stage) == last_stage).collect();
    let summary = TrainSummary {
        command: "train",
        status: if outcome.finished { "finished" } else { "interrupted" },
        seed: ck.config.seed.to_string(),
        scale: ck.config.schedule.scale,
        order: ck.config.order.to_string(),
        review_fraction: ck.plan.harvest.review_fraction,
        stages: ck.plan.order().into_iter().map(String::from).collect(),
        iterations: ck.state.iteration,
        final_mean_psnr: (!final_cells.is_empty())
            .then(|| final_cells.iter().map(|c| c.report.psnr).sum::<f64>() / final_cells.len() as f64),
        checkpoints: checkpoint_names(&out)?,
        archives: ck
            .archives
            .iter()
            .map(|x| ArchiveSummary { stage: x.stage, dataset: x.dataset.clone(), size: x.len() })
            .collect(),
        final_metrics: final_cells
            .iter()
            .map(|c| FinalMetric { dataset: c.dataset.clone(), psnr: c.report.psnr, ssim: c.report.ssim })
            .collect(),
    };
    write_text(&out.join("summary.toml"), &to_toml(&summary, "summary")?)?;
    print!("{}", render_report(&[RunTable { label: out.display().to_string(), cells: ck.grid.clone() }]));
    if !outcome.finished {
        println!("interrupted after iteration {}", ck.state.iteration);
    }
    Ok(())
}

pub fn harvest(a: HarvestArgs) -> CliResult<()> {
    let rule: HarvestRule = a.rule.parse().map_err(|_| usage(format!("--rule must be loss or entropy, got `{}`", a.rule)))?;
    if rule == HarvestRule::None {
        return Err(usage("--rule must be loss or entropy"));
    }
    if a.stage == 0 {
        return Err(usage("--stage counts from 1"));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = apply_harvest_flags(ck.plan.harvest, &a.harvest)?;
    let manifest = Manifest::load(&a.manifest)?;
    let data = manifest.load_dataset(&a.dataset)?;
    let archive: ChallengeArchive = match rule {
        HarvestRule::Entropy => harvest_by_entropy(
            &data.entropy_stats()?,
            cfg.review_fraction.unwrap_or(cfg.top_fraction),
            &a.dataset,
            a.stage,
        )?,
        _ => {
            let net = SimpleIr::new(ck.config.model)?;
            let mut stats = LossStats::new();
            for s in &data.train {
                let restored = restore_image(&net, &ck.state.params, &s.degraded, a.tile)?;
                stats.record(&s.id, restoration_loss(&ImagePair::new(restored, s.reference.clone())?, &ck.config.loss)?);
            }
            match cfg.review_fraction {
                Some(f) => harvest_top_loss(&stats, f, data.train.len(), &a.dataset, a.stage)?,
                None => harvest_by_loss(&stats, cfg.kappa, &a.dataset, a.stage)?,
            }
        }
    };
    let out = a.out.resolve();
    create_dir(&out)?;
    let path = out.join(format!("archive-{}.tsv", a.dataset));
    write_text(&path, &archive.to_tsv())?;
    println!("{} of {} samples -> {}", archive.len(), data.train.len(), path.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let names = match &a.dataset {
        Some(d) => vec![manifest.dataset(d)?.name.clone()],
        None => manifest.names(),
    };
    let net = SimpleIr::new(ck.config.model)?;
    let mut text = String::from("dataset\tpsnr\tssim\tloss\tsamples\n");
    for n in names {
        let data = manifest.load_dataset(&n)?;
        let r: MetricReport = evaluate(&net, &ck.state.params, &data.test, &ck.config.loss, a.tile)?;
        text.push_str(&format!(
            "{n}\t{}\t{}\t{}\t{}\n",
            fmt_metric(r.psnr),
            fmt_metric(r.ssim),
            fmt_metric(r.loss),
            r.sample_count
        ));
    }
    let out = a.out.resolve();
    create_dir(&out)?;
    write_text(&out.join("eval.tsv"), &text)?;
    print!("{text}");
    Ok(())
}

fn as_rgb(img: Tensor) -> Tensor {
    let s = img.shape();
    if s.c == 3 {
        return img;
    }
    Tensor::from_fn(Shape::new(s.n, 3, s.h, s.w), |n, _, y, x| img.at(n, 0, y, x))
}

pub fn infer(a: InferArgs) -> CliResult<()> {
    if a.tile <= reviewir::pipeline::TILE_OVERLAP {
        return Err(usage(format!("--tile must exceed {}", reviewir::pipeline::TILE_OVERLAP)));
    }
    let target = match &a.output {
        Some(p) => p.clone(),
        None => {
            let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            a.out.resolve().join(format!("{stem}_restored.png"))
        }
    };
    let ck = load_checkpoint(&a.checkpoint)?;
    let img = as_rgb(load_image(&a.input)?);
    let net = SimpleIr::new(ck.config.model)?;
    let restored = restore_image(&net, &ck.state.params, &img, a.tile)?.map(|v| v.clamp(0.0, 1.0));
    let bytes = encode_image(&restored, &target)?;
    if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_atomic(&target, &bytes)?;
    println!("{}", target.display());
    Ok(())
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut runs = Vec::new();
    for dir in &a.runs {
        let path: PathBuf = dir.join("metrics.tsv");
        let cells = grid_from_tsv(&read_text(&path)?)?;
        runs.push(RunTable { label: dir.display().to_string(), cells });
    }
    let text = render_report(&runs);
    let out = a.out.resolve();
    create_dir(&out)?;
    write_text(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn init(a: InitArgs) -> CliResult<()> {
    let cfg = TrainConfig { model: ModelConfig::preset(&a.preset)?, ..TrainConfig::default() };
    let out = a.out.resolve();
    create_dir(&out)?;
    let path = out.join("config.toml");
    write_text(&path, &to_toml(&cfg, "config")?)?;
    println!("{}", path.display());
    Ok(())
}
