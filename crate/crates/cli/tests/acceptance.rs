//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use reviewir::curriculum::{
    harvest_by_loss, review_mix, ChallengeArchive, ArchiveEntry, CurriculumPlan, HarvestConfig, HarvestRule,
    LossStats, PlannedDataset, RosterEntry, StageSpec,
};
use reviewir::data::{build_manifest, synthetic_sources, DegradationKind, Manifest, SplitCounts};
use reviewir::model::{param_count, ModelConfig, SimpleIr};
use reviewir::numerics::{finite_diff, max_relative_error, ops, Activation, ConvSpec, DiffGraph, Padding, Shape, Tensor, Var};
use reviewir::objective::{loss_on_graph, psnr, restoration_loss, ssim, ImagePair, LossConfig};
use reviewir::pipeline::{
    initial_checkpoint, run_stage, train_review_learning, AdamWConfig, Checkpoint, NoObserver, Recorder, SamplePool,
    StageContext, TrainConfig, TrainOrder, TrainState,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn noise(shape: Shape, seed: u64) -> Tensor {
    // splitmix64
    let mut s = seed.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    Tensor::from_fn(shape, |_, _, _, _| {
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        ((z >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

type Build = Box<dyn Fn(&mut DiffGraph, &[Var]) -> reviewir::Result<Var>>;

/// Worst relative error between backprop and central differences of
/// `sum(y * r - anchor)`, with the anchor one unit below the unperturbed `y * r`.
fn grad_error(inputs: &[Tensor], build: &Build, step: f64, floor: f64, project: bool) -> f64 {
    let eval = |inputs: &[Tensor], anchor: Option<&Tensor>| {
        let mut g = DiffGraph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let y = build(&mut g, &vars).unwrap();
        let out = match anchor {
            Some(a) => {
                let s = g.value(y).shape();
                let r = g.leaf(noise(s, 77));
                let a = g.leaf(a.clone());
                let w = g.mul(y, r).unwrap();
                let m = g.l1_mean(w, a).unwrap();
                g.scale(m, s.numel() as f64).unwrap()
            }
            None => y,
        };
        (g, vars, out)
    };
    let anchor = project.then(|| {
        let (g, _, y) = eval(inputs, None);
        ops::mul(g.value(y), &noise(g.value(y).shape(), 77)).unwrap().map(|v| v - 1.0)
    });
    let (g, vars, loss) = eval(inputs, anchor.as_ref());
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let numeric = finite_diff(
            |xi| {
                let mut p = inputs.to_vec();
                p[i] = xi.clone();
                let (g, _, l) = eval(&p, anchor.as_ref());
                g.value(l).item()
            },
            &inputs[i],
            step,
        )
        .unwrap();
        worst = worst.max(max_relative_error(grads.get(*v).unwrap(), &numeric, floor).unwrap());
    }
    worst
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let n = |c, h, w, s| noise(Shape::new(1, c, h, w), s);
    let mut cases: Vec<(&str, Vec<Tensor>, Build)> = Vec::new();
    for (name, spec, cout, cin) in [
        ("conv same", ConvSpec::same(), 3, 4),
        ("conv valid", ConvSpec::valid(), 3, 4),
        ("conv strided", ConvSpec { stride: 2, padding: Padding::Zero, groups: 1 }, 2, 4),
        ("conv depthwise", ConvSpec::depthwise(4), 4, 1),
    ] {
        cases.push((
            name,
            vec![n(4, 5, 6, 1), noise(Shape::new(cout, cin, 3, 3), 2), n(cout, 1, 1, 3)],
            Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec)),
        ));
    }
    cases.push(("layer_norm", vec![n(5, 3, 4, 4), n(5, 1, 1, 5), n(5, 1, 1, 6)], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))));
    for kind in [Activation::Gelu, Activation::Sigmoid, Activation::Relu] {
        let x = n(3, 4, 4, 7).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        cases.push(("activation", vec![x], Box::new(move |g, v| g.activation(kind, v[0]))));
    }
    cases.push(("global_avg_pool", vec![n(4, 3, 5, 8)], Box::new(|g, v| g.global_avg_pool(v[0]))));
    cases.push((
        "fully_connected",
        vec![n(6, 1, 1, 9), noise(Shape::new(3, 6, 1, 1), 10), n(3, 1, 1, 11)],
        Box::new(|g, v| g.fully_connected(v[0], v[1], v[2])),
    ));
    cases.push(("pixel_shuffle", vec![n(8, 2, 3, 12)], Box::new(|g, v| g.pixel_shuffle(v[0], 2))));
    cases.push(("pixel_unshuffle", vec![n(2, 4, 6, 13)], Box::new(|g, v| g.pixel_unshuffle(v[0], 2))));
    cases.push((
        "concat/slice",
        vec![n(2, 3, 3, 14), n(3, 3, 3, 15)],
        Box::new(|g, v| {
            let c = g.concat_channels(&[v[0], v[1]])?;
            g.slice_channels(c, 1, 3)
        }),
    ));
    cases.push(("add/mul", vec![n(3, 4, 4, 16), n(3, 4, 4, 17)], Box::new(|g, v| {
        let a = g.add(v[0], v[1])?;
        let m = g.mul(a, v[1])?;
        g.scale(m, 0.7)
    })));
    cases.push(("scale_channels", vec![n(3, 4, 4, 18), n(3, 1, 1, 19)], Box::new(|g, v| g.scale_channels(v[0], v[1]))));
    cases.push(("l1_mean", vec![n(3, 4, 4, 20), n(3, 4, 4, 21)], Box::new(|g, v| g.l1_mean(v[0], v[1]))));
    cases.push((
        "frequency_l1",
        vec![n(3, 4, 6, 22), n(3, 4, 6, 23)],
        Box::new(|g, v| g.frequency_l1_mean(v[0], v[1])),
    ));
    let mut worst_primitive: (f64, &str) = (0.0, "");
    for (name, inputs, build) in &cases {
        let scalar = {
            let mut g = DiffGraph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
            let y = build(&mut g, &vars).unwrap();
            g.value(y).numel() == 1
        };
        let e = grad_error(inputs, build, 1e-5, 1e-2, !scalar);
        if e > worst_primitive.0 {
            worst_primitive = (e, name);
        }
    }

    let net = SimpleIr::new(ModelConfig::tiny()).unwrap();
    let params = net.init_params(3);
    let x = noise(Shape::new(1, 3, 16, 16), 30).map(|v| 0.5 + 0.4 * v);
    let mut inputs: Vec<Tensor> = params.tensors().cloned().collect();
    inputs.push(x);
    let net_build: Build = Box::new(move |g, v| {
        let (p, img) = v.split_at(v.len() - 1);
        Ok(net.forward(g, p, img[0])?.restored)
    });
    let net_err = grad_error(&inputs, &net_build, 1e-4, 1e-6, true);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst_primitive.0 < 1e-6 && net_err < 1e-4 && secs < 300.0,
        format!(
            "{} primitives worst {:.2e} ({}), full network {:.2e}, {secs:.1}s",
            cases.len(),
            worst_primitive.0,
            worst_primitive.1,
            net_err
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut failures = Vec::new();
    for (i, cfg) in [ModelConfig::tiny(), ModelConfig::desk()].into_iter().enumerate() {
        let net = SimpleIr::new(cfg).unwrap();
        // random head, zero FIBs and tail weights, random tail bias
        let mut params = net.init_params(7 + i as u64);
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for n in names.iter().filter(|n| n.starts_with("fib") || n.as_str() == "tail.weight") {
            let t = params.get_mut(n).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let bias = noise(params.get("tail.bias").unwrap().shape(), 40 + i as u64);
        *params.get_mut("tail.bias").unwrap() = bias.clone();
        for k in 0..10u64 {
            let seed = 100 * i as u64 + k;
            let h = 5 + (noise(Shape::new(1, 1, 1, 1), seed).data()[0].abs() * 40.0) as usize;
            let w = 5 + (noise(Shape::new(1, 1, 1, 1), seed + 50).data()[0].abs() * 40.0) as usize;
            let x = noise(Shape::new(1, 3, h, w), seed);
            let out = net.restore(&params, &x).unwrap();
            if out.shape() != x.shape() {
                failures.push(format!("{h}x{w} -> {}", out.shape()));
                continue;
            }
            let expected = ops::pixel_shuffle(
                &Tensor::from_fn(Shape::new(1, 48, h.div_ceil(4), w.div_ceil(4)), |_, c, _, _| bias.data()[c]),
                4,
            )
            .unwrap();
            let expected = ops::crop(&expected, 0, 0, h, w).unwrap();
            if out.max_abs_diff(&expected).unwrap() != 0.0 {
                failures.push(format!("{h}x{w} not the tail-bias image"));
            }
            if h.is_multiple_of(4) && w.is_multiple_of(4) {
                let tr = net.trace(&params, &x).unwrap();
                if tr.xf != tr.x0 {
                    failures.push(format!("{h}x{w}: zero FIB stack is not the identity"));
                }
            }
        }
    }
    verdict(failures.is_empty(), if failures.is_empty() { "20 shapes, outputs equal the tail-bias image".into() } else { failures.join("; ") })
}

fn criterion_3() -> Verdict {
    let mut mismatches = 0;
    let mut checked = 0;
    for c in [4, 8, 12, 16, 24, 32] {
        for fibs in [0, 1, 2, 5] {
            for kb in [3, 5, 11] {
                let cfg = ModelConfig { base_channels: c, num_fibs: fibs, band_kernel: kb, ..ModelConfig::desk() };
                let net = SimpleIr::new(cfg).unwrap();
                let enumerated: usize = net.layout().iter().map(|p| p.shape.numel()).sum();
                checked += 1;
                if enumerated != param_count(&cfg).unwrap() || net.init_params(0).numel() != enumerated {
                    mismatches += 1;
                }
            }
        }
    }
    let full = param_count(&ModelConfig::full()).unwrap();
    let in_band = (3_900_000..=5_300_000).contains(&full);
    verdict(
        mismatches == 0 && in_band,
        format!("{checked} configs, {mismatches} mismatches; full preset {full} parameters (band 3.9M..5.3M)"),
    )
}

/// Brute-force SSIM: every 11x11 window, 2-D Gaussian weights, no separability.
fn reference_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let k = 11usize;
    let mut w = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            w[y * k + x] = (-(dy * dy + dx * dx) / 4.5).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    for c in 0..s.c {
        let mut sum = 0.0;
        let mut count = 0.0;
        for oy in 0..=s.h - k {
            for ox in 0..=s.w - k {
                let px = |t: &Tensor, i: usize| t.at(0, c, oy + i / k, ox + i % k);
                let ma: f64 = (0..k * k).map(|i| w[i] * px(a, i)).sum();
                let mb: f64 = (0..k * k).map(|i| w[i] * px(b, i)).sum();
                let va: f64 = (0..k * k).map(|i| w[i] * (px(a, i) - ma).powi(2)).sum();
                let vb: f64 = (0..k * k).map(|i| w[i] * (px(b, i) - mb).powi(2)).sum();
                let cov: f64 = (0..k * k).map(|i| w[i] * (px(a, i) - ma) * (px(b, i) - mb)).sum();
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        acc += sum / count;
    }
    acc / s.c as f64
}

fn criterion_4() -> Verdict {
    let a = Tensor::full(Shape::new(1, 3, 8, 8), 0.5);
    let b = Tensor::full(Shape::new(1, 3, 8, 8), 0.6);
    let p = psnr(&ImagePair::new(a.clone(), b).unwrap(), 1.0);
    let psnr_err = (p - 20.0).abs();
    let mut ssim_err: f64 = 0.0;
    for k in 0..10u64 {
        let x = noise(Shape::new(1, 3, 16 + k as usize, 20), 60 + k).map(|v| 0.5 + 0.45 * v);
        let y = ops::add(&x, &noise(x.shape(), 80 + k).map(|v| 0.2 * v)).unwrap().map(|v| v.clamp(0.0, 1.0));
        let ours = ssim(&ImagePair::new(x.clone(), y.clone()).unwrap()).unwrap();
        ssim_err = ssim_err.max((ours - reference_ssim(&x, &y)).abs());
    }
    let same = ImagePair::new(a.clone(), a.clone()).unwrap();
    let sentinel = psnr(&same, 1.0) == f64::INFINITY && (ssim(&ImagePair::new(
        noise(Shape::new(1, 3, 16, 16), 5), noise(Shape::new(1, 3, 16, 16), 5)).unwrap()).unwrap() - 1.0).abs() < 1e-12;
    verdict(
        psnr_err < 1e-9 && ssim_err < 1e-4 && sentinel,
        format!("PSNR error {psnr_err:.1e} dB, SSIM max deviation {ssim_err:.1e} over 10 pairs, identical pair -> inf / 1.0: {sentinel}"),
    )
}

fn criterion_5() -> Verdict {
    let x = noise(Shape::new(1, 3, 12, 10), 90);
    let y = noise(Shape::new(1, 3, 12, 10), 91);
    let zero = restoration_loss(&ImagePair::new(x.clone(), x.clone()).unwrap(), &LossConfig::default()).unwrap();
    let mae = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.numel() as f64;
    let l0 = restoration_loss(&ImagePair::new(x.clone(), y.clone()).unwrap(), &LossConfig { lambda: 0.0 }).unwrap();
    let reference = y.map(|v| 0.5 + 0.4 * v);
    let restored = x.map(|v| 0.5 + 0.4 * v);
    let cfg = LossConfig::default();
    let mut g = DiffGraph::new();
    let (r, t) = (g.leaf(restored.clone()), g.leaf(reference.clone()));
    let l = loss_on_graph(&mut g, r, t, &cfg).unwrap();
    let analytic = g.backward(l).unwrap().take(r).unwrap();
    let numeric = finite_diff(|p| restoration_loss(&ImagePair::new(p.clone(), reference.clone())?, &cfg), &restored, 1e-6).unwrap();
    let fft_err = max_relative_error(&analytic, &numeric, 1e-6).unwrap();
    verdict(
        zero == 0.0 && (l0 - mae).abs() < 1e-12 && fft_err < 1e-5,
        format!("loss(x,x) = {zero}, lambda=0 vs MAE {:.1e}, FFT-term gradient error {fft_err:.1e}", (l0 - mae).abs()),
    )
}

fn criterion_6() -> Verdict {
    let ids: Vec<String> = (0..3000).map(|i| format!("s{i:04}")).collect();
    let archive = ChallengeArchive::new(
        "first",
        1,
        ids[..300].iter().enumerate().map(|(i, id)| ArchiveEntry { id: id.clone(), score: 1.0 - i as f64 * 1e-4, rule: HarvestRule::Loss }).collect(),
    );
    let known: BTreeMap<String, BTreeSet<String>> = ["first", "later"].iter().map(|n| (n.to_string(), ids.iter().cloned().collect())).collect();
    let quotas: Vec<usize> = (2..=4)
        .map(|stage| {
            let roster: Vec<RosterEntry> = review_mix("later", &ids, std::slice::from_ref(&archive), &known, stage, 0.5, 7).unwrap();
            roster.iter().filter(|e| e.dataset == "first").count()
        })
        .collect();
    let stats = LossStats::from_records([1.0, 1.0, 1.0, 1.0, 10.0].iter().enumerate().map(|(i, l)| (format!("s{i}"), *l)).collect());
    let picked: Vec<String> = harvest_by_loss(&stats, 1.0, "d", 1).unwrap().ids().map(String::from).collect();
    verdict(
        quotas == [150, 75, 37] && picked == ["s4"],
        format!("review quotas {quotas:?}, harvest_by_loss picks {picked:?}"),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_reviewir")
}

fn cli(args: &[&str]) -> bool {
    Command::new(bin())
        .args(args)
        .env_remove("REVIEWIR_OUT")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_7() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let manifest = p("data/manifest.toml");
    let mut notes = Vec::new();
    let mut ok = cli(&["synth", "--out", &p("data"), "--seed", "2", "--train", "12", "--size", "48"]);
    for r in ["rank1", "rank2"] {
        ok &= cli(&["rank", "--manifest", &manifest, "--out", &p(r)]);
    }
    let rank_same = ok && dir_files(Path::new(&p("rank1"))) == dir_files(Path::new(&p("rank2")));
    notes.push(format!("rank identical: {rank_same}"));

    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--manifest", &manifest, "--scale", "0.001", "--seed", "5", "--out", out];
        args.extend_from_slice(extra);
        cli(&args)
    };
    ok &= train(&p("t1"), &[]) && train(&p("t2"), &[]);
    let train_same = ok && dir_files(Path::new(&p("t1"))) == dir_files(Path::new(&p("t2")));
    notes.push(format!("train identical: {train_same}"));
    for r in ["rep1", "rep2"] {
        ok &= cli(&["report", &p("t1"), "--out", &p(r)]);
    }
    let report_same = ok && fs::read(p("rep1/report.txt")).ok() == fs::read(p("rep2/report.txt")).ok();
    notes.push(format!("report identical: {report_same}"));

    // 200 + 3 x 10 iterations; interrupt inside the stage-1 harvest window and inside stage 3
    let mut resume_same = ok;
    for stop in ["150", "215"] {
        let run = p(&format!("cut-{stop}"));
        ok &= train(&run, &["--stop-after", stop]);
        let ck = format!("{run}/iter-{stop}.ck");
        ok &= cli(&["train", "--manifest", &manifest, "--resume", &ck, "--out", &run]);
        for f in ["train.log", "metrics.tsv", "stage-4.ck", "archive-stage-1.tsv", "archive-stage-3.tsv"] {
            resume_same &= ok && fs::read(format!("{run}/{f}")).ok() == fs::read(p(&format!("t1/{f}"))).ok();
        }
    }
    notes.push(format!("resume matches uninterrupted: {resume_same}"));
    verdict(ok && rank_same && train_same && report_same && resume_same, notes.join(", "))
}

fn synthetic_manifest(dir: &Path, kinds: &[DegradationKind], seed: u64) -> Manifest {
    let counts = SplitCounts::default();
    let sources = synthetic_sources((counts.train + counts.test) * kinds.len(), seed, 64, 64);
    let kinds: Vec<_> = kinds.iter().map(|k| (*k, k.default_strength())).collect();
    build_manifest(&sources, &kinds, counts, seed, dir).unwrap()
}

fn plan(names: &[&str], review_fraction: Option<f64>) -> CurriculumPlan {
    CurriculumPlan {
        version: 1,
        harvest: HarvestConfig { review_fraction, ..HarvestConfig::default() },
        stages: names.iter().map(|n| PlannedDataset { name: n.to_string(), mean_entropy_difference: 0.0 }).collect(),
    }
}

fn desk_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    cfg.schedule.scale = 0.01;
    cfg
}

fn run(manifest: &Manifest, cfg: &TrainConfig, plan: &CurriculumPlan) -> Checkpoint {
    let start = initial_checkpoint(cfg, plan).unwrap();
    train_review_learning(manifest, start, None, &mut NoObserver).unwrap().checkpoint
}

fn psnr_at(ck: &Checkpoint, stage: usize, dataset: &str) -> f64 {
    ck.grid.iter().find(|c| c.stage == stage && c.dataset == dataset).unwrap().report.psnr
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(tmp.path(), &[DegradationKind::Blur, DegradationKind::Lowlight], 11);
    let mut gains = Vec::new();
    for seed in 1..=3 {
        let cfg = desk_config(seed);
        let with = run(&m, &cfg, &plan(&["blur", "lowlight"], Some(0.2)));
        let without = run(&m, &cfg, &plan(&["blur", "lowlight"], Some(0.0)));
        gains.push(psnr_at(&with, 2, "blur") - psnr_at(&without, 2, "blur"));
    }
    let wins = gains.iter().filter(|g| **g >= 0.3).count();
    let mean = gains.iter().sum::<f64>() / 3.0;
    let secs = t.elapsed().as_secs_f64();
    verdict(
        wins >= 2 && secs < 1800.0,
        format!(
            "task-1 PSNR gain of review 0.2 over 0.0: {} dB (mean {mean:.3}), {wins}/3 seeds >= 0.3, {secs:.0}s",
            gains.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(tmp.path(), &DegradationKind::ALL, 12);
    let mut entries = Vec::new();
    let mut stats = Vec::new();
    for n in m.names() {
        stats.push((n.clone(), m.load_dataset(&n).unwrap().entropy_stats().unwrap()));
    }
    for (n, s) in &stats {
        entries.push((n.clone(), Some(s)));
    }
    let ranked = reviewir::curriculum::rank_datasets(&entries, HarvestConfig::default()).unwrap();
    let final_mean = |ck: &Checkpoint| {
        let last = ck.grid.iter().map(|c| c.stage).max().unwrap();
        let v: Vec<f64> = ck.grid.iter().filter(|c| c.stage == last).map(|c| c.report.psnr).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut rows = Vec::new();
    let mut wins = 0;
    for seed in 1..=3 {
        let ordered = run(&m, &desk_config(seed), &ranked);
        let random_cfg = TrainConfig { order: TrainOrder::Random, ..desk_config(seed) };
        let random = run(&m, &random_cfg, &ranked);
        let (a, b) = (final_mean(&ordered), final_mean(&random));
        wins += (a >= b) as usize;
        rows.push(format!("seed {seed}: {a:.3} vs {b:.3} ({})", random.plan.order().join(">")));
    }
    verdict(
        wins >= 2,
        format!("ordered ({}) vs random final mean PSNR: {}; {wins}/3 seeds ordered >= random", ranked.order().join(">"), rows.join("; ")),
    )
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(tmp.path(), &[DegradationKind::Blur], 13);
    let data = vec![m.load_dataset("blur").unwrap()];
    let net = SimpleIr::new(ModelConfig::desk()).unwrap();
    let pool = SamplePool::new(&data);
    let (loss, opt, harvest) = (LossConfig::default(), AdamWConfig::default(), HarvestConfig::default());
    let ctx = StageContext { net: &net, loss: &loss, optimizer: &opt, harvest: &harvest, pool: &pool };
    let mut cfg = desk_config(1);
    cfg.schedule.scale = 0.001;
    let iterations = cfg.schedule.scaled(cfg.schedule.first_iterations);
    let sample = &data[0].train[0];
    // the whole image is the crop, so only the flips vary between steps
    let side = sample.degraded.shape().h.min(sample.degraded.shape().w);
    let spec = StageSpec {
        index: 1,
        dataset: "blur".into(),
        iterations,
        lr: cfg.schedule.first_lr,
        crop_size: side,
        harvest_rule: HarvestRule::None,
        harvest_start: 0,
        review: false,
    };
    let roster = vec![RosterEntry { dataset: "blur".into(), id: sample.id.clone() }];
    let mut state = TrainState::new(net.init_params(1), 1);
    let mut rec = Recorder::default();
    run_stage(&ctx, &mut state, &spec, &roster, &mut rec).unwrap();
    let blocks: Vec<f64> = rec.log.chunks(10).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64).collect();
    let monotone = blocks.windows(2).all(|w| w[1] < w[0]);
    verdict(
        monotone && rec.log.len() == 200,
        format!(
            "{} iterations, crop {side}, lr {:e}, 10-step means {}, strictly decreasing: {monotone}",
            rec.log.len(),
            spec.lr,
            blocks.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Verdict); 10] = [
        (1, "gradient suite", criterion_1),
        (2, "residual and shape invariants", criterion_2),
        (3, "parameter accounting", criterion_3),
        (4, "metric oracles", criterion_4),
        (5, "loss properties", criterion_5),
        (6, "scheduler arithmetic", criterion_6),
        (7, "curriculum determinism", criterion_7),
        (8, "forgetting trend", criterion_8),
        (9, "ordered vs random trend", criterion_9),
        (10, "overfit smoke test", criterion_10),
    ];
    let mut failed = Vec::new();
    for (k, name, check) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let v = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("criterion {k:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
