use proptest::prelude::*;
use reviewir::numerics::{finite_diff, max_relative_error, DiffGraph, Shape, Tensor};
use reviewir::objective::{loss_on_graph, psnr, restoration_loss, ssim, ImagePair, LossConfig, MetricReport};

fn splitmix(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    move || {
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn image(shape: Shape, seed: u64) -> Tensor {
    let mut r = splitmix(seed);
    Tensor::from_fn(shape, |_, _, _, _| r())
}

#[test]
fn two_by_two_loss_matches_direct_dft() {
    let s = Shape::new(1, 1, 2, 2);
    let reference = Tensor::full(s, 0.25);
    let mut restored = reference.clone();
    restored.set(0, 0, 1, 0, 0.75);
    let pair = ImagePair::new(restored.clone(), reference.clone()).unwrap();

    let mut freq = 0.0;
    for u in 0..2 {
        for v in 0..2 {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..2 {
                for x in 0..2 {
                    let d = restored.at(0, 0, y, x) - reference.at(0, 0, y, x);
                    let theta = std::f64::consts::PI * (u * y + v * x) as f64;
                    re += d * theta.cos();
                    im -= d * theta.sin();
                }
            }
            freq += re.abs() + im.abs();
        }
    }
    let expected = 0.125 + 0.1 * freq / 4.0;
    let got = restoration_loss(&pair, &LossConfig::default()).unwrap();
    assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    assert!((expected - 0.175).abs() < 1e-15);
}

#[test]
fn loss_gradient_through_frequency_term() {
    let s = Shape::new(1, 3, 6, 5);
    let restored = image(s, 1);
    let reference = image(s, 2);
    let cfg = LossConfig::default();
    let mut g = DiffGraph::new();
    let r = g.leaf(restored.clone());
    let t = g.leaf(reference.clone());
    let loss = loss_on_graph(&mut g, r, t, &cfg).unwrap();
    let direct = restoration_loss(&ImagePair::new(restored.clone(), reference.clone()).unwrap(), &cfg).unwrap();
    assert!((g.value(loss).item().unwrap() - direct).abs() < 1e-15);
    let grads = g.backward(loss).unwrap();
    let numeric = finite_diff(
        |x| restoration_loss(&ImagePair::new(x.clone(), reference.clone())?, &cfg),
        &restored,
        1e-6,
    )
    .unwrap();
    let err = max_relative_error(grads.get(r).unwrap(), &numeric, 1e-6).unwrap();
    assert!(err < 1e-5, "relative error {err:e}");
}

/// Direct per-window SSIM: explicit 2-D Gaussian weights, no separable filtering.
fn reference_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let k = 11usize;
    let mut weights = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            weights[y * k + x] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let mut plane_acc = 0.0;
            let mut count = 0;
            for oy in 0..=s.h - k {
                for ox in 0..=s.w - k {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for y in 0..k {
                        for x in 0..k {
                            ma += weights[y * k + x] * a.at(n, c, oy + y, ox + x);
                            mb += weights[y * k + x] * b.at(n, c, oy + y, ox + x);
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for y in 0..k {
                        for x in 0..k {
                            let da = a.at(n, c, oy + y, ox + x) - ma;
                            let db = b.at(n, c, oy + y, ox + x) - mb;
                            va += weights[y * k + x] * da * da;
                            vb += weights[y * k + x] * db * db;
                            cov += weights[y * k + x] * da * db;
                        }
                    }
                    plane_acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            acc += plane_acc / count as f64;
        }
    }
    acc / (s.n * s.c) as f64
}

#[test]
fn ssim_matches_reference_on_random_pairs() {
    for seed in 0..10u64 {
        let s = Shape::new(1, 3, 14 + (seed as usize % 3), 13 + (seed as usize % 4));
        let a = image(s, 100 + seed);
        let noisy = image(s, 200 + seed);
        let b = Tensor::from_fn(s, |n, c, y, x| (0.7 * a.at(n, c, y, x) + 0.3 * noisy.at(n, c, y, x)).clamp(0.0, 1.0));
        let got = ssim(&ImagePair::new(a.clone(), b.clone()).unwrap()).unwrap();
        let expected = reference_ssim(&a, &b);
        assert!((got - expected).abs() < 1e-4, "seed {seed}: {got} vs {expected}");
    }
}

#[test]
fn ssim_of_negative_is_low() {
    let s = Shape::new(1, 3, 16, 16);
    // content kept away from mid-gray
    let x = Tensor::from_fn(s, |_, c, y, xx| if (y / 2 + xx / 3 + c) % 2 == 0 { 0.1 } else { 0.85 });
    let neg = x.map(|v| 1.0 - v);
    let v = ssim(&ImagePair::new(x, neg).unwrap()).unwrap();
    assert!(v < 0.3, "ssim {v}");
}

#[test]
fn report_mean_and_rendering() {
    let s = Shape::new(1, 3, 12, 12);
    let a = image(s, 5);
    let same = MetricReport::measure(&ImagePair::new(a.clone(), a.clone()).unwrap(), &LossConfig::default()).unwrap();
    assert_eq!(same.psnr, f64::INFINITY);
    assert!((same.ssim - 1.0).abs() < 1e-9);
    assert!(same.to_kv().contains("psnr=inf\n"));
    let other = MetricReport { psnr: 20.0, ssim: 0.5, loss: 0.1, sample_count: 3 };
    let mean = MetricReport::mean(&[other, MetricReport { psnr: 30.0, ..other }]).unwrap();
    assert_eq!(mean.sample_count, 6);
    assert!((mean.psnr - 25.0).abs() < 1e-12);
    assert!(MetricReport::mean(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn loss_is_nonnegative_symmetric_and_zero_only_on_equality(seed in any::<u64>(), lambda in 0.0f64..1.0) {
        let s = Shape::new(1, 3, 4, 6);
        let a = image(s, seed);
        let b = image(s, seed ^ 0xdead_beef);
        let cfg = LossConfig::new(lambda).unwrap();
        let ab = restoration_loss(&ImagePair::new(a.clone(), b.clone()).unwrap(), &cfg).unwrap();
        let ba = restoration_loss(&ImagePair::new(b, a.clone()).unwrap(), &cfg).unwrap();
        prop_assert!(ab > 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(restoration_loss(&ImagePair::new(a.clone(), a).unwrap(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn ssim_identity_and_symmetry(seed in any::<u64>()) {
        let s = Shape::new(1, 3, 12, 13);
        let a = image(s, seed);
        let b = image(s, seed.wrapping_add(1));
        prop_assert!((ssim(&ImagePair::new(a.clone(), a.clone()).unwrap()).unwrap() - 1.0).abs() < 1e-9);
        let ab = ssim(&ImagePair::new(a.clone(), b.clone()).unwrap()).unwrap();
        let ba = ssim(&ImagePair::new(b, a).unwrap()).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude(seed in any::<u64>(), lo in 0.01f64..0.2, step in 0.01f64..0.2) {
        let s = Shape::new(1, 3, 8, 8);
        let clean = image(s, seed);
        let mut r = splitmix(seed ^ 7);
        let noise = Tensor::from_fn(s, |_, _, _, _| r() - 0.5);
        let with = |amp: f64| {
            let noisy = Tensor::from_fn(s, |n, c, y, x| clean.at(n, c, y, x) + amp * noise.at(n, c, y, x));
            psnr(&ImagePair::new(noisy, clean.clone()).unwrap(), 1.0)
        };
        prop_assert!(with(lo) > with(lo + step));
    }
}
