use proptest::prelude::*;
use reviewir::numerics::{fft2, ifft2, ops, ConvSpec, Padding, Shape, Tensor};

fn tensor(shape: Shape) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, shape.numel()).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn shaped(max_c: usize, max_hw: usize) -> impl Strategy<Value = Tensor> {
    (1usize..3, 1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(|(n, c, h, w)| tensor(Shape::new(n, c, h, w)))
}

fn bits(t: &[f64]) -> Vec<u64> {
    t.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn grouped_conv_is_independent_channel_convs(
        (x, w) in (1usize..=4, 3usize..7, 3usize..7).prop_flat_map(|(c, h, ww)| {
            (tensor(Shape::new(1, c, h, ww)), tensor(Shape::new(c, 1, 3, 3)))
        }),
        padding in prop_oneof![Just(Padding::Reflect), Just(Padding::Zero), Just(Padding::Valid)],
    ) {
        let c = x.shape().c;
        let spec = ConvSpec { stride: 1, padding, groups: c };
        let joint = ops::conv2d(&x, &w, None, &spec).unwrap();
        let single = ConvSpec { groups: 1, ..spec };
        for ch in 0..c {
            let xc = ops::slice_channels(&x, ch, 1).unwrap();
            let wc = Tensor::new(Shape::new(1, 1, 3, 3), w.data()[ch * 9..ch * 9 + 9].to_vec()).unwrap();
            let yc = ops::conv2d(&xc, &wc, None, &single).unwrap();
            prop_assert_eq!(yc.plane(0, 0), joint.plane(0, ch));
        }
    }

    #[test]
    fn fft_round_trip(x in shaped(3, 9)) {
        let (re, im) = ifft2(&fft2(&x));
        prop_assert!(re.max_abs_diff(&x).unwrap() < 1e-10);
        prop_assert!(im.data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn shuffle_pairs_are_inverse(r in prop::sample::select(vec![1usize, 2, 4]), n in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let mut s = seed;
        let x = Tensor::from_fn(Shape::new(n, c * r * r, h, w), |_, _, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64
        });
        let up = ops::pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(up.shape(), Shape::new(n, c, h * r, w * r));
        prop_assert_eq!(&ops::pixel_unshuffle(&up, r).unwrap(), &x);
        prop_assert_eq!(&ops::pixel_shuffle(&ops::pixel_unshuffle(&up, r).unwrap(), r).unwrap(), &up);
    }

    #[test]
    fn ops_are_pure(x in shaped(4, 6)) {
        let c = x.shape().c;
        let w = Tensor::from_fn(Shape::new(c, 1, 3, 3), |o, _, y, xx| (o + 2 * y + xx) as f64 * 0.1 - 0.3);
        let gamma = Tensor::full(Shape::new(1, c, 1, 1), 1.5);
        let beta = Tensor::full(Shape::new(1, c, 1, 1), -0.2);
        let runs: Vec<Vec<Vec<u64>>> = (0..2).map(|_| {
            let conv = ops::conv2d(&x, &w, None, &ConvSpec::depthwise(c)).unwrap();
            let (ln, _) = ops::layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
            let f = fft2(&x);
            vec![bits(conv.data()), bits(ln.data()), bits(ops::global_avg_pool(&x).unwrap().data()), bits(&f.re), bits(&f.im)]
        }).collect();
        prop_assert_eq!(&runs[0], &runs[1]);
    }
}

#[test]
fn parseval_against_direct_dft() {
    let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, xx| ((7 * y + 3 * xx) % 5) as f64 * 0.37 - 0.6);
    let f = fft2(&x);
    let (h, w) = (4usize, 4usize);
    let mut spectrum_energy = 0.0;
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    re += x.at(0, 0, y, xx) * phase.cos();
                    im += x.at(0, 0, y, xx) * phase.sin();
                }
            }
            let (fr, fi) = f.bin(0, 0, u, v);
            assert!((fr - re).abs() < 1e-12 && (fi - im).abs() < 1e-12, "bin ({u},{v})");
            spectrum_energy += re * re + im * im;
        }
    }
    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    assert!((energy - spectrum_energy / (h * w) as f64).abs() < 1e-12);
}
