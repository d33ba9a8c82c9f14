//! 2-D discrete Fourier transforms per `(n, c)` plane, backed by `rustfft`.
//!
//! The forward transform is unnormalized; the inverse carries the `1 / (h w)`
//! factor.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

use super::ops::sign;
use super::tensor::{ensure_same_shape, Shape, Tensor};

/// Complex counterpart of [`Tensor`], stored as split real/imaginary buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Shape,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bin(&self, n: usize, c: usize, u: usize, v: usize) -> (f64, f64) {
        let i = ((n * self.shape.c + c) * self.shape.h + u) * self.shape.w + v;
        (self.re[i], self.im[i])
    }
}

fn transform_planes(shape: Shape, buf: &mut [Complex<f64>], direction: FftDirection) {
    let (h, w) = (shape.h, shape.w);
    if h == 0 || w == 0 {
        return;
    }
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for plane in buf.chunks_mut(h * w) {
        row_fft.process(plane);
        for x in 0..w {
            for y in 0..h {
                col[y] = plane[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                plane[y * w + x] = col[y];
            }
        }
    }
}

/// Unnormalized forward DFT of every plane.
pub fn fft2(x: &Tensor) -> ComplexTensor {
    let mut buf: Vec<Complex<f64>> = x.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform_planes(x.shape(), &mut buf, FftDirection::Forward);
    ComplexTensor {
        shape: x.shape(),
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    }
}

/// Inverse DFT scaled by `1 / (h w)`; returns the real and imaginary parts.
pub fn ifft2(x: &ComplexTensor) -> (Tensor, Tensor) {
    let mut buf: Vec<Complex<f64>> = x.re.iter().zip(&x.im).map(|(&r, &i)| Complex::new(r, i)).collect();
    transform_planes(x.shape, &mut buf, FftDirection::Inverse);
    let inv = 1.0 / x.shape.plane().max(1) as f64;
    let re = buf.iter().map(|c| c.re * inv).collect();
    let im = buf.iter().map(|c| c.im * inv).collect();
    (
        Tensor::new(x.shape, re).expect("shape preserved"),
        Tensor::new(x.shape, im).expect("shape preserved"),
    )
}

/// `sum |Re(a - b)| + |Im(a - b)|` over all bins.
pub fn complex_l1(a: &ComplexTensor, b: &ComplexTensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::dim("spectrum", format!("{} vs {}", a.shape, b.shape)));
    }
    let re: f64 = a.re.iter().zip(&b.re).map(|(x, y)| (x - y).abs()).sum();
    let im: f64 = a.im.iter().zip(&b.im).map(|(x, y)| (x - y).abs()).sum();
    Ok(re + im)
}

/// Frequency L1 distance averaged over bins: `complex_l1(F a, F b) / numel`.
pub fn frequency_l1_mean(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure_same_shape(a, b)?;
    Ok(complex_l1(&fft2(a), &fft2(b))? / a.numel() as f64)
}

/// Gradient of [`frequency_l1_mean`] with respect to `a`.
///
/// With `D = F(a - b)` and `s = sign(Re D) + i sign(Im D)`, the gradient is
/// `Re(sum_k s_k e^{+i phi}) / numel`, i.e. an unnormalized inverse DFT of `s`.
pub fn frequency_l1_mean_grad(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape(a, b)?;
    let diff = super::ops::add(a, &super::ops::scale(b, -1.0))?;
    let spec = fft2(&diff);
    let signs = ComplexTensor {
        shape: spec.shape,
        re: spec.re.iter().map(|&v| sign(v)).collect(),
        im: spec.im.iter().map(|&v| sign(v)).collect(),
    };
    let (re, _) = ifft2(&signs);
    let factor = a.shape().plane() as f64 / a.numel() as f64;
    Ok(re.map(|v| v * factor))
}
