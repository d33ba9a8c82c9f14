//! Training loss and image-quality metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{fft, ops, DiffGraph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Weight of the frequency-domain L1 term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.1 }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("loss weight must be finite and >= 0, got {lambda}")));
        }
        Ok(LossConfig { lambda })
    }
}

/// A restored image and its ground truth, same shape.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub restored: Tensor,
    pub reference: Tensor,
}

impl ImagePair {
    pub fn new(restored: Tensor, reference: Tensor) -> Result<Self> {
        if restored.shape() != reference.shape() {
            return Err(Error::dim(
                "shape",
                format!("restored {} vs reference {}", restored.shape(), reference.shape()),
            ));
        }
        Ok(ImagePair { restored, reference })
    }

    /// Both members clamped to `[0, 1]`.
    pub fn clamped(&self) -> ImagePair {
        let c = |t: &Tensor| t.map(|v| v.clamp(0.0, 1.0));
        ImagePair { restored: c(&self.restored), reference: c(&self.reference) }
    }
}

/// `mean|r - t| + lambda * mean(|Re F(r-t)| + |Im F(r-t)|)`.
pub fn restoration_loss(pair: &ImagePair, cfg: &LossConfig) -> Result<f64> {
    let spatial = ops::l1_mean(&pair.restored, &pair.reference)?;
    if cfg.lambda == 0.0 {
        return Ok(spatial);
    }
    Ok(spatial + cfg.lambda * fft::frequency_l1_mean(&pair.restored, &pair.reference)?)
}

/// Records the same loss on a graph, differentiable in both inputs.
pub fn loss_on_graph(g: &mut DiffGraph, restored: Var, reference: Var, cfg: &LossConfig) -> Result<Var> {
    let spatial = g.l1_mean(restored, reference)?;
    if cfg.lambda == 0.0 {
        return Ok(spatial);
    }
    let freq = g.frequency_l1_mean(restored, reference)?;
    let freq = g.scale(freq, cfg.lambda)?;
    g.add(spatial, freq)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(pair: &ImagePair, max_val: f64) -> f64 {
    let n = pair.restored.numel() as f64;
    let mse = pair
        .restored
        .data()
        .iter()
        .zip(pair.reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (max_val * max_val / mse).log10()
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode Gaussian filter of one `h x w` plane.
fn blur_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over valid 11x11 Gaussian windows, averaged
/// over channels and batch. Inputs are taken as-is on a `[0, 1]` range.
pub fn ssim(pair: &ImagePair) -> Result<f64> {
    let s = pair.restored.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        let axis = if s.h < SSIM_WINDOW { "h" } else { "w" };
        return Err(Error::dim(axis, format!("image {s} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let a = pair.restored.plane(n, c);
            let b = pair.reference.plane(n, c);
            let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>();
            let mu_a = blur_valid(a, s.h, s.w, &taps);
            let mu_b = blur_valid(b, s.h, s.w, &taps);
            let aa = blur_valid(&prod(|x, _| x * x), s.h, s.w, &taps);
            let bb = blur_valid(&prod(|_, y| y * y), s.h, s.w, &taps);
            let ab = blur_valid(&prod(|x, y| x * y), s.h, s.w, &taps);
            let map_mean = (0..mu_a.len())
                .map(|i| {
                    let (ma, mb) = (mu_a[i], mu_b[i]);
                    let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
                    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                        / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
                })
                .sum::<f64>()
                / mu_a.len() as f64;
            total += map_mean;
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

/// Scores of one image pair, or the mean over several.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub loss: f64,
    pub sample_count: usize,
}

impl MetricReport {
    /// Metrics on the clamped pair; the loss is on the raw pair.
    pub fn measure(pair: &ImagePair, cfg: &LossConfig) -> Result<Self> {
        let clamped = pair.clamped();
        Ok(MetricReport {
            psnr: psnr(&clamped, 1.0),
            ssim: ssim(&clamped)?,
            loss: restoration_loss(pair, cfg)?,
            sample_count: 1,
        })
    }

    /// Sample-weighted arithmetic mean.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        let count: usize = reports.iter().map(|r| r.sample_count).sum();
        if count == 0 {
            return Err(Error::Data("no samples to average".into()));
        }
        let avg = |f: fn(&MetricReport) -> f64| {
            reports.iter().map(|r| f(r) * r.sample_count as f64).sum::<f64>() / count as f64
        };
        Ok(MetricReport {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            loss: avg(|r| r.loss),
            sample_count: count,
        })
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "psnr={}\nssim={}\nloss={}\nsample_count={}\n",
            fmt_metric(self.psnr),
            fmt_metric(self.ssim),
            fmt_metric(self.loss),
            self.sample_count
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "psnr={} ssim={} loss={} samples={}",
            fmt_metric(self.psnr),
            fmt_metric(self.ssim),
            fmt_metric(self.loss),
            self.sample_count
        )
    }
}

/// Fixed six-decimal rendering, with `inf` for the identical-image sentinel.
pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}
