use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Shannon entropy in bits of the 256-bin histogram of 8-bit BT.601 luma.
///
/// Accepts `1 x 1 x h x w` (already luma) or `1 x 3 x h x w` RGB in `[0, 1]`.
pub fn image_entropy(img: &Tensor) -> Result<f64> {
    let s = img.shape();
    if s.plane() == 0 || s.n == 0 {
        return Err(Error::Data(format!("cannot take the entropy of an empty image {s}")));
    }
    let mut hist = [0usize; 256];
    for n in 0..s.n {
        let luma: Vec<f64> = match s.c {
            1 => img.plane(n, 0).to_vec(),
            3 => {
                let (r, g, b) = (img.plane(n, 0), img.plane(n, 1), img.plane(n, 2));
                (0..s.plane()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
            }
            c => return Err(Error::dim("c", format!("expected 1 or 3 channels, got {c}"))),
        };
        for v in luma {
            hist[quantize(v)] += 1;
        }
    }
    let total = (s.n * s.plane()) as f64;
    Ok(hist
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

fn quantize(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// `|H(clean) - H(degraded)|`.
pub fn entropy_difference(clean: &Tensor, degraded: &Tensor) -> Result<f64> {
    Ok((image_entropy(clean)? - image_entropy(degraded)?).abs())
}

/// Fixed-edge histogram. The last bin is closed on the right.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn uniform(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Data(format!("value {v} outside histogram range [{lo}, {hi}]")));
            }
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }
}

pub const HISTOGRAM_BINS: usize = 50;
pub const ENTROPY_MAX_BITS: f64 = 8.0;

/// Per-sample entropy differences of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyStats {
    /// `(sample id, entropy difference)` in dataset order.
    pub samples: Vec<(String, f64)>,
    pub mean: f64,
    pub histogram: Histogram,
}

impl EntropyStats {
    pub fn new(samples: Vec<(String, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("entropy statistics need at least one sample".into()));
        }
        let values: Vec<f64> = samples.iter().map(|(_, v)| *v).collect();
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Data(format!("entropy difference {bad} is not a finite non-negative number")));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let histogram = Histogram::uniform(&values, HISTOGRAM_BINS, 0.0, ENTROPY_MAX_BITS)?;
        Ok(EntropyStats { samples, mean, histogram })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
