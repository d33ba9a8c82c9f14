use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::curriculum::TaskTag;
use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    Blur,
    Lowlight,
    Rain,
    Snow,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::Blur,
        DegradationKind::Lowlight,
        DegradationKind::Rain,
        DegradationKind::Snow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Blur => "blur",
            DegradationKind::Lowlight => "lowlight",
            DegradationKind::Rain => "rain",
            DegradationKind::Snow => "snow",
        }
    }

    pub fn task(self) -> TaskTag {
        match self {
            DegradationKind::Blur => TaskTag::Deblur,
            DegradationKind::Lowlight => TaskTag::Llie,
            DegradationKind::Rain => TaskTag::Derain,
            DegradationKind::Snow => TaskTag::Desnow,
        }
    }

    pub fn default_strength(self) -> f64 {
        match self {
            DegradationKind::Blur => 0.6,
            DegradationKind::Lowlight => 0.7,
            DegradationKind::Rain => 0.6,
            DegradationKind::Snow => 0.6,
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown degradation `{s}` (expected blur, lowlight, rain or snow)")))
    }
}

/// Largest blur standard deviation, reached at strength 1.
pub const BLUR_MAX_SIGMA: f64 = 3.0;

/// Low-light model `gain * x^gamma + noise`, each term linear in strength.
pub fn lowlight_gain(strength: f64) -> f64 {
    1.0 - 0.8 * strength
}

pub fn lowlight_gamma(strength: f64) -> f64 {
    1.0 + 1.5 * strength
}

pub fn lowlight_noise_std(strength: f64) -> f64 {
    0.03 * strength
}

/// Applies one degradation. Strength 0 returns the input unchanged.
pub fn synthesize(kind: DegradationKind, clean: &Tensor, seed: u64, strength: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!("strength must lie in [0, 1], got {strength}")));
    }
    let s = clean.shape();
    if s.n != 1 || s.plane() == 0 {
        return Err(Error::dim("n", format!("expected one non-empty image, got {s}")));
    }
    if strength == 0.0 {
        return Ok(clean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match kind {
        DegradationKind::Blur => gaussian_blur(clean, BLUR_MAX_SIGMA * strength),
        DegradationKind::Lowlight => {
            let (gain, gamma) = (lowlight_gain(strength), lowlight_gamma(strength));
            let noise = Normal::new(0.0, lowlight_noise_std(strength)).expect("finite std");
            let mut out = clean.clone();
            for v in out.data_mut() {
                *v = (gain * v.powf(gamma) + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            out
        }
        DegradationKind::Rain => {
            let layer = rain_layer(s.h, s.w, strength, &mut rng);
            overlay(clean, &layer, 0.95)
        }
        DegradationKind::Snow => {
            let layer = snow_layer(s.h, s.w, strength, &mut rng);
            overlay(clean, &layer, 1.0)
        }
    })
}

fn mirror(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= len as isize { period - m } else { m }) as usize
}

fn gaussian_blur(img: &Tensor, sigma: f64) -> Tensor {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / total).collect();
    let s = img.shape();
    let mut out = img.clone();
    for c in 0..s.c {
        let src = img.plane(0, c);
        let mut rows = vec![0.0; s.plane()];
        for y in 0..s.h {
            for x in 0..s.w {
                rows[y * s.w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[y * s.w + mirror(x as isize + k as isize - radius, s.w)])
                    .sum();
            }
        }
        let dst = out.plane_mut(0, c);
        for y in 0..s.h {
            for x in 0..s.w {
                dst[y * s.w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * rows[mirror(y as isize + k as isize - radius, s.h) * s.w + x])
                    .sum();
            }
        }
    }
    out
}

/// Per-pixel opacity of oriented streaks.
fn rain_layer(h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut layer = vec![0.0; h * w];
    let count = (strength * 0.02 * (h * w) as f64).round() as usize;
    let angle = rng.random_range(-0.35f64..0.35);
    let (dx, dy) = (angle.sin(), angle.cos());
    for _ in 0..count {
        let (x0, y0) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let len = rng.random_range(4.0..12.0);
        let alpha = rng.random_range(0.3..0.7);
        let steps = (len * 2.0) as usize;
        for k in 0..=steps {
            let t = k as f64 * 0.5;
            let (x, y) = ((x0 + t * dx) as isize, (y0 + t * dy) as isize);
            if (0..w as isize).contains(&x) && (0..h as isize).contains(&y) {
                let p = &mut layer[y as usize * w + x as usize];
                *p = f64::max(*p, alpha);
            }
        }
    }
    layer
}

/// Per-pixel opacity of soft round flakes.
fn snow_layer(h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut layer = vec![0.0; h * w];
    let count = (strength * 0.015 * (h * w) as f64).round() as usize;
    for _ in 0..count {
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let r: f64 = rng.random_range(0.7..2.2);
        let alpha = rng.random_range(0.6..1.0);
        let reach = r.ceil() as isize + 1;
        for y in (cy as isize - reach)..=(cy as isize + reach) {
            for x in (cx as isize - reach)..=(cx as isize + reach) {
                if !(0..w as isize).contains(&x) || !(0..h as isize).contains(&y) {
                    continue;
                }
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let a = alpha * (1.0 - d / r).clamp(0.0, 1.0);
                let p = &mut layer[y as usize * w + x as usize];
                *p = f64::max(*p, a);
            }
        }
    }
    layer
}

fn overlay(img: &Tensor, layer: &[f64], level: f64) -> Tensor {
    let s = img.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        let a = layer[y * s.w + x];
        img.at(n, c, y, x) * (1.0 - a) + a * level
    })
}

/// Seeded procedural RGB texture in roughly `[0.05, 0.95]`: a color ramp,
/// oriented sinusoids, and a few flat shapes.
pub fn texture(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Tensor::zeros(Shape::new(1, 3, h, w));
    let (fh, fw) = (h.max(1) as f64, w.max(1) as f64);
    for c in 0..3 {
        let base = rng.random_range(0.2..0.8);
        let (gx, gy) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let cycles = rng.random_range(1.0..8.0);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                (cycles * theta.cos(), cycles * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.03..0.15))
            })
            .collect();
        let plane = img.plane_mut(0, c);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / fw, y as f64 / fh);
                let mut val = base + gx * (u - 0.5) + gy * (v - 0.5);
                for (kx, ky, phase, amp) in &waves {
                    val += amp * (std::f64::consts::TAU * (kx * u + ky * v) + phase).sin();
                }
                plane[y * w + x] = val;
            }
        }
    }
    let shapes = rng.random_range(2..6);
    for _ in 0..shapes {
        let color: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
        let (cx, cy) = (rng.random_range(0.0..fw), rng.random_range(0.0..fh));
        let (rx, ry) = (rng.random_range(0.05..0.25) * fw, rng.random_range(0.05..0.25) * fh);
        let disk = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    for (c, col) in color.iter().enumerate() {
                        img.set(0, c, y, x, *col);
                    }
                }
            }
        }
    }
    img.map(|v| v.clamp(0.05, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strength_is_identity() {
        let img = texture(3, 16, 20);
        for kind in DegradationKind::ALL {
            assert_eq!(synthesize(kind, &img, 11, 0.0).unwrap(), img);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let img = texture(4, 24, 24);
        for kind in DegradationKind::ALL {
            let a = synthesize(kind, &img, 5, 0.7).unwrap();
            assert_eq!(a, synthesize(kind, &img, 5, 0.7).unwrap());
            assert_ne!(a, img, "{kind} changed nothing");
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synthesize(DegradationKind::Blur, &img, 5, 1.5).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in DegradationKind::ALL {
            assert_eq!(kind.name().parse::<DegradationKind>().unwrap(), kind);
        }
        assert!("haze".parse::<DegradationKind>().is_err());
    }
}
