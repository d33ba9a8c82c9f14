use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{ParameterSet, SimpleIr};
use crate::numerics::{Shape, Tensor};
use crate::objective::{ImagePair, LossConfig, MetricReport};

pub const TILE_OVERLAP: usize = 16;

fn starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < len).collect();
    v.push(len - tile);
    v
}

fn ramp(i: usize, len: usize, overlap: usize) -> f64 {
    let edge = (i.min(len - 1 - i) + 1) as f64;
    (edge / (overlap + 1) as f64).min(1.0)
}

/// Runs `f` over overlapping `tile x tile` windows and blends the results
/// with linear edge ramps. Images no larger than `tile` go through `f` whole.
pub fn tiled(img: &Tensor, tile: usize, overlap: usize, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let s = img.shape();
    if tile <= overlap {
        return Err(Error::Config(format!("tile {tile} must exceed the overlap {overlap}")));
    }
    if s.h <= tile && s.w <= tile {
        return f(img);
    }
    let mut acc = Tensor::zeros(s);
    let mut weight = vec![0.0; s.plane()];
    for &top in &starts(s.h, tile, overlap) {
        for &left in &starts(s.w, tile, overlap) {
            let (th, tw) = (tile.min(s.h), tile.min(s.w));
            let patch = Tensor::from_fn(Shape::new(s.n, s.c, th, tw), |n, c, y, x| img.at(n, c, top + y, left + x));
            let out = f(&patch)?;
            if out.shape() != patch.shape() {
                return Err(Error::dim("shape", format!("tile output {} for input {}", out.shape(), patch.shape())));
            }
            for y in 0..th {
                for x in 0..tw {
                    let wgt = ramp(y, th, overlap) * ramp(x, tw, overlap);
                    weight[(top + y) * s.w + left + x] += wgt;
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let v = acc.at(n, c, top + y, left + x) + wgt * out.at(n, c, y, x);
                            acc.set(n, c, top + y, left + x, v);
                        }
                    }
                }
            }
        }
    }
    let w = s.w;
    Ok(Tensor::from_fn(s, |n, c, y, x| acc.at(n, c, y, x) / weight[y * w + x]))
}

/// Restores one image, tiling when either side exceeds `tile`.
pub fn restore_image(net: &SimpleIr, params: &ParameterSet, img: &Tensor, tile: usize) -> Result<Tensor> {
    tiled(img, tile, TILE_OVERLAP, |patch| net.restore(params, patch))
}

/// Mean metrics over a test split.
pub fn evaluate(
    net: &SimpleIr,
    params: &ParameterSet,
    samples: &[Sample],
    loss: &LossConfig,
    tile: usize,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let reports = samples
        .iter()
        .map(|s| {
            let restored = restore_image(net, params, &s.degraded, tile)?;
            MetricReport::measure(&ImagePair::new(restored, s.reference.clone())?, loss)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::mean(&reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_tiles_reassemble_exactly() {
        let img = Tensor::from_fn(Shape::new(1, 3, 70, 45), |_, c, y, x| (c * 1000 + y * 50 + x) as f64 * 1e-3);
        let out = tiled(&img, 32, TILE_OVERLAP, |t| Ok(t.clone())).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
        assert_eq!(starts(70, 32, 16), vec![0, 16, 32, 38]);
        assert_eq!(starts(20, 32, 16), vec![0]);
    }

    #[test]
    fn per_tile_offsets_are_blended_smoothly() {
        let img = Tensor::zeros(Shape::new(1, 1, 48, 48));
        let mut k = 0.0;
        let out = tiled(&img, 32, TILE_OVERLAP, |t| {
            k += 1.0;
            Ok(t.map(|_| k))
        })
        .unwrap();
        // neighbouring pixels never jump by a whole tile offset
        for y in 0..48 {
            for x in 1..48 {
                assert!((out.at(0, 0, y, x) - out.at(0, 0, y, x - 1)).abs() < 0.5);
            }
        }
    }
}
