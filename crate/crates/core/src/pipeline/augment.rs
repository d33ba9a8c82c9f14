use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::objective::ImagePair;

/// Window position and flips of one random crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropDraw {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub flip_h: bool,
    pub flip_v: bool,
}

pub fn draw_crop(h: usize, w: usize, size: usize, rng: &mut impl Rng) -> Result<CropDraw> {
    if size == 0 || size > h || size > w {
        return Err(Error::dim(
            if size > h { "h" } else { "w" },
            format!("crop {size} does not fit a {h}x{w} image"),
        ));
    }
    Ok(CropDraw {
        top: rng.random_range(0..=h - size),
        left: rng.random_range(0..=w - size),
        size,
        flip_h: rng.random_bool(0.5),
        flip_v: rng.random_bool(0.5),
    })
}

fn window(t: &Tensor, d: &CropDraw) -> Tensor {
    let s = t.shape();
    let k = d.size;
    Tensor::from_fn(crate::numerics::Shape::new(s.n, s.c, k, k), |n, c, y, x| {
        let sy = if d.flip_v { k - 1 - y } else { y };
        let sx = if d.flip_h { k - 1 - x } else { x };
        t.at(n, c, d.top + sy, d.left + sx)
    })
}

/// Cuts the same window from both members and applies the same flips.
pub fn apply_crop(pair: &ImagePair, d: &CropDraw) -> ImagePair {
    ImagePair { restored: window(&pair.restored, d), reference: window(&pair.reference, d) }
}

/// Random aligned crop of `size` with random horizontal and vertical flips.
pub fn crop_and_flip(pair: &ImagePair, size: usize, rng: &mut impl Rng) -> Result<ImagePair> {
    let s = pair.restored.shape();
    let d = draw_crop(s.h, s.w, size, rng)?;
    Ok(apply_crop(pair, &d))
}
