use crate::error::{Error, Result};
use crate::numerics::{ops, ConvSpec, DiffGraph, Tensor, Var};

use super::blocks::{conv, fib_forward, ConvIdx, FibLayout, LayoutBuilder};
use super::config::{ModelConfig, IMAGE_CHANNELS};
use super::params::{ParamSpec, ParameterSet};

/// Graph handles for the tensors of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub x0: Var,
    pub fib_outputs: Vec<Var>,
    pub xf: Var,
    pub restored: Var,
}

/// Materialized values of one forward pass.
#[derive(Clone, Debug)]
pub struct NetworkTrace {
    /// Shallow feature, `n x C x H/4 x W/4`.
    pub x0: Tensor,
    pub fib_outputs: Vec<Tensor>,
    pub xf: Tensor,
    pub restored: Tensor,
}

impl ForwardVars {
    pub fn trace(&self, g: &DiffGraph) -> NetworkTrace {
        NetworkTrace {
            x0: g.value(self.x0).clone(),
            fib_outputs: self.fib_outputs.iter().map(|v| g.value(*v).clone()).collect(),
            xf: g.value(self.xf).clone(),
            restored: g.value(self.restored).clone(),
        }
    }
}

/// The SimpleIR network: a sub-pixel 3x3 head down to `H/4 x W/4`, a stack of
/// feature iteration blocks with a long skip from the shallow feature, and a
/// 3x3 + pixel-shuffle tail back to full resolution.
#[derive(Clone, Debug)]
pub struct SimpleIr {
    config: ModelConfig,
    layout: Vec<ParamSpec>,
    head: ConvIdx,
    fibs: Vec<FibLayout>,
    tail: ConvIdx,
}

impl SimpleIr {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let packed = config.packed_channels();
        let mut b = LayoutBuilder::default();
        let head = b.conv("head", c, packed, 3, 3);
        let fibs = (0..config.num_fibs)
            .map(|i| {
                b.fib(
                    &format!("fib{i}"),
                    c,
                    c / config.reduction,
                    config.square_kernel,
                    config.band_kernel,
                )
            })
            .collect();
        let tail = b.conv("tail", packed, c, 3, 3);
        Ok(SimpleIr {
            config,
            layout: b.specs,
            head,
            fibs,
            tail,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn fib_layouts(&self) -> &[FibLayout] {
        &self.fibs
    }

    pub fn init_params(&self, seed: u64) -> ParameterSet {
        ParameterSet::initialize(&self.layout, seed)
    }

    /// Every weight, bias, scale and shift set to zero.
    pub fn zero_params(&self) -> ParameterSet {
        self.init_params(0).zeros_like()
    }

    /// Registers `params` as graph leaves, in layout order.
    pub fn bind(&self, g: &mut DiffGraph, params: &ParameterSet) -> Result<Vec<Var>> {
        params.check_layout(&self.layout)?;
        Ok(params.tensors().map(|t| g.leaf(t.clone())).collect())
    }

    /// Forward pass on an image batch whose sides are multiples of `down_factor`.
    pub fn forward(&self, g: &mut DiffGraph, vars: &[Var], image: Var) -> Result<ForwardVars> {
        let s = g.value(image).shape();
        let d = self.config.down_factor;
        if s.c != IMAGE_CHANNELS {
            return Err(Error::dim("c", format!("expected an RGB batch, got {s}")));
        }
        if !s.h.is_multiple_of(d) || s.h == 0 {
            return Err(Error::dim("h", format!("height {} is not a positive multiple of {d}", s.h)));
        }
        if !s.w.is_multiple_of(d) || s.w == 0 {
            return Err(Error::dim("w", format!("width {} is not a positive multiple of {d}", s.w)));
        }
        let packed = g.pixel_unshuffle(image, d)?;
        let x0 = conv(g, vars, self.head, packed, ConvSpec::same())?;
        let mut x = x0;
        let mut fib_outputs = Vec::with_capacity(self.fibs.len());
        for fib in &self.fibs {
            x = fib_forward(g, vars, fib, x)?;
            fib_outputs.push(x);
        }
        let xf = x;
        let skip = g.add(xf, x0)?;
        let t = conv(g, vars, self.tail, skip, ConvSpec::same())?;
        let restored = g.pixel_shuffle(t, d)?;
        Ok(ForwardVars {
            x0,
            fib_outputs,
            xf,
            restored,
        })
    }

    /// Full forward on an aligned batch, returning every recorded stage.
    pub fn trace(&self, params: &ParameterSet, image: &Tensor) -> Result<NetworkTrace> {
        let mut g = DiffGraph::new();
        let vars = self.bind(&mut g, params)?;
        let x = g.leaf(image.clone());
        Ok(self.forward(&mut g, &vars, x)?.trace(&g))
    }

    /// Restores an image of any size: mirror-pads to the down factor, runs the
    /// network and crops back.
    pub fn restore(&self, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        let d = self.config.down_factor;
        let (ph, pw) = ((d - s.h % d) % d, (d - s.w % d) % d);
        if ph == 0 && pw == 0 {
            return Ok(self.trace(params, image)?.restored);
        }
        let padded = ops::pad_reflect(image, ph, pw);
        let out = self.trace(params, &padded)?.restored;
        ops::crop(&out, 0, 0, s.h, s.w)
    }
}
