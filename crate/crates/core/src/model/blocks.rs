//! Building blocks of the restoration trunk: dual-stream channel attention,
//! the four-branch local detail module, the feed-forward network, and their
//! composition into hybrid attention and feature iteration blocks.
//!
//! Layout structs hold indices into the flat parameter list; the forward
//! functions resolve them against the graph variables bound for that list.

use crate::error::{Error, Result};
use crate::numerics::{Activation, ConvSpec, DiffGraph, Shape, Tensor, Var};

use super::params::{Init, ParamSpec};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsaLayout {
    pub channels: usize,
    pub q_point: ConvIdx,
    pub q_depth: ConvIdx,
    pub k_point: ConvIdx,
    pub k_depth: ConvIdx,
    pub fc1: ConvIdx,
    pub fc2: ConvIdx,
    pub proj: ConvIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LdamLayout {
    pub channels: usize,
    pub square: ConvIdx,
    pub band_w: ConvIdx,
    pub band_h: ConvIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnLayout {
    pub expand: ConvIdx,
    pub project: ConvIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FibLayout {
    pub norm1: NormIdx,
    pub dsa: DsaLayout,
    pub ldam: LdamLayout,
    pub merge: ConvIdx,
    pub norm2: NormIdx,
    pub ffn: FfnLayout,
}

/// Accumulates [`ParamSpec`]s and hands back their indices.
#[derive(Default)]
pub(crate) struct LayoutBuilder {
    pub specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Shape, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    /// Weight `c_out x c_in_per_group x kh x kw` plus a bias.
    pub fn conv(&mut self, prefix: &str, c_out: usize, c_in_group: usize, kh: usize, kw: usize) -> ConvIdx {
        let fan_in = c_in_group * kh * kw;
        ConvIdx {
            weight: self.push(
                format!("{prefix}.weight"),
                Shape::new(c_out, c_in_group, kh, kw),
                Init::FanIn(fan_in),
            ),
            bias: self.push(format!("{prefix}.bias"), Shape::new(1, c_out, 1, 1), Init::Zeros),
        }
    }

    pub fn norm(&mut self, prefix: &str, c: usize) -> NormIdx {
        NormIdx {
            gamma: self.push(format!("{prefix}.gamma"), Shape::new(1, c, 1, 1), Init::Ones),
            beta: self.push(format!("{prefix}.beta"), Shape::new(1, c, 1, 1), Init::Zeros),
        }
    }

    pub fn fib(&mut self, prefix: &str, c: usize, hidden: usize, ks: usize, kb: usize) -> FibLayout {
        let q = c / 4;
        let norm1 = self.norm(&format!("{prefix}.norm1"), c);
        let dsa = DsaLayout {
            channels: c,
            q_point: self.conv(&format!("{prefix}.dsa.q_point"), c, c, 1, 1),
            q_depth: self.conv(&format!("{prefix}.dsa.q_depth"), c, 1, 3, 3),
            k_point: self.conv(&format!("{prefix}.dsa.k_point"), c, c, 1, 1),
            k_depth: self.conv(&format!("{prefix}.dsa.k_depth"), c, 1, 3, 3),
            fc1: self.conv(&format!("{prefix}.dsa.fc1"), hidden, c, 1, 1),
            fc2: self.conv(&format!("{prefix}.dsa.fc2"), c, hidden, 1, 1),
            proj: self.conv(&format!("{prefix}.dsa.proj"), c, c, 1, 1),
        };
        let ldam = LdamLayout {
            channels: c,
            square: self.conv(&format!("{prefix}.ldam.square"), q, 1, ks, ks),
            band_w: self.conv(&format!("{prefix}.ldam.band_w"), q, 1, 1, kb),
            band_h: self.conv(&format!("{prefix}.ldam.band_h"), q, 1, kb, 1),
        };
        let merge = self.conv(&format!("{prefix}.merge"), c, 2 * c, 1, 1);
        let norm2 = self.norm(&format!("{prefix}.norm2"), c);
        let ffn = FfnLayout {
            expand: self.conv(&format!("{prefix}.ffn.expand"), c, c, 3, 3),
            project: self.conv(&format!("{prefix}.ffn.project"), c, c, 1, 1),
        };
        FibLayout { norm1, dsa, ldam, merge, norm2, ffn }
    }
}

pub(crate) fn conv(g: &mut DiffGraph, vars: &[Var], idx: ConvIdx, x: Var, spec: ConvSpec) -> Result<Var> {
    g.conv2d(x, vars[idx.weight], Some(vars[idx.bias]), spec)
}

fn norm(g: &mut DiffGraph, vars: &[Var], idx: NormIdx, x: Var) -> Result<Var> {
    g.layer_norm(x, vars[idx.gamma], vars[idx.beta], LN_EPS)
}

fn check_channels(g: &DiffGraph, x: Var, expected: usize, block: &str) -> Result<()> {
    let c = g.value(x).shape().c;
    if c != expected {
        return Err(Error::dim("c", format!("{block} expects {expected} channels, input has {c}")));
    }
    Ok(())
}

/// Values captured inside [`dsa_forward`].
#[derive(Clone, Debug, Default)]
pub struct DsaIntermediates {
    pub q: Option<Tensor>,
    pub k: Option<Tensor>,
    /// Spatially pooled query, `n x c x 1 x 1`.
    pub pooled: Option<Tensor>,
    /// Channel attention weights in `(0, 1)`, `n x c x 1 x 1`.
    pub weights: Option<Tensor>,
    /// Query modulated by the channel weights.
    pub modulated: Option<Tensor>,
    pub out: Option<Tensor>,
}

/// Dual-stream attention.
///
/// `Q` and `K` are each a point-wise then depth-wise 3x3 projection of `x`.
/// A squeeze-excitation MLP on the pooled query gives per-channel weights `W`;
/// the output is `proj(W Q * K) + Q`.
pub fn dsa_forward(
    g: &mut DiffGraph,
    vars: &[Var],
    l: &DsaLayout,
    x: Var,
    probe: Option<&mut DsaIntermediates>,
) -> Result<Var> {
    check_channels(g, x, l.channels, "dual-stream attention")?;
    let dw = ConvSpec::depthwise(l.channels);
    let q = conv(g, vars, l.q_point, x, ConvSpec::same())?;
    let q = conv(g, vars, l.q_depth, q, dw)?;
    let k = conv(g, vars, l.k_point, x, ConvSpec::same())?;
    let k = conv(g, vars, l.k_depth, k, dw)?;

    let pooled = g.global_avg_pool(q)?;
    let h = g.fully_connected(pooled, vars[l.fc1.weight], vars[l.fc1.bias])?;
    let h = g.activation(Activation::Relu, h)?;
    let h = g.fully_connected(h, vars[l.fc2.weight], vars[l.fc2.bias])?;
    let weights = g.activation(Activation::Sigmoid, h)?;

    let modulated = g.scale_channels(q, weights)?;
    let mixed = g.mul(modulated, k)?;
    let projected = conv(g, vars, l.proj, mixed, ConvSpec::same())?;
    let out = g.add(projected, q)?;

    if let Some(p) = probe {
        p.q = Some(g.value(q).clone());
        p.k = Some(g.value(k).clone());
        p.pooled = Some(g.value(pooled).clone());
        p.weights = Some(g.value(weights).clone());
        p.modulated = Some(g.value(modulated).clone());
        p.out = Some(g.value(out).clone());
    }
    Ok(out)
}

/// Branch inputs and outputs captured inside [`ldam_forward`], in channel order
/// `[square, band_w, band_h, identity]`.
#[derive(Clone, Debug, Default)]
pub struct LdamIntermediates {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
}

/// Local detail module: splits channels into quarters filtered by a square,
/// a `1 x k` band and a `k x 1` band depth-wise kernel, with the last quarter
/// passed through untouched.
pub fn ldam_forward(
    g: &mut DiffGraph,
    vars: &[Var],
    l: &LdamLayout,
    x: Var,
    probe: Option<&mut LdamIntermediates>,
) -> Result<Var> {
    if !l.channels.is_multiple_of(4) {
        return Err(Error::Config(format!("local detail module needs C divisible by 4, got {}", l.channels)));
    }
    check_channels(g, x, l.channels, "local detail module")?;
    let q = l.channels / 4;
    let dw = ConvSpec::depthwise(q);
    let parts: Vec<Var> = (0..4).map(|i| g.slice_channels(x, i * q, q)).collect::<Result<_>>()?;
    let outputs = [
        conv(g, vars, l.square, parts[0], dw)?,
        conv(g, vars, l.band_w, parts[1], dw)?,
        conv(g, vars, l.band_h, parts[2], dw)?,
        parts[3],
    ];
    if let Some(p) = probe {
        p.inputs = parts.iter().map(|v| g.value(*v).clone()).collect();
        p.outputs = outputs.iter().map(|v| g.value(*v).clone()).collect();
    }
    g.concat_channels(&outputs)
}

/// `project(GELU(expand_3x3(x)))`.
pub fn ffn_forward(g: &mut DiffGraph, vars: &[Var], l: &FfnLayout, x: Var) -> Result<Var> {
    let h = conv(g, vars, l.expand, x, ConvSpec::same())?;
    let h = g.activation(Activation::Gelu, h)?;
    conv(g, vars, l.project, h, ConvSpec::same())
}

/// Hybrid attention: a 1x1 merge of `[DSA(LN x); LDAM(LN x)]` back to `C` channels.
pub fn hab_forward(g: &mut DiffGraph, vars: &[Var], l: &FibLayout, x: Var) -> Result<Var> {
    let n = norm(g, vars, l.norm1, x)?;
    let a = dsa_forward(g, vars, &l.dsa, n, None)?;
    let b = ldam_forward(g, vars, &l.ldam, n, None)?;
    let cat = g.concat_channels(&[a, b])?;
    conv(g, vars, l.merge, cat, ConvSpec::same())
}

/// Feature iteration block: `x' = HAB(x) + x`, then `FFN(LN x') + x'`.
pub fn fib_forward(g: &mut DiffGraph, vars: &[Var], l: &FibLayout, x: Var) -> Result<Var> {
    let hab = hab_forward(g, vars, l, x)?;
    let mid = g.add(hab, x)?;
    let n = norm(g, vars, l.norm2, mid)?;
    let f = ffn_forward(g, vars, &l.ffn, n)?;
    g.add(f, mid)
}
