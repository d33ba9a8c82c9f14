//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in execution order; [`DiffGraph::backward`] walks the
//! tape once in reverse, summing contributions into each input's gradient.

use crate::error::{Error, Result};

use super::fft;
use super::ops::{self, Activation, ConvSpec, LayerNormCache};
use super::tensor::Tensor;

/// Handle to a value recorded in a [`DiffGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Act { x: Var, kind: Activation },
    Gap { x: Var },
    Fc { x: Var, w: Var, b: Var },
    Shuffle { x: Var, r: usize },
    Unshuffle { x: Var, r: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, alpha: f64 },
    ScaleChannels { x: Var, s: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize, len: usize },
    L1Mean { a: Var, b: Var },
    FreqL1Mean { a: Var, b: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Act { .. } => "activation",
            Op::Gap { .. } => "global_avg_pool",
            Op::Fc { .. } => "fully_connected",
            Op::Shuffle { .. } => "pixel_shuffle",
            Op::Unshuffle { .. } => "pixel_unshuffle",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::L1Mean { .. } => "l1_mean",
            Op::FreqL1Mean { .. } => "frequency_l1_mean",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    ln_cache: Option<LayerNormCache>,
}

/// Recorded computation. Single owner; not meant to be shared across threads.
#[derive(Default)]
pub struct DiffGraph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf of the graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl DiffGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            ln_cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn eval(&self, op: &Op) -> Result<(Tensor, Option<LayerNormCache>)> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let out = match op {
            Op::Leaf => return Err(Error::Contract("leaf nodes are not evaluated".into())),
            Op::Conv { x, w, b, spec } => ops::conv2d(v(x), v(w), b.as_ref().map(v), spec)?,
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (y, cache) = ops::layer_norm(v(x), v(gamma), v(beta), *eps)?;
                return Ok((y, Some(cache)));
            }
            Op::Act { x, kind } => ops::activation(*kind, v(x)),
            Op::Gap { x } => ops::global_avg_pool(v(x))?,
            Op::Fc { x, w, b } => ops::fully_connected(v(x), v(w), v(b))?,
            Op::Shuffle { x, r } => ops::pixel_shuffle(v(x), *r)?,
            Op::Unshuffle { x, r } => ops::pixel_unshuffle(v(x), *r)?,
            Op::Add { a, b } => ops::add(v(a), v(b))?,
            Op::Mul { a, b } => ops::mul(v(a), v(b))?,
            Op::Scale { x, alpha } => ops::scale(v(x), *alpha),
            Op::ScaleChannels { x, s } => ops::scale_channels(v(x), v(s))?,
            Op::Concat { parts } => {
                let refs: Vec<&Tensor> = parts.iter().map(v).collect();
                ops::concat_channels(&refs)?
            }
            Op::Slice { x, start, len } => ops::slice_channels(v(x), *start, *len)?,
            Op::L1Mean { a, b } => Tensor::scalar(ops::l1_mean(v(a), v(b))?),
            Op::FreqL1Mean { a, b } => Tensor::scalar(fft::frequency_l1_mean(v(a), v(b))?),
        };
        Ok((out, None))
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let (value, ln_cache) = self.eval(&op)?;
        value.check_finite(op.name())?;
        self.nodes.push(Node { value, op, ln_cache });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.record(Op::Conv { x, w, b, spec })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.record(Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        self.record(Op::Act { x, kind })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Gap { x })
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.record(Op::Fc { x, w, b })
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.record(Op::Shuffle { x, r })
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.record(Op::Unshuffle { x, r })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.record(Op::Scale { x, alpha })
    }

    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        self.record(Op::ScaleChannels { x, s })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::Concat { parts: parts.to_vec() })
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::Slice { x, start, len })
    }

    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::L1Mean { a, b })
    }

    pub fn frequency_l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::FreqL1Mean { a, b })
    }

    /// Re-evaluates every recorded op from the cached values of its inputs.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        self.nodes
            .iter()
            .map(|node| match node.op {
                Op::Leaf => Ok(node.value.clone()),
                ref op => self.eval(op).map(|(v, _)| v),
            })
            .collect()
    }

    /// Reverse pass from a scalar `loss`. Every leaf receives a gradient
    /// (zeros when the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let seed = &self.nodes[loss.0].value;
        if seed.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(seed.shape(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.local_grads(node, &g)?;
            for (var, contrib) in contributions {
                contrib.check_finite(&format!("backward of node {i} ({})", node.op.name()))?;
                match &mut grads[var.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(contrib.data())
                        .for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contrib),
                }
            }
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) {
                if slot.is_none() {
                    *slot = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |x: &Var| &self.nodes[x.0].value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { x, w, b, spec } => {
                let (gx, gw, gb) = ops::conv2d_backward(v(x), v(w), b.is_some(), spec, g)?;
                let mut out = vec![(*x, gx), (*w, gw)];
                if let (Some(b), Some(gb)) = (b, gb) {
                    out.push((*b, gb.reshape(v(b).shape())?));
                }
                out
            }
            Op::LayerNorm { x, gamma, beta, .. } => {
                let cache = node
                    .ln_cache
                    .as_ref()
                    .ok_or_else(|| Error::Contract("layer norm node without cache".into()))?;
                let (gx, gg, gb) = ops::layer_norm_backward(v(gamma), cache, g)?;
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Act { x, kind } => vec![(*x, ops::activation_backward(*kind, v(x), &node.value, g))],
            Op::Gap { x } => vec![(*x, ops::global_avg_pool_backward(v(x).shape(), g))],
            Op::Fc { x, w, b } => {
                let (gx, gw, gb) = ops::fully_connected_backward(v(x), v(w), v(b), g)?;
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Shuffle { x, r } => vec![(*x, ops::pixel_unshuffle(g, *r)?)],
            Op::Unshuffle { x, r } => vec![(*x, ops::pixel_shuffle(g, *r)?)],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => vec![(*a, ops::mul(g, v(b))?), (*b, ops::mul(g, v(a))?)],
            Op::Scale { x, alpha } => vec![(*x, ops::scale(g, *alpha))],
            Op::ScaleChannels { x, s } => {
                let (gx, gs) = ops::scale_channels_backward(v(x), v(s), g);
                vec![(*x, gx), (*s, gs)]
            }
            Op::Concat { parts } => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = v(p).shape().c;
                    out.push((*p, ops::slice_channels(g, start, len)?));
                    start += len;
                }
                out
            }
            Op::Slice { x, start, len } => {
                let src = v(x).shape();
                let mut gx = Tensor::zeros(src);
                for n in 0..src.n {
                    for c in 0..*len {
                        gx.plane_mut(n, start + c).copy_from_slice(g.plane(n, c));
                    }
                }
                vec![(*x, gx)]
            }
            Op::L1Mean { a, b } => {
                let up = g.item()?;
                let ga = ops::scale(&ops::l1_mean_grad(v(a), v(b))?, up);
                let gb = ops::scale(&ga, -1.0);
                vec![(*a, ga), (*b, gb)]
            }
            Op::FreqL1Mean { a, b } => {
                let up = g.item()?;
                let ga = ops::scale(&fft::frequency_l1_mean_grad(v(a), v(b))?, up);
                let gb = ops::scale(&ga, -1.0);
                vec![(*a, ga), (*b, gb)]
            }
        })
    }
}
