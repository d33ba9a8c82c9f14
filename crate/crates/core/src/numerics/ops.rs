//! Pure forward and backward kernels over [`Tensor`].
//!
//! Every forward function has a matching `*_backward` that maps the gradient of
//! the output back onto each input. The graph in [`super::graph`] only wires
//! these together; all arithmetic lives here.

use crate::error::{Error, Result};

use super::tensor::{ensure_same_shape, Shape, Tensor};

/// How a convolution treats the border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; the output shrinks by `k - 1`.
    Valid,
    /// Mirror padding (edge sample not repeated) sized to keep `h x w` at stride 1.
    Reflect,
    /// Zero padding sized to keep `h x w` at stride 1.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1, reflect padding, dense channels.
    pub const fn same() -> Self {
        ConvSpec {
            stride: 1,
            padding: Padding::Reflect,
            groups: 1,
        }
    }

    /// Stride 1, reflect padding, one group per channel.
    pub const fn depthwise(channels: usize) -> Self {
        ConvSpec {
            stride: 1,
            padding: Padding::Reflect,
            groups: channels,
        }
    }

    pub const fn valid() -> Self {
        ConvSpec {
            stride: 1,
            padding: Padding::Valid,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

/// Mirror index for an arbitrary (possibly far out of range) coordinate.
///
/// Reflection repeats with period `2 (len - 1)`, so pads wider than the axis
/// still resolve to a valid sample.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Source index for every coordinate of one padded axis (`None` = zero pad).
struct AxisMap {
    src: Vec<Option<usize>>,
    out_len: usize,
}

fn axis_map(len: usize, k: usize, stride: usize, padding: Padding, axis: &'static str) -> Result<AxisMap> {
    let (before, after) = match padding {
        Padding::Valid => (0, 0),
        Padding::Reflect | Padding::Zero => ((k - 1) / 2, k - 1 - (k - 1) / 2),
    };
    let padded = len + before + after;
    if k > padded {
        return Err(Error::dim(
            axis,
            format!("kernel extent {k} exceeds padded input extent {padded}"),
        ));
    }
    let src = (0..padded)
        .map(|p| {
            let i = p as isize - before as isize;
            if (0..len as isize).contains(&i) {
                Some(i as usize)
            } else {
                match padding {
                    Padding::Reflect => Some(reflect_index(i, len)),
                    _ => None,
                }
            }
        })
        .collect();
    Ok(AxisMap {
        src,
        out_len: (padded - k) / stride + 1,
    })
}

fn pad_plane(plane: &[f64], w: usize, rows: &AxisMap, cols: &AxisMap, out: &mut [f64]) {
    let pw = cols.src.len();
    for (py, sy) in rows.src.iter().enumerate() {
        let dst = &mut out[py * pw..(py + 1) * pw];
        match sy {
            None => dst.fill(0.0),
            Some(sy) => {
                let row = &plane[sy * w..(sy + 1) * w];
                for (d, sx) in dst.iter_mut().zip(&cols.src) {
                    *d = sx.map_or(0.0, |sx| row[sx]);
                }
            }
        }
    }
}

fn fold_plane(padded: &[f64], w: usize, rows: &AxisMap, cols: &AxisMap, out: &mut [f64]) {
    let pw = cols.src.len();
    for (py, sy) in rows.src.iter().enumerate() {
        let Some(sy) = sy else { continue };
        let src = &padded[py * pw..(py + 1) * pw];
        let row = &mut out[sy * w..(sy + 1) * w];
        for (g, sx) in src.iter().zip(&cols.src) {
            if let Some(sx) = sx {
                row[*sx] += g;
            }
        }
    }
}

struct ConvGeometry {
    rows: AxisMap,
    cols: AxisMap,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    out: Shape,
}

fn conv_geometry(x: Shape, w: Shape, bias: Option<Shape>, spec: &ConvSpec) -> Result<ConvGeometry> {
    if spec.groups == 0 || spec.stride == 0 {
        return Err(Error::Config("groups and stride must be positive".into()));
    }
    if !x.c.is_multiple_of(spec.groups) || !w.n.is_multiple_of(spec.groups) {
        return Err(Error::Config(format!(
            "groups={} must divide input channels {} and output channels {}",
            spec.groups, x.c, w.n
        )));
    }
    let cin_g = x.c / spec.groups;
    if w.c != cin_g {
        return Err(Error::dim(
            "c",
            format!("weight {w} expects {} input channels per group, input has {cin_g}", w.c),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != w.n {
            return Err(Error::dim("c", format!("bias {b} does not match {} output channels", w.n)));
        }
    }
    let rows = axis_map(x.h, w.h, spec.stride, spec.padding, "h")?;
    let cols = axis_map(x.w, w.w, spec.stride, spec.padding, "w")?;
    let out = Shape::new(x.n, w.n, rows.out_len, cols.out_len);
    Ok(ConvGeometry {
        rows,
        cols,
        cin_g,
        cout_g: w.n / spec.groups,
        kh: w.h,
        kw: w.w,
        out,
    })
}

/// Grouped 2-D cross-correlation. `weight` is `c_out x (c_in / groups) x kh x kw`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let geo = conv_geometry(x.shape(), weight.shape(), bias.map(Tensor::shape), spec)?;
    let (ph, pw) = (geo.rows.src.len(), geo.cols.src.len());
    let (oh, ow) = (geo.out.h, geo.out.w);
    let s = spec.stride;
    let wd = weight.data();
    let mut out = Tensor::zeros(geo.out);
    let mut padded = vec![0.0; x.shape().c * ph * pw];
    for n in 0..x.shape().n {
        for c in 0..x.shape().c {
            pad_plane(
                x.plane(n, c),
                x.shape().w,
                &geo.rows,
                &geo.cols,
                &mut padded[c * ph * pw..(c + 1) * ph * pw],
            );
        }
        for oc in 0..geo.out.c {
            let g = oc / geo.cout_g;
            let o = out.plane_mut(n, oc);
            if let Some(b) = bias {
                o.fill(b.data()[oc]);
            }
            for icl in 0..geo.cin_g {
                let ic = g * geo.cin_g + icl;
                let p = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                for ky in 0..geo.kh {
                    for kx in 0..geo.kw {
                        let wv = wd[((oc * geo.cin_g + icl) * geo.kh + ky) * geo.kw + kx];
                        for oy in 0..oh {
                            let prow = &p[(oy * s + ky) * pw..];
                            let orow = &mut o[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                for (ov, pv) in orow.iter_mut().zip(&prow[kx..kx + ow]) {
                                    *ov += wv * pv;
                                }
                            } else {
                                for (ox, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * prow[ox * s + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and (when present) bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let bias_shape = has_bias.then(|| Shape::new(1, weight.shape().n, 1, 1));
    let geo = conv_geometry(x.shape(), weight.shape(), bias_shape, spec)?;
    ensure_same_shape(grad_out, &Tensor::zeros(geo.out))?;
    let (ph, pw) = (geo.rows.src.len(), geo.cols.src.len());
    let (oh, ow) = (geo.out.h, geo.out.w);
    let s = spec.stride;
    let wd = weight.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = has_bias.then(|| Tensor::zeros(Shape::new(1, weight.shape().n, 1, 1)));
    let cin = x.shape().c;
    let mut padded = vec![0.0; cin * ph * pw];
    let mut gpad = vec![0.0; cin * ph * pw];
    for n in 0..x.shape().n {
        for c in 0..cin {
            pad_plane(
                x.plane(n, c),
                x.shape().w,
                &geo.rows,
                &geo.cols,
                &mut padded[c * ph * pw..(c + 1) * ph * pw],
            );
        }
        gpad.fill(0.0);
        for oc in 0..geo.out.c {
            let g = oc / geo.cout_g;
            let go = grad_out.plane(n, oc);
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[oc] += go.iter().sum::<f64>();
            }
            for icl in 0..geo.cin_g {
                let ic = g * geo.cin_g + icl;
                let p = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                let gp = &mut gpad[ic * ph * pw..(ic + 1) * ph * pw];
                for ky in 0..geo.kh {
                    for kx in 0..geo.kw {
                        let widx = ((oc * geo.cin_g + icl) * geo.kh + ky) * geo.kw + kx;
                        let wv = wd[widx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let base = (oy * s + ky) * pw;
                            let grow = &go[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let prow = &p[base + kx..base + kx + ow];
                                for (gv, pv) in grow.iter().zip(prow) {
                                    acc += gv * pv;
                                }
                                for (gpv, gv) in gp[base + kx..base + kx + ow].iter_mut().zip(grow) {
                                    *gpv += wv * gv;
                                }
                            } else {
                                for (ox, gv) in grow.iter().enumerate() {
                                    acc += gv * p[base + ox * s + kx];
                                    gp[base + ox * s + kx] += wv * gv;
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
        for c in 0..cin {
            fold_plane(
                &gpad[c * ph * pw..(c + 1) * ph * pw],
                x.shape().w,
                &geo.rows,
                &geo.cols,
                gx.plane_mut(n, c),
            );
        }
    }
    Ok((gx, gw, gb))
}

fn check_channel_vector(v: &Tensor, c: usize, what: &str) -> Result<()> {
    if v.numel() != c {
        return Err(Error::dim(
            "c",
            format!("{what} has {} entries, normalized axis has {c}", v.numel()),
        ));
    }
    Ok(())
}

/// Per-position statistics kept by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalizes across channels at every `(n, y, x)` position, then applies a
/// per-channel affine map.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, LayerNormCache)> {
    let s = x.shape();
    if s.c == 0 {
        return Err(Error::Config("layer_norm over a zero-length channel axis".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    check_channel_vector(gamma, s.c, "gamma")?;
    check_channel_vector(beta, s.c, "beta")?;
    let plane = s.plane();
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![0.0; s.n * plane];
    let (xd, g, b) = (x.data(), gamma.data(), beta.data());
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let at = |c: usize| base + c * plane + p;
            let mean = (0..s.c).map(|c| xd[at(c)]).sum::<f64>() / s.c as f64;
            let var = (0..s.c).map(|c| (xd[at(c)] - mean).powi(2)).sum::<f64>() / s.c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[n * plane + p] = inv;
            for c in 0..s.c {
                let xh = (xd[at(c)] - mean) * inv;
                normalized.data_mut()[at(c)] = xh;
                out.data_mut()[at(c)] = g[c] * xh + b[c];
            }
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

pub fn layer_norm_backward(
    gamma: &Tensor,
    cache: &LayerNormCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let s = grad_out.shape();
    ensure_same_shape(grad_out, &cache.normalized)?;
    let plane = s.plane();
    let mut gx = Tensor::zeros(s);
    let mut gg = Tensor::zeros(gamma.shape());
    let mut gb = Tensor::zeros(gamma.shape());
    let (go, xh, g) = (grad_out.data(), cache.normalized.data(), gamma.data());
    let c_f = s.c as f64;
    let mut dxh = vec![0.0; s.c];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let at = |c: usize| base + c * plane + p;
            let (mut sum_d, mut sum_dx) = (0.0, 0.0);
            for c in 0..s.c {
                let i = at(c);
                gg.data_mut()[c] += go[i] * xh[i];
                gb.data_mut()[c] += go[i];
                dxh[c] = go[i] * g[c];
                sum_d += dxh[c];
                sum_dx += dxh[c] * xh[i];
            }
            let inv = cache.inv_std[n * plane + p];
            for c in 0..s.c {
                let i = at(c);
                gx.data_mut()[i] = inv / c_f * (c_f * dxh[c] - sum_d - xh[i] * sum_dx);
            }
        }
    }
    Ok((gx, gg, gb))
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gaussian_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Gelu => x.map(|v| v * gaussian_cdf(v)),
        Activation::Sigmoid => x.map(|v| 1.0 / (1.0 + (-v).exp())),
    }
}

/// `x` is the activation input, `y` its output.
pub fn activation_backward(kind: Activation, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Tensor {
    let d: Vec<f64> = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Gelu => x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| g * (gaussian_cdf(v) + v * FRAC_1_SQRT_2PI * (-0.5 * v * v).exp()))
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
    };
    Tensor::new(x.shape(), d).expect("shape preserved")
}

/// Spatial mean per channel, `n x c x 1 x 1`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::dim("h", "global average pool over an empty spatial extent"));
    }
    let inv = 1.0 / s.plane() as f64;
    let data = (0..s.n)
        .flat_map(|n| (0..s.c).map(move |c| (n, c)))
        .map(|(n, c)| x.plane(n, c).iter().sum::<f64>() * inv)
        .collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let inv = 1.0 / input_shape.plane() as f64;
    let mut gx = Tensor::zeros(input_shape);
    for n in 0..input_shape.n {
        for c in 0..input_shape.c {
            let g = grad_out.at(n, c, 0, 0) * inv;
            gx.plane_mut(n, c).fill(g);
        }
    }
    gx
}

fn fc_dims(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.h != 1 || xs.w != 1 {
        return Err(Error::dim("h", format!("fully connected input must be n x c x 1 x 1, got {xs}")));
    }
    if ws.h != 1 || ws.w != 1 || ws.c != xs.c {
        return Err(Error::dim("c", format!("weight {ws} does not accept input {xs}")));
    }
    if bias.numel() != ws.n {
        return Err(Error::dim("c", format!("bias has {} entries, expected {}", bias.numel(), ws.n)));
    }
    Ok((xs.n, xs.c, ws.n))
}

/// `y[n, o] = sum_i W[o, i] x[n, i] + b[o]` on `n x c x 1 x 1` tensors.
pub fn fully_connected(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, cin, cout) = fc_dims(x, weight, bias)?;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut y = Vec::with_capacity(n * cout);
    for b in 0..n {
        let xr = &xd[b * cin..(b + 1) * cin];
        for o in 0..cout {
            let wr = &wd[o * cin..(o + 1) * cin];
            y.push(bd[o] + wr.iter().zip(xr).map(|(w, x)| w * x).sum::<f64>());
        }
    }
    Tensor::new(Shape::new(n, cout, 1, 1), y)
}

pub fn fully_connected_backward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, cin, cout) = fc_dims(x, weight, bias)?;
    let (xd, wd, go) = (x.data(), weight.data(), grad_out.data());
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(bias.shape());
    for b in 0..n {
        for o in 0..cout {
            let g = go[b * cout + o];
            gb.data_mut()[o] += g;
            for i in 0..cin {
                gw.data_mut()[o * cin + i] += g * xd[b * cin + i];
                gx.data_mut()[b * cin + i] += g * wd[o * cin + i];
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Depth-to-space: `(n, c r^2, h, w) -> (n, c, r h, r w)`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::dim("c", format!("{} channels not divisible by r^2 = {}", s.c, r * r)));
    }
    let c_out = s.c / (r * r);
    let mut out = Tensor::zeros(Shape::new(s.n, c_out, s.h * r, s.w * r));
    for n in 0..s.n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, c * r * r + i * r + j);
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            out.set(n, c, y * r + i, xx * r + j, src[y * s.w + xx]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Space-to-depth: `(n, c, r h, r w) -> (n, c r^2, h, w)`, the inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) {
        return Err(Error::dim("h", format!("height {} not divisible by {r}", s.h)));
    }
    if !s.w.is_multiple_of(r) {
        return Err(Error::dim("w", format!("width {} not divisible by {r}", s.w)));
    }
    let (h, w) = (s.h / r, s.w / r);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c * r * r, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for i in 0..r {
                for j in 0..r {
                    let dst = out.plane_mut(n, c * r * r + i * r + j);
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(y * r + i) * s.w + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape(a, b)?;
    let d = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), d)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape(a, b)?;
    let d = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape(), d)
}

pub fn scale(a: &Tensor, alpha: f64) -> Tensor {
    a.map(|v| v * alpha)
}

/// Multiplies every `h x w` plane of `x` by the matching entry of `s` (`n x c x 1 x 1`).
pub fn scale_channels(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (xs, ss) = (x.shape(), s.shape());
    if ss != Shape::new(xs.n, xs.c, 1, 1) {
        return Err(Error::dim("c", format!("channel scales {ss} do not broadcast over {xs}")));
    }
    let mut out = x.clone();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let f = s.at(n, c, 0, 0);
            out.plane_mut(n, c).iter_mut().for_each(|v| *v *= f);
        }
    }
    Ok(out)
}

pub fn scale_channels_backward(x: &Tensor, s: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let xs = x.shape();
    let mut gx = grad_out.clone();
    let mut gs = Tensor::zeros(s.shape());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let f = s.at(n, c, 0, 0);
            let go = grad_out.plane(n, c);
            gs.set(n, c, 0, 0, go.iter().zip(x.plane(n, c)).map(|(g, v)| g * v).sum());
            gx.plane_mut(n, c).iter_mut().for_each(|v| *v *= f);
        }
    }
    (gx, gs)
}

pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?
        .shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::dim("h", format!("cannot concatenate {s} with {first}")));
        }
    }
    let c_total = parts.iter().map(|p| p.shape().c).sum();
    let mut out = Tensor::zeros(Shape::new(first.n, c_total, first.h, first.w));
    for n in 0..first.n {
        let mut c0 = 0;
        for p in parts {
            for c in 0..p.shape().c {
                out.plane_mut(n, c0 + c).copy_from_slice(p.plane(n, c));
            }
            c0 += p.shape().c;
        }
    }
    Ok(out)
}

/// Channels `start..start + len` of `x`.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape();
    if start + len > s.c {
        return Err(Error::dim("c", format!("channel slice {start}..{} of {s}", start + len)));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, len, s.h, s.w));
    for n in 0..s.n {
        for c in 0..len {
            out.plane_mut(n, c).copy_from_slice(x.plane(n, start + c));
        }
    }
    Ok(out)
}

/// Mean absolute difference and its (sub)gradient with respect to `a`.
///
/// `sign(0)` is taken as 0.
pub fn l1_mean(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure_same_shape(a, b)?;
    let n = a.numel() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub fn l1_mean_grad(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape(a, b)?;
    let inv = 1.0 / a.numel() as f64;
    let d = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| sign(x - y) * inv)
        .collect();
    Tensor::new(a.shape(), d)
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mirror-pads the bottom and right edges.
pub fn pad_reflect(x: &Tensor, bottom: usize, right: usize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.h + bottom, s.w + right);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                let sy = reflect_index(y as isize, s.h);
                for xx in 0..w {
                    dst[y * w + xx] = src[sy * s.w + reflect_index(xx as isize, s.w)];
                }
            }
        }
    }
    out
}

/// Window `[top, top + h) x [left, left + w)` of every plane.
pub fn crop(x: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    let s = x.shape();
    if top + h > s.h {
        return Err(Error::dim("h", format!("crop rows {top}..{} of {}", top + h, s.h)));
    }
    if left + w > s.w {
        return Err(Error::dim("w", format!("crop cols {left}..{} of {}", left + w, s.w)));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[(top + y) * s.w + left..(top + y) * s.w + left + w]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn reflect_index_handles_wide_pads() {
        let got: Vec<usize> = (-5..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn pointwise_identity_conv() {
        let x = Tensor::from_fn(Shape::new(1, 3, 4, 5), |_, c, y, x| (c * 20 + y * 5 + x) as f64 * 0.1);
        let w = Tensor::from_fn(Shape::new(3, 3, 1, 1), |o, i, _, _| (o == i) as u8 as f64);
        let b = Tensor::vector(vec![0.0; 3]);
        assert_eq!(conv2d(&x, &w, Some(&b), &ConvSpec::same()).unwrap(), x);
    }

    #[test]
    fn depthwise_box_filter_preserves_constant() {
        let x = Tensor::full(Shape::new(1, 2, 5, 6), 0.5);
        let w = Tensor::full(Shape::new(2, 1, 3, 3), 1.0 / 9.0);
        let y = conv2d(&x, &w, None, &ConvSpec::depthwise(2)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn valid_conv_of_ramp_is_45() {
        let x = t(Shape::new(1, 1, 3, 3), &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::valid()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.item().unwrap(), 45.0);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor::zeros(Shape::new(4, 1, 3, 3));
        let spec = ConvSpec { groups: 2, ..ConvSpec::same() };
        assert!(matches!(conv2d(&x, &w, None, &spec), Err(Error::Config(_))));
        let w = Tensor::zeros(Shape::new(4, 2, 3, 3));
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::same()),
            Err(Error::Dimension { axis: "c", .. })
        ));
        let w = Tensor::zeros(Shape::new(1, 3, 5, 1));
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::valid()),
            Err(Error::Dimension { axis: "h", .. })
        ));
    }

    #[test]
    fn strided_zero_padded_conv_shape() {
        let x = Tensor::full(Shape::new(1, 1, 7, 8), 1.0);
        let w = Tensor::full(Shape::new(2, 1, 3, 3), 1.0);
        let spec = ConvSpec { stride: 2, padding: Padding::Zero, groups: 1 };
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 4));
        // corner sees a 2x2 window of ones
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 1, 1, 1), 9.0);
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::full(Shape::new(1, 3, 2, 2), 0.7);
        let ones = Tensor::vector(vec![1.0; 3]);
        let zeros = Tensor::vector(vec![0.0; 3]);
        let (y, _) = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-12));

        let x = Tensor::from_fn(Shape::new(1, 3, 2, 2), |_, c, y, x| (c + 2 * y + x) as f64);
        let beta = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let (y, _) = layer_norm(&x, &zeros, &beta, 1e-5).unwrap();
        for c in 0..3 {
            assert!(y.plane(0, c).iter().all(|&v| v == beta.data()[c]));
        }

        let x = t(Shape::new(1, 2, 1, 1), &[1.0, 3.0]);
        let (y, _) = layer_norm(&x, &Tensor::vector(vec![1.0; 2]), &Tensor::vector(vec![0.0; 2]), 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);

        let empty = Tensor::zeros(Shape::new(1, 0, 2, 2));
        let v = Tensor::vector(vec![]);
        assert!(matches!(layer_norm(&empty, &v, &v, 1e-5), Err(Error::Config(_))));
    }

    #[test]
    fn activation_examples() {
        let x = t(Shape::new(1, 1, 1, 3), &[-1.0, 2.0, 0.0]);
        assert_eq!(activation(Activation::Relu, &x).data(), &[0.0, 2.0, 0.0]);
        assert_eq!(activation(Activation::Sigmoid, &x).data()[2], 0.5);
        // Phi(1) = 0.8413447460685429
        let g = activation(Activation::Gelu, &Tensor::scalar(1.0)).item().unwrap();
        assert!((g - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::full(Shape::new(2, 3, 4, 4), 0.7);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 1));
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        let y = global_avg_pool(&Tensor::zeros(Shape::new(1, 2, 3, 3))).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let x = t(Shape::new(1, 1, 2, 2), &[1., 2., 3., 4.]);
        assert_eq!(global_avg_pool(&x).unwrap().item().unwrap(), 2.5);
        assert!(global_avg_pool(&Tensor::zeros(Shape::new(1, 1, 0, 3))).is_err());
    }

    #[test]
    fn fully_connected_examples() {
        let x = t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]);
        let eye = t(Shape::new(2, 2, 1, 1), &[1., 0., 0., 1.]);
        let zero_b = Tensor::vector(vec![0.0; 2]);
        assert_eq!(fully_connected(&x, &eye, &zero_b).unwrap().data(), x.data());
        let b = Tensor::vector(vec![0.3, -0.4]);
        let zw = Tensor::zeros(Shape::new(2, 2, 1, 1));
        assert_eq!(fully_connected(&x, &zw, &b).unwrap().data(), b.data());
        let w = t(Shape::new(2, 2, 1, 1), &[1., 1., 0., 1.]);
        assert_eq!(fully_connected(&x, &w, &zero_b).unwrap().data(), &[3.0, 2.0]);
        let bad = Tensor::zeros(Shape::new(2, 3, 1, 1));
        assert!(fully_connected(&x, &bad, &zero_b).is_err());
    }

    #[test]
    fn pixel_shuffle_examples() {
        let x = t(Shape::new(1, 4, 1, 1), &[1., 2., 3., 4.]);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert!(pixel_shuffle(&Tensor::zeros(Shape::new(1, 3, 2, 2)), 2).is_err());
        assert!(pixel_unshuffle(&Tensor::zeros(Shape::new(1, 1, 3, 4)), 2).is_err());
        let x = Tensor::from_fn(Shape::new(1, 4, 2, 2), |_, c, y, x| (c * 4 + y * 2 + x) as f64);
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&x, 2).unwrap(), 2).unwrap(), x);
    }

    #[test]
    fn pad_and_crop_round_trip() {
        let x = Tensor::from_fn(Shape::new(1, 2, 5, 6), |_, c, y, x| (c * 100 + y * 10 + x) as f64);
        let p = pad_reflect(&x, 3, 2);
        assert_eq!(p.shape(), Shape::new(1, 2, 8, 8));
        assert_eq!(p.at(0, 0, 5, 0), x.at(0, 0, 3, 0));
        assert_eq!(p.at(0, 1, 0, 7), x.at(0, 1, 0, 3));
        assert_eq!(crop(&p, 0, 0, 5, 6).unwrap(), x);
        assert!(crop(&x, 1, 0, 5, 6).is_err());
    }
}
