//! Network building blocks.
//!
//! Layout conventions: convolutional blocks run on `(batch, channels, time)`
//! (2-D stacks on `(batch, channels, height, width)`); sequence blocks
//! (recurrent layers, attention, layer norm, linear) run on
//! `(batch, time, dim)`. Upsampling convolutions are realized as
//! zero-stuffing followed by a regular convolution, which is the same linear
//! operator as a transposed convolution and keeps every path differentiable.

use candle_core::{Tensor, D};
use candle_nn::ops::{sigmoid, softmax};

use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = ps.var(&format!("{name}.w"), &[out_dim, in_dim], Init::FanIn(in_dim))?;
        let b = if bias {
            Some(ps.var(&format!("{name}.b"), &[out_dim], Init::FanIn(in_dim))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    /// `(.., in_dim) -> (.., out_dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.w.t()?)?;
        match &self.b {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

pub struct Conv1d {
    w: Tensor,
    b: Option<Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
    out_channels: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let fan_in = in_c / groups * kernel;
        let w = ps.var(
            &format!("{name}.w"),
            &[out_c, in_c / groups, kernel],
            Init::FanIn(fan_in),
        )?;
        let b = ps.var(&format!("{name}.b"), &[out_c], Init::FanIn(fan_in))?;
        Ok(Self { w, b: Some(b), stride, padding, groups, out_channels: out_c })
    }

    /// `(B, in_c, T) -> (B, out_c, T')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv1d(&self.w, self.padding, self.stride, 1, self.groups)?;
        match &self.b {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, self.out_channels, 1))?)?),
            None => Ok(y),
        }
    }
}

pub struct Conv2d {
    w: Tensor,
    b: Option<Tensor>,
    stride: usize,
    padding: usize,
    out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let w = ps.var(
            &format!("{name}.w"),
            &[out_c, in_c, kernel, kernel],
            Init::FanIn(fan_in),
        )?;
        let b = ps.var(&format!("{name}.b"), &[out_c], Init::FanIn(fan_in))?;
        Ok(Self { w, b: Some(b), stride, padding, out_channels: out_c })
    }

    /// `(B, in_c, H, W) -> (B, out_c, H', W')`.
    ///
    /// Strided convolution gradients are only well-defined here when
    /// `(len + 2p - k) % s == 0` on each spatial dim, so inputs are
    /// zero-extended up to that boundary and the outputs trimmed back to the
    /// true count. Trimmed positions are the only ones that read the
    /// appended zeros, so the kept values match the plain strided result.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (k, s, p) = (self.w.dims()[2], self.stride, self.padding);
        let mut h = x.clone();
        let mut true_out = [0usize; 2];
        for (slot, dim) in [2usize, 3].into_iter().enumerate() {
            let len = h.dims()[dim];
            true_out[slot] = conv_out_len(len, k, s, p);
            let extra = (s - (len + 2 * p - k) % s) % s;
            if extra > 0 {
                let mut zdims = h.dims().to_vec();
                zdims[dim] = extra;
                let z = Tensor::zeros(zdims, h.dtype(), h.device())?;
                h = Tensor::cat(&[&h, &z], dim)?;
            }
        }
        let mut y = h.contiguous()?.conv2d(&self.w, p, s, 1, 1)?;
        for (slot, dim) in [2usize, 3].into_iter().enumerate() {
            if y.dims()[dim] > true_out[slot] {
                y = y.narrow(dim, 0, true_out[slot])?;
            }
        }
        match &self.b {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, self.out_channels, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Every `stride`-th slice along `dim`, starting at 0.
#[cfg(test)]
fn subsample_dim(x: &Tensor, dim: usize, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let dims = x.dims().to_vec();
    let len = dims[dim];
    let pad = (stride - len % stride) % stride;
    let mut h = x.clone();
    if pad > 0 {
        let mut zdims = dims.clone();
        zdims[dim] = pad;
        let z = Tensor::zeros(zdims, x.dtype(), x.device())?;
        h = Tensor::cat(&[&h, &z], dim)?;
    }
    let mut grouped = dims.clone();
    grouped[dim] = (len + pad) / stride;
    grouped.insert(dim + 1, stride);
    let h = h.contiguous()?.reshape(grouped)?;
    Ok(h.narrow(dim + 1, 0, 1)?.squeeze(dim + 1)?)
}

/// Output length of a 1-D convolution: `floor((len + 2p - k) / s) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - kernel) / stride + 1
}

pub struct LayerNorm {
    g: Tensor,
    b: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let g = ps.var(&format!("{name}.g"), &[dim], Init::Ones)?;
        let b = ps.var(&format!("{name}.b"), &[dim], Init::Zeros)?;
        Ok(Self { g, b, eps: 1e-5 })
    }

    /// Normalize over the last dimension.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.g)?.broadcast_add(&self.b)?)
    }
}

/// Gated recurrent layer; returns the final hidden state.
pub struct Gru {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl Gru {
    pub fn new(ps: &mut ParamStore, name: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: ps.var(&format!("{name}.w_ih"), &[3 * hidden, in_dim], Init::FanIn(in_dim))?,
            w_hh: ps.var(&format!("{name}.w_hh"), &[3 * hidden, hidden], Init::FanIn(hidden))?,
            b_ih: ps.var(&format!("{name}.b_ih"), &[3 * hidden], Init::FanIn(in_dim))?,
            b_hh: ps.var(&format!("{name}.b_hh"), &[3 * hidden], Init::FanIn(hidden))?,
            hidden,
        })
    }

    /// `(B, T, in_dim) -> (B, hidden)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h0 = Tensor::zeros((b, self.hidden), x.dtype(), x.device())?;
        let mut h = h0;
        let hd = self.hidden;
        for step in 0..t {
            let xt = x.narrow(1, step, 1)?.squeeze(1)?;
            let gi = xt.broadcast_matmul(&self.w_ih.t()?)?.broadcast_add(&self.b_ih)?;
            let gh = h.broadcast_matmul(&self.w_hh.t()?)?.broadcast_add(&self.b_hh)?;
            let r = sigmoid(&(gi.narrow(1, 0, hd)? + gh.narrow(1, 0, hd)?)?)?;
            let z = sigmoid(&(gi.narrow(1, hd, hd)? + gh.narrow(1, hd, hd)?)?)?;
            let n = (gi.narrow(1, 2 * hd, hd)? + (r * gh.narrow(1, 2 * hd, hd)?)?)?.tanh()?;
            h = ((&n - (&z * &n)?)? + (&z * &h)?)?;
        }
        Ok(h)
    }
}

/// One direction of a long short-term memory layer; returns the full output
/// sequence in original time order.
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(ps: &mut ParamStore, name: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: ps.var(&format!("{name}.w_ih"), &[4 * hidden, in_dim], Init::FanIn(in_dim))?,
            w_hh: ps.var(&format!("{name}.w_hh"), &[4 * hidden, hidden], Init::FanIn(hidden))?,
            b_ih: ps.var(&format!("{name}.b_ih"), &[4 * hidden], Init::FanIn(in_dim))?,
            b_hh: ps.var(&format!("{name}.b_hh"), &[4 * hidden], Init::FanIn(hidden))?,
            hidden,
        })
    }

    /// `(B, T, in_dim) -> (B, T, hidden)`; `reverse` scans right to left.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let hd = self.hidden;
        let mut h = Tensor::zeros((b, hd), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outs: Vec<Tensor> = Vec::with_capacity(t);
        for i in 0..t {
            let step = if reverse { t - 1 - i } else { i };
            let xt = x.narrow(1, step, 1)?.squeeze(1)?;
            let gates = (xt.broadcast_matmul(&self.w_ih.t()?)?.broadcast_add(&self.b_ih)?
                + h.broadcast_matmul(&self.w_hh.t()?)?.broadcast_add(&self.b_hh)?)?;
            let i_g = sigmoid(&gates.narrow(1, 0, hd)?)?;
            let f_g = sigmoid(&gates.narrow(1, hd, hd)?)?;
            let g_g = gates.narrow(1, 2 * hd, hd)?.tanh()?;
            let o_g = sigmoid(&gates.narrow(1, 3 * hd, hd)?)?;
            c = ((&f_g * &c)? + (&i_g * &g_g)?)?;
            h = (&o_g * c.tanh()?)?;
            outs.push(h.unsqueeze(1)?);
        }
        if reverse {
            outs.reverse();
        }
        Ok(Tensor::cat(&outs, 1)?)
    }
}

/// Stacked bidirectional LSTM with an output projection.
pub struct BLstm {
    layers: Vec<(Lstm, Lstm)>,
    proj: Linear,
}

impl BLstm {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let d_in = if l == 0 { in_dim } else { 2 * hidden };
            layers.push((
                Lstm::new(ps, &format!("{name}.l{l}.fwd"), d_in, hidden)?,
                Lstm::new(ps, &format!("{name}.l{l}.bwd"), d_in, hidden)?,
            ));
        }
        let proj = Linear::new(ps, &format!("{name}.proj"), 2 * hidden, out_dim, true)?;
        Ok(Self { layers, proj })
    }

    /// `(B, T, in_dim) -> (B, T, out_dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(&h, false)?;
            let b = bwd.forward(&h, true)?;
            h = Tensor::cat(&[f, b], 2)?;
        }
        self.proj.forward(&h)
    }
}

/// Mean-pool time by `factor`; `(B, C, T) -> (B, C, T/factor)`.
pub fn avg_pool_time(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, t) = x.dims3()?;
    if t % factor != 0 {
        return Err(shape_err(format!("pool factor {factor} does not divide length {t}")));
    }
    Ok(x.reshape((b, c, t / factor, factor))?.mean(3)?)
}

/// Insert `factor - 1` zeros after each time step; `(B, C, T) -> (B, C, T*factor)`.
pub fn zero_stuff(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, t) = x.dims3()?;
    let zeros = Tensor::zeros((b, c, t, factor - 1), x.dtype(), x.device())?;
    Ok(Tensor::cat(&[x.unsqueeze(3)?, zeros], 3)?.reshape((b, c, t * factor))?)
}

/// Replicate each time step `factor` times; `(B, C, T) -> (B, C, T*factor)`.
pub fn repeat_frames(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, t) = x.dims3()?;
    Ok(x
        .unsqueeze(3)?
        .broadcast_as((b, c, t, factor))?
        .contiguous()?
        .reshape((b, c, t * factor))?)
}

fn down_conv_geometry(factor: usize) -> (usize, usize) {
    // (kernel, padding) such that stride = factor maps T to exactly T/factor.
    if factor == 1 {
        (1, 0)
    } else {
        (2 * factor, factor / 2)
    }
}

fn up_conv_geometry(factor: usize) -> (usize, usize) {
    // Kernel over the zero-stuffed signal; odd so length is preserved.
    (2 * factor - 1, factor - 1)
}

/// Downsampling stage combining a strided convolution with average pooling,
/// merged by sum and a pointwise mixing convolution. Channel count is
/// preserved; channel changes belong to the surrounding conv blocks.
pub struct HybridDown {
    pub factor: usize,
    conv: Conv1d,
    mix: Conv1d,
}

impl HybridDown {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, factor: usize) -> Result<Self> {
        assert!(factor >= 1);
        let (k, p) = down_conv_geometry(factor);
        Ok(Self {
            factor,
            conv: Conv1d::new(ps, &format!("{name}.conv"), channels, channels, k, factor, p, 1)?,
            mix: Conv1d::new(ps, &format!("{name}.mix"), channels, channels, 1, 1, 0, 1)?,
        })
    }

    /// `(B, C, T) -> (B, C, T/factor)`; the factor must divide T.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, t) = x.dims3()?;
        if t % self.factor != 0 {
            return Err(shape_err(format!(
                "downsample factor {} does not divide length {t}",
                self.factor
            )));
        }
        let conv_path = self.conv.forward(x)?;
        let pool_path = avg_pool_time(x, self.factor)?;
        self.mix.forward(&(conv_path + pool_path)?)
    }
}

/// Ablation counterpart of `HybridDown`: the strided convolution alone.
pub struct PlainDown {
    pub factor: usize,
    conv: Conv1d,
}

impl PlainDown {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, factor: usize) -> Result<Self> {
        let (k, p) = down_conv_geometry(factor);
        Ok(Self {
            factor,
            conv: Conv1d::new(ps, &format!("{name}.conv"), channels, channels, k, factor, p, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, t) = x.dims3()?;
        if t % self.factor != 0 {
            return Err(shape_err(format!(
                "downsample factor {} does not divide length {t}",
                self.factor
            )));
        }
        self.conv.forward(x)
    }
}

/// Upsampling stage combining a transposed convolution (zero-stuff + conv)
/// with frame replication, merged like `HybridDown`.
pub struct HybridUp {
    pub factor: usize,
    conv: Conv1d,
    mix: Conv1d,
}

impl HybridUp {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, factor: usize) -> Result<Self> {
        assert!(factor >= 1);
        let (k, p) = up_conv_geometry(factor);
        Ok(Self {
            factor,
            conv: Conv1d::new(ps, &format!("{name}.conv"), channels, channels, k, 1, p, 1)?,
            mix: Conv1d::new(ps, &format!("{name}.mix"), channels, channels, 1, 1, 0, 1)?,
        })
    }

    /// `(B, C, T) -> (B, C, T*factor)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let conv_path = self.conv.forward(&zero_stuff(x, self.factor)?)?;
        let rep_path = repeat_frames(x, self.factor)?;
        self.mix.forward(&(conv_path + rep_path)?)
    }
}

/// Ablation counterpart of `HybridUp`: the transposed convolution alone.
pub struct PlainUp {
    pub factor: usize,
    conv: Conv1d,
}

impl PlainUp {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, factor: usize) -> Result<Self> {
        let (k, p) = up_conv_geometry(factor);
        Ok(Self {
            factor,
            conv: Conv1d::new(ps, &format!("{name}.conv"), channels, channels, k, 1, p, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(&zero_stuff(x, self.factor)?)
    }
}

/// Residual unit: kernel-3 then kernel-1 convolution with a skip connection.
pub struct ResidualUnit {
    c3: Conv1d,
    c1: Conv1d,
}

impl ResidualUnit {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            c3: Conv1d::new(ps, &format!("{name}.c3"), channels, channels, 3, 1, 1, 1)?,
            c1: Conv1d::new(ps, &format!("{name}.c1"), channels, channels, 1, 1, 0, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.c3.forward(x)?.elu(1.0)?;
        let h = self.c1.forward(&h)?;
        Ok((x + h)?)
    }
}

/// Residual bottleneck: downsample, model locally, upsample, add back.
/// The final convolution starts at zero, so a freshly built block is the
/// exact identity.
pub struct ResampleBlock {
    pub factor: usize,
    down: Conv1d,
    units: Vec<ResidualUnit>,
    up: Conv1d,
}

impl ResampleBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        factor: usize,
        n_units: usize,
    ) -> Result<Self> {
        let (dk, dp) = down_conv_geometry(factor);
        let down =
            Conv1d::new(ps, &format!("{name}.down"), channels, channels, dk, factor, dp, 1)?;
        let units = (0..n_units)
            .map(|i| ResidualUnit::new(ps, &format!("{name}.unit{i}"), channels))
            .collect::<Result<Vec<_>>>()?;
        let (uk, up_pad) = up_conv_geometry(factor);
        // Zero init makes the whole inner path vanish at start.
        let w = ps.var(&format!("{name}.up.w"), &[channels, channels, uk], Init::Zeros)?;
        let b = ps.var(&format!("{name}.up.b"), &[channels], Init::Zeros)?;
        let up = Conv1d { w, b: Some(b), stride: 1, padding: up_pad, groups: 1, out_channels: channels };
        Ok(Self { factor, down, units, up })
    }

    /// `(B, C, T) -> (B, C, T)`; the factor must divide T.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, t) = x.dims3()?;
        if t % self.factor != 0 {
            return Err(shape_err(format!(
                "resample factor {} does not divide length {t}",
                self.factor
            )));
        }
        let mut h = self.down.forward(x)?.elu(1.0)?;
        for unit in &self.units {
            h = unit.forward(&h)?;
        }
        let h = self.up.forward(&zero_stuff(&h, self.factor)?)?;
        Ok((x + h)?)
    }

    /// Inner path alone (no residual), for diagnostics.
    pub fn inner(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.down.forward(x)?.elu(1.0)?;
        for unit in &self.units {
            h = unit.forward(&h)?;
        }
        self.up.forward(&zero_stuff(&h, self.factor)?)
    }
}

struct FeedForward {
    norm: LayerNorm,
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, mult: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), dim)?,
            lin1: Linear::new(ps, &format!("{name}.lin1"), dim, dim * mult, true)?,
            lin2: Linear::new(ps, &format!("{name}.lin2"), dim * mult, dim, true)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.lin1.forward(&self.norm.forward(x)?)?.silu()?;
        self.lin2.forward(&h)
    }
}

struct SelfAttention {
    norm: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl SelfAttention {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        assert!(dim % heads == 0, "attention dim {dim} not divisible by {heads} heads");
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), dim)?,
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, true)?,
            o: Linear::new(ps, &format!("{name}.o"), dim, dim, true)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let n = self.norm.forward(x)?;
        let split = |t_: Tensor| -> Result<Tensor> {
            Ok(t_.reshape((b, t, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(&n)?)?;
        let k = split(self.k.forward(&n)?)?;
        let v = split(self.v.forward(&n)?)?;
        let scale = 1.0 / (hd as f64).sqrt();
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        let attn = softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        self.o.forward(&out)
    }
}

struct ConvModule {
    norm: LayerNorm,
    lin_in: Linear,
    dw: Conv1d,
    post_norm: LayerNorm,
    lin_out: Linear,
    dim: usize,
}

impl ConvModule {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), dim)?,
            lin_in: Linear::new(ps, &format!("{name}.lin_in"), dim, 2 * dim, true)?,
            dw: Conv1d::new(
                ps,
                &format!("{name}.dw"),
                dim,
                dim,
                kernel,
                1,
                kernel / 2,
                dim,
            )?,
            post_norm: LayerNorm::new(ps, &format!("{name}.post_norm"), dim)?,
            lin_out: Linear::new(ps, &format!("{name}.lin_out"), dim, dim, true)?,
            dim,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.lin_in.forward(&self.norm.forward(x)?)?;
        // Gated linear unit over the doubled feature dim.
        let a = h.narrow(D::Minus1, 0, self.dim)?;
        let g = h.narrow(D::Minus1, self.dim, self.dim)?;
        let h = (a * sigmoid(&g)?)?;
        let h = self.dw.forward(&h.transpose(1, 2)?.contiguous()?)?;
        let h = h.transpose(1, 2)?.contiguous()?;
        let h = self.post_norm.forward(&h)?.silu()?;
        self.lin_out.forward(&h)
    }
}

/// Macaron-style block: half-weighted feed-forwards around attention and a
/// depthwise-convolution module.
pub struct ConformerBlock {
    ffn1: FeedForward,
    attn: SelfAttention,
    conv: ConvModule,
    ffn2: FeedForward,
    final_norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_mult: usize,
        conv_kernel: usize,
    ) -> Result<Self> {
        Ok(Self {
            ffn1: FeedForward::new(ps, &format!("{name}.ffn1"), dim, ffn_mult)?,
            attn: SelfAttention::new(ps, &format!("{name}.attn"), dim, heads)?,
            conv: ConvModule::new(ps, &format!("{name}.conv"), dim, conv_kernel)?,
            ffn2: FeedForward::new(ps, &format!("{name}.ffn2"), dim, ffn_mult)?,
            final_norm: LayerNorm::new(ps, &format!("{name}.final_norm"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + (self.ffn1.forward(x)? * 0.5)?)?;
        let x = (&x + self.attn.forward(&x)?)?;
        let x = (&x + self.conv.forward(&x)?)?;
        let x = (&x + (self.ffn2.forward(&x)? * 0.5)?)?;
        self.final_norm.forward(&x)
    }
}

/// Absolute sinusoidal position encoding, `(t_len, dim)`.
pub fn sinusoidal_pe(t_len: usize, dim: usize, device: &candle_core::Device) -> Result<Tensor> {
    let mut values = Vec::with_capacity(t_len * dim);
    for t in 0..t_len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            values.push(if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32);
        }
    }
    Ok(Tensor::from_vec(values, (t_len, dim), device)?)
}

/// Conformer stack with input/output projections and position encoding at
/// entry.
pub struct ConformerStack {
    proj_in: Linear,
    blocks: Vec<ConformerBlock>,
    proj_out: Linear,
    dim: usize,
}

impl ConformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        io_dim: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        ffn_mult: usize,
        conv_kernel: usize,
    ) -> Result<Self> {
        let proj_in = Linear::new(ps, &format!("{name}.proj_in"), io_dim, dim, true)?;
        let blocks = (0..layers)
            .map(|i| ConformerBlock::new(ps, &format!("{name}.block{i}"), dim, heads, ffn_mult, conv_kernel))
            .collect::<Result<Vec<_>>>()?;
        let proj_out = Linear::new(ps, &format!("{name}.proj_out"), dim, io_dim, true)?;
        Ok(Self { proj_in, blocks, proj_out, dim })
    }

    /// `(B, T, io_dim) -> (B, T, io_dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let mut h = self.proj_in.forward(x)?;
        let pe = sinusoidal_pe(t, self.dim, h.device())?;
        h = h.broadcast_add(&pe.unsqueeze(0)?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        self.proj_out.forward(&h)
    }
}

/// Global-embedding encoder: a 2-D conv stack over the mel, a recurrent
/// summary, and a projection. Works for any frame count; the caller enforces
/// the configured reference length where the contract requires it.
pub struct ReferenceEncoder {
    convs: Vec<Conv2d>,
    gru: Gru,
    proj: Linear,
}

impl ReferenceEncoder {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: &[usize],
        n_mels: usize,
        gru_hidden: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(channels.len());
        let mut in_c = 1;
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv2d::new(ps, &format!("{name}.conv{i}"), in_c, c, 3, 2, 1)?);
            in_c = c;
        }
        let mut mel_w = n_mels;
        for _ in channels {
            mel_w = mel_w.div_ceil(2);
        }
        let gru_in = in_c * mel_w;
        let gru = Gru::new(ps, &format!("{name}.gru"), gru_in, gru_hidden)?;
        let proj = Linear::new(ps, &format!("{name}.proj"), gru_hidden, out_dim, true)?;
        Ok(Self { convs, gru, proj })
    }

    /// `(B, T, n_mels) -> (B, out_dim)`.
    pub fn forward(&self, mel: &Tensor) -> Result<Tensor> {
        let mut h = mel.unsqueeze(1)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.elu(1.0)?;
        }
        let (b, c, t, w) = h.dims4()?;
        let h = h.transpose(1, 2)?.contiguous()?.reshape((b, t, c * w))?;
        let h = self.gru.forward(&h)?;
        self.proj.forward(&h)
    }
}

/// Discriminator geometry: four kernel-5 stage widths, one kernel-3 width,
/// and the stride of the kernel-5 stages. The final kernel-3 layer always
/// maps to one logit channel, for six conv layers total.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DiscriminatorConfig {
    pub k5_widths: [usize; 4],
    pub k3_width: usize,
    pub k5_stride: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { k5_widths: [32, 64, 128, 256], k3_width: 256, k5_stride: 2 }
    }
}

impl DiscriminatorConfig {
    /// Narrow widths for CPU-scale training; same layer structure.
    pub fn desk() -> Self {
        Self { k5_widths: [4, 8, 16, 32], k3_width: 32, k5_stride: 2 }
    }

    /// Patch-logit spatial size for a `(frames, mels)` input.
    pub fn output_size(&self, frames: usize, mels: usize) -> (usize, usize) {
        let mut h = frames;
        let mut w = mels;
        for _ in 0..4 {
            h = conv_out_len(h, 5, self.k5_stride, 2);
            w = conv_out_len(w, 5, self.k5_stride, 2);
        }
        // Kernel-3 layers run at stride 1, padding 1: size-preserving.
        (h, w)
    }
}

/// Patch discriminator over mel spectrograms: 2-D logits, no global pooling.
pub struct Discriminator {
    convs: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &DiscriminatorConfig) -> Result<Self> {
        let mut convs = Vec::with_capacity(6);
        let mut in_c = 1;
        for (i, &c) in cfg.k5_widths.iter().enumerate() {
            convs.push(Conv2d::new(ps, &format!("{name}.conv{i}"), in_c, c, 5, cfg.k5_stride, 2)?);
            in_c = c;
        }
        convs.push(Conv2d::new(ps, &format!("{name}.conv4"), in_c, cfg.k3_width, 3, 1, 1)?);
        convs.push(Conv2d::new(ps, &format!("{name}.conv5"), cfg.k3_width, 1, 3, 1, 1)?);
        Ok(Self { convs })
    }

    /// `(B, T, n_mels) -> (B, 1, T', M')` patch logits.
    pub fn forward(&self, mel: &Tensor) -> Result<Tensor> {
        let mut h = mel.unsqueeze(1)?;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i < last {
                h = leaky_relu(&h, 0.2)?;
            }
        }
        Ok(h)
    }
}
