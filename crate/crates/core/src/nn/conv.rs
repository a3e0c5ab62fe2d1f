use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{join, visit_param, Param, Slot, View, Visit};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Conv2dConfig {
    /// Stride-1, "same"-padded convolution without bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride: 1, padding: kernel / 2, groups: 1, bias: false }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn validate(&self) -> Result<()> {
        let c = self;
        if c.kernel == 0 || c.stride == 0 || c.groups == 0 {
            return Err(Error::Config(format!("degenerate convolution {c:?}")));
        }
        if c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0 {
            return Err(Error::Config(format!(
                "channels {}→{} not divisible by {} groups",
                c.in_channels, c.out_channels, c.groups
            )));
        }
        Ok(())
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel]
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 2 / fan_out)`, zero bias. The EfficientNet reference initialization.
    KaimingNormalFanOut,
    /// `U(±1/sqrt(fan_in))` for weight and bias, the usual framework default.
    UniformFanIn,
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    cfg: Conv2dConfig,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(cfg: Conv2dConfig, init: Init, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let shape = cfg.weight_shape();
        let numel: usize = shape.iter().product();
        let receptive = cfg.kernel * cfg.kernel;
        let fan_in = cfg.in_channels / cfg.groups * receptive;
        let fan_out = cfg.out_channels / cfg.groups * receptive;
        let (weight, bias) = match init {
            Init::KaimingNormalFanOut => {
                let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("finite std");
                let w = (0..numel).map(|_| T::lit(normal.sample(rng))).collect();
                (w, vec![T::zero(); cfg.out_channels])
            }
            Init::UniformFanIn => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                let w = (0..numel).map(|_| T::lit(uniform.sample(rng))).collect();
                let b = (0..cfg.out_channels).map(|_| T::lit(uniform.sample(rng))).collect();
                (w, b)
            }
        };
        Ok(Self {
            cfg,
            weight: Param::new(shape, weight),
            bias: cfg.bias.then(|| Param::new(vec![cfg.out_channels], bias)),
            input: None,
        })
    }

    pub fn config(&self) -> &Conv2dConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {:?}",
                self.cfg.in_channels,
                x.shape()
            )));
        }
        if x.height() + 2 * self.cfg.padding < self.cfg.kernel
            || x.width() + 2 * self.cfg.padding < self.cfg.kernel
        {
            return Err(Error::Shape(format!(
                "input {:?} smaller than kernel {}",
                x.shape(),
                self.cfg.kernel
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let cfg = &self.cfg;
        let [n, _, h, w] = x.shape();
        let (ho, wo) = (cfg.out_size(h), cfg.out_size(w));
        let mut out = Tensor::zeros([n, cfg.out_channels, ho, wo]);
        if cfg.is_depthwise() {
            for ni in 0..n {
                for c in 0..cfg.in_channels {
                    let k = &self.weight.value[c * cfg.kernel * cfg.kernel..][..cfg.kernel * cfg.kernel];
                    depthwise_plane(cfg, k, x.channel(ni, c), (h, w), out.channel_mut(ni, c), (ho, wo));
                }
            }
        } else {
            let cig = cfg.in_channels / cfg.groups;
            let cog = cfg.out_channels / cfg.groups;
            let kdim = cig * cfg.kernel * cfg.kernel;
            let mut col = Vec::new();
            for ni in 0..n {
                for g in 0..cfg.groups {
                    let xg = &x.sample(ni)[g * cig * h * w..(g + 1) * cig * h * w];
                    let wg = &self.weight.value[g * cog * kdim..(g + 1) * cog * kdim];
                    let og = &mut out.sample_mut(ni)[g * cog * ho * wo..(g + 1) * cog * ho * wo];
                    let b = if cfg.is_pointwise() {
                        Mat::new(xg, cig, h * w)
                    } else {
                        im2col(cfg, xg, cig, (h, w), (ho, wo), &mut col);
                        Mat::new(&col, kdim, ho * wo)
                    };
                    gemm(T::one(), Mat::new(wg, cog, kdim), b, T::zero(), og);
                }
            }
        }
        if let Some(bias) = &self.bias {
            for ni in 0..n {
                for (c, &b) in bias.value.iter().enumerate() {
                    out.channel_mut(ni, c).iter_mut().for_each(|v| *v += b);
                }
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward(&x)?;
        self.input = Some(x);
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::Contract("convolution backward without cached forward".into()))?;
        let cfg = self.cfg;
        let [n, _, h, w] = x.shape();
        let (ho, wo) = (cfg.out_size(h), cfg.out_size(w));
        if dy.shape() != [n, cfg.out_channels, ho, wo] {
            return Err(Error::Shape(format!(
                "convolution gradient {:?} does not match output {:?}",
                dy.shape(),
                [n, cfg.out_channels, ho, wo]
            )));
        }
        if let Some(bias) = &mut self.bias {
            for ni in 0..n {
                for (c, g) in bias.grad.iter_mut().enumerate() {
                    *g += dy.channel(ni, c).iter().copied().sum::<T>();
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        if cfg.is_depthwise() {
            let kk = cfg.kernel * cfg.kernel;
            for ni in 0..n {
                for c in 0..cfg.in_channels {
                    let k = &self.weight.value[c * kk..(c + 1) * kk];
                    let dk = &mut self.weight.grad[c * kk..(c + 1) * kk];
                    let xin = x.channel(ni, c);
                    let dxin = &mut dx.data_mut()[(ni * cfg.in_channels + c) * h * w..][..h * w];
                    depthwise_plane_backward(cfg, k, dk, xin, dxin, (h, w), dy.channel(ni, c), (ho, wo));
                }
            }
            return Ok(dx);
        }
        let cig = cfg.in_channels / cfg.groups;
        let cog = cfg.out_channels / cfg.groups;
        let kdim = cig * cfg.kernel * cfg.kernel;
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for ni in 0..n {
            for g in 0..cfg.groups {
                let xg = &x.sample(ni)[g * cig * h * w..(g + 1) * cig * h * w];
                let dyg = &dy.sample(ni)[g * cog * ho * wo..(g + 1) * cog * ho * wo];
                let wg = &self.weight.value[g * cog * kdim..(g + 1) * cog * kdim];
                let dwg = &mut self.weight.grad[g * cog * kdim..(g + 1) * cog * kdim];
                let dxg = &mut dx.sample_mut(ni)[g * cig * h * w..(g + 1) * cig * h * w];
                let dyg = Mat::new(dyg, cog, ho * wo);
                if cfg.is_pointwise() {
                    gemm(T::one(), dyg, Mat::new(xg, cig, h * w).t(), T::one(), dwg);
                    gemm(T::one(), Mat::new(wg, cog, kdim).t(), dyg, T::zero(), dxg);
                } else {
                    im2col(&cfg, xg, cig, (h, w), (ho, wo), &mut col);
                    gemm(T::one(), dyg, Mat::new(&col, kdim, ho * wo).t(), T::one(), dwg);
                    dcol.clear();
                    dcol.resize(kdim * ho * wo, T::zero());
                    gemm(T::one(), Mat::new(wg, cog, kdim).t(), dyg, T::zero(), &mut dcol);
                    col2im(&cfg, &dcol, cig, (h, w), (ho, wo), dxg);
                }
            }
        }
        Ok(dx)
    }

    pub fn cached_bytes(&self) -> usize {
        self.input.as_ref().map_or(0, Tensor::bytes)
    }
}

impl<T: Real> Visit<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        visit_param(prefix, "weight", &self.weight, f);
        if let Some(b) = &self.bias {
            visit_param(prefix, "bias", b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox*s + k - p` is in `[0, w)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    // ix = ox*stride + offset
    let lo = if offset >= 0 { 0 } else { ((-offset) as usize).div_ceil(stride) };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn depthwise_plane<T: Real>(
    cfg: &Conv2dConfig,
    kernel: &[T],
    input: &[T],
    (h, w): (usize, usize),
    out: &mut [T],
    (ho, wo): (usize, usize),
) {
    let (k, s, p) = (cfg.kernel, cfg.stride, cfg.padding as isize);
    for ky in 0..k {
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            let offx = kx as isize - p;
            let (x0, x1) = valid_range(wo, w, s, offx);
            if x0 >= x1 {
                continue;
            }
            let (y0, y1) = valid_range(ho, h, s, ky as isize - p);
            for oy in y0..y1 {
                let iy = (oy * s) as isize + ky as isize - p;
                let in_row = &input[iy as usize * w..(iy as usize + 1) * w];
                let out_row = &mut out[oy * wo..(oy + 1) * wo];
                if s == 1 {
                    let start = (x0 as isize + offx) as usize;
                    let src = &in_row[start..start + (x1 - x0)];
                    for (o, &v) in out_row[x0..x1].iter_mut().zip(src) {
                        *o += wv * v;
                    }
                } else {
                    for ox in x0..x1 {
                        out_row[ox] += wv * in_row[(ox as isize * s as isize + offx) as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_plane_backward<T: Real>(
    cfg: Conv2dConfig,
    kernel: &[T],
    dkernel: &mut [T],
    input: &[T],
    dinput: &mut [T],
    (h, w): (usize, usize),
    dy: &[T],
    (ho, wo): (usize, usize),
) {
    let (k, s, p) = (cfg.kernel, cfg.stride, cfg.padding as isize);
    for ky in 0..k {
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            let offx = kx as isize - p;
            let (x0, x1) = valid_range(wo, w, s, offx);
            if x0 >= x1 {
                continue;
            }
            let (y0, y1) = valid_range(ho, h, s, ky as isize - p);
            let mut acc = T::zero();
            for oy in y0..y1 {
                let iy = ((oy * s) as isize + ky as isize - p) as usize;
                let g_row = &dy[oy * wo..(oy + 1) * wo];
                if s == 1 {
                    let start = (x0 as isize + offx) as usize;
                    let in_row = &input[iy * w + start..iy * w + start + (x1 - x0)];
                    let din_row = &mut dinput[iy * w + start..iy * w + start + (x1 - x0)];
                    for ((&g, &v), d) in g_row[x0..x1].iter().zip(in_row).zip(din_row) {
                        acc += g * v;
                        *d += wv * g;
                    }
                } else {
                    for ox in x0..x1 {
                        let ix = (ox as isize * s as isize + offx) as usize;
                        let g = g_row[ox];
                        acc += g * input[iy * w + ix];
                        dinput[iy * w + ix] += wv * g;
                    }
                }
            }
            dkernel[ky * k + kx] += acc;
        }
    }
}

fn im2col<T: Real>(
    cfg: &Conv2dConfig,
    input: &[T],
    channels: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    col: &mut Vec<T>,
) {
    let (k, s, p) = (cfg.kernel, cfg.stride, cfg.padding as isize);
    col.clear();
    col.resize(channels * k * k * ho * wo, T::zero());
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = valid_range(ho, h, s, ky as isize - p);
            for kx in 0..k {
                let offx = kx as isize - p;
                let (x0, x1) = valid_range(wo, w, s, offx);
                let row = &mut col[((c * k + ky) * k + kx) * ho * wo..][..ho * wo];
                if x0 >= x1 {
                    continue;
                }
                for oy in y0..y1 {
                    let iy = ((oy * s) as isize + ky as isize - p) as usize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let start = iy * w + (x0 as isize + offx) as usize;
                        dst[x0..x1].copy_from_slice(&plane[start..start + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            dst[ox] = plane[iy * w + (ox as isize * s as isize + offx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(
    cfg: &Conv2dConfig,
    col: &[T],
    channels: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    out: &mut [T],
) {
    let (k, s, p) = (cfg.kernel, cfg.stride, cfg.padding as isize);
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = valid_range(ho, h, s, ky as isize - p);
            for kx in 0..k {
                let offx = kx as isize - p;
                let (x0, x1) = valid_range(wo, w, s, offx);
                if x0 >= x1 {
                    continue;
                }
                let row = &col[((c * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in y0..y1 {
                    let iy = ((oy * s) as isize + ky as isize - p) as usize;
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let start = iy * w + (x0 as isize + offx) as usize;
                        for (d, &v) in plane[start..start + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                            *d += v;
                        }
                    } else {
                        for ox in x0..x1 {
                            plane[iy * w + (ox as isize * s as isize + offx) as usize] += src[ox];
                        }
                    }
                }
            }
        }
    }
}
