use crate::error::{Error, Result};

use super::tensor::{out_len, window_range, Element, Tensor4};

/// 2-D cross-correlation with square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    /// out_c * in_c * k * k, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    cache: Option<Tensor4<T>>,
}

impl<T: Element> Conv2d<T> {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            padding,
            weight: vec![T::zero(); out_c * in_c * k * k],
            bias: vec![T::zero(); out_c],
            grad_weight: vec![T::zero(); out_c * in_c * k * k],
            grad_bias: vec![T::zero(); out_c],
            cache: None,
        }
    }

    pub fn out_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_len(h, self.k, self.stride, self.padding);
        let ow = out_len(w, self.k, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::Shape(format!(
                "input {h}x{w} too small for kernel {} stride {} padding {}",
                self.k, self.stride, self.padding
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        if x.c != self.in_c {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_c, x.c
            )));
        }
        let (oh, ow) = self.out_shape(x.h, x.w)?;
        let mut out = Tensor4::zeros(x.n, self.out_c, oh, ow);
        let mut acc = vec![0.0f64; oh * ow];
        for n in 0..x.n {
            for oc in 0..self.out_c {
                acc.fill(self.bias[oc].to64());
                for ic in 0..self.in_c {
                    let xp = x.plane(n, ic);
                    for ky in 0..self.k {
                        let (oy0, oy1) = window_range(oh, self.stride, ky, self.padding, x.h);
                        for kx in 0..self.k {
                            let wv = self.weight
                                [((oc * self.in_c + ic) * self.k + ky) * self.k + kx]
                                .to64();
                            if wv == 0.0 {
                                continue;
                            }
                            let (ox0, ox1) = window_range(ow, self.stride, kx, self.padding, x.w);
                            for oy in oy0..oy1 {
                                let iy = oy * self.stride + ky - self.padding;
                                let xrow = xp + iy * x.w;
                                let arow = oy * ow;
                                for ox in ox0..ox1 {
                                    let ix = ox * self.stride + kx - self.padding;
                                    acc[arow + ox] += wv * x.data[xrow + ix].to64();
                                }
                            }
                        }
                    }
                }
                let op = out.plane(n, oc);
                for (i, &a) in acc.iter().enumerate() {
                    out.data[op + i] = T::from64(a);
                }
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        let x = self.cache.take().expect("conv backward without forward");
        let (oh, ow) = (grad_out.h, grad_out.w);
        let mut grad_x = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut gx_acc = vec![0.0f64; x.h * x.w];
        // bias gradient
        for oc in 0..self.out_c {
            let mut s = 0.0f64;
            for n in 0..x.n {
                let gp = grad_out.plane(n, oc);
                for i in 0..oh * ow {
                    s += grad_out.data[gp + i].to64();
                }
            }
            self.grad_bias[oc] += T::from64(s);
        }
        // weight gradient
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                for ky in 0..self.k {
                    let (oy0, oy1) = window_range(oh, self.stride, ky, self.padding, x.h);
                    for kx in 0..self.k {
                        let (ox0, ox1) = window_range(ow, self.stride, kx, self.padding, x.w);
                        let mut s = 0.0f64;
                        for n in 0..x.n {
                            let gp = grad_out.plane(n, oc);
                            let xp = x.plane(n, ic);
                            for oy in oy0..oy1 {
                                let iy = oy * self.stride + ky - self.padding;
                                let grow = gp + oy * ow;
                                let xrow = xp + iy * x.w;
                                for ox in ox0..ox1 {
                                    let ix = ox * self.stride + kx - self.padding;
                                    s += grad_out.data[grow + ox].to64() * x.data[xrow + ix].to64();
                                }
                            }
                        }
                        self.grad_weight[((oc * self.in_c + ic) * self.k + ky) * self.k + kx] +=
                            T::from64(s);
                    }
                }
            }
        }
        // input gradient
        for n in 0..x.n {
            for ic in 0..self.in_c {
                gx_acc.fill(0.0);
                for oc in 0..self.out_c {
                    let gp = grad_out.plane(n, oc);
                    for ky in 0..self.k {
                        let (oy0, oy1) = window_range(oh, self.stride, ky, self.padding, x.h);
                        for kx in 0..self.k {
                            let wv = self.weight
                                [((oc * self.in_c + ic) * self.k + ky) * self.k + kx]
                                .to64();
                            if wv == 0.0 {
                                continue;
                            }
                            let (ox0, ox1) = window_range(ow, self.stride, kx, self.padding, x.w);
                            for oy in oy0..oy1 {
                                let iy = oy * self.stride + ky - self.padding;
                                let grow = gp + oy * ow;
                                let xrow = iy * x.w;
                                for ox in ox0..ox1 {
                                    let ix = ox * self.stride + kx - self.padding;
                                    gx_acc[xrow + ix] += wv * grad_out.data[grow + ox].to64();
                                }
                            }
                        }
                    }
                }
                let xp = grad_x.plane(n, ic);
                for (i, &g) in gx_acc.iter().enumerate() {
                    grad_x.data[xp + i] = T::from64(g);
                }
            }
        }
        grad_x
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    x_hat: Tensor4<T>,
    inv_std: Vec<f64>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        if x.c != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels, x.c
            )));
        }
        let m = (x.n * x.h * x.w) as f64;
        let plane = x.h * x.w;
        let mut out = Tensor4::zeros(x.n, x.c, x.h, x.w);
        if train {
            let mut x_hat = Tensor4::zeros(x.n, x.c, x.h, x.w);
            let mut inv_std = vec![0.0f64; x.c];
            for c in 0..x.c {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for n in 0..x.n {
                    let p = x.plane(n, c);
                    for i in 0..plane {
                        let v = x.data[p + i].to64();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(0.0);
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[c] = istd;
                self.running_mean[c] = T::from64(
                    (1.0 - self.momentum) * self.running_mean[c].to64() + self.momentum * mean,
                );
                self.running_var[c] = T::from64(
                    (1.0 - self.momentum) * self.running_var[c].to64() + self.momentum * var,
                );
                let g = self.gamma[c].to64();
                let b = self.beta[c].to64();
                for n in 0..x.n {
                    let p = x.plane(n, c);
                    for i in 0..plane {
                        let xh = (x.data[p + i].to64() - mean) * istd;
                        x_hat.data[p + i] = T::from64(xh);
                        out.data[p + i] = T::from64(g * xh + b);
                    }
                }
            }
            self.cache = Some(BnCache { x_hat, inv_std });
        } else {
            for c in 0..x.c {
                let mean = self.running_mean[c].to64();
                let istd = 1.0 / (self.running_var[c].to64().max(0.0) + self.eps).sqrt();
                let g = self.gamma[c].to64();
                let b = self.beta[c].to64();
                for n in 0..x.n {
                    let p = x.plane(n, c);
                    for i in 0..plane {
                        out.data[p + i] =
                            T::from64(g * (x.data[p + i].to64() - mean) * istd + b);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let x_hat = &cache.x_hat;
        let m = (grad_out.n * grad_out.h * grad_out.w) as f64;
        let plane = grad_out.h * grad_out.w;
        let mut grad_x = Tensor4::zeros(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
        for c in 0..grad_out.c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for n in 0..grad_out.n {
                let p = grad_out.plane(n, c);
                for i in 0..plane {
                    let g = grad_out.data[p + i].to64();
                    sum_g += g;
                    sum_gx += g * x_hat.data[p + i].to64();
                }
            }
            self.grad_beta[c] += T::from64(sum_g);
            self.grad_gamma[c] += T::from64(sum_gx);
            let scale = self.gamma[c].to64() * cache.inv_std[c] / m;
            for n in 0..grad_out.n {
                let p = grad_out.plane(n, c);
                for i in 0..plane {
                    let g = grad_out.data[p + i].to64();
                    let xh = x_hat.data[p + i].to64();
                    grad_x.data[p + i] = T::from64(scale * (m * g - sum_g - xh * sum_gx));
                }
            }
        }
        grad_x
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.iter_mut().for_each(|g| *g = T::zero());
        self.grad_beta.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Elementwise max(x, 0) with cached mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward<T: Element>(&mut self, x: &Tensor4<T>, train: bool) -> Tensor4<T> {
        let mut out = x.clone();
        let mut mask = vec![false; x.data.len()];
        for (i, v) in out.data.iter_mut().enumerate() {
            if *v > T::zero() {
                mask[i] = true;
            } else {
                *v = T::zero();
            }
        }
        if train {
            self.mask = Some(mask);
        }
        out
    }

    pub fn backward<T: Element>(&mut self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        let mask = self.mask.take().expect("relu backward without forward");
        let mut grad = grad_out.clone();
        for (g, &keep) in grad.data.iter_mut().zip(&mask) {
            if !keep {
                *g = T::zero();
            }
        }
        grad
    }
}

/// Max pooling; padded positions never win.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<usize>, usize, usize, usize, usize)>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            k,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn forward<T: Element>(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let oh = out_len(x.h, self.k, self.stride, self.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Shape("input too small for maxpool".into()))?;
        let ow = out_len(x.w, self.k, self.stride, self.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Shape("input too small for maxpool".into()))?;
        let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
        let mut argmax = vec![0usize; out.data.len()];
        for n in 0..x.n {
            for c in 0..x.c {
                let xp = x.plane(n, c);
                let op = out.plane(n, c);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_i = usize::MAX;
                        for ky in 0..self.k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy as usize >= x.h {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix as usize >= x.w {
                                    continue;
                                }
                                let i = xp + iy as usize * x.w + ix as usize;
                                if x.data[i] > best {
                                    best = x.data[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = op + oy * ow + ox;
                        out.data[o] = best;
                        argmax[o] = best_i;
                    }
                }
            }
        }
        if train {
            self.cache = Some((argmax, x.n, x.c, x.h, x.w));
        }
        Ok(out)
    }

    pub fn backward<T: Element>(&mut self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        let (argmax, n, c, h, w) = self.cache.take().expect("maxpool backward without forward");
        let mut grad = Tensor4::zeros(n, c, h, w);
        for (o, &src) in argmax.iter().enumerate() {
            grad.data[src] += grad_out.data[o];
        }
        grad
    }
}

/// Mean over the spatial dimensions: (n, c, h, w) -> (n, c, 1, 1).
pub fn global_avg_pool<T: Element>(x: &Tensor4<T>) -> Tensor4<T> {
    let plane = x.h * x.w;
    let mut out = Tensor4::zeros(x.n, x.c, 1, 1);
    for n in 0..x.n {
        for c in 0..x.c {
            let p = x.plane(n, c);
            let mut s = 0.0f64;
            for i in 0..plane {
                s += x.data[p + i].to64();
            }
            out.data[n * x.c + c] = T::from64(s / plane as f64);
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Element>(
    grad_out: &Tensor4<T>,
    h: usize,
    w: usize,
) -> Tensor4<T> {
    let mut grad = Tensor4::zeros(grad_out.n, grad_out.c, h, w);
    let plane = (h * w) as f64;
    for n in 0..grad_out.n {
        for c in 0..grad_out.c {
            let g = T::from64(grad_out.data[n * grad_out.c + c].to64() / plane);
            let p = grad.plane(n, c);
            for i in 0..h * w {
                grad.data[p + i] = g;
            }
        }
    }
    grad
}

/// Fully connected layer on (batch, in_dim) rows.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    cache: Option<Vec<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
            grad_weight: vec![T::zero(); out_dim * in_dim],
            grad_bias: vec![T::zero(); out_dim],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &[T], batch: usize, train: bool) -> Vec<T> {
        assert_eq!(x.len(), batch * self.in_dim);
        let mut out = vec![T::zero(); batch * self.out_dim];
        for b in 0..batch {
            let row = &x[b * self.in_dim..(b + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let wrow = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let mut s = self.bias[o].to64();
                for i in 0..self.in_dim {
                    s += wrow[i].to64() * row[i].to64();
                }
                out[b * self.out_dim + o] = T::from64(s);
            }
        }
        if train {
            self.cache = Some(x.to_vec());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &[T], batch: usize) -> Vec<T> {
        let x = self.cache.take().expect("linear backward without forward");
        let mut grad_x = vec![T::zero(); batch * self.in_dim];
        for b in 0..batch {
            let grow = &grad_out[b * self.out_dim..(b + 1) * self.out_dim];
            let xrow = &x[b * self.in_dim..(b + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let g = grow[o].to64();
                self.grad_bias[o] += T::from64(g);
                for i in 0..self.in_dim {
                    self.grad_weight[o * self.in_dim + i] += T::from64(g * xrow[i].to64());
                    grad_x[b * self.in_dim + i] +=
                        T::from64(g * self.weight[o * self.in_dim + i].to64());
                }
            }
        }
        grad_x
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }
}
