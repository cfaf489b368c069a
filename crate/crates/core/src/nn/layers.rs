//! Primitive layers: convolution (grouped/depthwise via im2col), batch
//! normalization, activations, pooling, and the dense layer used by heads.

use super::{fl, Layer, Param, Scalar, TensorRole};
use ndarray::{Array2, Array4, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fill with fan-in-scaled normal values: std = sqrt(2 / fan_in).
pub(crate) fn he_normal<F: Scalar, R: Rng>(param: &mut Param<F>, fan_in: usize, rng: &mut R) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    for v in &mut param.data {
        *v = fl(normal.sample(rng));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    #[inline]
    fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (F::one() - s)
            }
        }
    }
}

#[inline]
fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Standalone activation layer.
pub struct ActLayer<F: Scalar> {
    pub kind: Activation,
    cache: Option<Array4<F>>,
}

impl<F: Scalar> ActLayer<F> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }
}

impl<F: Scalar> Layer<F> for ActLayer<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        if train {
            self.cache = Some(x.clone());
        }
        x.mapv(|v| self.kind.apply(v))
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let x = self.cache.as_ref().expect("backward without forward");
        let mut out = grad.clone();
        out.zip_mut_with(x, |g, &v| *g = *g * self.kind.derivative(v));
        out
    }

    fn visit(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {}
}

/// 2D convolution with stride, zero padding and channel groups (set
/// `groups = in_channels` for depthwise). Weight layout is
/// `(out, in/groups, kh, kw)`; bias is optional because batch-normalized
/// stacks fold it away.
pub struct Conv2d<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
    cache: Option<Array4<F>>,
}

impl<F: Scalar> Conv2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(in_channels % groups == 0 && out_channels % groups == 0);
        let ci_g = in_channels / groups;
        let mut weight = Param::zeros(&[out_channels, ci_g, kernel.0, kernel.1]);
        he_normal(&mut weight, ci_g * kernel.0 * kernel.1, rng);
        let bias = with_bias.then(|| Param::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1;
        let wo = (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1;
        (ho, wo)
    }

    /// Gather the patch matrix for channels `[c0, c1)`:
    /// rows are (channel, ky, kx), columns are (sample, oy, ox).
    fn im2col(&self, x: &Array4<F>, c0: usize, c1: usize, ho: usize, wo: usize) -> Array2<F> {
        let (n, _, h, w) = x.dim();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let xs = x.as_slice().expect("standard layout");
        let cols_w = n * ho * wo;
        let mut cols = Array2::<F>::zeros(((c1 - c0) * kh * kw, cols_w));
        let cs = cols.as_slice_mut().unwrap();
        for c in c0..c1 {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (((c - c0) * kh + ky) * kw + kx) * cols_w;
                    for i in 0..n {
                        let x_base = (i * self.in_channels + c) * h * w;
                        for oy in 0..ho {
                            let y = (oy * sh + ky) as isize - ph as isize;
                            let col_base = row + (i * ho + oy) * wo;
                            if y < 0 || y >= h as isize {
                                continue; // zero padding
                            }
                            let x_row = x_base + y as usize * w;
                            for ox in 0..wo {
                                let xx = (ox * sw + kx) as isize - pw as isize;
                                if xx >= 0 && xx < w as isize {
                                    cs[col_base + ox] = xs[x_row + xx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add the patch-matrix gradient back to input positions.
    fn col2im(
        &self,
        dcols: &Array2<F>,
        dx: &mut Array4<F>,
        c0: usize,
        c1: usize,
        ho: usize,
        wo: usize,
    ) {
        let (n, _, h, w) = dx.dim();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let cols_w = n * ho * wo;
        let ds = dcols.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        for c in c0..c1 {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (((c - c0) * kh + ky) * kw + kx) * cols_w;
                    for i in 0..n {
                        let x_base = (i * self.in_channels + c) * h * w;
                        for oy in 0..ho {
                            let y = (oy * sh + ky) as isize - ph as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let x_row = x_base + y as usize * w;
                            let col_base = row + (i * ho + oy) * wo;
                            for ox in 0..wo {
                                let xx = (ox * sw + kx) as isize - pw as isize;
                                if xx >= 0 && xx < w as isize {
                                    dxs[x_row + xx as usize] =
                                        dxs[x_row + xx as usize] + ds[col_base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Layer<F> for Conv2d<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "channel mismatch");
        let (ho, wo) = self.output_size(h, w);
        let co_g = self.out_channels / self.groups;
        let ci_g = self.in_channels / self.groups;
        let k = ci_g * self.kernel.0 * self.kernel.1;
        let mut out = Array4::<F>::zeros((n, self.out_channels, ho, wo));
        let howo = ho * wo;
        for g in 0..self.groups {
            let cols = self.im2col(x, g * ci_g, (g + 1) * ci_g, ho, wo);
            let w_view = ArrayView2::from_shape(
                (co_g, k),
                &self.weight.data[g * co_g * k..(g + 1) * co_g * k],
            )
            .unwrap();
            let res = w_view.dot(&cols); // (co_g, n*ho*wo)
            let rs = res.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            for oc in 0..co_g {
                let oc_glob = g * co_g + oc;
                for i in 0..n {
                    let src = oc * (n * howo) + i * howo;
                    let dst = (i * self.out_channels + oc_glob) * howo;
                    os[dst..dst + howo].copy_from_slice(&rs[src..src + howo]);
                }
            }
        }
        if let Some(bias) = &self.bias {
            let os = out.as_slice_mut().unwrap();
            for i in 0..n {
                for oc in 0..self.out_channels {
                    let b = bias.data[oc];
                    let base = (i * self.out_channels + oc) * howo;
                    for v in &mut os[base..base + howo] {
                        *v = *v + b;
                    }
                }
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        out
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let x = self.cache.take().expect("backward without forward");
        let (n, _, _, _) = x.dim();
        let (_, _, ho, wo) = grad.dim();
        let co_g = self.out_channels / self.groups;
        let ci_g = self.in_channels / self.groups;
        let k = ci_g * self.kernel.0 * self.kernel.1;
        let howo = ho * wo;
        let mut dx = Array4::<F>::zeros(x.dim());
        let gs = grad.as_slice().expect("standard layout");
        for g in 0..self.groups {
            // Regather the group's gradient as (co_g, n*ho*wo).
            let mut gmat = Array2::<F>::zeros((co_g, n * howo));
            {
                let gm = gmat.as_slice_mut().unwrap();
                for oc in 0..co_g {
                    let oc_glob = g * co_g + oc;
                    for i in 0..n {
                        let src = (i * self.out_channels + oc_glob) * howo;
                        let dst = oc * (n * howo) + i * howo;
                        gm[dst..dst + howo].copy_from_slice(&gs[src..src + howo]);
                    }
                }
            }
            let cols = self.im2col(&x, g * ci_g, (g + 1) * ci_g, ho, wo);
            let dw = gmat.dot(&cols.t()); // (co_g, K)
            let dws = dw.as_slice().unwrap();
            let base = g * co_g * k;
            for (i, &v) in dws.iter().enumerate() {
                self.weight.grad[base + i] = self.weight.grad[base + i] + v;
            }
            let w_view = ArrayView2::from_shape(
                (co_g, k),
                &self.weight.data[g * co_g * k..(g + 1) * co_g * k],
            )
            .unwrap();
            let dcols = w_view.t().dot(&gmat); // (K, n*ho*wo)
            self.col2im(&dcols, &mut dx, g * ci_g, (g + 1) * ci_g, ho, wo);
        }
        if let Some(bias) = &mut self.bias {
            for i in 0..n {
                for oc in 0..self.out_channels {
                    let base = (i * self.out_channels + oc) * howo;
                    let sum: F = gs[base..base + howo].iter().cloned().sum();
                    bias.grad[oc] = bias.grad[oc] + sum;
                }
            }
        }
        self.cache = Some(x);
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        f(
            &format!("{prefix}weight"),
            TensorRole::Trainable,
            &mut self.weight,
        );
        if let Some(bias) = &mut self.bias {
            f(&format!("{prefix}bias"), TensorRole::Trainable, bias);
        }
    }
}

struct BnCache<F: Scalar> {
    x_hat: Array4<F>,
    inv_std: Vec<F>,
}

/// Batch normalization over (n, h, w) per channel. Training mode normalizes
/// with batch statistics and updates the running buffers; inference mode
/// reads the buffers only, so identical inputs give identical outputs.
pub struct BatchNorm2d<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    momentum: F,
    eps: F,
    cache: Option<BnCache<F>>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], F::one()),
            beta: Param::zeros(&[channels]),
            running_mean: Param::zeros(&[channels]),
            running_var: Param::filled(&[channels], F::one()),
            momentum: fl(0.99),
            eps: fl(1e-3),
            cache: None,
        }
    }
}

impl<F: Scalar> Layer<F> for BatchNorm2d<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let m = fl::<F>((n * h * w) as f64);
        let mut out = Array4::<F>::zeros(x.dim());
        if train {
            let mut x_hat = Array4::<F>::zeros(x.dim());
            let mut inv_stds = vec![F::zero(); c];
            for ch in 0..c {
                let mut mean = F::zero();
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            mean = mean + x[[i, ch, y, xx]];
                        }
                    }
                }
                mean = mean / m;
                let mut var = F::zero();
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let d = x[[i, ch, y, xx]] - mean;
                            var = var + d * d;
                        }
                    }
                }
                var = var / m;
                let inv_std = F::one() / (var + self.eps).sqrt();
                inv_stds[ch] = inv_std;
                let (g, b) = (self.gamma.data[ch], self.beta.data[ch]);
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let xh = (x[[i, ch, y, xx]] - mean) * inv_std;
                            x_hat[[i, ch, y, xx]] = xh;
                            out[[i, ch, y, xx]] = g * xh + b;
                        }
                    }
                }
                let mom = self.momentum;
                self.running_mean.data[ch] =
                    mom * self.running_mean.data[ch] + (F::one() - mom) * mean;
                self.running_var.data[ch] =
                    mom * self.running_var.data[ch] + (F::one() - mom) * var;
            }
            self.cache = Some(BnCache {
                x_hat,
                inv_std: inv_stds,
            });
        } else {
            for ch in 0..c {
                let mean = self.running_mean.data[ch];
                let inv_std = F::one() / (self.running_var.data[ch] + self.eps).sqrt();
                let (g, b) = (self.gamma.data[ch], self.beta.data[ch]);
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            out[[i, ch, y, xx]] = g * (x[[i, ch, y, xx]] - mean) * inv_std + b;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let cache = self.cache.as_ref().expect("backward without train forward");
        let (n, c, h, w) = grad.dim();
        let m = fl::<F>((n * h * w) as f64);
        let mut dx = Array4::<F>::zeros(grad.dim());
        for ch in 0..c {
            let mut dgamma = F::zero();
            let mut dbeta = F::zero();
            for i in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let g = grad[[i, ch, y, xx]];
                        dgamma = dgamma + g * cache.x_hat[[i, ch, y, xx]];
                        dbeta = dbeta + g;
                    }
                }
            }
            self.gamma.grad[ch] = self.gamma.grad[ch] + dgamma;
            self.beta.grad[ch] = self.beta.grad[ch] + dbeta;
            let scale = self.gamma.data[ch] * cache.inv_std[ch] / m;
            for i in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let g = grad[[i, ch, y, xx]];
                        dx[[i, ch, y, xx]] = scale
                            * (m * g - dbeta - cache.x_hat[[i, ch, y, xx]] * dgamma);
                    }
                }
            }
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        f(
            &format!("{prefix}gamma"),
            TensorRole::Trainable,
            &mut self.gamma,
        );
        f(
            &format!("{prefix}beta"),
            TensorRole::Trainable,
            &mut self.beta,
        );
        f(
            &format!("{prefix}running_mean"),
            TensorRole::Buffer,
            &mut self.running_mean,
        );
        f(
            &format!("{prefix}running_var"),
            TensorRole::Buffer,
            &mut self.running_var,
        );
    }
}

/// Max pooling; padding cells never win the max.
pub struct MaxPool2d<F: Scalar> {
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    cache: Option<(Vec<usize>, (usize, usize, usize, usize))>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> MaxPool2d<F> {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }
}

impl<F: Scalar> Layer<F> for MaxPool2d<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w);
        let mut out = Array4::<F>::zeros((n, c, ho, wo));
        let mut argmax = vec![0usize; n * c * ho * wo];
        let xs = x.as_slice().unwrap();
        let mut oidx = 0;
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0usize;
                        for ky in 0..self.kernel.0 {
                            let y = (oy * self.stride.0 + ky) as isize - self.padding.0 as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel.1 {
                                let xx =
                                    (ox * self.stride.1 + kx) as isize - self.padding.1 as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                let idx = base + y as usize * w + xx as usize;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out[[i, ch, oy, ox]] = best;
                        argmax[oidx] = best_idx;
                        oidx += 1;
                    }
                }
            }
        }
        if train {
            self.cache = Some((argmax, (n, c, h, w)));
        }
        out
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let (argmax, dim) = self.cache.as_ref().expect("backward without forward");
        let mut dx = Array4::<F>::zeros(*dim);
        let dxs = dx.as_slice_mut().unwrap();
        for (g, &idx) in grad.iter().zip(argmax.iter()) {
            dxs[idx] = dxs[idx] + *g;
        }
        dx
    }

    fn visit(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {}
}

/// Average pooling; padded cells are excluded from the divisor.
pub struct AvgPool2d<F: Scalar> {
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    cache: Option<(usize, usize, usize, usize)>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> AvgPool2d<F> {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }

    /// Valid (non-padding) cell coordinates for output position (oy, ox).
    fn window(&self, oy: usize, ox: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let y0 = (oy * self.stride.0) as isize - self.padding.0 as isize;
        let x0 = (ox * self.stride.1) as isize - self.padding.1 as isize;
        let ys = y0.max(0) as usize;
        let xs = x0.max(0) as usize;
        let ye = ((y0 + self.kernel.0 as isize).min(h as isize)) as usize;
        let xe = ((x0 + self.kernel.1 as isize).min(w as isize)) as usize;
        (ys, ye, xs, xe)
    }
}

impl<F: Scalar> Layer<F> for AvgPool2d<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w);
        let mut out = Array4::<F>::zeros((n, c, ho, wo));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (ys, ye, xs, xe) = self.window(oy, ox, h, w);
                        let count = (ye - ys) * (xe - xs);
                        let mut sum = F::zero();
                        for y in ys..ye {
                            for xx in xs..xe {
                                sum = sum + x[[i, ch, y, xx]];
                            }
                        }
                        out[[i, ch, oy, ox]] = sum / fl::<F>(count.max(1) as f64);
                    }
                }
            }
        }
        if train {
            self.cache = Some((n, c, h, w));
        }
        out
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = *self.cache.as_ref().expect("backward without forward");
        let (_, _, ho, wo) = grad.dim();
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (ys, ye, xs, xe) = self.window(oy, ox, h, w);
                        let count = fl::<F>(((ye - ys) * (xe - xs)).max(1) as f64);
                        let g = grad[[i, ch, oy, ox]] / count;
                        for y in ys..ye {
                            for xx in xs..xe {
                                dx[[i, ch, y, xx]] = dx[[i, ch, y, xx]] + g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn visit(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {}
}

/// Fully connected layer on (n, features) matrices. Weight layout (out, in).
pub struct Dense<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_features: usize,
    out_features: usize,
    cache: Option<Array2<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let mut weight = Param::zeros(&[out_features, in_features]);
        he_normal(&mut weight, in_features, rng);
        Self {
            weight,
            bias: Param::zeros(&[out_features]),
            in_features,
            out_features,
            cache: None,
        }
    }

    /// Dense layer with an explicit kernel standard deviation; used for the
    /// classifier head, which starts near zero so that initial class scores
    /// are close to uniform regardless of feature magnitude.
    pub fn with_std<R: Rng>(
        in_features: usize,
        out_features: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut dense = Self::new(in_features, out_features, rng);
        let normal = Normal::new(0.0, std).unwrap();
        for v in &mut dense.weight.data {
            *v = fl(normal.sample(rng));
        }
        dense
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn forward2(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let w = ArrayView2::from_shape(
            (self.out_features, self.in_features),
            &self.weight.data[..],
        )
        .unwrap();
        let mut out = x.dot(&w.t());
        for mut row in out.rows_mut() {
            for (v, &b) in row.iter_mut().zip(&self.bias.data) {
                *v = *v + b;
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward2(&mut self, grad: &Array2<F>) -> Array2<F> {
        let x = self.cache.as_ref().expect("backward without forward");
        let dw = grad.t().dot(x); // (out, in)
        for (g, &v) in self.weight.grad.iter_mut().zip(dw.as_slice().unwrap()) {
            *g = *g + v;
        }
        for (c, col) in grad.columns().into_iter().enumerate() {
            let mut sum = F::zero();
            for &v in col.iter() {
                sum = sum + v;
            }
            self.bias.grad[c] = self.bias.grad[c] + sum;
        }
        let w = ArrayView2::from_shape(
            (self.out_features, self.in_features),
            &self.weight.data[..],
        )
        .unwrap();
        grad.dot(&w)
    }

    pub fn visit_dense(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        f(
            &format!("{prefix}weight"),
            TensorRole::Trainable,
            &mut self.weight,
        );
        f(&format!("{prefix}bias"), TensorRole::Trainable, &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_layer;
    use ndarray::Array4;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_input(rng: &mut ChaCha12Rng, n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
        let mut x = Array4::<f64>::zeros((n, c, h, w));
        x.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        x
    }

    #[test]
    fn conv_known_values() {
        // 1x1 input channel, 2x2 kernel of ones, no padding: output is the
        // window sum.
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new(1, 1, (2, 2), (1, 1), (0, 0), 1, false, &mut rng);
        conv.weight.data = vec![1.0; 4];
        let x = Array4::from_shape_vec((1, 1, 3, 3), (1..=9).map(f64::from).collect()).unwrap();
        let y = conv.forward(&x, false);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 1.0 + 2.0 + 4.0 + 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 5.0 + 6.0 + 8.0 + 9.0);
    }

    #[test]
    fn conv_padding_and_stride_shapes() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new(3, 8, (3, 3), (2, 2), (1, 1), 1, false, &mut rng);
        assert_eq!(conv.output_size(96, 96), (48, 48));
        let conv = Conv2d::<f64>::new(3, 8, (7, 7), (2, 2), (3, 3), 1, false, &mut rng);
        assert_eq!(conv.output_size(96, 96), (48, 48));
        let conv = Conv2d::<f64>::new(3, 8, (3, 3), (2, 2), (0, 0), 1, false, &mut rng);
        assert_eq!(conv.output_size(96, 96), (47, 47));
    }

    #[test]
    fn conv_gradcheck_plain() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(3, 4, (3, 3), (2, 2), (1, 1), 1, true, &mut rng);
        let x = random_input(&mut rng, 2, 3, 7, 7);
        let err = check_layer(&mut conv, &x, 30, 7);
        assert!(err < 1e-6, "conv gradient error {err}");
    }

    #[test]
    fn conv_gradcheck_grouped_and_depthwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut grouped = Conv2d::<f64>::new(4, 8, (3, 3), (1, 1), (1, 1), 2, false, &mut rng);
        let x = random_input(&mut rng, 2, 4, 6, 6);
        let err = check_layer(&mut grouped, &x, 30, 8);
        assert!(err < 1e-6, "grouped conv gradient error {err}");

        let mut dw = Conv2d::<f64>::new(6, 6, (5, 5), (2, 2), (2, 2), 6, false, &mut rng);
        let x = random_input(&mut rng, 2, 6, 8, 8);
        let err = check_layer(&mut dw, &x, 30, 9);
        assert!(err < 1e-6, "depthwise conv gradient error {err}");
    }

    #[test]
    fn conv_input_gradient_matches_fd() {
        // Finite differences on the input rather than the weights.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut conv = Conv2d::<f64>::new(2, 3, (3, 3), (1, 1), (1, 1), 1, false, &mut rng);
        let x = random_input(&mut rng, 1, 2, 5, 5);
        let out = conv.forward(&x, true);
        let w: Array4<f64> = {
            let mut w = Array4::zeros(out.dim());
            let mut c = 0.1f64;
            w.mapv_inplace(|_| {
                c = (c * 1.7).rem_euclid(1.0);
                c - 0.5
            });
            w
        };
        let dx = conv.backward(&w);
        let h = 1e-6;
        for probe in [(0usize, 0usize, 0usize, 0usize), (0, 1, 2, 3), (0, 0, 4, 4)] {
            let mut xp = x.clone();
            xp[probe] += h;
            let mut xm = x.clone();
            xm[probe] -= h;
            let fp = (&conv.forward(&xp, false) * &w).sum();
            let fm = (&conv.forward(&xm, false) * &w).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (dx[probe] - fd).abs() < 1e-6,
                "dx mismatch at {probe:?}: {} vs {fd}",
                dx[probe]
            );
        }
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut bn = BatchNorm2d::<f64>::new(3);
        let x = random_input(&mut rng, 4, 3, 5, 5);
        let y = bn.forward(&x, true);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| {
                    (0..5).flat_map(move |yy| (0..5).map(move |xx| (i, yy, xx)))
                })
                .map(|(i, yy, xx)| y[[i, ch, yy, xx]])
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            // Output variance is v/(v+eps) of the input variance v exactly.
            let xin: Vec<f64> = (0..4)
                .flat_map(|i| {
                    (0..5).flat_map(move |yy| (0..5).map(move |xx| (i, yy, xx)))
                })
                .map(|(i, yy, xx)| x[[i, ch, yy, xx]])
                .collect();
            let xm: f64 = xin.iter().sum::<f64>() / xin.len() as f64;
            let xv: f64 = xin.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / xin.len() as f64;
            assert!((var - xv / (xv + 1e-3)).abs() < 1e-10);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut bn = BatchNorm2d::<f64>::new(2);
        for _ in 0..50 {
            let x = random_input(&mut rng, 8, 2, 4, 4);
            bn.forward(&x, true);
        }
        let x = random_input(&mut rng, 2, 2, 4, 4);
        let a = bn.forward(&x, false);
        let b = bn.forward(&x, false);
        assert_eq!(a, b);
    }

    #[test]
    fn batchnorm_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut bn = BatchNorm2d::<f64>::new(4);
        // Nudge gamma/beta off their init so the check isn't at a special point.
        for v in &mut bn.gamma.data {
            *v = 1.0 + rng.random_range(-0.3..0.3);
        }
        for v in &mut bn.beta.data {
            *v = rng.random_range(-0.3..0.3);
        }
        let x = random_input(&mut rng, 3, 4, 4, 4);
        let err = check_layer(&mut bn, &x, 16, 10);
        assert!(err < 1e-6, "batchnorm gradient error {err}");
    }

    #[test]
    fn activations_known_values_and_gradcheck() {
        let x = Array4::from_shape_vec((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        let mut relu = ActLayer::<f64>::new(Activation::Relu);
        assert_eq!(
            relu.forward(&x, false).as_slice().unwrap(),
            &[0.0, 0.0, 2.0]
        );
        let mut silu = ActLayer::<f64>::new(Activation::Silu);
        let y = silu.forward(&x, false);
        assert!((y[[0, 0, 0, 2]] - 2.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);

        // Activation layers have no params; check input gradient instead.
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = random_input(&mut rng, 2, 2, 3, 3).mapv(|v| v + 0.01); // avoid relu kink
        for kind in [Activation::Relu, Activation::Silu, Activation::Sigmoid] {
            let mut layer = ActLayer::<f64>::new(kind);
            let out = layer.forward(&x, true);
            let g = Array4::from_elem(out.dim(), 1.0);
            let dx = layer.backward(&g);
            let h = 1e-6;
            let probe = (1, 1, 2, 2);
            let mut xp = x.clone();
            xp[probe] += h;
            let mut xm = x.clone();
            xm[probe] -= h;
            let fd = (layer.forward(&xp, false).sum() - layer.forward(&xm, false).sum())
                / (2.0 * h);
            assert!((dx[probe] - fd).abs() < 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn maxpool_forward_and_backward() {
        let x = Array4::from_shape_vec(
            (1, 1, 4, 4),
            vec![
                1.0, 2.0, 3.0, 4.0, //
                5.0, 6.0, 7.0, 8.0, //
                9.0, 10.0, 11.0, 12.0, //
                13.0, 14.0, 15.0, 16.0,
            ],
        )
        .unwrap();
        let mut pool = MaxPool2d::<f64>::new((2, 2), (2, 2), (0, 0));
        let y = pool.forward(&x, true);
        assert_eq!(y.as_slice().unwrap(), &[6.0, 8.0, 14.0, 16.0]);
        let g = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dx = pool.backward(&g);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 1, 3]], 2.0);
        assert_eq!(dx[[0, 0, 3, 1]], 3.0);
        assert_eq!(dx[[0, 0, 3, 3]], 4.0);
        assert_eq!(dx.sum(), 10.0);
    }

    #[test]
    fn avgpool_excludes_padding_from_divisor() {
        let x = Array4::from_elem((1, 1, 2, 2), 4.0);
        let mut pool = AvgPool2d::<f64>::new((3, 3), (1, 1), (1, 1));
        let y = pool.forward(&x, false);
        // Corner windows see 4 valid cells of value 4 → mean 4.
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert!(y.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn avgpool_backward_distributes_uniformly() {
        let x = Array4::from_elem((1, 1, 4, 4), 1.0);
        let mut pool = AvgPool2d::<f64>::new((2, 2), (2, 2), (0, 0));
        pool.forward(&x, true);
        let g = Array4::from_elem((1, 1, 2, 2), 1.0);
        let dx = pool.backward(&g);
        assert!(dx.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn dense_forward_and_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut dense = Dense::<f64>::new(4, 3, &mut rng);
        let x = ndarray::Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let out = dense.forward2(&x, true);
        assert_eq!(out.dim(), (2, 3));
        let g = ndarray::Array2::from_elem((2, 3), 1.0);
        let dx = dense.backward2(&g);
        let h = 1e-6;
        // Weight gradient via FD on one coordinate.
        let analytic = dense.weight.grad[5];
        dense.weight.data[5] += h;
        let fp = dense.forward2(&x, false).sum();
        dense.weight.data[5] -= 2.0 * h;
        let fm = dense.forward2(&x, false).sum();
        dense.weight.data[5] += h;
        assert!((analytic - (fp - fm) / (2.0 * h)).abs() < 1e-6);
        // Input gradient: each row of dx is the column sums of W.
        let w = ArrayView2::from_shape((3, 4), &dense.weight.data[..]).unwrap();
        for j in 0..4 {
            let col_sum: f64 = (0..3).map(|i| w[[i, j]]).sum();
            assert!((dx[[0, j]] - col_sum).abs() < 1e-12);
        }
    }
}
