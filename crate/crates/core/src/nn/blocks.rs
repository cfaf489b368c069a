//! Composite blocks: sequential chains, multi-branch concatenation, residual
//! additions, conv-bn-activation stacks and squeeze-excitation gating.

use super::layers::{ActLayer, Activation, BatchNorm2d, Conv2d, Dense};
use super::{fl, Layer, Param, Scalar, TensorRole};
use ndarray::{s, Array2, Array4, Axis};
use rand::Rng;

/// Named chain of layers applied in order.
#[derive(Default)]
pub struct Sequential<F: Scalar> {
    children: Vec<(String, Box<dyn Layer<F> + Send + Sync>)>,
}

impl<F: Scalar> Sequential<F> {
    pub fn new() -> Self {
        Self {
            children: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, layer: impl Layer<F> + Send + Sync + 'static) -> &mut Self {
        self.children.push((name.to_string(), Box::new(layer)));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl<F: Scalar> Layer<F> for Sequential<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let mut cur = x.clone();
        for (_, layer) in &mut self.children {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let mut cur = grad.clone();
        for (_, layer) in self.children.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        for (name, layer) in &mut self.children {
            layer.visit(&format!("{prefix}{name}."), f);
        }
    }
}

/// Convolution → batch norm → optional activation.
pub struct ConvBnAct<F: Scalar> {
    conv: Conv2d<F>,
    bn: BatchNorm2d<F>,
    act: Option<ActLayer<F>>,
}

impl<F: Scalar> ConvBnAct<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
        act: Option<Activation>,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                groups,
                false,
                rng,
            ),
            bn: BatchNorm2d::new(out_channels),
            act: act.map(ActLayer::new),
        }
    }
}

impl<F: Scalar> Layer<F> for ConvBnAct<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        match &mut self.act {
            Some(act) => act.forward(&y, train),
            None => y,
        }
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let g = match &mut self.act {
            Some(act) => act.backward(grad),
            None => grad.clone(),
        };
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        self.conv.visit(&format!("{prefix}conv."), f);
        self.bn.visit(&format!("{prefix}bn."), f);
    }
}

/// Parallel branches concatenated along the channel axis.
pub struct ConcatBranches<F: Scalar> {
    branches: Vec<(String, Sequential<F>)>,
    split: Vec<usize>,
}

impl<F: Scalar> ConcatBranches<F> {
    pub fn new(branches: Vec<(String, Sequential<F>)>) -> Self {
        Self {
            branches,
            split: Vec::new(),
        }
    }
}

impl<F: Scalar> Layer<F> for ConcatBranches<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let outs: Vec<Array4<F>> = self
            .branches
            .iter_mut()
            .map(|(_, b)| b.forward(x, train))
            .collect();
        self.split = outs.iter().map(|o| o.dim().1).collect();
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        let cat = ndarray::concatenate(Axis(1), &views).expect("branch outputs share n/h/w");
        // Downstream layers index raw slices; keep activations C-contiguous.
        if cat.is_standard_layout() {
            cat
        } else {
            Array4::from_shape_vec(cat.dim(), cat.iter().cloned().collect()).unwrap()
        }
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let mut dx: Option<Array4<F>> = None;
        let mut offset = 0;
        for ((_, branch), &channels) in self.branches.iter_mut().zip(&self.split) {
            let slice = grad
                .slice(s![.., offset..offset + channels, .., ..])
                .to_owned();
            let part = branch.backward(&slice);
            dx = Some(match dx {
                None => part,
                Some(acc) => acc + &part,
            });
            offset += channels;
        }
        dx.expect("at least one branch")
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        for (name, branch) in &mut self.branches {
            branch.visit(&format!("{prefix}{name}."), f);
        }
    }
}

/// `main(x) + shortcut(x)` with an optional post-add ReLU. An empty shortcut
/// is the identity.
pub struct ResidualAdd<F: Scalar> {
    main: Sequential<F>,
    shortcut: Option<Sequential<F>>,
    post_relu: bool,
    cache_pre: Option<Array4<F>>,
}

impl<F: Scalar> ResidualAdd<F> {
    pub fn new(main: Sequential<F>, shortcut: Option<Sequential<F>>, post_relu: bool) -> Self {
        Self {
            main,
            shortcut,
            post_relu,
            cache_pre: None,
        }
    }
}

impl<F: Scalar> Layer<F> for ResidualAdd<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let main = self.main.forward(x, train);
        let short = match &mut self.shortcut {
            Some(s) => s.forward(x, train),
            None => x.clone(),
        };
        let sum = main + &short;
        if self.post_relu {
            if train {
                self.cache_pre = Some(sum.clone());
            }
            sum.mapv(|v| if v > F::zero() { v } else { F::zero() })
        } else {
            sum
        }
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let g = if self.post_relu {
            let pre = self.cache_pre.as_ref().expect("backward without forward");
            let mut g = grad.clone();
            g.zip_mut_with(pre, |gv, &p| {
                if p <= F::zero() {
                    *gv = F::zero()
                }
            });
            g
        } else {
            grad.clone()
        };
        let dmain = self.main.backward(&g);
        let dshort = match &mut self.shortcut {
            Some(s) => s.backward(&g),
            None => g,
        };
        dmain + &dshort
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        self.main.visit(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit(&format!("{prefix}shortcut."), f);
        }
    }
}

/// Squeeze-and-excitation channel gating: global average pool → reduce →
/// activation → expand → sigmoid → channel-wise scale.
pub struct SqueezeExcite<F: Scalar> {
    reduce: Dense<F>,
    expand: Dense<F>,
    act: Activation,
    cache: Option<SeCache<F>>,
}

struct SeCache<F: Scalar> {
    x: Array4<F>,
    r: Array2<F>,
    s: Array2<F>,
}

impl<F: Scalar> SqueezeExcite<F> {
    pub fn new<R: Rng>(channels: usize, reduced: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            reduce: Dense::new(channels, reduced, rng),
            expand: Dense::new(reduced, channels, rng),
            act,
            cache: None,
        }
    }
}

impl<F: Scalar> Layer<F> for SqueezeExcite<F> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let inv_hw = fl::<F>(1.0 / (h * w) as f64);
        let mut pooled = Array2::<F>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let mut sum = F::zero();
                for y in 0..h {
                    for xx in 0..w {
                        sum = sum + x[[i, ch, y, xx]];
                    }
                }
                pooled[[i, ch]] = sum * inv_hw;
            }
        }
        let r = self.reduce.forward2(&pooled, train);
        let a = r.mapv(|v| self.act_apply(v));
        let e = self.expand.forward2(&a, train);
        let sgm = e.mapv(|v| F::one() / (F::one() + (-v).exp()));
        let mut out = x.clone();
        for i in 0..n {
            for ch in 0..c {
                let scale = sgm[[i, ch]];
                for y in 0..h {
                    for xx in 0..w {
                        out[[i, ch, y, xx]] = out[[i, ch, y, xx]] * scale;
                    }
                }
            }
        }
        if train {
            self.cache = Some(SeCache {
                x: x.clone(),
                r,
                s: sgm,
            });
        }
        out
    }

    fn backward(&mut self, grad: &Array4<F>) -> Array4<F> {
        let cache = self.cache.as_ref().expect("backward without forward");
        let (n, c, h, w) = cache.x.dim();
        let inv_hw = fl::<F>(1.0 / (h * w) as f64);
        // Gradient into the gate: ds = Σ_hw dy ⊙ x, and the direct path dy ⊙ s.
        let mut ds = Array2::<F>::zeros((n, c));
        let mut dx = grad.clone();
        for i in 0..n {
            for ch in 0..c {
                let mut sum = F::zero();
                for y in 0..h {
                    for xx in 0..w {
                        sum = sum + grad[[i, ch, y, xx]] * cache.x[[i, ch, y, xx]];
                        dx[[i, ch, y, xx]] = dx[[i, ch, y, xx]] * cache.s[[i, ch]];
                    }
                }
                ds[[i, ch]] = sum;
            }
        }
        // Through sigmoid, expand, activation, reduce, pool.
        let mut de = ds;
        de.zip_mut_with(&cache.s, |v, &sg| *v = *v * sg * (F::one() - sg));
        let da = self.expand.backward2(&de);
        let mut dr = da;
        let act = self.act;
        dr.zip_mut_with(&cache.r, |v, &rv| *v = *v * Self::act_derivative_of(act, rv));
        let dp = self.reduce.backward2(&dr);
        for i in 0..n {
            for ch in 0..c {
                let g = dp[[i, ch]] * inv_hw;
                for y in 0..h {
                    for xx in 0..w {
                        dx[[i, ch, y, xx]] = dx[[i, ch, y, xx]] + g;
                    }
                }
            }
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        self.reduce.visit_dense(&format!("{prefix}se_reduce."), f);
        self.expand.visit_dense(&format!("{prefix}se_expand."), f);
    }
}

impl<F: Scalar> SqueezeExcite<F> {
    fn act_apply(&self, v: F) -> F {
        Self::act_apply_of(self.act, v)
    }

    fn act_apply_of(act: Activation, v: F) -> F {
        match act {
            Activation::Relu => {
                if v > F::zero() {
                    v
                } else {
                    F::zero()
                }
            }
            Activation::Silu => v * (F::one() / (F::one() + (-v).exp())),
            Activation::Sigmoid => F::one() / (F::one() + (-v).exp()),
        }
    }

    fn act_derivative_of(act: Activation, v: F) -> F {
        let sg = F::one() / (F::one() + (-v).exp());
        match act {
            Activation::Relu => {
                if v > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => sg * (F::one() + v * (F::one() - sg)),
            Activation::Sigmoid => sg * (F::one() - sg),
        }
    }
}
