//! Minimal CNN layer framework with explicit forward/backward passes.
//!
//! Layers cache what they need during a training-mode forward and consume it
//! in the matching backward call. Everything is generic over `f32`/`f64`; the
//! training path runs in single precision while gradient verification uses
//! double precision. All computation is single-threaded and deterministic.

mod blocks;
mod layers;

pub use blocks::{ConcatBranches, ConvBnAct, ResidualAdd, Sequential, SqueezeExcite};
pub use layers::{ActLayer, Activation, AvgPool2d, BatchNorm2d, Conv2d, Dense, MaxPool2d};

use ndarray::{Array2, Array4};

/// Floating-point scalar usable by the network (f32 or f64).
pub trait Scalar: ndarray::NdFloat + std::iter::Sum {
    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_(self) -> f64 {
        self
    }
}

/// Shorthand numeric cast used throughout the layer code.
#[inline]
pub(crate) fn fl<F: Scalar>(v: f64) -> F {
    F::from_f64(v)
}

/// Whether a named tensor is optimized or carried along (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Trainable,
    Buffer,
}

/// A named tensor: flat storage plus shape, with a gradient accumulator of
/// the same size for trainable tensors.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub data: Vec<F>,
    pub grad: Vec<F>,
    pub shape: Vec<usize>,
}

impl<F: Scalar> Param<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            data: vec![F::zero(); len],
            grad: vec![F::zero(); len],
            shape: shape.to_vec(),
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let len = shape.iter().product();
        Self {
            data: vec![value; len],
            grad: vec![F::zero(); len],
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }
}

/// A differentiable network component operating on NCHW activations.
pub trait Layer<F: Scalar> {
    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F>;

    /// Propagate `grad` (w.r.t. this layer's output) back to its input,
    /// accumulating parameter gradients along the way. Requires a preceding
    /// training-mode forward.
    fn backward(&mut self, grad: &Array4<F>) -> Array4<F>;

    /// Visit every named tensor (trainable parameters and buffers).
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>));
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean categorical cross-entropy of `logits` against integer `labels`, plus
/// the gradient w.r.t. the logits: `(softmax − onehot) / n`.
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
) -> (f64, Array2<F>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len());
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let inv_n = fl::<F>(1.0 / n as f64);
    for (i, &label) in labels.iter().enumerate() {
        // log p from logits for stability: logit_y − max − ln Σ exp(logit − max)
        let row = logits.row(i);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let lse = row
            .iter()
            .map(|&v| (v - max).exp().to_f64_())
            .sum::<f64>()
            .ln();
        loss -= (row[label] - max).to_f64_() - lse;
        grad[[i, label]] = grad[[i, label]] - F::one();
    }
    grad.mapv_inplace(|v| v * inv_n);
    (loss / n as f64, grad)
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Central-difference gradient check of `loss(x)` w.r.t. sampled
    /// parameters of `layer`, after one analytic forward/backward.
    /// Returns the worst relative error over the sampled coordinates.
    pub fn check_layer<L: Layer<f64>>(
        layer: &mut L,
        x: &Array4<f64>,
        samples: usize,
        seed: u64,
    ) -> f64 {
        use rand::Rng;
        use rand::SeedableRng;

        // Scalar loss: weighted sum of outputs with fixed pseudo-random
        // weights, so every output element influences the loss.
        let weights_for = |shape: &[usize]| -> Array4<f64> {
            let len: usize = shape.iter().product();
            let w: Vec<f64> = (0..len)
                .map(|i| ((i * 2654435761 % 1000) as f64 / 1000.0) - 0.5)
                .collect();
            Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), w).unwrap()
        };

        let out = layer.forward(x, true);
        let w = weights_for(out.shape());
        let gout = w.clone();
        layer.backward(&gout);

        // Collect analytic grads and coordinates.
        let mut coords: Vec<(String, usize, f64)> = Vec::new();
        layer.visit("", &mut |name, role, p| {
            if role == TensorRole::Trainable {
                for (i, &g) in p.grad.iter().enumerate() {
                    coords.push((name.to_string(), i, g));
                }
            }
        });
        assert!(!coords.is_empty(), "layer has no trainable parameters");
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let h = 1e-5;
        for _ in 0..samples {
            let (name, idx, analytic) = coords[rng.random_range(0..coords.len())].clone();
            let mut eval_at = |delta: f64| -> f64 {
                layer.visit("", &mut |n, _, p| {
                    if n == name {
                        p.data[idx] += delta;
                    }
                });
                let out = layer.forward(x, true);
                layer.visit("", &mut |n, _, p| {
                    if n == name {
                        p.data[idx] -= delta;
                    }
                });
                (&out * &w).sum()
            };
            let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((analytic - fd).abs() / denom);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_normalize() {
        let logits = array![[1.0f64, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let p = softmax_rows(&logits);
        for row in p.rows() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let logits = Array2::<f64>::zeros((4, 10));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 5, 9]);
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_fd() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        let mut logits = Array2::<f64>::zeros((3, 5));
        logits.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let labels = [2usize, 0, 4];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut plus = logits.clone();
                plus[[i, j]] += h;
                let mut minus = logits.clone();
                minus[[i, j]] -= h;
                let (lp, _) = softmax_cross_entropy(&plus, &labels);
                let (lm, _) = softmax_cross_entropy(&minus, &labels);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (grad[[i, j]] - fd).abs() < 1e-8,
                    "grad mismatch at ({i},{j}): {} vs {}",
                    grad[[i, j]],
                    fd
                );
            }
        }
    }
}
