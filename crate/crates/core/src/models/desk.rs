//! Reduced "desk" variants: each keeps its parent's distinctive block type
//! (residual bottleneck, multi-branch module, MBConv + squeeze-excitation) at
//! a fraction of the depth and width, so the full train/evaluate path runs in
//! seconds on a CPU. They are test and demo stand-ins, not part of the
//! published architecture family.

use super::efficientnet::{mbconv, push_boxed};
use super::resnet::bottleneck;
use crate::nn::{
    Activation, AvgPool2d, ConcatBranches, ConvBnAct, MaxPool2d, Scalar, Sequential,
};
use rand::Rng;

const RELU: Option<Activation> = Some(Activation::Relu);
const SILU: Option<Activation> = Some(Activation::Silu);

/// Two-stage bottleneck ResNet (16 → 32 → 64 channels).
pub fn build_resnet<F: Scalar, R: Rng>(rng: &mut R) -> (Sequential<F>, usize) {
    let mut net = Sequential::new();
    net.push(
        "conv1",
        ConvBnAct::new(3, 16, (3, 3), (2, 2), (1, 1), 1, RELU, rng),
    );
    net.push("maxpool", MaxPool2d::new((3, 3), (2, 2), (1, 1)));
    net.push("layer1.0", bottleneck(16, 8, 32, 2, rng));
    net.push("layer2.0", bottleneck(32, 16, 64, 2, rng));
    (net, 64)
}

/// Stem plus one multi-branch module and one grid reduction.
pub fn build_inception<F: Scalar, R: Rng>(rng: &mut R) -> (Sequential<F>, usize) {
    let cba = |rng: &mut R, i: usize, o: usize, k: (usize, usize), s: usize, p: (usize, usize)| {
        ConvBnAct::<F>::new(i, o, k, (s, s), p, 1, RELU, rng)
    };
    let mut net = Sequential::new();
    net.push("conv0", cba(rng, 3, 16, (3, 3), 2, (1, 1)));
    net.push("pool0", MaxPool2d::new((3, 3), (2, 2), (1, 1)));

    // Four-branch module: 1x1, 5x5, double-3x3, pooled projection.
    let b1 = {
        let mut s = Sequential::new();
        s.push("conv", cba(rng, 16, 8, (1, 1), 1, (0, 0)));
        s
    };
    let mut b5 = Sequential::new();
    b5.push("conv1", cba(rng, 16, 8, (1, 1), 1, (0, 0)));
    b5.push("conv2", cba(rng, 8, 8, (5, 5), 1, (2, 2)));
    let mut b3 = Sequential::new();
    b3.push("conv1", cba(rng, 16, 8, (1, 1), 1, (0, 0)));
    b3.push("conv2", cba(rng, 8, 12, (3, 3), 1, (1, 1)));
    b3.push("conv3", cba(rng, 12, 12, (3, 3), 1, (1, 1)));
    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new((3, 3), (1, 1), (1, 1)));
    bp.push("conv", cba(rng, 16, 4, (1, 1), 1, (0, 0)));
    net.push(
        "mixed0",
        ConcatBranches::new(vec![
            ("branch1x1".into(), b1),
            ("branch5x5".into(), b5),
            ("branch3x3dbl".into(), b3),
            ("branch_pool".into(), bp),
        ]),
    ); // 8+8+12+4 = 32

    // Reduction: strided 3x3, strided double-3x3, max pool.
    let mut r3 = Sequential::new();
    r3.push("conv", cba(rng, 32, 24, (3, 3), 2, (0, 0)));
    let mut rd = Sequential::new();
    rd.push("conv1", cba(rng, 32, 8, (1, 1), 1, (0, 0)));
    rd.push("conv2", cba(rng, 8, 12, (3, 3), 1, (1, 1)));
    rd.push("conv3", cba(rng, 12, 12, (3, 3), 2, (0, 0)));
    let mut rp = Sequential::new();
    rp.push("pool", MaxPool2d::new((3, 3), (2, 2), (0, 0)));
    net.push(
        "mixed1",
        ConcatBranches::new(vec![
            ("branch3x3".into(), r3),
            ("branch3x3dbl".into(), rd),
            ("branch_pool".into(), rp),
        ]),
    ); // 24+12+32 = 68
    (net, 68)
}

/// Stem plus three MBConv blocks (with squeeze-excitation) and a wide 1×1
/// top. The top keeps the parent's full 1280-channel expansion: with a
/// fixed small learning rate the head's score movement scales with the
/// feature width, which is what lets the overfit sanity run converge in a
/// handful of epochs.
pub fn build_efficientnet<F: Scalar, R: Rng>(rng: &mut R) -> (Sequential<F>, usize) {
    let mut net = Sequential::new();
    net.push(
        "stem",
        ConvBnAct::new(3, 16, (3, 3), (2, 2), (1, 1), 1, SILU, rng),
    );
    push_boxed(&mut net, "block0", mbconv(16, 8, 1, 3, 1, rng));
    push_boxed(&mut net, "block1", mbconv(8, 16, 6, 3, 2, rng));
    push_boxed(&mut net, "block2", mbconv(16, 24, 6, 5, 2, rng));
    net.push(
        "top",
        ConvBnAct::new(24, 1280, (1, 1), (1, 1), (0, 0), 1, SILU, rng),
    );
    (net, 1280)
}
