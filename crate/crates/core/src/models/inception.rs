//! Inception-v3 feature extractor: convolutional stem, three 5×5-style
//! modules, a grid reduction, four 7×7-factorized modules, a second
//! reduction, and two expanded-branch modules ending at 2048 channels.

use crate::nn::{
    Activation, AvgPool2d, ConcatBranches, ConvBnAct, MaxPool2d, Scalar, Sequential,
};
use rand::Rng;

const RELU: Option<Activation> = Some(Activation::Relu);

fn cba<F: Scalar, R: Rng>(
    rng: &mut R,
    i: usize,
    o: usize,
    k: (usize, usize),
    s: usize,
    p: (usize, usize),
) -> ConvBnAct<F> {
    ConvBnAct::new(i, o, k, (s, s), p, 1, RELU, rng)
}

fn seq1<F: Scalar>(
    name: &str,
    layer: impl crate::nn::Layer<F> + Send + Sync + 'static,
) -> Sequential<F> {
    let mut s = Sequential::new();
    s.push(name, layer);
    s
}

/// 5×5-style module (mixed 0–2): 1×1, 5×5, double-3×3 and pooled branches.
fn module_a<F: Scalar, R: Rng>(input: usize, pool_proj: usize, rng: &mut R) -> ConcatBranches<F> {
    let b1 = seq1("conv", cba(rng, input, 64, (1, 1), 1, (0, 0)));
    let mut b5 = Sequential::new();
    b5.push("conv1", cba(rng, input, 48, (1, 1), 1, (0, 0)));
    b5.push("conv2", cba(rng, 48, 64, (5, 5), 1, (2, 2)));
    let mut b3 = Sequential::new();
    b3.push("conv1", cba(rng, input, 64, (1, 1), 1, (0, 0)));
    b3.push("conv2", cba(rng, 64, 96, (3, 3), 1, (1, 1)));
    b3.push("conv3", cba(rng, 96, 96, (3, 3), 1, (1, 1)));
    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new((3, 3), (1, 1), (1, 1)));
    bp.push("conv", cba(rng, input, pool_proj, (1, 1), 1, (0, 0)));
    ConcatBranches::new(vec![
        ("branch1x1".into(), b1),
        ("branch5x5".into(), b5),
        ("branch3x3dbl".into(), b3),
        ("branch_pool".into(), bp),
    ])
}

/// First grid reduction (mixed 3): strided 3×3, strided double-3×3, max pool.
fn module_reduction_a<F: Scalar, R: Rng>(input: usize, rng: &mut R) -> ConcatBranches<F> {
    let b3 = seq1("conv", cba(rng, input, 384, (3, 3), 2, (0, 0)));
    let mut bd = Sequential::new();
    bd.push("conv1", cba(rng, input, 64, (1, 1), 1, (0, 0)));
    bd.push("conv2", cba(rng, 64, 96, (3, 3), 1, (1, 1)));
    bd.push("conv3", cba(rng, 96, 96, (3, 3), 2, (0, 0)));
    let bp = seq1("pool", MaxPool2d::new((3, 3), (2, 2), (0, 0)));
    ConcatBranches::new(vec![
        ("branch3x3".into(), b3),
        ("branch3x3dbl".into(), bd),
        ("branch_pool".into(), bp),
    ])
}

/// 7×7-factorized module (mixed 4–7).
fn module_b<F: Scalar, R: Rng>(input: usize, c7: usize, rng: &mut R) -> ConcatBranches<F> {
    let b1 = seq1("conv", cba(rng, input, 192, (1, 1), 1, (0, 0)));
    let mut b7 = Sequential::new();
    b7.push("conv1", cba(rng, input, c7, (1, 1), 1, (0, 0)));
    b7.push("conv2", cba(rng, c7, c7, (1, 7), 1, (0, 3)));
    b7.push("conv3", cba(rng, c7, 192, (7, 1), 1, (3, 0)));
    let mut bd = Sequential::new();
    bd.push("conv1", cba(rng, input, c7, (1, 1), 1, (0, 0)));
    bd.push("conv2", cba(rng, c7, c7, (7, 1), 1, (3, 0)));
    bd.push("conv3", cba(rng, c7, c7, (1, 7), 1, (0, 3)));
    bd.push("conv4", cba(rng, c7, c7, (7, 1), 1, (3, 0)));
    bd.push("conv5", cba(rng, c7, 192, (1, 7), 1, (0, 3)));
    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new((3, 3), (1, 1), (1, 1)));
    bp.push("conv", cba(rng, input, 192, (1, 1), 1, (0, 0)));
    ConcatBranches::new(vec![
        ("branch1x1".into(), b1),
        ("branch7x7".into(), b7),
        ("branch7x7dbl".into(), bd),
        ("branch_pool".into(), bp),
    ])
}

/// Second grid reduction (mixed 8).
fn module_reduction_b<F: Scalar, R: Rng>(input: usize, rng: &mut R) -> ConcatBranches<F> {
    let mut b3 = Sequential::new();
    b3.push("conv1", cba(rng, input, 192, (1, 1), 1, (0, 0)));
    b3.push("conv2", cba(rng, 192, 320, (3, 3), 2, (0, 0)));
    let mut b7 = Sequential::new();
    b7.push("conv1", cba(rng, input, 192, (1, 1), 1, (0, 0)));
    b7.push("conv2", cba(rng, 192, 192, (1, 7), 1, (0, 3)));
    b7.push("conv3", cba(rng, 192, 192, (7, 1), 1, (3, 0)));
    b7.push("conv4", cba(rng, 192, 192, (3, 3), 2, (0, 0)));
    let bp = seq1("pool", MaxPool2d::new((3, 3), (2, 2), (0, 0)));
    ConcatBranches::new(vec![
        ("branch3x3".into(), b3),
        ("branch7x7x3".into(), b7),
        ("branch_pool".into(), bp),
    ])
}

/// Expanded-branch module (mixed 9–10): the 3×3 branches split into parallel
/// 1×3 and 3×1 halves that concatenate.
fn module_c<F: Scalar, R: Rng>(input: usize, rng: &mut R) -> ConcatBranches<F> {
    let b1 = seq1("conv", cba(rng, input, 320, (1, 1), 1, (0, 0)));

    let mut b3 = Sequential::new();
    b3.push("conv", cba(rng, input, 384, (1, 1), 1, (0, 0)));
    b3.push(
        "split",
        ConcatBranches::new(vec![
            ("a".into(), seq1("conv", cba(rng, 384, 384, (1, 3), 1, (0, 1)))),
            ("b".into(), seq1("conv", cba(rng, 384, 384, (3, 1), 1, (1, 0)))),
        ]),
    );

    let mut bd = Sequential::new();
    bd.push("conv1", cba(rng, input, 448, (1, 1), 1, (0, 0)));
    bd.push("conv2", cba(rng, 448, 384, (3, 3), 1, (1, 1)));
    bd.push(
        "split",
        ConcatBranches::new(vec![
            ("a".into(), seq1("conv", cba(rng, 384, 384, (1, 3), 1, (0, 1)))),
            ("b".into(), seq1("conv", cba(rng, 384, 384, (3, 1), 1, (1, 0)))),
        ]),
    );

    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new((3, 3), (1, 1), (1, 1)));
    bp.push("conv", cba(rng, input, 192, (1, 1), 1, (0, 0)));
    ConcatBranches::new(vec![
        ("branch1x1".into(), b1),
        ("branch3x3".into(), b3),
        ("branch3x3dbl".into(), bd),
        ("branch_pool".into(), bp),
    ])
}

/// Full-size backbone; returns the feature stack and its channel count.
pub fn build<F: Scalar, R: Rng>(rng: &mut R) -> (Sequential<F>, usize) {
    let mut net = Sequential::new();
    net.push("conv0", cba(rng, 3, 32, (3, 3), 2, (0, 0)));
    net.push("conv1", cba(rng, 32, 32, (3, 3), 1, (0, 0)));
    net.push("conv2", cba(rng, 32, 64, (3, 3), 1, (1, 1)));
    net.push("pool0", MaxPool2d::new((3, 3), (2, 2), (0, 0)));
    net.push("conv3", cba(rng, 64, 80, (1, 1), 1, (0, 0)));
    net.push("conv4", cba(rng, 80, 192, (3, 3), 1, (0, 0)));
    net.push("pool1", MaxPool2d::new((3, 3), (2, 2), (0, 0)));

    net.push("mixed0", module_a(192, 32, rng)); // 64+64+96+32 = 256
    net.push("mixed1", module_a(256, 64, rng)); // 288
    net.push("mixed2", module_a(288, 64, rng)); // 288
    net.push("mixed3", module_reduction_a(288, rng)); // 384+96+288 = 768
    net.push("mixed4", module_b(768, 128, rng));
    net.push("mixed5", module_b(768, 160, rng));
    net.push("mixed6", module_b(768, 160, rng));
    net.push("mixed7", module_b(768, 192, rng));
    net.push("mixed8", module_reduction_b(768, rng)); // 320+192+768 = 1280
    net.push("mixed9", module_c(1280, rng)); // 320+768+768+192 = 2048
    net.push("mixed10", module_c(2048, rng));
    (net, 2048)
}
