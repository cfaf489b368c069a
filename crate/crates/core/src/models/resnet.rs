//! ResNet-50 feature extractor: 7×7 stem, max pool, then four stages of
//! 1×1/3×3/1×1 bottleneck blocks (3, 4, 6, 3 deep) with projection shortcuts
//! at each stage entry. Convolutions carry no bias; batch norm follows each.

use crate::nn::{Activation, ConvBnAct, MaxPool2d, ResidualAdd, Scalar, Sequential};
use rand::Rng;

/// One bottleneck: reduce 1×1 → 3×3 (strided at stage entry) → expand 1×1,
/// plus an optional 1×1 projection shortcut, ReLU after the add.
pub(crate) fn bottleneck<F: Scalar, R: Rng>(
    in_channels: usize,
    mid_channels: usize,
    out_channels: usize,
    stride: usize,
    rng: &mut R,
) -> ResidualAdd<F> {
    let mut main = Sequential::new();
    main.push(
        "conv1",
        ConvBnAct::new(
            in_channels,
            mid_channels,
            (1, 1),
            (1, 1),
            (0, 0),
            1,
            Some(Activation::Relu),
            rng,
        ),
    );
    main.push(
        "conv2",
        ConvBnAct::new(
            mid_channels,
            mid_channels,
            (3, 3),
            (stride, stride),
            (1, 1),
            1,
            Some(Activation::Relu),
            rng,
        ),
    );
    main.push(
        "conv3",
        ConvBnAct::new(
            mid_channels,
            out_channels,
            (1, 1),
            (1, 1),
            (0, 0),
            1,
            None,
            rng,
        ),
    );
    let shortcut = if stride != 1 || in_channels != out_channels {
        let mut s = Sequential::new();
        s.push(
            "downsample",
            ConvBnAct::new(
                in_channels,
                out_channels,
                (1, 1),
                (stride, stride),
                (0, 0),
                1,
                None,
                rng,
            ),
        );
        Some(s)
    } else {
        None
    };
    ResidualAdd::new(main, shortcut, true)
}

/// Full-size backbone; returns the feature stack and its channel count.
pub fn build<F: Scalar, R: Rng>(rng: &mut R) -> (Sequential<F>, usize) {
    build_with(&[3, 4, 6, 3], 64, rng)
}

pub(crate) fn build_with<F: Scalar, R: Rng>(
    depths: &[usize; 4],
    base_width: usize,
    rng: &mut R,
) -> (Sequential<F>, usize) {
    let mut net = Sequential::new();
    net.push(
        "conv1",
        ConvBnAct::new(3, base_width, (7, 7), (2, 2), (3, 3), 1, Some(Activation::Relu), rng),
    );
    net.push("maxpool", MaxPool2d::new((3, 3), (2, 2), (1, 1)));
    let mut in_channels = base_width;
    let mut mid = base_width;
    for (stage, &depth) in depths.iter().enumerate() {
        let out_channels = mid * 4;
        for block in 0..depth {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            net.push(
                &format!("layer{}.{block}", stage + 1),
                bottleneck(in_channels, mid, out_channels, stride, rng),
            );
            in_channels = out_channels;
        }
        mid *= 2;
    }
    (net, in_channels)
}
