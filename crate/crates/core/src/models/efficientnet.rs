//! EfficientNet-B0 feature extractor: swish-activated stem, seven stages of
//! mobile inverted bottleneck (MBConv) blocks with squeeze-excitation, and a
//! 1×1 expansion to 1280 channels.

use crate::nn::{
    Activation, ConvBnAct, Layer, ResidualAdd, Scalar, Sequential, SqueezeExcite,
};
use rand::Rng;

const SILU: Option<Activation> = Some(Activation::Silu);

/// MBConv: optional 1×1 expansion, depthwise conv, squeeze-excitation sized
/// from the block's input channels, linear 1×1 projection; identity skip when
/// the block preserves shape.
pub(crate) fn mbconv<F: Scalar, R: Rng>(
    in_channels: usize,
    out_channels: usize,
    expand_ratio: usize,
    kernel: usize,
    stride: usize,
    rng: &mut R,
) -> Box<dyn Layer<F> + Send + Sync> {
    let expanded = in_channels * expand_ratio;
    let se_reduced = (in_channels / 4).max(1);
    let pad = kernel / 2;
    let mut main = Sequential::new();
    if expand_ratio != 1 {
        main.push(
            "expand",
            ConvBnAct::new(in_channels, expanded, (1, 1), (1, 1), (0, 0), 1, SILU, rng),
        );
    }
    main.push(
        "dwconv",
        ConvBnAct::new(
            expanded,
            expanded,
            (kernel, kernel),
            (stride, stride),
            (pad, pad),
            expanded,
            SILU,
            rng,
        ),
    );
    main.push(
        "se",
        SqueezeExcite::new(expanded, se_reduced, Activation::Silu, rng),
    );
    main.push(
        "project",
        ConvBnAct::new(expanded, out_channels, (1, 1), (1, 1), (0, 0), 1, None, rng),
    );
    if stride == 1 && in_channels == out_channels {
        Box::new(ResidualAdd::new(main, None, false))
    } else {
        Box::new(main)
    }
}

/// (expand_ratio, kernel, stride, output channels, repeats)
const B0_STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 16, 1),
    (6, 3, 2, 24, 2),
    (6, 5, 2, 40, 2),
    (6, 3, 2, 80, 3),
    (6, 5, 1, 112, 3),
    (6, 5, 2, 192, 4),
    (6, 3, 1, 320, 1),
];

/// Full-size backbone; returns the feature stack and its channel count.
pub fn build<F: Scalar, R: Rng>(rng: &mut R) -> (Sequential<F>, usize) {
    let mut net = Sequential::new();
    net.push(
        "stem",
        ConvBnAct::new(3, 32, (3, 3), (2, 2), (1, 1), 1, SILU, rng),
    );
    let mut in_channels = 32;
    let mut index = 0;
    for (expand, kernel, stride, out, repeats) in B0_STAGES {
        for r in 0..repeats {
            let s = if r == 0 { stride } else { 1 };
            let block = mbconv::<F, R>(in_channels, out, expand, kernel, s, rng);
            push_boxed(&mut net, &format!("block{index}"), block);
            in_channels = out;
            index += 1;
        }
    }
    net.push(
        "top",
        ConvBnAct::new(in_channels, 1280, (1, 1), (1, 1), (0, 0), 1, SILU, rng),
    );
    (net, 1280)
}

pub(crate) fn push_boxed<F: Scalar>(
    net: &mut Sequential<F>,
    name: &str,
    layer: Box<dyn Layer<F> + Send + Sync>,
) {
    struct Boxed<F: Scalar>(Box<dyn Layer<F> + Send + Sync>);
    impl<F: Scalar> Layer<F> for Boxed<F> {
        fn forward(&mut self, x: &ndarray::Array4<F>, train: bool) -> ndarray::Array4<F> {
            self.0.forward(x, train)
        }
        fn backward(&mut self, grad: &ndarray::Array4<F>) -> ndarray::Array4<F> {
            self.0.backward(grad)
        }
        fn visit(
            &mut self,
            prefix: &str,
            f: &mut dyn FnMut(&str, crate::nn::TensorRole, &mut crate::nn::Param<F>),
        ) {
            self.0.visit(prefix, f)
        }
    }
    net.push(name, Boxed(layer));
}
