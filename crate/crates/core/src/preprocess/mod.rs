//! Image preprocessing: resizing, channel handling, and the three batch
//! normalization conventions (`caffe`, `tf`, `torch`), plus augmentations.
//!
//! `caffe` converts RGB to BGR and subtracts per-channel means without
//! scaling, `tf` rescales pixels linearly into [-1, 1], and `torch` rescales
//! to [0, 1] then standardizes each channel. The caffe/torch channel
//! statistics are configuration constants (defaulting to the usual ImageNet
//! values) rather than quantities this crate derives.

mod augment;

pub use augment::{augment, AugmentSpec, OcclusionSpec, PhotometricSpec, SpatialSpec, SuperimposeSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("output dimensions must be nonzero, got {0}x{1}")]
    InvalidDimension(usize, usize),
    #[error("unsupported channel count {0}; expected 1 or 3")]
    UnsupportedChannels(usize),
    #[error("image {index} is {h}x{w}x{c}, expected {eh}x{ew}x3")]
    ShapeError {
        index: usize,
        h: usize,
        w: usize,
        c: usize,
        eh: usize,
        ew: usize,
    },
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
}

/// 8-bit image, row-major, RGB channel order (or a single gray channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Self {
        assert!(
            channels == 1 || channels == 3,
            "channels must be 1 or 3, got {channels}"
        );
        assert_eq!(data.len(), height * width * channels, "data length mismatch");
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Normalization convention identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Caffe,
    Tf,
    Torch,
}

impl std::fmt::Display for ModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModeKind::Caffe => "caffe",
            ModeKind::Tf => "tf",
            ModeKind::Torch => "torch",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caffe" => Ok(ModeKind::Caffe),
            "tf" => Ok(ModeKind::Tf),
            "torch" => Ok(ModeKind::Torch),
            other => Err(format!("unknown preprocess mode {other:?}")),
        }
    }
}

/// ImageNet channel means in BGR order, 8-bit intensity units (caffe mode).
pub const CAFFE_BGR_MEANS: [f32; 3] = [103.939, 116.779, 123.68];
/// ImageNet channel means in RGB order, unit scale (torch mode).
pub const TORCH_RGB_MEANS: [f32; 3] = [0.485, 0.456, 0.406];
/// ImageNet channel standard deviations in RGB order, unit scale (torch mode).
pub const TORCH_RGB_STDS: [f32; 3] = [0.229, 0.224, 0.225];

/// One of the `caffe` / `tf` / `torch` conventions with its channel constants.
///
/// For caffe the means are in BGR order and 8-bit units; for torch the
/// means/stds are in RGB order on the unit scale; tf uses neither.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMode {
    pub mode: ModeKind,
    pub channel_means: [f32; 3],
    pub channel_stds: [f32; 3],
}

impl PreprocessMode {
    /// The default mode: RGB→BGR plus zero-centering against the configured
    /// means, no scaling.
    pub fn caffe() -> Self {
        Self {
            mode: ModeKind::Caffe,
            channel_means: CAFFE_BGR_MEANS,
            channel_stds: [1.0; 3],
        }
    }

    pub fn caffe_with_means(means: [f32; 3]) -> Self {
        Self {
            channel_means: means,
            ..Self::caffe()
        }
    }

    /// Linear rescale of each pixel into [-1, 1].
    pub fn tf() -> Self {
        Self {
            mode: ModeKind::Tf,
            channel_means: [0.0; 3],
            channel_stds: [1.0; 3],
        }
    }

    /// Rescale to [0, 1], then standardize each channel.
    pub fn torch() -> Self {
        Self {
            mode: ModeKind::Torch,
            channel_means: TORCH_RGB_MEANS,
            channel_stds: TORCH_RGB_STDS,
        }
    }

    pub fn from_kind(kind: ModeKind) -> Self {
        match kind {
            ModeKind::Caffe => Self::caffe(),
            ModeKind::Tf => Self::tf(),
            ModeKind::Torch => Self::torch(),
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.mode == ModeKind::Torch && self.channel_stds.iter().any(|&s| s <= 0.0) {
            return Err(PreprocessError::InvalidSpec(
                "torch stds must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for PreprocessMode {
    fn default() -> Self {
        Self::caffe()
    }
}

/// Batch of normalized images, NHWC, f32.
///
/// Channel order is BGR in caffe mode and RGB otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBatch {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl TensorBatch {
    #[inline]
    pub fn get(&self, i: usize, y: usize, x: usize, c: usize) -> f32 {
        self.values[((i * self.height + y) * self.width + x) * self.channels + c]
    }
}

/// Bilinear resize with the corner-aligned-false convention: the source
/// coordinate of output pixel `d` is `(d + 0.5) · in/out − 0.5`, samples
/// clamped at the borders, results rounded to the nearest 8-bit value.
pub fn resize_bilinear(
    img: &ImageBuffer,
    out_h: usize,
    out_w: usize,
) -> Result<ImageBuffer, PreprocessError> {
    if out_h == 0 || out_w == 0 {
        return Err(PreprocessError::InvalidDimension(out_h, out_w));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let (in_h, in_w, ch) = (img.height, img.width, img.channels);
    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;
    let mut out = vec![0u8; out_h * out_w * ch];
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let y0f = sy.floor();
        let ty = sy - y0f;
        let y0 = (y0f as isize).clamp(0, in_h as isize - 1) as usize;
        let y1 = (y0f as isize + 1).clamp(0, in_h as isize - 1) as usize;
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            let x0f = sx.floor();
            let tx = sx - x0f;
            let x0 = (x0f as isize).clamp(0, in_w as isize - 1) as usize;
            let x1 = (x0f as isize + 1).clamp(0, in_w as isize - 1) as usize;
            for c in 0..ch {
                let top = f64::from(img.get(y0, x0, c)) * (1.0 - tx)
                    + f64::from(img.get(y0, x1, c)) * tx;
                let bottom = f64::from(img.get(y1, x0, c)) * (1.0 - tx)
                    + f64::from(img.get(y1, x1, c)) * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                out[(oy * out_w + ox) * ch + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(ImageBuffer::new(out_h, out_w, ch, out))
}

/// Replicate a gray channel into RGB; pass 3-channel input through unchanged.
pub fn ensure_three_channels(img: &ImageBuffer) -> Result<ImageBuffer, PreprocessError> {
    match img.channels {
        3 => Ok(img.clone()),
        1 => {
            let mut data = Vec::with_capacity(img.data.len() * 3);
            for &v in &img.data {
                data.extend_from_slice(&[v, v, v]);
            }
            Ok(ImageBuffer::new(img.height, img.width, 3, data))
        }
        other => Err(PreprocessError::UnsupportedChannels(other)),
    }
}

/// Normalize a batch of 96×96 RGB images under `mode`.
///
/// caffe: `out[c] = in_bgr[c] − mean[c]` (no scaling, BGR output order);
/// tf: `2·(v/255) − 1`; torch: `(v/255 − mean_c)/std_c`.
pub fn preprocess_batch(
    batch: &[ImageBuffer],
    mode: &PreprocessMode,
) -> Result<TensorBatch, PreprocessError> {
    preprocess_batch_hw(batch, mode, 96, 96)
}

/// [`preprocess_batch`] for an arbitrary expected input size.
pub fn preprocess_batch_hw(
    batch: &[ImageBuffer],
    mode: &PreprocessMode,
    expect_h: usize,
    expect_w: usize,
) -> Result<TensorBatch, PreprocessError> {
    mode.validate()?;
    for (index, img) in batch.iter().enumerate() {
        if img.height != expect_h || img.width != expect_w || img.channels != 3 {
            return Err(PreprocessError::ShapeError {
                index,
                h: img.height,
                w: img.width,
                c: img.channels,
                eh: expect_h,
                ew: expect_w,
            });
        }
    }
    let n = batch.len();
    let mut values = Vec::with_capacity(n * expect_h * expect_w * 3);
    for img in batch {
        for y in 0..expect_h {
            for x in 0..expect_w {
                match mode.mode {
                    ModeKind::Caffe => {
                        // RGB → BGR, then zero-center per channel.
                        for c in 0..3 {
                            let v = f32::from(img.get(y, x, 2 - c));
                            values.push(v - mode.channel_means[c]);
                        }
                    }
                    ModeKind::Tf => {
                        for c in 0..3 {
                            let v = f32::from(img.get(y, x, c));
                            values.push(2.0 * (v / 255.0) - 1.0);
                        }
                    }
                    ModeKind::Torch => {
                        for c in 0..3 {
                            let v = f32::from(img.get(y, x, c));
                            values.push((v / 255.0 - mode.channel_means[c]) / mode.channel_stds[c]);
                        }
                    }
                }
            }
        }
    }
    Ok(TensorBatch {
        n,
        height: expect_h,
        width: expect_w,
        channels: 3,
        values,
    })
}

/// Invert caffe-mode normalization back to the 8-bit RGB image. Exact within
/// the integer cast because caffe mode applies no scaling.
pub fn invert_caffe(batch: &TensorBatch, mode: &PreprocessMode, index: usize) -> ImageBuffer {
    assert_eq!(mode.mode, ModeKind::Caffe);
    let (h, w) = (batch.height, batch.width);
    let mut data = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = batch.get(index, y, x, c) + mode.channel_means[c];
                // BGR channel c came from RGB channel 2-c.
                data[(y * w + x) * 3 + (2 - c)] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageBuffer::new(h, w, 3, data)
}
