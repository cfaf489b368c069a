//! The four augmentation categories: spatial transforms, photometric shifts,
//! occlusions, and superimposition.
//!
//! All parameters are exact transform values, not sampling ranges; the seed
//! drives only noise values and occlusion box placement. A default (all-zero)
//! spec is a bit-exact identity, which keeps augmented and clean pipelines
//! directly comparable.

use super::{ImageBuffer, PreprocessError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Affine warp parameters. Positive rotation turns the content clockwise;
/// shear is a horizontal skew by the given angle; `zoom` is a magnification
/// delta (0 = identity, 0.2 = 20% zoom in); shifts are fractions of the image
/// dimensions added to the pixel translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialSpec {
    pub rotation_deg: f64,
    pub translate_x_px: f64,
    pub translate_y_px: f64,
    pub shear_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub zoom: f64,
    pub channel_shift: f64,
}

/// Intensity adjustments, applied in the order noise, brightness, contrast,
/// saturation, hue. Contrast and saturation are factor deltas (0 = identity).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricSpec {
    pub noise_sigma: f64,
    pub brightness_delta: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift_deg: f64,
}

/// Opaque boxes blanked out of the image at seeded random positions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionSpec {
    pub count: usize,
    pub max_box_fraction: f64,
}

/// Alpha blend with a donor image of identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperimposeSpec {
    pub alpha: f64,
    pub donor: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentSpec {
    pub spatial: SpatialSpec,
    pub photometric: PhotometricSpec,
    pub occlusion: OcclusionSpec,
    pub superimpose: Option<SuperimposeSpec>,
}

impl AugmentSpec {
    fn validate(&self, img: &ImageBuffer) -> Result<(), PreprocessError> {
        let s = &self.spatial;
        let finite = [
            s.rotation_deg,
            s.translate_x_px,
            s.translate_y_px,
            s.shear_deg,
            s.width_shift_frac,
            s.height_shift_frac,
            s.zoom,
            s.channel_shift,
            self.photometric.noise_sigma,
            self.photometric.brightness_delta,
            self.photometric.contrast,
            self.photometric.saturation,
            self.photometric.hue_shift_deg,
            self.occlusion.max_box_fraction,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::InvalidSpec("non-finite parameter".into()));
        }
        if s.zoom <= -1.0 {
            return Err(PreprocessError::InvalidSpec("zoom must be > -1".into()));
        }
        if s.shear_deg.abs() >= 89.0 {
            return Err(PreprocessError::InvalidSpec("shear must be within ±89°".into()));
        }
        if self.photometric.noise_sigma < 0.0 {
            return Err(PreprocessError::InvalidSpec("noise sigma must be ≥ 0".into()));
        }
        if self.photometric.contrast <= -1.0 || self.photometric.saturation < -1.0 {
            return Err(PreprocessError::InvalidSpec(
                "contrast/saturation factor delta out of range".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.occlusion.max_box_fraction) {
            return Err(PreprocessError::InvalidSpec(
                "occlusion box fraction must lie in [0,1]".into(),
            ));
        }
        if let Some(sp) = &self.superimpose {
            if !(0.0..=1.0).contains(&sp.alpha) {
                return Err(PreprocessError::InvalidSpec("alpha must lie in [0,1]".into()));
            }
            if sp.donor.height() != img.height()
                || sp.donor.width() != img.width()
                || sp.donor.channels() != img.channels()
            {
                return Err(PreprocessError::InvalidSpec(
                    "donor dimensions must match the image".into(),
                ));
            }
        }
        Ok(())
    }
}

fn border_color(img: &ImageBuffer) -> [u8; 3] {
    let (h, w) = (img.height(), img.width());
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || y == h - 1 || x == 0 || x == w - 1 {
                for c in 0..3 {
                    sums[c] += u64::from(img.get(y, x, c));
                }
                count += 1;
            }
        }
    }
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((sums[c] as f64 / count as f64).round()) as u8;
    }
    out
}

fn warp_affine(img: &ImageBuffer, s: &SpatialSpec) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let theta = s.rotation_deg.to_radians();
    let shear = s.shear_deg.to_radians().tan();
    let scale = 1.0 + s.zoom;
    // Forward linear part: rotation · shear · scale.
    let (sin, cos) = theta.sin_cos();
    let (r00, r01, r10, r11) = (cos, -sin, sin, cos);
    // shear: [[1, shear], [0, 1]], then uniform scale.
    let l00 = (r00 + r01 * 0.0) * scale;
    let l01 = (r00 * shear + r01) * scale;
    let l10 = (r10 + r11 * 0.0) * scale;
    let l11 = (r10 * shear + r11) * scale;
    let tx = s.translate_x_px + s.width_shift_frac * w as f64;
    let ty = s.translate_y_px + s.height_shift_frac * h as f64;
    // dst = L·(src − c) + c + t  ⇒  src = L⁻¹·(dst − c − t) + c
    let det = l00 * l11 - l01 * l10;
    let (i00, i01, i10, i11) = (l11 / det, -l01 / det, -l10 / det, l00 / det);
    let fill = border_color(img);
    let mut out = ImageBuffer::filled(h, w, 3, 0);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = i00 * dx + i01 * dy + cx;
            let sy = i10 * dx + i11 * dy + cy;
            if sx < -0.5 || sx > w as f64 - 0.5 || sy < -0.5 || sy > h as f64 - 0.5 {
                for c in 0..3 {
                    out.set(y, x, c, fill[c]);
                }
                continue;
            }
            let x0f = sx.floor();
            let y0f = sy.floor();
            let fx = sx - x0f;
            let fy = sy - y0f;
            let x0 = (x0f as isize).clamp(0, w as isize - 1) as usize;
            let x1 = (x0f as isize + 1).clamp(0, w as isize - 1) as usize;
            let y0 = (y0f as isize).clamp(0, h as isize - 1) as usize;
            let y1 = (y0f as isize + 1).clamp(0, h as isize - 1) as usize;
            for c in 0..3 {
                let top = f64::from(img.get(y0, x0, c)) * (1.0 - fx)
                    + f64::from(img.get(y0, x1, c)) * fx;
                let bot = f64::from(img.get(y1, x0, c)) * (1.0 - fx)
                    + f64::from(img.get(y1, x1, c)) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out.set(y, x, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / d).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Apply `spec` to a 3-channel image. Deterministic in `rng_seed`; output
/// dimensions equal the input; regions warped in from outside the frame are
/// filled with the image's border color.
pub fn augment(
    img: &ImageBuffer,
    spec: &AugmentSpec,
    rng_seed: u64,
) -> Result<ImageBuffer, PreprocessError> {
    if img.channels() != 3 {
        return Err(PreprocessError::UnsupportedChannels(img.channels()));
    }
    spec.validate(img)?;
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let s = &spec.spatial;

    let mut out = if s.rotation_deg != 0.0
        || s.translate_x_px != 0.0
        || s.translate_y_px != 0.0
        || s.shear_deg != 0.0
        || s.width_shift_frac != 0.0
        || s.height_shift_frac != 0.0
        || s.zoom != 0.0
    {
        warp_affine(img, s)
    } else {
        img.clone()
    };

    if s.channel_shift != 0.0 {
        for v in out_data_mut(&mut out) {
            *v = clamp_u8(f64::from(*v) + s.channel_shift);
        }
    }

    let p = &spec.photometric;
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).expect("validated sigma");
        for v in out_data_mut(&mut out) {
            *v = clamp_u8(f64::from(*v) + normal.sample(&mut rng));
        }
    }
    if p.brightness_delta != 0.0 {
        for v in out_data_mut(&mut out) {
            *v = clamp_u8(f64::from(*v) + p.brightness_delta);
        }
    }
    if p.contrast != 0.0 {
        let factor = 1.0 + p.contrast;
        for v in out_data_mut(&mut out) {
            *v = clamp_u8((f64::from(*v) - 128.0) * factor + 128.0);
        }
    }
    if p.saturation != 0.0 {
        let factor = 1.0 + p.saturation;
        let (h, w) = (out.height(), out.width());
        for y in 0..h {
            for x in 0..w {
                let r = f64::from(out.get(y, x, 0));
                let g = f64::from(out.get(y, x, 1));
                let b = f64::from(out.get(y, x, 2));
                let gray = 0.299 * r + 0.587 * g + 0.114 * b;
                out.set(y, x, 0, clamp_u8(gray + factor * (r - gray)));
                out.set(y, x, 1, clamp_u8(gray + factor * (g - gray)));
                out.set(y, x, 2, clamp_u8(gray + factor * (b - gray)));
            }
        }
    }
    if p.hue_shift_deg != 0.0 {
        let (h, w) = (out.height(), out.width());
        for y in 0..h {
            for x in 0..w {
                let r = f64::from(out.get(y, x, 0)) / 255.0;
                let g = f64::from(out.get(y, x, 1)) / 255.0;
                let b = f64::from(out.get(y, x, 2)) / 255.0;
                let (hue, sat, val) = rgb_to_hsv(r, g, b);
                let (r2, g2, b2) = hsv_to_rgb(hue + p.hue_shift_deg, sat, val);
                out.set(y, x, 0, clamp_u8(r2 * 255.0));
                out.set(y, x, 1, clamp_u8(g2 * 255.0));
                out.set(y, x, 2, clamp_u8(b2 * 255.0));
            }
        }
    }

    if spec.occlusion.count > 0 && spec.occlusion.max_box_fraction > 0.0 {
        let (h, w) = (out.height(), out.width());
        let max_bw = ((spec.occlusion.max_box_fraction * w as f64) as usize).max(1);
        let max_bh = ((spec.occlusion.max_box_fraction * h as f64) as usize).max(1);
        for _ in 0..spec.occlusion.count {
            let bw = rng.random_range(1..=max_bw);
            let bh = rng.random_range(1..=max_bh);
            let x0 = rng.random_range(0..=w.saturating_sub(bw));
            let y0 = rng.random_range(0..=h.saturating_sub(bh));
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    for c in 0..3 {
                        out.set(y, x, c, 0);
                    }
                }
            }
        }
    }

    if let Some(sp) = &spec.superimpose {
        let (h, w) = (out.height(), out.width());
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = sp.alpha * f64::from(sp.donor.get(y, x, c))
                        + (1.0 - sp.alpha) * f64::from(out.get(y, x, c));
                    out.set(y, x, c, clamp_u8(v));
                }
            }
        }
    }

    Ok(out)
}

fn out_data_mut(img: &mut ImageBuffer) -> impl Iterator<Item = &mut u8> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    debug_assert_eq!(h * w * ch, img.data().len());
    img.data_mut().iter_mut()
}

impl ImageBuffer {
    pub(crate) fn data_mut(&mut self) -> &mut Vec<u8> {
        &mut self.data
    }
}
