//! Image-level domain transforms that induce covariate shift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

/// Transform pipeline kinds accepted by [`DomainTransformSpec::name`].
pub const KNOWN_TRANSFORMS: [&str; 9] = [
    "identity", "photo", "hue_rotate", "art", "inverted", "cartoon", "edge_sketch", "sketch", "custom",
];

/// Parameters of a domain transform. Steps run in this order: rotation,
/// hue shift, posterisation, edge extraction, inversion, additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainTransformSpec {
    pub name: String,
    /// Rotation about the image centre in degrees, `[-45, 45]`.
    pub rotation_deg: f32,
    /// Hue rotation in degrees, `[0, 360)`.
    pub hue_shift_deg: f32,
    pub invert: bool,
    /// Number of quantisation levels per channel; 0 disables, otherwise `[2, 16]`.
    pub posterize_levels: u32,
    /// Replace the image by dark edges (Sobel magnitude) on white.
    pub edge: bool,
    /// Edge-strength multiplier, `(0, 10]`.
    pub edge_gain: f32,
    /// Fraction of the original luminance kept under the edges, `[0, 1]`.
    pub edge_fill: f32,
    /// Per-sample fill is drawn uniformly from `edge_fill ± edge_fill_spread`
    /// (clamped to `[0, 1]`), `[0, 1]`.
    pub edge_fill_spread: f32,
    /// Standard deviation of additive Gaussian pixel noise, `[0, 0.2]`.
    pub noise_sigma: f32,
}

impl Default for DomainTransformSpec {
    fn default() -> Self {
        Self {
            name: "identity".into(),
            rotation_deg: 0.0,
            hue_shift_deg: 0.0,
            invert: false,
            posterize_levels: 0,
            edge: false,
            edge_gain: 1.0,
            edge_fill: 0.0,
            edge_fill_spread: 0.0,
            noise_sigma: 0.02,
        }
    }
}

impl DomainTransformSpec {
    /// Built-in domain by name: `photo`, `art`, `cartoon`, `sketch` or
    /// `inverted` (plus the long aliases in [`KNOWN_TRANSFORMS`]).
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let spec = match name {
            "identity" | "photo" => Self {
                name: name.into(),
                ..base
            },
            "hue_rotate" | "art" => Self {
                name: name.into(),
                hue_shift_deg: 120.0,
                rotation_deg: 20.0,
                ..base
            },
            "inverted" => Self {
                name: name.into(),
                invert: true,
                ..base
            },
            "cartoon" => Self {
                name: name.into(),
                invert: true,
                posterize_levels: 3,
                ..base
            },
            "edge_sketch" | "sketch" => Self {
                name: name.into(),
                edge: true,
                edge_gain: 0.8,
                edge_fill: 0.7,
                ..base
            },
            other => return Err(Error::UnknownTransform(other.into())),
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !KNOWN_TRANSFORMS.contains(&self.name.as_str()) {
            return Err(Error::UnknownTransform(self.name.clone()));
        }
        let bad = |what: &str| Err(Error::Config(format!("transform {}: {what}", self.name)));
        if !(-45.0..=45.0).contains(&self.rotation_deg) {
            return bad("rotation_deg outside [-45, 45]");
        }
        if !(0.0..360.0).contains(&self.hue_shift_deg) {
            return bad("hue_shift_deg outside [0, 360)");
        }
        if self.posterize_levels == 1 || self.posterize_levels > 16 {
            return bad("posterize_levels must be 0 or in [2, 16]");
        }
        if !(self.edge_gain > 0.0 && self.edge_gain <= 10.0) {
            return bad("edge_gain outside (0, 10]");
        }
        if !(0.0..=1.0).contains(&self.edge_fill) {
            return bad("edge_fill outside [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.edge_fill_spread) {
            return bad("edge_fill_spread outside [0, 1]");
        }
        if !(0.0..=0.2).contains(&self.noise_sigma) {
            return bad("noise_sigma outside [0, 0.2]");
        }
        Ok(())
    }

    /// Applies every step except noise, with per-sample parameters at
    /// their central values.
    pub fn apply_clean(&self, image: &Image) -> Image {
        self.apply_with_fill(image, self.edge_fill)
    }

    /// Draws the per-sample parameters from `rng`, then applies every step
    /// except noise.
    pub fn apply_sampled<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        let fill = if self.edge_fill_spread > 0.0 {
            let lo = (self.edge_fill - self.edge_fill_spread).max(0.0);
            let hi = (self.edge_fill + self.edge_fill_spread).min(1.0);
            rng.random_range(lo..=hi)
        } else {
            self.edge_fill
        };
        self.apply_with_fill(image, fill)
    }

    fn apply_with_fill(&self, image: &Image, fill: f32) -> Image {
        let mut out = image.clone();
        if self.rotation_deg != 0.0 {
            out = rotate(&out, self.rotation_deg);
        }
        if self.hue_shift_deg != 0.0 {
            hue_shift(&mut out, self.hue_shift_deg);
        }
        if self.posterize_levels >= 2 {
            let l = (self.posterize_levels - 1) as f32;
            for v in &mut out.data {
                *v = (*v * l).round() / l;
            }
        }
        if self.edge {
            out = edge_sketch(&out, self.edge_gain, fill);
        }
        if self.invert {
            for v in &mut out.data {
                *v = 1.0 - *v;
            }
        }
        out
    }
}

/// Bilinear rotation about the centre with edge replication.
fn rotate(image: &Image, degrees: f32) -> Image {
    let (c, h, w) = image.shape();
    let (s, co) = degrees.to_radians().sin_cos();
    let (cy, cx) = (h as f32 / 2.0 - 0.5, w as f32 / 2.0 - 0.5);
    let mut out = Image::filled(c, h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let sx = (co * dx + s * dy + cx).clamp(0.0, (w - 1) as f32);
            let sy = (-s * dx + co * dy + cy).clamp(0.0, (h - 1) as f32);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
            for ch in 0..c {
                let top = image.get(ch, y0, x0) * (1.0 - fx) + image.get(ch, y0, x1) * fx;
                let bot = image.get(ch, y1, x0) * (1.0 - fx) + image.get(ch, y1, x1) * fx;
                out.set(ch, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

pub(crate) fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    } * 60.0;
    let s = if max <= 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
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

fn hue_shift(image: &mut Image, degrees: f32) {
    if image.channels != 3 {
        return;
    }
    for y in 0..image.height {
        for x in 0..image.width {
            let (h, s, v) = rgb_to_hsv(image.get(0, y, x), image.get(1, y, x), image.get(2, y, x));
            let (r, g, b) = hsv_to_rgb(h + degrees, s, v);
            image.set(0, y, x, r);
            image.set(1, y, x, g);
            image.set(2, y, x, b);
        }
    }
}

/// Dark Sobel edges of the luminance on a white background, optionally
/// over a faded copy of the luminance.
fn edge_sketch(image: &Image, gain: f32, fill: f32) -> Image {
    let (c, h, w) = image.shape();
    let gray: Vec<f32> = (0..h * w)
        .map(|i| (0..c).map(|ch| image.data[ch * h * w + i]).sum::<f32>() / c as f32)
        .collect();
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        gray[y * w + x]
    };
    let mut out = Image::filled(c, h, w, 1.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            let edge = ((gx * gx + gy * gy).sqrt() * gain / 4.0).clamp(0.0, 1.0);
            let base = 1.0 - fill * (1.0 - at(y, x));
            for ch in 0..c {
                out.set(ch, y as usize, x as usize, base * (1.0 - edge));
            }
        }
    }
    out
}
