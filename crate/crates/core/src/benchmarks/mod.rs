//! ShiftShapes: a procedural multi-domain glyph benchmark, plus image-folder
//! ingestion and export for real datasets.
//!
//! Every sample draws from its own ChaCha stream keyed by
//! `(seed, split, class, index)` and the stream does not depend on the
//! domain, so the same seed yields the same glyph geometry and colours in
//! every domain. Domains differ only through their [`DomainTransformSpec`].

pub mod folder;
pub mod glyphs;
pub mod transforms;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DomainDataset, Image, LabeledSample, Split};
use crate::error::{Error, Result};

pub use folder::{export_image_folder, load_image_folder};
pub use glyphs::{GLYPH_NAMES, MAX_CLASSES};
pub use transforms::DomainTransformSpec;
use transforms::hsv_to_rgb;

pub const IMAGE_SIZE: usize = 32;
pub const MIN_PER_CLASS: usize = 8;

/// Per-sample geometric and photometric variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphJitter {
    pub max_shift_px: f32,
    pub scale_range: f32,
}

impl Default for GlyphJitter {
    fn default() -> Self {
        Self {
            max_shift_px: 3.0,
            scale_range: 0.15,
        }
    }
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Test => 2,
    }
}

fn sample_rng(seed: u64, split: Split, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split_code(split) << 48) | ((class as u64) << 24) | index as u64);
    rng
}

/// Renders one glyph with random placement and colours (before any domain
/// transform or noise).
pub fn render_glyph<R: Rng + ?Sized>(class: usize, jitter: &GlyphJitter, rng: &mut R) -> Image {
    let n = IMAGE_SIZE;
    let tx = rng.random_range(-jitter.max_shift_px..=jitter.max_shift_px);
    let ty = rng.random_range(-jitter.max_shift_px..=jitter.max_shift_px);
    let scale = 1.0 + rng.random_range(-jitter.scale_range..=jitter.scale_range);
    let fg = hsv_to_rgb(
        rng.random_range(0.0..360.0),
        rng.random_range(0.6..1.0),
        rng.random_range(0.45..0.85),
    );
    let bg = hsv_to_rgb(
        rng.random_range(0.0..360.0),
        rng.random_range(0.0..0.25),
        rng.random_range(0.8..1.0),
    );
    let half = n as f32 / 2.0;
    let extent = 13.0 * scale;
    let mut img = Image::filled(3, n, n, 0.0);
    // 2x2 supersampling for anti-aliased edges.
    let offsets = [0.25f32, 0.75];
    for y in 0..n {
        for x in 0..n {
            let mut cover = 0.0;
            for oy in offsets {
                for ox in offsets {
                    let u = (x as f32 + ox - half - tx) / extent;
                    let v = (y as f32 + oy - half - ty) / extent;
                    if glyphs::inside(class, u, v) {
                        cover += 0.25;
                    }
                }
            }
            // Soft vertical lighting gradient on the background and a
            // diagonal one on the glyph.
            let shade_bg = 0.92 + 0.08 * (y as f32 / n as f32);
            let shade_fg = 0.85 + 0.15 * (1.0 - (x + y) as f32 / (2 * n) as f32);
            for (ch, (f, b)) in [(fg.0, bg.0), (fg.1, bg.1), (fg.2, bg.2)].into_iter().enumerate() {
                let v = cover * f * shade_fg + (1.0 - cover) * b * shade_bg;
                img.set(ch, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Generates the training split of one ShiftShapes domain.
pub fn generate_shiftshapes(
    num_classes: usize,
    per_class: usize,
    domain: &DomainTransformSpec,
    seed: u64,
) -> Result<DomainDataset> {
    generate_shiftshapes_split(num_classes, per_class, domain, seed, Split::Train)
}

/// Generates one split of a ShiftShapes domain. Samples are ordered
/// class-major; ids are `{domain}-{split}-{class:02}-{index:04}`.
pub fn generate_shiftshapes_split(
    num_classes: usize,
    per_class: usize,
    domain: &DomainTransformSpec,
    seed: u64,
    split: Split,
) -> Result<DomainDataset> {
    if !(2..=MAX_CLASSES).contains(&num_classes) {
        return Err(Error::Config(format!(
            "num_classes must be in [2, {MAX_CLASSES}], got {num_classes}"
        )));
    }
    if per_class < MIN_PER_CLASS {
        return Err(Error::Config(format!(
            "per_class must be at least {MIN_PER_CLASS}, got {per_class}"
        )));
    }
    domain.validate()?;
    let jitter = GlyphJitter::default();
    let noise = (domain.noise_sigma > 0.0)
        .then(|| Normal::new(0.0f32, domain.noise_sigma).expect("valid sigma"));
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for index in 0..per_class {
            let mut rng = sample_rng(seed, split, class, index);
            let clean = render_glyph(class, &jitter, &mut rng);
            let mut image = domain.apply_sampled(&clean, &mut rng);
            if let Some(noise) = &noise {
                for v in &mut image.data {
                    *v += noise.sample(&mut rng);
                }
            }
            image.clamp_unit();
            samples.push(LabeledSample {
                id: format!("{}-{}-{class:02}-{index:04}", domain.name, split),
                image,
                label: class,
            });
        }
    }
    let class_names = GLYPH_NAMES[..num_classes].iter().map(|s| s.to_string()).collect();
    DomainDataset::new(domain.name.clone(), split, class_names, samples)
}
