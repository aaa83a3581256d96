//! `root/<class_name>/<image files>` ingestion and PNG export.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb, RgbImage};

use super::IMAGE_SIZE;
use crate::data::{DomainDataset, Image, LabeledSample, Split};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "ppm"];

fn parse_split(split: &str) -> Result<Split> {
    match split {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::path(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::path(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Converts an RGB image to a float CHW [`Image`], resizing to the
/// network's input size.
pub fn rgb_to_image(rgb: &RgbImage, size: usize) -> Image {
    let resized;
    let src = if rgb.width() as usize != size || rgb.height() as usize != size {
        resized = image::imageops::resize(rgb, size as u32, size as u32, FilterType::Triangle);
        &resized
    } else {
        rgb
    };
    let mut img = Image::filled(3, size, size, 0.0);
    for (x, y, px) in src.enumerate_pixels() {
        for c in 0..3 {
            img.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
        }
    }
    img
}

pub fn image_to_rgb(image: &Image) -> RgbImage {
    RgbImage::from_fn(image.width as u32, image.height as u32, |x, y| {
        let px = |c: usize| {
            let c = c.min(image.channels - 1);
            (image.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

/// Loads a class-per-directory image set. If `root/<split>` exists it is
/// used as the dataset directory, otherwise `root` itself. Class indices
/// follow the lexicographic order of the non-empty class directories.
pub fn load_image_folder(root: impl AsRef<Path>, split: &str) -> Result<DomainDataset> {
    let root = root.as_ref();
    let split_kind = parse_split(split)?;
    if !root.is_dir() {
        return Err(Error::path(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let dir = if root.join(split).is_dir() {
        root.join(split)
    } else {
        root.to_path_buf()
    };
    let domain = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "folder".into());

    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    for class_dir in sorted_entries(&dir)?.into_iter().filter(|p| p.is_dir()) {
        let class_name = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let files: Vec<PathBuf> = sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        if files.is_empty() {
            log::warn!("skipping empty class directory {}", class_dir.display());
            continue;
        }
        let label = class_names.len();
        class_names.push(class_name.clone());
        for file in files {
            let decoded = image::open(&file).map_err(|e| Error::ImageDecode {
                path: file.clone(),
                message: e.to_string(),
            })?;
            let stem = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            samples.push(LabeledSample {
                id: format!("{domain}/{split}/{class_name}/{stem}"),
                image: rgb_to_image(&decoded.to_rgb8(), IMAGE_SIZE),
                label,
            });
        }
    }
    DomainDataset::new(domain, split_kind, class_names, samples)
}

/// Writes `root/<class_name>/<sample_id>.png` (8-bit RGB) for every sample.
pub fn export_image_folder(dataset: &DomainDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for name in &dataset.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::path(&dir, e))?;
    }
    for s in &dataset.samples {
        let file_name = s.id.replace(['/', '\\'], "_");
        let path = root
            .join(&dataset.class_names[s.label])
            .join(format!("{file_name}.png"));
        image_to_rgb(&s.image).save(&path)?;
    }
    Ok(())
}
