//! Generate the ShiftShapes domains, export them as image folders and save
//! a preview with one row per domain.
//!
//! ```text
//! cargo run --release --example generate_benchmark -- [out_dir] [per_class]
//! ```

use std::path::PathBuf;

use csuda::benchmarks::{export_image_folder, generate_shiftshapes_split, load_image_folder, DomainTransformSpec, GLYPH_NAMES};
use csuda::data::{Image, Split};
use csuda::harness::synthesis_grid;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "shiftshapes".into()).into();
    let per_class: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let classes = 7;
    println!("classes: {}", GLYPH_NAMES[..classes].join(", "));

    let mut domains = Vec::new();
    for name in ["photo", "art", "cartoon", "sketch", "inverted"] {
        let spec = DomainTransformSpec::preset(name)?;
        for split in [Split::Train, Split::Test] {
            let data = generate_shiftshapes_split(classes, per_class, &spec, 1, split)?;
            let dir = out.join(name).join(split.to_string());
            export_image_folder(&data, &dir)?;
            let back = load_image_folder(out.join(name), &split.to_string())?;
            println!("{name:>9}/{split:<5} {} images -> {}  (reloaded {})", data.len(), dir.display(), back.len());
            if split == Split::Train {
                domains.push(data);
            }
        }
    }

    // two glyphs of every class per domain; the grid helper interleaves the
    // halves, so rows read photo, cartoon, art, sketch
    let rows: Vec<Vec<&Image>> = domains[..4]
        .iter()
        .map(|d| d.samples.iter().step_by(per_class / 2).map(|s| &s.image).collect())
        .collect();
    let (top, bottom) = rows.split_at(rows.len() / 2);
    let preview = out.join("preview.png");
    synthesis_grid(top, bottom)?.save(&preview)?;
    println!("wrote {}", preview.display());
    Ok(())
}
