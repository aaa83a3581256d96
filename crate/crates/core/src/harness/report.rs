//! Figures and tables derived from a run directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::config::ExperimentConfig;
use super::manifest::{ExperimentManifest, Phase};
use super::pipeline::{eval_report_path, load_domain, PRIORS_FILE, SYNTHESIS_LOSS_CSV, SYNTHETIC_SET};
use crate::benchmarks::folder::image_to_rgb;
use crate::continual::{AccuracyTable, ColumnScore, EvalReport, TableRow};
use crate::data::{Image, Split};
use crate::error::{Error, Result};
use crate::stage2::SyntheticSet;

/// Table rows (one per target domain) from whichever reports exist.
pub fn accuracy_table(
    config: &ExperimentConfig,
    source: Option<&EvalReport>,
    suda: Option<&EvalReport>,
    csuda: Option<&EvalReport>,
    oracle: Option<&EvalReport>,
) -> AccuracyTable {
    let rows = config
        .data
        .targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let score = |r: Option<&EvalReport>| {
                r.and_then(|r| {
                    r.targets.get(i).map(|d| ColumnScore {
                        target: d.accuracy,
                        source: r.source_accuracy,
                    })
                })
            };
            TableRow {
                task: config.task_name(t),
                columns: [score(source), score(suda), score(csuda), score(oracle)],
            }
        })
        .collect();
    AccuracyTable { rows }
}

const GAP: u32 = 2;

/// Image grid: per class, one row of prior images above the row of images
/// synthesised from them, one column per image.
pub fn synthesis_grid(priors: &[Vec<&Image>], synthetic: &[Vec<&Image>]) -> Result<RgbImage> {
    if priors.len() != synthetic.len() {
        return Err(Error::Shape("priors and synthetic images cover different classes".into()));
    }
    let first = synthetic
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::EmptyDataset("no synthetic images to plot".into()))?;
    let (_, h, w) = first.shape();
    let (h, w) = (h as u32, w as u32);
    let cols = synthetic.iter().chain(priors).map(Vec::len).max().unwrap_or(0) as u32;
    let rows = 2 * synthetic.len() as u32;
    let class_gap = 3 * GAP;
    let width = cols * (w + GAP) + GAP;
    let height = rows * (h + GAP) + synthetic.len() as u32 * class_gap;
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut y = 0;
    for (p, s) in priors.iter().zip(synthetic) {
        for row in [p, s] {
            for (col, img) in row.iter().enumerate() {
                let x = GAP + col as u32 * (w + GAP);
                image::imageops::replace(&mut canvas, &image_to_rgb(img), x as i64, (y + GAP) as i64);
            }
            y += h + GAP;
        }
        y += class_gap;
    }
    Ok(canvas)
}

/// Total-loss series per class from a synthesis loss CSV, in step order.
pub fn read_loss_series(path: impl AsRef<Path>) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut series: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("malformed loss CSV row {rec:?}")))
        };
        let class = parse(0)? as usize;
        series.entry(class).or_default().push(parse(2)?);
    }
    Ok(series)
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// Line plot of each series on a log10 y axis (one colour per series).
pub fn loss_plot(series: &BTreeMap<usize, Vec<f64>>, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 30u32;
    let (pw, ph) = ((width - 2 * margin) as f64, (height - 2 * margin) as f64);
    let axis = Rgb([0, 0, 0]);
    for x in margin..width - margin {
        img.put_pixel(x, height - margin, axis);
    }
    for y in margin..=height - margin {
        img.put_pixel(margin, y, axis);
    }
    let logs: Vec<f64> = series.values().flatten().filter(|v| **v > 0.0).map(|v| v.log10()).collect();
    if logs.is_empty() {
        return img;
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
    let n_max = series.values().map(Vec::len).max().unwrap_or(1).max(2);
    let to_px = |i: usize, v: f64| -> (f64, f64) {
        let x = margin as f64 + pw * i as f64 / (n_max - 1) as f64;
        let ly = if v > 0.0 { v.log10() } else { lo };
        let y = margin as f64 + ph * (1.0 - (ly - lo) / (hi - lo));
        (x, y)
    };
    for (k, values) in series.values().enumerate() {
        let colour = Rgb(PALETTE[k % PALETTE.len()]);
        let points: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, &v)| to_px(i, v)).collect();
        if let [only] = points.as_slice() {
            put(&mut img, only.0, only.1, colour);
        }
        for seg in points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for t in 0..=n {
                let f = t as f64 / n as f64;
                put(&mut img, a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1), colour);
            }
        }
    }
    img
}

fn put(img: &mut RgbImage, x: f64, y: f64, colour: Rgb<u8>) {
    let (x, y) = (x.round(), y.round());
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, colour);
    }
}

/// Writes every report the run's artifacts allow: synthesis grid and loss
/// plot (C-SUDA runs), accuracy tables and a flat metrics CSV. Missing
/// inputs are skipped with a warning. Returns the written paths.
pub fn emit_reports(manifest: &ExperimentManifest, run_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let run_dir = run_dir.as_ref();
    let config = &manifest.config;
    let mut written = Vec::new();
    if !manifest.is_complete(run_dir) {
        log::warn!("run {} is incomplete; emitting partial reports", manifest.run_id);
    }
    let reports = run_dir.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| Error::path(&reports, e))?;

    if manifest.is_done(Phase::Synthesize, run_dir) && run_dir.join(SYNTHETIC_SET).exists() {
        let synthetic = SyntheticSet::read(run_dir.join(SYNTHETIC_SET))?;
        let priors_text =
            std::fs::read_to_string(run_dir.join(PRIORS_FILE)).map_err(|e| Error::path(run_dir.join(PRIORS_FILE), e))?;
        let priors: Vec<Vec<String>> = serde_json::from_str(&priors_text)?;
        let target = load_domain(config, &config.data.targets[0], Split::Train)?;
        let by_id: HashMap<&str, &Image> = target.samples.iter().map(|s| (s.id.as_str(), &s.image)).collect();
        let prior_rows: Vec<Vec<&Image>> = priors
            .iter()
            .map(|ids| ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect())
            .collect();
        let mut synth_rows: Vec<Vec<&Image>> = vec![Vec::new(); priors.len()];
        for (img, &label) in synthetic.images.iter().zip(&synthetic.labels) {
            if let Some(row) = synth_rows.get_mut(label) {
                row.push(img);
            }
        }
        let path = reports.join("synthesis_grid.png");
        synthesis_grid(&prior_rows, &synth_rows)?.save(&path)?;
        written.push(path);

        let series = read_loss_series(run_dir.join(SYNTHESIS_LOSS_CSV))?;
        let path = reports.join("synthesis_loss.png");
        loss_plot(&series, 800, 500).save(&path)?;
        written.push(path);
    } else {
        log::warn!("no synthesis artifacts; skipping image grid and loss plot");
    }

    let load = |variant: &str| -> Option<EvalReport> {
        let p = run_dir.join(eval_report_path(variant));
        p.exists().then(|| EvalReport::read_json(&p)).transpose().unwrap_or_else(|e| {
            log::warn!("cannot read {}: {e}", p.display());
            None
        })
    };
    let (source, suda, csuda, oracle) = (load("source"), load("suda"), load("csuda"), load("oracle"));
    if source.is_some() || suda.is_some() || csuda.is_some() {
        let table = accuracy_table(config, source.as_ref(), suda.as_ref(), csuda.as_ref(), oracle.as_ref());
        let path = reports.join("table.txt");
        std::fs::write(&path, table.to_text()).map_err(|e| Error::path(&path, e))?;
        written.push(path);
        let path = reports.join("table.csv");
        table.write_csv(&path)?;
        written.push(path);
    } else {
        log::warn!("no evaluation reports; skipping tables");
    }

    let path = reports.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["phase", "metric", "value"])?;
    for rec in &manifest.phases {
        for (k, v) in &rec.metrics {
            w.write_record([rec.phase.name(), k.as_str(), &format!("{v:.6}")])?;
        }
    }
    w.flush().map_err(Error::Io)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_one_column_per_image() {
        let img = Image::filled(3, 4, 4, 0.5);
        let priors = vec![vec![&img; 5], vec![&img; 5]];
        let synth = vec![vec![&img; 5], vec![&img; 5]];
        let grid = synthesis_grid(&priors, &synth).unwrap();
        assert_eq!(grid.width(), 5 * (4 + GAP) + GAP);
    }

    #[test]
    fn loss_plot_draws_something() {
        let mut series = BTreeMap::new();
        series.insert(0, vec![10.0, 5.0, 2.0, 1.0]);
        series.insert(1, vec![8.0, 8.0, 3.0, 0.5]);
        let img = loss_plot(&series, 200, 120);
        let coloured = img.pixels().filter(|p| p.0 != [255, 255, 255] && p.0 != [0, 0, 0]).count();
        assert!(coloured > 50);
    }
}
