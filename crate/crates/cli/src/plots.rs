//! Static figures: confusion heatmap, metric and loss curves, t-SNE scatter and
//! the augmentation preview grid.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use image::{Rgb, RgbImage};
use plotters::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sacc_core::aug::Image;
use sacc_core::metrics::ConfusionMatrix;
use sacc_core::train::{EvalRecord, StepRecord};

/// Side of one heatmap cell in pixels.
pub const HEATMAP_CELL: u32 = 24;

/// Row-normalised counts shaded from white (0) to dark blue (1).
pub fn confusion_heatmap(cm: &ConfusionMatrix, path: &Path) -> Result<()> {
    let k = cm.size() as u32;
    let mut img = RgbImage::new(k * HEATMAP_CELL, k * HEATMAP_CELL);
    for (r, row) in cm.counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (c, &n) in row.iter().enumerate() {
            let f = if total == 0 { 0.0 } else { n as f32 / total as f32 };
            let px = Rgb([
                (255.0 * (1.0 - 0.9 * f)) as u8,
                (255.0 * (1.0 - 0.7 * f)) as u8,
                (255.0 * (1.0 - 0.3 * f)) as u8,
            ]);
            for y in 0..HEATMAP_CELL {
                for x in 0..HEATMAP_CELL {
                    img.put_pixel(c as u32 * HEATMAP_CELL + x, r as u32 * HEATMAP_CELL + y, px);
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn draw_err<E: std::error::Error + Send + Sync + 'static>(e: DrawingAreaErrorKind<E>) -> anyhow::Error {
    anyhow!("plotting failed: {e}")
}

/// NMI, ACC and ARI against epoch, one line each. Evaluations without
/// scores are skipped; returns the number of points per line.
pub fn metric_curves(evals: &[EvalRecord], path: &Path) -> Result<usize> {
    let pts: Vec<(f64, [f64; 3])> = evals
        .iter()
        .filter_map(|e| e.scores.as_ref().map(|s| (e.epoch as f64, [s.nmi, s.acc, s.ari])))
        .collect();
    let x_max = pts.iter().map(|p| p.0).fold(1.0, f64::max);
    let y_min = pts.iter().flat_map(|p| p.1).fold(0.0, f64::min);
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("clustering scores", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0.0..x_max, y_min..1.0)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("epoch").y_desc("score").draw().map_err(draw_err)?;
    for (i, (name, color)) in [("NMI", RED), ("ACC", BLUE), ("ARI", GREEN)].into_iter().enumerate() {
        let series: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1[i])).collect();
        chart
            .draw_series(LineSeries::new(series.clone(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(series.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(pts.len())
}

/// Total training loss against optimizer step.
pub fn loss_curve(steps: &[StepRecord], path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = steps.iter().map(|s| (s.step as f64, s.loss.total)).collect();
    let x_max = pts.iter().map(|p| p.0).fold(1.0, f64::max);
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let pad = 0.05 * (hi - lo);
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..x_max, (lo - pad)..(hi + pad))
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("step").y_desc("loss").draw().map_err(draw_err)?;
    chart.draw_series(LineSeries::new(pts, BLACK.stroke_width(1))).map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct TsneParams {
    pub seed: u64,
    pub perplexity: f32,
    pub epochs: usize,
}

/// Barnes-Hut t-SNE to two dimensions, started from a seeded Gaussian layout.
pub fn tsne(features: &[Vec<f32>], p: TsneParams) -> Vec<[f32; 2]> {
    let n = features.len();
    if n < 2 {
        return vec![[0.0, 0.0]; n];
    }
    // the perplexity must leave room for 3 * perplexity neighbours
    let perplexity = p.perplexity.min(((n - 1) as f32 / 3.0).max(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let normal = Normal::new(0.0f32, 1e-4).expect("valid sigma");
    let init: Vec<f32> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let samples: Vec<&[f32]> = features.iter().map(|v| v.as_slice()).collect();
    let out = bhtsne::tSNE::<f32, &[f32], 2>::new(&samples)
        .perplexity(perplexity)
        .epochs(p.epochs)
        .initial_embedding(init)
        .barnes_hut(0.5, |a, b| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt())
        .embedding();
    out.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Scatter of 2-D points, coloured by label when labels are given.
pub fn scatter(points: &[[f32; 2]], labels: Option<&[usize]>, path: &Path) -> Result<()> {
    let bounds = |i: usize| {
        let (lo, hi) = points
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), p| (lo.min(p[i]), hi.max(p[i])));
        if lo.is_finite() && hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad)..(hi + pad)
        } else {
            -1.0..1.0
        }
    };
    let root = SVGBackend::new(path, (640, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("t-SNE of instance features", ("sans-serif", 20))
        .margin(12)
        .build_cartesian_2d(bounds(0), bounds(1))
        .map_err(draw_err)?;
    chart
        .draw_series(points.iter().enumerate().map(|(i, p)| {
            let color = match labels {
                Some(l) => Palette99::pick(l[i]).to_rgba(),
                None => RGBAColor(80, 80, 80, 1.0),
            };
            Circle::new((p[0], p[1]), 3, color.filled())
        }))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Tiles of equal size in a grid; each inner vector is one row.
pub fn image_grid(rows: &[Vec<Image>], path: &Path) -> Result<()> {
    let tile_w = rows.iter().flatten().map(Image::width).max().unwrap_or(1) as u32;
    let tile_h = rows.iter().flatten().map(Image::height).max().unwrap_or(1) as u32;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(1) as u32;
    let gap = 2;
    let mut img = RgbImage::from_pixel(
        cols * tile_w + (cols - 1) * gap,
        rows.len() as u32 * tile_h + (rows.len() as u32).saturating_sub(1) * gap,
        Rgb([255, 255, 255]),
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let bytes = tile.to_rgb8();
            let (x0, y0) = (c as u32 * (tile_w + gap), r as u32 * (tile_h + gap));
            for y in 0..tile.height() {
                for x in 0..tile.width() {
                    let i = 3 * (y * tile.width() + x);
                    img.put_pixel(x0 + x as u32, y0 + y as u32, Rgb([bytes[i], bytes[i + 1], bytes[i + 2]]));
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
