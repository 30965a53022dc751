//! Browser bindings for three interactive demos: augmentation preview,
//! cluster-collapse explorer and a clustering-metrics calculator.
//!
//! The logic lives in plain functions so it can be tested natively; the
//! `#[wasm_bindgen]` wrappers only translate errors into JS exceptions.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use sacc_core::aug::{sample_views, Image, StrongAugSpec, WeakAugSpec};
use sacc_core::loss::{cluster_pair_terms, ClusterLossConfig};
use sacc_core::metrics::{evaluate, LabelPair};

/// RGBA strip of `original | weak | weak | strong`, each tile `size` square.
pub fn preview_strip(rgba: &[u8], width: usize, height: usize, size: usize, seed: u64, num_ops: usize) -> Result<Vec<u8>, String> {
    if rgba.len() != width * height * 4 {
        return Err(format!("expected {} RGBA bytes, got {}", width * height * 4, rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let img = Image::from_rgb8(width, height, &rgb).map_err(|e| e.to_string())?;
    let weak = WeakAugSpec {
        output_size: size,
        ..WeakAugSpec::default()
    };
    let strong = StrongAugSpec {
        num_ops,
        ..StrongAugSpec::default()
    };
    let views = sample_views(&img, &weak, &strong, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let tiles = [img.resize(size, size), views.weak_a, views.weak_b, views.strong];
    let tile_bytes: Vec<Vec<u8>> = tiles.iter().map(Image::to_rgba8).collect();
    let row_len = 4 * size * 4;
    let mut out = vec![0u8; row_len * size];
    for y in 0..size {
        for (t, bytes) in tile_bytes.iter().enumerate() {
            let src = &bytes[y * size * 4..(y + 1) * size * 4];
            out[y * row_len + t * size * 4..y * row_len + (t + 1) * size * 4].copy_from_slice(src);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct CollapseTerms {
    pub contrastive: f64,
    pub entropy: f64,
    pub total: f64,
    /// Fraction of samples per cluster.
    pub marginal: Vec<f64>,
}

/// Cluster-level loss of two identical views of `n` samples over `m`
/// clusters. A fraction `balance` of the samples is spread round-robin over
/// the clusters, the rest sit in cluster 0; each sample puts `confidence` on
/// its cluster and shares the remainder evenly.
pub fn collapse_terms(n: usize, m: usize, balance: f64, confidence: f64, tau: f64) -> Result<CollapseTerms, String> {
    if m < 2 || n < m {
        return Err("need at least two clusters and one sample per cluster".into());
    }
    if !(0.0..=1.0).contains(&balance) {
        return Err("balance must lie in [0, 1]".into());
    }
    let floor = 1.0 / m as f64;
    if !(floor..1.0).contains(&confidence) {
        return Err(format!("confidence must lie in [{floor:.3}, 1)"));
    }
    let spread = (balance * n as f64).round() as usize;
    let rest = (1.0 - confidence) / (m - 1) as f64;
    let c = Array2::from_shape_fn((n, m), |(i, j)| {
        let home = if i < spread { i % m } else { 0 };
        if j == home { confidence } else { rest }
    });
    let cfg = ClusterLossConfig {
        tau_h: tau,
        include_self_term: false,
    };
    let t = cluster_pair_terms(c.view(), c.view(), &cfg).map_err(|e| e.to_string())?;
    let marginal = c.sum_axis(ndarray::Axis(0)).mapv(|v| v / n as f64).to_vec();
    Ok(CollapseTerms {
        contrastive: t.contrastive,
        entropy: t.entropy,
        total: t.total(),
        marginal,
    })
}

fn parse_labels(s: &str) -> Result<Vec<usize>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("`{t}` is not a non-negative integer label")))
        .collect()
}

/// NMI, ACC, ARI and the matched confusion matrix as JSON, from two label
/// lists separated by commas or whitespace.
pub fn score_labels(truth: &str, pred: &str) -> Result<String, String> {
    let pair = LabelPair::new(parse_labels(truth)?, parse_labels(pred)?).map_err(|e| e.to_string())?;
    Ok(evaluate(&pair).map_err(|e| e.to_string())?.to_json())
}

#[wasm_bindgen(js_name = previewStrip)]
pub fn preview_strip_js(rgba: &[u8], width: usize, height: usize, size: usize, seed: u32, num_ops: usize) -> Result<Vec<u8>, JsValue> {
    preview_strip(rgba, width, height, size, seed as u64, num_ops).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = collapseTerms)]
pub fn collapse_terms_js(n: usize, m: usize, balance: f64, confidence: f64, tau: f64) -> Result<String, JsValue> {
    collapse_terms(n, m, balance, confidence, tau)
        .map(|t| serde_json::to_string(&t).expect("terms serialize"))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = scoreLabels)]
pub fn score_labels_js(truth: &str, pred: &str) -> Result<String, JsValue> {
    score_labels(truth, pred).map_err(|e| JsValue::from_str(&e))
}
