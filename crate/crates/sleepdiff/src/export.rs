//! Attention map export: one CSV per map, a JSON index and optional SVG
//! heat strips.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sleepdiff_core::attention::{AttentionRecord, AttnKind, Modality};
use sleepdiff_core::{Result as CoreResult, SleepDiffFormer, Tensor};

use crate::format::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub kind: String,
    pub layer: usize,
    pub head: usize,
    pub modality: String,
    pub epoch: usize,
    pub lambda: f64,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportIndex {
    pub entries: Vec<IndexEntry>,
    pub svg: Vec<String>,
}

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug)]
pub struct ExportOptions {
    /// Epoch of the sequence drawn as SVG heat strips, if any.
    pub svg_epoch: Option<usize>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { svg_epoch: Some(0) }
    }
}

/// MDTA attention maps (self and cross) of one sequence `x: [1, n_seq, 2, samples]`.
pub fn mdta_records(model: &SleepDiffFormer<f32>, x: &Tensor<f32>) -> CoreResult<Vec<AttentionRecord<f32>>> {
    let mut records = model.infer(x, true)?.records;
    records.retain(|r| matches!(r.kind, AttnKind::Dsa | AttnKind::Dca));
    Ok(records)
}

fn map_csv(map: &Tensor<f32>) -> String {
    let cols = map.last_dim();
    let mut s = String::with_capacity(map.len() * 12);
    for row in map.data().chunks(cols) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Write every MDTA map of `x` under `dir`.
pub fn export_attention(model: &SleepDiffFormer<f32>, x: &Tensor<f32>, dir: &Path, opts: &ExportOptions) -> Result<ExportIndex> {
    let records = mdta_records(model, x).map_err(|e| crate::format::FormatError::Invalid(e.to_string()))?;
    fs::create_dir_all(dir)?;
    let mut index = ExportIndex::default();
    for r in &records {
        let modality = r.modality.map_or("none", Modality::name);
        let file = format!("{}_l{}_h{}_{}_e{:02}.csv", r.kind.name(), r.layer, r.head, modality, r.item);
        fs::write(dir.join(&file), map_csv(&r.map))?;
        let shape = r.map.shape();
        index.entries.push(IndexEntry {
            file,
            kind: r.kind.name().into(),
            layer: r.layer,
            head: r.head,
            modality: modality.into(),
            epoch: r.item,
            lambda: r.lambda,
            rows: shape[0],
            cols: shape[1],
        });
    }
    if let Some(epoch) = opts.svg_epoch {
        let cfg = &model.config;
        let samples = cfg.samples;
        let base = epoch * 2 * samples;
        for layer in 1..=cfg.layers {
            for (c, m) in Modality::BOTH.into_iter().enumerate() {
                let maps: Vec<&AttentionRecord<f32>> = records
                    .iter()
                    .filter(|r| r.kind == AttnKind::Dsa && r.layer == layer && r.modality == Some(m) && r.item == epoch)
                    .collect();
                if maps.is_empty() {
                    continue;
                }
                let wave = &x.data()[base + c * samples..base + (c + 1) * samples];
                let file = format!("layer{layer}_{}_e{epoch:02}.svg", m.name());
                fs::write(dir.join(&file), heat_strip_svg(wave, &maps, cfg.n_tok))?;
                index.svg.push(file);
            }
        }
    }
    fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index).map_err(std::io::Error::other)?)?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<ExportIndex> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    serde_json::from_str(&text).map_err(|e| crate::format::FormatError::Invalid(e.to_string()))
}

/// Parse an exported CSV map.
pub fn read_map(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(|l| {
            l.split(',')
                .map(|v| v.parse().map_err(|_| crate::format::FormatError::Invalid(format!("{}: bad cell {v:?}", path.display()))))
                .collect()
        })
        .collect()
}

/// Attention from the global token (last row) to each series token, one strip
/// per head, drawn under the waveform. Each token's weight covers its span of
/// samples.
fn heat_strip_svg(wave: &[f32], maps: &[&AttentionRecord<f32>], n_tok: usize) -> String {
    const W: f64 = 1000.0;
    const WAVE_H: f64 = 120.0;
    const STRIP_H: f64 = 24.0;
    let height = WAVE_H + STRIP_H * maps.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}">"#);
    let peak = wave.iter().fold(1e-6f32, |m, v| m.max(v.abs())) as f64;
    let mut path = String::new();
    for (i, v) in wave.iter().enumerate() {
        let px = W * i as f64 / wave.len() as f64;
        let py = WAVE_H / 2.0 - (*v as f64 / peak) * (WAVE_H / 2.0 - 4.0);
        let _ = write!(path, "{}{px:.2},{py:.2} ", if i == 0 { "M" } else { "L" });
    }
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="black" stroke-width="0.6"/>"#, path.trim_end());
    let tok_w = W / n_tok as f64;
    for (h, r) in maps.iter().enumerate() {
        let cols = r.map.last_dim();
        let rows = r.map.shape()[0];
        let g = &r.map.data()[(rows - 1) * cols..rows * cols];
        let weights = &g[..n_tok.min(cols)];
        let (lo, hi) = weights.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let y = WAVE_H + h as f64 * STRIP_H;
        for (t, &w) in weights.iter().enumerate() {
            let u = if hi > lo { ((w - lo) / (hi - lo)) as f64 } else { 0.5 };
            let (red, blue) = ((255.0 * u) as u8, (255.0 * (1.0 - u)) as u8);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.2}" width="{tok_w:.2}" height="{:.2}" fill="rgb({red},64,{blue})"><title>head {} token {t}: {w:.4}</title></rect>"#,
                t as f64 * tok_w,
                STRIP_H - 2.0,
                r.head
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Paths of every file referenced by the index.
pub fn indexed_files(dir: &Path, index: &ExportIndex) -> Vec<PathBuf> {
    index.entries.iter().map(|e| dir.join(&e.file)).chain(index.svg.iter().map(|f| dir.join(f))).collect()
}
