//! Per-class lesion heatmaps on a normalized grid, left/right symmetry
//! scoring, and asymmetry flagging.
//!
//! Boxes are mapped to the unit square by dividing x by the image's column
//! count and y by its row count, which aligns images of different sizes
//! before rasterization. Mirroring is about the grid's vertical midline; no
//! anatomical registration is attempted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotations::{ClassLabel, ImageIndex};
use crate::dicom::DicomHeader;

pub const DEFAULT_GRID_SIZE: (usize, usize) = (64, 64);
pub const DEFAULT_ASYMMETRY_THRESHOLD: f64 = 0.25;

/// How a box writes into the cells it overlaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositMode {
    /// Cell gains 1 for any positive-area overlap.
    Indicator,
    /// Cell gains the fraction of its own area the box covers.
    AreaWeighted,
}

/// Accumulated box mass for one class on a W×H grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub label: ClassLabel,
    /// (W, H) in cells.
    pub grid_size: (usize, usize),
    /// Row-major, `grid[y * W + x]`, all values nonnegative.
    pub grid: Vec<f64>,
    /// Boxes that deposited into at least one cell.
    pub n_boxes: usize,
    /// Boxes whose normalized form misses the unit square entirely.
    pub n_out_of_frame: usize,
    /// Images skipped because their header lacks rows or columns.
    pub n_skipped_images: usize,
    pub deposit: DepositMode,
}

impl Heatmap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.grid[y * self.grid_size.0 + x]
    }

    pub fn total_mass(&self) -> f64 {
        self.grid.iter().sum()
    }
}

/// Rasterize every box of `label` across the corpus onto a W×H grid.
///
/// A cell and a box interact only when they share positive area; edge
/// contact deposits nothing. Each box touches a cell at most once, so no
/// cell ever exceeds `n_boxes`, and `n_boxes` counts exactly the boxes that
/// deposited somewhere: total mass is positive iff `n_boxes` is.
///
/// # Panics
/// If either grid dimension is 0.
pub fn accumulate_heatmap(
    index: &ImageIndex,
    headers: &BTreeMap<String, DicomHeader>,
    label: ClassLabel,
    grid_size: (usize, usize),
    deposit: DepositMode,
) -> Heatmap {
    let (w, h) = grid_size;
    assert!(w > 0 && h > 0, "grid dimensions must be positive");
    let mut heatmap = Heatmap {
        label,
        grid_size,
        grid: vec![0.0; w * h],
        n_boxes: 0,
        n_out_of_frame: 0,
        n_skipped_images: 0,
        deposit,
    };
    for img in index.iter() {
        let dims = headers
            .get(&img.image_id)
            .and_then(|hd| Some((hd.columns?, hd.rows?)));
        let Some((cols, rows)) = dims else {
            if img
                .annotators
                .iter()
                .any(|a| a.boxes_of(label).next().is_some())
            {
                heatmap.n_skipped_images += 1;
            }
            continue;
        };
        let (cols, rows) = (f64::from(cols), f64::from(rows));
        for a in &img.annotators {
            for b in a.boxes_of(label) {
                let nx0 = b.x_min / cols;
                let nx1 = b.x_max / cols;
                let ny0 = b.y_min / rows;
                let ny1 = b.y_max / rows;
                if deposit_box(&mut heatmap.grid, (w, h), (nx0, ny0, nx1, ny1), deposit) {
                    heatmap.n_boxes += 1;
                } else {
                    heatmap.n_out_of_frame += 1;
                }
            }
        }
    }
    heatmap
}

/// Write one normalized box into the grid; true if any cell received mass.
fn deposit_box(
    grid: &mut [f64],
    (w, h): (usize, usize),
    (x0, y0, x1, y1): (f64, f64, f64, f64),
    deposit: DepositMode,
) -> bool {
    let clamp_cell = |v: f64, n: usize| (v.floor() as i64).clamp(0, n as i64 - 1) as usize;
    let (wf, hf) = (w as f64, h as f64);
    let mut touched = false;
    for cy in clamp_cell(y0 * hf, h)..=clamp_cell(y1 * hf - f64::EPSILON, h) {
        for cx in clamp_cell(x0 * wf, w)..=clamp_cell(x1 * wf - f64::EPSILON, w) {
            let cell_x0 = cx as f64 / wf;
            let cell_x1 = (cx + 1) as f64 / wf;
            let cell_y0 = cy as f64 / hf;
            let cell_y1 = (cy + 1) as f64 / hf;
            let dx = x1.min(cell_x1) - x0.max(cell_x0);
            let dy = y1.min(cell_y1) - y0.max(cell_y0);
            if dx > 0.0 && dy > 0.0 {
                touched = true;
                grid[cy * w + cx] += match deposit {
                    DepositMode::Indicator => 1.0,
                    DepositMode::AreaWeighted => (dx * dy) * wf * hf,
                };
            }
        }
    }
    touched
}

/// Left/right symmetry verdict for one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryScore {
    pub label: ClassLabel,
    /// 0 for a mirror-symmetric heatmap, 1 when all mass sits strictly on
    /// one side with no mirrored overlap.
    pub score: f64,
    pub n_boxes: usize,
    /// Anatomically one-sided classes are exempt from flagging.
    pub exempt: bool,
}

/// Classes expected to be asymmetric: midline structures that project to one
/// side on a frontal radiograph.
pub fn default_exempt() -> BTreeSet<ClassLabel> {
    ["Aortic enlargement", "Cardiomegaly"]
        .into_iter()
        .map(|n| ClassLabel::from_name(n).unwrap())
        .collect()
}

/// Normalized mirror distance: Σ |H(x,y) − H(W−1−x,y)| over all cells,
/// divided by Σ (H(x,y) + H(W−1−x,y)). An empty heatmap scores 0.
pub fn symmetry_score(heatmap: &Heatmap, exempt: &BTreeSet<ClassLabel>) -> SymmetryScore {
    let (w, h) = heatmap.grid_size;
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..h {
        for x in 0..w {
            let a = heatmap.at(x, y);
            let b = heatmap.at(w - 1 - x, y);
            num += (a - b).abs();
            den += a + b;
        }
    }
    SymmetryScore {
        label: heatmap.label,
        score: if den == 0.0 { 0.0 } else { num / den },
        n_boxes: heatmap.n_boxes,
        exempt: exempt.contains(&heatmap.label),
    }
}

/// Non-exempt labels whose score strictly exceeds the threshold.
///
/// # Panics
/// If `threshold` is not in (0, 1).
pub fn asymmetry_flags(scores: &[SymmetryScore], threshold: f64) -> Vec<ClassLabel> {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "asymmetry threshold must be in (0, 1)"
    );
    scores
        .iter()
        .filter(|s| !s.exempt && s.score > threshold)
        .map(|s| s.label)
        .collect()
}

/// Render as binary PGM (P5, 8-bit): counts scale linearly so the maximum
/// cell maps to 255. A zero-mass heatmap renders all black.
pub fn render_heatmap(heatmap: &Heatmap) -> Vec<u8> {
    let (w, h) = heatmap.grid_size;
    let max = heatmap.grid.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(heatmap.grid.iter().map(|v| {
        if max == 0.0 {
            0u8
        } else {
            (v / max * 255.0).round() as u8
        }
    }));
    out
}

/// Output filename for a class heatmap.
pub fn heatmap_filename(label: ClassLabel) -> String {
    format!("heatmap_{}.pgm", label.slug())
}
