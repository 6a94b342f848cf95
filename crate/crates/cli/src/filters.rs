//! Tiled images of analysis-operator rows.

use pdnet_core::operators::{AnalysisOperator, PartKind};

/// One grayscale grid image.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrid {
    pub label: String,
    pub tiles: usize,
    pub tile_side: usize,
    pub width: usize,
    pub height: usize,
    pub raster: Vec<u8>,
}

/// Gap between tiles, in pixels.
pub const GAP: usize = 1;
const GAP_LEVEL: u8 = 128;

fn rescale(tile: &[f64]) -> Vec<u8> {
    let (lo, hi) = tile
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0; tile.len()];
    }
    tile.iter()
        .map(|v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
        .collect()
}

fn grid(label: String, tiles: Vec<Vec<f64>>, tile_side: usize) -> FilterGrid {
    let count = tiles.len();
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    let rows = count.div_ceil(cols).max(1);
    let width = cols * tile_side + (cols - 1) * GAP;
    let height = rows * tile_side + (rows - 1) * GAP;
    let mut raster = vec![GAP_LEVEL; width * height];
    for (t, tile) in tiles.iter().enumerate() {
        let (r0, c0) = ((t / cols) * (tile_side + GAP), (t % cols) * (tile_side + GAP));
        for (i, v) in rescale(tile).into_iter().enumerate() {
            raster[(r0 + i / tile_side) * width + c0 + i % tile_side] = v;
        }
    }
    FilterGrid {
        label,
        tiles: count,
        tile_side,
        width,
        height,
        raster,
    }
}

/// One grid per dense or block part; each row becomes a tile rescaled to
/// `[0, 255]` by its own minimum and maximum. Dense rows are shown on the
/// full image grid, block rows on their `q x q` window.
pub fn filter_grids(op: &AnalysisOperator) -> Vec<FilterGrid> {
    let mut grids = Vec::new();
    let mut row = 0;
    for part in op.parts() {
        let rows = row..row + part.rows;
        row += part.rows;
        let tile_side = match part.kind {
            PartKind::Dense => op.grid().height,
            PartKind::Block { q, .. } => q,
            PartKind::Windows => continue,
        };
        let tiles = rows.map(|p| op.row_weights(p).to_vec()).collect();
        grids.push(grid(part.label(), tiles, tile_side));
    }
    grids
}
