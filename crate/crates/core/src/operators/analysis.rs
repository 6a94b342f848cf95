//! Analysis operators `L`.
//!
//! Every row of `L` owns a rectangular window of the image grid; entries
//! outside the window are structurally zero. A dense row is a window that
//! covers the whole grid, a block-sparse row is a `Q x Q` window at its site.
//! Only the unmasked coefficients are stored, row after row, each window in
//! row-major order, so the mask invariant holds by construction and
//! `apply` costs `sum_p |window_p|` multiply-adds.

use super::{operator_norm, LinearMap, NORM_TOL};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::rng::SeededRng;

/// Shape of the image grid the operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn square(side: usize) -> Self {
        Self {
            height: side,
            width: side,
        }
    }

    /// Square grid when `n` is a perfect square, a single row otherwise.
    pub fn for_len(n: usize) -> Self {
        let side = (n as f64).sqrt().round() as usize;
        if side * side == n {
            Self::square(side)
        } else {
            Self {
                height: 1,
                width: n,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Support of one row: `height x width` pixels with top-left at `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fits(&self, grid: Grid) -> bool {
        self.height > 0
            && self.width > 0
            && self.row + self.height <= grid.height
            && self.col + self.width <= grid.width
    }
}

/// How block-sparse sites are laid out along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SiteRule {
    /// Corners at `0, s, 2s, ...` while the window fits: `floor((side-Q)/s) + 1` per axis.
    #[default]
    Fit,
    /// `floor((side-Q)/s)` per axis, e.g. 11, 7 and 4 for `f5s2`, `f7s3` and
    /// `f9s4` on 28x28 images.
    Truncated,
}

impl SiteRule {
    pub fn sites(self, q: usize, stride: usize, side: usize) -> Vec<(usize, usize)> {
        if q > side || stride == 0 {
            return Vec::new();
        }
        let span = side - q;
        let per_axis = match self {
            SiteRule::Fit => span / stride + 1,
            SiteRule::Truncated => (span / stride).max(1),
        };
        let mut sites = Vec::with_capacity(per_axis * per_axis);
        for i in 0..per_axis {
            for j in 0..per_axis {
                sites.push((i * stride, j * stride));
            }
        }
        sites
    }
}

/// Provenance of a contiguous block of rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartKind {
    /// Every row covers the whole grid.
    Dense,
    /// `filters_per_site` rows of `q x q` windows at each site.
    Block {
        q: usize,
        stride: usize,
        filters_per_site: usize,
        sites: Vec<(usize, usize)>,
    },
    /// Arbitrary per-row windows (identity, finite differences, ...).
    Windows,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisPart {
    pub kind: PartKind,
    pub rows: usize,
}

impl AnalysisPart {
    /// `fQsNnS` label for block parts, `dense:P` for dense ones.
    pub fn label(&self) -> String {
        match &self.kind {
            PartKind::Dense => format!("dense:{}", self.rows),
            PartKind::Block {
                q,
                stride,
                filters_per_site,
                ..
            } => format!("f{q}s{stride}n{filters_per_site}"),
            PartKind::Windows => format!("windows:{}", self.rows),
        }
    }
}

/// Linear map `L: R^N -> R^P` with per-row window support.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOperator {
    grid: Grid,
    windows: Vec<Window>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
    parts: Vec<AnalysisPart>,
}

impl AnalysisOperator {
    /// Assembles an operator from explicit windows and packed weights.
    pub fn from_windows(
        grid: Grid,
        windows: Vec<Window>,
        weights: Vec<f64>,
        parts: Vec<AnalysisPart>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("analysis grid must be nonempty".into()));
        }
        if let Some(w) = windows.iter().find(|w| !w.fits(grid)) {
            return Err(Error::InvalidArgument(format!(
                "window {w:?} does not fit a {}x{} grid",
                grid.height, grid.width
            )));
        }
        let part_rows: usize = parts.iter().map(|p| p.rows).sum();
        if part_rows != windows.len() {
            return Err(Error::InvalidArgument(format!(
                "parts describe {part_rows} rows but {} windows were given",
                windows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(windows.len() + 1);
        offsets.push(0);
        for w in &windows {
            offsets.push(offsets.last().unwrap() + w.len());
        }
        let nnz = *offsets.last().unwrap();
        if weights.len() != nnz {
            return Err(Error::DimensionMismatch {
                context: "analysis weights",
                expected: nnz,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("analysis weights must be finite".into()));
        }
        Ok(Self {
            grid,
            windows,
            offsets,
            weights,
            parts,
        })
    }

    /// Dense `P x N` operator from row-major weights.
    pub fn dense(grid: Grid, rows: usize, weights: Vec<f64>) -> Result<Self> {
        let full = Window {
            row: 0,
            col: 0,
            height: grid.height,
            width: grid.width,
        };
        Self::from_windows(
            grid,
            vec![full; rows],
            weights,
            vec![AnalysisPart {
                kind: PartKind::Dense,
                rows,
            }],
        )
    }

    /// Dense operator with i.i.d. `Normal(0, stddev^2)` entries.
    pub fn random_dense(rows: usize, n: usize, seed: u64, stddev: f64) -> Result<Self> {
        if rows == 0 || n == 0 {
            return Err(Error::InvalidArgument("P and N must be at least 1".into()));
        }
        check_stddev(stddev)?;
        let mut rng = SeededRng::new(seed);
        let weights = (0..rows * n).map(|_| rng.normal(0.0, stddev)).collect();
        Self::dense(Grid::for_len(n), rows, weights)
    }

    /// Block-sparse operator with sites from `rule`.
    pub fn random_block_sparse(
        q: usize,
        stride: usize,
        filters_per_site: usize,
        side: usize,
        rule: SiteRule,
        seed: u64,
        stddev: f64,
    ) -> Result<Self> {
        if q == 0 || q > side {
            return Err(Error::InvalidArgument(format!(
                "window size {q} must be in 1..={side}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        let sites = rule.sites(q, stride, side);
        Self::random_block_sparse_at(q, stride, filters_per_site, side, sites, seed, stddev)
    }

    /// Block-sparse operator over an explicit site list.
    pub fn random_block_sparse_at(
        q: usize,
        stride: usize,
        filters_per_site: usize,
        side: usize,
        sites: Vec<(usize, usize)>,
        seed: u64,
        stddev: f64,
    ) -> Result<Self> {
        if filters_per_site == 0 {
            return Err(Error::InvalidArgument("filters per site must be at least 1".into()));
        }
        if sites.is_empty() {
            return Err(Error::InvalidArgument("block-sparse operator needs at least one site".into()));
        }
        check_stddev(stddev)?;
        let grid = Grid::square(side);
        let mut windows = Vec::with_capacity(sites.len() * filters_per_site);
        for &(row, col) in &sites {
            for _ in 0..filters_per_site {
                windows.push(Window {
                    row,
                    col,
                    height: q,
                    width: q,
                });
            }
        }
        let mut rng = SeededRng::new(seed);
        let weights = (0..windows.len() * q * q)
            .map(|_| rng.normal(0.0, stddev))
            .collect();
        let rows = windows.len();
        Self::from_windows(
            grid,
            windows,
            weights,
            vec![AnalysisPart {
                kind: PartKind::Block {
                    q,
                    stride,
                    filters_per_site,
                    sites,
                },
                rows,
            }],
        )
    }

    /// `scale * Id` on a grid.
    pub fn scaled_identity(grid: Grid, scale: f64) -> Result<Self> {
        let windows: Vec<Window> = (0..grid.height)
            .flat_map(|r| {
                (0..grid.width).map(move |c| Window {
                    row: r,
                    col: c,
                    height: 1,
                    width: 1,
                })
            })
            .collect();
        let rows = windows.len();
        Self::from_windows(
            grid,
            windows,
            vec![scale; rows],
            vec![AnalysisPart {
                kind: PartKind::Windows,
                rows,
            }],
        )
    }

    /// Forward horizontal then vertical differences (no wrap), times `scale`.
    pub fn finite_differences(grid: Grid, scale: f64) -> Result<Self> {
        let mut windows = Vec::new();
        let mut weights = Vec::new();
        for r in 0..grid.height {
            for c in 0..grid.width.saturating_sub(1) {
                windows.push(Window {
                    row: r,
                    col: c,
                    height: 1,
                    width: 2,
                });
                weights.extend([-scale, scale]);
            }
        }
        for r in 0..grid.height.saturating_sub(1) {
            for c in 0..grid.width {
                windows.push(Window {
                    row: r,
                    col: c,
                    height: 2,
                    width: 1,
                });
                weights.extend([-scale, scale]);
            }
        }
        let rows = windows.len();
        if rows == 0 {
            return Err(Error::InvalidArgument("grid too small for differences".into()));
        }
        Self::from_windows(
            grid,
            windows,
            weights,
            vec![AnalysisPart {
                kind: PartKind::Windows,
                rows,
            }],
        )
    }

    /// Vertical stacking; all parts must act on the same grid.
    pub fn fuse(parts: Vec<AnalysisOperator>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let mut fused = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot fuse an empty list".into()))?;
        for op in iter {
            if op.grid != fused.grid {
                return Err(Error::DimensionMismatch {
                    context: "fuse_analysis (N)",
                    expected: fused.grid.len(),
                    actual: op.grid.len(),
                });
            }
            let base = *fused.offsets.last().unwrap();
            fused.windows.extend(op.windows);
            fused
                .offsets
                .extend(op.offsets.iter().skip(1).map(|o| o + base));
            fused.weights.extend(op.weights);
            fused.parts.extend(op.parts);
        }
        Ok(fused)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.windows.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.len()
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn parts(&self) -> &[AnalysisPart] {
        &self.parts
    }

    /// Number of stored (unmasked) coefficients.
    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// `1 - nnz / (P N)`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / (self.rows() * self.cols()) as f64
    }

    /// Packed unmasked coefficients.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable packed coefficients; masked entries are not addressable.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Packed coefficients of row `p`, in window row-major order.
    pub fn row_weights(&self, p: usize) -> &[f64] {
        &self.weights[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn row_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    /// Scales every coefficient.
    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
    }

    /// Full `P x N` row-major matrix including structural zeros.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.cols();
        let mut out = vec![0.0; self.rows() * n];
        for (p, w) in self.windows.iter().enumerate() {
            let row = &mut out[p * n..(p + 1) * n];
            let coeffs = self.row_weights(p);
            for i in 0..w.height {
                let start = (w.row + i) * self.grid.width + w.col;
                row[start..start + w.width]
                    .copy_from_slice(&coeffs[i * w.width..(i + 1) * w.width]);
            }
        }
        out
    }

    /// `P x N` row-major binary mask.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.cols();
        let mut out = vec![false; self.rows() * n];
        for (p, w) in self.windows.iter().enumerate() {
            for i in 0..w.height {
                let start = p * n + (w.row + i) * self.grid.width + w.col;
                out[start..start + w.width].fill(true);
            }
        }
        out
    }

    /// Packs a `P x N` matrix into this operator's layout, dropping masked entries.
    pub fn pack(&self, dense: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut out = Vec::with_capacity(self.nnz());
        for (p, w) in self.windows.iter().enumerate() {
            for i in 0..w.height {
                let start = p * n + (w.row + i) * self.grid.width + w.col;
                out.extend_from_slice(&dense[start..start + w.width]);
            }
        }
        out
    }

    /// `grad += scale * (row_coef ⊗ col_vec)` restricted to the mask, in
    /// packed layout.
    pub fn accumulate_outer(&self, grad: &mut [f64], row_coef: &[f64], col_vec: &[f64], scale: f64) {
        debug_assert_eq!(grad.len(), self.nnz());
        for (p, w) in self.windows.iter().enumerate() {
            let a = scale * row_coef[p];
            if a == 0.0 {
                continue;
            }
            let g = &mut grad[self.offsets[p]..self.offsets[p + 1]];
            self.for_each_segment(w, |k, start, len| {
                axpy(a, &col_vec[start..start + len], &mut g[k..k + len]);
            });
        }
    }

    /// Spectral norm by power iteration at the default tolerance.
    pub fn norm(&self) -> Result<f64> {
        operator_norm(self, NORM_TOL, 100_000)
    }

    /// Calls `f(packed_offset, grid_offset, len)` for each contiguous run
    /// of the window.
    #[inline]
    fn for_each_segment(&self, w: &Window, mut f: impl FnMut(usize, usize, usize)) {
        if w.width == self.grid.width {
            f(0, w.row * self.grid.width, w.len());
        } else {
            for i in 0..w.height {
                f(i * w.width, (w.row + i) * self.grid.width + w.col, w.width);
            }
        }
    }
}

fn check_stddev(stddev: f64) -> Result<()> {
    if stddev.is_finite() && stddev >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "standard deviation must be finite and nonnegative, got {stddev}"
        )))
    }
}

impl LinearMap for AnalysisOperator {
    fn in_dim(&self) -> usize {
        self.grid.len()
    }

    fn out_dim(&self) -> usize {
        self.windows.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (p, w) in self.windows.iter().enumerate() {
            let coeffs = &self.weights[self.offsets[p]..self.offsets[p + 1]];
            let mut acc = 0.0;
            self.for_each_segment(w, |k, start, len| {
                acc += dot(&coeffs[k..k + len], &x[start..start + len]);
            });
            out[p] = acc;
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (p, w) in self.windows.iter().enumerate() {
            let yp = y[p];
            if yp == 0.0 {
                continue;
            }
            let coeffs = &self.weights[self.offsets[p]..self.offsets[p + 1]];
            self.for_each_segment(w, |k, start, len| {
                axpy(yp, &coeffs[k..k + len], &mut out[start..start + len]);
            });
        }
    }
}
