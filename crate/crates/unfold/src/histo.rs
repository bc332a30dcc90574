//! Domain types for binned distributions: grids, histograms, response
//! matrices, error factors and compact index regions.

use crate::error::{Result, UnfoldError};
use crate::math::{pairwise_sum_fn, Mat};

/// One-dimensional binning: strictly increasing edges and derived widths.
///
/// The widths define the discretized Lebesgue measure; every inner product
/// and norm in this crate is weighted by them.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    edges: Vec<f64>,
    widths: Vec<f64>,
}

impl BinGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(UnfoldError::InvalidGrid(format!(
                "need at least 2 edges, got {}",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(UnfoldError::InvalidGrid("non-finite edge".into()));
        }
        for w in edges.windows(2) {
            if w[1] <= w[0] {
                return Err(UnfoldError::InvalidGrid(format!(
                    "edges not strictly increasing at {} >= {}",
                    w[0], w[1]
                )));
            }
        }
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(BinGrid { edges, widths })
    }

    /// Uniform grid of `n` bins over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(UnfoldError::InvalidGrid(format!(
                "bad uniform grid: lo={lo}, hi={hi}, n={n}"
            )));
        }
        let step = (hi - lo) / n as f64;
        let edges = (0..=n)
            .map(|k| if k == n { hi } else { lo + step * k as f64 })
            .collect();
        BinGrid::new(edges)
    }

    pub fn n_bins(&self) -> usize {
        self.widths.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn width(&self, j: usize) -> f64 {
        self.widths[j]
    }

    pub fn center(&self, j: usize) -> f64 {
        0.5 * (self.edges[j] + self.edges[j + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|j| self.center(j)).collect()
    }

    /// Measure-weighted inner product of two per-bin vectors.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        assert_eq!(u.len(), self.n_bins());
        assert_eq!(v.len(), self.n_bins());
        pairwise_sum_fn(self.n_bins(), |j| u[j] * v[j] * self.widths[j])
    }

    /// Weighted L2 norm.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).sqrt()
    }
}

/// Whether histogram values are raw event counts or a density over the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Counts,
    Density,
}

/// Signed per-bin values over a [`BinGrid`].
///
/// Counts are non-negative; density histograms (in particular unfolding
/// iterates) may go negative and are never clipped, since every error
/// propagation statement relies on exact linearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    grid: BinGrid,
    values: Vec<f64>,
    kind: Kind,
}

impl Histogram {
    pub fn new(grid: BinGrid, values: Vec<f64>, kind: Kind) -> Result<Self> {
        if values.len() != grid.n_bins() {
            return Err(UnfoldError::ShapeMismatch(format!(
                "{} values for {} bins",
                values.len(),
                grid.n_bins()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(UnfoldError::InvalidValue(format!(
                "non-finite value in bin {j}"
            )));
        }
        if kind == Kind::Counts {
            if let Some(j) = values.iter().position(|&v| v < 0.0) {
                return Err(UnfoldError::NegativeCounts(j));
            }
        }
        Ok(Histogram { grid, values, kind })
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    /// Integral over the axis, `sum_k v_k w_k`.
    pub fn total_mass(&self) -> f64 {
        pairwise_sum_fn(self.n_bins(), |j| self.values[j] * self.grid.width(j))
    }

    /// Weighted L2 norm of the values.
    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }

    /// Weighted inner product with another histogram on the same grid.
    pub fn inner(&self, other: &Histogram) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.grid.inner(&self.values, &other.values))
    }

    /// Elementwise `self + a * other`.
    pub fn add_scaled(&self, other: &Histogram, a: f64) -> Result<Histogram> {
        self.check_same_grid(other)?;
        let values = (0..self.n_bins())
            .map(|j| self.values[j] + a * other.values[j])
            .collect();
        Histogram::new(self.grid.clone(), values, Kind::Density)
    }

    pub fn scale(&self, a: f64) -> Histogram {
        let values = self.values.iter().map(|v| a * v).collect();
        Histogram {
            grid: self.grid.clone(),
            values,
            kind: Kind::Density,
        }
    }

    fn check_same_grid(&self, other: &Histogram) -> Result<()> {
        if self.grid != other.grid {
            return Err(UnfoldError::GridMismatch(
                "histograms live on different grids".into(),
            ));
        }
        Ok(())
    }

    /// Counts to unit-mass density: divide by bin width and by total counts.
    pub fn normalize_counts(&self) -> Result<Histogram> {
        if self.kind != Kind::Counts {
            return Err(UnfoldError::InvalidValue(
                "normalize_counts expects a Counts histogram".into(),
            ));
        }
        let total = pairwise_sum_fn(self.n_bins(), |j| self.values[j]);
        if total <= 0.0 {
            return Err(UnfoldError::EmptyHistogram);
        }
        let values = (0..self.n_bins())
            .map(|j| self.values[j] / (self.grid.width(j) * total))
            .collect();
        Histogram::new(self.grid.clone(), values, Kind::Density)
    }

    /// Counts to density in the counts scale: divide by bin width only.
    ///
    /// This is the convention fed to the unfolding pipeline; it keeps the
    /// map from raw counts to the unfolded result linear, which the Poisson
    /// covariance propagation requires.
    pub fn counts_to_density(&self) -> Result<Histogram> {
        if self.kind != Kind::Counts {
            return Err(UnfoldError::InvalidValue(
                "counts_to_density expects a Counts histogram".into(),
            ));
        }
        let values = (0..self.n_bins())
            .map(|j| self.values[j] / self.grid.width(j))
            .collect();
        Histogram::new(self.grid.clone(), values, Kind::Density)
    }
}

/// Counts to unit-mass density (free-function form of
/// [`Histogram::normalize_counts`]).
pub fn normalize_counts(h: &Histogram) -> Result<Histogram> {
    h.normalize_counts()
}

/// A non-empty set of truth-grid bin indices standing in for a compact set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompactRegion {
    indices: Vec<usize>,
}

impl CompactRegion {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(UnfoldError::InvalidValue("empty region".into()));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(CompactRegion { indices })
    }

    pub fn single(index: usize) -> Self {
        CompactRegion {
            indices: vec![index],
        }
    }

    pub fn contiguous(first: usize, last: usize) -> Result<Self> {
        if last < first {
            return Err(UnfoldError::InvalidValue("empty region".into()));
        }
        Ok(CompactRegion {
            indices: (first..=last).collect(),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn check(&self, grid: &BinGrid) -> Result<()> {
        for &j in &self.indices {
            if j >= grid.n_bins() {
                return Err(UnfoldError::IndexOutOfRange {
                    index: j,
                    n_bins: grid.n_bins(),
                });
            }
        }
        Ok(())
    }

    /// `Volume(U) = sum_{j in U} w_x[j]`.
    pub fn volume(&self, grid: &BinGrid) -> Result<f64> {
        self.check(grid)?;
        Ok(pairwise_sum_fn(self.indices.len(), |k| {
            grid.width(self.indices[k])
        }))
    }

    /// The normalized indicator `xi_U = chi_U / Volume(U)` as a density.
    pub fn indicator_density(&self, grid: &BinGrid) -> Result<Histogram> {
        let vol = self.volume(grid)?;
        let mut values = vec![0.0; grid.n_bins()];
        for &j in &self.indices {
            values[j] = 1.0 / vol;
        }
        Histogram::new(grid.clone(), values, Kind::Density)
    }

    /// Region average `(1/Volume(U)) sum_{j in U} h_j w_j`.
    pub fn average(&self, h: &Histogram) -> Result<f64> {
        let vol = self.volume(h.grid())?;
        let s = pairwise_sum_fn(self.indices.len(), |k| {
            let j = self.indices[k];
            h.values()[j] * h.grid().width(j)
        });
        Ok(s / vol)
    }
}

/// `region_volume` free-function form of [`CompactRegion::volume`].
pub fn region_volume(region: &CompactRegion, grid: &BinGrid) -> Result<f64> {
    region.volume(grid)
}

/// Discretized response `rho(y|x)`: `n` measured bins by `m` truth bins of
/// bin-averaged conditional density, every column integrating to at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    measured: BinGrid,
    truth: BinGrid,
    rho: Mat,
}

/// Slack allowed on the per-column normalization check.
pub const COLUMN_NORM_TOL: f64 = 1e-9;

impl ResponseMatrix {
    /// Build a response, enforcing non-negativity and column sums `<= 1`.
    pub fn new(measured: BinGrid, truth: BinGrid, rho: Mat) -> Result<Self> {
        let r = Self::new_envelope(measured, truth, rho)?;
        for j in 0..r.truth.n_bins() {
            let s = r.column_mass(j);
            if s > 1.0 + COLUMN_NORM_TOL {
                return Err(UnfoldError::InvalidValue(format!(
                    "column {j} integrates to {s} > 1"
                )));
            }
        }
        Ok(r)
    }

    /// Build a response-shaped non-negative matrix without the column
    /// normalization check. Used for systematic-error envelopes `s_rho`.
    pub fn new_envelope(measured: BinGrid, truth: BinGrid, rho: Mat) -> Result<Self> {
        if rho.rows() != measured.n_bins() || rho.cols() != truth.n_bins() {
            return Err(UnfoldError::ShapeMismatch(format!(
                "rho is {}x{}, grids give {}x{}",
                rho.rows(),
                rho.cols(),
                measured.n_bins(),
                truth.n_bins()
            )));
        }
        for i in 0..rho.rows() {
            for j in 0..rho.cols() {
                let v = rho.at(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(UnfoldError::InvalidValue(format!(
                        "rho[{i}][{j}] = {v} is negative or non-finite"
                    )));
                }
            }
        }
        Ok(ResponseMatrix {
            measured,
            truth,
            rho,
        })
    }

    /// The identity response on `grid`: `rho[i][i] = 1 / w_y[i]`.
    pub fn identity(grid: &BinGrid) -> Self {
        let n = grid.n_bins();
        let rho = Mat::from_fn(n, n, |i, j| if i == j { 1.0 / grid.width(i) } else { 0.0 });
        ResponseMatrix {
            measured: grid.clone(),
            truth: grid.clone(),
            rho,
        }
    }

    pub fn measured_grid(&self) -> &BinGrid {
        &self.measured
    }

    pub fn truth_grid(&self) -> &BinGrid {
        &self.truth
    }

    pub fn rho(&self) -> &Mat {
        &self.rho
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rho.at(i, j)
    }

    /// `sum_i rho[i][j] w_y[i]`, the probability of being observed at all
    /// given truth bin `j`.
    pub fn column_mass(&self, j: usize) -> f64 {
        pairwise_sum_fn(self.measured.n_bins(), |i| {
            self.rho.at(i, j) * self.measured.width(i)
        })
    }

    pub fn is_zero(&self) -> bool {
        self.rho.data().iter().all(|&v| v == 0.0)
    }
}

/// Factor `E` with `Cov = E E^T`; rows index truth bins, columns index the
/// underlying measured fluctuation modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    entries: Mat,
}

impl ErrorMatrix {
    pub fn new(entries: Mat) -> Result<Self> {
        if entries.data().iter().any(|v| !v.is_finite()) {
            return Err(UnfoldError::InvalidValue(
                "non-finite entry in error matrix".into(),
            ));
        }
        Ok(ErrorMatrix { entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    /// The full covariance `E E^T`.
    pub fn covariance(&self) -> Mat {
        let m = self.rows();
        let n = self.cols();
        Mat::from_fn(m, m, |a, b| {
            pairwise_sum_fn(n, |k| self.entries.at(a, k) * self.entries.at(b, k))
        })
    }

    /// Per-row standard deviations, `sqrt(Cov[j][j])`.
    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|a| {
                pairwise_sum_fn(self.cols(), |k| self.entries.at(a, k).powi(2))
                    .max(0.0)
                    .sqrt()
            })
            .collect()
    }
}
