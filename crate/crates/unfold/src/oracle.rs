//! Independent reference implementations used to validate the main code
//! paths: closed-form spectral evaluation, Monte Carlo covariance, and toy
//! problem generators.
//!
//! Everything here is desk-scale by design; the spectral routines refuse
//! problems above [`ORACLE_SIZE_CAP`] bins.

use crate::error::{Result, UnfoldError};
use crate::folding::{compute_k, fold, CompositeOperator};
use crate::histo::{BinGrid, CompactRegion, Histogram, Kind, ResponseMatrix};
use crate::math::{pairwise_sum_fn, Mat};
use crate::unfolder::init;
use nalgebra::DMatrix;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use statrs::function::erf::erf;

/// Largest truth-bin count the spectral oracle accepts.
pub const ORACLE_SIZE_CAP: usize = 64;

/// Eigenvalues below this fraction of the largest one count as kernel.
pub const KERNEL_EIGENVALUE_TOL: f64 = 1e-10;

/// Eigendecomposition of the composite operator in the measure-weighted
/// inner product.
///
/// Internally the similarity transform `W^{1/2} A W^{-1/2}` (`W` the
/// diagonal of truth widths) makes the operator symmetric in the plain
/// Euclidean sense, so a standard symmetric eigensolver applies. The stored
/// eigenvector columns `u_k` are orthonormal under the weighted inner
/// product.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    grid: BinGrid,
    eigenvalues: Vec<f64>,
    /// Columns are the weighted-orthonormal eigenvectors.
    u: Mat,
}

impl SpectralDecomposition {
    pub fn decompose(op: &CompositeOperator) -> Result<Self> {
        let m = op.n_bins();
        if m > ORACLE_SIZE_CAP {
            return Err(UnfoldError::TooLarge {
                size: m,
                cap: ORACLE_SIZE_CAP,
            });
        }
        let w = op.grid().widths();
        // S[z][j] = A[z][j] * sqrt(w_z w_j) where the acting matrix is
        // kernel[z][j] * w_j; symmetrized explicitly against roundoff.
        let s = DMatrix::from_fn(m, m, |z, j| {
            let a = op.kernel().at(z, j) * (w[z] * w[j]).sqrt();
            let b = op.kernel().at(j, z) * (w[z] * w[j]).sqrt();
            0.5 * (a + b)
        });
        let eig = nalgebra::SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap()
        });
        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let u = Mat::from_fn(m, m, |j, k| {
            eig.eigenvectors[(j, order[k])] / w[j].sqrt()
        });
        Ok(SpectralDecomposition {
            grid: op.grid().clone(),
            eigenvalues,
            u,
        })
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    /// Eigenvalues in ascending order.
    pub fn spectrum(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    fn kernel_threshold(&self) -> f64 {
        let max = self
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0f64, f64::max)
            .max(1.0);
        KERNEL_EIGENVALUE_TOL * max
    }

    /// Dimension of the numerical kernel.
    pub fn kernel_dim(&self) -> usize {
        let thr = self.kernel_threshold();
        self.eigenvalues.iter().filter(|&&l| l < thr).count()
    }

    /// Expansion coefficients `c_k = <u_k, f>_w`.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let m = self.grid.n_bins();
        let w = self.grid.widths();
        (0..m)
            .map(|k| pairwise_sum_fn(m, |j| self.u.at(j, k) * f[j] * w[j]))
            .collect()
    }

    /// Apply a spectral filter: `sum_k filter(lambda_k) c_k u_k`.
    pub fn filter_apply(&self, f: &[f64], filter: impl Fn(f64) -> f64) -> Vec<f64> {
        let m = self.grid.n_bins();
        let c = self.coefficients(f);
        (0..m)
            .map(|j| pairwise_sum_fn(m, |k| filter(self.eigenvalues[k]) * c[k] * self.u.at(j, k)))
            .collect()
    }

    /// Orthogonal projection onto the numerical kernel.
    pub fn kernel_project(&self, f: &[f64]) -> Vec<f64> {
        let thr = self.kernel_threshold();
        self.filter_apply(f, |l| if l < thr { 1.0 } else { 0.0 })
    }

    /// The kernel projector as a matrix acting on per-bin values.
    pub fn kernel_projector(&self) -> Mat {
        let m = self.grid.n_bins();
        let thr = self.kernel_threshold();
        let w = self.grid.widths();
        Mat::from_fn(m, m, |i, j| {
            pairwise_sum_fn(m, |k| {
                if self.eigenvalues[k] < thr {
                    self.u.at(i, k) * self.u.at(j, k) * w[j]
                } else {
                    0.0
                }
            })
        })
    }

    /// `(I - A)^{N+1} f`, the exact residual factor.
    pub fn residual_apply(&self, f: &[f64], n: usize) -> Vec<f64> {
        self.filter_apply(f, |l| (1.0 - l).powi(n as i32 + 1))
    }

    /// The iterate `f_N` for unknown pdf `f_true` (so `f_0 = A f_true`):
    /// `f_N = (I - (I - A)^{N+1}) f_true`.
    pub fn iterate_from_truth(&self, f_true: &[f64], n: usize) -> Vec<f64> {
        self.filter_apply(f_true, |l| 1.0 - (1.0 - l).powi(n as i32 + 1))
    }

    /// `sum_{k<=N} (I - A)^k f0`, the Neumann partial sum from a start `f0`.
    pub fn neumann_apply(&self, f0: &[f64], n: usize) -> Vec<f64> {
        self.filter_apply(f0, |l| neumann_coefficient(l, n))
    }
}

/// `sum_{k=0}^{N} (1 - lambda)^k`.
pub fn neumann_coefficient(lambda: f64, n: usize) -> f64 {
    if lambda.abs() > 1e-9 {
        (1.0 - (1.0 - lambda).powi(n as i32 + 1)) / lambda
    } else {
        // Near the kernel the closed form loses precision; sum directly.
        let mut acc = 0.0;
        let mut term = 1.0;
        for _ in 0..=n {
            acc += term;
            term *= 1.0 - lambda;
        }
        acc
    }
}

/// Result of a closed-form spectral unfolding.
#[derive(Debug, Clone)]
pub struct SpectralUnfold {
    pub f_n: Histogram,
    pub kernel_projector: Mat,
    pub spectrum: Vec<f64>,
}

/// Unfold `g` to order `N` through the eigendecomposition instead of the
/// iteration.
pub fn spectral_unfold(response: &ResponseMatrix, g: &Histogram, n: usize) -> Result<SpectralUnfold> {
    let op = CompositeOperator::from_response(response)?;
    let dec = SpectralDecomposition::decompose(&op)?;
    let f0 = init(response, g)?;
    let values = dec.neumann_apply(f0.values(), n);
    Ok(SpectralUnfold {
        f_n: Histogram::new(op.grid().clone(), values, Kind::Density)?,
        kernel_projector: dec.kernel_projector(),
        spectrum: dec.eigenvalues.clone(),
    })
}

/// The explicit linear transfer matrix `T_N = sum_{k<=N} (I-A)^k K^{-1} A^T`
/// mapping measured densities to the order-`N` unfolded density.
pub fn transfer_matrix(response: &ResponseMatrix, n: usize) -> Result<Mat> {
    let op = CompositeOperator::from_response(response)?;
    let dec = SpectralDecomposition::decompose(&op)?;
    let k = compute_k(response)?;
    let m = response.truth_grid().n_bins();
    let nn = response.measured_grid().n_bins();
    let wy = response.measured_grid().widths();
    // B[j][i] = K^{-1} rho[i][j] w_y[i] is the matrix of K^{-1} A^T.
    let mut t = Mat::zeros(m, nn);
    for i in 0..nn {
        let b_col: Vec<f64> = (0..m).map(|j| response.at(i, j) * wy[i] / k).collect();
        let out = dec.neumann_apply(&b_col, n);
        for j in 0..m {
            t.set(j, i, out[j]);
        }
    }
    Ok(t)
}

/// Empirical covariance of the order-`N` unfolded density over Poisson
/// replicas of the folded truth. `f_true` is a density in the counts scale,
/// so the expected counts in measured bin `i` are `(A_rho f_true)_i w_y[i]`.
///
/// Replica `r` draws from stream `r` of a counter-based generator seeded
/// with `seed`, so results are bit-reproducible and independent of any
/// evaluation order.
pub fn mc_covariance(
    response: &ResponseMatrix,
    f_true: &Histogram,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<Mat> {
    if replicas < 1000 {
        return Err(UnfoldError::BadReplicaCount(replicas));
    }
    let folded = fold(response, f_true)?;
    let wy = response.measured_grid().widths();
    let mu: Vec<f64> = (0..folded.n_bins())
        .map(|i| (folded.values()[i] * wy[i]).max(0.0))
        .collect();
    let op = CompositeOperator::from_response(response)?;
    let k = compute_k(response)?;
    let m = response.truth_grid().n_bins();

    let mut sum = vec![0.0; m];
    let mut sum_outer = Mat::zeros(m, m);
    for r in 0..replicas {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let counts: Vec<f64> = mu
            .iter()
            .map(|&l| {
                if l > 0.0 {
                    Poisson::new(l).unwrap().sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        let g_density: Vec<f64> = (0..counts.len()).map(|i| counts[i] / wy[i]).collect();
        let f0: Vec<f64> = crate::folding::transpose_fold_slice(response, &g_density)
            .iter()
            .map(|v| v / k)
            .collect();
        let mut f = f0.clone();
        for _ in 0..n {
            let af = op.apply_slice(&f);
            for j in 0..m {
                f[j] += f0[j] - af[j];
            }
        }
        for j in 0..m {
            sum[j] += f[j];
        }
        for a in 0..m {
            for b in 0..=a {
                let v = sum_outer.at(a, b) + f[a] * f[b];
                sum_outer.set(a, b, v);
            }
        }
    }
    let nrep = replicas as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nrep).collect();
    let mut cov = Mat::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let v = sum_outer.at(a, b) / nrep - mean[a] * mean[b];
            let v = v * nrep / (nrep - 1.0);
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

/// Toy problems with known structure.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyKind {
    /// Periodic Gaussian convolution on a unit-width grid; `K = 1`.
    GaussConvCyclic { bins: usize, sigma_bins: f64 },
    /// Gaussian smearing with edge truncation treated as inefficiency.
    GaussConvTruncated { bins: usize, sigma_bins: f64 },
    /// Duplicated truth columns, guaranteeing a nontrivial kernel.
    RankDeficient { bins: usize },
    /// Composite operator `diag(c, .., c, 1)` via one saturating extra bin.
    ///
    /// An exact `A = c I` cannot arise from any response, since the `K`
    /// normalization pins the largest weighted column sum (here the largest
    /// eigenvalue) to one; the last bin carries that eigenvalue and the toy
    /// truth leaves it empty.
    ScaledIdentity { bins: usize, c: f64 },
}

/// Build a toy `(response, truth density)` pair. The truth is non-negative
/// with unit mass; `seed` shapes the random parts.
pub fn make_toy(kind: &ToyKind, seed: u64) -> Result<(ResponseMatrix, Histogram)> {
    match *kind {
        ToyKind::GaussConvCyclic { bins, sigma_bins } => {
            if bins < 2 || !(sigma_bins > 0.0) {
                return Err(UnfoldError::BadParams(format!(
                    "cyclic toy needs bins >= 2 and sigma > 0, got {bins}, {sigma_bins}"
                )));
            }
            let grid = BinGrid::uniform(0.0, bins as f64, bins)?;
            let rho = cyclic_gaussian(bins, sigma_bins);
            let r = ResponseMatrix::new(grid.clone(), grid.clone(), rho)?;
            let f = bump_density(&grid, seed)?;
            Ok((r, f))
        }
        ToyKind::GaussConvTruncated { bins, sigma_bins } => {
            if bins < 2 || !(sigma_bins > 0.0) {
                return Err(UnfoldError::BadParams(format!(
                    "truncated toy needs bins >= 2 and sigma > 0, got {bins}, {sigma_bins}"
                )));
            }
            let grid = BinGrid::uniform(0.0, bins as f64, bins)?;
            let r = crate::folding::gaussian_kernel(&grid, sigma_bins)?;
            let f = bump_density(&grid, seed)?;
            Ok((r, f))
        }
        ToyKind::RankDeficient { bins } => {
            if bins < 2 {
                return Err(UnfoldError::BadParams("need at least 2 bins".into()));
            }
            let grid = BinGrid::uniform(0.0, bins as f64, bins)?;
            let base = crate::folding::gaussian_kernel(&grid, 0.6)?;
            // Duplicate each odd column from its even neighbor.
            let rho = Mat::from_fn(bins, bins, |i, j| {
                let src = j - (j % 2);
                base.at(i, src)
            });
            let r = ResponseMatrix::new(grid.clone(), grid.clone(), rho)?;
            let f = bump_density(&grid, seed)?;
            Ok((r, f))
        }
        ToyKind::ScaledIdentity { bins, c } => {
            if bins < 1 || !(c > 0.0 && c <= 1.0) {
                return Err(UnfoldError::BadParams(format!(
                    "scaled identity toy needs bins >= 1 and c in (0, 1], got {bins}, {c}"
                )));
            }
            let m = bins + 1;
            let grid = BinGrid::uniform(0.0, m as f64, m)?;
            let rho = Mat::from_fn(m, m, |i, j| {
                if i != j {
                    0.0
                } else if j < bins {
                    c.sqrt()
                } else {
                    1.0
                }
            });
            let r = ResponseMatrix::new(grid.clone(), grid.clone(), rho)?;
            let inner = BinGrid::uniform(0.0, bins as f64, bins)?;
            let bump = bump_density(&inner, seed)?;
            let mut values = bump.values().to_vec();
            values.push(0.0);
            let f = Histogram::new(grid, values, Kind::Density)?;
            Ok((r, f))
        }
    }
}

/// Periodic Gaussian convolution matrix on `bins` unit-width bins.
fn cyclic_gaussian(bins: usize, sigma: f64) -> Mat {
    let l = bins as f64;
    let wraps = (8.0 * sigma / l).ceil() as i64 + 1;
    let phi = |x: f64| 0.5 * (1.0 + erf(x / (sigma * std::f64::consts::SQRT_2)));
    Mat::from_fn(bins, bins, |i, j| {
        let c = j as f64 + 0.5;
        let mut mass = 0.0;
        for k in -wraps..=wraps {
            let lo = i as f64 + k as f64 * l - c;
            let hi = lo + 1.0;
            mass += phi(hi) - phi(lo);
        }
        mass
    })
}

/// Smooth positive unit-mass density: a main bump plus a seed-placed
/// secondary one.
fn bump_density(grid: &BinGrid, seed: u64) -> Result<Histogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = grid.edges()[0];
    let hi = *grid.edges().last().unwrap();
    let span = hi - lo;
    let c1 = lo + span * (0.35 + 0.1 * rng.gen::<f64>());
    let c2 = lo + span * (0.6 + 0.2 * rng.gen::<f64>());
    let s1 = span * 0.12;
    let s2 = span * 0.08;
    let amp2 = 0.3 + 0.4 * rng.gen::<f64>();
    let mut values: Vec<f64> = (0..grid.n_bins())
        .map(|j| {
            let x = grid.center(j);
            let b1 = (-((x - c1) / s1).powi(2)).exp();
            let b2 = (-((x - c2) / s2).powi(2)).exp();
            1e-3 + b1 + amp2 * b2
        })
        .collect();
    let mass = pairwise_sum_fn(grid.n_bins(), |j| values[j] * grid.width(j));
    for v in &mut values {
        *v /= mass;
    }
    Histogram::new(grid.clone(), values, Kind::Density)
}

/// A random valid response between seed-derived, mildly non-uniform grids.
pub fn random_response(m: usize, n: usize, seed: u64) -> Result<ResponseMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_grid(m, &mut rng)?;
    let measured = random_grid(n, &mut rng)?;
    let mut rho = Mat::from_fn(n, m, |_, _| rng.gen::<f64>());
    // Scale each column to total observation probability 0.9.
    for j in 0..m {
        let mass = pairwise_sum_fn(n, |i| rho.at(i, j) * measured.width(i));
        for i in 0..n {
            let v = rho.at(i, j) * 0.9 / mass;
            rho.set(i, j, v);
        }
    }
    ResponseMatrix::new(measured, truth, rho)
}

/// A random square response whose composite operator has every eigenvalue
/// at or above `min_lambda`. Diagonal dominance is raised until the
/// spectral oracle certifies the floor.
pub fn random_injective_response(
    m: usize,
    seed: u64,
    min_lambda: f64,
) -> Result<ResponseMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = random_grid(m, &mut rng)?;
    let noise = Mat::from_fn(m, m, |_, _| rng.gen::<f64>());
    for diag_weight in [0.7, 0.85, 0.95, 0.99] {
        let mut rho = Mat::from_fn(m, m, |i, j| {
            let d = if i == j { diag_weight / grid.width(i) } else { 0.0 };
            d + (1.0 - diag_weight) * noise.at(i, j)
        });
        for j in 0..m {
            let mass = pairwise_sum_fn(m, |i| rho.at(i, j) * grid.width(i));
            let scale = 0.98 / mass.max(1.0);
            if scale < 1.0 {
                for i in 0..m {
                    let v = rho.at(i, j) * scale;
                    rho.set(i, j, v);
                }
            }
        }
        let r = ResponseMatrix::new(grid.clone(), grid.clone(), rho)?;
        let op = CompositeOperator::from_response(&r)?;
        let dec = SpectralDecomposition::decompose(&op)?;
        if dec.min_eigenvalue() >= min_lambda {
            return Ok(r);
        }
    }
    Err(UnfoldError::BadParams(format!(
        "could not reach eigenvalue floor {min_lambda} for m = {m}, seed = {seed}"
    )))
}

/// Random non-negative unit-mass density on `grid`.
pub fn random_density(grid: &BinGrid, seed: u64) -> Result<Histogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..grid.n_bins()).map(|_| 0.05 + rng.gen::<f64>()).collect();
    let mass = pairwise_sum_fn(grid.n_bins(), |j| values[j] * grid.width(j));
    for v in &mut values {
        *v /= mass;
    }
    Histogram::new(grid.clone(), values, Kind::Density)
}

fn random_grid(n: usize, rng: &mut ChaCha8Rng) -> Result<BinGrid> {
    let mut edges = Vec::with_capacity(n + 1);
    let mut x = 0.0;
    edges.push(x);
    for _ in 0..n {
        x += 0.5 + rng.gen::<f64>();
        edges.push(x);
    }
    BinGrid::new(edges)
}

/// Convenience region spanning the whole truth grid.
pub fn full_region(grid: &BinGrid) -> CompactRegion {
    CompactRegion::contiguous(0, grid.n_bins() - 1).expect("non-empty grid")
}
