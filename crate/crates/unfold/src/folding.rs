//! The discretized folding operator, its transpose, the regularity constant
//! `K`, the normalized composite operator and the smoothing preconditioner.

use crate::error::{Result, UnfoldError};
use crate::histo::{BinGrid, Histogram, Kind, ResponseMatrix};
use crate::math::{pairwise_sum_fn, Mat};
use statrs::function::erf::erf;

/// Forward folding: `g_i = sum_j rho[i][j] f_j w_x[j]`.
pub fn fold(response: &ResponseMatrix, f: &Histogram) -> Result<Histogram> {
    if f.grid() != response.truth_grid() {
        return Err(UnfoldError::GridMismatch(
            "input histogram is not on the truth grid".into(),
        ));
    }
    let rho = response.rho();
    let wx = response.truth_grid().widths();
    let values = (0..response.measured_grid().n_bins())
        .map(|i| pairwise_sum_fn(rho.cols(), |j| rho.at(i, j) * f.values()[j] * wx[j]))
        .collect();
    Histogram::new(response.measured_grid().clone(), values, Kind::Density)
}

/// Transpose folding: `h_j = sum_i k_i rho[i][j] w_y[i]`.
pub fn transpose_fold(response: &ResponseMatrix, k: &Histogram) -> Result<Histogram> {
    if k.grid() != response.measured_grid() {
        return Err(UnfoldError::GridMismatch(
            "input histogram is not on the measured grid".into(),
        ));
    }
    let values = transpose_fold_slice(response, k.values());
    Histogram::new(response.truth_grid().clone(), values, Kind::Density)
}

/// Transpose folding on a bare slice; shared by the error-matrix recursion.
pub(crate) fn transpose_fold_slice(response: &ResponseMatrix, k: &[f64]) -> Vec<f64> {
    let rho = response.rho();
    let wy = response.measured_grid().widths();
    (0..rho.cols())
        .map(|j| pairwise_sum_fn(rho.rows(), |i| k[i] * rho.at(i, j) * wy[i]))
        .collect()
}

/// The symmetric kernel `alpha[z][j] = sum_i rho[i][z] rho[i][j] w_y[i]`.
pub fn alpha(response: &ResponseMatrix) -> Mat {
    let rho = response.rho();
    let wy = response.measured_grid().widths();
    let m = rho.cols();
    let mut a = Mat::zeros(m, m);
    for z in 0..m {
        for j in 0..=z {
            let v = pairwise_sum_fn(rho.rows(), |i| rho.at(i, z) * rho.at(i, j) * wy[i]);
            a.set(z, j, v);
            a.set(j, z, v);
        }
    }
    a
}

/// Regularity constant `K = max_j sum_z w_x[z] alpha[z][j]`.
pub fn compute_k(response: &ResponseMatrix) -> Result<f64> {
    Ok(composite_parts(response)?.1)
}

fn composite_parts(response: &ResponseMatrix) -> Result<(Mat, f64)> {
    if response.is_zero() {
        return Err(UnfoldError::ZeroResponse);
    }
    let a = alpha(response);
    let wx = response.truth_grid().widths();
    let m = a.rows();
    let mut k = 0.0f64;
    for j in 0..m {
        let col = pairwise_sum_fn(m, |z| wx[z] * a.at(z, j));
        if col > k {
            k = col;
        }
    }
    if !(k > 0.0) || !k.is_finite() {
        return Err(UnfoldError::ZeroResponse);
    }
    Ok((a, k))
}

/// The normalized composite operator `A = K^{-1} A_rho^T A_rho` on the truth
/// grid. Self-adjoint and positive in the measure-weighted inner product,
/// with spectrum in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOperator {
    /// `K^{-1} alpha`, contracted against the truth measure on application.
    kernel: Mat,
    k: f64,
    grid: BinGrid,
}

impl CompositeOperator {
    /// Build `A` from a response matrix.
    pub fn from_response(response: &ResponseMatrix) -> Result<Self> {
        let (a, k) = composite_parts(response)?;
        let m = a.rows();
        let kernel = Mat::from_fn(m, m, |z, j| a.at(z, j) / k);
        Ok(CompositeOperator {
            kernel,
            k,
            grid: response.truth_grid().clone(),
        })
    }

    /// A direct `A = c I` operator for closed-form checks, `0 <= c <= 1`.
    pub fn scaled_identity(grid: &BinGrid, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(UnfoldError::InvalidValue(format!(
                "scaled identity factor {c} outside [0, 1]"
            )));
        }
        let m = grid.n_bins();
        let kernel = Mat::from_fn(m, m, |z, j| if z == j { c / grid.width(z) } else { 0.0 });
        Ok(CompositeOperator {
            kernel,
            k: 1.0,
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Matrix entry `A[z][j] = K^{-1} alpha[z][j]`.
    pub fn kernel(&self) -> &Mat {
        &self.kernel
    }

    pub fn n_bins(&self) -> usize {
        self.grid.n_bins()
    }

    /// `(A f)_z = sum_j A[z][j] f_j w_x[j]`.
    pub fn apply_slice(&self, f: &[f64]) -> Vec<f64> {
        let wx = self.grid.widths();
        let m = self.n_bins();
        (0..m)
            .map(|z| pairwise_sum_fn(m, |j| self.kernel.at(z, j) * f[j] * wx[j]))
            .collect()
    }

    pub fn apply(&self, f: &Histogram) -> Result<Histogram> {
        if f.grid() != &self.grid {
            return Err(UnfoldError::GridMismatch(
                "histogram is not on the operator grid".into(),
            ));
        }
        Histogram::new(self.grid.clone(), self.apply_slice(f.values()), Kind::Density)
    }
}

/// Square Gaussian smearing response of width `sigma` on `grid`.
///
/// Entry `(i, j)` is the Gaussian mass falling into measured bin `i` for a
/// kernel centered at the truth bin center `c_j`, divided by the bin width.
/// Mass beyond the grid edges is dropped, so columns integrate to `<= 1`.
pub fn gaussian_kernel(grid: &BinGrid, sigma: f64) -> Result<ResponseMatrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(UnfoldError::NonPositiveSigma(sigma));
    }
    let n = grid.n_bins();
    let phi = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let rho = Mat::from_fn(n, n, |i, j| {
        let c = grid.center(j);
        let lo = (grid.edges()[i] - c) / sigma;
        let hi = (grid.edges()[i + 1] - c) / sigma;
        (phi(hi) - phi(lo)).max(0.0) / grid.width(i)
    });
    ResponseMatrix::new(grid.clone(), grid.clone(), rho)
}

/// Smoothing preconditioner: replace the problem `g = A_rho f` by
/// `eta * g = A_{eta * rho} f`, where `eta` is a square kernel on the
/// measured grid. The unknown `f` is unchanged.
pub fn precondition(
    response: &ResponseMatrix,
    g: &Histogram,
    kernel: &ResponseMatrix,
) -> Result<(ResponseMatrix, Histogram)> {
    if kernel.truth_grid() != response.measured_grid()
        || kernel.measured_grid() != response.measured_grid()
    {
        return Err(UnfoldError::GridMismatch(
            "preconditioner kernel must be square on the measured grid".into(),
        ));
    }
    if g.grid() != response.measured_grid() {
        return Err(UnfoldError::GridMismatch(
            "measured histogram is not on the measured grid".into(),
        ));
    }
    let wy = response.measured_grid().widths();
    let n = response.measured_grid().n_bins();
    let m = response.truth_grid().n_bins();
    let kr = kernel.rho();
    let rr = response.rho();
    let rho = Mat::from_fn(n, m, |i, j| {
        pairwise_sum_fn(n, |y| kr.at(i, y) * rr.at(y, j) * wy[y])
    });
    let smeared = ResponseMatrix::new(
        response.measured_grid().clone(),
        response.truth_grid().clone(),
        rho,
    )?;
    let smoothed_g = fold(kernel, g)?;
    Ok((smeared, smoothed_g))
}
