//! Exact statistical covariance propagation and systematic-error upper
//! bounds.
//!
//! The statistical factor `E_N` obeys the same recursion as the unfolding
//! iterates, applied to each column of the measured error factor, and
//! satisfies `Cov(f_N) = E_N E_N^T` exactly.

use crate::error::{Result, UnfoldError};
use crate::folding::{alpha, compute_k, transpose_fold_slice, CompositeOperator};
use crate::histo::{ErrorMatrix, Histogram, Kind, ResponseMatrix};
use crate::math::{pairwise_sum_fn, Mat};

/// Systematic-error envelope: either on the measured pdf (`|delta g| <= sg`)
/// or on the response function (`|delta rho| <= s_rho`).
#[derive(Debug, Clone)]
pub enum SystematicSpec {
    /// Non-negative envelope on the measured pdf, on the measured grid.
    MeasuredPdf(Histogram),
    /// Non-negative response-shaped envelope (column sums may exceed one).
    Response(ResponseMatrix),
}

/// Poisson error factor for a counts histogram: `diag(sqrt(g_i))` scaled
/// to the density convention (divided by the bin width).
pub fn err_from_poisson(g: &Histogram) -> Result<ErrorMatrix> {
    if g.kind() != Kind::Counts {
        return Err(UnfoldError::InvalidValue(
            "Poisson error factor expects a Counts histogram".into(),
        ));
    }
    let n = g.n_bins();
    let entries = Mat::from_fn(n, n, |i, j| {
        if i == j {
            g.values()[i].sqrt() / g.grid().width(i)
        } else {
            0.0
        }
    });
    ErrorMatrix::new(entries)
}

/// Poisson error factor in raw counts units (no width scaling). Satisfies
/// `E E^T = diag(g)` exactly.
pub fn err_from_poisson_counts(g: &Histogram) -> Result<ErrorMatrix> {
    if g.kind() != Kind::Counts {
        return Err(UnfoldError::InvalidValue(
            "Poisson error factor expects a Counts histogram".into(),
        ));
    }
    let n = g.n_bins();
    let entries = Mat::from_fn(n, n, |i, j| if i == j { g.values()[i].sqrt() } else { 0.0 });
    ErrorMatrix::new(entries)
}

/// Propagate the measured error factor through `N` iterations:
/// `E_0 = K^{-1} A^T Err(g)`, `E_{N+1} = E_N + (E_0 - A E_N)`.
pub fn propagate_stat(
    response: &ResponseMatrix,
    err_g: &ErrorMatrix,
    n: usize,
) -> Result<ErrorMatrix> {
    let (final_e, _) = propagate_stat_trace(response, err_g, n)?;
    Ok(final_e)
}

/// As [`propagate_stat`], additionally returning
/// `sum_j sigma_j(N) w_x[j]` for every order `0..=n`.
pub fn propagate_stat_trace(
    response: &ResponseMatrix,
    err_g: &ErrorMatrix,
    n: usize,
) -> Result<(ErrorMatrix, Vec<f64>)> {
    if err_g.rows() != response.measured_grid().n_bins() {
        return Err(UnfoldError::ShapeMismatch(format!(
            "error factor has {} rows, response has {} measured bins",
            err_g.rows(),
            response.measured_grid().n_bins()
        )));
    }
    let k = compute_k(response)?;
    let op = CompositeOperator::from_response(response)?;
    let m = response.truth_grid().n_bins();
    let cols = err_g.cols();

    // Column-by-column this is exactly the unfolding recursion with the
    // column as a pseudo-measurement.
    let mut e0 = Mat::zeros(m, cols);
    for c in 0..cols {
        let col = err_g.entries().col(c);
        let h = transpose_fold_slice(response, &col);
        for j in 0..m {
            e0.set(j, c, h[j] / k);
        }
    }

    let wx: Vec<f64> = response.truth_grid().widths().to_vec();
    let sum_sigma = |e: &Mat| -> f64 {
        pairwise_sum_fn(m, |j| {
            pairwise_sum_fn(cols, |c| e.at(j, c).powi(2)).max(0.0).sqrt() * wx[j]
        })
    };

    let mut stat_terms = Vec::with_capacity(n + 1);
    let mut e = e0.clone();
    stat_terms.push(sum_sigma(&e));
    for _ in 0..n {
        let mut next = Mat::zeros(m, cols);
        for c in 0..cols {
            let col = e.col(c);
            let ae = op.apply_slice(&col);
            for j in 0..m {
                next.set(j, c, e.at(j, c) + e0.at(j, c) - ae[j]);
            }
        }
        e = next;
        stat_terms.push(sum_sigma(&e));
    }
    Ok((ErrorMatrix::new(e)?, stat_terms))
}

/// Per-bin statistical errors `sigma_j = sqrt(Cov[j][j])` as a histogram is
/// not meaningful without a grid; this returns the bare vector. The full
/// covariance stays available through [`ErrorMatrix::covariance`].
pub fn stat_errors(e: &ErrorMatrix) -> Vec<f64> {
    e.sigmas()
}

/// Normalization factor `C = ||K^{-1} A^T sg||_{L2}` for measured-pdf
/// systematic envelopes.
pub fn c_factor(response: &ResponseMatrix, sg: &Histogram) -> Result<f64> {
    if sg.grid() != response.measured_grid() {
        return Err(UnfoldError::GridMismatch(
            "systematic envelope is not on the measured grid".into(),
        ));
    }
    if sg.values().iter().any(|&v| v < 0.0) {
        return Err(UnfoldError::InvalidValue(
            "systematic envelope must be non-negative".into(),
        ));
    }
    let k = compute_k(response)?;
    let h = transpose_fold(response, sg)?.scale(1.0 / k);
    Ok(h.l2_norm())
}

fn transpose_fold(response: &ResponseMatrix, h: &Histogram) -> Result<Histogram> {
    crate::folding::transpose_fold(response, h)
}

/// Normalization factor `D` for response-shaped systematic envelopes:
/// `D^2` is the regularity constant of the composed kernel
/// `beta = K^{-1} A_rho^T A_{s_rho}`, a truth-to-truth map.
pub fn d_factor(response: &ResponseMatrix, s_rho: &ResponseMatrix) -> Result<f64> {
    if s_rho.measured_grid() != response.measured_grid()
        || s_rho.truth_grid() != response.truth_grid()
    {
        return Err(UnfoldError::ShapeMismatch(
            "systematic response envelope must share the response's grids".into(),
        ));
    }
    if s_rho.is_zero() {
        return Ok(0.0);
    }
    let k = compute_k(response)?;
    let wy = response.measured_grid().widths();
    let n = response.measured_grid().n_bins();
    let m = response.truth_grid().n_bins();
    // beta[z][j] = K^{-1} sum_i rho[i][z] s_rho[i][j] w_y[i]; truth -> truth.
    let beta = Mat::from_fn(m, m, |z, j| {
        pairwise_sum_fn(n, |i| response.at(i, z) * s_rho.at(i, j) * wy[i]) / k
    });
    let composed = ResponseMatrix::new_envelope(
        response.truth_grid().clone(),
        response.truth_grid().clone(),
        beta,
    )?;
    let a = alpha(&composed);
    let wx = response.truth_grid().widths();
    let mut d2 = 0.0f64;
    for j in 0..m {
        let col = pairwise_sum_fn(m, |z| wx[z] * a.at(z, j));
        if col > d2 {
            d2 = col;
        }
    }
    Ok(d2.sqrt())
}

/// Upper bound on `|avg_U delta f_N|` from [`SystematicSpec`] and the
/// indicator iterate `Xi_{U,N}`.
///
/// For the response variant the unknown `||f||` must be supplied, typically
/// as `(1 + eps) ||f_M||` for a large auxiliary order `M`.
pub fn syst_bound(
    response: &ResponseMatrix,
    cap_xi_un: &Histogram,
    spec: &SystematicSpec,
    fnorm_estimate: Option<f64>,
) -> Result<f64> {
    let xi_norm = cap_xi_un.l2_norm();
    match spec {
        SystematicSpec::MeasuredPdf(sg) => Ok(xi_norm * c_factor(response, sg)?),
        SystematicSpec::Response(s_rho) => {
            let fnorm = fnorm_estimate.ok_or(UnfoldError::MissingNormEstimate)?;
            Ok(xi_norm * d_factor(response, s_rho)? * fnorm)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histo::{BinGrid, CompactRegion};
    use crate::unfolder::{indicator_iterates, run};

    fn unit_grid(n: usize) -> BinGrid {
        BinGrid::uniform(0.0, n as f64, n).unwrap()
    }

    #[test]
    fn poisson_factor_examples() {
        let g = unit_grid(2);
        let h = Histogram::new(g.clone(), vec![4.0, 9.0], Kind::Counts).unwrap();
        let e = err_from_poisson(&h).unwrap();
        assert_eq!(e.sigmas(), vec![2.0, 3.0]);

        let h = Histogram::new(g, vec![0.0, 1.0], Kind::Counts).unwrap();
        let e = err_from_poisson(&h).unwrap();
        assert_eq!(e.sigmas(), vec![0.0, 1.0]);
    }

    #[test]
    fn poisson_counts_factor_reproduces_diag() {
        let g = unit_grid(4);
        let h = Histogram::new(g, vec![3.0, 0.0, 17.0, 5.0], Kind::Counts).unwrap();
        let e = err_from_poisson_counts(&h).unwrap();
        let cov = e.covariance();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { h.values()[i] } else { 0.0 };
                assert!((cov.at(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagate_identity_response() {
        let g = unit_grid(2);
        let r = ResponseMatrix::identity(&g);
        let counts = Histogram::new(g, vec![4.0, 9.0], Kind::Counts).unwrap();
        let err = err_from_poisson(&counts).unwrap();
        for n in [0, 3, 10] {
            let e = propagate_stat(&r, &err, n).unwrap();
            assert_eq!(e.sigmas(), vec![2.0, 3.0]);
        }
    }

    #[test]
    fn propagate_matches_column_unfolding() {
        let grid = BinGrid::uniform(-3.0, 3.0, 6).unwrap();
        let r = crate::folding::gaussian_kernel(&grid, 0.8).unwrap();
        let counts = Histogram::new(grid.clone(), vec![9.0, 25.0, 100.0, 64.0, 16.0, 4.0], Kind::Counts).unwrap();
        let err = err_from_poisson(&counts).unwrap();
        let n = 12;
        let e = propagate_stat(&r, &err, n).unwrap();
        for c in 0..6 {
            let pseudo = Histogram::new(grid.clone(), err.entries().col(c), Kind::Density).unwrap();
            let trace = run(&r, &pseudo, n, None).unwrap();
            for j in 0..6 {
                let diff = (e.entries().at(j, c) - trace.f(n).unwrap().values()[j]).abs();
                assert!(diff < 1e-12, "col {c} bin {j}: {diff}");
            }
        }
    }

    #[test]
    fn c_factor_examples() {
        let g = unit_grid(2);
        let r = ResponseMatrix::identity(&g);
        let zero = Histogram::new(g.clone(), vec![0.0, 0.0], Kind::Density).unwrap();
        assert_eq!(c_factor(&r, &zero).unwrap(), 0.0);

        let sg = Histogram::new(g, vec![0.1, 0.1], Kind::Density).unwrap();
        let c = c_factor(&r, &sg).unwrap();
        assert!((c - 0.02f64.sqrt()).abs() < 1e-14);

        let c2 = c_factor(&r, &sg.scale(2.0)).unwrap();
        assert!((c2 - 2.0 * c).abs() < 1e-14);
    }

    #[test]
    fn d_factor_examples() {
        let g = unit_grid(2);
        let r = ResponseMatrix::identity(&g);
        let zero =
            ResponseMatrix::new_envelope(g.clone(), g.clone(), Mat::zeros(2, 2)).unwrap();
        assert_eq!(d_factor(&r, &zero).unwrap(), 0.0);

        // s_rho = R = identity, unit widths: composed kernel is the identity.
        let d = d_factor(&r, &r).unwrap();
        assert!((d - 1.0).abs() < 1e-14);

        // Homogeneity.
        let doubled = Mat::from_fn(2, 2, |i, j| 2.0 * r.at(i, j));
        let s2 = ResponseMatrix::new_envelope(g.clone(), g, doubled).unwrap();
        assert!((d_factor(&r, &s2).unwrap() - 2.0 * d).abs() < 1e-14);
    }

    #[test]
    fn syst_bound_identity_example() {
        let g = unit_grid(2);
        let r = ResponseMatrix::identity(&g);
        let sg = Histogram::new(g.clone(), vec![0.1, 0.1], Kind::Density).unwrap();
        let op = CompositeOperator::from_response(&r).unwrap();
        let u = CompactRegion::single(0);
        let it = indicator_iterates(&op, &u, 5).unwrap();
        let bound = syst_bound(
            &r,
            it.cap_xi_at(3).unwrap(),
            &SystematicSpec::MeasuredPdf(sg),
            None,
        )
        .unwrap();
        // ||Xi_{U,N}|| = 1 for the identity operator with a unit bin.
        assert!((bound - 0.02f64.sqrt()).abs() < 1e-12);
        // The true deviation |avg_U delta f_N| = |delta g_0| <= 0.1 <= bound.
        assert!(bound >= 0.1);
    }

    #[test]
    fn syst_bound_zero_envelope() {
        let g = unit_grid(2);
        let r = ResponseMatrix::identity(&g);
        let zero = Histogram::new(g.clone(), vec![0.0, 0.0], Kind::Density).unwrap();
        let op = CompositeOperator::from_response(&r).unwrap();
        let u = CompactRegion::single(1);
        let it = indicator_iterates(&op, &u, 2).unwrap();
        let bound = syst_bound(
            &r,
            it.cap_xi_at(2).unwrap(),
            &SystematicSpec::MeasuredPdf(zero),
            None,
        )
        .unwrap();
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn syst_bound_response_variant_needs_norm() {
        let g = unit_grid(2);
        let r = ResponseMatrix::identity(&g);
        let op = CompositeOperator::from_response(&r).unwrap();
        let u = CompactRegion::single(0);
        let it = indicator_iterates(&op, &u, 1).unwrap();
        let res = syst_bound(
            &r,
            it.cap_xi_at(1).unwrap(),
            &SystematicSpec::Response(r.clone()),
            None,
        );
        assert_eq!(res, Err(UnfoldError::MissingNormEstimate));
    }
}
