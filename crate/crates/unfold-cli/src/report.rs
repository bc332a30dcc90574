//! Report assembly: the full unfolding pipeline driven by a [`Config`],
//! producing the versioned JSON report and the plot-data CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use unfold::bias::bias_bound_global;
use unfold::errors::{
    err_from_poisson, propagate_stat, propagate_stat_trace, syst_bound, SystematicSpec,
};
use unfold::folding::{fold, gaussian_kernel, precondition, CompositeOperator};
use unfold::histo::{CompactRegion, ErrorMatrix, Histogram, Kind, ResponseMatrix};
use unfold::math::{pairwise_sum_fn, Mat};
use unfold::stopping::{evaluate_penalty, PenaltyConfig};
use unfold::unfolder::{indicator_iterates, init, IterationTrace};
use unfold::UnfoldError;

use crate::io::{fmt_f64, read_histogram, read_response, CliError, CliResult, Config};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub n_max: usize,
    pub eps: f64,
    pub m_rule: String,
    pub weights_bias: f64,
    pub weights_stat: f64,
    pub smoothing_sigma: Option<f64>,
    pub systematics_sg_file: Option<String>,
    pub systematics_srho_file: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PenaltyRow {
    pub n: usize,
    pub bias_term: f64,
    pub stat_term: f64,
    pub penalty: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SystBounds {
    /// Per-bin bound from the measured-pdf envelope `sg`, if configured.
    pub measured_pdf: Option<Vec<f64>>,
    /// Per-bin bound from the response envelope `s_rho`, if configured.
    pub response: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeSummary {
    /// Highest probed order.
    pub orders: usize,
    /// Worst (largest) `||xi_U - xi_{U,orders}||` over all single-bin
    /// regions; a positive plateau estimates the size of the non-invertible
    /// part seen by that bin.
    pub final_value: f64,
    /// Bin whose probe plateaus highest.
    pub worst_bin: usize,
    pub decayed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UnfoldReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub k: f64,
    pub n_opt: usize,
    pub truth_edges: Vec<f64>,
    /// Unfolded density `f_{N_opt}` per truth bin.
    pub unfolded: Vec<f64>,
    /// Per-bin statistical standard deviation at `N_opt`.
    pub stat_sigma: Vec<f64>,
    /// Per-bin bias bound at `N_opt`.
    pub bias_bound: Vec<f64>,
    pub syst_bounds: SystBounds,
    /// Full statistical covariance at `N_opt` (row-major, square).
    pub covariance: Vec<Vec<f64>>,
    pub penalty_trace: Vec<PenaltyRow>,
    pub injectivity_probe: ProbeSummary,
}

/// Fold a smoothing kernel into each column of a measured error factor:
/// `(eta E)[i][c] = sum_y eta[i][y] E[y][c] w_y`.
fn smooth_error(kernel: &ResponseMatrix, err: &ErrorMatrix) -> CliResult<ErrorMatrix> {
    let n = kernel.measured_grid().n_bins();
    let wy = kernel.measured_grid().widths().to_vec();
    let e = err.entries();
    let out = Mat::from_fn(n, err.cols(), |i, c| {
        pairwise_sum_fn(n, |y| kernel.at(i, y) * e.at(y, c) * wy[y])
    });
    Ok(ErrorMatrix::new(out)?)
}

/// Compose a smoothing kernel with a (possibly envelope) response shape.
fn smooth_envelope(
    kernel: &ResponseMatrix,
    shape: &ResponseMatrix,
) -> CliResult<ResponseMatrix> {
    let n = kernel.measured_grid().n_bins();
    let m = shape.truth_grid().n_bins();
    let wy = kernel.measured_grid().widths().to_vec();
    let rho = Mat::from_fn(n, m, |i, j| {
        pairwise_sum_fn(n, |y| kernel.at(i, y) * shape.at(y, j) * wy[y])
    });
    Ok(ResponseMatrix::new_envelope(
        kernel.measured_grid().clone(),
        shape.truth_grid().clone(),
        rho,
    )?)
}

fn resolve(base: &Path, rel: &str) -> std::path::PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Run the full pipeline on a counts histogram and assemble the report.
///
/// `config_dir` anchors relative systematics file paths from the config.
pub fn build_report(
    response: &ResponseMatrix,
    measured_counts: &Histogram,
    cfg: &Config,
    config_dir: &Path,
) -> CliResult<UnfoldReport> {
    if response.is_zero() {
        return Err(CliError::Lib(UnfoldError::ZeroResponse));
    }
    if measured_counts.grid() != response.measured_grid() {
        return Err(CliError::Lib(UnfoldError::GridMismatch(
            "measured histogram edges do not match the response measured edges".into(),
        )));
    }
    let g = measured_counts.counts_to_density()?;
    let err = err_from_poisson(measured_counts)?;

    // Optional smoothing preconditioner; the envelope inputs and the error
    // factor pass through the same kernel so every downstream quantity
    // refers to one consistent system.
    let kernel = match cfg.smoothing_sigma {
        Some(sigma) => Some(gaussian_kernel(response.measured_grid(), sigma)?),
        None => None,
    };
    let (r_eff, g_eff, err_eff) = match &kernel {
        Some(k) => {
            let (r2, g2) = precondition(response, &g, k)?;
            let e2 = smooth_error(k, &err)?;
            (r2, g2, e2)
        }
        None => (response.clone(), g.clone(), err),
    };

    let op = CompositeOperator::from_response(&r_eff)?;
    let f0 = init(&r_eff, &g_eff)?;
    let trace = IterationTrace::from_start(&op, f0, cfg.n_max)?;
    let (_, stat_terms) = propagate_stat_trace(&r_eff, &err_eff, cfg.n_max)?;

    let pcfg = PenaltyConfig {
        weight_bias: cfg.weights_bias,
        weight_stat: cfg.weights_stat,
        eps: cfg.eps,
        m_rule: cfg.m_rule.clone(),
        regions: None,
    };
    let scan = evaluate_penalty(&trace, &stat_terms, &pcfg)?;
    let n_opt = scan.n_opt;
    let m_opt = cfg.m_rule.m(n_opt);

    let grid = r_eff.truth_grid().clone();
    let n_bins = grid.n_bins();
    let e_opt = propagate_stat(&r_eff, &err_eff, n_opt)?;
    let cov = e_opt.covariance();
    let covariance: Vec<Vec<f64>> = (0..n_bins).map(|i| cov.row(i).to_vec()).collect();

    let bias_bound: Vec<f64> = (0..n_bins)
        .map(|j| bias_bound_global(&trace, n_opt, m_opt, cfg.eps, &CompactRegion::single(j)))
        .collect::<unfold::Result<_>>()?;

    // Systematic bounds need the indicator iterates per bin.
    let sg_spec = match &cfg.systematics_sg_file {
        Some(f) => {
            let sg = read_histogram(&resolve(config_dir, f), Kind::Density)?;
            let sg = match &kernel {
                Some(k) => fold(k, &sg)?,
                None => sg,
            };
            Some(SystematicSpec::MeasuredPdf(sg))
        }
        None => None,
    };
    let srho_spec = match &cfg.systematics_srho_file {
        Some(f) => {
            let s = read_response(&resolve(config_dir, f))?;
            let s = match &kernel {
                Some(k) => smooth_envelope(k, &s)?,
                None => s,
            };
            Some(SystematicSpec::Response(s))
        }
        None => None,
    };
    let fnorm_estimate = (1.0 + cfg.eps) * trace.norm(m_opt)?;
    let mut syst_pdf = None;
    let mut syst_resp = None;
    if sg_spec.is_some() || srho_spec.is_some() {
        let mut pdf_col = Vec::with_capacity(n_bins);
        let mut resp_col = Vec::with_capacity(n_bins);
        for j in 0..n_bins {
            let indic = indicator_iterates(&op, &CompactRegion::single(j), n_opt)?;
            let cap = indic.cap_xi_at(n_opt)?;
            if let Some(spec) = &sg_spec {
                pdf_col.push(syst_bound(&r_eff, cap, spec, None)?);
            }
            if let Some(spec) = &srho_spec {
                resp_col.push(syst_bound(&r_eff, cap, spec, Some(fnorm_estimate))?);
            }
        }
        if sg_spec.is_some() {
            syst_pdf = Some(pdf_col);
        }
        if srho_spec.is_some() {
            syst_resp = Some(resp_col);
        }
    }

    let n_probe = cfg.n_max.min(200);
    let mut worst = (0usize, 0.0f64);
    for j in 0..n_bins {
        let probe = unfold::bias::kernel_probe(&op, &CompactRegion::single(j), n_probe)?;
        let last = *probe.last().unwrap();
        if last > worst.1 {
            worst = (j, last);
        }
    }
    let probe_summary = ProbeSummary {
        orders: n_probe,
        final_value: worst.1,
        worst_bin: worst.0,
        decayed: worst.1 <= 1e-8,
    };

    Ok(UnfoldReport {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho {
            n_max: cfg.n_max,
            eps: cfg.eps,
            m_rule: cfg.m_rule.to_string(),
            weights_bias: cfg.weights_bias,
            weights_stat: cfg.weights_stat,
            smoothing_sigma: cfg.smoothing_sigma,
            systematics_sg_file: cfg.systematics_sg_file.clone(),
            systematics_srho_file: cfg.systematics_srho_file.clone(),
            seed: cfg.seed,
        },
        k: op.k(),
        n_opt,
        truth_edges: grid.edges().to_vec(),
        unfolded: trace.f(n_opt)?.values().to_vec(),
        stat_sigma: e_opt.sigmas(),
        bias_bound,
        syst_bounds: SystBounds {
            measured_pdf: syst_pdf,
            response: syst_resp,
        },
        covariance,
        penalty_trace: scan
            .records
            .iter()
            .map(|r| PenaltyRow {
                n: r.n,
                bias_term: r.bias_term,
                stat_term: r.stat_term,
                penalty: r.penalty,
            })
            .collect(),
        injectivity_probe: probe_summary,
    })
}

pub fn report_json(report: &UnfoldReport) -> CliResult<String> {
    serde_json::to_string_pretty(report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Write(format!("report serialization: {e}")))
}

/// Plot CSV: one row per truth bin with center, value, statistical sigma,
/// bias bound and the summed systematic bound.
pub fn plot_csv(report: &UnfoldReport) -> String {
    let mut out = String::from("bin_center,value,stat_sigma,bias_bound,syst_bound\n");
    let n = report.unfolded.len();
    for j in 0..n {
        let center = 0.5 * (report.truth_edges[j] + report.truth_edges[j + 1]);
        let syst = report
            .syst_bounds
            .measured_pdf
            .as_ref()
            .map_or(0.0, |v| v[j])
            + report.syst_bounds.response.as_ref().map_or(0.0, |v| v[j]);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(center),
            fmt_f64(report.unfolded[j]),
            fmt_f64(report.stat_sigma[j]),
            fmt_f64(report.bias_bound[j]),
            fmt_f64(syst)
        );
    }
    out
}
