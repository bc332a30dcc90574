//! Penalty function over the iteration order and the optimal stopping
//! choice.
//!
//! The penalty is a weighted sum of a bias term (summed global bias bounds
//! over a list of regions) and a statistical term (integrated per-bin
//! statistical errors). Its exact form is a configurable convention; the
//! defaults use unit weights and one region per truth bin.

use crate::bias::bias_bound_global;
use crate::error::{Result, UnfoldError};
use crate::histo::CompactRegion;
use crate::unfolder::IterationTrace;

/// Affine rule `M(N) = a N + b` for picking the auxiliary order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MRule {
    pub a: usize,
    pub b: usize,
}

impl Default for MRule {
    fn default() -> Self {
        MRule { a: 4, b: 50 }
    }
}

impl MRule {
    pub fn m(&self, n: usize) -> usize {
        (self.a * n + self.b).max(n + 1)
    }

    /// Parse a rule of the form `"4n+50"`.
    pub fn parse(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let lower = compact.to_ascii_lowercase();
        let (a_part, b_part) = lower
            .split_once("n+")
            .ok_or_else(|| UnfoldError::InvalidValue(format!("cannot parse m_rule '{s}'")))?;
        let a = a_part
            .parse()
            .map_err(|_| UnfoldError::InvalidValue(format!("cannot parse m_rule '{s}'")))?;
        let b = b_part
            .parse()
            .map_err(|_| UnfoldError::InvalidValue(format!("cannot parse m_rule '{s}'")))?;
        Ok(MRule { a, b })
    }
}

impl std::fmt::Display for MRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}n+{}", self.a, self.b)
    }
}

/// Configuration of the penalty scan.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub weight_bias: f64,
    pub weight_stat: f64,
    pub eps: f64,
    pub m_rule: MRule,
    /// Regions whose bias bounds are summed; `None` means one region per
    /// truth bin.
    pub regions: Option<Vec<CompactRegion>>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            weight_bias: 1.0,
            weight_stat: 1.0,
            eps: crate::bias::DEFAULT_EPS,
            m_rule: MRule::default(),
            regions: None,
        }
    }
}

/// One row of the penalty scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyRecord {
    pub n: usize,
    pub bias_term: f64,
    pub stat_term: f64,
    pub penalty: f64,
}

/// The full scan with its minimizer.
#[derive(Debug, Clone)]
pub struct PenaltyTrace {
    pub records: Vec<PenaltyRecord>,
    pub n_opt: usize,
    pub weight_bias: f64,
    pub weight_stat: f64,
}

impl PenaltyTrace {
    pub fn at(&self, n: usize) -> Option<&PenaltyRecord> {
        self.records.get(n)
    }
}

/// Exhaustive penalty scan over every order `N` whose auxiliary order
/// `M(N)` is inside the trace; `stat_terms[N]` must hold
/// `sum_j sigma_j(N) w_x[j]`.
///
/// Ties in the minimum resolve to the smallest `N`.
pub fn evaluate_penalty(
    trace: &IterationTrace,
    stat_terms: &[f64],
    cfg: &PenaltyConfig,
) -> Result<PenaltyTrace> {
    let grid = trace.operator().grid().clone();
    let default_regions: Vec<CompactRegion>;
    let regions: &[CompactRegion] = match &cfg.regions {
        Some(r) => r,
        None => {
            default_regions = (0..grid.n_bins()).map(CompactRegion::single).collect();
            &default_regions
        }
    };

    let n_eval = (0..=trace.n_max())
        .take_while(|&n| cfg.m_rule.m(n) <= trace.n_max() && n < stat_terms.len())
        .count();
    if n_eval == 0 {
        return Err(UnfoldError::InsufficientTrace(format!(
            "trace reaches order {}, M rule needs at least {}",
            trace.n_max(),
            cfg.m_rule.m(0)
        )));
    }

    let mut records = Vec::with_capacity(n_eval);
    for n in 0..n_eval {
        let m = cfg.m_rule.m(n);
        let mut bias_term = 0.0;
        for u in regions {
            bias_term += bias_bound_global(trace, n, m, cfg.eps, u)?;
        }
        let stat_term = stat_terms[n];
        let penalty = cfg.weight_bias * bias_term + cfg.weight_stat * stat_term;
        records.push(PenaltyRecord {
            n,
            bias_term,
            stat_term,
            penalty,
        });
    }

    let mut n_opt = 0;
    for r in &records {
        if r.penalty < records[n_opt].penalty {
            n_opt = r.n;
        }
    }
    Ok(PenaltyTrace {
        records,
        n_opt,
        weight_bias: cfg.weight_bias,
        weight_stat: cfg.weight_stat,
    })
}
