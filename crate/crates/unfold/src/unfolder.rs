//! The core iteration `f_{N+1} = f_N + (f_0 - A f_N)` together with trace
//! recording and the indicator-function iterate families used by the bias
//! and systematic bounds.

use crate::error::{Result, UnfoldError};
use crate::folding::{transpose_fold, CompositeOperator};
use crate::histo::{CompactRegion, Histogram, Kind, ResponseMatrix};

/// Default iteration cap when none is configured.
pub const DEFAULT_N_MAX: usize = 1000;

/// Starting point `f_0 = K^{-1} A_rho^T g`.
pub fn init(response: &ResponseMatrix, g: &Histogram) -> Result<Histogram> {
    let k = crate::folding::compute_k(response)?;
    let h = transpose_fold(response, g)?;
    Ok(h.scale(1.0 / k))
}

/// One iteration step: `f_N + (f_0 - A f_N)`.
pub fn step(op: &CompositeOperator, f0: &Histogram, fnow: &Histogram) -> Result<Histogram> {
    if f0.grid() != op.grid() || fnow.grid() != op.grid() {
        return Err(UnfoldError::GridMismatch(
            "iterates must live on the operator's truth grid".into(),
        ));
    }
    let af = op.apply_slice(fnow.values());
    let values = (0..op.n_bins())
        .map(|j| fnow.values()[j] + f0.values()[j] - af[j])
        .collect();
    Histogram::new(op.grid().clone(), values, Kind::Density)
}

/// Record of the iterates `f_0 .. f_{N_max}` with their norm ledger.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    op: CompositeOperator,
    iterates: Vec<Histogram>,
    /// `||f_N||_{L2}` for each stored order; non-decreasing in `N`.
    norms: Vec<f64>,
    /// `||f_{N+1} - f_N||_{L2}` between consecutive orders.
    step_norms: Vec<f64>,
}

impl IterationTrace {
    /// Iterate from a given `f_0` under `op`, storing every iterate.
    pub fn from_start(op: &CompositeOperator, f0: Histogram, n_max: usize) -> Result<Self> {
        if f0.grid() != op.grid() {
            return Err(UnfoldError::GridMismatch(
                "f0 is not on the operator grid".into(),
            ));
        }
        let mut iterates = Vec::with_capacity(n_max + 1);
        let mut norms = Vec::with_capacity(n_max + 1);
        let mut step_norms = Vec::with_capacity(n_max);
        norms.push(f0.l2_norm());
        iterates.push(f0);
        for n in 0..n_max {
            let next = step(op, &iterates[0].clone(), &iterates[n])?;
            step_norms.push(next.add_scaled(&iterates[n], -1.0)?.l2_norm());
            norms.push(next.l2_norm());
            iterates.push(next);
        }
        Ok(IterationTrace {
            op: op.clone(),
            iterates,
            norms,
            step_norms,
        })
    }

    pub fn operator(&self) -> &CompositeOperator {
        &self.op
    }

    /// Largest stored iteration order.
    pub fn n_max(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn f0(&self) -> &Histogram {
        &self.iterates[0]
    }

    /// The iterate `f_N`.
    pub fn f(&self, n: usize) -> Result<&Histogram> {
        self.iterates.get(n).ok_or_else(|| {
            UnfoldError::InsufficientTrace(format!(
                "order {n} requested, trace holds 0..={}",
                self.n_max()
            ))
        })
    }

    pub fn norm(&self, n: usize) -> Result<f64> {
        self.f(n).map(|_| self.norms[n])
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn step_norms(&self) -> &[f64] {
        &self.step_norms
    }

    /// `||f_M - f_N||_{L2}`, computed on demand.
    pub fn diff_norm(&self, m: usize, n: usize) -> Result<f64> {
        let fm = self.f(m)?.clone();
        let fn_ = self.f(n)?;
        Ok(fm.add_scaled(fn_, -1.0)?.l2_norm())
    }
}

/// Full pipeline entry: optional preconditioning, then `f_0` and the
/// iteration up to `n_max`.
pub fn run(
    response: &ResponseMatrix,
    g: &Histogram,
    n_max: usize,
    smoothing: Option<&ResponseMatrix>,
) -> Result<IterationTrace> {
    let (response, g) = match smoothing {
        Some(kernel) => crate::folding::precondition(response, g, kernel)?,
        None => (response.clone(), g.clone()),
    };
    let op = CompositeOperator::from_response(&response)?;
    let f0 = init(&response, &g)?;
    IterationTrace::from_start(&op, f0, n_max)
}

/// The indicator iterate families for a region `U`.
#[derive(Debug, Clone)]
pub struct IndicatorIterates {
    /// `xi_U = chi_U / Volume(U)`.
    pub xi: Histogram,
    /// `xi_{U,N}`: the iteration applied with `xi_U` as the unknown pdf,
    /// i.e. started from `A xi_U`. Indexed by `N`.
    pub xi_n: Vec<Histogram>,
    /// `Xi_{U,N}`: `Xi_{U,0} = xi_U`, `Xi_{U,N+1} = Xi_{U,N} + (Xi_{U,0} - A Xi_{U,N})`.
    pub cap_xi_n: Vec<Histogram>,
}

impl IndicatorIterates {
    pub fn n_max(&self) -> usize {
        self.xi_n.len() - 1
    }

    pub fn xi_at(&self, n: usize) -> Result<&Histogram> {
        self.xi_n.get(n).ok_or_else(|| {
            UnfoldError::InsufficientTrace(format!("indicator order {n} not computed"))
        })
    }

    pub fn cap_xi_at(&self, n: usize) -> Result<&Histogram> {
        self.cap_xi_n.get(n).ok_or_else(|| {
            UnfoldError::InsufficientTrace(format!("indicator order {n} not computed"))
        })
    }
}

/// Compute `xi_U`, the iterates `xi_{U,0..N}` and `Xi_{U,0..N}`.
pub fn indicator_iterates(
    op: &CompositeOperator,
    region: &CompactRegion,
    n_max: usize,
) -> Result<IndicatorIterates> {
    let xi = region.indicator_density(op.grid())?;
    let a_xi = op.apply(&xi)?;
    let xi_trace = IterationTrace::from_start(op, a_xi, n_max)?;
    let mut cap = Vec::with_capacity(n_max + 1);
    cap.push(xi.clone());
    for n in 0..n_max {
        cap.push(step(op, &xi, &cap[n])?);
    }
    Ok(IndicatorIterates {
        xi,
        xi_n: xi_trace.iterates,
        cap_xi_n: cap,
    })
}
