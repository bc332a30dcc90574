//! Computable upper bounds on the residual (bias) error at finite
//! iteration order.
//!
//! All norms are measure-weighted L2 norms on the truth grid. The auxiliary
//! order `M > N` and the slack `eps` trade cost against tightness; the
//! defaults below are heuristics, not constructive thresholds, and are
//! overridable everywhere.

use crate::error::{Result, UnfoldError};
use crate::folding::CompositeOperator;
use crate::histo::CompactRegion;
use crate::unfolder::{IndicatorIterates, IterationTrace};

/// Default slack on the from-below norm approximations.
pub const DEFAULT_EPS: f64 = 0.05;

/// Default auxiliary order for a given `n`.
pub fn default_m(n: usize) -> usize {
    (4 * (n + 1)).max(n + 50)
}

/// Global bias bound `(1 + eps) ||f_M - f_N|| / sqrt(Volume(U))`.
pub fn bias_bound_global(
    trace: &IterationTrace,
    n: usize,
    m: usize,
    eps: f64,
    region: &CompactRegion,
) -> Result<f64> {
    if m <= n {
        return Err(UnfoldError::BadOrder { m, n });
    }
    let vol = region.volume(trace.operator().grid())?;
    Ok((1.0 + eps) * trace.diff_norm(m, n)? / vol.sqrt())
}

/// Region-local bias bound `(1 + eps) ||f_M|| ||xi_{U,M} - xi_{U,N}||`.
///
/// With `injective = true` the cheaper variant
/// `(1 + eps) ||f_M|| ||xi_U - xi_{U,N}||` is used instead, which is valid
/// when the folding operator is one-to-one.
pub fn bias_bound_local(
    trace: &IterationTrace,
    indicator: &IndicatorIterates,
    n: usize,
    m: usize,
    eps: f64,
    injective: bool,
) -> Result<f64> {
    if m <= n {
        return Err(UnfoldError::BadOrder { m, n });
    }
    let fm_norm = trace.norm(m)?;
    let xi_dist = if injective {
        indicator
            .xi
            .clone()
            .add_scaled(indicator.xi_at(n)?, -1.0)?
            .l2_norm()
    } else {
        indicator
            .xi_at(m)?
            .clone()
            .add_scaled(indicator.xi_at(n)?, -1.0)?
            .l2_norm()
    };
    Ok((1.0 + eps) * fm_norm * xi_dist)
}

/// Injectivity probe: the sequence `||xi_U - xi_{U,N}||` for `N = 0..n_max`.
///
/// Decay towards zero is consistent with a trivial kernel on the span of
/// `xi_U`; a plateau at a positive level estimates `||P_ker xi_U||`.
pub fn kernel_probe(
    op: &CompositeOperator,
    region: &CompactRegion,
    n_max: usize,
) -> Result<Vec<f64>> {
    let it = crate::unfolder::indicator_iterates(op, region, n_max)?;
    (0..=n_max)
        .map(|n| {
            Ok(it
                .xi
                .clone()
                .add_scaled(it.xi_at(n)?, -1.0)?
                .l2_norm())
        })
        .collect()
}
