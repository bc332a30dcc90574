//! Linear iterative unfolding of binned probability distributions.
//!
//! Given a measured histogram `g` and a known detector response `rho`, the
//! crate reconstructs the truth-level distribution `f` solving
//! `g = A_rho f` by the plain linear iteration
//!
//! ```text
//! f_0     = K^{-1} A_rho^T g
//! f_{N+1} = f_N + (f_0 - K^{-1} A_rho^T A_rho f_N)
//! ```
//!
//! together with everything needed to use it responsibly:
//!
//! * computable upper bounds on the bias (residual) error at finite order
//!   ([`bias`]),
//! * exact statistical covariance propagation through the iteration
//!   ([`errors`]),
//! * upper bounds on propagated systematic errors from envelopes on the
//!   measured pdf or on the response ([`errors`]),
//! * a penalty-function stopping criterion balancing bias against
//!   statistical noise ([`stopping`]),
//! * an independent spectral / Monte Carlo oracle for validation
//!   ([`oracle`]).
//!
//! Histograms and responses are discretizations of densities over a
//! [`BinGrid`]; every norm and inner product is weighted by the bin widths
//! so the discrete objects mirror their continuum counterparts.

pub mod bias;
pub mod error;
pub mod errors;
pub mod folding;
pub mod histo;
pub mod math;
pub mod oracle;
pub mod stopping;
pub mod unfolder;

pub use error::{Result, UnfoldError};
pub use folding::{compute_k, fold, gaussian_kernel, precondition, transpose_fold, CompositeOperator};
pub use histo::{
    normalize_counts, region_volume, BinGrid, CompactRegion, ErrorMatrix, Histogram, Kind,
    ResponseMatrix,
};
pub use unfolder::{indicator_iterates, init, run, step, IndicatorIterates, IterationTrace};
