//! Linear maps of the restoration problem: degradation operators `A`,
//! analysis operators `L`, their adjoints, and spectral norm estimation.

mod analysis;
mod degradation;
mod norm;

pub use analysis::{AnalysisOperator, AnalysisPart, Grid, PartKind, SiteRule, Window};
pub use degradation::{DegradationKind, DegradationOperator};
pub use norm::{operator_norm, operator_norm_from, NormEstimate, NORM_TOL};

use crate::error::{check_dim, Result};

/// A real linear map `R^in -> R^out` with its transpose.
///
/// The `_into` methods are the unchecked hot path; callers guarantee slice
/// lengths. The allocating variants validate dimensions.
pub trait LinearMap {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    /// `out = Op x`; `out` is overwritten.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    /// `out = Op* y`; `out` is overwritten.
    fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("apply", self.in_dim(), x.len())?;
        let mut out = vec![0.0; self.out_dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("apply_adjoint", self.out_dim(), y.len())?;
        let mut out = vec![0.0; self.in_dim()];
        self.apply_adjoint_into(y, &mut out);
        Ok(out)
    }

    /// `out = Op* Op x`, using `scratch` of length `out_dim`.
    fn gram_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.apply_into(x, scratch);
        self.apply_adjoint_into(scratch, out);
    }
}
