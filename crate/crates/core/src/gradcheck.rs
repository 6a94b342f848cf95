//! Small random instances for checking backpropagation against finite
//! differences.

use crate::backprop::{compare_gradients, finite_diff_gradients, loss_and_gradients_with, BackwardOptions, GradientComparison};
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::image::{Image, Measurement};
use crate::network::{AnalysisSpec, LayerParams, LearningMode, NetworkParams};
use crate::operators::{DegradationOperator, LinearMap, SiteRule};
use crate::rng::SeededRng;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_REL_TOL: f64 = 1e-5;
/// Differences below this are accepted whatever the relative error.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-8;

/// Smallest accepted gap between a dual pre-activation and a clipping kink.
/// Closer values make central differences straddle the kink.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceSpec {
    pub layers: usize,
    pub side: usize,
    pub rows: usize,
    pub block_sparse: bool,
    pub blur: bool,
    pub samples: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            layers: 3,
            side: 4,
            rows: 8,
            block_sparse: false,
            blur: true,
            samples: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub params: NetworkParams,
    pub batch: Vec<Pair>,
}

fn analysis_spec(spec: &InstanceSpec) -> Result<AnalysisSpec> {
    if !spec.block_sparse {
        return Ok(AnalysisSpec::Dense { rows: spec.rows });
    }
    // 2x2 windows on a 2x2 lattice of sites.
    let stride = spec.side.checked_sub(2).filter(|&s| s > 0).ok_or_else(|| {
        Error::InvalidArgument("block-sparse instances need a side of at least 3".into())
    })?;
    if spec.rows % 4 != 0 {
        return Err(Error::InvalidArgument("block-sparse instances need P divisible by 4".into()));
    }
    Ok(AnalysisSpec::Block {
        q: 2,
        stride,
        filters_per_site: spec.rows / 4,
        rule: SiteRule::Fit,
    })
}

impl Instance {
    /// Draws an instance in `[0, 1]` intensity units with partially active
    /// dual clipping, redrawing until every dual pre-activation is at least
    /// [`KINK_MARGIN`] away from `+-1`.
    pub fn random(spec: &InstanceSpec, seed: u64) -> Result<Self> {
        if spec.layers == 0 || spec.samples == 0 {
            return Err(Error::InvalidArgument("instances need at least one layer and one sample".into()));
        }
        let a = if spec.blur {
            DegradationOperator::uniform_blur(3, spec.side)?
        } else {
            DegradationOperator::identity(spec.side)?
        };
        let l_spec = analysis_spec(spec)?;
        l_spec.validate(spec.side)?;
        for attempt in 0..1000u64 {
            let mut rng = SeededRng::stream(seed, attempt);
            let layers = (0..spec.layers)
                .map(|_| {
                    Ok(LayerParams {
                        tau: 0.3 + 0.6 * rng.uniform(),
                        sigma: 0.2 + 0.6 * rng.uniform(),
                        analysis: l_spec.build(spec.side, rng.next_u64(), 0.5)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let params = NetworkParams {
                degradation: a.clone(),
                layers,
                mode: LearningMode::Full,
                prox: crate::prox::ProxSpec::L1,
            };
            let n = spec.side * spec.side;
            let batch = (0..spec.samples)
                .map(|_| {
                    let clean = Image::new(spec.side, (0..n).map(|_| rng.uniform()).collect())?;
                    let mut z = a.apply(clean.pixels())?;
                    z.iter_mut().for_each(|v| *v += 0.05 * rng.standard_normal());
                    Ok(Pair {
                        clean,
                        degraded: Measurement::new(z)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if well_conditioned(&params, &batch)? {
                return Ok(Self { params, batch });
            }
        }
        Err(Error::InvalidArgument("could not draw an instance away from clipping kinks".into()))
    }
}

fn well_conditioned(params: &NetworkParams, batch: &[Pair]) -> Result<bool> {
    let depth = params.depth();
    let mut active = vec![false; depth.saturating_sub(1)];
    for pair in batch {
        let (_, trace) = params.forward_traced(pair.degraded.values())?;
        for (k, rec) in trace.layers[..depth - 1].iter().enumerate() {
            if rec.dual_pre.iter().any(|c| (c.abs() - 1.0).abs() < KINK_MARGIN) {
                return Ok(false);
            }
            active[k] |= rec.dual_pre.iter().any(|c| c.abs() < 1.0);
        }
    }
    Ok(active.iter().all(|&a| a))
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Per layer and group, `|a - n| / max(|a|, |n|, abs_floor / rel_tol)`.
    pub errors: GradientComparison,
    /// Analytic gradients that are exactly zero because their entry has no
    /// effect on the loss (the last layer's `sigma`).
    pub structural_zeros: Vec<bool>,
    pub rel_tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.errors.max() <= self.rel_tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub epsilon: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub backward: BackwardOptions,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            rel_tol: DEFAULT_REL_TOL,
            abs_floor: DEFAULT_ABS_FLOOR,
            backward: BackwardOptions::default(),
        }
    }
}

/// Compares analytic gradients with central differences. An entry passes
/// when its difference is within `rel_tol` relative or `abs_floor` absolute.
pub fn gradcheck(params: &NetworkParams, batch: &[Pair], options: &GradcheckOptions) -> Result<GradcheckReport> {
    let (_, analytic) = loss_and_gradients_with(params, batch, options.backward)?;
    let numeric = finite_diff_gradients(params, batch, options.epsilon)?;
    let errors = compare_gradients(&analytic, &numeric, options.abs_floor / options.rel_tol);
    let structural_zeros = analytic.layers.iter().map(|g| g.d_sigma == 0.0).collect();
    Ok(GradcheckReport {
        errors,
        structural_zeros,
        rel_tol: options.rel_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_passes() {
        let inst = Instance::random(&InstanceSpec::default(), 0).unwrap();
        let report = gradcheck(&inst.params, &inst.batch, &GradcheckOptions::default()).unwrap();
        assert!(report.passed(), "{:?}", report.errors);
        assert_eq!(report.structural_zeros.last(), Some(&true));
    }

    #[test]
    fn flipped_output_sign_fails() {
        let inst = Instance::random(&InstanceSpec::default(), 1).unwrap();
        let options = GradcheckOptions {
            backward: BackwardOptions { flip_output_sign: true },
            ..Default::default()
        };
        let report = gradcheck(&inst.params, &inst.batch, &options).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn block_sparse_instance_has_expected_rows() {
        let spec = InstanceSpec {
            block_sparse: true,
            side: 3,
            rows: 8,
            ..Default::default()
        };
        let inst = Instance::random(&spec, 2).unwrap();
        assert_eq!(inst.params.layers[0].analysis.rows(), 8);
        assert_eq!(inst.params.layers[0].analysis.nnz(), 32);
    }
}
