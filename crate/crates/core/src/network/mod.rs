//! The unrolled primal-dual network.
//!
//! Layer `k` maps the pair `(x, y)` to
//!
//! ```text
//! c1 = x + tau (A* z - A*A x - L* y)          primal, identity activation
//! c2 = y + sigma L (2 c1 - x)                 dual, clipped to [-1, 1]
//! ```
//!
//! which is one Condat–Vũ iteration written as `eta(D u + b)`. The first
//! layer starts from `x = A* z` with `y = 0`, and the last layer only emits
//! the primal block. Blocks of `D` are never materialized; each layer costs
//! one `A*A`, one `L*` and one `L` application.

mod model_file;
mod spec;

pub use model_file::{deserialize, from_json, serialize, to_json, MODEL_VERSION};
pub use spec::{build_fused, AnalysisSpec};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::operators::{
    operator_norm_from, AnalysisOperator, DegradationOperator, LinearMap, NORM_TOL,
};
use crate::pdhg::{constraint_distance, StepSizes};
use crate::prox::{clip_unit, ProxSpec};
use crate::rng::SeededRng;

/// Default standard deviation of the initial analysis coefficients.
pub const DEFAULT_INIT_STDDEV: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    /// `tau`, `sigma` and `L` are all descended.
    #[default]
    Full,
    /// `tau` and `L` are descended; `sigma` saturates the convergence condition.
    Partial,
}

impl LearningMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LearningMode::Full => "full",
            LearningMode::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub tau: f64,
    pub sigma: f64,
    pub analysis: AnalysisOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub degradation: DegradationOperator,
    pub layers: Vec<LayerParams>,
    pub mode: LearningMode,
    pub prox: ProxSpec,
}

/// Initialization recipe.
#[derive(Debug, Clone)]
pub struct InitConfig {
    pub layers: usize,
    pub analysis: Vec<AnalysisSpec>,
    pub stddev: f64,
    pub tau: f64,
    pub mode: LearningMode,
    pub seed: u64,
}

impl InitConfig {
    pub fn new(layers: usize, analysis: Vec<AnalysisSpec>, seed: u64) -> Self {
        Self {
            layers,
            analysis,
            stddev: DEFAULT_INIT_STDDEV,
            tau: 1.0,
            mode: LearningMode::Full,
            seed,
        }
    }

    pub fn mode(mut self, mode: LearningMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Cached quantities of one layer for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// Primal pre-activation `c1` (equal to the primal output).
    pub primal: Vec<f64>,
    /// Dual pre-activation `c2`; empty for the last layer.
    pub dual_pre: Vec<f64>,
    /// Dual output `clip(c2)`; empty for the last layer.
    pub dual: Vec<f64>,
    /// `A* z - A*A x - L* y`, the derivative of `c1` with respect to `tau`.
    pub tau_direction: Vec<f64>,
    /// `L (2 c1 - x)`, the derivative of `c2` with respect to `sigma`.
    pub sigma_direction: Vec<f64>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Network input `A* z`.
    pub input: Vec<f64>,
    pub layers: Vec<LayerRecord>,
}

impl LayerTrace {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("trace has at least one layer").primal
    }

    /// Primal/dual input of layer `k` (0-based).
    pub fn layer_input(&self, k: usize) -> (&[f64], Option<&[f64]>) {
        if k == 0 {
            (&self.input, None)
        } else {
            let prev = &self.layers[k - 1];
            (&prev.primal, Some(&prev.dual))
        }
    }
}

/// Work counters of a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Multiply-adds spent in `L` and `L*` applications.
    pub analysis_macs: usize,
    /// Number of `A*A` applications.
    pub gram_applications: usize,
}

impl NetworkParams {
    pub fn init(degradation: DegradationOperator, config: &InitConfig) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if !(config.tau > 0.0) {
            return Err(Error::InvalidArgument("initial tau must be positive".into()));
        }
        let side = degradation.side();
        for s in &config.analysis {
            s.validate(side)?;
        }
        let norm_a = degradation.norm();
        let layers = (0..config.layers)
            .map(|k| {
                let seed = SeededRng::stream(config.seed, k as u64).next_u64();
                let analysis = build_fused(&config.analysis, side, seed, config.stddev)?;
                let norm_l = analysis.norm()?;
                if norm_l == 0.0 {
                    return Err(Error::ZeroAnalysisNorm);
                }
                let sigma = StepSizes::saturating_sigma(config.tau, norm_a, norm_l);
                if !(sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "initial tau {} leaves no room for sigma (||A|| = {norm_a})",
                        config.tau
                    )));
                }
                Ok(LayerParams {
                    tau: config.tau,
                    sigma,
                    analysis,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            degradation,
            layers,
            mode: config.mode,
            prox: ProxSpec::L1,
        })
    }

    /// `depth` copies of the same layer.
    pub fn shared(degradation: DegradationOperator, layer: LayerParams, depth: usize, mode: LearningMode) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        check_dim("shared layer analysis", degradation.in_dim(), layer.analysis.cols())?;
        Ok(Self {
            degradation,
            layers: vec![layer; depth],
            mode,
            prox: ProxSpec::L1,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn image_dim(&self) -> usize {
        self.degradation.in_dim()
    }

    pub fn measurement_dim(&self) -> usize {
        self.degradation.out_dim()
    }

    /// Checks that every layer acts on the image space and has positive steps.
    pub fn validate(&self) -> Result<()> {
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.analysis.cols() != self.image_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer analysis operator",
                    expected: self.image_dim(),
                    actual: layer.analysis.cols(),
                });
            }
            if !(layer.tau > 0.0 && layer.tau.is_finite() && layer.sigma > 0.0 && layer.sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has invalid step sizes (tau={}, sigma={})",
                    k + 1,
                    layer.tau,
                    layer.sigma
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_impl(z, false, &mut ForwardStats::default())?.0)
    }

    pub fn forward_traced(&self, z: &[f64]) -> Result<(Vec<f64>, LayerTrace)> {
        let (out, trace) = self.forward_impl(z, true, &mut ForwardStats::default())?;
        Ok((out, trace.expect("trace requested")))
    }

    pub fn forward_with_stats(&self, z: &[f64]) -> Result<(Vec<f64>, ForwardStats)> {
        let mut stats = ForwardStats::default();
        let (out, _) = self.forward_impl(z, false, &mut stats)?;
        Ok((out, stats))
    }

    fn forward_impl(
        &self,
        z: &[f64],
        keep_trace: bool,
        stats: &mut ForwardStats,
    ) -> Result<(Vec<f64>, Option<LayerTrace>)> {
        check_dim("forward measurement", self.measurement_dim(), z.len())?;
        let n = self.image_dim();
        let a = &self.degradation;
        let mut backprojection = vec![0.0; n];
        a.apply_adjoint_into(z, &mut backprojection);

        let depth = self.depth();
        let mut x = backprojection.clone();
        let mut y: Option<Vec<f64>> = None;
        let mut scratch = vec![0.0; a.out_dim()];
        let mut gram = vec![0.0; n];
        let mut lty = vec![0.0; n];
        let mut records = Vec::with_capacity(if keep_trace { depth } else { 0 });

        for (k, layer) in self.layers.iter().enumerate() {
            let l = &layer.analysis;
            check_dim("layer analysis operator", n, l.cols())?;
            a.gram_into(&x, &mut scratch, &mut gram);
            stats.gram_applications += 1;
            let mut tau_direction: Vec<f64> = backprojection.iter().zip(&gram).map(|(w, g)| w - g).collect();
            if let Some(y) = &y {
                l.apply_adjoint_into(y, &mut lty);
                stats.analysis_macs += l.nnz();
                tau_direction.iter_mut().zip(&lty).for_each(|(t, v)| *t -= v);
            }
            let primal: Vec<f64> = x
                .iter()
                .zip(&tau_direction)
                .map(|(xi, d)| xi + layer.tau * d)
                .collect();

            let last = k + 1 == depth;
            let (dual_pre, dual, sigma_direction) = if last {
                (Vec::new(), Vec::new(), Vec::new())
            } else {
                let extrapolated: Vec<f64> = primal.iter().zip(&x).map(|(c, xi)| 2.0 * c - xi).collect();
                let mut ls = vec![0.0; l.rows()];
                l.apply_into(&extrapolated, &mut ls);
                stats.analysis_macs += l.nnz();
                let dual_pre: Vec<f64> = match &y {
                    Some(y) => y.iter().zip(&ls).map(|(yi, v)| yi + layer.sigma * v).collect(),
                    None => ls.iter().map(|v| layer.sigma * v).collect(),
                };
                let dual: Vec<f64> = dual_pre.iter().map(|&c| clip_unit(c)).collect();
                (dual_pre, dual, ls)
            };

            x = primal;
            y = if last { None } else { Some(dual.clone()) };
            if keep_trace {
                records.push(LayerRecord {
                    primal: x.clone(),
                    dual_pre,
                    dual,
                    tau_direction,
                    sigma_direction,
                });
            }
        }

        let trace = keep_trace.then(|| LayerTrace {
            input: backprojection,
            layers: records,
        });
        Ok((x, trace))
    }

    /// Per-layer squared hinge of the convergence-condition violation, with
    /// freshly computed `||L||`.
    pub fn distance_report(&self) -> Result<Vec<f64>> {
        let norms = self
            .layers
            .iter()
            .map(|l| l.analysis.norm())
            .collect::<Result<Vec<_>>>()?;
        Ok(self.distances_with_norms(&norms))
    }

    pub fn distances_with_norms(&self, norms: &[f64]) -> Vec<f64> {
        let norm_a = self.degradation.norm();
        self.layers
            .iter()
            .zip(norms)
            .map(|(layer, &nl)| constraint_distance(layer.tau, layer.sigma, norm_a, nl))
            .collect()
    }
}

/// Warm-start vectors for repeated `||L||` evaluations on slowly changing
/// operators.
#[derive(Debug, Clone, Default)]
pub struct NormCache {
    vectors: Vec<Option<Vec<f64>>>,
}

impl NormCache {
    pub fn new(depth: usize) -> Self {
        Self {
            vectors: vec![None; depth],
        }
    }

    /// `||L^[k]||`, warm-started from the previous call for the same layer.
    pub fn norm(&mut self, k: usize, analysis: &AnalysisOperator) -> Result<f64> {
        if self.vectors.len() <= k {
            self.vectors.resize(k + 1, None);
        }
        let start = match &self.vectors[k] {
            Some(v) if v.len() == analysis.cols() && dot(v, v) > 0.0 => v.clone(),
            _ => {
                let mut rng = SeededRng::new(0x5eed_0f_4e0a);
                (0..analysis.cols()).map(|_| rng.standard_normal()).collect()
            }
        };
        let est = operator_norm_from(analysis, &start, NORM_TOL, 100_000)?;
        self.vectors[k] = Some(est.vector);
        Ok(est.norm)
    }

    pub fn norms(&mut self, params: &NetworkParams) -> Result<Vec<f64>> {
        params
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| self.norm(k, &l.analysis))
            .collect()
    }
}
