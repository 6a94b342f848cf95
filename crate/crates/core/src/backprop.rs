//! Reverse-mode gradients of the batch loss
//! `E = 1/B sum_s ||x_s - forward(z_s)||^2` with respect to every
//! `tau`, `sigma` and analysis coefficient.
//!
//! Per layer, with `s = 2 c1 - x` and `J = diag(|c2| < 1)`:
//!
//! ```text
//! g_c2 = J g_y'                      g_c1 = g_x' + 2 sigma L* g_c2
//! dE/dsigma += <g_c2, L s>           dE/dL += sigma g_c2 s^T - tau y g_c1^T
//! dE/dtau   += <g_c1, A*z - A*A x - L* y>
//! g_x = g_c1 - tau A*A g_c1 - sigma L* g_c2
//! g_y = g_c2 - tau L g_c1
//! ```
//!
//! The last layer has no dual output, so its `g_c2` terms vanish.

use rayon::prelude::*;

use crate::data::Pair;
use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::network::{LayerTrace, NetworkParams};
use crate::operators::LinearMap;
use crate::prox::clip_passes;

/// Samples per reduction chunk. Chunk sums are added in chunk order, so the
/// result does not depend on the number of worker threads.
pub const REDUCTION_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_tau: f64,
    pub d_sigma: f64,
    /// Same packed layout as the layer's analysis weights.
    pub d_l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradients {
                    d_tau: 0.0,
                    d_sigma: 0.0,
                    d_l: vec![0.0; l.analysis.nnz()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.d_tau += b.d_tau;
            a.d_sigma += b.d_sigma;
            a.d_l.iter_mut().zip(&b.d_l).for_each(|(x, y)| *x += y);
        }
    }

    /// First non-finite component as `(layer, group)`, 1-based layer.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.layers.iter().enumerate().find_map(|(k, g)| {
            if !g.d_tau.is_finite() {
                Some((k + 1, "tau"))
            } else if !g.d_sigma.is_finite() {
                Some((k + 1, "sigma"))
            } else if g.d_l.iter().any(|v| !v.is_finite()) {
                Some((k + 1, "L"))
            } else {
                None
            }
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some((layer, group)) => Err(Error::NonFiniteGradient { layer, group }),
            None => Ok(()),
        }
    }
}

/// Test hooks for mutation testing of the gradient checker.
#[derive(Debug, Clone, Copy, Default)]
pub struct BackwardOptions {
    /// Negates the output-layer error signal.
    pub flip_output_sign: bool,
}

fn check_pair(params: &NetworkParams, pair: &Pair) -> Result<()> {
    check_dim("clean image", params.image_dim(), pair.clean.len())?;
    check_dim("measurement", params.measurement_dim(), pair.degraded.len())
}

/// Mean squared reconstruction error over the batch.
pub fn loss(params: &NetworkParams, batch: &[Pair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss needs a nonempty batch".into()));
    }
    let chunks: Vec<f64> = batch
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            chunk.iter().try_fold(0.0, |acc, pair| {
                check_pair(params, pair)?;
                let out = params.forward(pair.degraded.values())?;
                Ok(acc + sq_dist(&out, pair.clean.pixels()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.iter().sum::<f64>() / batch.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Adds one sample's contribution, with the output error already scaled.
fn backward_sample(
    params: &NetworkParams,
    trace: &LayerTrace,
    output_grad: Vec<f64>,
    grads: &mut Gradients,
) -> Result<()> {
    let depth = params.depth();
    if trace.layers.len() != depth {
        return Err(Error::MissingTrace(format!(
            "trace has {} layers, network has {depth}",
            trace.layers.len()
        )));
    }
    let n = params.image_dim();
    let a = &params.degradation;
    let mut scratch = vec![0.0; a.out_dim()];
    let mut tmp = vec![0.0; n];
    let mut gx_next = output_grad;
    let mut gy_next: Option<Vec<f64>> = None;

    for k in (0..depth).rev() {
        let layer = &params.layers[k];
        let l = &layer.analysis;
        let rec = &trace.layers[k];
        let (x_in, y_in) = trace.layer_input(k);
        let g = &mut grads.layers[k];
        let last = k + 1 == depth;

        let (gc1, mut gx, mut gy) = if last {
            (gx_next, vec![0.0; n], None)
        } else {
            let gy_out = gy_next
                .take()
                .ok_or_else(|| Error::MissingTrace(format!("no dual gradient into layer {}", k + 1)))?;
            if rec.dual_pre.len() != l.rows() || rec.sigma_direction.len() != l.rows() {
                return Err(Error::MissingTrace(format!("layer {} has no dual record", k + 1)));
            }
            let gc2: Vec<f64> = gy_out
                .iter()
                .zip(&rec.dual_pre)
                .map(|(&gv, &c)| if clip_passes(c) { gv } else { 0.0 })
                .collect();
            g.d_sigma += dot(&gc2, &rec.sigma_direction);
            let s: Vec<f64> = rec.primal.iter().zip(x_in).map(|(c, x)| 2.0 * c - x).collect();
            l.accumulate_outer(&mut g.d_l, &gc2, &s, layer.sigma);
            l.apply_adjoint_into(&gc2, &mut tmp);
            let gs: Vec<f64> = tmp.iter().map(|v| layer.sigma * v).collect();
            let gc1: Vec<f64> = gx_next.iter().zip(&gs).map(|(a, b)| a + 2.0 * b).collect();
            let gx: Vec<f64> = gs.iter().map(|v| -v).collect();
            (gc1, gx, y_in.map(|_| gc2))
        };

        g.d_tau += dot(&gc1, &rec.tau_direction);
        if let Some(y) = y_in {
            let mut lg = vec![0.0; l.rows()];
            l.apply_into(&gc1, &mut lg);
            let gy = gy.get_or_insert_with(|| vec![0.0; l.rows()]);
            gy.iter_mut().zip(&lg).for_each(|(a, b)| *a -= layer.tau * b);
            l.accumulate_outer(&mut g.d_l, y, &gc1, -layer.tau);
        }
        if k > 0 {
            a.gram_into(&gc1, &mut scratch, &mut tmp);
            for ((gxi, c), t) in gx.iter_mut().zip(&gc1).zip(&tmp) {
                *gxi += c - layer.tau * t;
            }
        }
        gx_next = gx;
        gy_next = gy.take();
    }
    Ok(())
}

/// Gradients of [`loss`] from traces recorded on the same batch.
pub fn backward(params: &NetworkParams, batch: &[Pair], traces: &[LayerTrace]) -> Result<Gradients> {
    backward_with(params, batch, traces, BackwardOptions::default())
}

pub fn backward_with(
    params: &NetworkParams,
    batch: &[Pair],
    traces: &[LayerTrace],
    options: BackwardOptions,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("backward needs a nonempty batch".into()));
    }
    if traces.len() != batch.len() {
        return Err(Error::MissingTrace(format!(
            "{} traces for a batch of {}",
            traces.len(),
            batch.len()
        )));
    }
    let scale = output_scale(batch.len(), options);
    let parts = batch
        .par_chunks(REDUCTION_CHUNK)
        .zip(traces.par_chunks(REDUCTION_CHUNK))
        .map(|(pairs, traces)| {
            let mut grads = Gradients::zeros(params);
            for (pair, trace) in pairs.iter().zip(traces) {
                check_pair(params, pair)?;
                let og = output_grad(trace.output(), pair.clean.pixels(), scale);
                backward_sample(params, trace, og, &mut grads)?;
            }
            Ok(grads)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(params, parts))
}

fn output_scale(batch: usize, options: BackwardOptions) -> f64 {
    let s = 2.0 / batch as f64;
    if options.flip_output_sign {
        -s
    } else {
        s
    }
}

fn output_grad(out: &[f64], clean: &[f64], scale: f64) -> Vec<f64> {
    out.iter().zip(clean).map(|(o, c)| scale * (o - c)).collect()
}

fn reduce(params: &NetworkParams, parts: Vec<Gradients>) -> Gradients {
    let mut total = Gradients::zeros(params);
    for p in &parts {
        total.add_assign(p);
    }
    total
}

/// Loss and gradients in one pass without keeping all traces alive.
pub fn loss_and_gradients(params: &NetworkParams, batch: &[Pair]) -> Result<(f64, Gradients)> {
    loss_and_gradients_with(params, batch, BackwardOptions::default())
}

pub fn loss_and_gradients_with(
    params: &NetworkParams,
    batch: &[Pair],
    options: BackwardOptions,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("training batch must be nonempty".into()));
    }
    let scale = output_scale(batch.len(), options);
    let parts = batch
        .par_chunks(REDUCTION_CHUNK)
        .map(|pairs| {
            let mut grads = Gradients::zeros(params);
            let mut sum = 0.0;
            for pair in pairs {
                check_pair(params, pair)?;
                let (out, trace) = params.forward_traced(pair.degraded.values())?;
                sum += sq_dist(&out, pair.clean.pixels());
                backward_sample(params, &trace, output_grad(&out, pair.clean.pixels(), scale), &mut grads)?;
            }
            Ok((sum, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = parts.iter().map(|(s, _)| s).sum::<f64>() / batch.len() as f64;
    Ok((loss, reduce(params, parts.into_iter().map(|(_, g)| g).collect())))
}

/// Central differences of [`loss`] over every `tau`, `sigma` and stored
/// analysis coefficient. Entries outside a row's window are not parameters
/// and never appear.
pub fn finite_diff_gradients(params: &NetworkParams, batch: &[Pair], epsilon: f64) -> Result<Gradients> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut work = params.clone();
    let mut grads = Gradients::zeros(params);
    let central = |work: &mut NetworkParams, set: &dyn Fn(&mut NetworkParams, f64)| -> Result<f64> {
        set(work, epsilon);
        let plus = loss(work, batch)?;
        set(work, -2.0 * epsilon);
        let minus = loss(work, batch)?;
        set(work, epsilon);
        Ok((plus - minus) / (2.0 * epsilon))
    };
    for k in 0..params.depth() {
        let base = params.layers[k].clone();
        grads.layers[k].d_tau = central(&mut work, &|p, d| p.layers[k].tau += d)?;
        work.layers[k].tau = base.tau;
        grads.layers[k].d_sigma = central(&mut work, &|p, d| p.layers[k].sigma += d)?;
        work.layers[k].sigma = base.sigma;
        for j in 0..base.analysis.nnz() {
            grads.layers[k].d_l[j] = central(&mut work, &|p, d| p.layers[k].analysis.weights_mut()[j] += d)?;
            work.layers[k].analysis.weights_mut()[j] = base.analysis.weights()[j];
        }
    }
    Ok(grads)
}

/// Largest relative error `|a - b| / max(|a|, |b|, floor)` per group and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientComparison {
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    pub analysis: Vec<f64>,
}

impl GradientComparison {
    pub fn max(&self) -> f64 {
        self.tau
            .iter()
            .chain(&self.sigma)
            .chain(&self.analysis)
            .fold(0.0, |m, &v| m.max(v))
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients, floor: f64) -> GradientComparison {
    let pairs = || analytic.layers.iter().zip(&numeric.layers);
    GradientComparison {
        tau: pairs().map(|(a, n)| relative_error(a.d_tau, n.d_tau, floor)).collect(),
        sigma: pairs().map(|(a, n)| relative_error(a.d_sigma, n.d_sigma, floor)).collect(),
        analysis: pairs()
            .map(|(a, n)| {
                a.d_l
                    .iter()
                    .zip(&n.d_l)
                    .fold(0.0, |m, (&x, &y)| f64::max(m, relative_error(x, y, floor)))
            })
            .collect(),
    }
}
