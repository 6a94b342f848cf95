//! Mini-batch SGD on the unrolled network.

use std::fmt::Write as _;

use crate::backprop::{loss, loss_and_gradients, Gradients};
use crate::data::Pair;
use crate::error::{check_dim, Error, Result};
use crate::eval::evaluate;
use crate::network::{LearningMode, NetworkParams, NormCache};
use crate::pdhg::StepSizes;
use crate::rng::SeededRng;

/// Lower bound kept on `tau` and `sigma` after every step.
pub const MIN_STEP: f64 = 1e-8;

/// Relative distance kept from `tau = 2 / ||A||^2` in partial mode, where
/// the saturating `sigma` would vanish.
pub const PARTIAL_TAU_MARGIN: f64 = 1e-6;

/// Relative distance kept below the saturating `sigma` in partial mode. At
/// small `tau` the condition compares numbers near `1/tau`, whose rounding
/// alone exceeds any fixed absolute tolerance; the margin dominates both
/// that rounding and the power-iteration error of `||L||`.
pub const PARTIAL_SIGMA_MARGIN: f64 = 1e-10;

/// Multipliers of the base learning rate per parameter group. The three
/// groups have gradients of very different magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrScales {
    pub tau: f64,
    pub sigma: f64,
    pub analysis: f64,
}

impl Default for LrScales {
    fn default() -> Self {
        Self {
            tau: 1.0,
            sigma: 1.0,
            analysis: 1.0,
        }
    }
}

/// `gamma * factor^(t / every)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub factor: f64,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr_scales: LrScales,
    pub decay: Option<StepDecay>,
    pub batch_size: usize,
    pub max_iter: usize,
    pub mode: LearningMode,
    pub seed: u64,
    pub validation_every: usize,
    /// Abort when the batch loss stays above `divergence_factor` times the
    /// initial loss for `divergence_patience` consecutive iterations.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-6,
            lr_scales: LrScales::default(),
            decay: None,
            batch_size: 200,
            max_iter: 30_000,
            mode: LearningMode::Full,
            seed: 0,
            validation_every: 100,
            divergence_factor: 10.0,
            divergence_patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        let s = self.lr_scales;
        if [s.tau, s.sigma, s.analysis].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("learning-rate scales must be finite and nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.validation_every == 0 {
            return bad("validation_every must be at least 1");
        }
        if let Some(d) = self.decay {
            if !(d.factor > 0.0 && d.factor <= 1.0) || d.every == 0 {
                return bad("decay needs a factor in (0, 1] and a positive period");
            }
        }
        if !(self.divergence_factor > 1.0) || self.divergence_patience == 0 {
            return bad("divergence guard needs a factor > 1 and a positive patience");
        }
        Ok(())
    }

    pub fn gamma_at(&self, iteration: usize) -> f64 {
        match self.decay {
            Some(d) => self.gamma * d.factor.powi((iteration / d.every) as i32),
            None => self.gamma,
        }
    }
}

/// Applies one descent step in place.
///
/// Non-finite gradients leave the parameters untouched and return an error.
/// In partial mode `sigma` is not descended; it is recomputed to saturate the
/// step-size condition for every layer whose `tau` or `L` changed.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    gamma: f64,
    scales: LrScales,
    norms: &mut NormCache,
) -> Result<()> {
    check_dim("gradient layers", params.depth(), grads.layers.len())?;
    for (layer, g) in params.layers.iter().zip(&grads.layers) {
        check_dim("analysis gradient", layer.analysis.nnz(), g.d_l.len())?;
    }
    grads.check_finite()?;
    let norm_a = params.degradation.norm();
    let tau_cap = (2.0 / (norm_a * norm_a)) * (1.0 - PARTIAL_TAU_MARGIN);
    let mode = params.mode;
    for (k, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
        let old_tau = layer.tau;
        let mut tau = (layer.tau - gamma * scales.tau * g.d_tau).max(MIN_STEP);
        let step_l = gamma * scales.analysis;
        let mut l_changed = false;
        for (w, d) in layer.analysis.weights_mut().iter_mut().zip(&g.d_l) {
            let next = *w - step_l * d;
            l_changed |= next != *w;
            *w = next;
        }
        match mode {
            LearningMode::Full => {
                layer.sigma = (layer.sigma - gamma * scales.sigma * g.d_sigma).max(MIN_STEP);
            }
            LearningMode::Partial => {
                if norm_a > 0.0 {
                    tau = tau.min(tau_cap);
                }
                if tau != old_tau || l_changed {
                    let norm_l = norms.norm(k, &layer.analysis)?;
                    if norm_l == 0.0 {
                        return Err(Error::ZeroAnalysisNorm);
                    }
                    layer.sigma = (1.0 - PARTIAL_SIGMA_MARGIN) * StepSizes::saturating_sigma(tau, norm_a, norm_l);
                }
            }
        }
        layer.tau = tau;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    /// Mean loss over the whole training set.
    pub loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: NetworkParams,
    pub best_params: NetworkParams,
    pub best_iteration: usize,
    pub best_val_psnr: f64,
    pub history: Vec<HistoryRow>,
    /// Mini-batch loss before each step.
    pub batch_losses: Vec<f64>,
    pub rejected_steps: usize,
}

/// Renders the history as CSV: `iter,loss,val_psnr,val_ssim,dc_layer_1..K`.
pub fn history_csv(history: &[HistoryRow]) -> String {
    let depth = history.first().map_or(0, |r| r.distances.len());
    let mut out = String::from("iter,loss,val_psnr,val_ssim");
    for k in 1..=depth {
        write!(out, ",dc_layer_{k}").unwrap();
    }
    out.push('\n');
    for r in history {
        write!(out, "{},{:.17e},{:.17e},{:.17e}", r.iteration, r.loss, r.val_psnr, r.val_ssim).unwrap();
        for d in &r.distances {
            write!(out, ",{d:.17e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Progress callback, invoked after every logged row.
pub type Progress<'a> = &'a mut dyn FnMut(&HistoryRow);

pub fn train(
    initial: NetworkParams,
    train_set: &[Pair],
    val_set: &[Pair],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(initial, train_set, val_set, config, &mut |_| {})
}

pub fn train_with_progress(
    initial: NetworkParams,
    train_set: &[Pair],
    val_set: &[Pair],
    config: &TrainConfig,
    progress: Progress<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    initial.validate()?;
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("validation split is empty".into()));
    }
    if train_set.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "training split has {} samples, fewer than the batch size {}",
            train_set.len(),
            config.batch_size
        )));
    }
    let mut params = initial;
    params.mode = config.mode;
    let mut norms = NormCache::new(params.depth());

    let log = |params: &NetworkParams, norms: &mut NormCache, iteration: usize| -> Result<HistoryRow> {
        let val = evaluate(params, val_set)?;
        let distances = params.distances_with_norms(&norms.norms(params)?);
        Ok(HistoryRow {
            iteration,
            loss: loss(params, train_set)?,
            val_psnr: val.mean_psnr,
            val_ssim: val.mean_ssim,
            distances,
        })
    };

    let first = log(&params, &mut norms, 0)?;
    progress(&first);
    let initial_loss = first.loss;
    let mut best_params = params.clone();
    let mut best_iteration = 0;
    let mut best_val_psnr = first.val_psnr;
    let mut history = vec![first];
    let mut batch_losses = Vec::with_capacity(config.max_iter);
    let mut rejected_steps = 0;
    let mut streak = 0;

    let per_epoch = train_set.len() / config.batch_size;
    let mut order = Vec::new();
    let mut batch = Vec::with_capacity(config.batch_size);
    for t in 0..config.max_iter {
        let slot = t % per_epoch;
        if slot == 0 {
            order = SeededRng::stream(config.seed, (t / per_epoch) as u64).permutation(train_set.len());
        }
        batch.clear();
        batch.extend(
            order[slot * config.batch_size..(slot + 1) * config.batch_size]
                .iter()
                .map(|&i| train_set[i].clone()),
        );
        let (batch_loss, grads) = loss_and_gradients(&params, &batch)?;
        batch_losses.push(batch_loss);

        if !(batch_loss <= config.divergence_factor * initial_loss) {
            streak += 1;
            if streak >= config.divergence_patience {
                return Err(Error::Diverged {
                    iteration: t,
                    loss: batch_loss,
                    initial: initial_loss,
                    streak,
                });
            }
        } else {
            streak = 0;
        }

        match sgd_step(&mut params, &grads, config.gamma_at(t), config.lr_scales, &mut norms) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient { .. }) => rejected_steps += 1,
            Err(e) => return Err(e),
        }

        let done = t + 1;
        if done % config.validation_every == 0 || done == config.max_iter {
            let row = log(&params, &mut norms, done)?;
            progress(&row);
            if row.val_psnr > best_val_psnr {
                best_val_psnr = row.val_psnr;
                best_iteration = done;
                best_params = params.clone();
            }
            history.push(row);
        }
    }

    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_iteration,
        best_val_psnr,
        history,
        batch_losses,
        rejected_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::Gradients;
    use crate::data::Dataset;
    use crate::image::Image;
    use crate::network::{AnalysisSpec, InitConfig};
    use crate::operators::DegradationOperator;
    use crate::pdhg::check_stepsizes;

    fn toy_data(count: usize, seed: u64) -> Vec<Pair> {
        let mut rng = SeededRng::new(seed);
        let clean: Vec<Image> = (0..count)
            .map(|_| {
                let base = 255.0 * rng.uniform();
                Image::new(6, (0..36).map(|i| if i % 6 < 3 { base } else { 255.0 - base }).collect()).unwrap()
            })
            .collect();
        let a = DegradationOperator::uniform_blur(3, 6).unwrap();
        Dataset::synthesize(clean, a, 10.0, seed).unwrap().pairs
    }

    fn toy_net(mode: LearningMode) -> NetworkParams {
        let a = DegradationOperator::uniform_blur(3, 6).unwrap();
        NetworkParams::init(a, &InitConfig::new(3, vec![AnalysisSpec::Dense { rows: 6 }], 4).mode(mode)).unwrap()
    }

    #[test]
    fn zero_gradient_and_zero_gamma_are_no_ops() {
        for mode in [LearningMode::Full, LearningMode::Partial] {
            let params = toy_net(mode);
            let mut p = params.clone();
            let mut cache = NormCache::new(p.depth());
            sgd_step(&mut p, &Gradients::zeros(&params), 0.1, LrScales::default(), &mut cache).unwrap();
            assert_eq!(p, params);
            let data = toy_data(4, 1);
            let (_, g) = loss_and_gradients(&params, &data).unwrap();
            sgd_step(&mut p, &g, 0.0, LrScales::default(), &mut cache).unwrap();
            assert_eq!(p, params);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let params = toy_net(LearningMode::Full);
        let mut g = Gradients::zeros(&params);
        g.layers[1].d_l[3] = f64::NAN;
        let mut p = params.clone();
        let err = sgd_step(&mut p, &g, 0.1, LrScales::default(), &mut NormCache::new(3)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 2, group: "L" }));
        assert_eq!(p, params);
    }

    #[test]
    fn partial_step_saturates_condition() {
        let mut params = toy_net(LearningMode::Partial);
        let data = toy_data(4, 2);
        let (_, g) = loss_and_gradients(&params, &data).unwrap();
        sgd_step(&mut params, &g, 1e-7, LrScales { tau: 1e-3, sigma: 0.0, analysis: 1.0 }, &mut NormCache::new(3)).unwrap();
        let norm_a = params.degradation.norm();
        for l in &params.layers {
            let m = check_stepsizes(l.tau, l.sigma, norm_a, l.analysis.norm().unwrap());
            assert!(m.abs() <= 1e-9, "margin {m}");
        }
    }

    #[test]
    fn partial_condition_holds_at_small_tau() {
        let base = toy_net(LearningMode::Partial);
        let mut rng = SeededRng::new(8);
        for trial in 0..200 {
            let mut params = base.clone();
            let mut g = Gradients::zeros(&params);
            for l in g.layers.iter_mut() {
                // Lands tau anywhere in [1e-8, 1] on a log scale.
                l.d_tau = 1.0 - 10f64.powf(-8.0 * rng.uniform());
                l.d_l.iter_mut().for_each(|d| *d = rng.standard_normal());
            }
            sgd_step(&mut params, &g, 1.0, LrScales { analysis: 1e-3, ..LrScales::default() }, &mut NormCache::new(3)).unwrap();
            for d in params.distance_report().unwrap() {
                assert_eq!(d, 0.0, "trial {trial}");
            }
        }
    }

    #[test]
    fn positivity_clamp() {
        let mut params = toy_net(LearningMode::Full);
        let mut g = Gradients::zeros(&params);
        g.layers[0].d_tau = 1e9;
        g.layers[0].d_sigma = 1e9;
        sgd_step(&mut params, &g, 1.0, LrScales::default(), &mut NormCache::new(3)).unwrap();
        assert_eq!(params.layers[0].tau, MIN_STEP);
        assert_eq!(params.layers[0].sigma, MIN_STEP);
    }

    #[test]
    fn training_logs_and_improves() {
        let data = toy_data(40, 3);
        let config = TrainConfig {
            gamma: 1e-6,
            lr_scales: LrScales { tau: 1e-2, sigma: 1e-2, analysis: 1.0 },
            batch_size: 8,
            max_iter: 50,
            validation_every: 10,
            ..Default::default()
        };
        let init = toy_net(LearningMode::Full);
        let l0 = loss(&init, &data[..32]).unwrap();
        let out = train(init, &data[..32], &data[32..], &config).unwrap();
        assert_eq!(out.history[0].loss, l0);
        assert_eq!(out.history.len(), 6);
        assert_eq!(out.batch_losses.len(), 50);
        assert!(out.history.last().unwrap().loss < l0);
        let csv = history_csv(&out.history);
        assert!(csv.starts_with("iter,loss,val_psnr,val_ssim,dc_layer_1,dc_layer_2,dc_layer_3\n"));
    }

    #[test]
    fn divergence_guard_trips() {
        let data = toy_data(16, 4);
        let config = TrainConfig {
            gamma: 10.0,
            batch_size: 4,
            max_iter: 500,
            divergence_patience: 5,
            ..Default::default()
        };
        let err = train(toy_net(LearningMode::Full), &data[..12], &data[12..], &config).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_config() {
        let data = toy_data(4, 5);
        let mut config = TrainConfig { batch_size: 8, ..Default::default() };
        assert!(train(toy_net(LearningMode::Full), &data[..3], &data[3..], &config).is_err());
        config.batch_size = 1;
        config.gamma = 0.0;
        assert!(config.validate().is_err());
    }
}
