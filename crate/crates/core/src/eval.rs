//! Scoring restorations and the additional-noise robustness protocol.

use rayon::prelude::*;

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::network::NetworkParams;
use crate::operators::{DegradationOperator, LinearMap};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedScore {
    /// `+inf` when the restoration equals the reference.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub scores: Vec<PairedScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalSummary {
    pub fn from_scores(scores: Vec<PairedScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("nothing to evaluate".into()));
        }
        let n = scores.len() as f64;
        let mean_psnr = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
        Ok(Self {
            scores,
            mean_psnr,
            mean_ssim,
        })
    }
}

pub fn score(restored: &[f64], clean: &[f64]) -> Result<PairedScore> {
    Ok(PairedScore {
        psnr: psnr(restored, clean)?,
        ssim: ssim(restored, clean)?,
    })
}

/// Scores `restore(z)` against the clean image of every pair.
pub fn evaluate_with<F>(pairs: &[Pair], restore: F) -> Result<EvalSummary>
where
    F: Fn(usize, &Pair) -> Result<Vec<f64>> + Sync,
{
    let scores = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| score(&restore(i, p)?, p.clean.pixels()))
        .collect::<Result<Vec<_>>>()?;
    EvalSummary::from_scores(scores)
}

/// Network restorations (unclipped).
pub fn evaluate(params: &NetworkParams, pairs: &[Pair]) -> Result<EvalSummary> {
    evaluate_with(pairs, |_, p| params.forward(p.degraded.values()))
}

/// The `A* z` baseline that the network starts from.
pub fn evaluate_backprojection(a: &DegradationOperator, pairs: &[Pair]) -> Result<EvalSummary> {
    evaluate_with(pairs, |_, p| a.apply_adjoint(p.degraded.values()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub beta: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Relative loss versus `beta = 0`, in percent.
    pub psnr_drop: f64,
    pub ssim_drop: f64,
}

/// Evaluates on `z + beta * eta` for `beta = 0` followed by `betas`, with
/// the same noise draw `eta` per sample across all levels.
pub fn robustness_eval(params: &NetworkParams, pairs: &[Pair], betas: &[f64], seed: u64) -> Result<Vec<RobustnessRow>> {
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {b}")));
    }
    let noise: Vec<Vec<f64>> = (0..pairs.len())
        .map(|i| {
            let mut rng = SeededRng::stream(seed, i as u64);
            (0..params.measurement_dim()).map(|_| rng.standard_normal()).collect()
        })
        .collect();
    let run = |beta: f64| {
        evaluate_with(pairs, |i, p| {
            let z: Vec<f64> = p
                .degraded
                .values()
                .iter()
                .zip(&noise[i])
                .map(|(v, e)| v + beta * e)
                .collect();
            params.forward(&z)
        })
    };
    let base = run(0.0)?;
    let mut rows = vec![RobustnessRow {
        beta: 0.0,
        psnr: base.mean_psnr,
        ssim: base.mean_ssim,
        psnr_drop: 0.0,
        ssim_drop: 0.0,
    }];
    for &beta in betas {
        let s = if beta == 0.0 { base.clone() } else { run(beta)? };
        rows.push(RobustnessRow {
            beta,
            psnr: s.mean_psnr,
            ssim: s.mean_ssim,
            psnr_drop: 100.0 * (base.mean_psnr - s.mean_psnr) / base.mean_psnr,
            ssim_drop: 100.0 * (base.mean_ssim - s.mean_ssim) / base.mean_ssim,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Image, Measurement};

    fn pairs() -> Vec<Pair> {
        (0..2)
            .map(|i| {
                let clean = Image::new(4, (0..16).map(|j| (j * 13 + i * 50) as f64 % 255.0).collect()).unwrap();
                let z: Vec<f64> = clean.pixels().iter().map(|v| v + if i == 0 { 1.0 } else { 3.0 }).collect();
                Pair {
                    clean,
                    degraded: Measurement::new(z).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn mean_is_arithmetic() {
        let a = DegradationOperator::identity(4).unwrap();
        let s = evaluate_backprojection(&a, &pairs()).unwrap();
        assert_eq!(s.mean_psnr, (s.scores[0].psnr + s.scores[1].psnr) / 2.0);
        assert!((s.scores[0].psnr - 48.130_803_608_679_1).abs() < 1e-9);
    }

    #[test]
    fn clean_versus_clean_is_identical() {
        let s = evaluate_with(&pairs(), |_, p| Ok(p.clean.pixels().to_vec())).unwrap();
        assert_eq!(s.mean_psnr, f64::INFINITY);
        assert_eq!(s.mean_ssim, 1.0);
    }
}
