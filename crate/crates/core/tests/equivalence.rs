mod common;

use proptest::prelude::*;

use common::gaussian;
use pdnet_core::linalg::max_abs_diff;
use pdnet_core::network::{AnalysisSpec, InitConfig};
use pdnet_core::operators::{AnalysisOperator, Grid, LinearMap};
use pdnet_core::pdhg::{pdhg_solve, pdhg_step, PdState, SolveOptions, StepSizes, StopCriteria};
use pdnet_core::prox::{clip_unit, soft_threshold};
use pdnet_core::rng::SeededRng;
use pdnet_core::{DegradationOperator, LearningMode, NetworkParams};

/// A single initialized layer repeated `depth` times.
fn shared_network(a: DegradationOperator, spec: AnalysisSpec, depth: usize, seed: u64) -> NetworkParams {
    let one = NetworkParams::init(a.clone(), &InitConfig { stddev: 0.3, ..InitConfig::new(1, vec![spec], seed) }).unwrap();
    NetworkParams::shared(a, one.layers[0].clone(), depth, LearningMode::Full).unwrap()
}

fn iterate(params: &NetworkParams, z: &[f64], k: usize) -> Vec<f64> {
    let layer = &params.layers[0];
    let steps = StepSizes::new(layer.tau, layer.sigma).unwrap();
    let mut state = PdState::initial(&params.degradation, &layer.analysis, z);
    for _ in 0..k {
        state = pdhg_step(&params.degradation, &layer.analysis, z, steps, &state);
    }
    state.x
}

fn degradation(kind: usize, side: usize) -> DegradationOperator {
    match kind {
        0 => DegradationOperator::identity(side).unwrap(),
        1 => DegradationOperator::uniform_blur(3, side).unwrap(),
        _ => DegradationOperator::decimation(2, side).unwrap(),
    }
}

#[test]
fn forward_equals_unrolled_iterations() {
    for side in [4, 8] {
        for kind in 0..3 {
            for spec in [AnalysisSpec::Dense { rows: 10 }, "f2s2n3".parse().unwrap()] {
                for k in [1, 2, 6] {
                    let params = shared_network(degradation(kind, side), spec.clone(), k, 11);
                    let mut rng = SeededRng::new(k as u64 + 100 * side as u64);
                    let z: Vec<f64> = gaussian(&mut rng, params.measurement_dim()).iter().map(|v| 40.0 * v).collect();
                    let net = params.forward(&z).unwrap();
                    let iter = iterate(&params, &z, k);
                    let diff = max_abs_diff(&net, &iter);
                    assert!(diff <= 1e-12, "side {side} kind {kind} {spec} K={k}: {diff:e}");

                    let layer = &params.layers[0];
                    let solved = pdhg_solve(
                        &params.degradation,
                        &layer.analysis,
                        &z,
                        StepSizes::new(layer.tau, layer.sigma).unwrap(),
                        SolveOptions {
                            stop: StopCriteria { tol: 1e-300, max_iter: k },
                            allow_unsafe_steps: true,
                        },
                    )
                    .unwrap();
                    // An exactly stationary primal step stops the solver early.
                    if solved.iterations == k {
                        assert!(max_abs_diff(&net, &solved.x_hat) <= 1e-12);
                    } else {
                        assert!(solved.converged && solved.final_residual == 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn trace_replays_through_the_clip() {
    let params = shared_network(degradation(1, 8), AnalysisSpec::Dense { rows: 12 }, 4, 5);
    let mut rng = SeededRng::new(9);
    let z: Vec<f64> = gaussian(&mut rng, 64).iter().map(|v| 100.0 * v).collect();
    let (out, trace) = params.forward_traced(&z).unwrap();
    assert_eq!(out, trace.output());
    for rec in &trace.layers[..3] {
        let replay: Vec<f64> = rec.dual_pre.iter().map(|&c| clip_unit(c)).collect();
        assert_eq!(replay, rec.dual);
    }
    assert!(trace.layers[3].dual.is_empty());
}

#[test]
fn forward_cost_is_linear_in_depth_and_nnz() {
    let a = degradation(1, 16);
    let mut rng = SeededRng::new(2);
    let z = gaussian(&mut rng, 256);
    for spec in ["f4s4n2", "f4s2n2", "f8s4n3", "f4s4n2:truncated"] {
        let spec: AnalysisSpec = spec.parse().unwrap();
        for k in [1, 2, 3, 6, 12] {
            let params = shared_network(a.clone(), spec.clone(), k, 1);
            let nnz = params.layers[0].analysis.nnz();
            let (_, stats) = params.forward_with_stats(&z).unwrap();
            assert_eq!(stats.analysis_macs, (2 * k - 2) * nnz, "{spec} K={k}");
            assert_eq!(stats.gram_applications, k);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn denoising_solution_is_soft_threshold(seed in any::<u64>(), lambda in prop::sample::select(vec![0.1, 1.0, 5.0]), n in 1usize..30) {
        let grid = Grid::for_len(n);
        let a = AnalysisOperator::scaled_identity(grid, 1.0).unwrap();
        let l = AnalysisOperator::scaled_identity(grid, lambda).unwrap();
        let mut rng = SeededRng::new(seed);
        let z: Vec<f64> = gaussian(&mut rng, n).iter().map(|v| 4.0 * v).collect();
        let steps = StepSizes::new(1.0, 0.4 / (lambda * lambda)).unwrap();
        let r = pdhg_solve(&a, &l, &z, steps, SolveOptions {
            stop: StopCriteria { tol: 1e-14, max_iter: 200_000 },
            ..Default::default()
        }).unwrap();
        let expected: Vec<f64> = z.iter().map(|&v| soft_threshold(v, lambda)).collect();
        prop_assert!(max_abs_diff(&r.x_hat, &expected) <= 1e-6);
    }
}

#[test]
fn converged_iterate_is_a_fixed_point() {
    let side = 8;
    let clean: Vec<f64> = (0..64).map(|i| if (i / side) < 4 && (i % side) < 5 { 200.0 } else { 30.0 }).collect();
    let a = DegradationOperator::uniform_blur(3, side).unwrap();
    let l = AnalysisOperator::finite_differences(Grid::square(side), 2.0).unwrap();
    let z = a.apply(&clean).unwrap();
    let norm_l = l.norm().unwrap();
    let tau = 1.0;
    let sigma = 0.9 * (1.0 / tau - a.norm().powi(2) / 2.0) / (norm_l * norm_l);
    let steps = StepSizes::new(tau, sigma).unwrap();
    let tol = 1e-10;
    let r = pdhg_solve(&a, &l, &z, steps, SolveOptions {
        stop: StopCriteria { tol, max_iter: 200_000 },
        ..Default::default()
    })
    .unwrap();
    assert!(r.converged);
    let last = *r.objective_trace.last().unwrap();
    let tail = &r.objective_trace[r.objective_trace.len().saturating_sub(10)..];
    assert!(tail.iter().all(|o| (o - last).abs() <= 1e-8 * last.max(1.0)));
    let next = pdhg_step(&a, &l, &z, steps, &PdState { x: r.x_hat.clone(), y: r.y_hat.clone() });
    assert!(max_abs_diff(&next.x, &r.x_hat) <= 10.0 * tol * r.x_hat.iter().fold(1.0f64, |m, v| m.max(v.abs())));
}
