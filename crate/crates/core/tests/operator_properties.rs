mod common;

use proptest::prelude::*;

use common::{adjoint_gap, gaussian, operator_zoo, svd_norm};
use pdnet_core::backprop::loss_and_gradients;
use pdnet_core::gradcheck::{Instance, InstanceSpec};
use pdnet_core::network::{build_fused, NormCache};
use pdnet_core::operators::{operator_norm, AnalysisOperator, LinearMap, SiteRule, NORM_TOL};
use pdnet_core::rng::SeededRng;
use pdnet_core::train::{sgd_step, LrScales};
use pdnet_core::{DegradationOperator, LearningMode};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity_holds_for_every_kind(side in 3usize..9, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        for (label, op) in operator_zoo(side, seed) {
            let x = gaussian(&mut rng, op.in_dim());
            let y = gaussian(&mut rng, op.out_dim());
            let gap = adjoint_gap(op.as_ref(), &x, &y);
            prop_assert!(gap <= 1e-12, "{label}: gap {gap:e}");
        }
    }

    #[test]
    fn blur_preserves_constants(side in 3usize..12, half in 0usize..3, c in -300.0f64..300.0) {
        let size = (2 * half + 1).min(if side % 2 == 1 { side } else { side - 1 });
        let a = DegradationOperator::uniform_blur(size, side).unwrap();
        let out = a.apply(&vec![c; side * side]).unwrap();
        for v in out {
            prop_assert!((v - c).abs() <= 1e-13 * c.abs().max(1.0));
        }
    }

    #[test]
    fn fused_apply_is_concatenation(side in 4usize..9, seed in any::<u64>()) {
        let specs = ["dense:3".parse().unwrap(), "f2s2n2".parse().unwrap(), "f3s1n1".parse().unwrap()];
        let fused = build_fused(&specs, side, seed, 1.0).unwrap();
        let mut rng = SeededRng::new(seed ^ 1);
        let v = gaussian(&mut rng, side * side);
        let out = fused.apply(&v).unwrap();
        let mut offset = 0;
        for (i, spec) in specs.iter().enumerate() {
            let part = build_fused(std::slice::from_ref(spec), side, seed, 1.0).unwrap();
            let rows = fused.parts()[i].rows;
            prop_assert_eq!(part.rows(), rows);
            // Parts draw from their own seed stream, so compare through the weights.
            let sub = AnalysisOperator::from_windows(
                fused.grid(),
                fused.windows()[offset..offset + rows].to_vec(),
                fused.weights()[fused.row_range(offset).start..fused.row_range(offset + rows - 1).end].to_vec(),
                vec![fused.parts()[i].clone()],
            )
            .unwrap();
            prop_assert_eq!(&sub.apply(&v).unwrap()[..], &out[offset..offset + rows]);
            offset += rows;
        }
        prop_assert_eq!(offset, fused.rows());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_matches_dense_svd(rows in 1usize..12, side in 2usize..9, seed in any::<u64>(), block in any::<bool>()) {
        let n = side * side;
        let op = if block && side >= 3 {
            AnalysisOperator::random_block_sparse(2, 1, rows, side, SiteRule::Fit, seed, 1.0).unwrap()
        } else {
            AnalysisOperator::random_dense(rows, n, seed, 1.0).unwrap()
        };
        let truth = svd_norm(&op);
        let est = operator_norm(&op, NORM_TOL, 1_000_000).unwrap();
        prop_assert!((est - truth).abs() <= 1e-6 * truth, "estimate {est}, svd {truth}");
    }

    #[test]
    fn degradation_norm_matches_dense_svd(side in 2usize..9, kind in 0usize..3) {
        let a = match kind {
            0 => DegradationOperator::identity(side).unwrap(),
            1 => DegradationOperator::uniform_blur(if side % 2 == 1 { side } else { side - 1 }, side).unwrap(),
            _ => DegradationOperator::decimation(if side % 2 == 0 { 2 } else { 1 }, side).unwrap(),
        };
        let truth = svd_norm(&a);
        prop_assert!((a.norm() - truth).abs() <= 1e-6 * truth.max(1e-300), "cached {}, svd {truth}", a.norm());
    }

    #[test]
    fn training_never_fills_masked_entries(seed in 0u64..1000, steps in 1usize..6, partial in any::<bool>()) {
        let spec = InstanceSpec { block_sparse: true, side: 4, rows: 8, ..InstanceSpec::default() };
        let mut inst = Instance::random(&spec, seed).unwrap();
        if partial {
            inst.params.mode = LearningMode::Partial;
        }
        let masks: Vec<Vec<bool>> = inst.params.layers.iter().map(|l| l.analysis.mask()).collect();
        let mut cache = NormCache::new(inst.params.depth());
        let scales = LrScales::default();
        for _ in 0..steps {
            let (_, g) = loss_and_gradients(&inst.params, &inst.batch).unwrap();
            sgd_step(&mut inst.params, &g, 1e-2, scales, &mut cache).unwrap();
        }
        for (layer, mask) in inst.params.layers.iter().zip(&masks) {
            let dense = layer.analysis.to_dense();
            prop_assert_eq!(&layer.analysis.mask(), mask);
            for (w, m) in dense.iter().zip(mask) {
                if !m {
                    prop_assert!(*w == 0.0 && w.is_sign_positive());
                }
            }
        }
    }
}

#[test]
fn dense_materialization_matches_weights() {
    let op = AnalysisOperator::random_dense(5, 16, 3, 1.0).unwrap();
    let m = common::materialize(&op);
    let dense = op.to_dense();
    for i in 0..5 {
        for j in 0..16 {
            assert_eq!(m[(i, j)], dense[i * 16 + j]);
        }
    }
}

#[test]
fn block_rows_cover_exactly_one_window() {
    let op = AnalysisOperator::random_block_sparse(3, 2, 2, 7, SiteRule::Fit, 5, 1.0).unwrap();
    for p in 0..op.rows() {
        let w = op.windows()[p];
        assert_eq!((w.height, w.width), (3, 3));
        assert_eq!(op.row_weights(p).len(), 9);
        let mask = &op.mask()[p * 49..(p + 1) * 49];
        assert_eq!(mask.iter().filter(|m| **m).count(), 9);
    }
}
