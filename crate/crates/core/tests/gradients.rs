mod common;

use common::gradient_oracle_instances;
use pdnet_core::backprop::{loss, loss_and_gradients, BackwardOptions};
use pdnet_core::gradcheck::{gradcheck, GradcheckOptions, Instance, InstanceSpec};

#[test]
fn analytic_gradients_match_central_differences() {
    for (spec, seed) in gradient_oracle_instances() {
        let inst = Instance::random(&spec, seed).unwrap();
        let report = gradcheck(&inst.params, &inst.batch, &GradcheckOptions::default()).unwrap();
        assert!(report.passed(), "{spec:?} seed {seed}: {:?}", report.errors);
        assert_eq!(report.errors.analysis.len(), spec.layers);
    }
}

#[test]
fn instance_grid_covers_every_factor() {
    let grid = gradient_oracle_instances();
    assert_eq!(grid.len(), 20);
    for pick in [
        |s: &InstanceSpec| s.layers == 2,
        |s: &InstanceSpec| s.side == 3,
        |s: &InstanceSpec| s.rows == 4,
        |s: &InstanceSpec| s.block_sparse,
        |s: &InstanceSpec| s.blur,
    ] {
        let hits = grid.iter().filter(|(s, _)| pick(s)).count();
        assert!(hits > 0 && hits < 20);
    }
}

#[test]
fn flipped_output_gradient_is_caught() {
    for (spec, seed) in gradient_oracle_instances().into_iter().take(4) {
        let inst = Instance::random(&spec, seed).unwrap();
        let options = GradcheckOptions {
            backward: BackwardOptions { flip_output_sign: true },
            ..GradcheckOptions::default()
        };
        assert!(!gradcheck(&inst.params, &inst.batch, &options).unwrap().passed());
    }
}

#[test]
fn gradient_is_a_descent_direction() {
    let inst = Instance::random(&InstanceSpec::default(), 77).unwrap();
    let (base, grads) = loss_and_gradients(&inst.params, &inst.batch).unwrap();
    let mut moved = inst.params.clone();
    let h = 1e-4;
    for (layer, g) in moved.layers.iter_mut().zip(&grads.layers) {
        layer.tau -= h * g.d_tau;
        layer.sigma -= h * g.d_sigma;
        for (w, d) in layer.analysis.weights_mut().iter_mut().zip(&g.d_l) {
            *w -= h * d;
        }
    }
    assert!(loss(&moved, &inst.batch).unwrap() < base);
}
