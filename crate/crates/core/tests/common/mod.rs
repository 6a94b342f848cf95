//! Oracles shared by the property suites and the acceptance run.
#![allow(dead_code)]

use nalgebra::DMatrix;

use pdnet_core::gradcheck::InstanceSpec;
use pdnet_core::linalg::{dot, norm2};
use pdnet_core::network::build_fused;
use pdnet_core::operators::{AnalysisOperator, Grid, LinearMap, SiteRule};
use pdnet_core::prox::{prox_conj_l1, prox_l1};
use pdnet_core::rng::SeededRng;
use pdnet_core::DegradationOperator;

pub fn gaussian(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// `|<Op x, y> - <x, Op* y>| / (1 + ||x|| ||y||)`.
pub fn adjoint_gap(op: &dyn LinearMap, x: &[f64], y: &[f64]) -> f64 {
    let lhs = dot(&op.apply(x).unwrap(), y);
    let rhs = dot(x, &op.apply_adjoint(y).unwrap());
    (lhs - rhs).abs() / (1.0 + norm2(x) * norm2(y))
}

/// Column-by-column materialization through `apply`.
pub fn materialize(op: &dyn LinearMap) -> DMatrix<f64> {
    let (m, n) = (op.out_dim(), op.in_dim());
    let mut mat = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e).unwrap();
        e[j] = 0.0;
        for i in 0..m {
            mat[(i, j)] = col[i];
        }
    }
    mat
}

/// Largest singular value by a dense SVD.
pub fn svd_norm(op: &dyn LinearMap) -> f64 {
    materialize(op)
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Every operator kind at a given side, with a label.
pub fn operator_zoo(side: usize, seed: u64) -> Vec<(String, Box<dyn LinearMap>)> {
    let n = side * side;
    let grid = Grid::square(side);
    let mut zoo: Vec<(String, Box<dyn LinearMap>)> = vec![
        ("identity A".into(), Box::new(DegradationOperator::identity(side).unwrap())),
        ("blur 3".into(), Box::new(DegradationOperator::uniform_blur(3, side).unwrap())),
        ("dense L".into(), Box::new(AnalysisOperator::random_dense(7, n, seed, 1.0).unwrap())),
        ("scaled identity L".into(), Box::new(AnalysisOperator::scaled_identity(grid, 0.7).unwrap())),
        ("differences L".into(), Box::new(AnalysisOperator::finite_differences(grid, 1.3).unwrap())),
        (
            "block L".into(),
            Box::new(AnalysisOperator::random_block_sparse(2, 2, 3, side, SiteRule::Fit, seed, 1.0).unwrap()),
        ),
        (
            "fused L".into(),
            Box::new(
                build_fused(
                    &["dense:3".parse().unwrap(), "f2s2n2".parse().unwrap(), "f3s1n1:truncated".parse().unwrap()],
                    side,
                    seed,
                    1.0,
                )
                .unwrap(),
            ),
        ),
    ];
    if side >= 5 {
        zoo.push(("blur 5".into(), Box::new(DegradationOperator::uniform_blur(5, side).unwrap())));
    }
    if side % 2 == 0 {
        zoo.push(("decimation 2".into(), Box::new(DegradationOperator::decimation(2, side).unwrap())));
    }
    zoo
}

/// `prox_conj_l1(x, s) - (x - s prox_l1(x / s, 1 / s))`, max-abs.
pub fn moreau_gap(x: &[f64], sigma: f64) -> f64 {
    let lhs = prox_conj_l1(x, sigma).unwrap();
    let scaled: Vec<f64> = x.iter().map(|v| v / sigma).collect();
    let p = prox_l1(&scaled, 1.0 / sigma).unwrap();
    lhs.iter()
        .zip(x.iter().zip(&p))
        .map(|(l, (xi, pi))| (l - (xi - sigma * pi)).abs())
        .fold(0.0, f64::max)
}

/// The 20 gradient-oracle instances: every combination of
/// `K in {2, 3}`, `N in {9, 16}`, `P in {4, 8}`, dense and block-sparse `L`,
/// with blur and identity `A` balanced across every factor, plus four
/// repeats with the other `A` on fresh seeds.
pub fn gradient_oracle_instances() -> Vec<(InstanceSpec, u64)> {
    let mut out = Vec::new();
    for layers in [2, 3] {
        for side in [3, 4] {
            for rows in [4, 8] {
                for block_sparse in [false, true] {
                    let i = out.len();
                    let parity = layers + side + rows / 4 + block_sparse as usize;
                    out.push((
                        InstanceSpec {
                            layers,
                            side,
                            rows,
                            block_sparse,
                            blur: parity % 2 == 0,
                            samples: 2,
                        },
                        1000 + i as u64,
                    ));
                }
            }
        }
    }
    for i in 0..4 {
        let (mut spec, _) = out[i * 5];
        spec.blur = !spec.blur;
        out.push((spec, 2000 + i as u64));
    }
    out
}
