use serde::{Deserialize, Serialize};

use super::LinearMap;
use crate::error::{Error, Result};

/// Structural description of a degradation operator. This is what the model
/// file stores; the operator itself is rebuilt from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationKind {
    Identity,
    /// Uniform `size x size` blur with periodic boundary.
    UniformBlur { size: usize },
    /// Keeps pixels at `(i*factor, j*factor)`.
    Decimation { factor: usize },
}

impl DegradationKind {
    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::Identity => "identity",
            DegradationKind::UniformBlur { .. } => "blur",
            DegradationKind::Decimation { .. } => "decimation",
        }
    }

    /// Blur size or decimation factor; 1 for the identity.
    pub fn size_or_factor(&self) -> usize {
        match *self {
            DegradationKind::Identity => 1,
            DegradationKind::UniformBlur { size } => size,
            DegradationKind::Decimation { factor } => factor,
        }
    }

    pub fn from_parts(name: &str, size_or_factor: usize) -> Result<Self> {
        match name {
            "identity" => Ok(DegradationKind::Identity),
            "blur" => Ok(DegradationKind::UniformBlur {
                size: size_or_factor,
            }),
            "decimation" => Ok(DegradationKind::Decimation {
                factor: size_or_factor,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown degradation kind `{other}`"
            ))),
        }
    }
}

/// Degradation operator `A` acting on `side x side` images.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationOperator {
    kind: DegradationKind,
    side: usize,
    norm: f64,
}

impl DegradationOperator {
    pub fn new(kind: DegradationKind, side: usize) -> Result<Self> {
        match kind {
            DegradationKind::Identity => Self::identity(side),
            DegradationKind::UniformBlur { size } => Self::uniform_blur(size, side),
            DegradationKind::Decimation { factor } => Self::decimation(factor, side),
        }
    }

    pub fn identity(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidArgument("image side must be positive".into()));
        }
        Ok(Self {
            kind: DegradationKind::Identity,
            side,
            norm: 1.0,
        })
    }

    /// Periodic convolution with the constant `size x size` kernel `1/size^2`.
    pub fn uniform_blur(size: usize, side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidArgument("image side must be positive".into()));
        }
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "blur size must be odd and positive, got {size}"
            )));
        }
        if size > side {
            return Err(Error::InvalidArgument(format!(
                "blur size {size} exceeds image side {side}"
            )));
        }
        Ok(Self {
            kind: DegradationKind::UniformBlur { size },
            side,
            norm: box_blur_norm(size, side),
        })
    }

    pub fn decimation(factor: usize, side: usize) -> Result<Self> {
        if side == 0 || factor == 0 {
            return Err(Error::InvalidArgument(
                "decimation factor and image side must be positive".into(),
            ));
        }
        if side % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "decimation factor {factor} does not divide image side {side}"
            )));
        }
        Ok(Self {
            kind: DegradationKind::Decimation { factor },
            side,
            norm: 1.0,
        })
    }

    pub fn kind(&self) -> DegradationKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Output image side (`side / factor` for decimation).
    pub fn out_side(&self) -> usize {
        match self.kind {
            DegradationKind::Decimation { factor } => self.side / factor,
            _ => self.side,
        }
    }

    /// Spectral norm, computed at construction.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    fn blur_pass(&self, size: usize, x: &[f64], out: &mut [f64], sign: isize) {
        // Separable: horizontal box sum, then vertical. `sign` flips the
        // kernel (convolution vs correlation); the box is symmetric so both
        // visit the same taps.
        let n = self.side;
        let half = (size / 2) as isize;
        let inv = 1.0 / size as f64;
        let mut tmp = vec![0.0; n * n];
        for r in 0..n {
            let row = &x[r * n..(r + 1) * n];
            for c in 0..n {
                let mut acc = 0.0;
                for j in -half..=half {
                    let cc = (c as isize - sign * j).rem_euclid(n as isize) as usize;
                    acc += row[cc];
                }
                tmp[r * n + c] = acc * inv;
            }
        }
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for j in -half..=half {
                    let rr = (r as isize - sign * j).rem_euclid(n as isize) as usize;
                    acc += tmp[rr * n + c];
                }
                out[r * n + c] = acc * inv;
            }
        }
    }
}

impl LinearMap for DegradationOperator {
    fn in_dim(&self) -> usize {
        self.side * self.side
    }

    fn out_dim(&self) -> usize {
        let s = self.out_side();
        s * s
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            DegradationKind::Identity => out.copy_from_slice(x),
            DegradationKind::UniformBlur { size } => self.blur_pass(size, x, out, 1),
            DegradationKind::Decimation { factor } => {
                let m = self.side / factor;
                for i in 0..m {
                    for j in 0..m {
                        out[i * m + j] = x[i * factor * self.side + j * factor];
                    }
                }
            }
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        match self.kind {
            DegradationKind::Identity => out.copy_from_slice(y),
            DegradationKind::UniformBlur { size } => self.blur_pass(size, y, out, -1),
            DegradationKind::Decimation { factor } => {
                let m = self.side / factor;
                out.fill(0.0);
                for i in 0..m {
                    for j in 0..m {
                        out[i * factor * self.side + j * factor] = y[i * m + j];
                    }
                }
            }
        }
    }

    fn gram_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        match self.kind {
            DegradationKind::Identity => out.copy_from_slice(x),
            DegradationKind::Decimation { factor } => {
                out.fill(0.0);
                for i in (0..self.side).step_by(factor) {
                    for j in (0..self.side).step_by(factor) {
                        out[i * self.side + j] = x[i * self.side + j];
                    }
                }
            }
            DegradationKind::UniformBlur { .. } => {
                self.apply_into(x, scratch);
                self.apply_adjoint_into(scratch, out);
            }
        }
    }
}

/// Spectral norm of the periodic box blur: the largest modulus of its 2-D
/// transfer function, which factors into the product of two 1-D responses.
fn box_blur_norm(size: usize, side: usize) -> f64 {
    let half = (size / 2) as i64;
    let peak = (0..side)
        .map(|k| {
            let w = 2.0 * std::f64::consts::PI * k as f64 / side as f64;
            let sum: f64 = (-half..=half).map(|j| (w * j as f64).cos()).sum();
            (sum / size as f64).abs()
        })
        .fold(0.0, f64::max);
    peak * peak
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::rng::SeededRng;

    fn random_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.standard_normal()).collect()
    }

    #[test]
    fn blur_size_one_is_identity() {
        let a = DegradationOperator::uniform_blur(1, 5).unwrap();
        let x: Vec<f64> = (0..25).map(|i| i as f64).collect();
        assert_eq!(a.apply(&x).unwrap(), x);
        assert_eq!(a.norm(), 1.0);
    }

    #[test]
    fn blur_preserves_constants() {
        let a = DegradationOperator::uniform_blur(3, 6).unwrap();
        let out = a.apply(&[7.0; 36]).unwrap();
        assert!(out.iter().all(|v| (v - 7.0).abs() < 1e-13));
    }

    #[test]
    fn blur_of_delta_wraps_periodically() {
        let side = 5;
        let a = DegradationOperator::uniform_blur(3, side).unwrap();
        let mut x = vec![0.0; 25];
        x[0] = 1.0;
        let out = a.apply(&x).unwrap();
        // Hand-convolved: the delta at (0,0) spreads to rows/cols {4,0,1}.
        for r in 0..side {
            for c in 0..side {
                let hit = [4, 0, 1].contains(&r) && [4, 0, 1].contains(&c);
                let want = if hit { 1.0 / 9.0 } else { 0.0 };
                assert!((out[r * side + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blur_rejects_bad_sizes() {
        assert!(DegradationOperator::uniform_blur(2, 8).is_err());
        assert!(DegradationOperator::uniform_blur(9, 8).is_err());
        assert!(DegradationOperator::uniform_blur(0, 8).is_err());
    }

    #[test]
    fn decimation_subsamples_and_zero_fills() {
        let d = DegradationOperator::decimation(2, 4).unwrap();
        assert_eq!(d.apply(&[1.0; 16]).unwrap(), vec![1.0; 4]);
        let up = d.apply_adjoint(&[1.0; 4]).unwrap();
        let expected: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(up, expected);
        assert!(DegradationOperator::decimation(3, 4).is_err());
    }

    #[test]
    fn decimation_factor_one_is_identity() {
        let d = DegradationOperator::decimation(1, 3).unwrap();
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(d.apply(&x).unwrap(), x);
    }

    #[test]
    fn adjoint_identities() {
        let mut rng = SeededRng::new(11);
        let ops = [
            DegradationOperator::identity(6).unwrap(),
            DegradationOperator::uniform_blur(3, 6).unwrap(),
            DegradationOperator::uniform_blur(5, 6).unwrap(),
            DegradationOperator::decimation(2, 6).unwrap(),
            DegradationOperator::decimation(3, 6).unwrap(),
        ];
        for op in &ops {
            for _ in 0..100 {
                let x = random_vec(&mut rng, op.in_dim());
                let y = random_vec(&mut rng, op.out_dim());
                let lhs = dot(&op.apply(&x).unwrap(), &y);
                let rhs = dot(&x, &op.apply_adjoint(&y).unwrap());
                let scale = 1.0 + crate::linalg::norm2(&x) * crate::linalg::norm2(&y);
                assert!((lhs - rhs).abs() <= 1e-12 * scale, "{:?}", op.kind());
            }
        }
    }

    #[test]
    fn gram_matches_composition() {
        let mut rng = SeededRng::new(2);
        for op in [
            DegradationOperator::uniform_blur(3, 6).unwrap(),
            DegradationOperator::decimation(2, 6).unwrap(),
        ] {
            let x = random_vec(&mut rng, 36);
            let want = op.apply_adjoint(&op.apply(&x).unwrap()).unwrap();
            let mut scratch = vec![0.0; op.out_dim()];
            let mut got = vec![0.0; 36];
            op.gram_into(&x, &mut scratch, &mut got);
            assert!(crate::linalg::max_abs_diff(&want, &got) < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = DegradationOperator::uniform_blur(3, 4).unwrap();
        assert!(a.apply(&[0.0; 15]).is_err());
        assert!(a.apply_adjoint(&[0.0; 17]).is_err());
    }
}
