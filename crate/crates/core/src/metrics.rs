//! Image quality metrics on the `[0, 255]` scale.

use crate::error::{check_dim, Result};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("mse", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(255^2 / MSE)`; `+inf` for identical inputs.
pub fn psnr(x_hat: &[f64], x_ref: &[f64]) -> Result<f64> {
    Ok(psnr_from_mse(mse(x_hat, x_ref)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn mse_from_psnr(psnr: f64) -> f64 {
    PEAK * PEAK / 10f64.powf(psnr / 10.0)
}

/// Renders a PSNR value, using `identical` for the infinite case.
pub fn format_psnr(psnr: f64) -> String {
    if psnr == f64::INFINITY {
        "identical".to_string()
    } else {
        format!("{psnr:.4}")
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable filtering of a `side x side` image.
fn filter_valid(img: &[f64], side: usize, k: &[f64]) -> Vec<f64> {
    let w = k.len();
    let out = side - w + 1;
    let mut rows = vec![0.0; side * out];
    for r in 0..side {
        for c in 0..out {
            rows[r * out + c] = (0..w).map(|t| k[t] * img[r * side + c + t]).sum();
        }
    }
    let mut res = vec![0.0; out * out];
    for r in 0..out {
        for c in 0..out {
            res[r * out + c] = (0..w).map(|t| k[t] * rows[(r + t) * out + c]).sum();
        }
    }
    res
}

fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged
/// over valid window positions. Images narrower than the window use one
/// global, uniformly weighted window.
pub fn ssim(x_hat: &[f64], x_ref: &[f64]) -> Result<f64> {
    check_dim("ssim", x_ref.len(), x_hat.len())?;
    let side = (x_ref.len() as f64).sqrt().round() as usize;
    check_dim("ssim (square image)", side * side, x_ref.len())?;
    if side < SSIM_WINDOW {
        let n = x_ref.len() as f64;
        let mx = x_hat.iter().sum::<f64>() / n;
        let my = x_ref.iter().sum::<f64>() / n;
        let vx = x_hat.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = x_ref.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = x_hat.iter().zip(x_ref).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        return Ok(ssim_term(mx, my, vx, vy, cxy));
    }
    let k = gaussian_kernel();
    let xx: Vec<f64> = x_hat.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = x_ref.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x_hat.iter().zip(x_ref).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x_hat, side, &k);
    let my = filter_valid(x_ref, side, &k);
    let sxx = filter_valid(&xx, side, &k);
    let syy = filter_valid(&yy, side, &k);
    let sxy = filter_valid(&xy, side, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            ssim_term(
                mx[i],
                my[i],
                sxx[i] - mx[i] * mx[i],
                syy[i] - my[i] * my[i],
                sxy[i] - mx[i] * my[i],
            )
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(side: usize, cell: usize) -> Vec<f64> {
        (0..side * side)
            .map(|i| if ((i / side) / cell + (i % side) / cell) % 2 == 0 { 30.0 } else { 220.0 })
            .collect()
    }

    #[test]
    fn psnr_reference_values() {
        let a = vec![0.0; 16];
        assert!((psnr(&a, &vec![255.0; 16]).unwrap()).abs() < 1e-12);
        let p = psnr(&a, &vec![1.0; 16]).unwrap();
        assert!((p - 48.130_803_608_679_1).abs() < 1e-9, "{p}");
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(format_psnr(f64::INFINITY), "identical");
    }

    #[test]
    fn psnr_is_symmetric_and_invertible() {
        let a: Vec<f64> = (0..25).map(|i| (i * 7 % 31) as f64).collect();
        let b: Vec<f64> = (0..25).map(|i| (i * 3 % 17) as f64).collect();
        let p = psnr(&a, &b).unwrap();
        assert_eq!(p, psnr(&b, &a).unwrap());
        let m = mse(&a, &b).unwrap();
        assert!((psnr_from_mse(mse_from_psnr(p)) - p).abs() <= 1e-12);
        assert!((mse_from_psnr(p) - m).abs() <= 1e-12 * m);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = checkerboard(16, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let small = checkerboard(5, 1);
        assert!((ssim(&small, &small).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inversion_is_low() {
        let a = checkerboard(20, 2);
        let inv: Vec<f64> = a.iter().map(|v| 255.0 - v).collect();
        assert!(ssim(&inv, &a).unwrap() < 0.2);
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance() {
        let (u, v) = (50.0, 120.0);
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = (2.0 * u * v + c1) / (u * u + v * v + c1);
        for side in [4, 16] {
            let s = ssim(&vec![u; side * side], &vec![v; side * side]).unwrap();
            assert!((s - expected).abs() < 1e-12, "side {side}: {s} vs {expected}");
        }
    }

    #[test]
    fn ssim_rejects_mismatch() {
        assert!(ssim(&[0.0; 4], &[0.0; 9]).is_err());
        assert!(ssim(&[0.0; 5], &[0.0; 5]).is_err());
    }
}
