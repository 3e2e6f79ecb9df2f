//! Vector-level numerical kernels shared by the graph ops and the
//! incremental decoder.

use super::real::Real;
use crate::error::{Error, Result};

/// Probability floor applied when a smoothed target puts mass on a zero
/// prediction.
pub const PROB_FLOOR: f64 = 1e-9;

/// Max-subtracted softmax.
pub fn softmax<R: Real>(logits: &[R]) -> Result<Vec<R>> {
    if logits.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("softmax input is not finite"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub fn softmax_in_place<R: Real>(xs: &mut [R]) {
    let max = xs.iter().copied().fold(R::neg_infinity(), R::max);
    let mut sum = R::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = R::one() / sum;
    for v in xs.iter_mut() {
        *v *= inv;
    }
}

/// Natural log of `Σ exp(x)`, stabilized by the maximum.
pub fn log_sum_exp<R: Real>(xs: &[R]) -> R {
    let max = xs.iter().copied().fold(R::neg_infinity(), R::max);
    let sum: R = xs.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `gain ⊙ (x − mean) / sqrt(var + eps) + bias` with population variance.
pub fn layer_norm<R: Real>(x: &[R], gain: &[R], bias: &[R], eps: R) -> Result<Vec<R>> {
    if x.len() < 2 || gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::contract(format!(
            "layer_norm lengths x={} gain={} bias={}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let mut out = vec![R::zero(); x.len()];
    layer_norm_row(x, gain, bias, eps, &mut out, None);
    Ok(out)
}

/// Normalizes one row into `out`; when `xhat` is given the normalized
/// pre-affine values are stored there. Returns `1 / sqrt(var + eps)`.
pub fn layer_norm_row<R: Real>(
    x: &[R],
    gain: &[R],
    bias: &[R],
    eps: R,
    out: &mut [R],
    xhat: Option<&mut [R]>,
) -> R {
    let n = R::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<R>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
    let inv_std = R::one() / (var + eps).sqrt();
    match xhat {
        Some(xh) => {
            for i in 0..x.len() {
                let h = (x[i] - mean) * inv_std;
                xh[i] = h;
                out[i] = gain[i] * h + bias[i];
            }
        }
        None => {
            for i in 0..x.len() {
                out[i] = gain[i] * ((x[i] - mean) * inv_std) + bias[i];
            }
        }
    }
    inv_std
}

/// Result of a label-smoothed cross-entropy evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedLoss {
    pub loss: f64,
    /// Set when a prediction with positive target mass had to be floored.
    pub clamped: bool,
}

/// `−Σ_k q_k log pred_k` with `q_target = 1 − ε + ε/V` and `q_other = ε/V`.
pub fn label_smoothed_cross_entropy<R: Real>(
    pred: &[R],
    target: usize,
    eps_ls: f64,
) -> Result<SmoothedLoss> {
    let v = pred.len();
    if target >= v {
        return Err(Error::contract(format!(
            "target {target} outside vocabulary of {v}"
        )));
    }
    if !(0.0..1.0).contains(&eps_ls) {
        return Err(Error::contract(format!(
            "label smoothing {eps_ls} outside [0, 1)"
        )));
    }
    let other = eps_ls / v as f64;
    let mut clamped = false;
    let mut loss = 0.0;
    for (k, &p) in pred.iter().enumerate() {
        let q = if k == target { 1.0 - eps_ls + other } else { other };
        if q == 0.0 {
            continue;
        }
        let mut p = p.as_f64();
        if p < PROB_FLOOR {
            p = PROB_FLOOR;
            clamped = true;
        }
        loss -= q * p.ln();
    }
    Ok(SmoothedLoss { loss, clamped })
}

pub fn relu_in_place<R: Real>(xs: &mut [R]) {
    for v in xs {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = R::zero();
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Sinusoidal position table `[max_len, d_model]`.
pub fn sinusoidal_positions(max_len: usize, d_model: usize) -> Vec<f32> {
    let mut table = vec![0.0f32; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let freq = (10000f64).powf(-(2.0 * i as f64) / d_model as f64);
            let angle = pos as f64 * freq;
            table[pos * d_model + 2 * i] = angle.sin() as f32;
            table[pos * d_model + 2 * i + 1] = angle.cos() as f32;
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_analytic() {
        let p = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax::<f32>(&[]).is_err());
        assert!(softmax(&[f32::NAN]).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let out = layer_norm(&[3.0f64; 4], &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        let out = layer_norm(&[1.0f64, -1.0], &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-9 && (out[1] + 1.0).abs() < 1e-9);
        assert!(layer_norm(&[1.0f32, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err());
        assert!(layer_norm(&[1.0f32], &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn layer_norm_matches_scalar_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f32> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g: Vec<f32> = (0..8).map(|_| rng.gen_range(0.5..1.5)).collect();
        let b: Vec<f32> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let eps = 1e-5f32;
        // oracle: written out term by term in f64
        let mean: f64 = x.iter().map(|&v| v as f64).sum::<f64>() / 8.0;
        let var: f64 = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 8.0;
        let out = layer_norm(&x, &g, &b, eps).unwrap();
        for i in 0..8 {
            let want = g[i] as f64 * (x[i] as f64 - mean) / (var + eps as f64).sqrt() + b[i] as f64;
            assert!((out[i] as f64 - want).abs() < 1e-5, "{i}: {} vs {want}", out[i]);
        }
    }

    #[test]
    fn smoothed_ce_cases() {
        let v = 5;
        let uniform = vec![0.2f64; v];
        for eps in [0.0, 0.1, 0.2, 0.5] {
            let l = label_smoothed_cross_entropy(&uniform, 3, eps).unwrap();
            assert!((l.loss - (v as f64).ln()).abs() < 1e-12);
            assert!(!l.clamped);
        }
        let one_hot = [0.0f64, 1.0, 0.0];
        let l = label_smoothed_cross_entropy(&one_hot, 1, 0.0).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(!l.clamped);
        let l = label_smoothed_cross_entropy(&one_hot, 1, 0.1).unwrap();
        assert!(l.clamped);
        assert!(label_smoothed_cross_entropy(&one_hot, 3, 0.1).is_err());
    }

    #[test]
    fn smoothed_ce_hand_value() {
        // q = [0.85, 0.05, 0.05, 0.05]
        let l = label_smoothed_cross_entropy(&[0.7f64, 0.1, 0.1, 0.1], 0, 0.2).unwrap();
        let want = -(0.85 * 0.7f64.ln() + 3.0 * 0.05 * 0.1f64.ln());
        assert!((l.loss - want).abs() < 1e-12);
        assert!((l.loss - 0.648561).abs() < 1e-6);
    }
}
