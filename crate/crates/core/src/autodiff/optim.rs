use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for every parameter of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.98, 1e-9)
    }
}

/// What happened during one optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Parameters that had no gradient buffer and were treated as zero.
    pub missing_grads: Vec<String>,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: &str) -> Option<&[f32]> {
        self.moments.get(id).map(|(m, _)| m.as_slice())
    }

    pub fn second_moment(&self, id: &str) -> Option<&[f32]> {
        self.moments.get(id).map(|(_, v)| v.as_slice())
    }
}

/// One Adam update of every parameter in `params` using its current gradient.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<StepDiagnostics> {
    if !(lr > 0.0) {
        return Err(Error::contract(format!("learning rate {lr} must be positive")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let mut diag = StepDiagnostics::default();
    for (id, tensor) in params.iter_mut() {
        let n = tensor.len();
        let (m, v) = state
            .moments
            .entry(id.clone())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let grad = match tensor.grad() {
            Some(g) => g.to_vec(),
            None => {
                diag.missing_grads.push(id.clone());
                vec![0.0; n]
            }
        };
        let values = tensor.values_mut();
        for i in 0..n {
            let g = grad[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            values[i] = (values[i] as f64 - update) as f32;
        }
    }
    Ok(diag)
}

/// Linear warmup followed by inverse square-root decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(lr_max: f64, warmup_steps: u64) -> Result<Self> {
        if !(lr_max > 0.0) || warmup_steps == 0 {
            return Err(Error::contract("schedule needs lr_max > 0 and warmup >= 1"));
        }
        Ok(Self {
            lr_max,
            warmup_steps,
        })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        lr_at(self, step)
    }
}

/// `lr_max · min(step / warmup, sqrt(warmup / step))`.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::contract("learning-rate steps start at 1"));
    }
    let s = step as f64;
    let w = schedule.warmup_steps as f64;
    Ok(schedule.lr_max * (s / w).min((w / s).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;

    fn scalar_set(v: f32) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn schedule_landmarks() {
        let s = LrSchedule::new(1e-3, 200).unwrap();
        assert!((s.lr_at(200).unwrap() - 1e-3).abs() < 1e-15);
        assert!((s.lr_at(100).unwrap() - 5e-4).abs() < 1e-15);
        assert!((s.lr_at(800).unwrap() - 5e-4).abs() < 1e-15);
        assert!(s.lr_at(0).is_err());
        let peak = (1..2000).map(|k| s.lr_at(k).unwrap()).fold(0.0, f64::max);
        assert_eq!(peak, s.lr_at(200).unwrap());
    }

    #[test]
    fn zero_gradients_leave_parameters_fixed() {
        let mut ps = scalar_set(1.5);
        let mut st = AdamState::default();
        for _ in 0..10 {
            ps.zero_grads();
            adam_step(&mut ps, &mut st, 1e-2).unwrap();
        }
        assert_eq!(ps.get("w").unwrap().values(), &[1.5]);
        assert_eq!(st.step(), 10);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3f32, -7.0] {
            let mut ps = scalar_set(0.0);
            ps.get_mut("w").unwrap().set_grad(vec![g]).unwrap();
            let mut st = AdamState::new(0.9, 0.98, 0.0);
            adam_step(&mut ps, &mut st, 0.01).unwrap();
            let w = ps.get("w").unwrap().values()[0];
            assert!((w + 0.01 * g.signum()).abs() < 1e-7, "{w}");
        }
    }

    #[test]
    fn missing_gradient_is_flagged() {
        let mut ps = scalar_set(2.0);
        let mut st = AdamState::default();
        let d = adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(d.missing_grads, vec!["w".to_string()]);
        assert_eq!(ps.get("w").unwrap().values(), &[2.0]);
        assert!(adam_step(&mut ps, &mut st, 0.0).is_err());
    }

    #[test]
    fn three_steps_on_quadratic_match_recurrence() {
        // f(w) = (w - 2)^2, gradient 2(w - 2); oracle is a hand-rolled recurrence.
        let (b1, b2, eps, lr) = (0.9f64, 0.98f64, 1e-9f64, 0.05f64);
        let mut w_ref = 0.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * (w_ref - 2.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);
            expected.push(w_ref);
        }
        let mut ps = scalar_set(0.5);
        let mut st = AdamState::new(b1, b2, eps);
        for want in expected {
            let w = ps.get("w").unwrap().values()[0];
            ps.get_mut("w").unwrap().set_grad(vec![2.0 * (w - 2.0)]).unwrap();
            adam_step(&mut ps, &mut st, lr).unwrap();
            let got = ps.get("w").unwrap().values()[0] as f64;
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(st.second_moment("w").unwrap()[0] >= 0.0);
    }
}
