//! Central finite-difference check of backward gradients in 64-bit arithmetic.

use super::Seq2Seq;
use crate::autodiff::Graph;
use crate::corpus::Batch;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    pub worst_rel_err: f64,
}

impl GradCheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            return 1.0;
        }
        self.passed as f64 / self.checked as f64
    }
}

fn loss64<M: Seq2Seq>(model: &M, batch: &Batch) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let l = model.loss_graph(&mut g, batch)?;
    Ok(g.scalar(l))
}

/// Compares every parameter coordinate's analytic gradient with
/// `(L(p + h) - L(p - h)) / (2h)`; a coordinate passes when
/// `|analytic - numeric| / (|analytic| + 1e-6) < tol`.
pub fn gradient_check<M: Seq2Seq>(model: &M, batch: &Batch, h: f32, tol: f64) -> Result<GradCheckReport> {
    let mut g = Graph::<f64>::new();
    let loss = model.loss_graph(&mut g, batch)?;
    let grads = g.backward(loss)?;
    let mut probe = model.clone();
    let ids: Vec<String> = model.params().iter().map(|(id, _)| id.clone()).collect();
    let mut report = GradCheckReport {
        checked: 0,
        passed: 0,
        worst_rel_err: 0.0,
    };
    for id in ids {
        let n = model.params().require(&id)?.len();
        let analytic = grads.by_param.get(&id);
        for i in 0..n {
            let orig = model.params().require(&id)?.values()[i];
            let (up, down) = (orig + h, orig - h);
            probe.params_mut().get_mut(&id).expect("param").values_mut()[i] = up;
            let lp = loss64(&probe, batch)?;
            probe.params_mut().get_mut(&id).expect("param").values_mut()[i] = down;
            let lm = loss64(&probe, batch)?;
            probe.params_mut().get_mut(&id).expect("param").values_mut()[i] = orig;
            let numeric = (lp - lm) / (up as f64 - down as f64);
            let a = analytic.map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / (a.abs() + 1e-6);
            report.checked += 1;
            if rel < tol {
                report.passed += 1;
            }
            report.worst_rel_err = report.worst_rel_err.max(rel);
        }
    }
    Ok(report)
}
