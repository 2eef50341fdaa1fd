//! Adam, LSGD (alternating optimal ridge least-squares solves for the
//! coefficients with Adam steps on the partition parameters) and the
//! two-phase regularized/unregularized LSGD schedule.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, solve_least_squares, DenseMatrix};
use crate::model::{assemble_design, loss_upstream, Dataset, PouModel};
use crate::pou::ParamVector;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Relative improvement of the best loss below which an epoch counts as
/// stagnant.
pub const STAGNATION_TOL: f64 = 1e-12;

/// Default support threshold used when flagging collapsed partitions.
pub const DEFAULT_COLLAPSE_TAU: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() || grad.len() != self.first_moment.len() {
            return Err(Error::DimensionMismatch(format!(
                "Adam state of {} entries, params {}, gradient {}",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} = {} at Adam step {}",
                grad[i],
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in
            params.iter_mut().zip(grad).zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &ParamVector, grad: &ParamVector) -> Result<(AdamState, ParamVector)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step(&mut p, grad)?;
    Ok((s, p))
}

/// Hyperparameters of one LSGD run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsgdConfig {
    pub n_epoch: usize,
    /// Ridge weight on `‖c‖²` in the least-squares step.
    pub lambda: f64,
    /// Decay factor applied to `lambda` after a stagnation event.
    pub rho: f64,
    /// Consecutive non-improving epochs that trigger a decay.
    pub n_stag: usize,
    /// Adam learning rate for the partition parameters.
    pub lr: f64,
}

impl LsgdConfig {
    /// Unregularized LSGD.
    pub fn plain(n_epoch: usize, lr: f64) -> Self {
        Self { n_epoch, lambda: 0.0, rho: 0.0, n_stag: n_epoch.max(1), lr }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.n_stag == 0 {
            return bad("n_stag must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate must be finite and nonnegative, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sum of squared residuals right after each epoch's least-squares solve.
    pub loss_trace: Vec<f64>,
    /// `lambda` used by each epoch's solve.
    pub lambda_trace: Vec<f64>,
    pub rel_l2_trace: Vec<f64>,
    /// Epoch (index into the traces) with the lowest recorded loss.
    pub best_epoch: usize,
    /// Loss, relative ℓ2 and RMS error of the returned model on the training data.
    pub final_loss: f64,
    pub final_rel_l2: f64,
    pub final_rms: f64,
    /// Start of phase 2 in the traces, for two-phase runs.
    pub phase_boundary: Option<usize>,
    /// Partitions whose maximum over the data is below [`DEFAULT_COLLAPSE_TAU`].
    pub collapsed_partitions: Vec<usize>,
    pub wall_time: f64,
}

impl TrainReport {
    /// `epoch,loss,lambda,rel_l2` rows, one per epoch.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lambda,rel_l2\n");
        for (i, ((l, lam), r)) in self.loss_trace.iter().zip(&self.lambda_trace).zip(&self.rel_l2_trace).enumerate() {
            s.push_str(&format!("{i},{l:.16e},{lam:.16e},{r:.16e}\n"));
        }
        s
    }
}

/// Result of a single LSGD run: the model at the end of the loop (with
/// coefficients re-solved at `lambda = 0`) and the best model seen.
#[derive(Debug, Clone)]
pub struct LsgdOutcome {
    pub best: PouModel,
    pub last: PouModel,
    pub report: TrainReport,
}

struct Fit {
    coeffs: Vec<f64>,
    loss: f64,
}

/// State shared by the epochs of one run: data, cached basis values, and
/// the partition being trained.
struct Trainer<'a> {
    data: &'a Dataset,
    basis_vals: DenseMatrix,
    y_norm: f64,
}

impl<'a> Trainer<'a> {
    fn new(model: &PouModel, data: &'a Dataset) -> Result<Self> {
        Ok(Self { data, basis_vals: model.basis().eval_batch(data.xs())?, y_norm: norm2(data.ys()) })
    }

    fn solve(&self, design: &DenseMatrix, lambda: f64, epoch: usize) -> Result<Fit> {
        let coeffs = solve_least_squares(design, self.data.ys(), lambda)
            .map_err(|e| Error::TrainingAborted { epoch, reason: e.to_string() })?;
        let pred = design.matvec(&coeffs)?;
        let loss = pred.iter().zip(self.data.ys()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::TrainingAborted { epoch, reason: format!("non-finite loss {loss}") });
        }
        Ok(Fit { coeffs, loss })
    }

    /// Minimum-norm unregularized coefficients for the model's current partition.
    fn resolve(&self, model: &mut PouModel, epoch: usize) -> Result<f64> {
        let phi = model.partition().forward(self.data.xs())?.into_phi();
        let design = assemble_design(&phi, &self.basis_vals)?;
        let fit = self.solve(&design, 0.0, epoch)?;
        model.set_coeffs(fit.coeffs)?;
        Ok(fit.loss)
    }

    fn rel_l2(&self, loss: f64) -> f64 {
        loss.sqrt() / self.y_norm
    }
}

/// Runs LSGD and returns both the final and the best state.
pub fn lsgd_run(model: &PouModel, data: &Dataset, cfg: &LsgdConfig) -> Result<LsgdOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let trainer = Trainer::new(model, data)?;
    let n = data.len() as f64;
    let n_part = model.n_part();

    let mut current = model.clone();
    let mut xi = current.partition().params();
    let mut adam = AdamState::new(xi.len(), cfg.lr);
    let mut lambda = cfg.lambda;

    let mut report = TrainReport {
        loss_trace: Vec::with_capacity(cfg.n_epoch),
        lambda_trace: Vec::with_capacity(cfg.n_epoch),
        rel_l2_trace: Vec::with_capacity(cfg.n_epoch),
        best_epoch: 0,
        final_loss: f64::NAN,
        final_rel_l2: f64::NAN,
        final_rms: f64::NAN,
        phase_boundary: None,
        collapsed_partitions: Vec::new(),
        wall_time: 0.0,
    };

    let mut best: Option<(f64, ParamVector, Vec<f64>)> = None;
    let mut stagnation_ref = f64::INFINITY;
    let mut stalled = 0usize;

    for epoch in 0..cfg.n_epoch {
        let fwd = current.partition().forward(data.xs())?;
        let design = assemble_design(fwd.phi(), &trainer.basis_vals)?;
        let fit = trainer.solve(&design, lambda, epoch)?;

        report.loss_trace.push(fit.loss);
        report.lambda_trace.push(lambda);
        report.rel_l2_trace.push(trainer.rel_l2(fit.loss));

        if best.as_ref().is_none_or(|(l, _, _)| fit.loss < *l) {
            best = Some((fit.loss, xi.clone(), fit.coeffs.clone()));
            report.best_epoch = epoch;
        }
        if fit.loss < stagnation_ref * (1.0 - STAGNATION_TOL) {
            stagnation_ref = fit.loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.n_stag {
                lambda *= cfg.rho;
                stalled = 0;
            }
        }

        // Gradient of the mean squared error at the freshly solved coefficients.
        let pred = design.matvec(&fit.coeffs)?;
        let residuals: Vec<f64> = pred.iter().zip(data.ys()).map(|(p, y)| p - y).collect();
        let upstream = loss_upstream(&residuals, &fit.coeffs, &trainer.basis_vals, n_part);
        let mut grad = current.partition().backward(&fwd, &upstream)?;
        grad.iter_mut().for_each(|g| *g /= n);
        adam.step(&mut xi, &grad).map_err(|e| Error::TrainingAborted { epoch, reason: e.to_string() })?;
        current.set_partition_params(&xi)?;
        current.set_coeffs(fit.coeffs)?;
    }

    let final_epoch = cfg.n_epoch;
    let mut last = current;
    let last_loss = trainer.resolve(&mut last, final_epoch)?;

    let (best_model, best_loss) = match best {
        Some((_, best_xi, _)) => {
            let mut m = last.clone();
            m.set_partition_params(&best_xi)?;
            let l = trainer.resolve(&mut m, final_epoch)?;
            if l <= last_loss {
                (m, l)
            } else {
                (last.clone(), last_loss)
            }
        }
        None => (last.clone(), last_loss),
    };

    report.final_loss = best_loss;
    report.final_rel_l2 = trainer.rel_l2(best_loss);
    report.final_rms = (best_loss / n).sqrt();
    let phi = best_model.partition().forward(data.xs())?.into_phi();
    report.collapsed_partitions = detect_collapse(&phi, DEFAULT_COLLAPSE_TAU);
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(LsgdOutcome { best: best_model, last, report })
}

/// LSGD; returns the lowest-loss model seen and the run report.
pub fn lsgd(model: &PouModel, data: &Dataset, cfg: &LsgdConfig) -> Result<(PouModel, TrainReport)> {
    let out = lsgd_run(model, data, cfg)?;
    Ok((out.best, out.report))
}

/// Regularized LSGD pre-training followed by unregularized LSGD from the
/// phase-1 end state. `cfg_main`'s ridge settings are ignored: phase 2 runs
/// with `lambda = 0`, `rho = 0`, `n_stag = n_epoch`.
pub fn two_phase_lsgd(
    model: &PouModel,
    data: &Dataset,
    cfg_pre: &LsgdConfig,
    cfg_main: &LsgdConfig,
) -> Result<(PouModel, TrainReport)> {
    let out = two_phase_lsgd_run(model, data, cfg_pre, cfg_main)?;
    Ok((out.best, out.report))
}

/// [`two_phase_lsgd`] returning the phase-2 outcome with a merged report.
pub fn two_phase_lsgd_run(
    model: &PouModel,
    data: &Dataset,
    cfg_pre: &LsgdConfig,
    cfg_main: &LsgdConfig,
) -> Result<LsgdOutcome> {
    cfg_pre.validate()?;
    let main = LsgdConfig { lambda: 0.0, rho: 0.0, n_stag: cfg_main.n_epoch.max(1), ..*cfg_main };
    main.validate()?;
    let phase1 = lsgd_run(model, data, cfg_pre)?;
    let mut phase2 = lsgd_run(&phase1.last, data, &main)?;

    let boundary = phase1.report.loss_trace.len();
    let p1 = phase1.report;
    let r = &mut phase2.report;
    r.best_epoch += boundary;
    r.phase_boundary = Some(boundary);
    r.wall_time += p1.wall_time;
    for (dst, src) in [
        (&mut r.loss_trace, p1.loss_trace),
        (&mut r.lambda_trace, p1.lambda_trace),
        (&mut r.rel_l2_trace, p1.rel_l2_trace),
    ] {
        let tail = std::mem::replace(dst, src);
        dst.extend(tail);
    }
    Ok(phase2)
}

/// Indices `α` with `max_i φ_α(x_i) < tau`.
pub fn detect_collapse(partition_evals: &DenseMatrix, tau: f64) -> Vec<usize> {
    (0..partition_evals.cols()).filter(|&a| partition_evals.row_iter().all(|row| row[a] < tau)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let s = AdamState::new(3, 0.1);
        let p = ParamVector::new(vec![1.0, -2.0, 3.0]);
        let (s2, p2) = adam_step(&s, &p, &ParamVector::zeros(3)).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.step_count, 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // t = 1: m̂ = g, v̂ = g², so the update is −η g/(|g| + ε).
        let lr = 1e-3;
        let g = [0.5, -2.0, 1e-3];
        let s = AdamState::new(3, lr);
        let (_, p) = adam_step(&s, &ParamVector::zeros(3), &ParamVector::new(g.to_vec())).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = -lr * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
            assert!((pi + lr * gi.signum()).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let s = AdamState::new(2, 0.01);
        let p = ParamVector::new(vec![0.1, 0.2]);
        let g = ParamVector::new(vec![0.3, -0.4]);
        assert_eq!(adam_step(&s, &p, &g).unwrap(), adam_step(&s, &p, &g).unwrap());
        let bad = ParamVector::new(vec![0.3, f64::NAN]);
        assert!(matches!(adam_step(&s, &p, &bad), Err(Error::NonFinite(_))));
        assert!(adam_step(&s, &p, &ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LsgdConfig::plain(10, 1e-3).validate().is_ok());
        let base = LsgdConfig { n_epoch: 1, lambda: 0.1, rho: 0.9, n_stag: 5, lr: 0.1 };
        assert!(LsgdConfig { rho: 1.5, ..base }.validate().is_err());
        assert!(LsgdConfig { n_stag: 0, ..base }.validate().is_err());
        assert!(LsgdConfig { lambda: -1.0, ..base }.validate().is_err());
        assert!(LsgdConfig { lr: f64::NAN, ..base }.validate().is_err());
    }

    #[test]
    fn collapse_detection() {
        let uniform = DenseMatrix::new(3, 4, vec![0.25; 12]).unwrap();
        assert!(detect_collapse(&uniform, 0.2).is_empty());
        let mut m = DenseMatrix::new(2, 2, vec![1.0 - 1e-9, 1e-9, 1.0 - 1e-9, 1e-9]).unwrap();
        assert_eq!(detect_collapse(&m, 1e-3), vec![1]);
        m.set(0, 1, 0.5);
        assert!(detect_collapse(&m, 1e-3).is_empty());
        assert!(detect_collapse(&uniform, 0.0).is_empty());
    }
}
