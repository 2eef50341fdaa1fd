use std::time::Instant;

use rand::Rng;

use crate::domain::Domain;
use crate::error::{dim_mismatch, ensure_finite, Error, Result};
use crate::linalg::{gemm, norm2, DenseMatrix};
use crate::model::Dataset;
use crate::optim::{AdamState, TrainReport};
use crate::pou::{init_trunk_box, ParamVector, ResNetTrunk};

/// Depth of the baseline (and POUnet partition) ResNets in the wave study.
pub const BASELINE_DEPTH: usize = 8;

/// Width `4·2^p` used for wave `p`.
pub fn baseline_width(p: u32) -> usize {
    4 << p
}

/// Plain scalar-output ResNet regressor: the POUnet partition trunk with a
/// `width → 1` affine head and no softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetRegressor {
    trunk: ResNetTrunk,
    w_out: Vec<f64>,
    b_out: f64,
}

impl ResNetRegressor {
    /// Wraps a trunk with a zero output head.
    pub fn new(trunk: ResNetTrunk) -> Self {
        let w = trunk.width();
        Self { trunk, w_out: vec![0.0; w], b_out: 0.0 }
    }

    pub fn trunk(&self) -> &ResNetTrunk {
        &self.trunk
    }

    pub fn n_params(&self) -> usize {
        self.trunk.n_params() + self.w_out.len() + 1
    }

    pub fn params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.n_params());
        self.trunk.write_params(&mut out);
        out.extend_from_slice(&self.w_out);
        out.push(self.b_out);
        ParamVector::new(out)
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(dim_mismatch(format!("{} parameters, expected {}", p.len(), self.n_params())));
        }
        let at = self.trunk.read_params(p);
        let w = self.w_out.len();
        self.w_out.copy_from_slice(&p[at..at + w]);
        self.b_out = p[at + w];
        Ok(())
    }

    fn check_input(&self, xs: &DenseMatrix) -> Result<()> {
        if xs.cols() != self.trunk.dim() {
            return Err(dim_mismatch(format!(
                "points of dimension {} for a {}-d network",
                xs.cols(),
                self.trunk.dim()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, xs: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_input(xs)?;
        let cache = self.trunk.forward(xs);
        Ok(self.head(cache.output(), xs.rows()))
    }

    fn head(&self, h: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![self.b_out; n];
        gemm(n, self.w_out.len(), 1, 1.0, (h, false), (&self.w_out, false), 1.0, &mut out);
        out
    }

    /// Sum of squared residuals and the gradient of the mean squared error.
    pub fn loss_and_grad(&self, data: &Dataset) -> Result<(f64, ParamVector)> {
        self.check_input(data.xs())?;
        let n = data.len();
        let w = self.w_out.len();
        let cache = self.trunk.forward(data.xs());
        let pred = self.head(cache.output(), n);
        let residuals: Vec<f64> = pred.iter().zip(data.ys()).map(|(p, y)| p - y).collect();
        let sse: f64 = residuals.iter().map(|r| r * r).sum();

        let scale = 2.0 / n as f64;
        let g_out: Vec<f64> = residuals.iter().map(|r| scale * r).collect();
        let mut grad = vec![0.0; self.n_params()];
        let (g_trunk, g_head) = grad.split_at_mut(self.trunk.n_params());
        gemm(1, n, w, 1.0, (&g_out, false), (cache.output(), false), 0.0, &mut g_head[..w]);
        g_head[w] = g_out.iter().sum();
        let mut d_h = vec![0.0; n * w];
        gemm(n, 1, w, 1.0, (&g_out, false), (&self.w_out, false), 0.0, &mut d_h);
        self.trunk.backward(&cache, d_h, g_trunk);
        Ok((sse, ParamVector::new(grad)))
    }
}

/// Trains a box-initialized scalar ResNet on the mean squared error with
/// full-batch Adam, returning the parameters with the lowest training loss.
pub fn baseline_resnet_fit<R: Rng + ?Sized>(
    data: &Dataset,
    width: usize,
    depth: usize,
    epochs: usize,
    lr: f64,
    rng: &mut R,
) -> Result<(ResNetRegressor, TrainReport)> {
    let start = Instant::now();
    let trunk = init_trunk_box(width, depth, &Domain::bounding_box(data.xs())?, rng)?;
    let mut net = ResNetRegressor::new(trunk);
    let mut params = net.params();
    let mut adam = AdamState::new(params.len(), lr);
    let y_norm = norm2(data.ys());
    let n = data.len() as f64;

    let mut report = TrainReport {
        loss_trace: Vec::with_capacity(epochs),
        lambda_trace: Vec::with_capacity(epochs),
        rel_l2_trace: Vec::with_capacity(epochs),
        best_epoch: 0,
        final_loss: f64::NAN,
        final_rel_l2: f64::NAN,
        final_rms: f64::NAN,
        phase_boundary: None,
        collapsed_partitions: Vec::new(),
        wall_time: 0.0,
    };
    let mut best: Option<(f64, ParamVector)> = None;

    for epoch in 0..=epochs {
        let (sse, grad) = net.loss_and_grad(data)?;
        if !sse.is_finite() {
            return Err(Error::TrainingAborted { epoch, reason: format!("non-finite loss {sse}") });
        }
        if best.as_ref().is_none_or(|(l, _)| sse < *l) {
            best = Some((sse, params.clone()));
            report.best_epoch = epoch.min(epochs.saturating_sub(1));
        }
        // The extra pass scores the parameters left by the last update.
        if epoch == epochs {
            break;
        }
        report.loss_trace.push(sse);
        report.lambda_trace.push(0.0);
        report.rel_l2_trace.push(sse.sqrt() / y_norm);
        ensure_finite("baseline gradient", &grad)
            .map_err(|e| Error::TrainingAborted { epoch, reason: e.to_string() })?;
        adam.step(&mut params, &grad)?;
        net.set_params(&params)?;
    }

    let (best_loss, best_params) = best.expect("at least one evaluation");
    net.set_params(&best_params)?;
    report.final_loss = best_loss;
    report.final_rel_l2 = best_loss.sqrt() / y_norm;
    report.final_rms = (best_loss / n).sqrt();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((net, report))
}
