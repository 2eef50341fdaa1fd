use rand::Rng;

use crate::domain::Domain;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::DenseMatrix;

/// Normalized Gaussian partition
/// `φ_α(x) = exp(−|x − c_α|²/s_α²) / Σ_β exp(−|x − c_β|²/s_β²)`.
///
/// Shapes are stored as `log s_α` so that gradient steps keep them positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfNet {
    dim: usize,
    n_part: usize,
    centers: Vec<f64>,
    log_shapes: Vec<f64>,
}

impl RbfNet {
    pub fn new(centers: DenseMatrix, shapes: Vec<f64>) -> Result<Self> {
        let (n_part, dim) = centers.shape();
        if n_part == 0 || dim == 0 {
            return Err(Error::InvalidArgument("RBF net needs at least one center and dimension".into()));
        }
        if shapes.len() != n_part {
            return Err(dim_mismatch(format!("{n_part} centers but {} shapes", shapes.len())));
        }
        if shapes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("RBF shapes must be positive".into()));
        }
        Ok(Self { dim, n_part, centers: centers.into_vec(), log_shapes: shapes.iter().map(|s| s.ln()).collect() })
    }

    pub(super) fn placeholder(dim: usize, n_part: usize) -> Result<Self> {
        Self::new(DenseMatrix::zeros(n_part, dim), vec![1.0; n_part])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_part(&self) -> usize {
        self.n_part
    }

    pub fn center(&self, alpha: usize) -> &[f64] {
        &self.centers[alpha * self.dim..(alpha + 1) * self.dim]
    }

    pub fn shapes(&self) -> Vec<f64> {
        self.log_shapes.iter().map(|l| l.exp()).collect()
    }

    pub(super) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.centers);
        out.extend_from_slice(&self.log_shapes);
    }

    pub(super) fn read_params(&mut self, p: &[f64]) {
        let nc = self.centers.len();
        self.centers.copy_from_slice(&p[..nc]);
        self.log_shapes.copy_from_slice(&p[nc..nc + self.n_part]);
    }

    fn inv_sq_shapes(&self) -> Vec<f64> {
        self.log_shapes.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    fn sq_dist(&self, x: &[f64], alpha: usize) -> f64 {
        x.iter().zip(self.center(alpha)).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub(super) fn forward(&self, xs: &DenseMatrix) -> DenseMatrix {
        let inv = self.inv_sq_shapes();
        let mut logits = DenseMatrix::zeros(xs.rows(), self.n_part);
        for i in 0..xs.rows() {
            let x = xs.row(i);
            for (alpha, z) in logits.row_mut(i).iter_mut().enumerate() {
                *z = -self.sq_dist(x, alpha) * inv[alpha];
            }
        }
        super::softmax_rows(&mut logits);
        logits
    }

    pub(super) fn backward(&self, xs: &DenseMatrix, phi: &DenseMatrix, upstream: &DenseMatrix, grad: &mut [f64]) {
        let inv = self.inv_sq_shapes();
        let g_logits = super::softmax_backward(phi, upstream);
        let (g_centers, g_log) = grad.split_at_mut(self.centers.len());
        for i in 0..xs.rows() {
            let x = xs.row(i);
            for (alpha, &g) in g_logits.row(i).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                // z = −|x − c|²·s⁻²: ∂z/∂c = 2(x − c)s⁻², ∂z/∂log s = 2|x − c|²s⁻².
                let c = self.center(alpha);
                let gc = &mut g_centers[alpha * self.dim..(alpha + 1) * self.dim];
                let mut d2 = 0.0;
                for j in 0..self.dim {
                    let diff = x[j] - c[j];
                    d2 += diff * diff;
                    gc[j] += g * 2.0 * diff * inv[alpha];
                }
                g_log[alpha] += g * 2.0 * d2 * inv[alpha];
            }
        }
    }
}

/// Centers uniform in `domain`, unit shape parameters.
pub fn init_rbf<R: Rng + ?Sized>(n_part: usize, domain: &Domain, rng: &mut R) -> Result<RbfNet> {
    let d = domain.dim();
    let mut centers = Vec::with_capacity(n_part * d);
    for _ in 0..n_part {
        centers.extend(domain.sample(rng));
    }
    RbfNet::new(DenseMatrix::new(n_part, d, centers)?, vec![1.0; n_part])
}
