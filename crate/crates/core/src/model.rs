//! The POUnet approximant `y(x) = Σ_α φ_α(x) Σ_β c_{α,β} P_β(x)`, its
//! least-squares design matrix and the squared-error loss.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, ensure_finite, Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::poly::{BasisDescriptor, MonomialBasis};
use crate::pou::{Architecture, ParamVector, PartitionNet};

/// Point samples `{(x_i, y_i)}` with distinct `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: DenseMatrix,
    ys: Vec<f64>,
}

impl Dataset {
    /// Validates the samples and drops repeated points, keeping the first
    /// occurrence of each.
    pub fn new(xs: DenseMatrix, ys: Vec<f64>) -> Result<Self> {
        if xs.rows() == 0 || xs.cols() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one point".into()));
        }
        if ys.len() != xs.rows() {
            return Err(dim_mismatch(format!("{} points but {} labels", xs.rows(), ys.len())));
        }
        ensure_finite("dataset points", xs.as_slice())?;
        ensure_finite("dataset labels", &ys)?;

        let mut seen = HashSet::with_capacity(xs.rows());
        let mut keep = Vec::with_capacity(xs.rows());
        for (i, row) in xs.row_iter().enumerate() {
            // +0.0 and −0.0 are the same point.
            let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
            if seen.insert(key) {
                keep.push(i);
            }
        }
        if keep.len() == xs.rows() {
            return Ok(Self { xs, ys });
        }
        let d = xs.cols();
        let mut data = Vec::with_capacity(keep.len() * d);
        for &i in &keep {
            data.extend_from_slice(xs.row(i));
        }
        Ok(Self { xs: DenseMatrix::from_raw(keep.len(), d, data), ys: keep.iter().map(|&i| ys[i]).collect() })
    }

    pub fn xs(&self) -> &DenseMatrix {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.cols()
    }
}

/// Partition network, polynomial basis and the `N_part × dim(V)` coefficient
/// matrix (row-major, row α holds the coefficients of partition α).
#[derive(Debug, Clone, PartialEq)]
pub struct PouModel {
    partition: PartitionNet,
    basis: MonomialBasis,
    coeffs: Vec<f64>,
}

impl PouModel {
    pub fn new(partition: PartitionNet, basis: MonomialBasis, coeffs: Vec<f64>) -> Result<Self> {
        if partition.dim() != basis.dim_input() {
            return Err(dim_mismatch(format!("{}-d partition with a {}-d basis", partition.dim(), basis.dim_input())));
        }
        let expected = partition.n_part() * basis.len();
        if coeffs.len() != expected {
            return Err(dim_mismatch(format!("{} coefficients, expected N_part·dim(V) = {expected}", coeffs.len())));
        }
        ensure_finite("coefficients", &coeffs)?;
        Ok(Self { partition, basis, coeffs })
    }

    /// Coefficients drawn from the standard normal distribution.
    pub fn with_random_coeffs<R: Rng + ?Sized>(
        partition: PartitionNet,
        basis: MonomialBasis,
        rng: &mut R,
    ) -> Result<Self> {
        let n = partition.n_part() * basis.len();
        let coeffs = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Self::new(partition, basis, coeffs)
    }

    pub fn partition(&self) -> &PartitionNet {
        &self.partition
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn n_part(&self) -> usize {
        self.partition.n_part()
    }

    pub fn set_coeffs(&mut self, coeffs: Vec<f64>) -> Result<()> {
        if coeffs.len() != self.coeffs.len() {
            return Err(dim_mismatch(format!("{} coefficients, expected {}", coeffs.len(), self.coeffs.len())));
        }
        ensure_finite("coefficients", &coeffs)?;
        self.coeffs = coeffs;
        Ok(())
    }

    pub fn set_partition_params(&mut self, params: &[f64]) -> Result<()> {
        self.partition.set_params(params)
    }

    pub fn predict(&self, xs: &DenseMatrix) -> Result<Vec<f64>> {
        let phi = self.partition.forward(xs)?.into_phi();
        let pv = self.basis.eval_batch(xs)?;
        Ok(predict_from_parts(&phi, &pv, &self.coeffs))
    }

    pub fn to_checkpoint(&self, seed: Option<u64>) -> ModelCheckpoint {
        ModelCheckpoint {
            architecture: self.partition.architecture(),
            basis: self.basis.clone().into(),
            seed,
            xi: self.partition.params().into_inner(),
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn from_checkpoint(c: ModelCheckpoint) -> Result<Self> {
        let partition = PartitionNet::from_params(c.architecture, &c.xi)?;
        Self::new(partition, c.basis.try_into()?, c.coeffs)
    }
}

/// On-disk model: layout header plus flat `ξ` and `c` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub architecture: Architecture,
    pub basis: BasisDescriptor,
    pub seed: Option<u64>,
    pub xi: Vec<f64>,
    pub coeffs: Vec<f64>,
}

/// `ŷ_i = Σ_α φ[i,α] (c_α · P[i,:])`.
pub(crate) fn predict_from_parts(phi: &DenseMatrix, pv: &DenseMatrix, coeffs: &[f64]) -> Vec<f64> {
    let nb = pv.cols();
    (0..phi.rows())
        .map(|i| {
            let p = pv.row(i);
            phi.row(i).iter().zip(coeffs.chunks_exact(nb)).map(|(&f, c)| f * dot(c, p)).sum()
        })
        .collect()
}

/// Design matrix from precomputed partition values (`N × N_part`) and basis
/// values (`N × dim(V)`): column `α·dim(V) + β` holds `φ_α(x_i)·P_β(x_i)`.
pub fn assemble_design(phi: &DenseMatrix, pv: &DenseMatrix) -> Result<DenseMatrix> {
    if phi.rows() != pv.rows() {
        return Err(dim_mismatch(format!("{} partition rows but {} basis rows", phi.rows(), pv.rows())));
    }
    let (n, np, nb) = (phi.rows(), phi.cols(), pv.cols());
    let mut a = DenseMatrix::zeros(n, np * nb);
    for i in 0..n {
        let p = pv.row(i);
        let row = a.row_mut(i);
        for (alpha, &f) in phi.row(i).iter().enumerate() {
            for (dst, &pb) in row[alpha * nb..(alpha + 1) * nb].iter_mut().zip(p) {
                *dst = f * pb;
            }
        }
    }
    Ok(a)
}

pub fn design_matrix(partition: &PartitionNet, basis: &MonomialBasis, xs: &DenseMatrix) -> Result<DenseMatrix> {
    let phi = partition.forward(xs)?.into_phi();
    assemble_design(&phi, &basis.eval_batch(xs)?)
}

/// Sum of squared residuals over the dataset.
pub fn loss(model: &PouModel, data: &Dataset) -> Result<f64> {
    let pred = model.predict(data.xs())?;
    Ok(pred.iter().zip(data.ys()).map(|(p, y)| (p - y) * (p - y)).sum())
}

/// `upstream[i,α] = 2 r_i (c_α · P(x_i))`, the derivative of the summed loss
/// with respect to `φ_α(x_i)` at fixed coefficients.
pub(crate) fn loss_upstream(residuals: &[f64], coeffs: &[f64], pv: &DenseMatrix, n_part: usize) -> DenseMatrix {
    let nb = pv.cols();
    let mut up = DenseMatrix::zeros(residuals.len(), n_part);
    for (i, &r) in residuals.iter().enumerate() {
        let p = pv.row(i);
        for (u, c) in up.row_mut(i).iter_mut().zip(coeffs.chunks_exact(nb)) {
            *u = 2.0 * r * dot(c, p);
        }
    }
    up
}

/// Gradient of [`loss`] with respect to the partition parameters `ξ`,
/// holding the coefficients fixed.
pub fn loss_grad_xi(model: &PouModel, data: &Dataset) -> Result<ParamVector> {
    let fwd = model.partition.forward(data.xs())?;
    let pv = model.basis.eval_batch(data.xs())?;
    let pred = predict_from_parts(fwd.phi(), &pv, &model.coeffs);
    let residuals: Vec<f64> = pred.iter().zip(data.ys()).map(|(p, y)| p - y).collect();
    let up = loss_upstream(&residuals, &model.coeffs, &pv, model.n_part());
    model.partition.backward(&fwd, &up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::pou::{init_rbf, RbfNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_partition(dim: usize) -> PartitionNet {
        RbfNet::new(DenseMatrix::zeros(1, dim), vec![1.0]).unwrap().into()
    }

    #[test]
    fn dataset_removes_duplicates() {
        let xs = DenseMatrix::from_rows(&[[0.0, 1.0], [0.0, 0.0], [0.0, 1.0], [-0.0, 0.0]]).unwrap();
        let d = Dataset::new(xs, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.ys(), &[1.0, 2.0]);
        assert!(Dataset::new(DenseMatrix::zeros(0, 1), vec![]).is_err());
        assert!(Dataset::new(DenseMatrix::zeros(2, 1), vec![1.0]).is_err());
        assert!(Dataset::new(DenseMatrix::zeros(1, 1), vec![f64::NAN]).is_err());
    }

    #[test]
    fn constant_model() {
        let model = PouModel::new(single_partition(2), MonomialBasis::raw(2, 0).unwrap(), vec![5.0]).unwrap();
        let xs = DenseMatrix::from_rows(&[[0.1, 0.2], [-3.0, 7.0]]).unwrap();
        assert_eq!(model.predict(&xs).unwrap(), vec![5.0, 5.0]);
        let a = design_matrix(model.partition(), model.basis(), &xs).unwrap();
        assert_eq!(a.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = init_rbf(3, &Domain::unit(1), &mut rng).unwrap();
        let model = PouModel::new(net.into(), MonomialBasis::raw(1, 2).unwrap(), vec![0.0; 9]).unwrap();
        let xs = DenseMatrix::from_rows(&[[0.3], [0.9]]).unwrap();
        assert_eq!(model.predict(&xs).unwrap(), vec![0.0, 0.0]);
        let data = Dataset::new(xs, vec![1.0, 1.0]).unwrap();
        assert_eq!(loss(&model, &data).unwrap(), 2.0);
        assert!(loss_grad_xi(&model, &data).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn design_row_is_partition_times_basis() {
        let phi = DenseMatrix::from_rows(&[[0.25, 0.75]]).unwrap();
        let pv = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(assemble_design(&phi, &pv).unwrap().as_slice(), &[0.25, 0.75]);
        let pv2 = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(assemble_design(&phi, &pv2).unwrap().as_slice(), &[0.25, 0.5, 0.75, 1.5]);
    }

    #[test]
    fn coefficient_shape_is_checked() {
        let r = PouModel::new(single_partition(1), MonomialBasis::raw(1, 1).unwrap(), vec![1.0]);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
        let r = PouModel::new(single_partition(2), MonomialBasis::raw(1, 0).unwrap(), vec![1.0]);
        assert!(r.is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = init_rbf(4, &Domain::unit(2), &mut rng).unwrap();
        let basis = MonomialBasis::for_domain(&Domain::unit(2), 2);
        let model = PouModel::with_random_coeffs(net.into(), basis, &mut rng).unwrap();
        let json = serde_json::to_string(&model.to_checkpoint(Some(9))).unwrap();
        let back = PouModel::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
