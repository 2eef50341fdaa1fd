//! Partition-of-unity networks: maps `x ↦ φ(x) ∈ Δ^{N_part−1}` realised
//! either as normalized Gaussians ([`RbfNet`]) or a ReLU residual network
//! followed by a softmax ([`ResNetPou`]).

mod rbf;
mod resnet;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

pub use rbf::{init_rbf, RbfNet};
pub use resnet::{init_resnet_box, init_trunk_box, ResNetPou, ResNetTrunk, TrunkCache};

use crate::error::{dim_mismatch, ensure_finite, Error, Result};
use crate::linalg::DenseMatrix;

/// Flat vector of all trainable reals of one network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm2(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Layout descriptor for a partition network's [`ParamVector`].
///
/// RBF: `centers (n_part × dim, row-major) ‖ log_shapes (n_part)`.
/// ResNet: `w_in (width × dim) ‖ b_in ‖ [w_k (width × width) ‖ b_k]_{k<depth} ‖
/// w_out (n_part × width) ‖ b_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Rbf { dim: usize, n_part: usize },
    Resnet { dim: usize, width: usize, depth: usize, n_part: usize },
}

impl Architecture {
    pub fn dim(&self) -> usize {
        match *self {
            Architecture::Rbf { dim, .. } | Architecture::Resnet { dim, .. } => dim,
        }
    }

    pub fn n_part(&self) -> usize {
        match *self {
            Architecture::Rbf { n_part, .. } | Architecture::Resnet { n_part, .. } => n_part,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            Architecture::Rbf { dim, n_part } => n_part * (dim + 1),
            Architecture::Resnet { dim, width, depth, n_part } => {
                ResNetTrunk::param_count(dim, width, depth) + n_part * (width + 1)
            }
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Rbf { .. } => "rbf",
            Architecture::Resnet { .. } => "resnet",
        }
    }
}

/// A partition-of-unity network of either supported architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PartitionCheckpoint", try_from = "PartitionCheckpoint")]
pub enum PartitionNet {
    Rbf(RbfNet),
    ResNet(ResNetPou),
}

/// JSON form of a partition network: layout header plus flat parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionCheckpoint {
    pub architecture: Architecture,
    pub params: Vec<f64>,
}

impl From<PartitionNet> for PartitionCheckpoint {
    fn from(net: PartitionNet) -> Self {
        Self { architecture: net.architecture(), params: net.params().into_inner() }
    }
}

impl TryFrom<PartitionCheckpoint> for PartitionNet {
    type Error = Error;

    fn try_from(c: PartitionCheckpoint) -> Result<Self> {
        PartitionNet::from_params(c.architecture, &c.params)
    }
}

/// Output of a forward pass, retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct PartitionForward {
    phi: DenseMatrix,
    cache: ForwardCache,
}

#[derive(Debug, Clone)]
enum ForwardCache {
    Rbf { xs: DenseMatrix },
    ResNet(TrunkCache),
}

impl PartitionForward {
    /// `N_data × N_part` partition values.
    pub fn phi(&self) -> &DenseMatrix {
        &self.phi
    }

    pub fn into_phi(self) -> DenseMatrix {
        self.phi
    }
}

impl From<RbfNet> for PartitionNet {
    fn from(n: RbfNet) -> Self {
        PartitionNet::Rbf(n)
    }
}

impl From<ResNetPou> for PartitionNet {
    fn from(n: ResNetPou) -> Self {
        PartitionNet::ResNet(n)
    }
}

impl PartitionNet {
    /// Rebuilds a network from its layout descriptor and flat parameters.
    pub fn from_params(arch: Architecture, params: &[f64]) -> Result<Self> {
        if params.len() != arch.n_params() {
            return Err(dim_mismatch(format!("{} parameters for a layout of {}", params.len(), arch.n_params())));
        }
        let mut net = match arch {
            Architecture::Rbf { dim, n_part } => PartitionNet::Rbf(RbfNet::placeholder(dim, n_part)?),
            Architecture::Resnet { dim, width, depth, n_part } => {
                PartitionNet::ResNet(ResNetPou::placeholder(dim, width, depth, n_part)?)
            }
        };
        net.set_params(params)?;
        Ok(net)
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            PartitionNet::Rbf(n) => Architecture::Rbf { dim: n.dim(), n_part: n.n_part() },
            PartitionNet::ResNet(n) => Architecture::Resnet {
                dim: n.trunk().dim(),
                width: n.trunk().width(),
                depth: n.trunk().depth(),
                n_part: n.n_part(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.architecture().dim()
    }

    pub fn n_part(&self) -> usize {
        match self {
            PartitionNet::Rbf(n) => n.n_part(),
            PartitionNet::ResNet(n) => n.n_part(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.architecture().n_params()
    }

    pub fn params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.n_params());
        match self {
            PartitionNet::Rbf(n) => n.write_params(&mut out),
            PartitionNet::ResNet(n) => n.write_params(&mut out),
        }
        ParamVector(out)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(dim_mismatch(format!("{} parameters for a network with {}", params.len(), self.n_params())));
        }
        match self {
            PartitionNet::Rbf(n) => n.read_params(params),
            PartitionNet::ResNet(n) => n.read_params(params),
        }
        Ok(())
    }

    /// Forward pass over a batch of points (one per row).
    pub fn forward(&self, xs: &DenseMatrix) -> Result<PartitionForward> {
        if xs.cols() != self.dim() {
            return Err(dim_mismatch(format!("points of dimension {} for a {}-d partition", xs.cols(), self.dim())));
        }
        ensure_finite("partition parameters", &self.params())?;
        Ok(match self {
            PartitionNet::Rbf(n) => {
                PartitionForward { phi: n.forward(xs), cache: ForwardCache::Rbf { xs: xs.clone() } }
            }
            PartitionNet::ResNet(n) => {
                let (phi, cache) = n.forward(xs);
                PartitionForward { phi, cache: ForwardCache::ResNet(cache) }
            }
        })
    }

    /// Gradient of `Σ_{i,α} upstream[i,α]·φ_α(x_i)` with respect to the
    /// parameters, reusing a forward pass of this same network.
    pub fn backward(&self, fwd: &PartitionForward, upstream: &DenseMatrix) -> Result<ParamVector> {
        if upstream.shape() != fwd.phi.shape() {
            return Err(dim_mismatch(format!(
                "upstream {:?} does not match partition output {:?}",
                upstream.shape(),
                fwd.phi.shape()
            )));
        }
        let mut grad = vec![0.0; self.n_params()];
        match (self, &fwd.cache) {
            (PartitionNet::Rbf(n), ForwardCache::Rbf { xs }) => n.backward(xs, &fwd.phi, upstream, &mut grad),
            (PartitionNet::ResNet(n), ForwardCache::ResNet(cache)) => n.backward(cache, &fwd.phi, upstream, &mut grad),
            _ => return Err(Error::InvalidArgument("forward pass from a different architecture".into())),
        }
        Ok(ParamVector(grad))
    }
}

/// `N_data × N_part` matrix of partition values at `xs`.
pub fn eval_partitions(net: &PartitionNet, xs: &DenseMatrix) -> Result<DenseMatrix> {
    net.forward(xs).map(PartitionForward::into_phi)
}

/// Gradient of `Σ upstream ⊙ φ(xs)` with respect to the network parameters.
pub fn grad_partitions(net: &PartitionNet, xs: &DenseMatrix, upstream: &DenseMatrix) -> Result<ParamVector> {
    let fwd = net.forward(xs)?;
    net.backward(&fwd, upstream)
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &mut DenseMatrix) {
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Pulls `upstream` (gradient w.r.t. softmax outputs) back to the logits:
/// `g_α = φ_α (u_α − Σ_β u_β φ_β)`.
pub(crate) fn softmax_backward(phi: &DenseMatrix, upstream: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(phi.rows(), phi.cols());
    for i in 0..phi.rows() {
        let (p, u) = (phi.row(i), upstream.row(i));
        let s = crate::linalg::dot(p, u);
        for ((o, &pa), &ua) in out.row_mut(i).iter_mut().zip(p).zip(u) {
            *o = pa * (ua - s);
        }
    }
    out
}
