use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::linalg::{gemm, DenseMatrix};

/// ReLU residual trunk `R^d → R^w`:
/// `h₀ = σ(W_in x + b_in)`, then `h ← h + σ(W_k h + b_k)` for each block.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetTrunk {
    dim: usize,
    width: usize,
    w_in: Vec<f64>,
    b_in: Vec<f64>,
    w_blocks: Vec<Vec<f64>>,
    b_blocks: Vec<Vec<f64>>,
}

/// Activations kept from a trunk forward pass.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    n: usize,
    xs: DenseMatrix,
    /// Pre-activations: input layer first, then one per block.
    pre: Vec<Vec<f64>>,
    /// `hidden[k]` is the input to block `k`; the last entry is the output.
    hidden: Vec<Vec<f64>>,
}

impl TrunkCache {
    /// `N × width` trunk output, row-major.
    pub fn output(&self) -> &[f64] {
        self.hidden.last().expect("trunk has an input layer")
    }

    pub fn n_points(&self) -> usize {
        self.n
    }
}

impl ResNetTrunk {
    pub fn zeros(dim: usize, width: usize, depth: usize) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "ResNet needs positive input dimension and width (got {dim}, {width})"
            )));
        }
        Ok(Self {
            dim,
            width,
            w_in: vec![0.0; width * dim],
            b_in: vec![0.0; width],
            w_blocks: vec![vec![0.0; width * width]; depth],
            b_blocks: vec![vec![0.0; width]; depth],
        })
    }

    pub fn param_count(dim: usize, width: usize, depth: usize) -> usize {
        width * (dim + 1) + depth * width * (width + 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.w_blocks.len()
    }

    pub fn n_params(&self) -> usize {
        Self::param_count(self.dim, self.width, self.depth())
    }

    /// Input-layer weights (`width × dim`, row-major) and biases.
    pub fn input_layer(&self) -> (&[f64], &[f64]) {
        (&self.w_in, &self.b_in)
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w_in);
        out.extend_from_slice(&self.b_in);
        for (w, b) in self.w_blocks.iter().zip(&self.b_blocks) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Reads the trunk's slice of `p`, returning how many entries were used.
    pub fn read_params(&mut self, p: &[f64]) -> usize {
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p[at..at + dst.len()]);
            at += dst.len();
        };
        take(&mut self.w_in);
        take(&mut self.b_in);
        for (w, b) in self.w_blocks.iter_mut().zip(self.b_blocks.iter_mut()) {
            take(w);
            take(b);
        }
        at
    }

    pub fn forward(&self, xs: &DenseMatrix) -> TrunkCache {
        let (n, w) = (xs.rows(), self.width);
        let mut pre = Vec::with_capacity(self.depth() + 1);
        let mut hidden = Vec::with_capacity(self.depth() + 1);

        let z0 = affine(n, self.dim, w, xs.as_slice(), &self.w_in, &self.b_in);
        hidden.push(z0.iter().map(|&z| z.max(0.0)).collect::<Vec<_>>());
        pre.push(z0);

        for (wk, bk) in self.w_blocks.iter().zip(&self.b_blocks) {
            let h = hidden.last().expect("nonempty");
            let z = affine(n, w, w, h, wk, bk);
            let next: Vec<f64> = h.iter().zip(&z).map(|(&hv, &zv)| hv + zv.max(0.0)).collect();
            pre.push(z);
            hidden.push(next);
        }
        TrunkCache { n, xs: xs.clone(), pre, hidden }
    }

    /// Backpropagates `d_out = ∂L/∂(trunk output)` (`N × width`), writing the
    /// parameter gradient into `grad` in layout order.
    pub fn backward(&self, cache: &TrunkCache, mut d_out: Vec<f64>, grad: &mut [f64]) {
        let (n, w, d) = (cache.n, self.width, self.dim);
        debug_assert_eq!(grad.len(), self.n_params());
        let in_len = w * d + w;
        let (g_in, g_blocks) = grad.split_at_mut(in_len);
        let block_len = w * w + w;

        let mut dz = vec![0.0; n * w];
        for k in (0..self.depth()).rev() {
            relu_mask(&d_out, &cache.pre[k + 1], &mut dz);
            let g = &mut g_blocks[k * block_len..(k + 1) * block_len];
            let (gw, gb) = g.split_at_mut(w * w);
            // dW = dZᵀ H_k, db = Σ_rows dZ, dH_k = dH_{k+1} + dZ W_k.
            gemm(w, n, w, 1.0, (&dz, true), (&cache.hidden[k], false), 1.0, gw);
            col_sums_into(&dz, w, gb);
            gemm(n, w, w, 1.0, (&dz, false), (&self.w_blocks[k], false), 1.0, &mut d_out);
        }

        relu_mask(&d_out, &cache.pre[0], &mut dz);
        let (gw, gb) = g_in.split_at_mut(w * d);
        gemm(w, n, d, 1.0, (&dz, true), (cache.xs.as_slice(), false), 1.0, gw);
        col_sums_into(&dz, w, gb);
    }
}

/// `X Wᵀ + b` for `X: n×k`, `W: m×k`.
pub(crate) fn affine(n: usize, k: usize, m: usize, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    gemm(n, k, m, 1.0, (x, false), (w, true), 1.0, &mut out);
    out
}

fn relu_mask(g: &[f64], z: &[f64], out: &mut [f64]) {
    for ((o, &gv), &zv) in out.iter_mut().zip(g).zip(z) {
        *o = if zv > 0.0 { gv } else { 0.0 };
    }
}

pub(crate) fn col_sums_into(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Residual trunk followed by an affine head `R^w → R^{N_part}` and a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetPou {
    trunk: ResNetTrunk,
    n_part: usize,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

impl ResNetPou {
    pub fn new(trunk: ResNetTrunk, n_part: usize) -> Result<Self> {
        if n_part == 0 {
            return Err(Error::InvalidArgument("N_part must be at least 1".into()));
        }
        let w = trunk.width();
        Ok(Self { trunk, n_part, w_out: vec![0.0; n_part * w], b_out: vec![0.0; n_part] })
    }

    pub(super) fn placeholder(dim: usize, width: usize, depth: usize, n_part: usize) -> Result<Self> {
        Self::new(ResNetTrunk::zeros(dim, width, depth)?, n_part)
    }

    pub fn trunk(&self) -> &ResNetTrunk {
        &self.trunk
    }

    pub fn n_part(&self) -> usize {
        self.n_part
    }

    pub(super) fn write_params(&self, out: &mut Vec<f64>) {
        self.trunk.write_params(out);
        out.extend_from_slice(&self.w_out);
        out.extend_from_slice(&self.b_out);
    }

    pub(super) fn read_params(&mut self, p: &[f64]) {
        let at = self.trunk.read_params(p);
        let nw = self.w_out.len();
        self.w_out.copy_from_slice(&p[at..at + nw]);
        self.b_out.copy_from_slice(&p[at + nw..at + nw + self.n_part]);
    }

    pub(super) fn forward(&self, xs: &DenseMatrix) -> (DenseMatrix, TrunkCache) {
        let cache = self.trunk.forward(xs);
        let logits = affine(xs.rows(), self.trunk.width(), self.n_part, cache.output(), &self.w_out, &self.b_out);
        let mut phi = DenseMatrix::from_raw(xs.rows(), self.n_part, logits);
        super::softmax_rows(&mut phi);
        (phi, cache)
    }

    pub(super) fn backward(&self, cache: &TrunkCache, phi: &DenseMatrix, upstream: &DenseMatrix, grad: &mut [f64]) {
        let (n, w, np) = (cache.n, self.trunk.width(), self.n_part);
        let g_logits = super::softmax_backward(phi, upstream);
        let (g_trunk, g_head) = grad.split_at_mut(self.trunk.n_params());
        let (gw, gb) = g_head.split_at_mut(np * w);
        gemm(np, n, w, 1.0, (g_logits.as_slice(), true), (cache.output(), false), 1.0, gw);
        col_sums_into(g_logits.as_slice(), np, gb);
        let mut d_h = vec![0.0; n * w];
        gemm(n, np, w, 1.0, (g_logits.as_slice(), false), (&self.w_out, false), 0.0, &mut d_h);
        self.trunk.backward(cache, d_h, g_trunk);
    }
}

/// Box-style trunk initialization.
///
/// Every input-layer neuron gets a unit-norm normal `n` and passes through a
/// uniform point `p` of the domain (`b = −n·p`), so its ReLU kink cuts the
/// data box. Residual blocks draw weights from `N(0, 1/width)` with zero
/// bias.
pub fn init_trunk_box<R: Rng + ?Sized>(
    width: usize,
    depth: usize,
    domain: &Domain,
    rng: &mut R,
) -> Result<ResNetTrunk> {
    if width == 0 || depth == 0 {
        return Err(Error::InvalidArgument(format!("width and depth must be at least 1 (got {width}, {depth})")));
    }
    let d = domain.dim();
    let mut trunk = ResNetTrunk::zeros(d, width, depth)?;
    for i in 0..width {
        let normal = random_unit_vector(d, rng);
        let p = domain.sample(rng);
        trunk.w_in[i * d..(i + 1) * d].copy_from_slice(&normal);
        trunk.b_in[i] = -crate::linalg::dot(&normal, &p);
    }
    let std = (1.0 / width as f64).sqrt();
    for w in trunk.w_blocks.iter_mut() {
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = std * z;
        }
    }
    Ok(trunk)
}

fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = crate::linalg::norm2(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Box-initialized trunk with a zero output head, so the initial partition
/// is uniform.
pub fn init_resnet_box<R: Rng + ?Sized>(
    width: usize,
    depth: usize,
    n_part: usize,
    domain: &Domain,
    rng: &mut R,
) -> Result<ResNetPou> {
    ResNetPou::new(init_trunk_box(width, depth, domain, rng)?, n_part)
}
