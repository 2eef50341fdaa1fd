//! Truncated Taylor (monomial) bases of total degree at most `m` in `d`
//! variables, ordered graded-lexicographically.

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::DenseMatrix;

/// Number of monomials of total degree ≤ `max_degree` in `dim` variables,
/// i.e. `binomial(max_degree + dim, dim)`.
pub fn basis_dim(dim: usize, max_degree: usize) -> usize {
    let k = dim.min(max_degree) as u128;
    let n = (dim + max_degree) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc as usize
}

/// Exponent tuples of total degree ≤ `max_degree`, grouped by degree and in
/// descending lexicographic order within a degree (`x1² , x1·x2, x2²`).
pub fn graded_lex_exponents(dim: usize, max_degree: usize) -> Vec<Vec<u32>> {
    fn fill(deg: u32, slots: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(deg);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=deg).rev() {
            prefix.push(first);
            fill(deg - first, slots - 1, prefix, out);
            prefix.pop();
        }
    }

    let mut out = Vec::with_capacity(basis_dim(dim, max_degree));
    let mut prefix = Vec::with_capacity(dim);
    for deg in 0..=max_degree as u32 {
        fill(deg, dim, &mut prefix, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BasisDescriptor", try_from = "BasisDescriptor")]
pub struct MonomialBasis {
    dim: usize,
    max_degree: usize,
    exponents: Vec<Vec<u32>>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

/// Serialized form; the exponent list is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDescriptor {
    pub dim: usize,
    pub max_degree: usize,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl From<MonomialBasis> for BasisDescriptor {
    fn from(b: MonomialBasis) -> Self {
        Self { dim: b.dim, max_degree: b.max_degree, center: b.center, scale: b.scale }
    }
}

impl TryFrom<BasisDescriptor> for MonomialBasis {
    type Error = Error;

    fn try_from(d: BasisDescriptor) -> Result<Self> {
        MonomialBasis::with_affine(d.max_degree, d.center, d.scale)
    }
}

impl MonomialBasis {
    /// Raw monomials `x^k` (center 0, unit scale).
    pub fn raw(dim: usize, max_degree: usize) -> Result<Self> {
        Self::with_affine(max_degree, vec![0.0; dim], vec![1.0; dim])
    }

    /// Monomials in `(x − midpoint) / half_width`, which keeps the basis well
    /// scaled on the domain without changing its span.
    pub fn for_domain(domain: &Domain, max_degree: usize) -> Self {
        Self::with_affine(max_degree, domain.midpoint(), domain.half_widths())
            .expect("domain midpoint and half-widths are valid")
    }

    pub fn with_affine(max_degree: usize, center: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let dim = center.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("basis dimension must be at least 1".into()));
        }
        if scale.len() != dim {
            return Err(dim_mismatch(format!("basis center has {dim} entries, scale {}", scale.len())));
        }
        if center.iter().any(|c| !c.is_finite()) || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("basis center must be finite and scales positive".into()));
        }
        Ok(Self { dim, max_degree, exponents: graded_lex_exponents(dim, max_degree), center, scale })
    }

    pub fn dim_input(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(dim_mismatch(format!("point of dimension {} for a {}-d basis", x.len(), self.dim)));
        }
        let mut out = vec![0.0; self.len()];
        let mut powers = vec![0.0; self.dim * (self.max_degree + 1)];
        self.eval_into(x, &mut powers, &mut out);
        Ok(out)
    }

    /// Evaluates the basis at every row of `xs`, giving an `N × len()` matrix.
    pub fn eval_batch(&self, xs: &DenseMatrix) -> Result<DenseMatrix> {
        if xs.cols() != self.dim {
            return Err(dim_mismatch(format!("points of dimension {} for a {}-d basis", xs.cols(), self.dim)));
        }
        let mut out = DenseMatrix::zeros(xs.rows(), self.len());
        let mut powers = vec![0.0; self.dim * (self.max_degree + 1)];
        for i in 0..xs.rows() {
            self.eval_into(xs.row(i), &mut powers, out.row_mut(i));
        }
        Ok(out)
    }

    fn eval_into(&self, x: &[f64], powers: &mut [f64], out: &mut [f64]) {
        let stride = self.max_degree + 1;
        for j in 0..self.dim {
            let t = (x[j] - self.center[j]) / self.scale[j];
            let row = &mut powers[j * stride..(j + 1) * stride];
            row[0] = 1.0;
            for p in 1..stride {
                row[p] = row[p - 1] * t;
            }
        }
        for (o, k) in out.iter_mut().zip(&self.exponents) {
            *o = k.iter().enumerate().map(|(j, &e)| powers[j * stride + e as usize]).product();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimension_counts() {
        assert_eq!(basis_dim(1, 2), 3);
        assert_eq!(basis_dim(2, 0), 1);
        assert_eq!(basis_dim(2, 4), 15);
        assert_eq!(basis_dim(3, 3), 20);
        for d in 1..5 {
            for m in 0..6 {
                assert_eq!(graded_lex_exponents(d, m).len(), basis_dim(d, m));
            }
        }
    }

    #[test]
    fn ordering_is_graded_lex() {
        let e = graded_lex_exponents(2, 2);
        assert_eq!(e, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        let e3 = graded_lex_exponents(3, 4);
        assert!(e3[0].iter().all(|&k| k == 0));
        for w in e3.windows(2) {
            let (da, db): (u32, u32) = (w[0].iter().sum(), w[1].iter().sum());
            assert!(da < db || (da == db && w[0] > w[1]));
        }
    }

    #[test]
    fn evaluation_examples() {
        let b = MonomialBasis::raw(1, 2).unwrap();
        assert_eq!(b.eval(&[2.0]).unwrap(), vec![1.0, 2.0, 4.0]);
        let b = MonomialBasis::raw(2, 1).unwrap();
        assert_eq!(b.eval(&[3.0, 5.0]).unwrap(), vec![1.0, 3.0, 5.0]);
        let b = MonomialBasis::with_affine(3, vec![0.3, -1.0], vec![2.0, 0.5]).unwrap();
        let v = b.eval(&[0.3, -1.0]).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        assert!(b.eval(&[1.0]).is_err());
    }

    #[test]
    fn domain_scaling_maps_to_unit_box() {
        let dom = Domain::cube(2, -1.0, 3.0).unwrap();
        let b = MonomialBasis::for_domain(&dom, 1);
        assert_eq!(b.eval(&[3.0, -1.0]).unwrap(), vec![1.0, 1.0, -1.0]);
    }

    #[test]
    fn descriptor_round_trip() {
        let b = MonomialBasis::with_affine(2, vec![0.5], vec![0.5]).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: MonomialBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(b, back);
    }

    /// Independent oracle: walks every multi-index in `[0, m]^d` and keeps
    /// those of bounded total degree, in the same grading.
    fn brute_force_eval(d: usize, m: usize, center: &[f64], scale: &[f64], x: &[f64]) -> Vec<f64> {
        let mut all: Vec<Vec<u32>> = Vec::new();
        let total = (m + 1).pow(d as u32);
        for mut idx in 0..total {
            let mut k = vec![0u32; d];
            for kj in k.iter_mut() {
                *kj = (idx % (m + 1)) as u32;
                idx /= m + 1;
            }
            if k.iter().sum::<u32>() as usize <= m {
                all.push(k);
            }
        }
        all.sort_by(|a, b| {
            let (sa, sb): (u32, u32) = (a.iter().sum(), b.iter().sum());
            sa.cmp(&sb).then_with(|| b.cmp(a))
        });
        all.iter()
            .map(|k| k.iter().enumerate().map(|(j, &e)| ((x[j] - center[j]) / scale[j]).powi(e as i32)).product())
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            d in 1usize..=4,
            m in 0usize..=4,
            seed in proptest::collection::vec(-2.0..2.0f64, 12),
        ) {
            let center = seed[0..d].to_vec();
            let scale: Vec<f64> = seed[4..4 + d].iter().map(|s| 0.5 + s.abs()).collect();
            let x = seed[8..8 + d].to_vec();
            let basis = MonomialBasis::with_affine(m, center.clone(), scale.clone()).unwrap();
            let fast = basis.eval(&x).unwrap();
            let slow = brute_force_eval(d, m, &center, &scale, &x);
            prop_assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            prop_assert_eq!(fast[0], 1.0);
        }
    }
}
