//! Vectorization operators and the 0/1 selector matrices.
//!
//! Half-vectorization stacks the upper triangle row by row:
//! `(1,1),(1,2),…,(1,d),(2,2),…,(d,d)`. The strict version drops the
//! diagonal: `(1,2),…,(1,d),(2,3),…,(d-1,d)`. Every other module inherits
//! this order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Problem dimensions: observation dimension `d`, `p = d(d+1)/2`,
/// `p_u = d(d-1)/2` and the number of groups `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Dims {
    pub d: usize,
    pub p: usize,
    pub p_u: usize,
    pub a: usize,
}

impl Dims {
    pub fn new(d: usize, a: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Dimension(format!("observation dimension must be at least 2, got {d}")));
        }
        if a < 1 {
            return Err(Error::Dimension("at least one group is required".into()));
        }
        Ok(Self { d, p: d * (d + 1) / 2, p_u: d * (d - 1) / 2, a })
    }

    /// Same `d`, different number of groups.
    pub fn with_groups(self, a: usize) -> Result<Self> {
        Self::new(self.d, a)
    }
}

/// 0-based position of entry `(j, k)`, `j <= k`, inside `vech`.
#[inline]
pub fn vech_index(d: usize, j: usize, k: usize) -> usize {
    debug_assert!(j <= k && k < d);
    j * d - j * j.saturating_sub(1) / 2 + (k - j)
}

/// 0-based position of entry `(j, k)`, `j < k`, inside `vech_minus`.
#[inline]
pub fn vech_minus_index(d: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < d);
    j * (d - 1) - j * j.saturating_sub(1) / 2 + (k - j - 1)
}

/// Off-diagonal pairs `(j, k)`, `j < k`, in `vech_minus` order.
pub fn off_diagonal_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|j| (j + 1..d).map(move |k| (j, k))).collect()
}

fn require_square(x: &DMatrix<f64>) -> Result<usize> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", x.nrows(), x.ncols())));
    }
    if x.nrows() < 2 {
        return Err(Error::Dimension(format!("matrix dimension must be at least 2, got {}", x.nrows())));
    }
    Ok(x.nrows())
}

/// Half-vectorization (upper triangle with diagonal, row by row).
pub fn vech(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = require_square(x)?;
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for k in j..d {
            out.push(x[(j, k)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Upper-half-vectorization (strict upper triangle, row by row).
pub fn vech_minus(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = require_square(x)?;
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for j in 0..d {
        for k in j + 1..d {
            out.push(x[(j, k)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Inverse of [`vech`] for symmetric matrices.
pub fn unvech(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * (d + 1) / 2 {
        return Err(Error::Dimension(format!("vech of a {d}x{d} matrix has length {}, got {}", d * (d + 1) / 2, v.len())));
    }
    let mut x = DMatrix::zeros(d, d);
    let mut pos = 0;
    for j in 0..d {
        for k in j..d {
            x[(j, k)] = v[pos];
            x[(k, j)] = v[pos];
            pos += 1;
        }
    }
    Ok(x)
}

/// Positions of the diagonal (`diag`) and off-diagonal (`off_diag`) entries
/// inside `vech`, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexVectors {
    pub diag: Vec<usize>,
    pub off_diag: Vec<usize>,
}

pub fn index_vectors(d: usize) -> Result<IndexVectors> {
    if d < 2 {
        return Err(Error::Dimension(format!("observation dimension must be at least 2, got {d}")));
    }
    let p = d * (d + 1) / 2;
    // a_k = 1 + sum_{j=1}^{k-1} (d + 1 - j)
    let diag: Vec<usize> = (1..=d).map(|k| 1 + (1..k).map(|j| d + 1 - j).sum::<usize>()).collect();
    let off_diag = (1..=p).filter(|i| !diag.contains(i)).collect();
    Ok(IndexVectors { diag, off_diag })
}

/// The structural selector matrices.
///
/// * `l`: upper-half elimination, `l * vech(X) = vech_minus(X)`
/// * `m1`: sums the two diagonal positions belonging to each off-diagonal entry
/// * `m2`, `m3`: pick the row / column diagonal position for every `vech` entry
/// * `m4 = m2 + m3`, `m5 = diag(vech(I_d))`
/// * `m6`: extracts the diagonal, `m6 * vech(X) = diag(X)`; `a_sel` is the same matrix
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrices {
    pub d: usize,
    pub l: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m3: DMatrix<f64>,
    pub m4: DMatrix<f64>,
    pub m5: DMatrix<f64>,
    pub m6: DMatrix<f64>,
    pub a_sel: DMatrix<f64>,
}

pub fn structural(d: usize) -> Result<StructuralMatrices> {
    let idx = index_vectors(d)?;
    let p = d * (d + 1) / 2;
    let p_u = d * (d - 1) / 2;

    // H = 1_d a^T, so H[j,k] = a_k
    let a_row = DMatrix::from_fn(1, d, |_, k| idx.diag[k] as f64);
    let h = DMatrix::from_element(d, 1, 1.0) * a_row;
    let ht = h.transpose();
    let h1 = vech_minus(&h)?;
    let h2 = vech_minus(&ht)?;
    let h3 = vech(&h)?;
    let h4 = vech(&ht)?;

    let mut l = DMatrix::zeros(p_u, p);
    let mut m1 = DMatrix::zeros(p_u, p);
    for ell in 0..p_u {
        l[(ell, idx.off_diag[ell] - 1)] += 1.0;
        m1[(ell, h1[ell] as usize - 1)] += 1.0;
        m1[(ell, h2[ell] as usize - 1)] += 1.0;
    }
    let mut m2 = DMatrix::zeros(p, p);
    let mut m3 = DMatrix::zeros(p, p);
    for ell in 0..p {
        m2[(ell, h4[ell] as usize - 1)] = 1.0;
        m3[(ell, h3[ell] as usize - 1)] = 1.0;
    }
    let m4 = &m2 + &m3;
    let m5 = DMatrix::from_diagonal(&vech(&DMatrix::identity(d, d))?);
    let mut m6 = DMatrix::zeros(d, p);
    for (ell, &a) in idx.diag.iter().enumerate() {
        m6[(ell, a - 1)] = 1.0;
    }
    let a_sel = m6.clone();
    Ok(StructuralMatrices { d, l, m1, m2, m3, m4, m5, m6, a_sel })
}

/// Block-diagonal arrangement of square blocks.
pub fn direct_sum(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return Err(Error::Argument("direct sum of an empty list".into()));
    }
    for b in blocks {
        if b.nrows() != b.ncols() {
            return Err(Error::Dimension(format!("direct-sum block is {}x{}, expected square", b.nrows(), b.ncols())));
        }
    }
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    Ok(out)
}

/// Centering projector `I_k - (1/k) 1 1^T`.
pub fn centering_projector(k: usize) -> Result<DMatrix<f64>> {
    if k < 1 {
        return Err(Error::Argument("centering projector needs k >= 1".into()));
    }
    let kf = k as f64;
    Ok(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 - 1.0 / kf } else { -1.0 / kf }))
}
