//! Linear hypotheses `C r = ζ` on the pooled correlation vector.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::matops::{self, centering_projector, Dims};

/// Hypothesis matrix and target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSpec {
    pub c: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub label: String,
    pub dims: Dims,
}

impl HypothesisSpec {
    /// Number of rows of `C`.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> usize {
        self.dims.a
    }

    /// Numerical rank of `C` (SVD, tolerance `1e-10 σ_max`).
    pub fn rank(&self) -> usize {
        linalg::rank(&self.c, 1e-10)
    }

    /// `C r - ζ`.
    pub fn residual(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        if r.len() != self.c.ncols() {
            return Err(Error::Dimension(format!(
                "correlation vector has length {}, hypothesis expects {}",
                r.len(),
                self.c.ncols()
            )));
        }
        Ok(&self.c * r - &self.zeta)
    }

    /// Columns of `C` acting on group `i`.
    pub fn group_block(&self, i: usize) -> DMatrix<f64> {
        let pu = self.dims.p_u;
        self.c.columns(i * pu, pu).into_owned()
    }
}

/// Named hypothesis families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisFamily {
    EqualCorrelationMatrices,
    Identity,
    Given,
    EqualCorrelations,
    Custom,
}

impl HypothesisFamily {
    pub const ALL: [HypothesisFamily; 5] = [
        Self::EqualCorrelationMatrices,
        Self::Identity,
        Self::Given,
        Self::EqualCorrelations,
        Self::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EqualCorrelationMatrices => "equal-corr-matrices",
            Self::Identity => "identity-corr",
            Self::Given => "given-corr",
            Self::EqualCorrelations => "equal-correlations",
            Self::Custom => "custom",
        }
    }

    /// Whether the family needs a matrix from the user.
    pub fn needs_input(self) -> bool {
        matches!(self, Self::Given | Self::Custom)
    }
}

impl fmt::Display for HypothesisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HypothesisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|h| h.name()).collect();
                Error::Argument(format!("unknown hypothesis '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Homogeneity of the correlation matrices of `a ≥ 2` groups: `C = P_a ⊗ I_{p_u}`.
pub fn equal_correlation_matrices(a: usize, d: usize) -> Result<HypothesisSpec> {
    if a < 2 {
        return Err(Error::Argument(format!("equal correlation matrices needs at least 2 groups, got {a}")));
    }
    let dims = Dims::new(d, a)?;
    let c = centering_projector(a)?.kronecker(&DMatrix::identity(dims.p_u, dims.p_u));
    Ok(HypothesisSpec { zeta: DVector::zeros(c.nrows()), c, label: "equal-corr-matrices".into(), dims })
}

/// Diagonal correlation matrix of one group: `C = I`, `ζ = 0`.
pub fn identity_correlation(d: usize) -> Result<HypothesisSpec> {
    let dims = Dims::new(d, 1)?;
    Ok(HypothesisSpec {
        c: DMatrix::identity(dims.p_u, dims.p_u),
        zeta: DVector::zeros(dims.p_u),
        label: "identity-corr".into(),
        dims,
    })
}

/// Correlation matrix equal to a given `R`: `C = I`, `ζ = vech⁻(R)`.
pub fn given_correlation(r: &DMatrix<f64>) -> Result<HypothesisSpec> {
    let d = r.nrows();
    if r.ncols() != d {
        return Err(Error::Argument(format!("target correlation must be square, got {}x{}", d, r.ncols())));
    }
    let dims = Dims::new(d, 1)?;
    for j in 0..d {
        if (r[(j, j)] - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("target correlation has diagonal entry {} at {}", r[(j, j)], j + 1)));
        }
        for k in 0..d {
            let v = r[(j, k)];
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::Argument(format!("target correlation entry ({}, {}) = {v} outside [-1, 1]", j + 1, k + 1)));
            }
            if (v - r[(k, j)]).abs() > 1e-12 {
                return Err(Error::Argument("target correlation is not symmetric".into()));
            }
        }
    }
    Ok(HypothesisSpec {
        c: DMatrix::identity(dims.p_u, dims.p_u),
        zeta: matops::vech_minus(r)?,
        label: "given-corr".into(),
        dims,
    })
}

/// All correlations of one group equal: `C = P_{p_u}`.
pub fn equal_correlations(d: usize) -> Result<HypothesisSpec> {
    let dims = Dims::new(d, 1)?;
    if dims.p_u < 2 {
        return Err(Error::Argument(format!("equal correlations needs at least 2 correlations, d = {d} has {}", dims.p_u)));
    }
    Ok(HypothesisSpec {
        c: centering_projector(dims.p_u)?,
        zeta: DVector::zeros(dims.p_u),
        label: "equal-correlations".into(),
        dims,
    })
}

/// User supplied `C` and `ζ`. Only shapes are checked; `C` need not be a projection.
pub fn custom(c: DMatrix<f64>, zeta: DVector<f64>, a: usize, d: usize) -> Result<HypothesisSpec> {
    let dims = Dims::new(d, a)?;
    let cols = a * dims.p_u;
    if c.nrows() == 0 {
        return Err(Error::Argument("hypothesis matrix has no rows".into()));
    }
    if c.ncols() != cols {
        return Err(Error::Argument(format!(
            "hypothesis matrix has {} columns, expected a*p_u = {cols}",
            c.ncols()
        )));
    }
    if zeta.len() != c.nrows() {
        return Err(Error::Argument(format!("zeta has length {}, expected {}", zeta.len(), c.nrows())));
    }
    if c.iter().chain(zeta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Argument("hypothesis contains non-finite values".into()));
    }
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::Argument("hypothesis matrix is identically zero".into()));
    }
    Ok(HypothesisSpec { c, zeta, label: "custom".into(), dims })
}

/// Splits an `m × (a p_u + 1)` block `[C | ζ]` into a custom hypothesis.
pub fn custom_from_block(block: &DMatrix<f64>, a: usize, d: usize) -> Result<HypothesisSpec> {
    if block.ncols() < 2 {
        return Err(Error::Argument("hypothesis block needs at least two columns".into()));
    }
    let k = block.ncols() - 1;
    custom(block.columns(0, k).into_owned(), block.column(k).into_owned(), a, d)
}
