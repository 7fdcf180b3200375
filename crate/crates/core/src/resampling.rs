//! Resampling critical values: parametric bootstrap, wild bootstrap and the
//! second-order Taylor Monte-Carlo.
//!
//! All engines keep per-chunk scratch buffers and work on flat row-major
//! slices inside the replicate loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{MomentSet, PooledMoments};
use crate::hypotheses::HypothesisSpec;
use crate::linalg::{psd_sqrt, symmetrize, PSD_CLIP_TOL};
use crate::matops::{self, off_diagonal_pairs, vech_index, StructuralMatrices};
use crate::quadform::{
    ats_statistic, check_alpha, check_compatible, projected_covariance, Engine, Method, ReferenceDistribution,
    TestReport,
};
use crate::rng::{self, Rng};

/// Smallest accepted number of resampling replicates.
pub const MIN_REPS: usize = 100;

/// Multiplier law of the wild bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WildWeight {
    #[default]
    Rademacher,
    Gaussian,
}

impl WildWeight {
    #[inline]
    pub fn draw(self, r: &mut Rng) -> f64 {
        match self {
            WildWeight::Rademacher => {
                if r.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            WildWeight::Gaussian => StandardNormal.sample(r),
        }
    }
}

impl fmt::Display for WildWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WildWeight::Rademacher => "rademacher",
            WildWeight::Gaussian => "gaussian",
        })
    }
}

impl FromStr for WildWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(WildWeight::Rademacher),
            "gaussian" => Ok(WildWeight::Gaussian),
            _ => Err(Error::Argument(format!("unknown wild weight '{s}' (expected rademacher or gaussian)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResamplingConfig {
    /// Number of replicates.
    pub reps: usize,
    pub seed: u64,
    pub wild_weight: WildWeight,
    /// Include the quadratic correction in the Taylor engine.
    pub taylor_quadratic: bool,
}

impl ResamplingConfig {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self { reps, seed, wild_weight: WildWeight::Rademacher, taylor_quadratic: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(Error::Config(format!("need at least {MIN_REPS} replicates, got {}", self.reps)));
        }
        Ok(())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[inline]
fn gemv_acc(a: &[f64], cols: usize, x: &[f64], scale: f64, out: &mut [f64]) {
    for (row, o) in a.chunks_exact(cols).zip(out.iter_mut()) {
        let mut s = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            s += aij * xj;
        }
        *o += scale * s;
    }
}

#[inline]
fn fill_normal(r: &mut Rng, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = StandardNormal.sample(r);
    }
}

fn prepare(pm: &PooledMoments, h: &HypothesisSpec, alpha: f64, cfg: &ResamplingConfig) -> Result<f64> {
    check_alpha(alpha)?;
    cfg.validate()?;
    check_compatible(pm, h)?;
    // validates the trace of the data statistic up front
    ats_statistic(pm, h, false)
}

fn finish(statistic: f64, draws: Vec<f64>, alpha: f64, method: Method, seed: u64) -> Result<TestReport> {
    let reference = ReferenceDistribution::new(draws)?;
    Ok(TestReport::new(statistic, &reference, alpha, method, seed))
}

fn quotient(n_total: f64, cy: &[f64], trace: f64) -> f64 {
    if trace > 0.0 {
        n_total * cy.iter().map(|v| v * v).sum::<f64>() / trace
    } else {
        0.0
    }
}

struct ParGroup {
    n: usize,
    weight: f64,
    /// `C_i Υ̂_i^{1/2}`, row-major `m × p_u`.
    b: Vec<f64>,
    /// Packed upper triangle of `Υ̂_i^{1/2} C_iᵀ C_i Υ̂_i^{1/2}` with doubled off-diagonals.
    k_packed: Vec<f64>,
}

/// Parametric bootstrap: draws `Y†_ik ~ N(0, Υ̂_i)` and recomputes the ATS with
/// the bootstrap covariance in the normalizer.
///
/// Writing `Y† = Υ̂_i^{1/2} z` the replicate only needs the mean and the
/// empirical covariance of the standard normal `z`, which is what the loop
/// accumulates.
pub fn parametric_bootstrap_test(
    pm: &PooledMoments,
    h: &HypothesisSpec,
    method: Method,
    alpha: f64,
    cfg: &ResamplingConfig,
) -> Result<TestReport> {
    prepare(pm, h, alpha, cfg)?;
    let statistic = ats_statistic(pm, h, method.small_sample)?;
    let pu = pm.dims.p_u;
    let m = h.m();
    let groups = pm
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let root = psd_sqrt(&g.upsilon_hat, PSD_CLIP_TOL)?;
            let b = h.group_block(i) * &root;
            let k = symmetrize(&(b.transpose() * &b));
            let mut k_packed = Vec::with_capacity(pu * (pu + 1) / 2);
            for j in 0..pu {
                k_packed.push(k[(j, j)]);
                for l in j + 1..pu {
                    k_packed.push(2.0 * k[(j, l)]);
                }
            }
            Ok(ParGroup { n: g.n, weight: pm.weight(i), b: row_major(&b), k_packed })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_total = pm.n_total as f64;

    struct Scratch {
        z: Vec<f64>,
        sum: Vec<f64>,
        outer: Vec<f64>,
        cy: Vec<f64>,
    }
    let draws = rng::chunked_map(
        cfg.seed,
        cfg.reps,
        || Scratch { z: vec![0.0; pu], sum: vec![0.0; pu], outer: vec![0.0; pu * (pu + 1) / 2], cy: vec![0.0; m] },
        |r, s| {
            s.cy.fill(0.0);
            let mut trace = 0.0;
            for g in &groups {
                s.sum.fill(0.0);
                s.outer.fill(0.0);
                for _ in 0..g.n {
                    fill_normal(r, &mut s.z);
                    let mut pos = 0;
                    for j in 0..pu {
                        let zj = s.z[j];
                        s.sum[j] += zj;
                        for l in j..pu {
                            s.outer[pos] += zj * s.z[l];
                            pos += 1;
                        }
                    }
                }
                let n = g.n as f64;
                for v in s.sum.iter_mut() {
                    *v /= n;
                }
                let mut tr = 0.0;
                let mut pos = 0;
                for j in 0..pu {
                    for l in j..pu {
                        let cov = (s.outer[pos] - n * s.sum[j] * s.sum[l]) / (n - 1.0);
                        tr += g.k_packed[pos] * cov;
                        pos += 1;
                    }
                }
                trace += g.weight * tr;
                gemv_acc(&g.b, pu, &s.sum, 1.0, &mut s.cy);
            }
            quotient(n_total, &s.cy, trace)
        },
    );
    finish(statistic, draws, alpha, method, cfg.seed)
}

struct WildGroup {
    n: usize,
    weight: f64,
    /// `C_i M̂_i c_k` for every centered product `c_k`, row-major `n × m`.
    e: Vec<f64>,
    /// Squared norms of the rows of `e`.
    g: Vec<f64>,
}

/// Wild bootstrap on the centered product vectors, `Y*_ik = W_ik M̂_i c_ik`.
pub fn wild_bootstrap_test(
    pm: &PooledMoments,
    h: &HypothesisSpec,
    method: Method,
    alpha: f64,
    cfg: &ResamplingConfig,
) -> Result<TestReport> {
    prepare(pm, h, alpha, cfg)?;
    let statistic = ats_statistic(pm, h, method.small_sample)?;
    let m = h.m();
    let groups: Vec<WildGroup> = pm
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let e = &g.centered_products * (h.group_block(i) * &g.m_hat).transpose();
            let norms = e.row_iter().map(|row| row.norm_squared()).collect();
            WildGroup { n: g.n, weight: pm.weight(i), e: row_major(&e), g: norms }
        })
        .collect();
    let n_total = pm.n_total as f64;
    let weight_law = cfg.wild_weight;

    let draws = rng::chunked_map(
        cfg.seed,
        cfg.reps,
        || (vec![0.0; m], vec![0.0; m]),
        |r, (cy, cyi)| {
            cy.fill(0.0);
            let mut trace = 0.0;
            for g in &groups {
                cyi.fill(0.0);
                let mut s2 = 0.0;
                for (row, gk) in g.e.chunks_exact(m).zip(&g.g) {
                    let w = weight_law.draw(r);
                    s2 += w * w * gk;
                    for (o, v) in cyi.iter_mut().zip(row) {
                        *o += w * v;
                    }
                }
                let n = g.n as f64;
                let mut norm2 = 0.0;
                for (o, v) in cy.iter_mut().zip(cyi.iter_mut()) {
                    *v /= n;
                    norm2 += *v * *v;
                    *o += *v;
                }
                trace += g.weight * (s2 - n * norm2) / (n - 1.0);
            }
            quotient(n_total, cy, trace)
        },
    );
    finish(statistic, draws, alpha, method, cfg.seed)
}

/// Per-group quantities of the second-order expansion of `v ↦ vech⁻(corr(v))`.
#[derive(Debug, Clone)]
pub struct TaylorContext {
    pub d: usize,
    pub v_hat: DVector<f64>,
    pub r_hat: DVector<f64>,
    pub corr: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    /// Diagonal of `Λ(v̂)`.
    pub lambda: DVector<f64>,
    pub m_hat: DMatrix<f64>,
    pub structural: StructuralMatrices,
    /// `Λ⁻¹ (Λ Σ̂ Λ)^{1/2}`, row-major. A square root of `Σ̂` that makes `Λ y`
    /// independent of the measurement scale draw by draw.
    sigma_root: Vec<f64>,
    /// `(vech pos of (j,j), vech pos of (k,k), vech pos of (j,k))` per correlation.
    pairs: Vec<(usize, usize, usize)>,
}

impl TaylorContext {
    pub fn new(ms: &MomentSet) -> Result<Self> {
        let d = ms.dims.d;
        let pairs = off_diagonal_pairs(d)
            .into_iter()
            .map(|(j, k)| (vech_index(d, j, j), vech_index(d, k, k), vech_index(d, j, k)))
            .collect();
        let lam = DMatrix::from_diagonal(&ms.lambda);
        let inv = DMatrix::from_diagonal(&ms.lambda.map(|l| 1.0 / l));
        let root = inv * psd_sqrt(&(&lam * &ms.sigma_hat * &lam), PSD_CLIP_TOL)?;
        Ok(Self {
            d,
            v_hat: ms.v_hat().clone(),
            r_hat: ms.r_hat().clone(),
            corr: ms.moments.corr.clone(),
            sigma_hat: ms.sigma_hat.clone(),
            lambda: ms.lambda.clone(),
            m_hat: ms.m_hat.clone(),
            structural: matops::structural(d)?,
            sigma_root: row_major(&root),
            pairs,
        })
    }

    pub fn p(&self) -> usize {
        self.lambda.len()
    }

    pub fn p_u(&self) -> usize {
        self.r_hat.len()
    }

    /// Quadratic correction `f(y)` evaluated with the full matrix expression.
    pub fn f_matrix(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.p() {
            return Err(Error::Dimension(format!("expected a vector of length {}, got {}", self.p(), y.len())));
        }
        let s = &self.structural;
        let u = y.component_mul(&self.lambda);
        let w = &s.m6 * &u;
        let ww = matops::vech(&(&w * w.transpose()))?;
        let r_vech = matops::vech(&self.corr)?;
        let t1 = &s.l * DMatrix::from_diagonal(&ww) * r_vech * 0.25;
        let t2 = &s.l * DMatrix::from_diagonal(&u) * &s.m4 * &s.m5 * &u * 0.5;
        let t3 = DMatrix::from_diagonal(&self.r_hat) * &s.m1 * ww * 0.375;
        Ok(t1 - t2 + t3)
    }

    /// Writes `M̂ y` and `f(y)` elementwise.
    #[inline]
    pub fn linear_and_quadratic(&self, y: &[f64], lin: &mut [f64], quad: &mut [f64]) {
        let lam = self.lambda.as_slice();
        for (pos, &(jj, kk, jk)) in self.pairs.iter().enumerate() {
            let a = lam[jj] * y[jj];
            let b = lam[kk] * y[kk];
            let u = lam[jk] * y[jk];
            let r = self.r_hat[pos];
            lin[pos] = u - 0.5 * r * (a + b);
            quad[pos] = 0.25 * r * a * b - 0.5 * u * (a + b) + 0.375 * r * (a * a + b * b);
        }
    }

    /// `y ~ N(0, Σ̂)` from a fresh standard normal `z`.
    #[inline]
    pub fn draw_y(&self, r: &mut Rng, z: &mut [f64], y: &mut [f64]) {
        fill_normal(r, z);
        y.fill(0.0);
        gemv_acc(&self.sigma_root, z.len(), z, 1.0, y);
    }
}

/// Quadratic correction of the Taylor expansion for one group.
pub fn taylor_f(ctx: &TaylorContext, y: &DVector<f64>) -> Result<DVector<f64>> {
    ctx.f_matrix(y)
}

/// Taylor Monte-Carlo: `Y^Tay_i = M̂_i Y_i + f(Y_i)/√n_i` with `Y_i ~ N(0, Σ̂_i)`,
/// normalized by the data `tr(C Υ̂ Cᵀ)`.
pub fn taylor_mc_test(
    pm: &PooledMoments,
    h: &HypothesisSpec,
    method: Method,
    alpha: f64,
    cfg: &ResamplingConfig,
) -> Result<TestReport> {
    prepare(pm, h, alpha, cfg)?;
    let statistic = ats_statistic(pm, h, method.small_sample)?;
    let trace = projected_covariance(pm, h)?.trace();
    let contexts = pm.groups.iter().map(TaylorContext::new).collect::<Result<Vec<_>>>()?;
    let blocks: Vec<Vec<f64>> = (0..pm.dims.a).map(|i| row_major(&h.group_block(i))).collect();
    let (p, pu, m) = (pm.dims.p, pm.dims.p_u, h.m());
    let n_total = pm.n_total as f64;
    let quadratic = cfg.taylor_quadratic;

    struct Scratch {
        z: Vec<f64>,
        y: Vec<f64>,
        lin: Vec<f64>,
        quad: Vec<f64>,
        cy: Vec<f64>,
    }
    let draws = rng::chunked_map(
        cfg.seed,
        cfg.reps,
        || Scratch { z: vec![0.0; p], y: vec![0.0; p], lin: vec![0.0; pu], quad: vec![0.0; pu], cy: vec![0.0; m] },
        |r, s| {
            s.cy.fill(0.0);
            for ((ctx, block), g) in contexts.iter().zip(&blocks).zip(&pm.groups) {
                ctx.draw_y(r, &mut s.z, &mut s.y);
                ctx.linear_and_quadratic(&s.y, &mut s.lin, &mut s.quad);
                let root_n = (g.n as f64).sqrt();
                if quadratic {
                    for (l, q) in s.lin.iter_mut().zip(&s.quad) {
                        *l += q / root_n;
                    }
                }
                gemv_acc(block, pu, &s.lin, 1.0 / root_n, &mut s.cy);
            }
            quotient(n_total, &s.cy, trace)
        },
    );
    finish(statistic, draws, alpha, method, cfg.seed)
}

/// Dispatches a resampling method.
pub fn resampling_test(
    pm: &PooledMoments,
    h: &HypothesisSpec,
    method: Method,
    alpha: f64,
    cfg: &ResamplingConfig,
) -> Result<TestReport> {
    match method.engine {
        Engine::Par => parametric_bootstrap_test(pm, h, method, alpha, cfg),
        Engine::Wild => wild_bootstrap_test(pm, h, method, alpha, cfg),
        Engine::Tay => taylor_mc_test(pm, h, method, alpha, cfg),
        other => Err(Error::Argument(format!("{other:?} is not a resampling method"))),
    }
}
