//! ANOVA-type quadratic forms and the Monte-Carlo weighted χ² reference.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::PooledMoments;
use crate::hypotheses::HypothesisSpec;
use crate::linalg::{psd_sqrt, sym_eigenvalues, symmetrize, PSD_CLIP_TOL};
use crate::rng;

/// Relative tolerance below which negative eigenvalues are treated as zero.
pub const EIGEN_CLIP_TOL: f64 = 1e-10;

/// Critical-value engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Weighted χ² quantile by Monte-Carlo.
    Mc,
    /// Parametric bootstrap.
    Par,
    /// Wild bootstrap.
    Wild,
    /// Second-order Taylor Monte-Carlo.
    Tay,
    /// Fisher-z transformed statistic with Monte-Carlo quantile.
    FzMc,
}

/// Engine plus the optional `(N-3)/N` small-sample factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub engine: Engine,
    pub small_sample: bool,
}

impl Method {
    pub const ENGINES: [Engine; 5] = [Engine::Mc, Engine::Par, Engine::Wild, Engine::Tay, Engine::FzMc];

    pub fn new(engine: Engine, small_sample: bool) -> Self {
        Self { engine, small_sample }
    }

    fn base_name(engine: Engine) -> &'static str {
        match engine {
            Engine::Mc => "ats-mc",
            Engine::Par => "ats-par",
            Engine::Wild => "ats-wild",
            Engine::Tay => "ats-tay",
            Engine::FzMc => "atsfz-mc",
        }
    }

    /// Every accepted method name.
    pub fn all() -> Vec<Method> {
        Self::ENGINES
            .into_iter()
            .flat_map(|e| [Method::new(e, false), Method::new(e, true)])
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(Self::base_name(self.engine))?;
        if self.small_sample {
            f.write_str("-m")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, small) = match s.strip_suffix("-m") {
            Some(b) => (b, true),
            None => (s, false),
        };
        Self::ENGINES
            .into_iter()
            .find(|&e| Self::base_name(e) == base)
            .map(|e| Method::new(e, small))
            .ok_or_else(|| {
                let names: Vec<_> = Self::all().iter().map(|m| m.to_string()).collect();
                Error::Argument(format!("unknown method '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Outcome of one test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub method: Method,
    pub reject: bool,
    pub reps: usize,
    pub seed: u64,
}

impl TestReport {
    pub fn new(statistic: f64, reference: &ReferenceDistribution, alpha: f64, method: Method, seed: u64) -> Self {
        let critical_value = reference.quantile(alpha);
        Self {
            statistic,
            critical_value,
            p_value: reference.p_value(statistic),
            alpha,
            method,
            reject: statistic > critical_value,
            reps: reference.len(),
            seed,
        }
    }
}

/// Sorted reference draws of a test statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    sorted: Vec<f64>,
}

impl ReferenceDistribution {
    pub fn new(mut draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Config("reference distribution needs at least one draw".into()));
        }
        if draws.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("reference draw is NaN".into()));
        }
        draws.sort_by(f64::total_cmp);
        Ok(Self { sorted: draws })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Upper order statistic at position `⌈(1-α) W⌉`.
    pub fn quantile(&self, alpha: f64) -> f64 {
        self.sorted[upper_order_index(alpha, self.sorted.len())]
    }

    /// `(1 + #{draws ≥ stat}) / (1 + W)`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v < stat);
        let hits = self.sorted.len() - below;
        (1 + hits) as f64 / (1 + self.sorted.len()) as f64
    }
}

/// 0-based index of the `⌈(1-α) W⌉`-th smallest of `w` values.
pub fn upper_order_index(alpha: f64, w: usize) -> usize {
    let k = ((1.0 - alpha) * w as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(w) - 1
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Verifies that the hypothesis fits the pooled moments.
pub fn check_compatible(pm: &PooledMoments, h: &HypothesisSpec) -> Result<()> {
    if h.dims.d != pm.dims.d || h.dims.a != pm.dims.a {
        return Err(Error::Dimension(format!(
            "hypothesis is for {} group(s) of dimension {}, data has {} group(s) of dimension {}",
            h.dims.a, h.dims.d, pm.dims.a, pm.dims.d
        )));
    }
    Ok(())
}

/// `(N-3)/N` when requested, else 1.
pub fn small_sample_factor(n_total: usize, small_sample: bool) -> f64 {
    if small_sample {
        (n_total as f64 - 3.0) / n_total as f64
    } else {
        1.0
    }
}

/// `C Υ̂ Cᵀ`, symmetrized.
pub fn projected_covariance(pm: &PooledMoments, h: &HypothesisSpec) -> Result<DMatrix<f64>> {
    check_compatible(pm, h)?;
    Ok(symmetrize(&(&h.c * &pm.upsilon * h.c.transpose())))
}

fn positive_trace(cuc: &DMatrix<f64>) -> Result<f64> {
    let tr = cuc.trace();
    let scale = cuc.abs().max();
    if !(tr > 1e-14 * scale.max(f64::MIN_POSITIVE)) || !tr.is_finite() {
        return Err(Error::DegenerateHypothesis(
            "tr(C Υ̂ Cᵀ) is zero: the hypothesis has no estimated variation".into(),
        ));
    }
    Ok(tr)
}

/// ATS with a precomputed trace normalizer.
pub fn ats_from_parts(n_total: usize, residual: &DVector<f64>, trace: f64) -> f64 {
    n_total as f64 * residual.norm_squared() / trace
}

/// `N ‖C r̂ − ζ‖² / tr(C Υ̂ Cᵀ)`, optionally times `(N-3)/N`.
pub fn ats_statistic(pm: &PooledMoments, h: &HypothesisSpec, small_sample: bool) -> Result<f64> {
    let tr = positive_trace(&projected_covariance(pm, h)?)?;
    let res = h.residual(&pm.r_hat)?;
    Ok(ats_from_parts(pm.n_total, &res, tr) * small_sample_factor(pm.n_total, small_sample))
}

/// Nonincreasing eigenvalues of `K / tr(K)` for a symmetric `m × m` matrix `K`,
/// padded with zeros to `len`.
pub fn normalized_eigenvalues(k: &DMatrix<f64>, len: usize) -> Result<Vec<f64>> {
    let tr = positive_trace(k)?;
    let mut ev = sym_eigenvalues(&(k / tr));
    let top = ev.first().copied().unwrap_or(0.0);
    for v in ev.iter_mut() {
        if *v < 0.0 {
            if *v < -EIGEN_CLIP_TOL * top.max(1.0) {
                return Err(Error::Numerical(format!("limit matrix has negative eigenvalue {v}")));
            }
            *v = 0.0;
        }
    }
    ev.resize(len.max(ev.len()), 0.0);
    ev.truncate(len.max(1));
    Ok(ev)
}

/// Weights of the limiting weighted χ² law of the ATS.
///
/// The nonzero eigenvalues of `Υ̂^{1/2} Cᵀ E C Υ̂^{1/2}` coincide with those of
/// `E^{1/2} C Υ̂ Cᵀ E^{1/2}`, which is only `m × m`.
pub fn limit_eigenvalues(pm: &PooledMoments, h: &HypothesisSpec) -> Result<Vec<f64>> {
    let cuc = projected_covariance(pm, h)?;
    normalized_eigenvalues(&cuc, pm.dims.a * pm.dims.p_u)
}

/// Eigenvalues of `Υ^{1/2} Cᵀ E C Υ^{1/2}` for an arbitrary symmetric weight `E`.
pub fn limit_eigenvalues_with_weight(
    upsilon: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let m = c.nrows();
    if e.shape() != (m, m) || upsilon.shape() != (c.ncols(), c.ncols()) {
        return Err(Error::Dimension("weight, hypothesis and covariance shapes do not match".into()));
    }
    let root = psd_sqrt(upsilon, PSD_CLIP_TOL)?;
    let prod = symmetrize(&(&root * c.transpose() * symmetrize(e) * c * &root));
    let mut ev = sym_eigenvalues(&prod);
    let top = ev.first().copied().unwrap_or(0.0).abs();
    for v in ev.iter_mut() {
        if *v < 0.0 && *v >= -EIGEN_CLIP_TOL * top.max(1.0) {
            *v = 0.0;
        }
    }
    Ok(ev)
}

/// Draws of `Σ λ_ℓ B_ℓ` with `B_ℓ` i.i.d. χ²₁.
pub fn weighted_chisq_draws(lambdas: &[f64], w: usize, seed: u64) -> Result<Vec<f64>> {
    if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::Argument("weights must be finite and nonnegative".into()));
    }
    // weights at rounding level would change how many normals each draw consumes
    let top = lambdas.iter().copied().fold(0.0_f64, f64::max);
    let active: Vec<f64> = lambdas.iter().copied().filter(|&l| l > EIGEN_CLIP_TOL * top).collect();
    if active.is_empty() {
        return Err(Error::DegenerateHypothesis("all weights of the χ² mixture are zero".into()));
    }
    Ok(rng::chunked_map(seed, w, || (), |r, _| {
        active
            .iter()
            .map(|&l| {
                let z: f64 = StandardNormal.sample(r);
                l * (z * z)
            })
            .sum()
    }))
}

/// Monte-Carlo `(1-α)` quantile of the weighted χ² law with its reference draws.
pub fn weighted_chisq_quantile(
    lambdas: &[f64],
    alpha: f64,
    w: usize,
    seed: u64,
) -> Result<(f64, ReferenceDistribution)> {
    check_alpha(alpha)?;
    if w < 100 {
        return Err(Error::Config(format!("need at least 100 Monte-Carlo draws, got {w}")));
    }
    let reference = ReferenceDistribution::new(weighted_chisq_draws(lambdas, w, seed)?)?;
    Ok((reference.quantile(alpha), reference))
}

/// Fisher-z statistic and the covariance driving its limit.
#[derive(Debug, Clone)]
pub struct FisherZ {
    pub statistic: f64,
    /// `Ĵ C Υ̂ Cᵀ Ĵ` with `Ĵ = diag(1 − (C r̂)²)⁻¹`.
    pub limit_covariance: DMatrix<f64>,
    pub trace: f64,
}

impl FisherZ {
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        normalized_eigenvalues(&self.limit_covariance, self.limit_covariance.nrows())
    }
}

fn check_open_unit(v: &DVector<f64>, what: &str) -> Result<()> {
    match v.iter().position(|x| !(x.abs() < 1.0)) {
        Some(i) => Err(Error::TransformDomain(format!(
            "component {} of {what} is {}, outside (-1, 1)",
            i + 1,
            v[i]
        ))),
        None => Ok(()),
    }
}

/// ATS on `atanh(C r̂)` against `atanh(ζ)`.
pub fn fisherz_ats(pm: &PooledMoments, h: &HypothesisSpec, small_sample: bool) -> Result<FisherZ> {
    let cuc = projected_covariance(pm, h)?;
    let cr = &h.c * &pm.r_hat;
    check_open_unit(&cr, "C r̂")?;
    check_open_unit(&h.zeta, "ζ")?;
    let diff = DVector::from_iterator(cr.len(), cr.iter().zip(h.zeta.iter()).map(|(a, b)| a.atanh() - b.atanh()));
    let jac = DVector::from_iterator(cr.len(), cr.iter().map(|x| 1.0 / (1.0 - x * x)));
    let j = DMatrix::from_diagonal(&jac);
    let limit_covariance = symmetrize(&(&j * cuc * &j));
    let trace = positive_trace(&limit_covariance)?;
    let statistic = ats_from_parts(pm.n_total, &diff, trace) * small_sample_factor(pm.n_total, small_sample);
    Ok(FisherZ { statistic, limit_covariance, trace })
}

/// Test with a Monte-Carlo weighted χ² critical value (`ats-mc`, `atsfz-mc` and their `-m` forms).
pub fn mc_test(
    pm: &PooledMoments,
    h: &HypothesisSpec,
    method: Method,
    alpha: f64,
    w: usize,
    seed: u64,
) -> Result<TestReport> {
    let (statistic, lambdas) = match method.engine {
        Engine::Mc => (ats_statistic(pm, h, method.small_sample)?, limit_eigenvalues(pm, h)?),
        Engine::FzMc => {
            let fz = fisherz_ats(pm, h, method.small_sample)?;
            (fz.statistic, fz.eigenvalues()?)
        }
        other => {
            return Err(Error::Argument(format!("{other:?} is not a Monte-Carlo method")));
        }
    };
    let (_, reference) = weighted_chisq_quantile(&lambdas, alpha, w, seed)?;
    Ok(TestReport::new(statistic, &reference, alpha, method, seed))
}
