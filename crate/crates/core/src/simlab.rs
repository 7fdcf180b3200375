//! Data generators and drivers for type-I error and power experiments.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::estimators::{correlation_from_covariance, pooled_moments, GroupSample};
use crate::hypotheses::{self, HypothesisSpec};
use crate::linalg::{psd_sqrt, sym_eigenvalues, PSD_CLIP_TOL};
use crate::matops;
use crate::pipeline::{run_test, TestOptions};
use crate::quadform::Method;
use crate::resampling::WildWeight;
use crate::rng::{self, Rng};

pub const DEFAULT_GAMMA_SHAPE: f64 = 2.0;
pub const SKEW_NORMAL_ALPHA: f64 = 4.0;

/// Error law of the simulated observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionFamily {
    Normal,
    T9,
    SkewNormal,
    Gamma,
}

impl fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistributionFamily::Normal => "normal",
            DistributionFamily::T9 => "t9",
            DistributionFamily::SkewNormal => "skew-normal",
            DistributionFamily::Gamma => "gamma",
        })
    }
}

impl FromStr for DistributionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "t9" => Ok(Self::T9),
            "skew-normal" => Ok(Self::SkewNormal),
            "gamma" => Ok(Self::Gamma),
            _ => Err(Error::Config(format!(
                "unknown distribution '{s}' (expected normal, t9, skew-normal or gamma)"
            ))),
        }
    }
}

/// Standardized (mean 0, variance 1) scalar error law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    pub family: DistributionFamily,
    pub gamma_shape: f64,
    t9: StudentT<f64>,
    gamma: Gamma<f64>,
}

impl Serialize for DistributionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("DistributionSpec", 2)?;
        st.serialize_field("family", &self.family)?;
        st.serialize_field("gamma_shape", &self.gamma_shape)?;
        st.end()
    }
}

impl DistributionSpec {
    pub fn new(family: DistributionFamily) -> Self {
        Self::with_gamma_shape(family, DEFAULT_GAMMA_SHAPE).expect("default gamma shape is valid")
    }

    pub fn with_gamma_shape(family: DistributionFamily, gamma_shape: f64) -> Result<Self> {
        if !(gamma_shape > 0.0 && gamma_shape.is_finite()) {
            return Err(Error::Config(format!("gamma shape must be positive, got {gamma_shape}")));
        }
        Ok(Self {
            family,
            gamma_shape,
            t9: StudentT::new(9.0).expect("nine degrees of freedom"),
            gamma: Gamma::new(gamma_shape, 1.0).map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    #[inline]
    pub fn sample(&self, r: &mut Rng) -> f64 {
        match self.family {
            DistributionFamily::Normal => StandardNormal.sample(r),
            DistributionFamily::T9 => self.t9.sample(r) / (9.0f64 / 7.0).sqrt(),
            DistributionFamily::SkewNormal => {
                let delta = SKEW_NORMAL_ALPHA / (1.0 + SKEW_NORMAL_ALPHA * SKEW_NORMAL_ALPHA).sqrt();
                let u0: f64 = StandardNormal.sample(r);
                let u1: f64 = StandardNormal.sample(r);
                let x = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
                let mean = delta * (2.0 / std::f64::consts::PI).sqrt();
                let var = 1.0 - 2.0 * delta * delta / std::f64::consts::PI;
                (x - mean) / var.sqrt()
            }
            DistributionFamily::Gamma => {
                let k = self.gamma_shape;
                (self.gamma.sample(r) - k) / k.sqrt()
            }
        }
    }
}

/// Population covariance of a group.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CovarianceSpec {
    /// `1 − |i−j|/(2d)`.
    Toeplitz { d: usize },
    /// `ρ^{|i−j|}`.
    Ar { d: usize, rho: f64 },
    /// Diagonal matrix with the given variances.
    DiagScale { scale: Vec<f64> },
    /// `I_d + δ J_d`.
    IdentityPlusJ { d: usize, delta: f64 },
    /// `D^{1/2} V D^{1/2}` with `D = diag(scale)`.
    Scaled { base: Box<CovarianceSpec>, scale: Vec<f64> },
    /// `V + δ J_d`.
    Shifted { base: Box<CovarianceSpec>, delta: f64 },
}

impl CovarianceSpec {
    pub fn d(&self) -> usize {
        match self {
            CovarianceSpec::Toeplitz { d } | CovarianceSpec::Ar { d, .. } | CovarianceSpec::IdentityPlusJ { d, .. } => *d,
            CovarianceSpec::DiagScale { scale } => scale.len(),
            CovarianceSpec::Scaled { base, .. } | CovarianceSpec::Shifted { base, .. } => base.d(),
        }
    }

    fn raw(&self) -> Result<DMatrix<f64>> {
        Ok(match self {
            CovarianceSpec::Toeplitz { d } => {
                let d = *d;
                DMatrix::from_fn(d, d, |i, j| 1.0 - i.abs_diff(j) as f64 / (2.0 * d as f64))
            }
            CovarianceSpec::Ar { d, rho } => DMatrix::from_fn(*d, *d, |i, j| rho.powi(i.abs_diff(j) as i32)),
            CovarianceSpec::DiagScale { scale } => DMatrix::from_diagonal(&DVector::from_column_slice(scale)),
            CovarianceSpec::IdentityPlusJ { d, delta } => {
                DMatrix::identity(*d, *d) + DMatrix::from_element(*d, *d, *delta)
            }
            CovarianceSpec::Scaled { base, scale } => {
                let v = base.raw()?;
                if scale.len() != v.nrows() {
                    return Err(Error::Config(format!("scale has length {}, expected {}", scale.len(), v.nrows())));
                }
                DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * (scale[i] * scale[j]).sqrt())
            }
            CovarianceSpec::Shifted { base, delta } => {
                let v = base.raw()?;
                let d = v.nrows();
                v + DMatrix::from_element(d, d, *delta)
            }
        })
    }

    /// The covariance matrix, checked to be symmetric positive definite.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let v = self.raw()?;
        if v.nrows() < 2 {
            return Err(Error::Config("covariance dimension must be at least 2".into()));
        }
        let ev = sym_eigenvalues(&v);
        if !(ev.last().copied().unwrap_or(0.0) > 0.0) {
            return Err(Error::Config(format!("covariance {self:?} is not positive definite")));
        }
        Ok(v)
    }
}

/// Variance profile `diag(1, 1.2, …, 1.8)` for `d = 5`, generalized to other dimensions.
pub fn variance_profile(d: usize) -> Vec<f64> {
    match d {
        2 => vec![1.0, 1.5],
        7 => (7..=13).map(|v| v as f64 / 7.0).collect(),
        _ => (0..d).map(|j| 1.0 + 0.2 * j as f64).collect(),
    }
}

/// Covariance structure of the first group in the two-group designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseStructure {
    Toeplitz,
    Ar,
}

impl FromStr for BaseStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toeplitz" => Ok(Self::Toeplitz),
            "ar" => Ok(Self::Ar),
            _ => Err(Error::Config(format!("unknown covariance structure '{s}' (expected toeplitz or ar)"))),
        }
    }
}

impl BaseStructure {
    fn spec(self, d: usize) -> CovarianceSpec {
        match self {
            BaseStructure::Toeplitz => CovarianceSpec::Toeplitz { d },
            BaseStructure::Ar => CovarianceSpec::Ar { d, rho: 0.6 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScenarioLabel {
    #[serde(rename = "A_r")]
    Ar,
    #[serde(rename = "B_r")]
    Br,
    #[serde(rename = "C_r")]
    Cr,
    E,
    #[serde(rename = "power-A")]
    PowerA,
    #[serde(rename = "power-B")]
    PowerB,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 6] = [Self::Ar, Self::Br, Self::Cr, Self::E, Self::PowerA, Self::PowerB];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ar => "A_r",
            Self::Br => "B_r",
            Self::Cr => "C_r",
            Self::E => "E",
            Self::PowerA => "power-A",
            Self::PowerB => "power-B",
        }
    }

    pub fn groups(self) -> usize {
        match self {
            Self::Ar | Self::PowerA => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|l| l.name()).collect();
            Error::Config(format!("unknown scenario '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

/// A complete simulation design.
#[derive(Debug, Clone, Serialize)]
pub struct SimScenario {
    pub label: ScenarioLabel,
    pub d: usize,
    pub group_sizes: Vec<usize>,
    pub distribution: DistributionSpec,
    pub covariances: Vec<CovarianceSpec>,
    pub mean: Vec<f64>,
    #[serde(skip)]
    pub hypothesis: HypothesisSpec,
    #[serde(serialize_with = "serialize_methods")]
    pub methods: Vec<Method>,
    pub runs: usize,
    pub mc_reps: usize,
    pub boot_reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub wild_weight: WildWeight,
    /// Shift `δ` of the power designs (0 for type-I designs).
    pub delta: f64,
}

fn serialize_methods<S: serde::Serializer>(m: &[Method], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|m| m.to_string()))
}

/// `n₁ = 0.6 N`, `n₂ = N − n₁`.
pub fn two_group_sizes(n_total: usize) -> Vec<usize> {
    let n1 = (0.6 * n_total as f64).round() as usize;
    vec![n1, n_total - n1]
}

/// Default mean `(1², 2², …, d²)/4`.
pub fn default_mean(d: usize) -> Vec<f64> {
    (1..=d).map(|j| (j * j) as f64 / 4.0).collect()
}

impl SimScenario {
    /// Preset design; `n` is the total sample size for two-group designs and the
    /// group size otherwise.
    pub fn preset(
        label: ScenarioLabel,
        d: usize,
        n: usize,
        distribution: DistributionSpec,
        structure: BaseStructure,
        delta: f64,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config(format!("dimension must be at least 2, got {d}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("delta must be nonnegative, got {delta}")));
        }
        let group_sizes = if label.groups() == 2 { two_group_sizes(n) } else { vec![n] };
        if group_sizes.iter().any(|&g| g < 2) {
            return Err(Error::Config(format!("sample size {n} is too small")));
        }
        let base = structure.spec(d);
        let (covariances, hypothesis) = match label {
            ScenarioLabel::Ar => (
                vec![base.clone(), CovarianceSpec::Scaled { base: Box::new(base), scale: variance_profile(d) }],
                hypotheses::equal_correlation_matrices(2, d)?,
            ),
            ScenarioLabel::PowerA => (
                vec![CovarianceSpec::Shifted { base: Box::new(base.clone()), delta }, base],
                hypotheses::equal_correlation_matrices(2, d)?,
            ),
            ScenarioLabel::Br => (
                vec![CovarianceSpec::DiagScale { scale: variance_profile(d) }],
                hypotheses::identity_correlation(d)?,
            ),
            ScenarioLabel::PowerB => {
                (vec![CovarianceSpec::IdentityPlusJ { d, delta }], hypotheses::identity_correlation(d)?)
            }
            ScenarioLabel::Cr => {
                (vec![CovarianceSpec::IdentityPlusJ { d, delta: 1.0 }], hypotheses::equal_correlations(d)?)
            }
            ScenarioLabel::E => (
                vec![CovarianceSpec::DiagScale { scale: (1..=d).map(|j| j as f64 / d as f64).collect() }],
                hypotheses::identity_correlation(d)?,
            ),
        };
        let delta = if matches!(label, ScenarioLabel::PowerA | ScenarioLabel::PowerB) { delta } else { 0.0 };
        Ok(Self {
            label,
            d,
            group_sizes,
            distribution,
            covariances,
            mean: default_mean(d),
            hypothesis,
            methods: vec![],
            runs: 2000,
            mc_reps: 10_000,
            boot_reps: 500,
            alpha: 0.05,
            seed: 0,
            wild_weight: WildWeight::Rademacher,
            delta,
        })
    }

    pub fn n_total(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Same design with the power shift `δ`.
    pub fn at_delta(&self, delta: f64) -> Result<Self> {
        let label = match self.label {
            ScenarioLabel::Ar | ScenarioLabel::PowerA => ScenarioLabel::PowerA,
            ScenarioLabel::Br | ScenarioLabel::PowerB => ScenarioLabel::PowerB,
            other => return Err(Error::Config(format!("scenario {other} has no power design"))),
        };
        let structure = match self.covariances.last() {
            Some(CovarianceSpec::Ar { .. }) => BaseStructure::Ar,
            Some(CovarianceSpec::Scaled { base, .. }) if matches!(**base, CovarianceSpec::Ar { .. }) => BaseStructure::Ar,
            _ => BaseStructure::Toeplitz,
        };
        let n = if label.groups() == 2 { self.n_total() } else { self.group_sizes[0] };
        let mut out = Self::preset(label, self.d, n, self.distribution, structure, delta)?;
        out.group_sizes = self.group_sizes.clone();
        out.mean = self.mean.clone();
        out.methods = self.methods.clone();
        out.runs = self.runs;
        out.mc_reps = self.mc_reps;
        out.boot_reps = self.boot_reps;
        out.alpha = self.alpha;
        out.seed = self.seed;
        out.wild_weight = self.wild_weight;
        Ok(out)
    }

    fn options(&self, seed: u64) -> TestOptions {
        TestOptions {
            alpha: self.alpha,
            mc_reps: self.mc_reps,
            boot_reps: self.boot_reps,
            seed,
            wild_weight: self.wild_weight,
        }
    }

    /// Population correlation vector of all groups stacked.
    pub fn population_correlations(&self) -> Result<DVector<f64>> {
        let mut out = Vec::new();
        for c in &self.covariances {
            let r = correlation_from_covariance(&c.matrix()?)?;
            out.extend(matops::vech_minus(&r)?.iter().copied());
        }
        Ok(DVector::from_vec(out))
    }

    /// Checks shapes and, for type-I designs, that the generator satisfies the null.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("number of runs must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.covariances.len() != self.group_sizes.len() || self.hypothesis.a() != self.group_sizes.len() {
            return Err(Error::Config("group count does not match the covariance list or the hypothesis".into()));
        }
        if self.covariances.iter().any(|c| c.d() != self.d) || self.mean.len() != self.d {
            return Err(Error::Config("covariance or mean dimension does not match d".into()));
        }
        if self.delta == 0.0 {
            let res = self.hypothesis.residual(&self.population_correlations()?)?;
            if res.amax() > 1e-10 {
                return Err(Error::Config(format!(
                    "scenario {} does not satisfy its hypothesis (residual {:.3e})",
                    self.label,
                    res.amax()
                )));
            }
        }
        Ok(())
    }
}

/// `n` rows of `μ + V^{1/2} Z` with i.i.d. standardized entries of `Z`.
pub fn draw_group(
    n: usize,
    mean: &[f64],
    cov: &CovarianceSpec,
    dist: &DistributionSpec,
    r: &mut Rng,
) -> Result<GroupSample> {
    let root = psd_sqrt(&cov.matrix()?, PSD_CLIP_TOL)?;
    draw_with_root(n, mean, &root, dist, r)
}

fn draw_with_root(n: usize, mean: &[f64], root: &DMatrix<f64>, dist: &DistributionSpec, r: &mut Rng) -> Result<GroupSample> {
    let d = root.nrows();
    if mean.len() != d {
        return Err(Error::Config(format!("mean has length {}, expected {d}", mean.len())));
    }
    // fill row by row so a prefix of rows does not depend on n
    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z[(i, j)] = dist.sample(r);
        }
    }
    let mut x = z * root;
    for mut row in x.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mean) {
            *v += m;
        }
    }
    GroupSample::new(x)
}

/// Draws all groups of one run.
pub fn draw_run(sc: &SimScenario, run_seed: u64) -> Result<Vec<GroupSample>> {
    sc.covariances
        .iter()
        .zip(&sc.group_sizes)
        .enumerate()
        .map(|(i, (cov, &n))| draw_group(n, &sc.mean, cov, &sc.distribution, &mut rng::stream(run_seed, i as u64)))
        .collect()
}

/// Rejection counts of every method in `sc.methods` over all runs.
fn rejection_counts(sc: &SimScenario) -> Result<Vec<usize>> {
    sc.validate()?;
    let roots = sc
        .covariances
        .iter()
        .map(|c| psd_sqrt(&c.matrix()?, PSD_CLIP_TOL))
        .collect::<Result<Vec<_>>>()?;
    let per_run = rng::indexed_map(sc.seed, sc.runs, |_, run_seed| -> Result<Vec<bool>> {
        let groups = roots
            .iter()
            .zip(&sc.group_sizes)
            .enumerate()
            .map(|(i, (root, &n))| {
                draw_with_root(n, &sc.mean, root, &sc.distribution, &mut rng::stream(run_seed, i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let pm = pooled_moments(&groups)?;
        sc.methods
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let opts = sc.options(rng::derive_seed(run_seed, 1000 + k as u64));
                Ok(run_test(&pm, &sc.hypothesis, m, &opts)?.reject)
            })
            .collect()
    });
    let mut counts = vec![0; sc.methods.len()];
    for run in per_run {
        for (c, rej) in counts.iter_mut().zip(run?) {
            *c += rej as usize;
        }
    }
    Ok(counts)
}

/// Central 95% binomial band of the rejection rate under a true level `alpha`.
pub fn binomial_band(runs: usize, alpha: f64) -> Result<(f64, f64)> {
    let b = Binomial::new(alpha, runs as u64).map_err(|e| Error::Config(e.to_string()))?;
    let lo = b.inverse_cdf(0.025) as f64 / runs as f64;
    let hi = b.inverse_cdf(0.975) as f64 / runs as f64;
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Type1Row {
    pub scenario: String,
    pub distribution: String,
    pub n_total: usize,
    pub method: String,
    pub runs: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub scenario: String,
    pub distribution: String,
    pub n_total: usize,
    pub delta: f64,
    pub method: String,
    pub runs: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
}

fn rate_and_se(rejections: usize, runs: usize) -> (f64, f64) {
    let rate = rejections as f64 / runs as f64;
    (rate, (rate * (1.0 - rate) / runs as f64).sqrt())
}

/// Simulated rejection rates of every method under the scenario's generator.
pub fn type1_experiment(sc: &SimScenario) -> Result<Vec<Type1Row>> {
    let counts = rejection_counts(sc)?;
    let (band_low, band_high) = binomial_band(sc.runs, sc.alpha)?;
    Ok(sc
        .methods
        .iter()
        .zip(counts)
        .map(|(m, rejections)| {
            let (rate, se) = rate_and_se(rejections, sc.runs);
            Type1Row {
                scenario: sc.label.to_string(),
                distribution: sc.distribution.family.to_string(),
                n_total: sc.n_total(),
                method: m.to_string(),
                runs: sc.runs,
                rejections,
                rate,
                se,
                band_low,
                band_high,
                in_band: rate >= band_low && rate <= band_high,
            }
        })
        .collect())
}

/// Rejection rates over a grid of shifts `δ`.
pub fn power_curve(sc: &SimScenario, deltas: &[f64]) -> Result<Vec<PowerRow>> {
    if deltas.is_empty() {
        return Err(Error::Config("delta grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &delta in deltas {
        let shifted = sc.at_delta(delta)?;
        let counts = rejection_counts(&shifted)?;
        for (m, rejections) in sc.methods.iter().zip(counts) {
            let (rate, se) = rate_and_se(rejections, sc.runs);
            rows.push(PowerRow {
                scenario: shifted.label.to_string(),
                distribution: sc.distribution.family.to_string(),
                n_total: shifted.n_total(),
                delta,
                method: m.to_string(),
                runs: sc.runs,
                rejections,
                rate,
                se,
            });
        }
    }
    Ok(rows)
}

/// Writes rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Config(format!("cannot write CSV: {e}")))?;
    }
    w.flush().map_err(|e| Error::Config(format!("cannot write CSV: {e}")))?;
    Ok(())
}
