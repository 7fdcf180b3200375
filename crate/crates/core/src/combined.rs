//! Simultaneous comparison of the variances and correlations of two groups
//! through a multiple contrast statistic.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{GroupSample, MomentSet};
use crate::linalg::{psd_sqrt, symmetrize, PSD_CLIP_TOL};
use crate::matops::{self, off_diagonal_pairs, vech_index};
use crate::quadform::{check_alpha, upper_order_index};
use crate::resampling::{TaylorContext, MIN_REPS};
use crate::rng;

/// Difference of the stacked variance and correlation estimates of two groups.
#[derive(Debug, Clone)]
pub struct ContrastStatistic {
    pub d: usize,
    pub n_total: usize,
    /// `√N ((v̂₁₁..v̂_dd, r̂)₁ − (v̂₁₁..v̂_dd, r̂)₂)`.
    pub t: DVector<f64>,
    /// `Σ_i (N/n_i) [A; M̂_i] Σ̂_i [A; M̂_i]ᵀ`.
    pub gamma: DMatrix<f64>,
    pub groups: [MomentSet; 2],
}

impl ContrastStatistic {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Whether coordinate `l` belongs to a correlation (as opposed to a variance).
    pub fn is_correlation(&self, l: usize) -> bool {
        l >= self.d
    }

    pub fn labels(&self) -> Vec<String> {
        coordinate_labels(self.d)
    }
}

/// Human readable names of the contrast coordinates (1-based variables).
pub fn coordinate_labels(d: usize) -> Vec<String> {
    (1..=d)
        .map(|j| format!("variance of variable {j}"))
        .chain(off_diagonal_pairs(d).into_iter().map(|(j, k)| format!("correlation of pair ({}, {})", j + 1, k + 1)))
        .collect()
}

fn stacked_jacobian(ms: &MomentSet) -> Result<DMatrix<f64>> {
    let s = matops::structural(ms.dims.d)?;
    let (d, p) = (ms.dims.d, ms.dims.p);
    let mut out = DMatrix::zeros(d + ms.dims.p_u, p);
    out.rows_mut(0, d).copy_from(&s.a_sel);
    out.rows_mut(d, ms.dims.p_u).copy_from(&ms.m_hat);
    Ok(out)
}

pub fn contrast_from_moments(g1: MomentSet, g2: MomentSet) -> Result<ContrastStatistic> {
    let d = g1.dims.d;
    if g2.dims.d != d {
        return Err(Error::Dimension(format!("groups have different dimensions ({d} and {})", g2.dims.d)));
    }
    let n_total = g1.n + g2.n;
    let stacked = |g: &MomentSet| {
        let diag = (0..d).map(|j| g.v_hat()[vech_index(d, j, j)]);
        DVector::from_iterator(d + g.dims.p_u, diag.chain(g.r_hat().iter().copied()))
    };
    let t = (stacked(&g1) - stacked(&g2)) * (n_total as f64).sqrt();
    let mut gamma = DMatrix::zeros(t.len(), t.len());
    for g in [&g1, &g2] {
        let j = stacked_jacobian(g)?;
        gamma += &j * &g.sigma_hat * j.transpose() * (n_total as f64 / g.n as f64);
    }
    Ok(ContrastStatistic { d, n_total, t, gamma: symmetrize(&gamma), groups: [g1, g2] })
}

pub fn contrast_statistic(g1: &GroupSample, g2: &GroupSample) -> Result<ContrastStatistic> {
    if g1.d() != g2.d() {
        return Err(Error::Dimension(format!("groups have different dimensions ({} and {})", g1.d(), g2.d())));
    }
    contrast_from_moments(MomentSet::estimate(g1)?, MomentSet::estimate(g2)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    DifferentDependence,
    EqualCorrelationDifferentVariances,
    NoRejection,
}

impl Classification {
    pub fn from_flags(flagged: &[usize], d: usize) -> Self {
        if flagged.iter().any(|&l| l >= d) {
            Classification::DifferentDependence
        } else if flagged.is_empty() {
            Classification::NoRejection
        } else {
            Classification::EqualCorrelationDifferentVariances
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::DifferentDependence => "different-dependence",
            Classification::EqualCorrelationDifferentVariances => "equal-correlation-different-variances",
            Classification::NoRejection => "no-rejection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    Equicoordinate,
    Taylor,
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Procedure::Equicoordinate => "equicoordinate",
            Procedure::Taylor => "taylor",
        })
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equicoordinate" => Ok(Procedure::Equicoordinate),
            "taylor" => Ok(Procedure::Taylor),
            _ => Err(Error::Argument(format!("unknown procedure '{s}' (expected equicoordinate or taylor)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedConfig {
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    /// Compare absolute values of the contrast coordinates.
    pub two_sided: bool,
}

impl CombinedConfig {
    pub fn new(alpha: f64, reps: usize, seed: u64) -> Self {
        Self { alpha, reps, seed, two_sided: true }
    }

    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.reps < MIN_REPS {
            return Err(Error::Config(format!("need at least {MIN_REPS} replicates, got {}", self.reps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedVerdict {
    pub procedure: Procedure,
    pub reject_any: bool,
    pub classification: Classification,
    /// 0-based coordinates whose statistic exceeds its quantile.
    pub flagged_coordinates: Vec<usize>,
    pub flagged_labels: Vec<String>,
    pub statistic: Vec<f64>,
    /// Critical value of every coordinate on the scale of `statistic`.
    pub per_coordinate_quantiles: Vec<f64>,
    /// Equicoordinate quantile of the standardized statistic.
    pub equicoordinate_quantile: Option<f64>,
    pub beta_tilde: Option<f64>,
    pub two_sided: bool,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
}

impl CombinedVerdict {
    #[allow(clippy::too_many_arguments)]
    fn build(
        cs: &ContrastStatistic,
        procedure: Procedure,
        flagged: Vec<usize>,
        quantiles: Vec<f64>,
        equicoordinate_quantile: Option<f64>,
        beta_tilde: Option<f64>,
        cfg: &CombinedConfig,
    ) -> Self {
        let labels = cs.labels();
        Self {
            procedure,
            reject_any: !flagged.is_empty(),
            classification: Classification::from_flags(&flagged, cs.d),
            flagged_labels: flagged.iter().map(|&l| labels[l].clone()).collect(),
            flagged_coordinates: flagged,
            statistic: cs.t.iter().copied().collect(),
            per_coordinate_quantiles: quantiles,
            equicoordinate_quantile,
            beta_tilde,
            two_sided: cfg.two_sided,
            alpha: cfg.alpha,
            reps: cfg.reps,
            seed: cfg.seed,
        }
    }
}

/// Monte-Carlo estimate of the two-sided equicoordinate quantile of `N(0, R)`.
pub fn equicoordinate_quantile(corr: &DMatrix<f64>, alpha: f64, w: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    let p = corr.nrows();
    let root = psd_sqrt(corr, PSD_CLIP_TOL)?;
    let root_rm: Vec<f64> = root.transpose().as_slice().to_vec();
    let mut draws = rng::chunked_map(seed, w, || vec![0.0; p], |r, z| {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(r);
        }
        root_rm
            .chunks_exact(p)
            .map(|row| row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max)
    });
    draws.sort_by(f64::total_cmp);
    Ok(draws[upper_order_index(alpha, w)])
}

/// Standardizes `T` by `diag(Γ̂)` and compares it with the equicoordinate quantile.
pub fn equicoordinate_test(cs: &ContrastStatistic, cfg: &CombinedConfig) -> Result<CombinedVerdict> {
    cfg.validate()?;
    let p = cs.len();
    let sd: Vec<f64> = (0..p).map(|l| cs.gamma[(l, l)]).collect();
    if let Some(l) = sd.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateData(format!(
            "{} has zero estimated variance; use the taylor procedure",
            cs.labels()[l]
        )));
    }
    let sd: Vec<f64> = sd.into_iter().map(f64::sqrt).collect();
    let corr = DMatrix::from_fn(p, p, |j, k| cs.gamma[(j, k)] / (sd[j] * sd[k]));
    let z = equicoordinate_quantile(&corr, cfg.alpha, cfg.reps, cfg.seed)?;
    let flagged = (0..p).filter(|&l| (cs.t[l] / sd[l]).abs() >= z && cs.t[l] != 0.0).collect();
    let quantiles = sd.iter().map(|s| z * s).collect();
    Ok(CombinedVerdict::build(cs, Procedure::Equicoordinate, flagged, quantiles, Some(z), None, cfg))
}

/// Result of the grid search for the per-coordinate level.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSearch {
    /// Grid index `j̃`, so that `β̃ = j̃ / B`.
    pub index: usize,
    pub beta: f64,
    /// Per-coordinate `(1 − β̃)` quantiles.
    pub quantiles: Vec<f64>,
    /// Empirical family-wise error counts for every grid point.
    pub fwer_counts: Vec<usize>,
}

/// Largest `β = j/B` whose simulated family-wise error stays at or below `α`.
///
/// `reps` holds one replicate per row.
pub fn beta_search(reps: &DMatrix<f64>, alpha: f64) -> BetaSearch {
    let (b, p) = reps.shape();
    let sorted: Vec<Vec<f64>> = (0..p)
        .map(|l| {
            let mut col: Vec<f64> = reps.column(l).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    // replicate r exceeds q_{l, j/B} = sorted_l[B - j - 1] iff j >= B - #{values < T^r_l}
    let mut hist = vec![0usize; b + 1];
    for r in 0..b {
        let first = (0..p)
            .map(|l| b - sorted[l].partition_point(|&v| v < reps[(r, l)]))
            .min()
            .unwrap_or(b);
        hist[first] += 1;
    }
    let mut fwer_counts = Vec::with_capacity(b);
    let mut acc = 0;
    for &h in hist.iter().take(b) {
        acc += h;
        fwer_counts.push(acc);
    }
    debug_assert!(fwer_counts.windows(2).all(|w| w[0] <= w[1]));
    let limit = alpha * b as f64;
    let index = fwer_counts.iter().rposition(|&c| c as f64 <= limit + 1e-9).unwrap_or(0);
    let quantiles = sorted.iter().map(|col| col[b - index - 1]).collect();
    BetaSearch { index, beta: index as f64 / b as f64, quantiles, fwer_counts }
}

/// Simulates `T^{b,Tay}` replicates, one per row.
pub fn taylor_contrast_replicates(cs: &ContrastStatistic, reps: usize, seed: u64) -> Result<DMatrix<f64>> {
    let contexts = cs.groups.iter().map(TaylorContext::new).collect::<Result<Vec<_>>>()?;
    let (d, len) = (cs.d, cs.len());
    let p = d * (d + 1) / 2;
    let pu = len - d;
    let diag: Vec<usize> = (0..d).map(|j| vech_index(d, j, j)).collect();
    let root_total = (cs.n_total as f64).sqrt();
    let ns: Vec<f64> = cs.groups.iter().map(|g| g.n as f64).collect();

    let rows = rng::chunked_map(
        seed,
        reps,
        || (vec![0.0; p], vec![0.0; p], vec![0.0; pu], vec![0.0; pu]),
        |r, (z, y, lin, quad)| {
            let mut t = vec![0.0; len];
            for (i, ctx) in contexts.iter().enumerate() {
                let sign = if i == 0 { 1.0 } else { -1.0 };
                let root_n = ns[i].sqrt();
                ctx.draw_y(r, z, y);
                ctx.linear_and_quadratic(y, lin, quad);
                let scale = sign * root_total / root_n;
                for (j, &pos) in diag.iter().enumerate() {
                    t[j] += scale * y[pos];
                }
                for l in 0..pu {
                    t[d + l] += scale * (lin[l] + quad[l] / root_n);
                }
            }
            t
        },
    );
    Ok(DMatrix::from_row_iterator(reps, len, rows.into_iter().flatten()))
}

/// Taylor Monte-Carlo version with the `β̃` grid search.
pub fn taylor_combined_test(cs: &ContrastStatistic, cfg: &CombinedConfig) -> Result<CombinedVerdict> {
    cfg.validate()?;
    let mut reps = taylor_contrast_replicates(cs, cfg.reps, cfg.seed)?;
    let mut t = cs.t.clone();
    if cfg.two_sided {
        reps.apply(|v| *v = v.abs());
        t.apply(|v| *v = v.abs());
    }
    let search = beta_search(&reps, cfg.alpha);
    // the ratio T_l / q_l exceeds one, with 0/0 read as 1
    let flagged = (0..cs.len()).filter(|&l| t[l] > search.quantiles[l]).collect();
    Ok(CombinedVerdict::build(cs, Procedure::Taylor, flagged, search.quantiles, None, Some(search.beta), cfg))
}

pub fn combined_test(cs: &ContrastStatistic, procedure: Procedure, cfg: &CombinedConfig) -> Result<CombinedVerdict> {
    match procedure {
        Procedure::Equicoordinate => equicoordinate_test(cs, cfg),
        Procedure::Taylor => taylor_combined_test(cs, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn sample(n: usize, d: usize, seed: u64) -> GroupSample {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mix = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        GroupSample::new(DMatrix::from_fn(n, d, |_, _| r.sample::<f64, _>(StandardNormal)) * mix).unwrap()
    }

    #[test]
    fn identical_groups_give_zero() {
        let g = sample(40, 3, 1);
        let cs = contrast_statistic(&g, &g).unwrap();
        assert_eq!(cs.t, DVector::zeros(6));
        let cfg = CombinedConfig::new(0.05, 1000, 3);
        for proc_ in [Procedure::Equicoordinate, Procedure::Taylor] {
            let v = combined_test(&cs, proc_, &cfg).unwrap();
            assert_eq!(v.classification, Classification::NoRejection);
            assert!(!v.reject_any);
        }
    }

    #[test]
    fn bookkeeping_d2() {
        let cs = contrast_statistic(&sample(30, 2, 2), &sample(20, 2, 3)).unwrap();
        assert_eq!(cs.len(), 3);
        assert!(!cs.is_correlation(1) && cs.is_correlation(2));
        let want = (cs.groups[0].moments.cov[(0, 0)] - cs.groups[1].moments.cov[(0, 0)]) * 50f64.sqrt();
        assert!((cs.t[0] - want).abs() < 1e-12);
        assert_eq!(cs.labels(), vec!["variance of variable 1", "variance of variable 2", "correlation of pair (1, 2)"]);
    }

    #[test]
    fn gamma_matches_brute_force_composition() {
        let cs = contrast_statistic(&sample(30, 3, 4), &sample(45, 3, 5)).unwrap();
        let mut want = DMatrix::zeros(6, 6);
        for g in &cs.groups {
            // A_sel picks the diagonal positions of vech
            let mut a = DMatrix::zeros(3, 6);
            for (j, pos) in [0usize, 3, 5].into_iter().enumerate() {
                a[(j, pos)] = 1.0;
            }
            let stacked = DMatrix::from_fn(6, 6, |r, c| if r < 3 { a[(r, c)] } else { g.m_hat[(r - 3, c)] });
            want += &stacked * &g.sigma_hat * stacked.transpose() * (75.0 / g.n as f64);
        }
        assert!((&cs.gamma - want).abs().max() < 1e-12);
    }

    #[test]
    fn swapping_groups_negates_t() {
        let (a, b) = (sample(30, 3, 6), sample(25, 3, 7));
        let ab = contrast_statistic(&a, &b).unwrap();
        let ba = contrast_statistic(&b, &a).unwrap();
        assert!((&ab.t + &ba.t).abs().max() < 1e-12);
        assert!((&ab.gamma - &ba.gamma).abs().max() < 1e-12);
        assert!(contrast_statistic(&a, &sample(10, 4, 1)).is_err());
    }

    #[test]
    fn equicoordinate_quantile_oracles() {
        let z1 = equicoordinate_quantile(&DMatrix::identity(1, 1), 0.05, 1_000_000, 1).unwrap();
        assert!((z1 - 1.959964).abs() < 0.01, "{z1}");
        // max of two independent |N(0,1)|: P(max ≤ z) = (2Φ(z) − 1)²
        let z2 = equicoordinate_quantile(&DMatrix::identity(2, 2), 0.05, 1_000_000, 2).unwrap();
        let exact = Normal::standard().inverse_cdf((1.0 + 0.95f64.sqrt()) / 2.0);
        assert!((z2 - exact).abs() < 0.02, "{z2} vs {exact}");
    }

    #[test]
    fn equicoordinate_scale_invariance() {
        let cs = contrast_statistic(&sample(40, 3, 8), &sample(40, 3, 9)).unwrap();
        let mut scaled = cs.clone();
        scaled.t *= 3.0;
        scaled.gamma *= 9.0;
        let cfg = CombinedConfig::new(0.05, 2000, 1);
        let a = equicoordinate_test(&cs, &cfg).unwrap();
        let b = equicoordinate_test(&scaled, &cfg).unwrap();
        assert_eq!(a.flagged_coordinates, b.flagged_coordinates);
        assert!((a.equicoordinate_quantile.unwrap() - b.equicoordinate_quantile.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn equicoordinate_requires_positive_diagonal() {
        let mut cs = contrast_statistic(&sample(40, 3, 8), &sample(40, 3, 9)).unwrap();
        cs.gamma[(4, 4)] = 0.0;
        let err = equicoordinate_test(&cs, &CombinedConfig::new(0.05, 1000, 1)).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(ref m) if m.contains("taylor")));
    }

    #[test]
    fn beta_search_small_example() {
        // four replicates of one coordinate
        let reps = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let s = beta_search(&reps, 0.25);
        assert_eq!(s.fwer_counts, vec![0, 1, 2, 3]);
        assert_eq!(s.index, 1);
        assert_eq!(s.quantiles, vec![3.0]);
    }

    #[test]
    fn beta_never_exceeds_alpha() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let p = r.random_range(1..8);
            let reps = DMatrix::from_fn(500, p, |_, _| r.sample::<f64, _>(StandardNormal).abs());
            for alpha in [0.01, 0.05, 0.2] {
                let s = beta_search(&reps, alpha);
                assert!(s.beta <= alpha + 1e-12);
                assert!(s.fwer_counts.windows(2).all(|w| w[0] <= w[1]));
                assert!(s.fwer_counts[s.index] as f64 <= alpha * 500.0);
            }
        }
    }

    #[test]
    fn classification_partition() {
        assert_eq!(Classification::from_flags(&[], 3), Classification::NoRejection);
        assert_eq!(Classification::from_flags(&[0, 2], 3), Classification::EqualCorrelationDifferentVariances);
        assert_eq!(Classification::from_flags(&[1, 3], 3), Classification::DifferentDependence);
    }

    #[test]
    fn taylor_flags_scaled_variance() {
        let g1 = sample(2000, 3, 11);
        let mut x = sample(2000, 3, 12).data().clone();
        x.column_mut(0).scale_mut(3.0);
        let g2 = GroupSample::new(x).unwrap();
        let cs = contrast_statistic(&g1, &g2).unwrap();
        let v = taylor_combined_test(&cs, &CombinedConfig::new(0.05, 1000, 5)).unwrap();
        assert_eq!(v.classification, Classification::EqualCorrelationDifferentVariances);
        assert!(v.flagged_coordinates.contains(&0));
        assert!(v.beta_tilde.unwrap() <= 0.05);
        let r = combined_test(&cs, Procedure::Equicoordinate, &CombinedConfig::new(0.05, 1000, 5)).unwrap();
        assert!(r.flagged_coordinates.contains(&0));
    }
}
