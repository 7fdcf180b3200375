//! Property tests for the invariants of every module.

use corrtest::combined::{beta_search, contrast_statistic, equicoordinate_test, Classification, CombinedConfig};
use corrtest::estimators::{correlation_from_covariance, pooled_moments, GroupSample, MomentSet};
use corrtest::hypotheses;
use corrtest::linalg::sym_eigenvalues;
use corrtest::matops::{self, centering_projector, index_vectors, structural, vech, vech_minus, Dims};
use corrtest::pipeline::{run_test, TestOptions};
use corrtest::quadform::{ats_statistic, limit_eigenvalues, weighted_chisq_quantile, Method, ReferenceDistribution};
use corrtest::resampling::TaylorContext;
use corrtest::simlab::{BaseStructure, DistributionFamily, DistributionSpec, ScenarioLabel, SimScenario};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sym_matrix(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    &a + a.transpose()
}

fn group(n: usize, d: usize, seed: u64) -> GroupSample {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mix = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { r.random_range(-0.5..0.5) });
    let z = DMatrix::from_fn(n, d, |_, _| r.sample::<f64, _>(StandardNormal));
    GroupSample::new(z * mix).unwrap()
}

fn rescale(g: &GroupSample, seed: u64) -> GroupSample {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let s = DMatrix::from_diagonal(&DVector::from_fn(g.d(), |_, _| r.random_range(0.01..100.0)));
    GroupSample::new(g.data() * s).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn fast() -> ProptestConfig {
    ProptestConfig { cases: 32, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(fast())]

    #[test]
    fn selector_identities(d in 2usize..=7, seed in any::<u64>()) {
        let s = structural(d).unwrap();
        let x = sym_matrix(d, seed);
        let v = vech(&x).unwrap();
        prop_assert_eq!(&s.l * &v, vech_minus(&x).unwrap());
        prop_assert_eq!(&s.l * &s.m4, s.m1.clone());
        prop_assert_eq!(&s.m6 * &v, x.diagonal());
        prop_assert_eq!(&s.a_sel, &s.m6);
        prop_assert!(s.m1.iter().chain(s.l.iter()).all(|&e| e == 0.0 || e == 1.0 || e == 2.0));
        prop_assert_eq!(structural(d).unwrap(), s);
        prop_assert_eq!(matops::unvech(&v, d).unwrap(), x);
    }

    #[test]
    fn index_vectors_partition(d in 2usize..=12) {
        let dims = Dims::new(d, 1).unwrap();
        prop_assert_eq!(dims.p, dims.p_u + d);
        let idx = index_vectors(d).unwrap();
        prop_assert_eq!(idx.diag[0], 1);
        prop_assert_eq!(idx.diag[d - 1], dims.p);
        prop_assert!(idx.diag.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.off_diag.windows(2).all(|w| w[0] < w[1]));
        let mut all: Vec<usize> = idx.diag.iter().chain(&idx.off_diag).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (1..=dims.p).collect::<Vec<_>>());
    }

    #[test]
    fn centering_projector_is_projection(k in 1usize..=20) {
        let p = centering_projector(k).unwrap();
        prop_assert!((&p - p.transpose()).amax() == 0.0);
        prop_assert!((&p * &p - &p).amax() < 1e-12);
        let ev = sym_eigenvalues(&p);
        prop_assert_eq!(ev.iter().filter(|v| (*v - 1.0).abs() < 1e-10).count(), k - 1);
        prop_assert_eq!(ev.iter().filter(|v| v.abs() < 1e-10).count(), 1);
    }

    #[test]
    fn moments_are_scale_free(d in 2usize..=5, n in 8usize..60, seed in any::<u64>()) {
        let g = group(n, d, seed);
        let a = MomentSet::estimate(&g).unwrap();
        let b = MomentSet::estimate(&rescale(&g, seed ^ 1)).unwrap();
        prop_assert!((&a.moments.corr - &b.moments.corr).amax() < 1e-10);
        prop_assert!((a.r_hat() - b.r_hat()).amax() < 1e-10);
        prop_assert!((&a.upsilon_hat - &b.upsilon_hat).amax() < 1e-10 * a.upsilon_hat.amax().max(1.0));
        let corr = &a.moments.corr;
        prop_assert!((0..d).all(|j| (corr[(j, j)] - 1.0).abs() < 1e-14));
        prop_assert!(corr.iter().all(|v| v.abs() <= 1.0 + 1e-14));
        let ev = sym_eigenvalues(&a.sigma_hat);
        prop_assert!(*ev.last().unwrap() >= -1e-8 * ev[0].max(0.0));
        let ups = &a.m_hat * &a.sigma_hat * a.m_hat.transpose();
        prop_assert!((ups - &a.upsilon_hat).amax() < 1e-12 * a.upsilon_hat.amax().max(1.0));
    }

    #[test]
    fn pooled_upsilon_is_block_diagonal(d in 2usize..=4, sizes in prop::collection::vec(6usize..40, 1..4), seed in any::<u64>()) {
        let groups: Vec<_> = sizes.iter().enumerate().map(|(i, &n)| group(n, d, seed.wrapping_add(i as u64))).collect();
        let pm = pooled_moments(&groups).unwrap();
        let pu = pm.dims.p_u;
        let n_total: usize = sizes.iter().sum();
        for (i, gi) in pm.groups.iter().enumerate() {
            for j in 0..sizes.len() {
                let block = pm.upsilon.view((i * pu, j * pu), (pu, pu));
                if i == j {
                    let want = &gi.upsilon_hat * (n_total as f64 / gi.n as f64);
                    prop_assert_eq!(block.into_owned(), want);
                } else {
                    prop_assert!(block.iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn builders_encode_their_null(d in 2usize..=6, a in 2usize..=4, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let pu = d * (d - 1) / 2;
        let one: Vec<f64> = (0..pu).map(|_| r.random_range(-0.9..0.9)).collect();
        let equal_blocks = DVector::from_iterator(a * pu, (0..a).flat_map(|_| one.iter().copied()));
        let random = DVector::from_fn(a * pu, |_, _| r.random_range(-0.9..0.9));

        let h = hypotheses::equal_correlation_matrices(a, d).unwrap();
        prop_assert!(h.residual(&equal_blocks).unwrap().amax() < 1e-12);
        prop_assert!(h.residual(&random).unwrap().norm() > 0.0);
        prop_assert_eq!(hypotheses::equal_correlation_matrices(a, d).unwrap(), h);

        let h = hypotheses::identity_correlation(d).unwrap();
        prop_assert!(h.residual(&DVector::zeros(pu)).unwrap().amax() < 1e-12);
        prop_assert!(h.residual(&random.rows(0, pu).into_owned()).unwrap().norm() > 0.0);

        let target = correlation_from_covariance(&(sym_matrix(d, seed).map(|v| v * 0.1) + DMatrix::identity(d, d) * (d as f64))).unwrap();
        let h = hypotheses::given_correlation(&target).unwrap();
        prop_assert!(h.residual(&vech_minus(&target).unwrap()).unwrap().amax() < 1e-12);

        if pu >= 2 {
            let h = hypotheses::equal_correlations(d).unwrap();
            prop_assert!(h.residual(&DVector::from_element(pu, one[0])).unwrap().amax() < 1e-12);
            prop_assert!(h.residual(&random.rows(0, pu).into_owned()).unwrap().norm() > 0.0);
        }
    }

    #[test]
    fn eigenvalues_and_statistic_are_scale_free(d in 2usize..=4, seed in any::<u64>()) {
        let groups = [group(30, d, seed), group(45, d, seed ^ 7)];
        let scaled = [rescale(&groups[0], seed), rescale(&groups[1], seed ^ 3)];
        let h = hypotheses::equal_correlation_matrices(2, d).unwrap();
        let pa = pooled_moments(&groups).unwrap();
        let pb = pooled_moments(&scaled).unwrap();
        let ea = limit_eigenvalues(&pa, &h).unwrap();
        let eb = limit_eigenvalues(&pb, &h).unwrap();
        prop_assert!((ea.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(ea.iter().zip(&eb).all(|(x, y)| (x - y).abs() < 1e-10));
        let sa = ats_statistic(&pa, &h, false).unwrap();
        let sb = ats_statistic(&pb, &h, false).unwrap();
        prop_assert!(rel(sa, sb) < 1e-10);
    }

    #[test]
    fn quantile_is_monotone_in_alpha(a1 in 0.001f64..0.5, a2 in 0.001f64..0.5, seed in any::<u64>()) {
        let lambdas = [0.6, 0.25, 0.15];
        let (q1, _) = weighted_chisq_quantile(&lambdas, a1.min(a2), 2000, seed).unwrap();
        let (q2, _) = weighted_chisq_quantile(&lambdas, a1.max(a2), 2000, seed).unwrap();
        prop_assert!(q1 >= q2);
    }

    #[test]
    fn p_value_matches_definition(draws in prop::collection::vec(0.0f64..10.0, 1..200), stat in -1.0f64..12.0) {
        let refd = ReferenceDistribution::new(draws.clone()).unwrap();
        let p = refd.p_value(stat);
        let hits = draws.iter().filter(|&&v| v >= stat).count();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert_eq!(p, (1 + hits) as f64 / (1 + draws.len()) as f64);
    }

    #[test]
    fn taylor_correction_is_even(d in 2usize..=5, seed in any::<u64>()) {
        let ms = MomentSet::estimate(&group(40, d, seed)).unwrap();
        let ctx = TaylorContext::new(&ms).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(ctx.p(), |_, _| r.sample::<f64, _>(StandardNormal));
        prop_assert_eq!(ctx.f_matrix(&y).unwrap(), ctx.f_matrix(&-&y).unwrap());
        prop_assert!(ctx.f_matrix(&DVector::zeros(ctx.p())).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_search_is_well_defined(b in 100usize..400, p in 1usize..6, alpha in 0.01f64..0.2, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let reps = DMatrix::from_fn(b, p, |_, _| r.sample::<f64, _>(StandardNormal).abs());
        let s = beta_search(&reps, alpha);
        prop_assert!(s.fwer_counts.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(s.fwer_counts[s.index] as f64 <= alpha * b as f64 + 1e-9);
        if s.index + 1 < b {
            prop_assert!(s.fwer_counts[s.index + 1] as f64 > alpha * b as f64);
        }
        // brute force count at the chosen grid point
        let brute = (0..b).filter(|&i| (0..p).any(|l| reps[(i, l)] > s.quantiles[l])).count();
        prop_assert_eq!(brute, s.fwer_counts[s.index]);
    }

    #[test]
    fn classification_follows_flags(d in 2usize..=6, flags in prop::collection::vec(any::<bool>(), 21)) {
        let len = d + d * (d - 1) / 2;
        let flagged: Vec<usize> = (0..len).filter(|&l| flags[l]).collect();
        let want = if flagged.iter().any(|&l| l >= d) {
            Classification::DifferentDependence
        } else if flagged.is_empty() {
            Classification::NoRejection
        } else {
            Classification::EqualCorrelationDifferentVariances
        };
        prop_assert_eq!(Classification::from_flags(&flagged, d), want);
    }

    #[test]
    fn contrast_is_antisymmetric(d in 2usize..=4, seed in any::<u64>()) {
        let (g1, g2) = (group(35, d, seed), group(50, d, seed ^ 9));
        let a = contrast_statistic(&g1, &g2).unwrap();
        let b = contrast_statistic(&g2, &g1).unwrap();
        prop_assert!((&a.t + &b.t).amax() < 1e-12);
        prop_assert!((&a.gamma - &b.gamma).amax() < 1e-12 * a.gamma.amax().max(1.0));
        prop_assert_eq!(a.len(), d + d * (d - 1) / 2);
    }

    #[test]
    fn equicoordinate_ignores_common_scale(d in 2usize..=4, c in 0.1f64..10.0, seed in any::<u64>()) {
        let mut cs = contrast_statistic(&group(40, d, seed), &group(40, d, seed ^ 5)).unwrap();
        let cfg = CombinedConfig::new(0.05, 500, seed);
        let a = equicoordinate_test(&cs, &cfg).unwrap();
        cs.t *= c;
        cs.gamma *= c * c;
        let b = equicoordinate_test(&cs, &cfg).unwrap();
        prop_assert_eq!(a.flagged_coordinates, b.flagged_coordinates);
        prop_assert!(rel(a.equicoordinate_quantile.unwrap(), b.equicoordinate_quantile.unwrap()) < 1e-10);
    }

    #[test]
    fn two_group_scenarios_share_correlations(d in 2usize..=7, ar in any::<bool>()) {
        let structure = if ar { BaseStructure::Ar } else { BaseStructure::Toeplitz };
        let dist = DistributionSpec::new(DistributionFamily::Normal);
        let sc = SimScenario::preset(ScenarioLabel::Ar, d, 100, dist, structure, 0.0).unwrap();
        let r = sc.population_correlations().unwrap();
        let pu = d * (d - 1) / 2;
        prop_assert!((r.rows(0, pu) - r.rows(pu, pu)).amax() < 1e-14);
        prop_assert_eq!(sc.group_sizes.clone(), vec![60, 40]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn engines_are_deterministic_with_positive_critical_values(d in 2usize..=4, seed in any::<u64>()) {
        let groups = [group(40, d, seed), group(30, d, seed ^ 11)];
        let pm = pooled_moments(&groups).unwrap();
        let h = hypotheses::equal_correlation_matrices(2, d).unwrap();
        let opts = TestOptions { mc_reps: 300, boot_reps: 150, seed, ..TestOptions::default() };
        for m in Method::all() {
            let a = run_test(&pm, &h, m, &opts).unwrap();
            let b = run_test(&pm, &h, m, &opts).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.critical_value > 0.0);
            prop_assert_eq!(a.reject, a.statistic > a.critical_value);
            prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        }
    }
}
