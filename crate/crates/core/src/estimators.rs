//! Per-group moment estimation.
//!
//! For each group this computes the empirical covariance and correlation,
//! the fourth-moment covariance `Σ̂` of the centered products, the Jacobian
//! `M(v̂, r̂)` of the covariance-to-correlation map and `Υ̂ = M Σ̂ Mᵀ`.
//! Groups are pooled with the factors `N / n_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::matops::{self, direct_sum, vech_index, Dims};

/// Raw observations of one group: rows are subjects, columns are variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    data: DMatrix<f64>,
}

impl GroupSample {
    /// Validates shape, finiteness and nonzero column variances.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (n, d) = data.shape();
        if d < 2 {
            return Err(Error::Dimension(format!("need at least 2 variables, got {d}")));
        }
        if n < 2 {
            return Err(Error::DegenerateData(format!("need at least 2 observations, got {n}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % n, pos / n);
            return Err(Error::DegenerateData(format!("non-finite value at row {}, column {}", row + 1, col + 1)));
        }
        for (j, col) in data.column_iter().enumerate() {
            let mean = col.mean();
            let scale = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            if scale == 0.0 || ss / (n as f64 - 1.0) <= (1e-12 * scale).powi(2) {
                return Err(Error::ZeroVariance { column: j + 1 });
            }
        }
        Ok(Self { data })
    }

    /// Builds a sample from row-major values.
    pub fn from_rows(n: usize, d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Dimension(format!("expected {} values for {n}x{d}, got {}", n * d, values.len())));
        }
        Self::new(DMatrix::from_row_slice(n, d, values))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    fn centered(&self) -> DMatrix<f64> {
        let mean = self.data.row_mean();
        let mut x = self.data.clone();
        for mut row in x.row_iter_mut() {
            row -= &mean;
        }
        x
    }
}

/// First- and second-order sample moments of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub v_hat: DVector<f64>,
    pub corr: DMatrix<f64>,
    pub r_hat: DVector<f64>,
}

/// Correlation matrix of a covariance matrix with positive diagonal.
pub fn correlation_from_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::Dimension(format!("covariance must be square, got {}x{}", d, cov.ncols())));
    }
    let sd: Vec<f64> = (0..d).map(|j| cov[(j, j)]).collect();
    if let Some(j) = sd.iter().position(|&v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::ZeroVariance { column: j + 1 });
    }
    let sd: Vec<f64> = sd.into_iter().map(f64::sqrt).collect();
    Ok(DMatrix::from_fn(d, d, |j, k| if j == k { 1.0 } else { cov[(j, k)] / (sd[j] * sd[k]) }))
}

/// Mean, covariance (divisor `n - 1`) and correlation of one group.
pub fn sample_moments(g: &GroupSample) -> Result<SampleMoments> {
    let n = g.n() as f64;
    let mean = g.data.row_mean().transpose();
    let x = g.centered();
    let cov = symmetrize(&(x.transpose() * &x / (n - 1.0)));
    let corr = correlation_from_covariance(&cov)?;
    Ok(SampleMoments {
        v_hat: matops::vech(&cov)?,
        r_hat: matops::vech_minus(&corr)?,
        mean,
        cov,
        corr,
    })
}

/// Rows `vech(x̃_k x̃_kᵀ) - mean_l vech(x̃_l x̃_lᵀ)` for the centered observations.
pub fn centered_products(g: &GroupSample) -> DMatrix<f64> {
    let (n, d) = g.data.shape();
    let p = d * (d + 1) / 2;
    let x = g.centered();
    let mut w = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut pos = 0;
        for j in 0..d {
            for k in j..d {
                w[(i, pos)] = x[(i, j)] * x[(i, k)];
                pos += 1;
            }
        }
    }
    let mean = w.row_mean();
    for mut row in w.row_iter_mut() {
        row -= &mean;
    }
    w
}

/// Fourth-moment covariance estimator of `vech(εεᵀ)`.
pub fn sigma_hat(g: &GroupSample) -> Result<DMatrix<f64>> {
    let n = g.n();
    if n < 2 {
        return Err(Error::DegenerateData(format!("need at least 2 observations, got {n}")));
    }
    let w = centered_products(g);
    Ok(symmetrize(&(w.transpose() * &w / (n as f64 - 1.0))))
}

/// Diagonal of `Λ(v) = diag(vech(s sᵀ))^{-1/2}` where `s` holds the variances.
pub fn scaling_diagonal(v_hat: &DVector<f64>, d: usize) -> Result<DVector<f64>> {
    let p = d * (d + 1) / 2;
    if v_hat.len() != p {
        return Err(Error::Dimension(format!("vech of a {d}x{d} matrix has length {p}, got {}", v_hat.len())));
    }
    let var: Vec<f64> = (0..d).map(|j| v_hat[vech_index(d, j, j)]).collect();
    if let Some(j) = var.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::ZeroVariance { column: j + 1 });
    }
    let mut out = DVector::zeros(p);
    for j in 0..d {
        for k in j..d {
            out[vech_index(d, j, k)] = 1.0 / (var[j] * var[k]).sqrt();
        }
    }
    Ok(out)
}

/// Jacobian of `v ↦ vech⁻(corr(v))`: `[L - ½ diag(r) M1] Λ(v)`.
pub fn m_transform(v_hat: &DVector<f64>, r_hat: &DVector<f64>, dims: Dims) -> Result<DMatrix<f64>> {
    if r_hat.len() != dims.p_u {
        return Err(Error::Dimension(format!("r has length {}, expected {}", r_hat.len(), dims.p_u)));
    }
    let lambda = scaling_diagonal(v_hat, dims.d)?;
    let s = matops::structural(dims.d)?;
    let inner = &s.l - DMatrix::from_diagonal(r_hat) * &s.m1 * 0.5;
    Ok(inner * DMatrix::from_diagonal(&lambda))
}

/// All per-group estimates used by the test engines. Immutable once built.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub n: usize,
    pub dims: Dims,
    pub moments: SampleMoments,
    pub sigma_hat: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub m_hat: DMatrix<f64>,
    pub upsilon_hat: DMatrix<f64>,
    /// Centered product vectors, one row per subject.
    pub centered_products: DMatrix<f64>,
}

impl MomentSet {
    pub fn estimate(g: &GroupSample) -> Result<Self> {
        let dims = Dims::new(g.d(), 1)?;
        let moments = sample_moments(g)?;
        let products = centered_products(g);
        let sigma_hat = symmetrize(&(products.transpose() * &products / (g.n() as f64 - 1.0)));
        let lambda = scaling_diagonal(&moments.v_hat, dims.d)?;
        let m_hat = m_transform(&moments.v_hat, &moments.r_hat, dims)?;
        let upsilon_hat = symmetrize(&(&m_hat * &sigma_hat * m_hat.transpose()));
        Ok(Self { n: g.n(), dims, moments, sigma_hat, lambda, m_hat, upsilon_hat, centered_products: products })
    }

    pub fn r_hat(&self) -> &DVector<f64> {
        &self.moments.r_hat
    }

    pub fn v_hat(&self) -> &DVector<f64> {
        &self.moments.v_hat
    }
}

/// Pooled estimates across `a` independent groups.
#[derive(Debug, Clone)]
pub struct PooledMoments {
    pub dims: Dims,
    pub groups: Vec<MomentSet>,
    pub n_total: usize,
    /// Concatenation of the per-group `r̂_i`.
    pub r_hat: DVector<f64>,
    /// `⊕ (N / n_i) Υ̂_i`.
    pub upsilon: DMatrix<f64>,
}

impl PooledMoments {
    pub fn from_moment_sets(groups: Vec<MomentSet>) -> Result<Self> {
        let first = groups.first().ok_or_else(|| Error::Argument("at least one group is required".into()))?;
        let d = first.dims.d;
        if let Some(g) = groups.iter().find(|g| g.dims.d != d) {
            return Err(Error::Dimension(format!("groups have different dimensions ({d} and {})", g.dims.d)));
        }
        let dims = Dims::new(d, groups.len())?;
        let n_total: usize = groups.iter().map(|g| g.n).sum();
        let r_hat = DVector::from_iterator(dims.a * dims.p_u, groups.iter().flat_map(|g| g.r_hat().iter().copied()));
        let blocks: Vec<DMatrix<f64>> =
            groups.iter().map(|g| &g.upsilon_hat * (n_total as f64 / g.n as f64)).collect();
        let upsilon = direct_sum(&blocks)?;
        Ok(Self { dims, groups, n_total, r_hat, upsilon })
    }

    /// Pooling factor `N / n_i` of group `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.n_total as f64 / self.groups[i].n as f64
    }
}

pub fn pooled_moments(groups: &[GroupSample]) -> Result<PooledMoments> {
    if groups.is_empty() {
        return Err(Error::Argument("at least one group is required".into()));
    }
    let d = groups[0].d();
    if let Some(g) = groups.iter().find(|g| g.d() != d) {
        return Err(Error::Dimension(format!("groups have different dimensions ({d} and {})", g.d())));
    }
    let sets = groups.iter().map(MomentSet::estimate).collect::<Result<Vec<_>>>()?;
    PooledMoments::from_moment_sets(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_sample(n: usize, d: usize, seed: u64) -> GroupSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rng.random_range(-0.4..0.4) });
        let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        GroupSample::new(z * mix).unwrap()
    }

    // literal double loop of the displayed estimator
    fn sigma_hat_oracle(x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, d) = x.shape();
        let p = d * (d + 1) / 2;
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += x[(i, j)] / n as f64;
            }
        }
        let prods: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = Vec::with_capacity(p);
                for j in 0..d {
                    for k in j..d {
                        v.push((x[(i, j)] - mean[j]) * (x[(i, k)] - mean[k]));
                    }
                }
                v
            })
            .collect();
        let mut avg = vec![0.0; p];
        for v in &prods {
            for (a, b) in avg.iter_mut().zip(v) {
                *a += b / n as f64;
            }
        }
        let mut s = DMatrix::zeros(p, p);
        for v in &prods {
            for a in 0..p {
                for b in 0..p {
                    s[(a, b)] += (v[a] - avg[a]) * (v[b] - avg[b]) / (n as f64 - 1.0);
                }
            }
        }
        s
    }

    fn pearson_oracle(x: &DMatrix<f64>, j: usize, k: usize) -> f64 {
        let n = x.nrows();
        let mj: f64 = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
        let mk: f64 = (0..n).map(|i| x[(i, k)]).sum::<f64>() / n as f64;
        let mut sjk = 0.0;
        let mut sjj = 0.0;
        let mut skk = 0.0;
        for i in 0..n {
            sjk += (x[(i, j)] - mj) * (x[(i, k)] - mk);
            sjj += (x[(i, j)] - mj).powi(2);
            skk += (x[(i, k)] - mk).powi(2);
        }
        sjk / (sjj * skk).sqrt()
    }

    #[test]
    fn two_point_sample() {
        let g = GroupSample::from_rows(2, 2, &[0.0, 0.0, 2.0, 2.0]).unwrap();
        let m = sample_moments(&g).unwrap();
        assert_eq!(m.cov, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        assert!((m.r_hat[0] - 1.0).abs() < 1e-15);
        let s = sigma_hat(&g).unwrap();
        // both centered products coincide, so the estimate vanishes
        assert_eq!(s, DMatrix::zeros(3, 3));
    }

    #[test]
    fn constant_column_is_rejected() {
        let err = GroupSample::from_rows(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap_err();
        assert_eq!(err, Error::ZeroVariance { column: 2 });
        assert!(matches!(GroupSample::from_rows(1, 2, &[1.0, 2.0]), Err(Error::DegenerateData(_))));
        assert!(matches!(GroupSample::from_rows(2, 2, &[1.0, f64::NAN, 2.0, 3.0]), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn correlations_match_pearson_oracle() {
        let g = random_sample(50, 4, 3);
        let m = sample_moments(&g).unwrap();
        for (pos, (j, k)) in matops::off_diagonal_pairs(4).into_iter().enumerate() {
            assert!((m.r_hat[pos] - pearson_oracle(g.data(), j, k)).abs() < 1e-12);
        }
        assert!(m.corr.diagonal().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigma_hat_matches_literal_formula() {
        for (n, d, seed) in [(2, 2, 1), (7, 3, 2), (40, 4, 3), (25, 5, 4)] {
            let g = random_sample(n, d, seed);
            let s = sigma_hat(&g).unwrap();
            let o = sigma_hat_oracle(g.data());
            assert!((&s - &o).abs().max() < 1e-12, "n={n} d={d}");
        }
    }

    #[test]
    fn sigma_hat_normal_fourth_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let z = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = sigma_hat(&GroupSample::new(z).unwrap()).unwrap();
        // Var(X²) = 2 for a standard normal
        assert!((s[(0, 0)] - 2.0).abs() < 0.1, "{}", s[(0, 0)]);
    }

    #[test]
    fn m_transform_d2_closed_form() {
        let rho = 0.3;
        let dims = Dims::new(2, 1).unwrap();
        let m = m_transform(&DVector::from_vec(vec![1.0, rho, 1.0]), &DVector::from_vec(vec![rho]), dims).unwrap();
        let want = [-rho / 2.0, 1.0, -rho / 2.0];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn m_transform_diagonal_v_has_no_diagonal_columns() {
        let dims = Dims::new(3, 1).unwrap();
        let v = matops::vech(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]))).unwrap();
        let m = m_transform(&v, &DVector::zeros(3), dims).unwrap();
        for a in matops::index_vectors(3).unwrap().diag {
            assert!(m.column(a - 1).iter().all(|&x| x == 0.0));
        }
        assert!(matches!(
            m_transform(&DVector::from_vec(vec![0.0, 0.0, 1.0]), &DVector::zeros(1), Dims::new(2, 1).unwrap()),
            Err(Error::ZeroVariance { column: 1 })
        ));
    }

    fn correlation_map(v: &DVector<f64>, d: usize) -> DVector<f64> {
        let cov = matops::unvech(v, d).unwrap();
        matops::vech_minus(&correlation_from_covariance(&cov).unwrap()).unwrap()
    }

    #[test]
    fn m_transform_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in 2..=4 {
            let dims = Dims::new(d, 1).unwrap();
            for _ in 0..10 {
                let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                let v_mat = &b * b.transpose() + DMatrix::identity(d, d) * 0.5;
                let v = matops::vech(&v_mat).unwrap();
                let r = correlation_map(&v, d);
                let m = m_transform(&v, &r, dims).unwrap();
                let h = 1e-6;
                for c in 0..dims.p {
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[c] += h;
                    vm[c] -= h;
                    let col = (correlation_map(&vp, d) - correlation_map(&vm, d)) / (2.0 * h);
                    assert!((col - m.column(c)).abs().max() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn pooling_factors() {
        let g1 = random_sample(30, 3, 1);
        let single = pooled_moments(std::slice::from_ref(&g1)).unwrap();
        assert!((&single.upsilon - &single.groups[0].upsilon_hat).abs().max() < 1e-15);

        let g2 = random_sample(30, 3, 2);
        let pm = pooled_moments(&[g1, g2]).unwrap();
        assert_eq!(pm.n_total, 60);
        assert_eq!(pm.r_hat.len(), 6);
        let u1 = &pm.groups[0].upsilon_hat * 2.0;
        let u2 = &pm.groups[1].upsilon_hat * 2.0;
        assert!((pm.upsilon.view((0, 0), (3, 3)) - u1).abs().max() < 1e-15);
        assert!((pm.upsilon.view((3, 3), (3, 3)) - u2).abs().max() < 1e-15);
        assert!(pm.upsilon.view((0, 3), (3, 3)).iter().all(|&v| v == 0.0));
        assert!(pm.upsilon.view((3, 0), (3, 3)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let err = pooled_moments(&[random_sample(10, 3, 1), random_sample(10, 4, 2)]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn upsilon_limit_for_independent_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let z = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pm = pooled_moments(&[GroupSample::new(z).unwrap()]).unwrap();
        let expect = DMatrix::<f64>::identity(3, 3);
        assert!((&pm.upsilon - expect).abs().max() < 0.05, "{}", pm.upsilon);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..5 {
            let g = random_sample(40, 4, seed);
            let scale = DVector::from_fn(4, |_, _| rng.random_range(0.1..10.0));
            let scaled = GroupSample::new(g.data() * DMatrix::from_diagonal(&scale)).unwrap();
            let a = MomentSet::estimate(&g).unwrap();
            let b = MomentSet::estimate(&scaled).unwrap();
            assert!((a.r_hat() - b.r_hat()).abs().max() < 1e-10);
            assert!((&a.upsilon_hat - &b.upsilon_hat).abs().max() < 1e-10);
        }
    }

    #[test]
    fn sigma_and_upsilon_are_psd() {
        for seed in 0..5 {
            let m = MomentSet::estimate(&random_sample(12, 5, seed)).unwrap();
            for mat in [&m.sigma_hat, &m.upsilon_hat] {
                assert_eq!(mat, &mat.transpose());
                let ev = sym_eigenvalues(mat);
                assert!(ev.last().unwrap() >= &(-1e-8 * ev[0]));
            }
            let direct = &m.m_hat * &m.sigma_hat * m.m_hat.transpose();
            assert!((direct - &m.upsilon_hat).abs().max() < 1e-12);
        }
    }
}
