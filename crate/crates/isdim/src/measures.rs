//! Gaussian measures, their exact divergences, and the one-dimensional
//! small-parameter rate for the second moment of the density.
//!
//! Diagonal Gaussians carry one variance per coordinate and drive the
//! spectral paths of the inverse-problem and filtering modules. Dense
//! Gaussians carry a full covariance and are simultaneously diagonalized
//! against the proposal before any divergence is evaluated. Divergences are
//! computed in the log domain and exponentiated only at the boundary.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::NeumaierSum;
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Relative tolerance for declaring a dense covariance symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Guard margin on the variance-ratio test `s^2 < 2 t^2` that decides
/// whether the chi-square divergence between Gaussians is finite.
pub const INTEGRABILITY_GUARD: f64 = 1e-12;

/// Gaussian with independent coordinates, stored as per-coordinate mean and
/// variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    /// Build from mean and variance vectors of equal length; every variance
    /// must be strictly positive and finite.
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, variance has length {}",
                mean.len(),
                variance.len()
            )));
        }
        if mean.is_empty() {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        for (i, &v) in variance.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "variance[{i}] = {v} must be strictly positive"
                )));
            }
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("mean must be finite".into()));
        }
        Ok(Self { mean, variance })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Draw `n` i.i.d. samples; row `i` of the returned matrix is draw `i`.
    /// Deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let d = self.dim();
        let mut rng = rng::stream(seed, tag::SAMPLE, 0);
        let mut out = DMatrix::zeros(n, d);
        let mut row = vec![0.0; d];
        for i in 0..n {
            self.sample_into(&mut rng, &mut row);
            for j in 0..d {
                out[(i, j)] = row[j];
            }
        }
        out
    }

    /// Write one draw into `out` using the supplied generator.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        for j in 0..self.dim() {
            let z: f64 = rng.sample(StandardNormal);
            out[j] = self.mean[j] + self.variance[j].sqrt() * z;
        }
    }

    /// Log density up to the normalizing constant of dimension.
    pub fn log_pdf(&self, u: &[f64]) -> f64 {
        let mut acc = NeumaierSum::new();
        for j in 0..self.dim() {
            let d = u[j] - self.mean[j];
            acc.add(-0.5 * d * d / self.variance[j] - 0.5 * self.variance[j].ln());
        }
        acc.total() - 0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Gaussian with a full symmetric positive-definite covariance.
///
/// The Cholesky factor is computed at construction; failure to factorize is
/// reported as a definiteness error and no half-built value escapes.
#[derive(Debug, Clone)]
pub struct DenseGaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl DenseGaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {d}, covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        check_symmetric(&covariance)?;
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| {
                Error::NotPositiveDefinite("covariance failed Cholesky factorization".into())
            })?
            .unpack();
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Draw `n` i.i.d. samples via the symmetric factor `L` with
    /// `covariance = L L^T`; row `i` is draw `i`. Deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let d = self.dim();
        let mut rng = rng::stream(seed, tag::SAMPLE, 0);
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            for j in 0..d {
                z[j] = rng.sample::<f64, _>(StandardNormal);
            }
            let x = &self.mean + &self.chol * &z;
            for j in 0..d {
                out[(i, j)] = x[j];
            }
        }
        out
    }

    /// Write one draw into `out` using the supplied generator.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let mut z = DVector::zeros(d);
        for j in 0..d {
            z[j] = rng.sample::<f64, _>(StandardNormal);
        }
        let x = &self.mean + &self.chol * &z;
        for j in 0..d {
            out[j] = x[j];
        }
    }

    /// Marginal distribution of coordinate `j`.
    pub fn marginal(&self, j: usize) -> (f64, f64) {
        (self.mean[j], self.covariance[(j, j)])
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotPositiveDefinite(format!(
                    "covariance asymmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Either Gaussian representation; returned by posterior computations so
/// diagonal problems stay on the O(d) spectral path.
#[derive(Debug, Clone)]
pub enum Gaussian {
    Diagonal(DiagonalGaussian),
    Dense(DenseGaussian),
}

impl Gaussian {
    pub fn dim(&self) -> usize {
        match self {
            Gaussian::Diagonal(g) => g.dim(),
            Gaussian::Dense(g) => g.dim(),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        match self {
            Gaussian::Diagonal(g) => g.sample(n, seed),
            Gaussian::Dense(g) => g.sample(n, seed),
        }
    }

    pub fn as_diagonal(&self) -> Option<&DiagonalGaussian> {
        match self {
            Gaussian::Diagonal(g) => Some(g),
            Gaussian::Dense(_) => None,
        }
    }

    pub fn as_dense(&self) -> Option<&DenseGaussian> {
        match self {
            Gaussian::Dense(g) => Some(g),
            Gaussian::Diagonal(_) => None,
        }
    }
}

/// Log of `rho = pi(g^2)/pi(g)^2` for Gaussian target and proposal of the
/// same kind, by exact integration.
///
/// Dense pairs are simultaneously diagonalized: the pair is whitened by the
/// proposal's Cholesky factor and rotated into the eigenbasis of the
/// whitened target covariance, after which the problem is a product of
/// one-dimensional mean-and-variance shifts.
pub fn log_rho_gaussian(target: &Gaussian, proposal: &Gaussian) -> Result<f64> {
    match (target, proposal) {
        (Gaussian::Diagonal(t), Gaussian::Diagonal(p)) => log_rho_diag(t, p),
        (Gaussian::Dense(t), Gaussian::Dense(p)) => log_rho_dense(t, p),
        _ => Err(Error::InvalidParameter(
            "target and proposal must be the same kind of Gaussian".into(),
        )),
    }
}

/// Chi-square divergence `D(target || proposal) = rho - 1` for Gaussians of
/// the same kind.
///
/// Errors with [`Error::NonIntegrable`] when some target variance reaches
/// twice the proposal variance in the simultaneously diagonalized frame, the
/// exact condition under which `pi(g^2)` diverges.
pub fn chi2_divergence(target: &Gaussian, proposal: &Gaussian) -> Result<f64> {
    Ok(log_rho_gaussian(target, proposal)?.exp_m1())
}

fn log_rho_diag(target: &DiagonalGaussian, proposal: &DiagonalGaussian) -> Result<f64> {
    if target.dim() != proposal.dim() {
        return Err(Error::DimensionMismatch(format!(
            "target dim {} vs proposal dim {}",
            target.dim(),
            proposal.dim()
        )));
    }
    let mut acc = NeumaierSum::new();
    for j in 0..target.dim() {
        acc.add(log_rho_1d(
            target.mean[j],
            target.variance[j],
            proposal.mean[j],
            proposal.variance[j],
        )?);
    }
    Ok(acc.total())
}

fn log_rho_dense(target: &DenseGaussian, proposal: &DenseGaussian) -> Result<f64> {
    if target.dim() != proposal.dim() {
        return Err(Error::DimensionMismatch(format!(
            "target dim {} vs proposal dim {}",
            target.dim(),
            proposal.dim()
        )));
    }
    // Whiten by the proposal: z = L^{-1} (x - m_p) maps the proposal to
    // N(0, I) and the target to N(w, B).
    let l = &proposal.chol;
    let diff = target.mean() - proposal.mean();
    let w = solve_lower(l, &diff);
    let tc = solve_lower_matrix(l, target.covariance());
    // B = L^{-1} C_t L^{-T}, assembled as (L^{-1} (L^{-1} C_t)^T)^T.
    let b = solve_lower_matrix(l, &tc.transpose());
    let b = symmetrize(&b);
    let eig = SymmetricEigen::new(b);
    let a_rot = eig.eigenvectors.transpose() * w;
    let mut acc = NeumaierSum::new();
    for j in 0..target.dim() {
        let d = eig.eigenvalues[j];
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "whitened target covariance has eigenvalue {d}"
            )));
        }
        acc.add(log_rho_1d(a_rot[j], d, 0.0, 1.0)?);
    }
    Ok(acc.total())
}

/// One-dimensional exact `log rho` for target `N(a, s2)` against proposal
/// `N(b, t2)`: finite exactly when `s2 < 2 t2`, in which case
/// `log rho = log t2 - log s - log sqrt(2 t2 - s2) + (a-b)^2/(2 t2 - s2)`.
fn log_rho_1d(a: f64, s2: f64, b: f64, t2: f64) -> Result<f64> {
    if s2 / t2 >= 2.0 - INTEGRABILITY_GUARD {
        return Err(Error::NonIntegrable(format!(
            "target variance {s2} is not below twice the proposal variance {t2}"
        )));
    }
    let denom = 2.0 * t2 - s2;
    let diff = a - b;
    Ok(t2.ln() - 0.5 * s2.ln() - 0.5 * denom.ln() + diff * diff / denom)
}

/// Kullback-Leibler divergence of a posterior from its centered prior via
/// the spectral identity
/// `2 KL = sum log(1 + lambda_j) - sum lambda_j/(1 + lambda_j) + m^T Sigma^{-1} m`,
/// where `lambda` is the spectrum of the operator `A` and `m` the posterior
/// mean in the prior's coordinates.
pub fn kl_posterior_prior(a_spectrum: &[f64], m: &[f64], sigma: &DiagonalGaussian) -> Result<f64> {
    if a_spectrum.len() != sigma.dim() || m.len() != sigma.dim() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum len {}, mean len {}, prior dim {}",
            a_spectrum.len(),
            m.len(),
            sigma.dim()
        )));
    }
    let mut acc = NeumaierSum::new();
    for j in 0..sigma.dim() {
        let lam = a_spectrum[j];
        if !(lam >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spectrum entry {lam} must be nonnegative"
            )));
        }
        acc.add(lam.ln_1p() - lam / (1.0 + lam));
        acc.add(m[j] * m[j] / sigma.variance[j]);
    }
    Ok(0.5 * acc.total())
}

/// Scalar potential `h` with known minimizer and curvature, driving the
/// singular-limit family `g_eps(u) = exp(-h(u)/eps)`.
#[derive(Clone)]
pub struct ScalarPotential {
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    u_star: f64,
    h_pp: f64,
}

impl std::fmt::Debug for ScalarPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarPotential")
            .field("u_star", &self.u_star)
            .field("h_pp", &self.h_pp)
            .finish()
    }
}

impl ScalarPotential {
    /// Build from an evaluation rule, the minimizer `u_star` and the
    /// curvature `h''(u_star)`.
    ///
    /// Checks `h_pp > 0` and that `h(u_star)` does not exceed `h` on a
    /// sampled grid around `u_star`, with `h` nonnegative there.
    pub fn new(
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u_star: f64,
        h_pp: f64,
    ) -> Result<Self> {
        if !(h_pp > 0.0) || !h_pp.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "curvature h''(u*) = {h_pp} must be strictly positive"
            )));
        }
        let h_star = h(u_star);
        let spread = u_star.abs().max(1.0);
        for k in -20..=20i32 {
            let u = u_star + 0.15 * spread * k as f64;
            let hu = h(u);
            if hu < -1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "potential is negative at u = {u}: h = {hu}"
                )));
            }
            if h_star > hu + 1e-9 * (1.0 + hu.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "u* = {u_star} is not a minimizer: h(u*) = {h_star} > h({u}) = {hu}"
                )));
            }
        }
        Ok(Self {
            h: Arc::new(h),
            u_star,
            h_pp,
        })
    }

    /// The quadratic well `h(u) = h_pp (u - u_star)^2 / 2`.
    pub fn quadratic(u_star: f64, h_pp: f64) -> Result<Self> {
        Self::new(
            move |u| 0.5 * h_pp * (u - u_star) * (u - u_star),
            u_star,
            h_pp,
        )
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.h)(u)
    }

    pub fn u_star(&self) -> f64 {
        self.u_star
    }

    pub fn h_pp(&self) -> f64 {
        self.h_pp
    }

    /// True when the potential does not vary on the check grid; the
    /// singular-limit machinery short-circuits this case to `rho = 1`.
    pub fn is_constant_on_grid(&self) -> bool {
        let spread = self.u_star.abs().max(1.0);
        let h0 = self.eval(self.u_star);
        (-20..=20i32).all(|k| {
            let u = self.u_star + 0.15 * spread * k as f64;
            (self.eval(u) - h0).abs() <= 1e-14 * (1.0 + h0.abs())
        })
    }
}

/// Asymptotic rate `sqrt(h''(u*) / (4 pi eps))` at which `rho` grows in the
/// singular limit `eps -> 0`.
///
/// This is an order-of-magnitude rate: the O(1) factor involving the
/// proposal density at `u_star` is deliberately omitted, so only the
/// `eps^{-1/2}` exponent is contractual. Multiplying by `sqrt(eps)` gives a
/// quantity exactly constant in `eps`.
pub fn laplace_rho_rate(p: &ScalarPotential, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must be strictly positive"
        )));
    }
    Ok((p.h_pp() / (4.0 * std::f64::consts::PI * epsilon)).sqrt())
}

pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

pub(crate) fn solve_lower_matrix(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorization that surfaces failures as crate errors.
pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} failed Cholesky factorization")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, simpson};

    fn normal_density(x: f64, m: f64, var: f64) -> f64 {
        (-0.5 * (x - m) * (x - m) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    fn normal_log_density(x: f64, m: f64, var: f64) -> f64 {
        -0.5 * (x - m) * (x - m) / var
            - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
    }

    #[test]
    fn chi2_matches_brute_quadrature() {
        // Independent oracle: integrate target^2 / proposal directly, in
        // the log domain so the far tails underflow to zero cleanly.
        for &(a, s2, b, t2) in &[(0.8, 0.9, -0.2, 1.1), (0.0, 1.5, 0.0, 1.0), (2.0, 0.4, 1.0, 0.7)]
        {
            let target = Gaussian::Diagonal(DiagonalGaussian::new(vec![a], vec![s2]).unwrap());
            let proposal = Gaussian::Diagonal(DiagonalGaussian::new(vec![b], vec![t2]).unwrap());
            let rho_closed = log_rho_gaussian(&target, &proposal).unwrap().exp();
            let rho_quad = simpson(
                |x| {
                    (2.0 * normal_log_density(x, a, s2) - normal_log_density(x, b, t2)).exp()
                },
                -60.0,
                60.0,
                400_000,
            );
            assert!(
                (rho_closed - rho_quad).abs() < 1e-9 * rho_quad,
                "closed {rho_closed} vs quadrature {rho_quad}"
            );
        }
    }

    #[test]
    fn kl_matches_brute_quadrature() {
        // One coordinate of the posterior/prior family: lambda = 1.7 with
        // whitened datum z = 0.9.
        let (lam, z) = (1.7f64, 0.9);
        let post_m = lam.sqrt() * z / (1.0 + lam);
        let post_v = 1.0 / (1.0 + lam);
        let prior = DiagonalGaussian::standard(1);
        let kl = kl_posterior_prior(&[lam], &[post_m], &prior).unwrap();
        let kl_quad = simpson(
            |x| {
                let p = normal_density(x, post_m, post_v);
                let q = normal_density(x, 0.0, 1.0);
                if p > 0.0 {
                    p * (p / q).ln()
                } else {
                    0.0
                }
            },
            -40.0,
            40.0,
            400_000,
        );
        assert!(
            (kl - kl_quad).abs() < 1e-9 * (1.0 + kl_quad),
            "identity {kl} vs quadrature {kl_quad}"
        );
    }

    #[test]
    fn diag_rejects_zero_variance() {
        let err = DiagonalGaussian::new(vec![1.0, 2.0], vec![0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
    }

    #[test]
    fn diag_rejects_length_mismatch() {
        let err = DiagonalGaussian::new(vec![1.0], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn sample_mean_converges_in_one_dim() {
        let g = DiagonalGaussian::standard(1);
        let draws = g.sample(1_000_000, 31);
        let m = draws.column(0).iter().sum::<f64>() / 1e6;
        assert!(m.abs() < 4e-3, "sample mean {m}");
    }

    #[test]
    fn sample_is_bit_deterministic() {
        let g = DiagonalGaussian::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let a = g.sample(100, 7);
        let b = g.sample(100, 7);
        assert_eq!(a, b);
        let c = g.sample(100, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn dense_identity_sample_covariance() {
        let g = DenseGaussian::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let n = 100_000;
        let draws = g.sample(n, 11);
        let mut worst = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                let ma = mean(draws.column(a).as_slice());
                let mb = mean(draws.column(b).as_slice());
                let mut acc = NeumaierSum::new();
                for i in 0..n {
                    acc.add((draws[(i, a)] - ma) * (draws[(i, b)] - mb));
                }
                let cov = acc.total() / (n - 1) as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((cov - target).abs());
            }
        }
        assert!(worst < 0.02, "max-entry deviation {worst}");
    }

    #[test]
    fn dense_rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            DenseGaussian::new(DVector::zeros(2), asym).unwrap_err(),
            Error::NotPositiveDefinite(_)
        ));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            DenseGaussian::new(DVector::zeros(2), indef).unwrap_err(),
            Error::NotPositiveDefinite(_)
        ));
    }

    #[test]
    fn chi2_identical_measures_is_zero() {
        let g = Gaussian::Diagonal(DiagonalGaussian::new(vec![0.3, -1.0], vec![2.0, 0.7]).unwrap());
        let d = chi2_divergence(&g, &g).unwrap();
        assert!(d.abs() < 1e-12, "chi2 = {d}");
    }

    #[test]
    fn chi2_unit_mean_shift_is_e_minus_one() {
        let t = Gaussian::Diagonal(DiagonalGaussian::new(vec![1.0], vec![1.0]).unwrap());
        let p = Gaussian::Diagonal(DiagonalGaussian::standard(1));
        let d = chi2_divergence(&t, &p).unwrap();
        assert!(
            (d - (std::f64::consts::E - 1.0)).abs() < 1e-12,
            "chi2 = {d}"
        );
    }

    #[test]
    fn chi2_detects_non_integrable_variance_ratio() {
        let t = Gaussian::Diagonal(DiagonalGaussian::new(vec![0.0], vec![3.0]).unwrap());
        let p = Gaussian::Diagonal(DiagonalGaussian::standard(1));
        assert!(matches!(
            chi2_divergence(&t, &p).unwrap_err(),
            Error::NonIntegrable(_)
        ));
        // Boundary case s2 = 2 t2 is excluded by the strict test.
        let t2 = Gaussian::Diagonal(DiagonalGaussian::new(vec![0.0], vec![2.0]).unwrap());
        assert!(chi2_divergence(&t2, &p).is_err());
    }

    #[test]
    fn dense_and_diagonal_routes_agree() {
        let mean = vec![0.4, -0.2, 1.1];
        let var = vec![0.8, 1.3, 0.6];
        let t_diag = Gaussian::Diagonal(DiagonalGaussian::new(mean.clone(), var.clone()).unwrap());
        let p_diag = Gaussian::Diagonal(DiagonalGaussian::standard(3));
        let t_dense = Gaussian::Dense(
            DenseGaussian::new(
                DVector::from_vec(mean),
                DMatrix::from_diagonal(&DVector::from_vec(var)),
            )
            .unwrap(),
        );
        let p_dense = Gaussian::Dense(
            DenseGaussian::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap(),
        );
        let a = log_rho_gaussian(&t_diag, &p_diag).unwrap();
        let b = log_rho_gaussian(&t_dense, &p_dense).unwrap();
        assert!((a - b).abs() < 1e-10, "diag {a} vs dense {b}");
    }

    #[test]
    fn kl_zero_spectrum_zero_mean_is_zero() {
        let prior = DiagonalGaussian::standard(4);
        let kl = kl_posterior_prior(&[0.0; 4], &[0.0; 4], &prior).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn kl_flat_large_spectrum_matches_plugin_value() {
        let k = 5;
        let c = 100.0;
        let prior = DiagonalGaussian::standard(k);
        let kl = kl_posterior_prior(&vec![c; k], &vec![0.0; k], &prior).unwrap();
        let expect = k as f64 / 2.0 * ((101.0f64).ln() - 100.0 / 101.0);
        assert!((kl - expect).abs() < 1e-12, "kl {kl} vs {expect}");
    }

    #[test]
    fn exp_kl_never_exceeds_rho_on_random_diagonal_instances() {
        use rand::Rng;
        let mut r = rng::stream(2024, 99, 0);
        for _ in 0..100 {
            let d = r.gen_range(1..=6);
            let lam: Vec<f64> = (0..d).map(|_| r.gen_range(0.0..4.0)).collect();
            let z: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            // Unit prior, forward sqrt(lambda), unit noise: posterior mean
            // and variance per coordinate follow directly.
            let prior = DiagonalGaussian::standard(d);
            let post_mean: Vec<f64> = lam
                .iter()
                .zip(&z)
                .map(|(&l, &zj)| l.sqrt() * zj / (1.0 + l))
                .collect();
            let post_var: Vec<f64> = lam.iter().map(|&l| 1.0 / (1.0 + l)).collect();
            let post = DiagonalGaussian::new(post_mean.clone(), post_var).unwrap();
            let kl = kl_posterior_prior(&lam, &post_mean, &prior).unwrap();
            let log_rho =
                log_rho_gaussian(&Gaussian::Diagonal(post), &Gaussian::Diagonal(prior)).unwrap();
            assert!(
                kl <= log_rho + 1e-12,
                "exp(KL) must not exceed rho: kl={kl} log_rho={log_rho}"
            );
        }
    }

    #[test]
    fn laplace_rate_unit_cancellation() {
        let p = ScalarPotential::quadratic(0.0, 1.0).unwrap();
        let r = laplace_rho_rate(&p, 1.0 / (4.0 * std::f64::consts::PI)).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laplace_rate_plugin_value() {
        let p = ScalarPotential::quadratic(0.0, 1.0).unwrap();
        let r = laplace_rho_rate(&p, 1e-3).unwrap();
        assert!((r - 8.920620580763855).abs() < 1e-9, "rate {r}");
    }

    #[test]
    fn laplace_rate_sqrt_scaling() {
        let p = ScalarPotential::quadratic(0.3, 2.5).unwrap();
        let r1 = laplace_rho_rate(&p, 0.01).unwrap();
        let r4 = laplace_rho_rate(&p, 0.04).unwrap();
        assert!((r4 - 0.5 * r1).abs() < 1e-12);
        // rate * sqrt(eps) is constant in eps
        for &e in &[1e-1, 1e-3, 1e-6] {
            let c = laplace_rho_rate(&p, e).unwrap() * e.sqrt();
            let c0 = laplace_rho_rate(&p, 1.0).unwrap();
            assert!((c - c0).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_rejects_wrong_minimizer() {
        assert!(ScalarPotential::new(|u| (u - 2.0) * (u - 2.0), 0.0, 1.0).is_err());
        assert!(ScalarPotential::new(|u| u * u, 0.0, 0.0).is_err());
    }
}
