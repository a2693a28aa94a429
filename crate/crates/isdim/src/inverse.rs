//! Linear-Gaussian Bayesian inverse problems `y = K u + eta` with prior
//! `N(0, Sigma)` and noise `N(0, Gamma)`.
//!
//! Everything is organized around the operator `A = S* S` with
//! `S = Gamma^{-1/2} K Sigma^{1/2}`. Its trace `tau` and the trace of
//! `(I + A)^{-1} A`, called `efd`, are the intrinsic dimensions of the
//! problem: they measure the change from prior to posterior in units of the
//! prior, are finite together, and control the cost of importance sampling
//! with the prior as proposal. For simultaneously diagonal problems the
//! second moment `rho` of the posterior-prior density has an exact
//! expression in the spectrum of `A` and the whitened data, which the
//! scaling sweeps exploit to cover small-noise, large-dimension and
//! regularity limits at O(d) cost per grid point.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::math::{quartiles, LineFit, NeumaierSum};
use crate::measures::{
    cholesky, log_rho_gaussian, symmetrize, DenseGaussian, DiagonalGaussian, Gaussian,
};
use crate::rng::{self, tag};
use crate::sampler::{Model, TestFunction};
use crate::{Error, Result};

/// Relative tolerance for the covariance-route vs precision-route posterior
/// consistency check.
pub const POSTERIOR_ROUTE_TOL: f64 = 1e-8;

/// Condition-number ceiling on the noise covariance before `operator_a`
/// refuses to whiten by it.
pub const GAMMA_CONDITION_LIMIT: f64 = 1e12;

/// Relative change under truncation doubling below which a `d = infinity`
/// surrogate counts as converged.
pub const TRUNCATION_RTOL: f64 = 0.005;

/// Largest dimension accepted on the dense O(d^3) path.
pub const DENSE_DIMENSION_LIMIT: usize = 1000;

/// Spectrum entries below this are flushed to zero to avoid denormal drag
/// in large-`d` sweeps.
const SPECTRUM_FLUSH: f64 = 1e-300;

/// A linear inverse problem `(K, Sigma, Gamma)` in per-coordinate or dense
/// form.
#[derive(Debug, Clone)]
pub enum LinearGaussianIP {
    /// Simultaneously diagonal problem: `K` acts coordinatewise by `k`,
    /// the prior has variances `sigma` and the noise variances `gamma`.
    Diagonal {
        k: Vec<f64>,
        sigma: Vec<f64>,
        gamma: Vec<f64>,
    },
    /// General problem with `K` of shape `d_y x d_u` and SPD covariances.
    Dense {
        k: DMatrix<f64>,
        sigma: DMatrix<f64>,
        gamma: DMatrix<f64>,
    },
}

impl LinearGaussianIP {
    pub fn diagonal(k: Vec<f64>, sigma: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let d = k.len();
        if sigma.len() != d || gamma.len() != d || d == 0 {
            return Err(Error::DimensionMismatch(format!(
                "k, sigma, gamma must share a positive length; got {}, {}, {}",
                d,
                sigma.len(),
                gamma.len()
            )));
        }
        for (name, v) in [("sigma", &sigma), ("gamma", &gamma)] {
            if let Some((i, &bad)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
                return Err(Error::NotPositiveDefinite(format!("{name}[{i}] = {bad}")));
            }
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("k must be finite".into()));
        }
        Ok(Self::Diagonal { k, sigma, gamma })
    }

    /// The dense path is reserved for dimensions up to
    /// [`DENSE_DIMENSION_LIMIT`]; larger problems belong on the O(d)
    /// spectral path of the diagonal form.
    pub fn dense(k: DMatrix<f64>, sigma: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let (d_y, d_u) = (k.nrows(), k.ncols());
        if d_u.max(d_y) > DENSE_DIMENSION_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "dense problems are limited to dimension {DENSE_DIMENSION_LIMIT}; \
                 got {d_u}x{d_y} (use the diagonal form)"
            )));
        }
        if sigma.nrows() != d_u || sigma.ncols() != d_u {
            return Err(Error::DimensionMismatch(format!(
                "Sigma must be {d_u}x{d_u} for K of shape {d_y}x{d_u}"
            )));
        }
        if gamma.nrows() != d_y || gamma.ncols() != d_y {
            return Err(Error::DimensionMismatch(format!(
                "Gamma must be {d_y}x{d_y} for K of shape {d_y}x{d_u}"
            )));
        }
        // SPD checks happen via Cholesky; failures surface as errors here.
        cholesky(&sigma, "prior covariance Sigma")?;
        cholesky(&gamma, "noise covariance Gamma")?;
        Ok(Self::Dense { k, sigma, gamma })
    }

    /// `(d_u, d_y)`: state and data dimensions.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Diagonal { k, .. } => (k.len(), k.len()),
            Self::Dense { k, .. } => (k.ncols(), k.nrows()),
        }
    }

    /// Dense problem from row-major nested vectors.
    pub fn dense_from_rows(k: &[Vec<f64>], sigma: &[Vec<f64>], gamma: &[Vec<f64>]) -> Result<Self> {
        Self::dense(
            rows_to_matrix(k)?,
            rows_to_matrix(sigma)?,
            rows_to_matrix(gamma)?,
        )
    }

    /// The prior `N(0, Sigma)`.
    pub fn prior(&self) -> Result<Gaussian> {
        match self {
            Self::Diagonal { sigma, .. } => Ok(Gaussian::Diagonal(DiagonalGaussian::new(
                vec![0.0; sigma.len()],
                sigma.clone(),
            )?)),
            Self::Dense { sigma, .. } => Ok(Gaussian::Dense(DenseGaussian::new(
                DVector::zeros(sigma.nrows()),
                sigma.clone(),
            )?)),
        }
    }

    /// One data draw under the zero truth: `y = eta ~ N(0, Gamma)`.
    /// Deterministic in `seed`.
    pub fn truth_zero_data(&self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = rng::stream(seed, tag::DATA, 0);
        match self {
            Self::Diagonal { gamma, .. } => Ok(gamma
                .iter()
                .map(|&g| g.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect()),
            Self::Dense { gamma, .. } => {
                let g = DenseGaussian::new(DVector::zeros(gamma.nrows()), gamma.clone())?;
                let mut out = vec![0.0; gamma.nrows()];
                g.sample_into(&mut rng, &mut out);
                Ok(out)
            }
        }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(
            "matrix rows have unequal lengths".into(),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// The operator `A`, kept on the spectral path whenever the problem is
/// diagonal.
#[derive(Debug, Clone)]
pub enum OperatorA {
    /// Eigenvalues sorted in non-increasing order.
    Spectrum(Vec<f64>),
    /// Symmetric positive-semidefinite matrix `Sigma^{1/2} K* Gamma^{-1} K Sigma^{1/2}`.
    Matrix(DMatrix<f64>),
}

impl OperatorA {
    /// Eigenvalues in non-increasing order; tiny negatives from dense
    /// arithmetic are clamped to zero.
    pub fn spectrum(&self) -> Vec<f64> {
        match self {
            Self::Spectrum(s) => s.clone(),
            Self::Matrix(m) => {
                let eig = SymmetricEigen::new(m.clone());
                let mut s: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                s
            }
        }
    }
}

/// Derive `A` from the problem.
///
/// Diagonal problems give the sorted eigenvalue vector
/// `lambda_j = k_j^2 sigma_j / gamma_j`; dense problems assemble the
/// symmetric matrix, refusing noise covariances with condition number above
/// [`GAMMA_CONDITION_LIMIT`].
pub fn operator_a(ip: &LinearGaussianIP) -> Result<OperatorA> {
    match ip {
        LinearGaussianIP::Diagonal { k, sigma, gamma } => {
            let (gmin, gmax) = gamma.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &g| {
                (lo.min(g), hi.max(g))
            });
            if gmax / gmin > GAMMA_CONDITION_LIMIT {
                return Err(Error::IllConditioned(format!(
                    "noise covariance condition number {:.3e} exceeds 1e12",
                    gmax / gmin
                )));
            }
            let mut s: Vec<f64> = k
                .iter()
                .zip(sigma)
                .zip(gamma)
                .map(|((&kj, &sj), &gj)| flush(kj * kj * sj / gj))
                .collect();
            s.sort_by(|a, b| b.total_cmp(a));
            Ok(OperatorA::Spectrum(s))
        }
        LinearGaussianIP::Dense { k, sigma, gamma } => {
            let gamma_eig = SymmetricEigen::new(symmetrize(gamma));
            let gmax = gamma_eig.eigenvalues.max();
            let gmin = gamma_eig.eigenvalues.min();
            if !(gmin > 0.0) || gmax / gmin > GAMMA_CONDITION_LIMIT {
                return Err(Error::IllConditioned(format!(
                    "noise covariance condition number {:.3e} exceeds 1e12",
                    gmax / gmin.max(f64::MIN_POSITIVE)
                )));
            }
            let sigma_half = matrix_sqrt(sigma)?;
            let x = k * &sigma_half; // d_y x d_u
            let gamma_chol = cholesky(gamma, "noise covariance Gamma")?;
            let y = gamma_chol.solve(&x); // Gamma^{-1} K Sigma^{1/2}
            let a = symmetrize(&(x.transpose() * y));
            Ok(OperatorA::Matrix(a))
        }
    }
}

fn flush(x: f64) -> f64 {
    if x.abs() < SPECTRUM_FLUSH {
        0.0
    } else {
        x
    }
}

/// Symmetric square root via eigendecomposition.
pub(crate) fn matrix_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.min() < -1e-10 * eig.eigenvalues.max().abs() {
        return Err(Error::NotPositiveDefinite(
            "matrix square root of an indefinite matrix".into(),
        ));
    }
    let half = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&half) * eig.eigenvectors.transpose())
}

/// Intrinsic dimensions `tau = Tr(A)` and `efd = Tr((I + A)^{-1} A)`,
/// carried together with the spectrum they came from.
#[derive(Debug, Clone)]
pub struct IntrinsicDims {
    pub tau: f64,
    pub efd: f64,
    pub a_spectrum: Vec<f64>,
}

impl IntrinsicDims {
    pub fn from_spectrum(a_spectrum: Vec<f64>) -> Self {
        let mut tau = NeumaierSum::new();
        let mut efd = NeumaierSum::new();
        for &l in &a_spectrum {
            tau.add(l);
            efd.add(l / (1.0 + l));
        }
        Self {
            tau: tau.total(),
            efd: efd.total(),
            a_spectrum,
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.a_spectrum.iter().copied().fold(0.0, f64::max)
    }
}

/// `tau` and `efd` of an operator; the eigenvalue map `lambda -> lambda/(1+lambda)`
/// takes the spectrum of `A` to the spectrum of `(I + A)^{-1} A`.
pub fn intrinsic_dims(a: &OperatorA) -> IntrinsicDims {
    IntrinsicDims::from_spectrum(a.spectrum())
}

/// Posterior `N(m, C)` of the inverse problem given data `y`.
///
/// Computed through both the covariance formulas
/// `m = Sigma K* (K Sigma K* + Gamma)^{-1} y`,
/// `C = Sigma - Sigma K* (K Sigma K* + Gamma)^{-1} K Sigma`
/// and the precision formulas
/// `C^{-1} = Sigma^{-1} + K* Gamma^{-1} K`, `C^{-1} m = K* Gamma^{-1} y`.
/// The two routes must agree to [`POSTERIOR_ROUTE_TOL`] relative or an
/// internal-consistency error is raised.
pub fn posterior(ip: &LinearGaussianIP, y: &[f64]) -> Result<Gaussian> {
    let (_, d_y) = ip.dims();
    if y.len() != d_y {
        return Err(Error::DimensionMismatch(format!(
            "data has length {}, expected {d_y}",
            y.len()
        )));
    }
    match ip {
        LinearGaussianIP::Diagonal { k, sigma, gamma } => {
            let d = k.len();
            let mut mean = vec![0.0; d];
            let mut var = vec![0.0; d];
            let mut worst = 0.0f64;
            let mut scale = 0.0f64;
            for j in 0..d {
                let (kj, sj, gj) = (k[j], sigma[j], gamma[j]);
                let denom = kj * kj * sj + gj;
                let m_cov = sj * kj * y[j] / denom;
                let c_cov = sj - sj * kj * kj * sj / denom;
                let c_prec = 1.0 / (1.0 / sj + kj * kj / gj);
                let m_prec = c_prec * kj * y[j] / gj;
                worst = worst
                    .max((m_cov - m_prec).abs())
                    .max((c_cov - c_prec).abs());
                scale = scale.max(m_cov.abs()).max(c_cov.abs());
                mean[j] = m_cov;
                var[j] = c_cov;
            }
            if worst > POSTERIOR_ROUTE_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InternalInconsistency(format!(
                    "posterior covariance and precision routes differ by {worst:.3e}"
                )));
            }
            Ok(Gaussian::Diagonal(DiagonalGaussian::new(mean, var)?))
        }
        LinearGaussianIP::Dense { k, sigma, gamma } => {
            let yv = DVector::from_column_slice(y);
            // Covariance route.
            let ks = k * sigma; // d_y x d_u
            let gram = symmetrize(&(&ks * k.transpose())) + gamma; // K Sigma K* + Gamma
            let gram_chol = cholesky(&gram, "K Sigma K* + Gamma")?;
            let m_cov = ks.transpose() * gram_chol.solve(&yv);
            let c_cov = symmetrize(&(sigma - ks.transpose() * gram_chol.solve(&ks)));
            // Precision route.
            let sigma_chol = cholesky(sigma, "prior covariance Sigma")?;
            let gamma_chol = cholesky(gamma, "noise covariance Gamma")?;
            let prec = symmetrize(&(sigma_chol.inverse() + k.transpose() * gamma_chol.solve(k)));
            let prec_chol = cholesky(&prec, "posterior precision")?;
            let c_prec = symmetrize(&prec_chol.inverse());
            let m_prec = prec_chol.solve(&(k.transpose() * gamma_chol.solve(&yv)));

            let scale = c_cov
                .iter()
                .fold(0.0f64, |a, &x| a.max(x.abs()))
                .max(m_cov.iter().fold(0.0f64, |a, &x| a.max(x.abs())));
            let worst = (&c_cov - &c_prec)
                .iter()
                .fold(0.0f64, |a, &x| a.max(x.abs()))
                .max(
                    (&m_cov - &m_prec)
                        .iter()
                        .fold(0.0f64, |a, &x| a.max(x.abs())),
                );
            if worst > POSTERIOR_ROUTE_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InternalInconsistency(format!(
                    "covariance and precision routes differ by {worst:.3e} at scale {scale:.3e}"
                )));
            }
            Ok(Gaussian::Dense(DenseGaussian::new(m_cov, c_cov)?))
        }
    }
}

/// Unnormalized log density of the posterior with respect to the prior:
/// `log g(u; y) = -1/2 ||Gamma^{-1/2} K u||^2 + <Gamma^{-1/2} y, Gamma^{-1/2} K u>`.
pub fn log_g(ip: &LinearGaussianIP, u: &[f64], y: &[f64]) -> Result<f64> {
    let (d_u, d_y) = ip.dims();
    if u.len() != d_u || y.len() != d_y {
        return Err(Error::DimensionMismatch(format!(
            "state length {} (need {d_u}), data length {} (need {d_y})",
            u.len(),
            y.len()
        )));
    }
    match ip {
        LinearGaussianIP::Diagonal { k, gamma, .. } => {
            let mut acc = NeumaierSum::new();
            for j in 0..k.len() {
                let ku = k[j] * u[j];
                acc.add((-0.5 * ku * ku + y[j] * ku) / gamma[j]);
            }
            Ok(acc.total())
        }
        LinearGaussianIP::Dense { k, gamma, .. } => {
            let ku = k * DVector::from_column_slice(u);
            let gamma_chol = cholesky(gamma, "noise covariance Gamma")?;
            let ginv_ku = gamma_chol.solve(&ku);
            let yv = DVector::from_column_slice(y);
            Ok(-0.5 * ku.dot(&ginv_ku) + yv.dot(&ginv_ku))
        }
    }
}

/// Exact `log rho` for a simultaneously diagonal problem with operator
/// spectrum `lambda` and whitened data `z = Gamma^{-1/2} y`:
///
/// `log rho = sum_j [ log(1 + l_j) - log sqrt(1 + 2 l_j) ]
///          + sum_j [ 2 l_j/(1 + 2 l_j) - l_j/(1 + l_j) ] z_j^2`.
///
/// Both sums are termwise nonnegative, so `log rho` is monotone
/// non-decreasing in the spectrum and in the truncation level.
pub fn rho_closed_form_diag(a_spectrum: &[f64], z: &[f64]) -> Result<f64> {
    if a_spectrum.len() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum length {} vs whitened data length {}",
            a_spectrum.len(),
            z.len()
        )));
    }
    let mut acc = NeumaierSum::new();
    for (&l, &zj) in a_spectrum.iter().zip(z) {
        if !(l >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spectrum entry {l} must be nonnegative"
            )));
        }
        acc.add(l.ln_1p() - 0.5 * (2.0 * l).ln_1p());
        acc.add((2.0 * l / (1.0 + 2.0 * l) - l / (1.0 + l)) * zj * zj);
    }
    Ok(acc.total())
}

/// Per-coordinate spectrum and whitened data of a diagonal problem:
/// `lambda_j = k_j^2 sigma_j / gamma_j`, `z_j = y_j / sqrt(gamma_j)`,
/// in coordinate order (unsorted, so the pairing with `z` is preserved).
pub fn whiten_diag(ip: &LinearGaussianIP, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match ip {
        LinearGaussianIP::Diagonal { k, sigma, gamma } => {
            if y.len() != k.len() {
                return Err(Error::DimensionMismatch(format!(
                    "data length {} vs dimension {}",
                    y.len(),
                    k.len()
                )));
            }
            let lambda = k
                .iter()
                .zip(sigma)
                .zip(gamma)
                .map(|((&kj, &sj), &gj)| flush(kj * kj * sj / gj))
                .collect();
            let z = y
                .iter()
                .zip(gamma)
                .map(|(&yj, &gj)| yj / gj.sqrt())
                .collect();
            Ok((lambda, z))
        }
        LinearGaussianIP::Dense { .. } => Err(Error::FormViolation(
            "whitening requires the diagonal form".into(),
        )),
    }
}

/// The three-parameter family where `A` has eigenvalues `j^{-beta}/gamma`,
/// `j = 1..d`, with data generated from a fixed underlying truth.
#[derive(Debug, Clone)]
pub struct SpectralCascade {
    pub beta: f64,
    pub gamma: f64,
    pub d: usize,
    /// Coordinates of `K u_dagger` in the eigenbasis.
    pub truth_coeffs: Vec<f64>,
}

impl SpectralCascade {
    pub fn new(beta: f64, gamma: f64, d: usize, truth_coeffs: Vec<f64>) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta = {beta} must be >= 0"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma = {gamma} must be > 0"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("d must be >= 1".into()));
        }
        if truth_coeffs.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "truth has length {}, expected {d}",
                truth_coeffs.len()
            )));
        }
        Ok(Self {
            beta,
            gamma,
            d,
            truth_coeffs,
        })
    }

    /// Cascade with the zero truth, the centering used by the scaling sweeps.
    pub fn zero_truth(beta: f64, gamma: f64, d: usize) -> Result<Self> {
        Self::new(beta, gamma, d, vec![0.0; d])
    }

    /// Eigenvalues `j^{-beta}/gamma`, non-increasing by construction.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.d)
            .map(|j| flush((j as f64).powf(-self.beta) / self.gamma))
            .collect()
    }

    pub fn intrinsic_dims(&self) -> IntrinsicDims {
        IntrinsicDims::from_spectrum(self.eigenvalues())
    }

    /// The equivalent diagonal inverse problem: unit prior variances,
    /// coordinate multipliers `j^{-beta/2}` and noise `gamma`.
    pub fn to_ip(&self) -> LinearGaussianIP {
        let k = (1..=self.d)
            .map(|j| (j as f64).powf(-self.beta / 2.0))
            .collect();
        LinearGaussianIP::Diagonal {
            k,
            sigma: vec![1.0; self.d],
            gamma: vec![self.gamma; self.d],
        }
    }

    /// Draw data `y_j = truth_j + sqrt(gamma) xi_j` with i.i.d. standard
    /// normal `xi`. Deterministic in `seed`; the noise stream does not
    /// depend on `gamma`, so a fixed seed fixes `xi` across a noise sweep.
    pub fn generate_data(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, tag::DATA, 0);
        let root_gamma = self.gamma.sqrt();
        self.truth_coeffs
            .iter()
            .map(|&t| t + root_gamma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Whitened data `z = y / sqrt(gamma)`.
    pub fn whiten_data(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "data length {} vs d = {}",
                y.len(),
                self.d
            )));
        }
        let root_gamma = self.gamma.sqrt();
        Ok(y.iter().map(|&yj| yj / root_gamma).collect())
    }

    /// Exact `log rho` for this cascade given data `y`.
    pub fn log_rho(&self, y: &[f64]) -> Result<f64> {
        rho_closed_form_diag(&self.eigenvalues(), &self.whiten_data(y)?)
    }
}

/// Periodic deconvolution: observing a signal blurred by a kernel with
/// Fourier coefficients decaying like `j^{-t}` under a prior with Fourier
/// variances decaying like `j^{-2s}` diagonalizes, in frequency space, to
/// the cascade with `beta = 2t + 2s`. `t = 0` is direct observation and
/// `s = 0` a white prior.
pub fn deconvolution_model(
    t: f64,
    s: f64,
    d: usize,
    gamma: f64,
    truth: Vec<f64>,
) -> Result<SpectralCascade> {
    if !(t >= 0.0) || !(s >= 0.0) {
        return Err(Error::InvalidParameter(
            "blur exponent t and prior regularity s must be >= 0".into(),
        ));
    }
    SpectralCascade::new(2.0 * t + 2.0 * s, gamma, d, truth)
}

/// An inverse problem with fixed data, viewed as an importance-sampling
/// model: proposal = prior, `g` = posterior-prior density.
#[derive(Debug, Clone)]
pub struct IpModel {
    ip: LinearGaussianIP,
    y: Vec<f64>,
    prior: Gaussian,
}

impl IpModel {
    pub fn new(ip: LinearGaussianIP, y: Vec<f64>) -> Result<Self> {
        let (_, d_y) = ip.dims();
        if y.len() != d_y {
            return Err(Error::DimensionMismatch(format!(
                "data length {} vs d_y = {d_y}",
                y.len()
            )));
        }
        let prior = ip.prior()?;
        Ok(Self { ip, y, prior })
    }

    pub fn ip(&self) -> &LinearGaussianIP {
        &self.ip
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }
}

impl Model for IpModel {
    fn dim(&self) -> usize {
        self.ip.dims().0
    }

    fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match &self.prior {
            Gaussian::Diagonal(g) => g.sample_into(rng, out),
            Gaussian::Dense(g) => g.sample_into(rng, out),
        }
    }

    fn log_g(&self, u: &[f64]) -> f64 {
        log_g(&self.ip, u, &self.y).expect("dimensions checked at construction")
    }

    fn log_rho_exact(&self) -> Option<f64> {
        match &self.ip {
            LinearGaussianIP::Diagonal { .. } => {
                let (lambda, z) = whiten_diag(&self.ip, &self.y).ok()?;
                rho_closed_form_diag(&lambda, &z).ok()
            }
            LinearGaussianIP::Dense { .. } => {
                let post = posterior(&self.ip, &self.y).ok()?;
                log_rho_gaussian(&post, &self.prior).ok()
            }
        }
    }

    fn target_mean(&self, phi: TestFunction) -> Option<f64> {
        let post = posterior(&self.ip, &self.y).ok()?;
        let (m, v) = match &post {
            Gaussian::Diagonal(g) => (g.mean()[0], g.variance()[0]),
            Gaussian::Dense(g) => g.marginal(0),
        };
        Some(phi.gaussian_mean(m, v))
    }
}

/// Result of doubling a truncation level: a `d = infinity` surrogate is
/// converged when the quantity moves by less than [`TRUNCATION_RTOL`].
#[derive(Debug, Clone, Copy)]
pub struct TruncationCheck {
    pub value_at_d: f64,
    pub value_at_2d: f64,
    pub rel_change: f64,
    pub converged: bool,
}

/// Convergence check for `sum_{j<=d} eig(j)` under truncation doubling;
/// `eig` is indexed from 1. A quantity that keeps growing past the 0.5%
/// criterion is reported divergent by callers.
pub fn tau_truncation_check(eig: impl Fn(usize) -> f64, d: usize) -> TruncationCheck {
    let mut at_d = NeumaierSum::new();
    for j in 1..=d {
        at_d.add(eig(j));
    }
    let mut at_2d = at_d;
    for j in d + 1..=2 * d {
        at_2d.add(eig(j));
    }
    let value_at_d = at_d.total();
    let value_at_2d = at_2d.total();
    let rel_change = if value_at_d != 0.0 {
        ((value_at_2d - value_at_d) / value_at_d).abs()
    } else if value_at_2d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    TruncationCheck {
        value_at_d,
        value_at_2d,
        rel_change,
        converged: rel_change < TRUNCATION_RTOL,
    }
}

/// Spectrum with `k` eigenvalues at a large common value `c` above a small
/// tail: `efd` counts the jump, the Kullback-Leibler divergence grows like
/// `(efd/2) log c`, and `rho` at least like `exp(KL)`.
#[derive(Debug, Clone)]
pub struct SpectralJumpReport {
    pub k: usize,
    pub large_value: f64,
    pub tau: f64,
    pub efd: f64,
    pub kl: f64,
    /// Heuristic lower bound `(efd/2) log c` on `log rho`; holds up to an
    /// undocumented slack, unlike `kl <= log rho` which is exact.
    pub log_rho_heuristic_bound: f64,
    pub log_rho_closed_form: f64,
    pub warning: Option<String>,
}

/// Evaluate the spectral-jump diagnostics for spectrum
/// `(c, ..., c, tail...)` with `k` large values and posterior mean `m` in
/// the coordinates of a unit prior.
pub fn spectral_jump(k: usize, c: f64, tail: &[f64], m: &[f64]) -> Result<SpectralJumpReport> {
    if k == 0 && tail.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "large value c = {c} must be > 0"
        )));
    }
    let mut spectrum = vec![c; k];
    spectrum.extend_from_slice(tail);
    let d = spectrum.len();
    if m.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "mean length {} vs spectrum length {d}",
            m.len()
        )));
    }
    let dims = IntrinsicDims::from_spectrum(spectrum.clone());
    let prior = DiagonalGaussian::standard(d);
    let kl = crate::measures::kl_posterior_prior(&spectrum, m, &prior)?;

    // Recover whitened data from the posterior mean: m_j = sqrt(l) z_j/(1+l).
    let mut z = vec![0.0; d];
    for j in 0..d {
        if spectrum[j] > 0.0 {
            z[j] = m[j] * (1.0 + spectrum[j]) / spectrum[j].sqrt();
        } else if m[j] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "posterior mean must vanish where the spectrum does (coordinate {j})"
            )));
        }
    }
    let log_rho_closed_form = rho_closed_form_diag(&spectrum, &z)?;

    let tail_sum: f64 = tail.iter().sum();
    let warning = if c <= 10.0 {
        Some(format!("large value c = {c} is not much greater than 1"))
    } else if tail_sum >= 0.1 {
        Some(format!("tail eigenvalue sum {tail_sum} is not small"))
    } else {
        None
    };

    Ok(SpectralJumpReport {
        k,
        large_value: c,
        tau: dims.tau,
        efd: dims.efd,
        kl,
        log_rho_heuristic_bound: 0.5 * dims.efd * c.ln(),
        log_rho_closed_form,
        warning,
    })
}

/// Scaling regimes of the cascade family, each carrying its own grid.
#[derive(Debug, Clone)]
pub enum CascadeRegime {
    /// `gamma -> 0` at fixed finite `d`: `log rho` grows like `(d/2) log(1/gamma)`.
    SmallNoiseFixedD {
        beta: f64,
        d: usize,
        gammas: Vec<f64>,
    },
    /// `gamma -> 0` at `d = infinity` (surrogate truncation `d_max`),
    /// requires `beta > 1`.
    SmallNoiseInfiniteD {
        beta: f64,
        d_max: usize,
        gammas: Vec<f64>,
    },
    /// `d -> infinity` at fixed `gamma` with `beta < 1`: `log rho` grows
    /// linearly in `d^{1-beta}`.
    LargeD {
        beta: f64,
        gamma: f64,
        d_values: Vec<usize>,
    },
    /// Joint limit `gamma = d^{-alpha}`, `d -> infinity`.
    Joint {
        beta: f64,
        alpha: f64,
        d_values: Vec<usize>,
    },
    /// `beta` decreasing toward 1 at `d = infinity` (surrogate `d_max`):
    /// `tau` tracks `1/(beta - 1)`.
    Regularity {
        d_max: usize,
        gamma: f64,
        betas: Vec<f64>,
    },
}

/// One grid point of a cascade sweep. For in-probability regimes the
/// `log_rho` columns are the median and quartiles over the data seeds; for
/// fixed-data regimes all three coincide.
#[derive(Debug, Clone)]
pub struct CascadeSweepRow {
    /// The regime's driving parameter at this grid point.
    pub param: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d: usize,
    pub tau: f64,
    pub efd: f64,
    pub log_rho_median: f64,
    pub log_rho_q25: f64,
    pub log_rho_q75: f64,
    /// Truncation-doubling convergence of `tau` for `d = infinity`
    /// surrogates; `None` for genuinely finite-dimensional rows.
    pub converged: Option<bool>,
}

/// A fitted scaling: which response, against which transform of the
/// driving parameter, with slope and R^2.
#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub response: &'static str,
    pub x_desc: &'static str,
    pub fit: LineFit,
}

#[derive(Debug, Clone)]
pub struct CascadeScalingReport {
    pub rows: Vec<CascadeSweepRow>,
    pub fits: Vec<ScalingFit>,
    pub data_seeds: usize,
}

/// Default number of data seeds for in-probability rows.
pub const DEFAULT_DATA_SEEDS: usize = 32;

/// Default truncation for `d = infinity` surrogates.
pub const DEFAULT_D_MAX: usize = 1 << 14;

/// Reproduce the scaling table of the cascade family in the requested
/// regime.
///
/// Rows where the scaling holds for every data realization (the small-noise
/// and joint limits) use the zero-truth dataset from one fixed derived
/// seed; rows where it holds in probability (large `d`, regularity) report
/// the median over `data_seeds` independent datasets. Fits are computed on
/// the medians; fewer than 3 grid points is a degenerate fit.
pub fn sweep_cascade_scalings(
    regime: &CascadeRegime,
    data_seeds: usize,
    seed: u64,
) -> Result<CascadeScalingReport> {
    let points: Vec<(f64, f64, f64, usize)> = match regime {
        CascadeRegime::SmallNoiseFixedD { beta, d, gammas } => {
            validate_grid(gammas.len())?;
            require_positive_gammas(gammas)?;
            gammas.iter().map(|&g| (1.0 / g, *beta, g, *d)).collect()
        }
        CascadeRegime::SmallNoiseInfiniteD {
            beta,
            d_max,
            gammas,
        } => {
            validate_grid(gammas.len())?;
            require_positive_gammas(gammas)?;
            if !(*beta > 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "d = infinity surrogate needs beta > 1, got {beta}"
                )));
            }
            gammas
                .iter()
                .map(|&g| (1.0 / g, *beta, g, *d_max))
                .collect()
        }
        CascadeRegime::LargeD {
            beta,
            gamma,
            d_values,
        } => {
            validate_grid(d_values.len())?;
            d_values
                .iter()
                .map(|&d| (d as f64, *beta, *gamma, d))
                .collect()
        }
        CascadeRegime::Joint {
            beta,
            alpha,
            d_values,
        } => {
            validate_grid(d_values.len())?;
            d_values
                .iter()
                .map(|&d| (d as f64, *beta, (d as f64).powf(-*alpha), d))
                .collect()
        }
        CascadeRegime::Regularity {
            d_max,
            gamma,
            betas,
        } => {
            validate_grid(betas.len())?;
            if let Some(&bad) = betas.iter().find(|&&b| b <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "regularity regime needs beta > 1, got {bad}"
                )));
            }
            betas.iter().map(|&b| (b, b, *gamma, *d_max)).collect()
        }
    };

    let in_probability = matches!(
        regime,
        CascadeRegime::LargeD { .. } | CascadeRegime::Regularity { .. }
    );
    let infinite_d = matches!(
        regime,
        CascadeRegime::SmallNoiseInfiniteD { .. } | CascadeRegime::Regularity { .. }
    );
    let n_seeds = if in_probability { data_seeds.max(1) } else { 1 };

    let rows: Vec<CascadeSweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(i, &(param, beta, gamma, d))| -> Result<CascadeSweepRow> {
            let cascade = SpectralCascade::zero_truth(beta, gamma, d)?;
            let dims = cascade.intrinsic_dims();
            let mut log_rhos = Vec::with_capacity(n_seeds);
            for s in 0..n_seeds {
                // Fixed-data rows reuse data stream 0 at every grid point,
                // which pins the underlying noise across the sweep.
                let data_seed = if in_probability {
                    rng::derive(seed, i as u64, s as u64)
                } else {
                    rng::derive(seed, 0, 0)
                };
                let y = cascade.generate_data(data_seed);
                log_rhos.push(cascade.log_rho(&y)?);
            }
            let (q25, med, q75) = quartiles(&log_rhos);
            let converged = infinite_d
                .then(|| tau_truncation_check(|j| (j as f64).powf(-beta) / gamma, d).converged);
            Ok(CascadeSweepRow {
                param,
                beta,
                gamma,
                d,
                tau: dims.tau,
                efd: dims.efd,
                log_rho_median: med,
                log_rho_q25: q25,
                log_rho_q75: q75,
                converged,
            })
        })
        .collect::<Result<_>>()?;

    let fits = cascade_fits(regime, &rows);
    Ok(CascadeScalingReport {
        rows,
        fits,
        data_seeds: n_seeds,
    })
}

fn validate_grid(len: usize) -> Result<()> {
    if len < 3 {
        return Err(Error::DegenerateFit(format!(
            "grid has {len} points; at least 3 are required"
        )));
    }
    Ok(())
}

fn require_positive_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter(
            "every gamma must be positive".into(),
        ));
    }
    Ok(())
}

fn cascade_fits(regime: &CascadeRegime, rows: &[CascadeSweepRow]) -> Vec<ScalingFit> {
    let mut fits = Vec::new();
    let mut push = |response: &'static str, x_desc: &'static str, xs: Vec<f64>, ys: Vec<f64>| {
        let keep: Vec<(f64, f64)> = xs
            .into_iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = keep.into_iter().unzip();
        if let Some(fit) = crate::math::ols_fit(&xs, &ys) {
            fits.push(ScalingFit {
                response,
                x_desc,
                fit,
            });
        }
    };
    match regime {
        CascadeRegime::SmallNoiseFixedD { .. } | CascadeRegime::SmallNoiseInfiniteD { .. } => {
            let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.gamma).ln()).collect();
            push(
                "log_tau",
                "log(1/gamma)",
                xs.clone(),
                rows.iter().map(|r| r.tau.ln()).collect(),
            );
            push(
                "log_efd",
                "log(1/gamma)",
                xs.clone(),
                rows.iter().map(|r| r.efd.ln()).collect(),
            );
            push(
                "log_rho",
                "log(1/gamma)",
                xs,
                rows.iter().map(|r| r.log_rho_median).collect(),
            );
        }
        CascadeRegime::LargeD { beta, .. } => {
            let logd: Vec<f64> = rows.iter().map(|r| (r.d as f64).ln()).collect();
            push(
                "log_tau",
                "log(d)",
                logd.clone(),
                rows.iter().map(|r| r.tau.ln()).collect(),
            );
            push(
                "log_efd",
                "log(d)",
                logd,
                rows.iter().map(|r| r.efd.ln()).collect(),
            );
            push(
                "log_rho",
                "d^(1-beta)",
                rows.iter().map(|r| (r.d as f64).powf(1.0 - beta)).collect(),
                rows.iter().map(|r| r.log_rho_median).collect(),
            );
        }
        CascadeRegime::Joint { .. } => {
            let logd: Vec<f64> = rows.iter().map(|r| (r.d as f64).ln()).collect();
            push(
                "log_tau",
                "log(d)",
                logd.clone(),
                rows.iter().map(|r| r.tau.ln()).collect(),
            );
            push(
                "log_efd",
                "log(d)",
                logd,
                rows.iter().map(|r| r.efd.ln()).collect(),
            );
            push(
                "log_rho",
                "d*log(d)",
                rows.iter()
                    .map(|r| r.d as f64 * (r.d as f64).ln())
                    .collect(),
                rows.iter().map(|r| r.log_rho_median).collect(),
            );
        }
        CascadeRegime::Regularity { .. } => {
            let xs: Vec<f64> = rows.iter().map(|r| (1.0 / (r.beta - 1.0)).ln()).collect();
            push(
                "log_tau",
                "log(1/(beta-1))",
                xs.clone(),
                rows.iter().map(|r| r.tau.ln()).collect(),
            );
            push(
                "log_efd",
                "log(1/(beta-1))",
                xs,
                rows.iter().map(|r| r.efd.ln()).collect(),
            );
            push(
                "log_rho",
                "1/(beta-1)",
                rows.iter().map(|r| 1.0 / (r.beta - 1.0)).collect(),
                rows.iter().map(|r| r.log_rho_median).collect(),
            );
        }
    }
    fits
}
