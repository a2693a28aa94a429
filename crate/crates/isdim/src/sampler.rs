//! Autonormalized importance sampling: log-domain weights, effective sample
//! size, Monte Carlo estimation of `rho`, and empirical verification of the
//! non-asymptotic error bounds.
//!
//! For a proposal `pi`, an unnormalized density `g` of the target with
//! respect to `pi`, and draws `u^1..u^N ~ pi`, the estimator of `mu(phi)` is
//! `sum_n w^n phi(u^n)` with `w^n` proportional to `g(u^n)`. Its quality is
//! governed by `rho = pi(g^2)/pi(g)^2`: over `|phi| <= 1` the bias is at
//! most `12 rho / N` and the mean square error at most `4 rho / N`, and
//! `ess ~ N / rho`. Everything here stores weights exclusively as logs;
//! `rho` is estimated through
//! `log rho = logsumexp(2 l) - 2 logsumexp(l) + log n`, which survives the
//! small-noise regimes where individual weights overflow.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::math::{
    logsumexp, mean, normal_cdf, normal_pdf, ols_fit, sample_std, simpson, LineFit, NeumaierSum,
};
use crate::measures::{log_rho_gaussian, DiagonalGaussian, Gaussian, ScalarPotential};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// A proposal paired with the unnormalized log density of its target.
///
/// Implementations may additionally expose a closed-form `log rho` and exact
/// target expectations; operations that verify bounds require those oracles
/// and fail with [`Error::NoOracle`] when they are absent.
pub trait Model: Sync {
    fn dim(&self) -> usize;

    /// Draw one proposal sample into `out`.
    fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);

    /// Unnormalized log density of the target with respect to the proposal.
    fn log_g(&self, u: &[f64]) -> f64;

    /// Exact `log rho` when available in closed form.
    fn log_rho_exact(&self) -> Option<f64> {
        None
    }

    /// Exact target expectation of `phi` when available.
    fn target_mean(&self, _phi: TestFunction) -> Option<f64> {
        None
    }
}

/// Particles with their log-domain unnormalized weights and the normalized
/// weights derived from them.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    points: Vec<f64>,
    dim: usize,
    log_unnorm_weights: Vec<f64>,
    norm_weights: Vec<f64>,
}

impl WeightedEnsemble {
    /// Build from row-major particle storage (`n * dim` values) and one log
    /// weight per particle. Wraps [`normalize`].
    pub fn new(points: Vec<f64>, dim: usize, log_unnorm_weights: Vec<f64>) -> Result<Self> {
        let n = log_unnorm_weights.len();
        if dim == 0 || points.len() != n * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} point values do not form {n} rows of dimension {dim}",
                points.len()
            )));
        }
        let norm_weights = normalize(&log_unnorm_weights)?;
        Ok(Self {
            points,
            dim,
            log_unnorm_weights,
            norm_weights,
        })
    }

    /// Draw `n` particles from the model's proposal and weight them by its
    /// `log_g`. Deterministic in `seed`.
    pub fn from_model<M: Model + ?Sized>(model: &M, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        let dim = model.dim();
        let mut rng = rng::stream(seed, tag::SAMPLE, 0);
        let mut points = vec![0.0; n * dim];
        let mut logw = vec![0.0; n];
        for i in 0..n {
            let row = &mut points[i * dim..(i + 1) * dim];
            model.sample_proposal(&mut rng, row);
            logw[i] = model.log_g(row);
        }
        Self::new(points, dim, logw)
    }

    pub fn n(&self) -> usize {
        self.log_unnorm_weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn log_unnorm_weights(&self) -> &[f64] {
        &self.log_unnorm_weights
    }

    pub fn norm_weights(&self) -> &[f64] {
        &self.norm_weights
    }
}

/// Normalize log weights to probabilities via log-sum-exp.
///
/// Invariant under adding a constant to every log weight. Inputs where no
/// entry is finite are degenerate; NaN or `+inf` entries are invalid.
pub fn normalize(log_unnorm_weights: &[f64]) -> Result<Vec<f64>> {
    if log_unnorm_weights.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    for &l in log_unnorm_weights {
        if l.is_nan() || l == f64::INFINITY {
            return Err(Error::InvalidLogWeight(l));
        }
    }
    let lse = logsumexp(log_unnorm_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let mut w: Vec<f64> = log_unnorm_weights
        .iter()
        .map(|&l| (l - lse).exp())
        .collect();
    // Tighten the sum to one; exp rounding leaves a few ulps otherwise.
    let total = crate::math::sum_compensated(&w);
    for wi in &mut w {
        *wi /= total;
    }
    Ok(w)
}

/// The autonormalized estimate `sum_n w^n phi(u^n)`.
pub fn autonormalized_estimate<F: Fn(&[f64]) -> f64>(e: &WeightedEnsemble, phi: F) -> f64 {
    let mut acc = NeumaierSum::new();
    for i in 0..e.n() {
        acc.add(e.norm_weights[i] * phi(e.point(i)));
    }
    acc.total()
}

/// Effective sample size `(sum_n (w^n)^2)^{-1}`, always in `[1, n]`.
pub fn ess(e: &WeightedEnsemble) -> f64 {
    let mut acc = NeumaierSum::new();
    for &w in &e.norm_weights {
        acc.add(w * w);
    }
    1.0 / acc.total()
}

/// Monte Carlo estimate of `rho` with a jackknife standard error.
#[derive(Debug, Clone, Copy)]
pub struct RhoEstimate {
    pub log_rho: f64,
    /// Leave-one-block-out jackknife standard error of `log_rho`.
    pub se_log_rho: f64,
    pub n: usize,
    pub blocks: usize,
}

impl RhoEstimate {
    pub fn rho(&self) -> f64 {
        self.log_rho.exp()
    }

    /// Delta-method standard error on the linear scale.
    pub fn se_rho(&self) -> f64 {
        self.rho() * self.se_log_rho
    }

    /// An exactly known value, reported with zero standard error.
    pub fn exact(log_rho: f64) -> Self {
        Self {
            log_rho,
            se_log_rho: 0.0,
            n: 0,
            blocks: 0,
        }
    }
}

/// Number of jackknife blocks used by [`rho_mc`].
pub const JACKKNIFE_BLOCKS: usize = 100;

/// Estimate `rho = pi(g^2)/pi(g)^2` by sampling the model's proposal.
///
/// The estimate is assembled entirely in the log domain as
/// `logsumexp(2 l) - 2 logsumexp(l) + log n`; the standard error is the
/// leave-one-block-out jackknife over [`JACKKNIFE_BLOCKS`] blocks, a choice
/// that accounts for the ratio-estimator bias of `rho`.
pub fn rho_mc<M: Model + ?Sized>(model: &M, n: usize, seed: u64) -> Result<RhoEstimate> {
    if n < 2 {
        return Err(Error::InvalidParameter(
            "rho_mc needs at least two samples".into(),
        ));
    }
    let n_blocks = JACKKNIFE_BLOCKS.min(n);
    let mut rng = rng::stream(seed, tag::RHO_MC, 0);
    let dim = model.dim();
    let mut point = vec![0.0; dim];

    let mut block_lse1 = Vec::with_capacity(n_blocks);
    let mut block_lse2 = Vec::with_capacity(n_blocks);
    let mut block_sizes = Vec::with_capacity(n_blocks);
    let base = n / n_blocks;
    let rem = n % n_blocks;
    let mut buf1 = Vec::new();
    let mut buf2 = Vec::new();
    for b in 0..n_blocks {
        let size = base + usize::from(b < rem);
        buf1.clear();
        buf2.clear();
        for _ in 0..size {
            model.sample_proposal(&mut rng, &mut point);
            let l = model.log_g(&point);
            if l.is_nan() || l == f64::INFINITY {
                return Err(Error::InvalidLogWeight(l));
            }
            buf1.push(l);
            buf2.push(2.0 * l);
        }
        block_lse1.push(logsumexp(&buf1));
        block_lse2.push(logsumexp(&buf2));
        block_sizes.push(size);
    }

    let lse1 = logsumexp(&block_lse1);
    let lse2 = logsumexp(&block_lse2);
    if lse1 == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let log_rho = lse2 - 2.0 * lse1 + (n as f64).ln();

    // Jackknife over deleted blocks; block log-sum-exps combine associatively.
    let mut theta = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let mut rest1 = Vec::with_capacity(n_blocks - 1);
        let mut rest2 = Vec::with_capacity(n_blocks - 1);
        for j in 0..n_blocks {
            if j != b {
                rest1.push(block_lse1[j]);
                rest2.push(block_lse2[j]);
            }
        }
        let l1 = logsumexp(&rest1);
        let l2 = logsumexp(&rest2);
        if l1 == f64::NEG_INFINITY {
            continue;
        }
        let m = (n - block_sizes[b]) as f64;
        theta.push(l2 - 2.0 * l1 + m.ln());
    }
    let se_log_rho = if theta.len() >= 2 {
        let tm = mean(&theta);
        let mut acc = NeumaierSum::new();
        for &t in &theta {
            acc.add((t - tm) * (t - tm));
        }
        let b = theta.len() as f64;
        ((b - 1.0) / b * acc.total()).sqrt()
    } else {
        f64::NAN
    };

    Ok(RhoEstimate {
        log_rho,
        se_log_rho,
        n,
        blocks: n_blocks,
    })
}

/// The fixed family of bounded test functions used for bound verification:
/// smooth (tanh), oscillatory (sin), piecewise-linear (clamped identity) and
/// discontinuous (sign of the positive half-space, recentered to `[-1, 1]`).
/// Each acts on the first coordinate of a particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Tanh,
    Sin,
    ClampedIdentity,
    HalfSpaceSign,
    /// The constant 1; every autonormalized estimate of it is exactly 1.
    One,
    /// The first coordinate itself (unbounded; used by the moment-based
    /// bound, not by the bounded-function theorems).
    Identity,
}

impl TestFunction {
    pub const BOUNDED_FAMILY: [TestFunction; 4] = [
        TestFunction::Tanh,
        TestFunction::Sin,
        TestFunction::ClampedIdentity,
        TestFunction::HalfSpaceSign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Tanh => "tanh",
            TestFunction::Sin => "sin",
            TestFunction::ClampedIdentity => "clamp",
            TestFunction::HalfSpaceSign => "halfspace",
            TestFunction::One => "one",
            TestFunction::Identity => "identity",
        }
    }

    pub fn eval1(self, x: f64) -> f64 {
        match self {
            TestFunction::Tanh => x.tanh(),
            TestFunction::Sin => x.sin(),
            TestFunction::ClampedIdentity => x.clamp(-1.0, 1.0),
            TestFunction::HalfSpaceSign => {
                if x > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            TestFunction::One => 1.0,
            TestFunction::Identity => x,
        }
    }

    pub fn eval(self, u: &[f64]) -> f64 {
        self.eval1(u[0])
    }

    /// Exact `E[phi(X)]` for `X ~ N(m, var)`, by closed form where one
    /// exists and by deterministic quadrature for `tanh`.
    pub fn gaussian_mean(self, m: f64, var: f64) -> f64 {
        let s = var.sqrt();
        match self {
            TestFunction::One => 1.0,
            TestFunction::Identity => m,
            TestFunction::Sin => m.sin() * (-0.5 * var).exp(),
            TestFunction::HalfSpaceSign => 2.0 * normal_cdf(m / s) - 1.0,
            TestFunction::ClampedIdentity => {
                let a = (-1.0 - m) / s;
                let b = (1.0 - m) / s;
                let body =
                    m * (normal_cdf(b) - normal_cdf(a)) - s * (normal_pdf(b) - normal_pdf(a));
                body + (1.0 - normal_cdf(b)) - normal_cdf(a)
            }
            TestFunction::Tanh => {
                let lo = m - 12.0 * s;
                let hi = m + 12.0 * s;
                simpson(|x| x.tanh() * normal_pdf((x - m) / s) / s, lo, hi, 8_000)
            }
        }
    }
}

/// Empirical bias and MSE of the autonormalized estimator for one test
/// function, next to the non-asymptotic bounds `12 rho / N` and `4 rho / N`.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub phi: TestFunction,
    pub empirical_bias: f64,
    pub empirical_mse: f64,
    pub rho: f64,
    pub n_particles: usize,
    pub replications: usize,
    pub bias_bound: f64,
    pub mse_bound: f64,
    pub std_error_mse: f64,
    pub std_error_bias: f64,
}

impl BoundReport {
    /// True when the empirical values respect the bounds with a slack of
    /// `slack_se` standard errors.
    pub fn holds(&self, slack_se: f64) -> bool {
        self.empirical_mse <= self.mse_bound + slack_se * self.std_error_mse
            && self.empirical_bias.abs() <= self.bias_bound + slack_se * self.std_error_bias
    }
}

/// Verify the bounded-test-function bias and MSE bounds by replication.
///
/// Runs `replications` independent ensembles of `n` particles, one derived
/// seed per replication, and reports per test function the empirical bias
/// and MSE next to `12 rho / N` and `4 rho / N` with `rho` taken from the
/// model's closed form. Requires the model's exact target means.
pub fn bias_mse_experiment<M: Model + ?Sized>(
    model: &M,
    phis: &[TestFunction],
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<BoundReport>> {
    if replications < 100 {
        return Err(Error::InvalidParameter(
            "bound verification needs at least 100 replications".into(),
        ));
    }
    if n == 0 || phis.is_empty() {
        return Err(Error::InvalidParameter(
            "need particles and at least one test function".into(),
        ));
    }
    let log_rho = model
        .log_rho_exact()
        .ok_or_else(|| Error::NoOracle("closed-form rho unavailable for this model".into()))?;
    let rho = log_rho.exp();
    let mus: Vec<f64> = phis
        .iter()
        .map(|&phi| {
            model.target_mean(phi).ok_or_else(|| {
                Error::NoOracle(format!("target mean of {} unavailable", phi.name()))
            })
        })
        .collect::<Result<_>>()?;

    // One derived stream per replication; collection is indexed by
    // replication so the reduction below is independent of thread count.
    let errors: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let e = WeightedEnsemble::from_model(model, n, rep_seed(seed, r as u64))?;
            Ok(phis
                .iter()
                .zip(&mus)
                .map(|(&phi, &mu)| autonormalized_estimate(&e, |u| phi.eval(u)) - mu)
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(phis.len());
    for (k, &phi) in phis.iter().enumerate() {
        let errs: Vec<f64> = errors.iter().map(|row| row[k]).collect();
        let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
        let r = replications as f64;
        reports.push(BoundReport {
            phi,
            empirical_bias: mean(&errs),
            empirical_mse: mean(&sq),
            rho,
            n_particles: n,
            replications,
            bias_bound: 12.0 * rho / n as f64,
            mse_bound: 4.0 * rho / n as f64,
            std_error_mse: sample_std(&sq) / r.sqrt(),
            std_error_bias: sample_std(&errs) / r.sqrt(),
        });
    }
    Ok(reports)
}

fn rep_seed(seed: u64, r: u64) -> u64 {
    rng::derive(seed, tag::REPLICATION, r)
}

/// Relative departure of the empirical `ess` from `n / rho`:
/// `|ess * rho / n - 1|` with `rho` from the model's closed form.
pub fn ess_rho_consistency<M: Model + ?Sized>(model: &M, n: usize, seed: u64) -> Result<f64> {
    let log_rho = model
        .log_rho_exact()
        .ok_or_else(|| Error::NoOracle("closed-form rho unavailable for this model".into()))?;
    if !log_rho.is_finite() {
        return Err(Error::NonIntegrable("rho is not finite".into()));
    }
    let e = WeightedEnsemble::from_model(model, n, seed)?;
    Ok((ess(&e) * log_rho.exp() / n as f64 - 1.0).abs())
}

/// Conjugate exponents and the moments entering the unbounded-test-function
/// MSE constant. The exponent pairs satisfy `1/d + 1/e = 1/p + 1/q = 1` and
/// default to `d = e = p = q = 2`; other pairs are accepted as data.
#[derive(Debug, Clone)]
pub struct CmseSpec {
    pub d: f64,
    pub e: f64,
    pub p: f64,
    pub q: f64,
    pub moments: CmseMoments,
}

/// Raw and central moments under the proposal required by the three-term
/// constant. `m_t[h]` denotes the t-th central moment of `h`.
#[derive(Debug, Clone)]
pub struct CmseMoments {
    /// `pi(g)`
    pub pi_g: f64,
    /// `pi(g^2)`
    pub pi_g2: f64,
    /// `m_2[phi g]`
    pub m2_phi_g: f64,
    /// `m_2[g]`
    pub m2_g: f64,
    /// `m_2[(phi - mu(phi)) g]`
    pub m2_phibar_g: f64,
    /// `pi(|phi g|^{2d})`
    pub pi_abs_phi_g_2d: f64,
    /// `m_{2e}[g]`
    pub m_2e_g: f64,
    /// `pi(|phi|^{2p})`
    pub pi_abs_phi_2p: f64,
    /// `m_{2q(1+1/p)}[g]`
    pub m_2q1p_g: f64,
}

/// The evaluated constant: MSE is bounded by `c_mse / N` and the bias by
/// `bias_const / N`.
#[derive(Debug, Clone, Copy)]
pub struct CmseBound {
    pub c_mse: f64,
    pub bias_const: f64,
}

impl CmseBound {
    pub fn mse_bound(&self, n: usize) -> f64 {
        self.c_mse / n as f64
    }

    pub fn bias_bound(&self, n: usize) -> f64 {
        self.bias_const / n as f64
    }
}

/// The usable Marcinkiewicz-Zygmund constant root: `C_t^{1/t} = t - 1`.
pub fn c_t_root(t: f64) -> f64 {
    t - 1.0
}

impl CmseSpec {
    /// The default conjugate choice `d = e = p = q = 2`.
    pub fn with_default_exponents(moments: CmseMoments) -> Self {
        Self {
            d: 2.0,
            e: 2.0,
            p: 2.0,
            q: 2.0,
            moments,
        }
    }

    fn validate(&self) -> Result<()> {
        for (&a, &b, label) in [(&self.d, &self.e, "(d, e)"), (&self.p, &self.q, "(p, q)")] {
            if !(a > 1.0 && b > 1.0) || (1.0 / a + 1.0 / b - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "{label} must be conjugate exponents in (1, inf)"
                )));
            }
        }
        let m = &self.moments;
        let all = [
            m.pi_g,
            m.pi_g2,
            m.m2_phi_g,
            m.m2_g,
            m.m2_phibar_g,
            m.pi_abs_phi_g_2d,
            m.m_2e_g,
            m.pi_abs_phi_2p,
            m.m_2q1p_g,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonApplicable(
                "a required moment is infinite, NaN or negative".into(),
            ));
        }
        if !(m.pi_g > 0.0) {
            return Err(Error::NonApplicable("pi(g) must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluate the three-term MSE constant and the matching bias constant for
/// test functions that are merely moment-bounded rather than bounded.
pub fn cmse_bound(spec: &CmseSpec) -> Result<CmseBound> {
    spec.validate()?;
    let m = &spec.moments;
    let (d, e, p, q) = (spec.d, spec.e, spec.p, spec.q);
    let pig2 = m.pi_g * m.pi_g;

    let term1 = 3.0 / pig2 * m.m2_phi_g;
    // C_{2e}^{1/e} = (2e - 1)^2 under C_t^{1/t} = t - 1.
    let term2 = 3.0 / (pig2 * pig2)
        * m.pi_abs_phi_g_2d.powf(1.0 / d)
        * c_t_root(2.0 * e).powi(2)
        * m.m_2e_g.powf(1.0 / e);
    // t = 2q(1 + 1/p); C_t^{1/q} = (t - 1)^{2(1 + 1/p)}.
    let t = 2.0 * q * (1.0 + 1.0 / p);
    let term3 = 3.0 / m.pi_g.powf(2.0 * (1.0 + 1.0 / p))
        * m.pi_abs_phi_2p.powf(1.0 / p)
        * c_t_root(t).powf(2.0 * (1.0 + 1.0 / p))
        * m.m_2q1p_g.powf(1.0 / q);
    let c_mse = term1 + term2 + term3;
    if !c_mse.is_finite() {
        return Err(Error::NonApplicable(
            "C_MSE evaluates to a non-finite value".into(),
        ));
    }

    let bias_const = 2.0 / pig2 * m.m2_g.sqrt() * m.m2_phibar_g.sqrt()
        + 2.0 * c_mse.sqrt() * m.pi_g2.sqrt() / m.pi_g;
    Ok(CmseBound { c_mse, bias_const })
}

/// Diagonal Gaussian target against diagonal Gaussian proposal, with exact
/// `rho` and exact first-coordinate target means. The workhorse model for
/// bound verification.
#[derive(Debug, Clone)]
pub struct GaussianPairModel {
    target: DiagonalGaussian,
    proposal: DiagonalGaussian,
}

impl GaussianPairModel {
    pub fn new(target: DiagonalGaussian, proposal: DiagonalGaussian) -> Result<Self> {
        if target.dim() != proposal.dim() {
            return Err(Error::DimensionMismatch(format!(
                "target dim {} vs proposal dim {}",
                target.dim(),
                proposal.dim()
            )));
        }
        Ok(Self { target, proposal })
    }

    /// Target `N(m 1, I)` against proposal `N(0, I)` in `d` dimensions; the
    /// product of `d` copies of the unit-variance mean-shift problem, with
    /// `rho = exp(d m^2)`.
    pub fn gaussian_shift(m: f64, d: usize) -> Self {
        Self {
            target: DiagonalGaussian::new(vec![m; d], vec![1.0; d]).expect("valid parameters"),
            proposal: DiagonalGaussian::standard(d),
        }
    }

    pub fn target(&self) -> &DiagonalGaussian {
        &self.target
    }

    pub fn proposal(&self) -> &DiagonalGaussian {
        &self.proposal
    }
}

impl Model for GaussianPairModel {
    fn dim(&self) -> usize {
        self.proposal.dim()
    }

    fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        self.proposal.sample_into(rng, out);
    }

    fn log_g(&self, u: &[f64]) -> f64 {
        self.target.log_pdf(u) - self.proposal.log_pdf(u)
    }

    fn log_rho_exact(&self) -> Option<f64> {
        log_rho_gaussian(
            &Gaussian::Diagonal(self.target.clone()),
            &Gaussian::Diagonal(self.proposal.clone()),
        )
        .ok()
    }

    fn target_mean(&self, phi: TestFunction) -> Option<f64> {
        Some(phi.gaussian_mean(self.target.mean()[0], self.target.variance()[0]))
    }
}

/// One row of the product-structure table: in `d` independent copies of a
/// one-dimensional problem, `rho_d = rho_1^d` exactly.
#[derive(Debug, Clone)]
pub struct ProductCollapseRow {
    pub d: usize,
    /// `d * log(rho_1)`, exact.
    pub log_rho_exact: f64,
    /// Monte Carlo companion estimate on the product model, for small `d`.
    pub mc: Option<RhoEstimate>,
}

/// Tabulate `log rho_d = d log rho_1` over `d_values`, with a Monte Carlo
/// column on the Gaussian-shift product model realizing `rho_1` for every
/// `d <= mc_max_d` when `mc_n` is given.
pub fn product_collapse_sweep(
    rho_1: f64,
    d_values: &[usize],
    mc_n: Option<usize>,
    mc_max_d: usize,
    seed: u64,
) -> Result<Vec<ProductCollapseRow>> {
    if !(rho_1 >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho_1 = {rho_1} must be >= 1 (Cauchy-Schwarz)"
        )));
    }
    let log_rho_1 = rho_1.ln();
    let m = log_rho_1.sqrt();
    d_values
        .iter()
        .map(|&d| {
            let mc = match mc_n {
                // rho_1 = 1 short-circuits: the density is constant and
                // rho_d = 1 exactly for every d.
                Some(_) if log_rho_1 == 0.0 => Some(RhoEstimate::exact(0.0)),
                Some(n) if d <= mc_max_d && d > 0 => {
                    let model = GaussianPairModel::gaussian_shift(m, d);
                    Some(rho_mc(&model, n, rng::derive(seed, tag::SWEEP, d as u64))?)
                }
                _ => None,
            };
            Ok(ProductCollapseRow {
                d,
                log_rho_exact: d as f64 * log_rho_1,
                mc,
            })
        })
        .collect()
}

/// The singular-limit model `g_eps(u) = exp(-h(u)/eps)` under a
/// one-dimensional Gaussian proposal.
#[derive(Debug, Clone)]
pub struct SingularLimitModel {
    pub potential: ScalarPotential,
    pub proposal: DiagonalGaussian,
    pub epsilon: f64,
}

impl Model for SingularLimitModel {
    fn dim(&self) -> usize {
        1
    }

    fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        self.proposal.sample_into(rng, out);
    }

    fn log_g(&self, u: &[f64]) -> f64 {
        -self.potential.eval(u[0]) / self.epsilon
    }
}

/// One grid point of the singular-limit sweep.
#[derive(Debug, Clone)]
pub struct SingularLimitRow {
    pub epsilon: f64,
    pub mc: RhoEstimate,
    /// `sqrt(h''(u*) / (4 pi eps))`.
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct SingularLimitReport {
    pub rows: Vec<SingularLimitRow>,
    /// Fit of Monte Carlo `log rho` against `log(1/eps)`; the slope tends
    /// to 1/2 in the singular limit.
    pub fit: Option<LineFit>,
}

/// Estimate `rho_eps` over a grid of `eps` values and regress `log rho`
/// on `log(1/eps)`.
///
/// A potential that is constant on the check grid makes the density
/// constant; those rows short-circuit to `rho = 1` exactly.
pub fn singular_limit_sweep(
    potential: &ScalarPotential,
    proposal: &DiagonalGaussian,
    epsilons: &[f64],
    n: usize,
    seed: u64,
) -> Result<SingularLimitReport> {
    if proposal.dim() != 1 {
        return Err(Error::FormViolation(
            "singular-limit proposal must be one-dimensional".into(),
        ));
    }
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter(
            "every epsilon must be positive".into(),
        ));
    }
    let constant = potential.is_constant_on_grid();
    let rows: Vec<SingularLimitRow> = epsilons
        .par_iter()
        .enumerate()
        .map(|(i, &epsilon)| -> Result<SingularLimitRow> {
            let rate = crate::measures::laplace_rho_rate(potential, epsilon)?;
            let mc = if constant {
                RhoEstimate::exact(0.0)
            } else {
                let model = SingularLimitModel {
                    potential: potential.clone(),
                    proposal: proposal.clone(),
                    epsilon,
                };
                rho_mc(&model, n, rng::derive(seed, tag::SWEEP, i as u64))?
            };
            Ok(SingularLimitRow { epsilon, mc, rate })
        })
        .collect::<Result<_>>()?;

    let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mc.log_rho).collect();
    Ok(SingularLimitReport {
        fit: ols_fit(&xs, &ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ensemble_1d(points: Vec<f64>, logw: Vec<f64>) -> WeightedEnsemble {
        WeightedEnsemble::new(points, 1, logw).unwrap()
    }

    #[test]
    fn normalize_equal_weights() {
        let w = normalize(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        for &wi in &w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_direct_ratio() {
        let w = normalize(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-14);
        assert!((w[1] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn normalize_shifted_does_not_overflow() {
        let w = normalize(&[1000.0, 1000.0 + 2f64.ln()]).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_degenerate_and_invalid() {
        assert!(matches!(
            normalize(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap_err(),
            Error::DegenerateWeights
        ));
        assert!(matches!(
            normalize(&[]).unwrap_err(),
            Error::DegenerateWeights
        ));
        assert!(matches!(
            normalize(&[0.0, f64::NAN]).unwrap_err(),
            Error::InvalidLogWeight(_)
        ));
    }

    #[test]
    fn autonormalized_constant_is_one() {
        let e = ensemble_1d(vec![5.0, -1.0, 2.0], vec![0.3, -2.0, 1.4]);
        let v = autonormalized_estimate(&e, |_| 1.0);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn autonormalized_equal_weights_is_plain_average() {
        let e = ensemble_1d(vec![1.0, 2.0, 3.0, 4.0], vec![7.0; 4]);
        let v = autonormalized_estimate(&e, |u| u[0]);
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn autonormalized_two_point_example() {
        let e = ensemble_1d(vec![0.0, 1.0], vec![1f64.ln(), 3f64.ln()]);
        let v = autonormalized_estimate(&e, |u| u[0]);
        assert!((v - 0.75).abs() < 1e-14);
    }

    #[test]
    fn ess_attains_bounds() {
        let n = 64;
        let e = ensemble_1d(vec![0.0; n], vec![2.0; n]);
        assert!((ess(&e) - n as f64).abs() < 1e-9);

        let mut logw = vec![f64::NEG_INFINITY; n];
        logw[3] = 0.0;
        let e = ensemble_1d(vec![0.0; n], logw);
        assert!((ess(&e) - 1.0).abs() < 1e-12);

        let k = 5;
        let mut logw = vec![f64::NEG_INFINITY; n];
        for l in logw.iter_mut().take(k) {
            *l = -3.0;
        }
        let e = ensemble_1d(vec![0.0; n], logw);
        assert!((ess(&e) - k as f64).abs() < 1e-9);
    }

    #[test]
    fn rho_mc_constant_density_is_one() {
        struct Flat;
        impl Model for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
                use rand::Rng;
                out[0] = rng.gen::<f64>();
            }
            fn log_g(&self, _u: &[f64]) -> f64 {
                3.7
            }
        }
        let est = rho_mc(&Flat, 10_000, 5).unwrap();
        assert!(est.log_rho.abs() < 1e-12, "log rho {}", est.log_rho);
    }

    #[test]
    fn rho_mc_matches_gaussian_shift_oracle() {
        let model = GaussianPairModel::gaussian_shift(1.0, 1);
        let est = rho_mc(&model, 100_000, 97).unwrap();
        assert!(
            (est.log_rho - 1.0).abs() <= 3.0 * est.se_log_rho,
            "log rho {} +- {}",
            est.log_rho,
            est.se_log_rho
        );
        // 2% band on the linear scale at this n, per the stated example
        assert!((est.rho() - std::f64::consts::E).abs() < 0.02 * std::f64::consts::E * 3.0);
    }

    #[test]
    fn rho_mc_se_halves_when_n_doubles() {
        let model = GaussianPairModel::gaussian_shift(0.7, 1);
        // Average a few replicates: the jackknife SE is itself noisy.
        let ratio: f64 = (0..8)
            .map(|k| {
                let a = rho_mc(&model, 40_000, 100 + k).unwrap().se_log_rho;
                let b = rho_mc(&model, 80_000, 200 + k).unwrap().se_log_rho;
                b / a
            })
            .sum::<f64>()
            / 8.0;
        let target = 1.0 / 2f64.sqrt();
        assert!(
            (ratio - target).abs() < 0.3 * target,
            "se ratio {ratio} vs {target}"
        );
    }

    #[test]
    fn bias_mse_bounds_hold_for_flat_weights() {
        let model = GaussianPairModel::gaussian_shift(0.0, 1);
        let reports =
            bias_mse_experiment(&model, &TestFunction::BOUNDED_FAMILY, 50, 400, 11).unwrap();
        for rep in reports {
            assert!((rep.rho - 1.0).abs() < 1e-12);
            assert!(rep.holds(3.0), "{rep:?}");
            // the recorded bounds are exactly 12 rho/N and 4 rho/N
            assert_eq!(rep.bias_bound, 12.0 * rep.rho / rep.n_particles as f64);
            assert_eq!(rep.mse_bound, 4.0 * rep.rho / rep.n_particles as f64);
        }
    }

    #[test]
    fn rho_mc_rejects_degenerate_weights() {
        struct Degenerate;
        impl Model for Degenerate {
            fn dim(&self) -> usize {
                1
            }
            fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
                use rand::Rng;
                out[0] = rng.gen::<f64>();
            }
            fn log_g(&self, _u: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
        }
        assert!(matches!(
            rho_mc(&Degenerate, 1_000, 0).unwrap_err(),
            Error::DegenerateWeights
        ));
        assert!(matches!(
            rho_mc(&Degenerate, 1, 0).unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }

    #[test]
    fn bias_mse_requires_replications_and_oracle() {
        let model = GaussianPairModel::gaussian_shift(1.0, 1);
        assert!(matches!(
            bias_mse_experiment(&model, &TestFunction::BOUNDED_FAMILY, 10, 5, 0).unwrap_err(),
            Error::InvalidParameter(_)
        ));
        struct NoOracleModel;
        impl Model for NoOracleModel {
            fn dim(&self) -> usize {
                1
            }
            fn sample_proposal(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
                use rand::Rng;
                out[0] = rng.gen::<f64>();
            }
            fn log_g(&self, u: &[f64]) -> f64 {
                -u[0]
            }
        }
        assert!(matches!(
            bias_mse_experiment(&NoOracleModel, &[TestFunction::Tanh], 10, 200, 0).unwrap_err(),
            Error::NoOracle(_)
        ));
    }

    #[test]
    fn ess_rho_consistency_flat_and_shift() {
        let flat = GaussianPairModel::gaussian_shift(0.0, 1);
        let dev = ess_rho_consistency(&flat, 10_000, 3).unwrap();
        assert!(dev < 1e-10, "flat deviation {dev}");

        let shift = GaussianPairModel::gaussian_shift(1.0, 1);
        let dev = ess_rho_consistency(&shift, 100_000, 3).unwrap();
        assert!(dev <= 0.05, "shift deviation {dev}");
    }

    #[test]
    fn cmse_constant_weights_degenerate_to_first_term() {
        // g constant: every central moment of g vanishes and only 3 m2[phi]
        // survives.
        let v = 1.7;
        let spec = CmseSpec::with_default_exponents(CmseMoments {
            pi_g: 2.0,
            pi_g2: 4.0,
            m2_phi_g: 4.0 * v, // m2[phi g] = c^2 m2[phi]
            m2_g: 0.0,
            m2_phibar_g: 4.0 * v,
            pi_abs_phi_g_2d: 123.0,
            m_2e_g: 0.0,
            pi_abs_phi_2p: 7.0,
            m_2q1p_g: 0.0,
        });
        let bound = cmse_bound(&spec).unwrap();
        assert!(
            (bound.c_mse - 3.0 * v).abs() < 1e-12,
            "c_mse {}",
            bound.c_mse
        );
    }

    #[test]
    fn cmse_rejects_infinite_moments_and_bad_exponents() {
        let moments = CmseMoments {
            pi_g: 1.0,
            pi_g2: f64::INFINITY,
            m2_phi_g: 0.0,
            m2_g: 0.0,
            m2_phibar_g: 0.0,
            pi_abs_phi_g_2d: 0.0,
            m_2e_g: 0.0,
            pi_abs_phi_2p: 0.0,
            m_2q1p_g: 0.0,
        };
        assert!(matches!(
            cmse_bound(&CmseSpec::with_default_exponents(moments.clone())).unwrap_err(),
            Error::NonApplicable(_)
        ));
        let mut spec = CmseSpec::with_default_exponents(CmseMoments {
            pi_g2: 1.0,
            ..moments
        });
        spec.d = 3.0; // 1/3 + 1/2 != 1
        assert!(matches!(
            cmse_bound(&spec).unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }

    #[test]
    fn c_t_roots_match_stated_values() {
        assert_eq!(c_t_root(2.0), 1.0);
        assert_eq!(c_t_root(4.0), 3.0);
        assert_eq!(c_t_root(6.0), 5.0);
    }

    #[test]
    fn product_collapse_exact_column() {
        let rows = product_collapse_sweep(std::f64::consts::E, &[1, 2, 5], None, 3, 0).unwrap();
        assert_eq!(rows[2].d, 5);
        assert!((rows[2].log_rho_exact - 5.0).abs() < 1e-12);
    }

    #[test]
    fn product_collapse_trivial_density() {
        let rows = product_collapse_sweep(1.0, &[1, 4, 16], Some(1000), 3, 0).unwrap();
        for row in rows {
            assert_eq!(row.log_rho_exact, 0.0);
            assert_eq!(row.mc.unwrap().log_rho, 0.0);
        }
        assert!(product_collapse_sweep(0.5, &[1], None, 3, 0).is_err());
    }

    #[test]
    fn singular_limit_slope_is_one_half() {
        let p = ScalarPotential::quadratic(0.0, 1.0).unwrap();
        let proposal = DiagonalGaussian::standard(1);
        let report = singular_limit_sweep(&p, &proposal, &[1e-1, 1e-2, 1e-3], 200_000, 17).unwrap();
        let fit = report.fit.unwrap();
        assert!((fit.slope - 0.5).abs() < 0.05, "slope {}", fit.slope);
        // rate column follows the closed expression
        for row in &report.rows {
            let expect = (1.0 / (4.0 * std::f64::consts::PI * row.epsilon)).sqrt();
            assert!((row.rate - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_limit_constant_potential_short_circuits() {
        // A flat potential with a (nominally positive) declared curvature:
        // the sweep detects constancy and reports rho = 1.
        let p = ScalarPotential::new(|_| 0.0, 0.0, 1.0).unwrap();
        let proposal = DiagonalGaussian::standard(1);
        let report = singular_limit_sweep(&p, &proposal, &[1.0], 100, 0).unwrap();
        assert_eq!(report.rows[0].mc.log_rho, 0.0);
    }

    proptest! {
        #[test]
        fn normalize_is_shift_invariant(
            logw in prop::collection::vec(-50.0f64..50.0, 1..40),
            shift in -300.0f64..300.0,
        ) {
            let a = normalize(&logw).unwrap();
            let shifted: Vec<f64> = logw.iter().map(|l| l + shift).collect();
            let b = normalize(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let total: f64 = a.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ess_is_within_one_and_n(
            logw in prop::collection::vec(-30.0f64..30.0, 1..60),
        ) {
            let n = logw.len();
            let e = WeightedEnsemble::new(vec![0.0; n], 1, logw).unwrap();
            let s = ess(&e);
            prop_assert!(s >= 1.0 - 1e-9);
            prop_assert!(s <= n as f64 + 1e-9);
        }

        #[test]
        fn autonormalized_constant_matches_constant(
            logw in prop::collection::vec(-30.0f64..30.0, 1..60),
            c in -5.0f64..5.0,
        ) {
            let n = logw.len();
            let e = WeightedEnsemble::new(vec![0.0; n], 1, logw).unwrap();
            let v = autonormalized_estimate(&e, |_| c);
            prop_assert!((v - c).abs() < 1e-12 * (1.0 + c.abs()));
        }
    }
}
