//! One step of linear-Gaussian particle filtering,
//! `v1 = M v0 + xi`, `y1 = H v1 + zeta`, with `v0 ~ N(0, P)`,
//! `xi ~ N(0, Q)`, `zeta ~ N(0, R)`.
//!
//! Both common proposals reduce to linear inverse problems on a single
//! variable, so their cost is read off the machinery of [`crate::inverse`]:
//!
//! | proposal | prior covariance | observation | noise covariance |
//! |----------|------------------|-------------|------------------|
//! | standard | `M P M* + Q`     | `H`         | `R`              |
//! | optimal  | `P`              | `H M`       | `R + H Q H*`     |
//!
//! The joint `(v0, v1)` target is never materialized; weights come from the
//! reduction's `log g`. The operators `A_st` and `A_op` give the intrinsic
//! dimensions of each proposal, with `tau_op <= tau_st` always. The
//! scalar-identity family (every operator a scalar times the identity)
//! carries the closed-form steady state `P_inf = (sqrt(q^2 + 4qr) - q)/2`
//! and hosts the small-noise and large-dimension sweeps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::inverse::{
    intrinsic_dims, matrix_sqrt, operator_a, IntrinsicDims, IpModel, LinearGaussianIP, OperatorA,
    ScalingFit,
};
use crate::math::{quartiles, NeumaierSum};
use crate::measures::{cholesky, symmetrize, DenseGaussian};
use crate::rng::{self, tag};
use crate::sampler::{ess, rho_mc, RhoEstimate, WeightedEnsemble};
use crate::{Error, Result};

/// Tolerance for the consistency check between the directly assembled
/// operators and the proposal reductions.
pub const REDUCTION_CONSISTENCY_TOL: f64 = 1e-10;

/// Which proposal a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Standard,
    Optimal,
}

impl ProposalKind {
    pub fn name(self) -> &'static str {
        match self {
            ProposalKind::Standard => "standard",
            ProposalKind::Optimal => "optimal",
        }
    }
}

/// The one-step filtering model `(M, H, P, Q, R)`.
#[derive(Debug, Clone)]
pub enum OneStepFilter {
    /// Every operator is a scalar multiple of the identity in dimension `d`.
    /// All spectra are then analytic and sweeps cost O(1) per grid point
    /// beyond data generation.
    ScalarIdentity {
        d: usize,
        m: f64,
        h: f64,
        p: f64,
        q: f64,
        r: f64,
    },
    Dense {
        m: DMatrix<f64>,
        h: DMatrix<f64>,
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    },
}

impl OneStepFilter {
    pub fn scalar_identity(d: usize, m: f64, h: f64, p: f64, q: f64, r: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        for (name, v) in [("p", p), ("q", q), ("r", r)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "covariance scalar {name} = {v} must be positive"
                )));
            }
        }
        if !m.is_finite() || !h.is_finite() {
            return Err(Error::InvalidParameter("m and h must be finite".into()));
        }
        Ok(Self::ScalarIdentity { d, m, h, p, q, r })
    }

    pub fn dense(
        m: DMatrix<f64>,
        h: DMatrix<f64>,
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let d = m.nrows();
        let d_y = h.nrows();
        if d.max(d_y) > crate::inverse::DENSE_DIMENSION_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "dense filters are limited to dimension {}; got state {d}, data {d_y} \
                 (use the scalar-identity form)",
                crate::inverse::DENSE_DIMENSION_LIMIT
            )));
        }
        if m.ncols() != d || h.ncols() != d {
            return Err(Error::DimensionMismatch(
                "M must be square and H must act on the state space".into(),
            ));
        }
        if p.shape() != (d, d) || q.shape() != (d, d) {
            return Err(Error::DimensionMismatch("P and Q must be d x d".into()));
        }
        if r.shape() != (d_y, d_y) {
            return Err(Error::DimensionMismatch("R must be d_y x d_y".into()));
        }
        cholesky(&p, "initial covariance P")?;
        cholesky(&q, "dynamics noise covariance Q")?;
        cholesky(&r, "observation noise covariance R")?;
        Ok(Self::Dense { m, h, p, q, r })
    }

    /// Dense model from row-major nested vectors.
    pub fn dense_from_rows(
        m: &[Vec<f64>],
        h: &[Vec<f64>],
        p: &[Vec<f64>],
        q: &[Vec<f64>],
        r: &[Vec<f64>],
    ) -> Result<Self> {
        use crate::inverse::rows_to_matrix;
        Self::dense(
            rows_to_matrix(m)?,
            rows_to_matrix(h)?,
            rows_to_matrix(p)?,
            rows_to_matrix(q)?,
            rows_to_matrix(r)?,
        )
    }

    /// `(state dimension, data dimension)`.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::ScalarIdentity { d, .. } => (*d, *d),
            Self::Dense { m, h, .. } => (m.nrows(), h.nrows()),
        }
    }
}

/// Inverse problem targeted by the standard proposal: prior covariance
/// `M P M* + Q`, observation `H`, noise `R`. Its density equals the
/// filtering weight `g_st(v1; y1)`.
pub fn standard_reduction(f: &OneStepFilter) -> Result<LinearGaussianIP> {
    match f {
        OneStepFilter::ScalarIdentity { d, m, h, p, q, r } => {
            LinearGaussianIP::diagonal(vec![*h; *d], vec![m * m * p + q; *d], vec![*r; *d])
        }
        OneStepFilter::Dense { m, h, p, q, r } => {
            let sigma = symmetrize(&(m * p * m.transpose())) + q;
            LinearGaussianIP::dense(h.clone(), sigma, r.clone())
        }
    }
}

/// Inverse problem targeted by the optimal proposal: prior covariance `P`,
/// observation `H M`, noise `R + H Q H*`. Its density equals `g_op(v0; y1)`.
pub fn optimal_reduction(f: &OneStepFilter) -> Result<LinearGaussianIP> {
    match f {
        OneStepFilter::ScalarIdentity { d, m, h, p, q, r } => {
            LinearGaussianIP::diagonal(vec![h * m; *d], vec![*p; *d], vec![r + h * h * q; *d])
        }
        OneStepFilter::Dense { m, h, p, q, r } => {
            let noise = symmetrize(&(h * q * h.transpose())) + r;
            LinearGaussianIP::dense(h * m, p.clone(), noise)
        }
    }
}

/// The two operators `A` with their intrinsic dimensions.
#[derive(Debug, Clone)]
pub struct AOperators {
    pub a_st: OperatorA,
    pub a_op: OperatorA,
    pub dims_st: IntrinsicDims,
    pub dims_op: IntrinsicDims,
}

/// Assemble `A_st = (MPM* + Q)^{1/2} H* R^{-1} H (MPM* + Q)^{1/2}` and
/// `A_op = P^{1/2} M* H* (R + HQH*)^{-1} H M P^{1/2}` directly, and check
/// their spectra against the proposal reductions to
/// [`REDUCTION_CONSISTENCY_TOL`].
pub fn a_operators(f: &OneStepFilter) -> Result<AOperators> {
    let (a_st, a_op) = match f {
        OneStepFilter::ScalarIdentity { d, m, h, p, q, r } => {
            let lam_st = h * h * (m * m * p + q) / r;
            let lam_op = m * m * h * h * p / (r + h * h * q);
            (
                OperatorA::Spectrum(vec![lam_st; *d]),
                OperatorA::Spectrum(vec![lam_op; *d]),
            )
        }
        OneStepFilter::Dense { m, h, p, q, r } => {
            let sigma_st = symmetrize(&(m * p * m.transpose())) + q;
            let st_half = matrix_sqrt(&sigma_st)?;
            let r_chol = cholesky(r, "observation noise covariance R")?;
            let hs = h * &st_half;
            let a_st = symmetrize(&(hs.transpose() * r_chol.solve(&hs)));

            let p_half = matrix_sqrt(p)?;
            let noise = symmetrize(&(h * q * h.transpose())) + r;
            let noise_chol = cholesky(&noise, "optimal-proposal noise covariance")?;
            let hmp = h * m * &p_half;
            let a_op = symmetrize(&(hmp.transpose() * noise_chol.solve(&hmp)));
            (OperatorA::Matrix(a_st), OperatorA::Matrix(a_op))
        }
    };
    let dims_st = intrinsic_dims(&a_st);
    let dims_op = intrinsic_dims(&a_op);

    for (kind, dims, reduction) in [
        (ProposalKind::Standard, &dims_st, standard_reduction(f)?),
        (ProposalKind::Optimal, &dims_op, optimal_reduction(f)?),
    ] {
        let red = intrinsic_dims(&operator_a(&reduction)?);
        let scale = 1.0 + dims.max_eigenvalue();
        let worst = dims
            .a_spectrum
            .iter()
            .zip(&red.a_spectrum)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        if worst > REDUCTION_CONSISTENCY_TOL * scale {
            return Err(Error::InternalInconsistency(format!(
                "{} operator disagrees with its reduction by {worst:.3e}",
                kind.name()
            )));
        }
    }
    Ok(AOperators {
        a_st,
        a_op,
        dims_st,
        dims_op,
    })
}

/// The Gaussian `N(m, Xi)` of `v1 | (v0, y1)` used to propagate
/// optimal-proposal particles:
/// `Xi = Q - Q H* (H Q H* + R)^{-1} H Q`,
/// `m = M v0 + Q H* (H Q H* + R)^{-1} (y1 - H M v0)`.
pub fn conditioned_dynamics(f: &OneStepFilter, v0: &[f64], y1: &[f64]) -> Result<DenseGaussian> {
    let (d, d_y) = f.dims();
    if v0.len() != d || y1.len() != d_y {
        return Err(Error::DimensionMismatch(format!(
            "v0 length {} (need {d}), y1 length {} (need {d_y})",
            v0.len(),
            y1.len()
        )));
    }
    match f {
        OneStepFilter::ScalarIdentity { d, m, h, q, r, .. } => {
            let denom = h * h * q + r;
            let xi = q - q * q * h * h / denom;
            let gain = q * h / denom;
            let mean = DVector::from_iterator(
                *d,
                v0.iter()
                    .zip(y1)
                    .map(|(&v, &y)| m * v + gain * (y - h * m * v)),
            );
            DenseGaussian::new(mean, DMatrix::identity(*d, *d) * xi)
        }
        OneStepFilter::Dense { m, h, q, r, .. } => {
            let v0 = DVector::from_column_slice(v0);
            let y1 = DVector::from_column_slice(y1);
            let innov_cov = symmetrize(&(h * q * h.transpose())) + r;
            let chol = cholesky(&innov_cov, "H Q H* + R")?;
            let qh = q * h.transpose();
            let xi = symmetrize(&(q - &qh * chol.solve(&qh.transpose())));
            let mv = m * &v0;
            let mean = &mv + &qh * chol.solve(&(y1 - h * &mv));
            DenseGaussian::new(mean, xi)
        }
    }
}

/// Steady-state covariance scalar `P_inf = (sqrt(q^2 + 4 q r) - q)/2` of
/// the scalar family with `M = H = I`; the fixed point of
/// [`kalman_update_scalar`].
pub fn stationary_covariance(f: &OneStepFilter) -> Result<f64> {
    match f {
        OneStepFilter::ScalarIdentity { m, h, q, r, .. } if *m == 1.0 && *h == 1.0 => {
            Ok(p_infinity(*q, *r))
        }
        _ => Err(Error::FormViolation(
            "steady state requires the scalar-identity form with M = H = I".into(),
        )),
    }
}

/// `P_inf` as a function of the noise scalars.
pub fn p_infinity(q: f64, r: f64) -> f64 {
    0.5 * ((q * q + 4.0 * q * r).sqrt() - q)
}

/// One covariance cycle of the Kalman recursion in the scalar family:
/// `sigma' = m^2 p + q`, then `c' = sigma' - sigma'^2 h^2 / (h^2 sigma' + r)`.
pub fn kalman_update_scalar(f: &OneStepFilter, p_cur: f64) -> Result<f64> {
    if !(p_cur > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("P = {p_cur}")));
    }
    match f {
        OneStepFilter::ScalarIdentity { m, h, q, r, .. } => {
            let sigma = m * m * p_cur + q;
            Ok(sigma - sigma * sigma * h * h / (h * h * sigma + r))
        }
        OneStepFilter::Dense { .. } => Err(Error::FormViolation(
            "scalar update requires the scalar-identity form".into(),
        )),
    }
}

/// One covariance cycle in dense form:
/// `Sigma' = M P M* + Q`, `C' = Sigma' - Sigma' H* (H Sigma' H* + R)^{-1} H Sigma'`.
pub fn kalman_update_dense(f: &OneStepFilter, p_cur: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match f {
        OneStepFilter::Dense { m, h, q, r, .. } => {
            if p_cur.shape() != q.shape() {
                return Err(Error::DimensionMismatch("P has the wrong shape".into()));
            }
            cholesky(p_cur, "current covariance P")?;
            let sigma = symmetrize(&(m * p_cur * m.transpose())) + q;
            let hs = h * &sigma;
            let innov = symmetrize(&(h * &sigma * h.transpose())) + r;
            let chol = cholesky(&innov, "H Sigma' H* + R")?;
            Ok(symmetrize(&(&sigma - hs.transpose() * chol.solve(&hs))))
        }
        OneStepFilter::ScalarIdentity { .. } => Err(Error::FormViolation(
            "dense update requires the dense form".into(),
        )),
    }
}

/// Closed-form and Monte Carlo cost comparison of the two proposals on one
/// data realization.
#[derive(Debug, Clone)]
pub struct ProposalComparison {
    pub log_rho_st_exact: f64,
    pub log_rho_op_exact: f64,
    pub mc_st: RhoEstimate,
    pub mc_op: RhoEstimate,
    pub ess_st: f64,
    pub ess_op: f64,
    pub n: usize,
}

/// Compare the proposals on data `y1` with `n` particles each.
///
/// Exact `log rho` comes from the diagonal closed form on the whitened
/// reduction (scalar-identity path) or from the Gaussian divergence of
/// posterior against prior (dense path); the Monte Carlo column estimates
/// the same quantities by importance sampling the reductions, with the
/// effective sample size of each weight set.
pub fn compare_proposals(
    f: &OneStepFilter,
    y1: &[f64],
    n: usize,
    seed: u64,
) -> Result<ProposalComparison> {
    let st = IpModel::new(standard_reduction(f)?, y1.to_vec())?;
    let op = IpModel::new(optimal_reduction(f)?, y1.to_vec())?;
    let exact = |m: &IpModel| {
        crate::sampler::Model::log_rho_exact(m)
            .ok_or_else(|| Error::NonIntegrable("closed-form rho is not finite".into()))
    };
    let log_rho_st_exact = exact(&st)?;
    let log_rho_op_exact = exact(&op)?;

    let mc_st = rho_mc(&st, n, rng::derive(seed, tag::RHO_MC, 0))?;
    let mc_op = rho_mc(&op, n, rng::derive(seed, tag::RHO_MC, 1))?;
    let ens_st = WeightedEnsemble::from_model(&st, n, rng::derive(seed, tag::SAMPLE, 0))?;
    let ens_op = WeightedEnsemble::from_model(&op, n, rng::derive(seed, tag::SAMPLE, 1))?;

    Ok(ProposalComparison {
        log_rho_st_exact,
        log_rho_op_exact,
        mc_st,
        mc_op,
        ess_st: ess(&ens_st),
        ess_op: ess(&ens_op),
        n,
    })
}

/// How the sweep chooses the initial covariance `P` at each grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initialization {
    /// `P = P_inf(q, r)`, the steady state of the scalar family.
    Stationary,
    /// `P = p I` with a fixed scalar `p`.
    FixedP(f64),
}

impl Initialization {
    pub fn name(self) -> &'static str {
        match self {
            Initialization::Stationary => "stationary",
            Initialization::FixedP(_) => "fixed_p",
        }
    }
}

/// Dynamics-noise specification for the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QSpec {
    Fixed(f64),
    /// `q = r` at every grid point (the joint small-noise row).
    EqualR,
}

/// Grid for [`sweep_filter_scalings`]: exactly one of the two axes may hold more
/// than one value; the other is pinned to its single entry.
#[derive(Debug, Clone)]
pub struct FilterGrid {
    pub r_values: Vec<f64>,
    pub q: QSpec,
    pub d_values: Vec<usize>,
}

/// One grid point of the proposal-comparison sweep.
#[derive(Debug, Clone)]
pub struct FilterSweepRow {
    pub init: &'static str,
    pub r: f64,
    pub q: f64,
    pub p: f64,
    pub d: usize,
    /// Eigenvalue of `A_st` (constant across coordinates here).
    pub lambda_st: f64,
    pub lambda_op: f64,
    pub p_infinity: Option<f64>,
    pub tau_st: f64,
    pub tau_op: f64,
    pub efd_st: f64,
    pub efd_op: f64,
    pub log_rho_st_median: f64,
    pub log_rho_st_q25: f64,
    pub log_rho_st_q75: f64,
    pub log_rho_op_median: f64,
    pub log_rho_op_q25: f64,
    pub log_rho_op_q75: f64,
}

#[derive(Debug, Clone)]
pub struct FilterSweepReport {
    pub rows: Vec<FilterSweepRow>,
    pub fits: Vec<ScalingFit>,
    pub data_seeds: usize,
}

/// Reproduce the small-noise and large-dimension scalings of the two
/// proposals in the scalar-identity family with `M = H = I`.
///
/// Data is generated from the zero truth, `y1 = sqrt(r) xi`, with one
/// derived seed per (grid point, data seed); `log rho` medians and
/// quartiles are taken over `data_seeds` datasets. Fits regress the median
/// `log rho` of each proposal on `log(1/r)` for noise sweeps and on `d`
/// for dimension sweeps.
pub fn sweep_filter_scalings(
    init: Initialization,
    grid: &FilterGrid,
    data_seeds: usize,
    seed: u64,
) -> Result<FilterSweepReport> {
    if let Initialization::FixedP(p) = init {
        if !(p > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("fixed p = {p}")));
        }
    }
    if grid.r_values.is_empty() || grid.d_values.is_empty() {
        return Err(Error::InvalidParameter("grid axes must be nonempty".into()));
    }
    let r_axis = grid.r_values.len() > 1;
    let d_axis = grid.d_values.len() > 1;
    if r_axis && d_axis {
        return Err(Error::InvalidParameter(
            "exactly one grid axis may vary; got several r and several d values".into(),
        ));
    }
    if grid.r_values.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("every r must be positive".into()));
    }
    if let QSpec::Fixed(q) = grid.q {
        if !(q > 0.0) {
            return Err(Error::InvalidParameter("q must be positive".into()));
        }
    }

    let points: Vec<(f64, usize)> = if d_axis {
        let r = grid.r_values[0];
        grid.d_values.iter().map(|&d| (r, d)).collect()
    } else {
        let d = grid.d_values[0];
        grid.r_values.iter().map(|&r| (r, d)).collect()
    };
    let n_seeds = data_seeds.max(1);

    let rows: Vec<FilterSweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(i, &(r, d))| -> Result<FilterSweepRow> {
            let q = match grid.q {
                QSpec::Fixed(q) => q,
                QSpec::EqualR => r,
            };
            let (p, p_inf) = match init {
                Initialization::Stationary => {
                    let p = p_infinity(q, r);
                    (p, Some(p))
                }
                Initialization::FixedP(p) => (p, None),
            };
            let lambda_st = (p + q) / r;
            let lambda_op = p / (q + r);

            let mut st = Vec::with_capacity(n_seeds);
            let mut op = Vec::with_capacity(n_seeds);
            for s in 0..n_seeds {
                let mut rng = rng::stream(rng::derive(seed, i as u64, s as u64), tag::DATA, 0);
                let mut z_sq = NeumaierSum::new();
                for _ in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    z_sq.add(xi * xi);
                }
                // y = sqrt(r) xi; whitened by R the standard data is xi
                // itself, whitened by R + Q it shrinks by r/(r + q).
                let z_sq = z_sq.total();
                st.push(log_rho_scalar(lambda_st, d, z_sq));
                op.push(log_rho_scalar(lambda_op, d, z_sq * r / (r + q)));
            }
            let (st_q25, st_med, st_q75) = quartiles(&st);
            let (op_q25, op_med, op_q75) = quartiles(&op);
            Ok(FilterSweepRow {
                init: init.name(),
                r,
                q,
                p,
                d,
                lambda_st,
                lambda_op,
                p_infinity: p_inf,
                tau_st: lambda_st * d as f64,
                tau_op: lambda_op * d as f64,
                efd_st: lambda_st / (1.0 + lambda_st) * d as f64,
                efd_op: lambda_op / (1.0 + lambda_op) * d as f64,
                log_rho_st_median: st_med,
                log_rho_st_q25: st_q25,
                log_rho_st_q75: st_q75,
                log_rho_op_median: op_med,
                log_rho_op_q25: op_q25,
                log_rho_op_q75: op_q75,
            })
        })
        .collect::<Result<_>>()?;

    let mut fits = Vec::new();
    let mut push = |response: &'static str, x_desc: &'static str, xs: Vec<f64>, ys: Vec<f64>| {
        if let Some(fit) = crate::math::ols_fit(&xs, &ys) {
            fits.push(ScalingFit {
                response,
                x_desc,
                fit,
            });
        }
    };
    if d_axis {
        let xs: Vec<f64> = rows.iter().map(|row| row.d as f64).collect();
        push(
            "log_rho_st",
            "d",
            xs.clone(),
            rows.iter().map(|r| r.log_rho_st_median).collect(),
        );
        push(
            "log_rho_op",
            "d",
            xs,
            rows.iter().map(|r| r.log_rho_op_median).collect(),
        );
    } else {
        let xs: Vec<f64> = rows.iter().map(|row| (1.0 / row.r).ln()).collect();
        push(
            "log_rho_st",
            "log(1/r)",
            xs.clone(),
            rows.iter().map(|r| r.log_rho_st_median).collect(),
        );
        push(
            "log_rho_op",
            "log(1/r)",
            xs.clone(),
            rows.iter().map(|r| r.log_rho_op_median).collect(),
        );
        push(
            "log_lambda_st",
            "log(1/r)",
            xs.clone(),
            rows.iter().map(|r| r.lambda_st.ln()).collect(),
        );
        push(
            "log_lambda_op",
            "log(1/r)",
            xs.clone(),
            rows.iter().map(|r| r.lambda_op.ln()).collect(),
        );
        if matches!(init, Initialization::Stationary) {
            push(
                "log_p_infinity",
                "log(r)",
                rows.iter().map(|row| row.r.ln()).collect(),
                rows.iter().map(|r| r.p.ln()).collect(),
            );
        }
    }

    Ok(FilterSweepReport {
        rows,
        fits,
        data_seeds: n_seeds,
    })
}

/// Exact `log rho` for `d` identical coordinates with eigenvalue `lambda`
/// and whitened data square sum `z_sq_sum`.
fn log_rho_scalar(lambda: f64, d: usize, z_sq_sum: f64) -> f64 {
    let per = lambda.ln_1p() - 0.5 * (2.0 * lambda).ln_1p();
    let coef = 2.0 * lambda / (1.0 + 2.0 * lambda) - lambda / (1.0 + lambda);
    d as f64 * per + coef * z_sq_sum
}
