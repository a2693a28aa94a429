//! Per-command orchestration: parse the model and grid sections, call the
//! library, and shape the results into output tables.
//!
//! Error discipline: problems traceable to the config (bad values, wrong
//! model kind for the command, degenerate grids) are [`CliError::Config`]
//! and exit with code 2; numeric failures during execution are
//! [`CliError::Runtime`] with exit code 3. Divergence verdicts are neither:
//! they become labeled rows with `"inf"` in the verdict column.

use isdim::filter::{
    a_operators, compare_proposals, p_infinity, standard_reduction, sweep_filter_scalings,
    FilterGrid, Initialization, OneStepFilter, QSpec,
};
use isdim::inverse::{
    deconvolution_model, intrinsic_dims, operator_a, sweep_cascade_scalings, CascadeRegime,
    IpModel, LinearGaussianIP, SpectralCascade, DEFAULT_D_MAX,
};
use isdim::measures::{
    chi2_divergence, log_rho_gaussian, DiagonalGaussian, Gaussian, ScalarPotential,
};
use isdim::sampler::{
    bias_mse_experiment, product_collapse_sweep, singular_limit_sweep, GaussianPairModel, Model,
    TestFunction,
};
use isdim::{rng, Error};

use crate::config::{ConfigError, Fields};
use crate::emit::{Format, Table, Value};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Runtime(String),
    /// Exit code 1.
    Io(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

/// Library errors raised while building models from config values.
fn cfg(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Library errors raised during numeric execution.
fn run_err(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Diagnose,
    SweepCascade,
    VerifyBounds,
    FilterCompare,
    SweepFilter,
    DeconvolveDemo,
    SingularLimit,
    ProductCollapse,
}

impl Command {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "diagnose" => Self::Diagnose,
            "sweep-cascade" => Self::SweepCascade,
            "verify-bounds" => Self::VerifyBounds,
            "filter-compare" => Self::FilterCompare,
            "sweep-filter" => Self::SweepFilter,
            "deconvolve-demo" => Self::DeconvolveDemo,
            "singular-limit" => Self::SingularLimit,
            "product-collapse" => Self::ProductCollapse,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Diagnose => "diagnose",
            Self::SweepCascade => "sweep-cascade",
            Self::VerifyBounds => "verify-bounds",
            Self::FilterCompare => "filter-compare",
            Self::SweepFilter => "sweep-filter",
            Self::DeconvolveDemo => "deconvolve-demo",
            Self::SingularLimit => "singular-limit",
            Self::ProductCollapse => "product-collapse",
        }
    }

    pub const ALL: [&'static str; 8] = [
        "diagnose",
        "sweep-cascade",
        "verify-bounds",
        "filter-compare",
        "sweep-filter",
        "deconvolve-demo",
        "singular-limit",
        "product-collapse",
    ];
}

/// The `[run]` section, shared by every command.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub seed: u64,
    pub n_particles: usize,
    pub replications: usize,
    pub data_seeds: usize,
    pub mc_max_d: usize,
    pub output: String,
    pub format: Format,
    pub timestamp: bool,
}

impl RunParams {
    fn parse(f: &mut Fields) -> Result<Self, CliError> {
        if !f.has("run", "seed") {
            return Err(CliError::Config(
                "[run] seed: seed must be explicit; there is no default seed".into(),
            ));
        }
        let seed = f.u64_req("run", "seed")?;
        let n_particles = f.usize_or("run", "n_particles", 10_000)?;
        let replications = f.usize_or("run", "replications", 1_000)?;
        let data_seeds = f.usize_or("run", "data_seeds", 32)?;
        let mc_max_d = f.usize_or("run", "mc_max_d", 3)?;
        let output = f.str_or("run", "output", "-");
        let format = match f
            .enum_or("run", "format", &["csv", "json"], "csv")?
            .as_str()
        {
            "json" => Format::Json,
            _ => Format::Csv,
        };
        let timestamp = f.bool_or("run", "timestamp", true)?;
        if n_particles == 0 {
            return Err(CliError::Config("[run] n_particles: must be >= 1".into()));
        }
        Ok(Self {
            seed,
            n_particles,
            replications,
            data_seeds,
            mc_max_d,
            output,
            format,
            timestamp,
        })
    }
}

/// Parse, validate and execute; returns the rows, the normalized config
/// echo, and the run parameters.
pub fn run_command(
    cmd: Command,
    mut fields: Fields,
) -> Result<(Table, Vec<(String, String)>, RunParams), CliError> {
    let plan = Plan::parse(cmd, &mut fields)?;
    let run = RunParams::parse(&mut fields)?;
    let norm = fields.finish()?;
    let table = plan.execute(&run)?;
    Ok((table, norm, run))
}

const MODEL_KINDS: [&str; 4] = ["cascade", "dense-ip", "filter", "gaussian-pair"];

fn require_kind(cmd: Command, got: &str, want: &str) -> Result<(), CliError> {
    if got != want {
        return Err(CliError::Config(format!(
            "[model] kind: command {} requires a {want} model, got {got}",
            cmd.name()
        )));
    }
    Ok(())
}

/// Everything needed to run, parsed and validated.
enum Plan {
    DiagnoseCascade(SpectralCascade),
    DiagnoseDenseIp(LinearGaussianIP, Option<Vec<f64>>),
    DiagnoseFilter(OneStepFilter, Option<Vec<f64>>),
    DiagnosePair(Box<PairSpec>),
    SweepCascade(CascadeRegime),
    VerifyBounds(Box<PairSpec>, Vec<usize>),
    FilterCompare(OneStepFilter, Option<Vec<f64>>),
    SweepFilter(Initialization, FilterGrid),
    DeconvolveDemo(f64, f64, SpectralCascade),
    SingularLimit(Box<PairSpec>, Vec<f64>),
    ProductCollapse(Box<PairSpec>, Vec<usize>),
}

struct PairSpec {
    target: DiagonalGaussian,
    proposal: DiagonalGaussian,
}

fn parse_pair(f: &mut Fields) -> Result<PairSpec, CliError> {
    let target_mean = f.f64_list_req("model", "target_mean")?;
    let target_var = f.f64_list_req("model", "target_var")?;
    let d = target_mean.len();
    let proposal_mean = f.f64_list_or("model", "proposal_mean", &vec![0.0; d])?;
    let proposal_var = f.f64_list_or("model", "proposal_var", &vec![1.0; d])?;
    let target = DiagonalGaussian::new(target_mean, target_var).map_err(cfg)?;
    let proposal = DiagonalGaussian::new(proposal_mean, proposal_var).map_err(cfg)?;
    if target.dim() != proposal.dim() {
        return Err(CliError::Config(
            "[model] proposal_mean/proposal_var: lengths must match the target".into(),
        ));
    }
    Ok(PairSpec { target, proposal })
}

fn parse_cascade(f: &mut Fields) -> Result<SpectralCascade, CliError> {
    let beta = f.f64_or("model", "beta", 1.0)?;
    let gamma = f.f64_or("model", "gamma", 1.0)?;
    let d = f.usize_or("model", "d", 16)?;
    let truth = parse_truth(f, d)?;
    SpectralCascade::new(beta, gamma, d, truth).map_err(cfg)
}

fn parse_truth(f: &mut Fields, d: usize) -> Result<Vec<f64>, CliError> {
    let text = f.str_or("model", "truth", "zero");
    if text == "zero" {
        return Ok(vec![0.0; d]);
    }
    let mut out = Vec::new();
    for part in text.split(',') {
        out.push(part.trim().parse::<f64>().map_err(|_| {
            CliError::Config(format!(
                "[model] truth: expected 'zero' or a comma-separated list, got {part:?}"
            ))
        })?);
    }
    if out.len() != d {
        return Err(CliError::Config(format!(
            "[model] truth: has {} entries but d = {d}",
            out.len()
        )));
    }
    Ok(out)
}

fn parse_filter(f: &mut Fields) -> Result<OneStepFilter, CliError> {
    let form = f.enum_or("model", "form", &["scalar", "dense"], "scalar")?;
    if form == "dense" {
        let m = f.matrix_req("model", "m")?;
        let h = f.matrix_req("model", "h")?;
        let p = f.matrix_req("model", "p")?;
        let q = f.matrix_req("model", "q")?;
        let r = f.matrix_req("model", "r")?;
        OneStepFilter::dense_from_rows(&m, &h, &p, &q, &r).map_err(cfg)
    } else {
        let d = f.usize_or("model", "d", 1)?;
        let m = f.f64_or("model", "m", 1.0)?;
        let h = f.f64_or("model", "h", 1.0)?;
        let p = f.f64_or("model", "p", 1.0)?;
        let q = f.f64_or("model", "q", 1.0)?;
        let r = f.f64_or("model", "r", 1.0)?;
        OneStepFilter::scalar_identity(d, m, h, p, q, r).map_err(cfg)
    }
}

fn parse_data_vector(f: &mut Fields, expected: usize) -> Result<Option<Vec<f64>>, CliError> {
    let Some(text) = f.str_opt("model", "y") else {
        return Ok(None);
    };
    let mut out = Vec::new();
    for part in text.split(',') {
        out.push(part.trim().parse::<f64>().map_err(|_| {
            CliError::Config(format!(
                "[model] y: expected a comma-separated list of numbers, got {part:?}"
            ))
        })?);
    }
    if out.len() != expected {
        return Err(CliError::Config(format!(
            "[model] y: has {} entries but the data dimension is {expected}",
            out.len()
        )));
    }
    Ok(Some(out))
}

impl Plan {
    fn parse(cmd: Command, f: &mut Fields) -> Result<Self, CliError> {
        let kind = f.enum_req("model", "kind", &MODEL_KINDS)?;
        match cmd {
            Command::Diagnose => match kind.as_str() {
                "cascade" => Ok(Plan::DiagnoseCascade(parse_cascade(f)?)),
                "dense-ip" => {
                    let ip = parse_dense_ip(f)?;
                    let (_, d_y) = ip.dims();
                    let y = parse_data_vector(f, d_y)?;
                    Ok(Plan::DiagnoseDenseIp(ip, y))
                }
                "filter" => {
                    let filter = parse_filter(f)?;
                    let (_, d_y) = filter.dims();
                    let y = parse_data_vector(f, d_y)?;
                    Ok(Plan::DiagnoseFilter(filter, y))
                }
                "gaussian-pair" => Ok(Plan::DiagnosePair(Box::new(parse_pair(f)?))),
                _ => unreachable!(),
            },
            Command::SweepCascade => {
                require_kind(cmd, &kind, "cascade")?;
                Ok(Plan::SweepCascade(parse_table1_regime(f)?))
            }
            Command::VerifyBounds => {
                require_kind(cmd, &kind, "gaussian-pair")?;
                let pair = parse_pair(f)?;
                let n_values = f.usize_list_opt("grid", "n_values")?.unwrap_or_default();
                Ok(Plan::VerifyBounds(Box::new(pair), n_values))
            }
            Command::FilterCompare => {
                require_kind(cmd, &kind, "filter")?;
                let filter = parse_filter(f)?;
                let (_, d_y) = filter.dims();
                let y = parse_data_vector(f, d_y)?;
                Ok(Plan::FilterCompare(filter, y))
            }
            Command::SweepFilter => {
                require_kind(cmd, &kind, "filter")?;
                let filter = parse_filter(f)?;
                let OneStepFilter::ScalarIdentity { d, m, h, p, r, .. } = filter else {
                    return Err(CliError::Config(
                        "[model] form: sweep-filter requires the scalar form".into(),
                    ));
                };
                if m != 1.0 || h != 1.0 {
                    return Err(CliError::Config(
                        "[model] m/h: sweep-filter lives in the M = H = I family; set m = h = 1"
                            .into(),
                    ));
                }
                let init = match f
                    .enum_req("grid", "init", &["stationary", "fixed_p"])?
                    .as_str()
                {
                    "stationary" => Initialization::Stationary,
                    _ => Initialization::FixedP(p),
                };
                let q_text = f.str_or("grid", "q", "1");
                let q = if q_text == "equal_r" {
                    QSpec::EqualR
                } else {
                    QSpec::Fixed(q_text.parse::<f64>().map_err(|_| {
                        CliError::Config(format!(
                            "[grid] q: expected a number or 'equal_r', got {q_text:?}"
                        ))
                    })?)
                };
                let r_values = f.f64_list_or("grid", "r_values", &[r])?;
                let d_values = f.usize_list_or("grid", "d_values", &[d])?;
                if r_values.len() > 1 && d_values.len() > 1 {
                    return Err(CliError::Config(
                        "[grid] r_values/d_values: exactly one axis may vary".into(),
                    ));
                }
                let varying = r_values.len().max(d_values.len());
                if varying < 3 {
                    return Err(CliError::Config(
                        "[grid] the varying axis needs at least 3 points for a fit".into(),
                    ));
                }
                Ok(Plan::SweepFilter(
                    init,
                    FilterGrid {
                        r_values,
                        q,
                        d_values,
                    },
                ))
            }
            Command::DeconvolveDemo => {
                require_kind(cmd, &kind, "cascade")?;
                let t = f.f64_req("model", "t")?;
                let s = f.f64_req("model", "s")?;
                let gamma = f.f64_or("model", "gamma", 1e-2)?;
                let d = f.usize_or("model", "d", 64)?;
                let truth = parse_truth(f, d)?;
                let model = deconvolution_model(t, s, d, gamma, truth).map_err(cfg)?;
                Ok(Plan::DeconvolveDemo(t, s, model))
            }
            Command::SingularLimit => {
                require_kind(cmd, &kind, "gaussian-pair")?;
                let pair = parse_pair(f)?;
                if pair.proposal.dim() != 1 {
                    return Err(CliError::Config(
                        "[model] singular-limit requires a one-dimensional pair".into(),
                    ));
                }
                let epsilons = f.f64_list_req("grid", "epsilons")?;
                if epsilons.iter().any(|&e| !(e > 0.0)) {
                    return Err(CliError::Config(
                        "[grid] epsilons: every value must be positive".into(),
                    ));
                }
                Ok(Plan::SingularLimit(Box::new(pair), epsilons))
            }
            Command::ProductCollapse => {
                require_kind(cmd, &kind, "gaussian-pair")?;
                let pair = parse_pair(f)?;
                if pair.proposal.dim() != 1 {
                    return Err(CliError::Config(
                        "[model] product-collapse requires a one-dimensional pair".into(),
                    ));
                }
                let d_values = f.usize_list_req("grid", "d_values")?;
                Ok(Plan::ProductCollapse(Box::new(pair), d_values))
            }
        }
    }

    fn execute(self, run: &RunParams) -> Result<Table, CliError> {
        match self {
            Plan::DiagnoseCascade(cascade) => diagnose_cascade(&cascade, run),
            Plan::DiagnoseDenseIp(ip, y) => diagnose_dense_ip(ip, y, run),
            Plan::DiagnoseFilter(filter, y) => diagnose_filter(&filter, y, run),
            Plan::DiagnosePair(pair) => diagnose_pair(&pair),
            Plan::SweepCascade(regime) => sweep_cascade(&regime, run),
            Plan::VerifyBounds(pair, n_values) => verify_bounds(&pair, &n_values, run),
            Plan::FilterCompare(filter, y) => filter_compare(&filter, y, run),
            Plan::SweepFilter(init, grid) => sweep_filter(init, &grid, run),
            Plan::DeconvolveDemo(t, s, model) => deconvolve_demo(t, s, &model, run),
            Plan::SingularLimit(pair, epsilons) => singular_limit(&pair, &epsilons, run),
            Plan::ProductCollapse(pair, d_values) => product_collapse(&pair, &d_values, run),
        }
    }
}

fn parse_dense_ip(f: &mut Fields) -> Result<LinearGaussianIP, CliError> {
    let k = f.matrix_req("model", "k")?;
    let sigma = f.matrix_req("model", "sigma")?;
    let gamma = f.matrix_req("model", "gamma")?;
    LinearGaussianIP::dense_from_rows(&k, &sigma, &gamma).map_err(cfg)
}

fn diagnose_cascade(cascade: &SpectralCascade, run: &RunParams) -> Result<Table, CliError> {
    let dims = cascade.intrinsic_dims();
    let y = cascade.generate_data(run.seed);
    let log_rho = cascade.log_rho(&y).map_err(run_err)?;
    let mut t = Table::new(vec![
        "kind", "beta", "gamma", "d", "tau", "efd", "log_rho", "verdict",
    ]);
    t.push(vec![
        Value::Str("cascade".into()),
        Value::Float(cascade.beta),
        Value::Float(cascade.gamma),
        Value::Int(cascade.d as i64),
        Value::Float(dims.tau),
        Value::Float(dims.efd),
        Value::Float(log_rho),
        Value::Str("ok".into()),
    ]);
    Ok(t)
}

fn diagnose_dense_ip(
    ip: LinearGaussianIP,
    y: Option<Vec<f64>>,
    run: &RunParams,
) -> Result<Table, CliError> {
    let (d_u, d_y) = ip.dims();
    let dims = intrinsic_dims(&operator_a(&ip).map_err(run_err)?);
    let y = match y {
        Some(y) => y,
        None => ip.truth_zero_data(run.seed).map_err(run_err)?,
    };
    let model = IpModel::new(ip, y).map_err(run_err)?;
    let (log_rho, verdict) = match model.log_rho_exact() {
        Some(v) => (Value::Float(v), "ok"),
        None => (Value::Empty, "inf"),
    };
    let mut t = Table::new(vec![
        "kind", "d_u", "d_y", "tau", "efd", "log_rho", "verdict",
    ]);
    t.push(vec![
        Value::Str("dense-ip".into()),
        Value::Int(d_u as i64),
        Value::Int(d_y as i64),
        Value::Float(dims.tau),
        Value::Float(dims.efd),
        log_rho,
        Value::Str(verdict.into()),
    ]);
    Ok(t)
}

fn diagnose_filter(
    filter: &OneStepFilter,
    y: Option<Vec<f64>>,
    run: &RunParams,
) -> Result<Table, CliError> {
    let ops = a_operators(filter).map_err(run_err)?;
    let y = match y {
        Some(y) => y,
        None => standard_reduction(filter)
            .and_then(|red| red.truth_zero_data(run.seed))
            .map_err(run_err)?,
    };
    let p_inf = match filter {
        OneStepFilter::ScalarIdentity { m, h, q, r, .. } if *m == 1.0 && *h == 1.0 => {
            Value::Float(p_infinity(*q, *r))
        }
        _ => Value::Empty,
    };
    let (d_u, d_y) = filter.dims();
    let mut t = Table::new(vec![
        "kind",
        "proposal",
        "d_u",
        "d_y",
        "tau",
        "efd",
        "log_rho",
        "p_infinity",
        "verdict",
    ]);
    for (name, dims, reduction) in [
        ("standard", &ops.dims_st, standard_reduction(filter)),
        ("optimal", &ops.dims_op, isdim::filter::optimal_reduction(filter)),
    ] {
        let model = IpModel::new(reduction.map_err(run_err)?, y.clone()).map_err(run_err)?;
        let (log_rho, verdict) = match model.log_rho_exact() {
            Some(v) => (Value::Float(v), "ok"),
            None => (Value::Empty, "inf"),
        };
        t.push(vec![
            Value::Str("filter".into()),
            Value::Str(name.into()),
            Value::Int(d_u as i64),
            Value::Int(d_y as i64),
            Value::Float(dims.tau),
            Value::Float(dims.efd),
            log_rho,
            p_inf.clone(),
            Value::Str(verdict.into()),
        ]);
    }
    Ok(t)
}

fn diagnose_pair(pair: &PairSpec) -> Result<Table, CliError> {
    let target = Gaussian::Diagonal(pair.target.clone());
    let proposal = Gaussian::Diagonal(pair.proposal.clone());
    let mut t = Table::new(vec!["kind", "dim", "chi2", "log_rho", "rho", "verdict"]);
    let row = match chi2_divergence(&target, &proposal) {
        Ok(chi2) => {
            let log_rho = log_rho_gaussian(&target, &proposal).map_err(run_err)?;
            vec![
                Value::Str("gaussian-pair".into()),
                Value::Int(pair.target.dim() as i64),
                Value::Float(chi2),
                Value::Float(log_rho),
                Value::Float(log_rho.exp()),
                Value::Str("ok".into()),
            ]
        }
        Err(Error::NonIntegrable(_)) => vec![
            Value::Str("gaussian-pair".into()),
            Value::Int(pair.target.dim() as i64),
            Value::Empty,
            Value::Empty,
            Value::Empty,
            Value::Str("inf".into()),
        ],
        Err(e) => return Err(run_err(e)),
    };
    t.push(row);
    Ok(t)
}

fn parse_table1_regime(f: &mut Fields) -> Result<CascadeRegime, CliError> {
    let regime = f.enum_req(
        "grid",
        "regime",
        &[
            "small_noise_fixed_d",
            "small_noise_infinite_d",
            "large_d",
            "joint",
            "regularity",
        ],
    )?;
    let check_grid = |name: &str, len: usize| -> Result<(), CliError> {
        if len < 3 {
            return Err(CliError::Config(format!(
                "[grid] {name}: needs at least 3 points, got {len}"
            )));
        }
        Ok(())
    };
    match regime.as_str() {
        "small_noise_fixed_d" => {
            let beta = f.f64_or("model", "beta", 1.0)?;
            let d = f.usize_or("model", "d", 4)?;
            let gammas = f.f64_list_or("grid", "gammas", &[1e-2, 1e-3, 1e-4, 1e-5])?;
            check_grid("gammas", gammas.len())?;
            Ok(CascadeRegime::SmallNoiseFixedD { beta, d, gammas })
        }
        "small_noise_infinite_d" => {
            let beta = f.f64_or("model", "beta", 2.0)?;
            if !(beta > 1.0) {
                return Err(CliError::Config(format!(
                    "[model] beta: the d = infinity surrogate needs beta > 1, got {beta}"
                )));
            }
            let d_max = f.usize_or("grid", "d_max", DEFAULT_D_MAX)?;
            let gammas = f.f64_list_or("grid", "gammas", &[1e-1, 1e-2, 1e-3, 1e-4])?;
            check_grid("gammas", gammas.len())?;
            Ok(CascadeRegime::SmallNoiseInfiniteD {
                beta,
                d_max,
                gammas,
            })
        }
        "large_d" => {
            let beta = f.f64_or("model", "beta", 0.5)?;
            let gamma = f.f64_or("model", "gamma", 1.0)?;
            let d_values = f.usize_list_or("grid", "d_values", &[128, 256, 512, 1024, 2048])?;
            check_grid("d_values", d_values.len())?;
            Ok(CascadeRegime::LargeD {
                beta,
                gamma,
                d_values,
            })
        }
        "joint" => {
            let beta = f.f64_or("model", "beta", 0.5)?;
            let alpha = f.f64_req("grid", "alpha")?;
            let d_values = f.usize_list_or("grid", "d_values", &[64, 128, 256, 512])?;
            check_grid("d_values", d_values.len())?;
            Ok(CascadeRegime::Joint {
                beta,
                alpha,
                d_values,
            })
        }
        "regularity" => {
            let gamma = f.f64_or("model", "gamma", 1.0)?;
            let d_max = f.usize_or("grid", "d_max", DEFAULT_D_MAX)?;
            let betas = f.f64_list_or("grid", "betas", &[1.15, 1.2, 1.25, 1.3])?;
            check_grid("betas", betas.len())?;
            if let Some(&bad) = betas.iter().find(|&&b| b <= 1.0) {
                return Err(CliError::Config(format!(
                    "[grid] betas: regularity needs beta > 1, got {bad}"
                )));
            }
            Ok(CascadeRegime::Regularity {
                d_max,
                gamma,
                betas,
            })
        }
        _ => unreachable!(),
    }
}

fn regime_name(regime: &CascadeRegime) -> &'static str {
    match regime {
        CascadeRegime::SmallNoiseFixedD { .. } => "small_noise_fixed_d",
        CascadeRegime::SmallNoiseInfiniteD { .. } => "small_noise_infinite_d",
        CascadeRegime::LargeD { .. } => "large_d",
        CascadeRegime::Joint { .. } => "joint",
        CascadeRegime::Regularity { .. } => "regularity",
    }
}

fn sweep_cascade(regime: &CascadeRegime, run: &RunParams) -> Result<Table, CliError> {
    let report = sweep_cascade_scalings(regime, run.data_seeds, run.seed).map_err(run_err)?;
    let rho_fit = report.fits.iter().find(|f| f.response == "log_rho");
    let (slope, r2, fit_x) = match rho_fit {
        Some(f) => (
            Value::Float(f.fit.slope),
            Value::Float(f.fit.r2),
            Value::Str(f.x_desc.into()),
        ),
        None => (Value::Empty, Value::Empty, Value::Empty),
    };
    let mut t = Table::new(vec![
        "regime",
        "parameter",
        "tau",
        "efd",
        "log_rho_median",
        "log_rho_q25",
        "log_rho_q75",
        "fit_slope",
        "r2",
        "fit_x",
        "beta",
        "gamma",
        "d",
        "converged",
    ]);
    for row in &report.rows {
        t.push(vec![
            Value::Str(regime_name(regime).into()),
            Value::Float(row.param),
            Value::Float(row.tau),
            Value::Float(row.efd),
            Value::Float(row.log_rho_median),
            Value::Float(row.log_rho_q25),
            Value::Float(row.log_rho_q75),
            slope.clone(),
            r2.clone(),
            fit_x.clone(),
            Value::Float(row.beta),
            Value::Float(row.gamma),
            Value::Int(row.d as i64),
            match row.converged {
                Some(c) => Value::Bool(c),
                None => Value::Empty,
            },
        ]);
    }
    Ok(t)
}

fn verify_bounds(pair: &PairSpec, n_values: &[usize], run: &RunParams) -> Result<Table, CliError> {
    if run.replications < 100 {
        return Err(CliError::Config(
            "[run] replications: bound verification needs at least 100".into(),
        ));
    }
    let model = GaussianPairModel::new(pair.target.clone(), pair.proposal.clone()).map_err(cfg)?;
    let n_values = if n_values.is_empty() {
        vec![run.n_particles]
    } else {
        n_values.to_vec()
    };
    let mut t = Table::new(vec![
        "model",
        "n",
        "replications",
        "phi",
        "rho",
        "empirical_bias",
        "bias_bound",
        "se_bias",
        "empirical_mse",
        "mse_bound",
        "se_mse",
        "pass",
        "verdict",
    ]);
    if model.log_rho_exact().is_none() {
        // Non-integrable pair: no finite bounds exist; labeled rows, not an
        // error.
        for &n in &n_values {
            t.push(vec![
                Value::Str("gaussian-pair".into()),
                Value::Int(n as i64),
                Value::Int(run.replications as i64),
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Str("inf".into()),
            ]);
        }
        return Ok(t);
    }
    for (i, &n) in n_values.iter().enumerate() {
        let reports = bias_mse_experiment(
            &model,
            &TestFunction::BOUNDED_FAMILY,
            n,
            run.replications,
            rng::derive(run.seed, rng::tag::SWEEP, i as u64),
        )
        .map_err(run_err)?;
        for rep in reports {
            t.push(vec![
                Value::Str("gaussian-pair".into()),
                Value::Int(n as i64),
                Value::Int(run.replications as i64),
                Value::Str(rep.phi.name().into()),
                Value::Float(rep.rho),
                Value::Float(rep.empirical_bias),
                Value::Float(rep.bias_bound),
                Value::Float(rep.std_error_bias),
                Value::Float(rep.empirical_mse),
                Value::Float(rep.mse_bound),
                Value::Float(rep.std_error_mse),
                Value::Bool(rep.holds(3.0)),
                Value::Str("ok".into()),
            ]);
        }
    }
    Ok(t)
}

fn filter_compare(
    filter: &OneStepFilter,
    y: Option<Vec<f64>>,
    run: &RunParams,
) -> Result<Table, CliError> {
    let y = match y {
        Some(y) => y,
        None => standard_reduction(filter)
            .and_then(|red| red.truth_zero_data(run.seed))
            .map_err(run_err)?,
    };
    let cmp = compare_proposals(filter, &y, run.n_particles, run.seed).map_err(run_err)?;
    let mut t = Table::new(vec![
        "form",
        "d",
        "m",
        "h",
        "p",
        "q",
        "r",
        "n",
        "log_rho_st_exact",
        "log_rho_op_exact",
        "log_rho_st_mc",
        "se_st",
        "log_rho_op_mc",
        "se_op",
        "ess_st",
        "ess_op",
        "rho_st_gt_rho_op",
    ]);
    let (form, d, scalars) = match filter {
        OneStepFilter::ScalarIdentity { d, m, h, p, q, r } => (
            "scalar",
            *d,
            [*m, *h, *p, *q, *r].map(Value::Float).to_vec(),
        ),
        OneStepFilter::Dense { m, .. } => (
            "dense",
            m.nrows(),
            vec![
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
                Value::Empty,
            ],
        ),
    };
    let mut row = vec![Value::Str(form.into()), Value::Int(d as i64)];
    row.extend(scalars);
    row.extend([
        Value::Int(cmp.n as i64),
        Value::Float(cmp.log_rho_st_exact),
        Value::Float(cmp.log_rho_op_exact),
        Value::Float(cmp.mc_st.log_rho),
        Value::Float(cmp.mc_st.se_log_rho),
        Value::Float(cmp.mc_op.log_rho),
        Value::Float(cmp.mc_op.se_log_rho),
        Value::Float(cmp.ess_st),
        Value::Float(cmp.ess_op),
        Value::Bool(cmp.log_rho_st_exact > cmp.log_rho_op_exact),
    ]);
    t.push(row);
    Ok(t)
}

fn sweep_filter(
    init: Initialization,
    grid: &FilterGrid,
    run: &RunParams,
) -> Result<Table, CliError> {
    let report = sweep_filter_scalings(init, grid, run.data_seeds, run.seed).map_err(run_err)?;
    let fit = |name: &str| {
        report
            .fits
            .iter()
            .find(|f| f.response == name)
            .map(|f| (Value::Float(f.fit.slope), Value::Float(f.fit.r2), f.x_desc))
    };
    let (slope_st, r2_st, fit_x) = fit("log_rho_st")
        .map(|(a, b, x)| (a, b, Value::Str(x.into())))
        .unwrap_or((Value::Empty, Value::Empty, Value::Empty));
    let (slope_op, r2_op) = fit("log_rho_op")
        .map(|(a, b, _)| (a, b))
        .unwrap_or((Value::Empty, Value::Empty));
    let mut t = Table::new(vec![
        "init",
        "r",
        "q",
        "p",
        "d",
        "tau_st",
        "tau_op",
        "efd_st",
        "efd_op",
        "log_rho_st",
        "log_rho_op",
        "fit_slope_st",
        "fit_r2_st",
        "fit_slope_op",
        "fit_r2_op",
        "fit_x",
        "p_infinity",
        "log_rho_st_q25",
        "log_rho_st_q75",
        "log_rho_op_q25",
        "log_rho_op_q75",
    ]);
    for row in &report.rows {
        t.push(vec![
            Value::Str(row.init.into()),
            Value::Float(row.r),
            Value::Float(row.q),
            Value::Float(row.p),
            Value::Int(row.d as i64),
            Value::Float(row.tau_st),
            Value::Float(row.tau_op),
            Value::Float(row.efd_st),
            Value::Float(row.efd_op),
            Value::Float(row.log_rho_st_median),
            Value::Float(row.log_rho_op_median),
            slope_st.clone(),
            r2_st.clone(),
            slope_op.clone(),
            r2_op.clone(),
            fit_x.clone(),
            match row.p_infinity {
                Some(p) => Value::Float(p),
                None => Value::Empty,
            },
            Value::Float(row.log_rho_st_q25),
            Value::Float(row.log_rho_st_q75),
            Value::Float(row.log_rho_op_q25),
            Value::Float(row.log_rho_op_q75),
        ]);
    }
    Ok(t)
}

fn deconvolve_demo(
    t_param: f64,
    s_param: f64,
    model: &SpectralCascade,
    run: &RunParams,
) -> Result<Table, CliError> {
    let dims = model.intrinsic_dims();
    let y = model.generate_data(run.seed);
    let log_rho = model.log_rho(&y).map_err(run_err)?;
    let mut t = Table::new(vec![
        "t", "s", "beta", "d", "gamma", "tau", "efd", "log_rho", "verdict",
    ]);
    t.push(vec![
        Value::Float(t_param),
        Value::Float(s_param),
        Value::Float(model.beta),
        Value::Int(model.d as i64),
        Value::Float(model.gamma),
        Value::Float(dims.tau),
        Value::Float(dims.efd),
        Value::Float(log_rho),
        Value::Str("ok".into()),
    ]);
    Ok(t)
}

fn singular_limit(pair: &PairSpec, epsilons: &[f64], run: &RunParams) -> Result<Table, CliError> {
    // The pair's target defines the quadratic potential sharpened by the
    // limit: h(u) = (u - mean)^2 / (2 var), so u* = mean, h'' = 1/var.
    let u_star = pair.target.mean()[0];
    let h_pp = 1.0 / pair.target.variance()[0];
    let potential = ScalarPotential::quadratic(u_star, h_pp).map_err(cfg)?;
    let report = singular_limit_sweep(
        &potential,
        &pair.proposal,
        epsilons,
        run.n_particles,
        run.seed,
    )
    .map_err(run_err)?;
    let (slope, r2) = match &report.fit {
        Some(fit) => (Value::Float(fit.slope), Value::Float(fit.r2)),
        None => (Value::Empty, Value::Empty),
    };
    let mut t = Table::new(vec![
        "epsilon",
        "log_rho_mc",
        "se_log_rho",
        "rate",
        "fit_slope",
        "fit_r2",
    ]);
    for row in &report.rows {
        t.push(vec![
            Value::Float(row.epsilon),
            Value::Float(row.mc.log_rho),
            Value::Float(row.mc.se_log_rho),
            Value::Float(row.rate),
            slope.clone(),
            r2.clone(),
        ]);
    }
    Ok(t)
}

fn product_collapse(
    pair: &PairSpec,
    d_values: &[usize],
    run: &RunParams,
) -> Result<Table, CliError> {
    let target = Gaussian::Diagonal(pair.target.clone());
    let proposal = Gaussian::Diagonal(pair.proposal.clone());
    let mut t = Table::new(vec![
        "d",
        "rho_1",
        "log_rho_exact",
        "log_rho_mc",
        "se_log_rho",
        "within_3se",
        "verdict",
    ]);
    let log_rho_1 = match log_rho_gaussian(&target, &proposal) {
        Ok(v) => v,
        Err(Error::NonIntegrable(_)) => {
            for &d in d_values {
                t.push(vec![
                    Value::Int(d as i64),
                    Value::Empty,
                    Value::Empty,
                    Value::Empty,
                    Value::Empty,
                    Value::Empty,
                    Value::Str("inf".into()),
                ]);
            }
            return Ok(t);
        }
        Err(e) => return Err(run_err(e)),
    };
    let rows = product_collapse_sweep(
        log_rho_1.exp(),
        d_values,
        Some(run.n_particles),
        run.mc_max_d,
        run.seed,
    )
    .map_err(run_err)?;
    for row in rows {
        let (mc, se, within) = match &row.mc {
            Some(mc) => (
                Value::Float(mc.log_rho),
                Value::Float(mc.se_log_rho),
                Value::Bool((mc.log_rho - row.log_rho_exact).abs() <= 3.0 * mc.se_log_rho),
            ),
            None => (Value::Empty, Value::Empty, Value::Empty),
        };
        t.push(vec![
            Value::Int(row.d as i64),
            Value::Float(log_rho_1.exp()),
            Value::Float(row.log_rho_exact),
            mc,
            se,
            within,
            Value::Str("ok".into()),
        ]);
    }
    Ok(t)
}
