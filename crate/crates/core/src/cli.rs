//! Experiment runner: configuration, orchestration and report emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{lp_norm, CellFunction, RadialFunction, RadialGrid};
use crate::kernel::{build_extension, DiscreteOperator, KernelSpec};
use crate::optimize::{self, SolverStatus};
use crate::params::{derive_exponents, solve_balance, validate, BalanceUnknown, HlsParams};
use crate::probes::{self, ProbeReport, TestFunction, Verdict, DEFAULT_EPSILONS};
use crate::rearrange::{star_norm, symm_decr_rearrange};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DIVERGES: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "whls", version, about = "Weighted HLS constant estimation and probes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML or JSON experiment file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for report.json and CSV files (stdout if omitted)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub grid_m: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub multistart: bool,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Validate parameters and print derived exponents
    Params,
    /// Estimate the sharp constant by power iteration
    Estimate,
    /// Run a named probe
    Probe { name: String },
    /// Symmetric decreasing rearrangement of the configured input
    Rearrange,
    /// Star norm of the configured input
    Starnorm,
    /// Compare the dual norm with the reduced potential norm
    NormEquivalence,
    /// Run several experiments and write a CSV summary
    Batch {
        /// Experiment files; `--config` may also hold an `experiments` list
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Params,
    Estimate,
    Probe(ProbeName),
    Rearrange,
    Starnorm,
    NormEquivalence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeName {
    BetaSharpness,
    LambdaRange,
    Adams,
    Sw,
    Dyadic,
    NormEquivalence,
}

impl ProbeName {
    pub const ALL: [ProbeName; 6] = [
        ProbeName::BetaSharpness,
        ProbeName::LambdaRange,
        ProbeName::Adams,
        ProbeName::Sw,
        ProbeName::Dyadic,
        ProbeName::NormEquivalence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeName::BetaSharpness => "beta-sharpness",
            ProbeName::LambdaRange => "lambda-range",
            ProbeName::Adams => "adams",
            ProbeName::Sw => "sw",
            ProbeName::Dyadic => "dyadic",
            ProbeName::NormEquivalence => "norm-equivalence",
        }
    }
}

impl FromStr for ProbeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeName::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = ProbeName::ALL.iter().map(|p| p.as_str()).collect();
            Error::Config(format!("unknown probe '{s}' (known: {})", names.join(", ")))
        })
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "params" => Operation::Params,
            "estimate" => Operation::Estimate,
            "rearrange" => Operation::Rearrange,
            "starnorm" => Operation::Starnorm,
            "norm-equivalence" => Operation::NormEquivalence,
            _ => match s.strip_prefix("probe:") {
                Some(name) => Operation::Probe(name.parse()?),
                None => return Err(Error::Config(format!("unknown operation '{s}'"))),
            },
        })
    }
}

impl std::fmt::Display for Operation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Operation::Params => f.write_str("params"),
            Operation::Estimate => f.write_str("estimate"),
            Operation::Probe(p) => write!(f, "probe:{}", p.as_str()),
            Operation::Rearrange => f.write_str("rearrange"),
            Operation::Starnorm => f.write_str("starnorm"),
            Operation::NormEquivalence => f.write_str("norm-equivalence"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Profile {
    Gaussian,
    Indicator,
    Cauchy,
    /// Independent uniform values per cell, drawn from the seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct InputConfig {
    pub profile: Profile,
    pub scale: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Indicator,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct GridConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub m: usize,
    pub perp_m: Option<usize>,
    /// Resolution of the second operator in stability probes (default `2m`).
    pub fine_m: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_min: 1e-3,
            r_max: 1e2,
            m: 64,
            perp_m: None,
            fine_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub operation: Option<String>,
    pub params: Option<HlsParams>,
    /// Field re-solved from the balance condition before running.
    pub solve_balance: Option<BalanceUnknown>,
    pub grid: GridConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub multistart: bool,
    pub epsilons: Vec<f64>,
    pub input: InputConfig,
    pub gammas: Vec<f64>,
    pub taus: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            operation: None,
            params: None,
            solve_balance: None,
            grid: GridConfig::default(),
            tol: optimize::DEFAULT_TOL,
            max_iter: optimize::DEFAULT_MAX_ITER,
            multistart: false,
            epsilons: DEFAULT_EPSILONS.to_vec(),
            input: InputConfig::default(),
            gammas: vec![0.25, 0.5, 0.9],
            taus: vec![1.0, 2.0, 4.0],
            samples: 20,
            seed: 0,
            threads: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_flags(&mut self, flags: &Flags) {
        if let Some(m) = flags.grid_m {
            self.grid.m = m;
        }
        if let Some(t) = flags.tol {
            self.tol = t;
        }
        if flags.multistart {
            self.multistart = true;
        }
        if let Some(t) = flags.threads {
            self.threads = Some(t);
        }
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(o) = &flags.out {
            self.out = Some(o.clone());
        }
    }

    pub fn operation(&self) -> Result<Operation> {
        self.operation
            .as_deref()
            .ok_or_else(|| Error::Config("no operation given".into()))?
            .parse()
    }

    /// Parameters after the optional balance solve.
    pub fn effective_params(&self) -> Result<HlsParams> {
        let mut p = self
            .params
            .ok_or_else(|| Error::Config("missing [params] section".into()))?;
        if let Some(unknown) = self.solve_balance {
            let v = solve_balance(&p, unknown)?;
            match unknown {
                BalanceUnknown::Lambda => p.lambda = v,
                BalanceUnknown::Beta => p.beta = v,
                BalanceUnknown::P => p.p = v,
                BalanceUnknown::R => p.r = v,
                BalanceUnknown::PEqualsR => {
                    p.p = v;
                    p.r = v;
                }
            }
        }
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        self.operation()?;
        let g = &self.grid;
        if !(g.r_min > 0.0 && g.r_max > g.r_min) || g.m < 2 {
            return Err(Error::Config("grid needs 0 < rMin < rMax and m >= 2".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol must be positive and maxIter at least 1".into()));
        }
        Ok(())
    }
}

/// Reads a TOML (by extension) or JSON file into a JSON value.
pub fn read_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if is_toml {
        let t: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| Error::Config(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_value(read_value(path)?)
}

/// Result of one experiment.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Report without the wall-time field.
    pub report: Value,
    pub csv: Vec<(String, String)>,
    pub status: String,
    pub n_hat: Option<f64>,
    pub verdict: Option<Verdict>,
    pub residual: Option<f64>,
    pub wall_time_ms: f64,
}

impl RunOutcome {
    pub fn report_with_time(&self) -> Value {
        let mut r = self.report.clone();
        if let Value::Object(m) = &mut r {
            m.insert("wallTimeMs".into(), json!(self.wall_time_ms));
        }
        r
    }

    /// Writes `report.json` and CSV files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(&self.report_with_time()).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(dir.join("report.json"), text)?;
        for (name, body) in &self.csv {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

struct Computed {
    results: Value,
    diagnostics: Value,
    csv: Vec<(String, String)>,
    exit_code: i32,
    status: String,
    n_hat: Option<f64>,
    verdict: Option<Verdict>,
    residual: Option<f64>,
}

impl Computed {
    fn new(results: Value, exit_code: i32, status: impl Into<String>) -> Self {
        Self {
            results,
            diagnostics: Value::Null,
            csv: Vec::new(),
            exit_code,
            status: status.into(),
            n_hat: None,
            verdict: None,
            residual: None,
        }
    }

    fn from_probe(rep: ProbeReport) -> Result<Self> {
        let exit_code = match rep.verdict {
            Verdict::Holds => EXIT_OK,
            Verdict::Diverges => EXIT_DIVERGES,
            Verdict::Inconclusive => EXIT_FAILURE,
        };
        let mut c = Computed::new(to_value(&rep)?, exit_code, "completed");
        c.csv.push(("probe.csv".into(), rep.to_csv()));
        c.verdict = Some(rep.verdict);
        c.residual = rep.fit.as_ref().map(|f| f.relative_error);
        Ok(c)
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

pub fn versions() -> Value {
    json!({ "whls": env!("CARGO_PKG_VERSION") })
}

/// Runs one experiment. Errors are folded into the report with exit code 1.
pub fn run(config: &ExperimentConfig) -> RunOutcome {
    let start = Instant::now();
    let echo = to_value(config).unwrap_or(Value::Null);
    let computed = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(|| execute(config))),
        None => execute(config),
    };
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match computed {
        Ok(c) => RunOutcome {
            exit_code: c.exit_code,
            report: json!({
                "config": echo,
                "results": c.results,
                "diagnostics": c.diagnostics,
                "versions": versions(),
            }),
            csv: c.csv,
            status: c.status,
            n_hat: c.n_hat,
            verdict: c.verdict,
            residual: c.residual,
            wall_time_ms,
        },
        Err(e) => RunOutcome {
            exit_code: EXIT_FAILURE,
            report: json!({
                "config": echo,
                "results": Value::Null,
                "diagnostics": { "error": e.to_string() },
                "versions": versions(),
            }),
            csv: Vec::new(),
            status: format!("error: {e}"),
            n_hat: None,
            verdict: None,
            residual: None,
            wall_time_ms,
        },
    }
}

fn operator(params: &HlsParams, grid: &GridConfig, m: usize) -> Result<DiscreteOperator> {
    let spec = KernelSpec::new(*params)?;
    let base = Arc::new(RadialGrid::log(params.base_dim(), grid.r_min, grid.r_max, m, true)?);
    let perp = if params.k == 0 {
        Arc::new(RadialGrid::point())
    } else {
        Arc::new(RadialGrid::log(params.k, grid.r_min, grid.r_max, grid.perp_m.unwrap_or(m), true)?)
    };
    build_extension(&spec, base.clone(), base, perp)
}

fn input_function(config: &ExperimentConfig, dim: u32) -> Result<RadialFunction> {
    let g = &config.grid;
    let grid = Arc::new(RadialGrid::log(dim, g.r_min, g.r_max, g.m, true)?);
    let s = config.input.scale;
    if !(s > 0.0) {
        return Err(Error::Config("input.scale must be positive".into()));
    }
    Ok(match config.input.profile {
        Profile::Gaussian => grid.sample(|x| (-(x / s) * (x / s)).exp()),
        Profile::Indicator => grid.sample(|x| f64::from(u8::from(x / s < 1.0))),
        Profile::Cauchy => grid.sample(|x| 1.0 / (1.0 + (x / s) * (x / s))),
        Profile::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let values = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
            RadialFunction::new(grid, values)?
        }
    })
}

fn execute(config: &ExperimentConfig) -> Result<Computed> {
    config.check()?;
    match config.operation()? {
        Operation::Params => run_params(config),
        Operation::Estimate => run_estimate(config),
        Operation::Probe(name) => run_probe(config, name),
        Operation::Rearrange => run_rearrange(config),
        Operation::Starnorm => run_starnorm(config),
        Operation::NormEquivalence => run_probe(config, ProbeName::NormEquivalence),
    }
}

fn run_params(config: &ExperimentConfig) -> Result<Computed> {
    let p = config.effective_params()?;
    let report = validate(&p);
    let derived = derive_exponents(&p).ok();
    let exit = if report.valid { EXIT_OK } else { EXIT_FAILURE };
    let status = if report.valid { "valid" } else { "invalid" };
    let mut c = Computed::new(
        json!({ "params": to_value(&p)?, "validity": to_value(&report)?, "derived": to_value(&derived)? }),
        exit,
        status,
    );
    c.residual = Some(p.balance_residual());
    Ok(c)
}

fn run_estimate(config: &ExperimentConfig) -> Result<Computed> {
    let p = config.effective_params()?;
    let op = operator(&p, &config.grid, config.grid.m)?;
    let (est, runs) = if config.multistart {
        let ms = optimize::multistart(&op, config.tol, config.max_iter)?;
        let runs: Vec<Value> = ms
            .runs
            .iter()
            .map(|(name, n_hat, status)| json!({ "init": name, "nHat": n_hat, "status": status }))
            .collect();
        (ms.best, json!({ "bestInit": ms.best_init, "runs": runs }))
    } else {
        let init = optimize::default_inits(&p, op.input_grid()).remove(0).1;
        (optimize::power_iterate(&op, &init, config.tol, config.max_iter)?, Value::Null)
    };
    let relation = if p.k >= 1 && est.status == SolverStatus::Converged {
        optimize::constant_relation_check(&op, &est).ok()
    } else {
        None
    };
    let exit = if est.status == SolverStatus::Converged { EXIT_OK } else { EXIT_FAILURE };
    let mut history = String::from("iteration,nHat\n");
    for (i, v) in est.history.iter().enumerate() {
        let _ = writeln!(history, "{i},{v:.16e}");
    }
    let mut c = Computed::new(
        json!({
            "params": to_value(&p)?,
            "derived": to_value(&derive_exponents(&p)?)?,
            "estimate": to_value(&est)?,
            "multistart": runs,
            "constantRelation": to_value(&relation)?,
        }),
        exit,
        format!("{:?}", est.status).to_lowercase(),
    );
    c.diagnostics = op.diagnostics().summary();
    c.csv = vec![
        ("f_sharp.csv".into(), est.f_sharp.to_csv()),
        ("g_sharp.csv".into(), est.g_sharp.to_csv()),
        ("history.csv".into(), history),
    ];
    c.n_hat = Some(est.n_hat);
    c.residual = Some(est.el_residual);
    Ok(c)
}

/// Non-decreasing step function with a zero head, for the dyadic lemma.
fn random_monotone(rng: &mut ChaCha8Rng, grid: &Arc<RadialGrid>) -> Result<RadialFunction> {
    let zeros = rng.gen_range(1..grid.len().max(2));
    let mut acc = 0.0;
    let values = (0..grid.len())
        .map(|i| {
            if i >= zeros && rng.gen_bool(0.5) {
                acc += rng.gen::<f64>();
            }
            if i >= zeros { acc.max(1e-3) } else { 0.0 }
        })
        .collect();
    RadialFunction::new(grid.clone(), values)
}

fn run_dyadic(config: &ExperimentConfig) -> Result<Computed> {
    let g = &config.grid;
    let grid = Arc::new(RadialGrid::log(1, g.r_min, g.r_max, g.m, false)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::new();
    let mut csv = String::from("sample,gamma,tau,lhs,rhs,verdict\n");
    let mut all_hold = true;
    for i in 0..config.samples {
        let h = random_monotone(&mut rng, &grid)?;
        for &gamma in &config.gammas {
            for &tau in &config.taus {
                let rep = probes::dyadic_lemma_check(&h, gamma, tau)?;
                let (lhs, rhs) = (rep.observations[0].measured, rep.observations[1].measured);
                all_hold &= rep.verdict == Verdict::Holds;
                let _ = writeln!(csv, "{i},{gamma},{tau},{lhs:.16e},{rhs:.16e},{:?}", rep.verdict);
                cases.push(json!({ "sample": i, "gamma": gamma, "tau": tau, "lhs": lhs, "rhs": rhs, "verdict": rep.verdict }));
            }
        }
    }
    let verdict = if all_hold { Verdict::Holds } else { Verdict::Inconclusive };
    let mut c = Computed::new(
        json!({ "name": "dyadic_lemma", "verdict": verdict, "cases": cases }),
        if all_hold { EXIT_OK } else { EXIT_FAILURE },
        "completed",
    );
    c.verdict = Some(verdict);
    c.csv.push(("probe.csv".into(), csv));
    Ok(c)
}

fn run_probe(config: &ExperimentConfig, name: ProbeName) -> Result<Computed> {
    if name == ProbeName::Dyadic {
        return run_dyadic(config);
    }
    let p = config.effective_params()?;
    let rep = match name {
        ProbeName::BetaSharpness => probes::probe_beta_sharpness(&p, &config.epsilons)?,
        ProbeName::LambdaRange => probes::probe_lambda_range(&p, &config.epsilons)?,
        ProbeName::Adams | ProbeName::Sw => {
            let fine_m = config.grid.fine_m.unwrap_or(2 * config.grid.m);
            let (coarse, fine) = rayon::join(
                || operator(&p, &config.grid, config.grid.m),
                || operator(&p, &config.grid, fine_m),
            );
            let (coarse, fine) = (coarse?, fine?);
            if name == ProbeName::Adams {
                probes::adams_bound_check(&TestFunction::FAMILY, &coarse, &fine)?
            } else {
                probes::sw_probe(&TestFunction::FAMILY, &coarse, &fine)?
            }
        }
        ProbeName::NormEquivalence => {
            let h = input_function(config, p.base_dim())?;
            probes::norm_equivalence(&h, &p)?
        }
        ProbeName::Dyadic => unreachable!(),
    };
    Computed::from_probe(rep)
}

fn run_rearrange(config: &ExperimentConfig) -> Result<Computed> {
    let p = config.effective_params()?;
    let f = input_function(config, p.base_dim())?;
    let star = symm_decr_rearrange(&f)?;
    let mut sorted_in: Vec<f64> = f.values.clone();
    sorted_in.sort_by(|a, b| b.total_cmp(a));
    let max_value_gap = sorted_in
        .iter()
        .zip(&star.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (np_in, np_out) = (lp_norm(&f, p.p), lp_norm(&star, p.p));
    let mut c = Computed::new(
        json!({
            "p": p.p,
            "normIn": np_in,
            "normOut": np_out,
            "normRelativeGap": (np_in - np_out).abs() / np_in.max(f64::MIN_POSITIVE),
            "maxSortedValueGap": max_value_gap,
            "nonIncreasing": star.is_non_increasing(0.0),
            "zero": f.is_zero(),
        }),
        EXIT_OK,
        "completed",
    );
    c.csv = vec![("input.csv".into(), f.to_csv()), ("rearranged.csv".into(), star.to_csv())];
    Ok(c)
}

fn run_starnorm(config: &ExperimentConfig) -> Result<Computed> {
    let p = config.effective_params()?;
    let f = input_function(config, p.base_dim())?;
    let res = star_norm(&f, &p)?;
    let mut c = Computed::new(to_value(&res)?, EXIT_OK, "completed");
    c.csv = vec![("input.csv".into(), f.to_csv())];
    Ok(c)
}

fn severity(code: i32) -> u8 {
    match code {
        EXIT_OK => 0,
        EXIT_DIVERGES => 1,
        _ => 2,
    }
}

/// Worst exit code across a batch (failure > divergence > success).
pub fn worst_exit(codes: impl IntoIterator<Item = i32>) -> i32 {
    codes.into_iter().max_by_key(|&c| severity(c)).unwrap_or(EXIT_OK)
}

pub const SUMMARY_HEADER: &str =
    "index,name,operation,n,k,lambda,beta,p,r,alpha,status,nHat,verdict,residual,runtimeMs,exitCode";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One summary row; `member` is the parsed config or the parse error.
pub fn summary_row(index: usize, member: &std::result::Result<ExperimentConfig, String>, outcome: &RunOutcome) -> String {
    let (name, op, params) = match member {
        Ok(c) => (c.name.clone(), c.operation.clone().unwrap_or_default(), c.effective_params().ok()),
        Err(_) => (String::new(), String::new(), None),
    };
    let params = params.map_or_else(
        || ",,,,,,".to_string(),
        |p| format!("{},{},{},{},{},{},{}", p.n, p.k, p.lambda, p.beta, p.p, p.r, p.alpha),
    );
    let verdict = outcome.verdict.map(|v| format!("{v:?}").to_uppercase()).unwrap_or_default();
    format!(
        "{index},{},{},{params},{},{},{verdict},{},{:.3},{}",
        csv_field(&name),
        csv_field(&op),
        csv_field(&outcome.status.split_whitespace().collect::<Vec<_>>().join(" ")),
        fmt_opt(outcome.n_hat),
        fmt_opt(outcome.residual),
        outcome.wall_time_ms,
        outcome.exit_code
    )
}

/// Runs every member; malformed members become error rows. Parallel when
/// `threads > 1`.
pub fn batch(members: Vec<std::result::Result<ExperimentConfig, String>>, threads: usize) -> (String, Vec<RunOutcome>, i32) {
    let exec = |m: &std::result::Result<ExperimentConfig, String>| match m {
        Ok(c) => run(c),
        Err(e) => RunOutcome {
            exit_code: EXIT_FAILURE,
            report: json!({ "config": Value::Null, "results": Value::Null, "diagnostics": { "error": e }, "versions": versions() }),
            csv: Vec::new(),
            status: format!("error: {e}"),
            n_hat: None,
            verdict: None,
            residual: None,
            wall_time_ms: 0.0,
        },
    };
    let outcomes: Vec<RunOutcome> = if threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| members.par_iter().map(exec).collect()),
            Err(_) => members.iter().map(exec).collect(),
        }
    } else {
        members.iter().map(exec).collect()
    };
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for (i, (m, o)) in members.iter().zip(&outcomes).enumerate() {
        summary.push_str(&summary_row(i, m, o));
        summary.push('\n');
    }
    let exit = worst_exit(outcomes.iter().map(|o| o.exit_code));
    (summary, outcomes, exit)
}

fn batch_members(cli: &Cli, files: &[PathBuf]) -> Result<Vec<std::result::Result<ExperimentConfig, String>>> {
    let mut raw: Vec<std::result::Result<Value, String>> = Vec::new();
    if let Some(path) = &cli.flags.config {
        let v = read_value(path)?;
        match v.get("experiments") {
            Some(Value::Array(items)) => raw.extend(items.iter().cloned().map(Ok)),
            Some(_) => return Err(Error::Config("'experiments' must be a list".into())),
            None => raw.push(Ok(v)),
        }
    }
    raw.extend(files.iter().map(|f| read_value(f).map_err(|e| e.to_string())));
    Ok(raw
        .into_iter()
        .map(|v| {
            let mut c = ExperimentConfig::from_value(v?).map_err(|e| e.to_string())?;
            c.apply_flags(&Flags {
                out: None,
                ..cli.flags.clone()
            });
            c.check().map_err(|e| e.to_string())?;
            Ok(c)
        })
        .collect())
}

fn single_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.flags.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let op = match &cli.command {
        Command::Params => Operation::Params,
        Command::Estimate => Operation::Estimate,
        Command::Probe { name } => Operation::Probe(name.parse()?),
        Command::Rearrange => Operation::Rearrange,
        Command::Starnorm => Operation::Starnorm,
        Command::NormEquivalence => Operation::NormEquivalence,
        Command::Batch { .. } => unreachable!(),
    };
    config.operation = Some(op.to_string());
    config.apply_flags(&cli.flags);
    Ok(config)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Batch { files } => run_batch_command(&cli, files),
        _ => run_single_command(&cli),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_FAILURE
    })
}

fn run_single_command(cli: &Cli) -> Result<i32> {
    let config = single_config(cli)?;
    let outcome = run(&config);
    match &config.out {
        Some(dir) => outcome.write(dir)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&outcome.report_with_time()).map_err(|e| Error::Io(e.to_string()))?
        ),
    }
    if outcome.exit_code == EXIT_FAILURE {
        if let Some(err) = outcome.report["diagnostics"].get("error") {
            eprintln!("error: {}", err.as_str().unwrap_or_default());
        }
    }
    Ok(outcome.exit_code)
}

fn run_batch_command(cli: &Cli, files: &[PathBuf]) -> Result<i32> {
    let members = batch_members(cli, files)?;
    let threads = cli.flags.threads.unwrap_or(1);
    let (summary, outcomes, exit) = batch(members, threads);
    match &cli.flags.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("summary.csv"), &summary)?;
            for (i, o) in outcomes.iter().enumerate() {
                o.write(&dir.join(format!("{i:03}")))?;
            }
        }
        None => print!("{summary}"),
    }
    Ok(exit)
}
