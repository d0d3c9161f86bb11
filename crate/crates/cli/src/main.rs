//! `merton-factor`: certificates, solutions, convergence studies and
//! Monte-Carlo checks from a JSON model file.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use merton_factor::analysis::{
    asymptotic_report, constant_guide, eta_guide, hjb_residual, proportional_bounds, psi_eta,
    vasicek_upper_guide, TailConfig,
};
use merton_factor::diffusion_solver::{
    domain_expansion_for, grid_refinement_study, solve, DiffusionSolution, SolveOptions,
};
use merton_factor::discretizer::{assemble_discrete_hjb, Grid, Scheme};
use merton_factor::linalg::ZMatrix;
use merton_factor::model::{DiffusionModel, Family, Model, RegimeModel};
use merton_factor::montecarlo::{
    default_horizon, estimate_value, FactorValue, GridPolicy, RegimePolicy, SimulationConfig,
};
use merton_factor::regime_solver::{
    assemble_a, check_wellposed, solve_regime, HjbSolution, SolverOptions, WellPosednessReport,
};
use merton_factor::Error as LibError;

const THREADS_VAR: &str = "MERTON_FACTOR_THREADS";
/// Domain index used when `--domain` is not given.
const DEFAULT_DOMAIN_INDEX: f64 = 6.0;

#[derive(Parser, Debug)]
#[command(name = "merton-factor", version, about = "Infinite-horizon Merton problems with a stochastic factor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Well-posedness certificate (JSON). Exit 2 when ill-posed.
    Wellposed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Solve and write the solution table (CSV).
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Grid-refinement study on a fixed domain (CSV).
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        domain: Option<(f64, f64)>,
        /// Increasing interval counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
    },
    /// Domain-expansion study on nested domains (CSV).
    Expand {
        #[command(flatten)]
        common: Common,
        /// Domain indices, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<f64>,
        /// Common grid spacing.
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        /// Comparison window.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        window: (f64, f64),
    },
    /// Proportional sub/supersolution constants (JSON).
    Bounds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Tail diagnostics of the solution (JSON).
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Monte-Carlo value of the optimal policy against the solver (JSON).
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        /// Simulation horizon; defaults to ln(1e4) / min eta.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// Initial factor: a state index for regime models, a point for
        /// diffusions (default: domain midpoint).
        #[arg(long, allow_hyphen_values = true)]
        y0: Option<f64>,
        #[arg(long)]
        antithetic: bool,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Model description (JSON).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value = "upwind")]
    scheme: Scheme,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Truncated state space `A,B`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    domain: Option<(f64, f64)>,
    /// Number of grid intervals.
    #[arg(long, default_value_t = 6000)]
    n: usize,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// Outcome of a subcommand that completed.
enum Outcome {
    Done,
    IllPosed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::IllPosed) => ExitCode::from(2),
        Err(e) => {
            if let Some(LibError::IllPosed(report)) = e.downcast_ref::<LibError>() {
                eprintln!("{}", serde_json::to_string_pretty(report).unwrap_or_default());
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR}=`{v}`"))?;
    if n == 0 {
        bail!("{THREADS_VAR} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Model::from_json_str(&text).with_context(|| format!("in {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn write_json(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(out, &text)
}

fn options(common: &Common) -> SolveOptions {
    SolveOptions { tol: common.tol, scheme: common.scheme, ..SolveOptions::default() }
}

fn domain_of(model: &DiffusionModel, domain: Option<(f64, f64)>) -> Result<(f64, f64)> {
    match domain {
        Some((a, b)) if a < b => Ok((a, b)),
        Some((a, b)) => bail!("domain {a},{b} is empty"),
        None => Ok(model.default_domain(DEFAULT_DOMAIN_INDEX)?),
    }
}

fn diffusion_only(model: Model, what: &str) -> Result<DiffusionModel> {
    match model {
        Model::Diffusion(m) => Ok(m),
        Model::Regime(_) => bail!("`{what}` applies to diffusion models only"),
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Wellposed { common, grid } => wellposed(&common, &grid),
        Command::Solve { common, grid } => solve_cmd(&common, &grid),
        Command::Refine { common, domain, n } => {
            let model = diffusion_only(load_model(&common.model)?, "refine")?;
            let (lo, hi) = domain_of(&model, domain)?;
            let table = grid_refinement_study(&model, lo, hi, &n, &options(&common))?;
            write_output(common.out.as_deref(), &table.to_csv())?;
            Ok(Outcome::Done)
        }
        Command::Expand { common, m, h, window } => {
            let model = diffusion_only(load_model(&common.model)?, "expand")?;
            let table = domain_expansion_for(&model, &m, h, window, &options(&common))?;
            eprintln!("{}", json!({ "differences": table.differences(), "fitted_rate": table.fitted_rate }));
            write_output(common.out.as_deref(), &table.to_csv())?;
            Ok(Outcome::Done)
        }
        Command::Bounds { common, grid } => bounds(&common, &grid),
        Command::Report { common, grid } => {
            let model = diffusion_only(load_model(&common.model)?, "report")?;
            let (lo, hi) = domain_of(&model, grid.domain)?;
            let sol = solve(&model, lo, hi, grid.n, &options(&common))?;
            let report = asymptotic_report(&sol, &model, TailConfig::default())?;
            write_json(common.out.as_deref(), &report)?;
            Ok(Outcome::Done)
        }
        Command::Mc { common, grid, seed, paths, horizon, dt, x0, y0, antithetic } => {
            let model = load_model(&common.model)?;
            let mc = McArgs { seed, paths, horizon, dt, x0, y0, antithetic };
            monte_carlo(&common, &grid, model, &mc)
        }
    }
}

fn wellposed(common: &Common, grid: &GridArgs) -> Result<Outcome> {
    let report = match load_model(&common.model)? {
        Model::Regime(m) => check_wellposed(&m),
        Model::Diffusion(m) => {
            let (lo, hi) = domain_of(&m, grid.domain)?;
            let (zero, _) = m.to_zero_correlation();
            let (a, _, eta) = assemble_discrete_hjb(&zero, lo, hi, grid.n, common.scheme)?;
            WellPosednessReport::assess(&a, &eta)?
        }
    };
    write_json(common.out.as_deref(), &report)?;
    Ok(if report.verdict { Outcome::Done } else { Outcome::IllPosed })
}

/// Header of the diffusion solution table.
const SOLUTION_HEADER: &str = "y,u,f,xi,pi,eta,psi_eta,du_over_u";

fn solve_cmd(common: &Common, grid: &GridArgs) -> Result<Outcome> {
    match load_model(&common.model)? {
        Model::Regime(m) => {
            let sopts = SolverOptions { tol: common.tol, ..SolverOptions::default() };
            let sol = solve_regime(&m, &sopts)?;
            write_output(common.out.as_deref(), &regime_csv(&m, &sol))?;
            let recomputed = regime_residual(&m, &sol.f);
            eprintln!(
                "{}",
                json!({
                    "method": sol.method,
                    "iterations": sol.iterations,
                    "solver_residual": sol.residual,
                    "residual": recomputed,
                })
            );
        }
        Model::Diffusion(m) => {
            let (lo, hi) = domain_of(&m, grid.domain)?;
            let sol = solve(&m, lo, hi, grid.n, &options(common))?;
            write_output(common.out.as_deref(), &diffusion_csv(&m, &sol)?)?;
            let r = hjb_residual(&m, &sol.grid, &sol.u)?;
            let max_abs = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            eprintln!(
                "{}",
                json!({
                    "method": sol.method,
                    "iterations": sol.iterations,
                    "solver_residual": sol.residual,
                    "residual": max_abs,
                    "lower": sol.grid.lower,
                    "upper": sol.grid.upper,
                    "n": sol.grid.n,
                })
            );
        }
    }
    Ok(Outcome::Done)
}

fn diffusion_csv(model: &DiffusionModel, sol: &DiffusionSolution) -> Result<String> {
    let mut out = String::with_capacity(160 * sol.y.len());
    out.push_str(SOLUTION_HEADER);
    out.push('\n');
    for i in 0..sol.y.len() {
        let pe = psi_eta(model, sol.y[i])?.psi_g;
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            sol.y[i], sol.u[i], sol.f[i], sol.u[i], sol.pi_hat[i], sol.eta[i], pe, sol.du_over_u[i]
        ));
    }
    Ok(out)
}

fn regime_csv(model: &RegimeModel, sol: &HjbSolution) -> String {
    let eta = model.frozen_rates();
    let mut out = String::from("state,u,f,xi,pi,eta\n");
    for i in 0..sol.f.len() {
        out.push_str(&format!(
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            sol.u[i], sol.f[i], sol.u[i], sol.pi_hat[i], eta[i]
        ));
    }
    out
}

/// `||A f - f^p||_inf / ||f^p||_inf`.
fn regime_residual(model: &RegimeModel, f: &[f64]) -> f64 {
    let a = assemble_a(model);
    let p = model.exponent();
    let af = a.apply(f);
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (afi, fi) in af.iter().zip(f) {
        let fp = fi.powf(p);
        num = num.max((afi - fp).abs());
        den = den.max(fp.abs());
    }
    num / den
}

fn bounds(common: &Common, grid: &GridArgs) -> Result<Outcome> {
    let model = diffusion_only(load_model(&common.model)?, "bounds")?;
    let (lo, hi) = domain_of(&model, grid.domain)?;
    let nodes = Grid::new(lo, hi, grid.n)?.nodes();
    let eta = model.frozen_rates(&nodes)?;
    let inf_eta = eta.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(inf_eta > 0.0) {
        bail!("inf eta = {inf_eta:e} on the grid; a constant lower guide needs it positive");
    }
    let g1 = constant_guide(inf_eta);
    let cert = if matches!(model.family(), Family::Vasicek(_)) {
        let g2 = vasicek_upper_guide(&model)?;
        proportional_bounds(&model, &g1, &g2, &nodes)?
    } else {
        let g2 = eta_guide(&model);
        proportional_bounds(&model, &g1, &g2, &nodes)?
    };
    write_json(common.out.as_deref(), &json!({ "lower_guide_constant": inf_eta, "certificate": cert }))?;
    Ok(Outcome::Done)
}

struct McArgs {
    seed: u64,
    paths: usize,
    horizon: Option<f64>,
    dt: f64,
    x0: f64,
    y0: Option<f64>,
    antithetic: bool,
}

fn monte_carlo(common: &Common, grid: &GridArgs, model: Model, mc: &McArgs) -> Result<Outcome> {
    let cfg = |min_eta: f64| -> Result<SimulationConfig> {
        let horizon = match mc.horizon {
            Some(t) => t,
            None => default_horizon(min_eta)?,
        };
        Ok(SimulationConfig { horizon, dt: mc.dt, paths: mc.paths, seed: mc.seed, antithetic: mc.antithetic })
    };
    let big_r;
    let (estimate, solver_f) = match &model {
        Model::Regime(m) => {
            let sopts = SolverOptions { tol: common.tol, ..SolverOptions::default() };
            let sol = solve_regime(m, &sopts)?;
            let state = mc.y0.unwrap_or(0.0);
            if state < 0.0 || state.fract() != 0.0 || state as usize >= m.states() {
                bail!("--y0 must be a state index below {}", m.states());
            }
            let state = state as usize;
            let min_eta = m.frozen_rates().into_iter().fold(f64::INFINITY, f64::min);
            let est = estimate_value(
                &model,
                &RegimePolicy::optimal(&sol),
                mc.x0,
                FactorValue::Regime(state),
                &cfg(min_eta)?,
            )?;
            big_r = m.risk_aversion();
            (est, sol.f[state])
        }
        Model::Diffusion(m) => {
            let (lo, hi) = domain_of(m, grid.domain)?;
            let sol = solve(m, lo, hi, grid.n, &options(common))?;
            let y0 = mc.y0.unwrap_or(0.5 * (lo + hi));
            let min_eta = sol.eta.iter().cloned().fold(f64::INFINITY, f64::min);
            let est = estimate_value(
                &model,
                &GridPolicy::optimal(&sol),
                mc.x0,
                FactorValue::Diffusion(y0),
                &cfg(min_eta)?,
            )?;
            big_r = m.base_risk_aversion();
            let f0 = interpolate_linear(&sol.y, &sol.f, y0);
            (est, f0)
        }
    };
    let solver_value = mc.x0.powf(1.0 - big_r) / (1.0 - big_r) * solver_f;
    let z = (estimate.mean - solver_value) / estimate.std_error;
    write_json(
        common.out.as_deref(),
        &json!({ "estimate": estimate, "solver_value": solver_value, "z_score": z }),
    )?;
    Ok(Outcome::Done)
}

/// Linear interpolation on increasing nodes, clamped at the ends.
fn interpolate_linear(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&v| v <= x);
    if k == 0 {
        return vs[0];
    }
    if k == xs.len() {
        return vs[k - 1];
    }
    let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    (1.0 - w) * vs[k - 1] + w * vs[k]
}
