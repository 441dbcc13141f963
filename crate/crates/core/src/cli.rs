//! Command-line surface. Data goes to `--out` (or stdout), diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 non-convergence, 2 configuration error, 3 I/O error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::allocation::{self, AllocationSolution};
use crate::control;
use crate::dynamics::{self, IntegratorConfig};
use crate::equilibrium;
use crate::error::MarketError;
use crate::output;
use crate::scenario::{self, Scenario, ScenarioError};
use crate::stability;
use crate::sweep;
use crate::welfare::{self, HeadEffectReport, WelfareBreakdown};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "attention-market", version, about = "Attention-market dynamics, stability, welfare and allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output path, `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Seed for randomised starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the dynamics (CSV time series).
    Simulate(Common),
    /// Solve for a steady state and probe uniqueness from random starts.
    Equilibrium(Common),
    /// Jacobian spectrum at the steady state reached from the initial state.
    Stability(Common),
    /// Bracketing search for the critical network-effect strength.
    CriticalBeta(Common),
    /// Welfare decomposition of the initial state.
    Welfare(Common),
    /// Optimal static allocation.
    Allocate(Common),
    /// Optimal allocation path by forward–backward sweep.
    Control(Common),
    /// Grid over one or two parameters (long-format CSV).
    Sweep(Common),
}

enum Failure {
    Config(String),
    Io(String),
    NotConverged(String),
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::Divergence { .. }
            | MarketError::EquilibriumFailed { .. }
            | MarketError::EigensolverStalled
            | MarketError::NotConverged(_) => Failure::NotConverged(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = std::result::Result<bool, Failure>;

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NOT_CONVERGED,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            EXIT_IO
        }
        Err(Failure::NotConverged(m)) => {
            eprintln!("error: {m}");
            EXIT_NOT_CONVERGED
        }
    }
}

fn open_out(out: &str) -> io::Result<Box<dyn Write>> {
    if out == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(File::create(out)?)))
    }
}

fn emit_json<T: Serialize>(c: &Common, value: &T) -> Result<(), Failure> {
    if c.format == Some(Format::Csv) {
        return Err(Failure::Config("this command only writes JSON".into()));
    }
    output::write_json(value, open_out(&c.out)?)?;
    Ok(())
}

fn default_integrator(s: &Scenario) -> IntegratorConfig {
    s.integrator.clone().unwrap_or_else(|| {
        let g = s.params.viewer_speed;
        IntegratorConfig::new(0.01 / g, 50.0 / g)
    })
}

fn warn_unconverged(what: &str, ok: bool) -> bool {
    if !ok {
        eprintln!("warning: {what} did not converge");
    }
    ok
}

#[derive(Serialize)]
struct WelfareOutput {
    breakdown: WelfareBreakdown,
    head_effect_comparison: Option<HeadEffectReport>,
}

fn dispatch(cmd: &Command) -> Outcome {
    let c = match cmd {
        Command::Simulate(c)
        | Command::Equilibrium(c)
        | Command::Stability(c)
        | Command::CriticalBeta(c)
        | Command::Welfare(c)
        | Command::Allocate(c)
        | Command::Control(c)
        | Command::Sweep(c) => c,
    };
    let s = scenario::parse_scenario(&c.scenario)?;
    match cmd {
        Command::Simulate(_) => {
            let traj = dynamics::integrate(&s.params, &s.initial, &default_integrator(&s), None)?;
            match c.format.unwrap_or(Format::Csv) {
                Format::Csv => output::write_trajectory_csv(&traj, open_out(&c.out)?)?,
                Format::Json => output::write_json(&traj, open_out(&c.out)?)?,
            }
            Ok(true)
        }
        Command::Equilibrium(_) => {
            let mut report = equilibrium::solve_steady_state(&s.params, &s.initial, &s.equilibrium)?;
            let starts = equilibrium::random_interior_starts(&s.params, &s.initial, s.probe.starts, c.seed);
            let probe = equilibrium::probe_uniqueness(&s.params, &starts, &s.equilibrium)?;
            if !probe.agrees_within(1e-6 * s.params.total_viewers) {
                eprintln!(
                    "warning: random starts disagree (viewer spread {:.3e})",
                    probe.max_spread_viewers
                );
            }
            report.basin_probe.extend(probe.samples);
            emit_json(c, &report)?;
            Ok(warn_unconverged("steady-state solver", report.converged))
        }
        Command::Stability(_) => {
            let eq = equilibrium::solve_steady_state(&s.params, &s.initial, &s.equilibrium)?;
            let report = stability::classify_stability(&s.params, &eq.state, &s.stability)?;
            if !report.at_steady_state {
                eprintln!("warning: spectrum evaluated away from a steady state");
            }
            emit_json(c, &report)?;
            Ok(warn_unconverged("steady-state solver", eq.converged))
        }
        Command::CriticalBeta(_) => {
            let report = stability::critical_beta(&s.params, &s.critical_beta)?;
            emit_json(c, &report)?;
            Ok(true)
        }
        Command::Welfare(_) => {
            let breakdown = WelfareBreakdown::evaluate(&s.params, &s.initial)?;
            let head = if s.params.is_symmetric() && s.params.n_streamers >= 2 {
                Some(welfare::head_effect_comparison(&s.params, &s.head_effect)?)
            } else {
                None
            };
            emit_json(c, &WelfareOutput { breakdown, head_effect_comparison: head })?;
            Ok(true)
        }
        Command::Allocate(_) => {
            let sol = allocation::optimize_allocation(&s.params, &s.initial, &s.allocation)?;
            print_allocation_table(&sol);
            if sol.infeasible {
                eprintln!("warning: paper_foc system infeasible at the pinned corners");
            }
            emit_json(c, &sol)?;
            Ok(warn_unconverged("allocation", sol.converged))
        }
        Command::Control(_) => {
            let sol = control::solve_fbsm(&s.params, &s.initial, &s.control)?;
            match c.format.unwrap_or(Format::Csv) {
                Format::Json => output::write_json(&sol, open_out(&c.out)?)?,
                Format::Csv => {
                    output::write_control_csv(&sol, open_out(&c.out)?)?;
                    if c.out != "-" {
                        let side = sidecar(Path::new(&c.out));
                        output::write_json(&sol, BufWriter::new(File::create(side)?))?;
                    }
                }
            }
            Ok(warn_unconverged("forward-backward sweep", sol.converged))
        }
        Command::Sweep(_) => {
            let cfg = s.sweep.as_ref().ok_or_else(|| Failure::Config("scenario has no `sweep` block".into()))?;
            let res = sweep::run_sweep(&s.params, &s.initial, cfg)?;
            match c.format.unwrap_or(Format::Csv) {
                Format::Csv => output::write_sweep_csv(&res, open_out(&c.out)?)?,
                Format::Json => output::write_json(&res, open_out(&c.out)?)?,
            }
            if res.unconverged > 0 {
                eprintln!("warning: {} sweep cells did not reach a steady state", res.unconverged);
            }
            Ok(res.unconverged == 0)
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn print_allocation_table(sol: &AllocationSolution) {
    eprintln!("{:>4} {:>14} {:>14} {:>14}", "i", "theta", "grad_W", "mu");
    for i in 0..sol.theta.len() {
        eprintln!("{:>4} {:>14.6e} {:>14.6e} {:>14.6e}", i + 1, sol.theta[i], sol.gradient[i], sol.mu[i]);
    }
    eprintln!("lambda = {:.6e}, welfare = {:.6e}, residual = {:.3e}", sol.lambda, sol.welfare, sol.foc_residual);
}
