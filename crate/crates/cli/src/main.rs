use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use olpdg_cli::runner::{self, CommonOpts};

#[derive(Parser)]
#[command(
    name = "olpdg",
    about = "Solver for open-loop potential LQ difference games with coupled constraints",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Directory for artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Potential-condition tolerance for check; KKT residual bound otherwise.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for the randomized parts of the certificates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IoArgs {
    /// Input file, TOML with kind = "game" or kind = "smartgrid".
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (kind = "smartgrid"); omitted means the builtin default.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a game and test the potential-structure conditions.
    Check(IoArgs),
    /// Solve for an open-loop equilibrium and run every certificate.
    Solve(IoArgs),
    /// Re-certify a trajectory.csv previously written into --out.
    Verify(IoArgs),
    /// Build and solve the demand-side management scenario.
    Smartgrid(ScenarioArgs),
    /// Solve the scenario across scaled incentives and tabulate storage.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Parameter to scale: a<user>, for example a2 for user 2's incentive.
        #[arg(long)]
        param: String,
        /// Comma-separated scale factors applied to the parameter.
        #[arg(long, value_delimiter = ',', required = true)]
        scale: Vec<f64>,
    },
}

fn common(run: &RunArgs) -> CommonOpts {
    CommonOpts {
        out: run.out.clone(),
        tol: run.tol,
        seed: run.seed,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Check(a) => runner::run_check(&a.input, &common(&a.run)),
        Cmd::Solve(a) => runner::run_solve(&a.input, &common(&a.run)),
        Cmd::Verify(a) => runner::run_verify(&a.input, &common(&a.run)),
        Cmd::Smartgrid(a) => runner::run_smartgrid(a.input.as_deref(), &common(&a.run)),
        Cmd::Sweep {
            scenario,
            param,
            scale,
        } => runner::run_sweep(
            scenario.input.as_deref(),
            &common(&scenario.run),
            param,
            scale,
        ),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
