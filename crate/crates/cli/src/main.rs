use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svtune_cli::{run, Command, ModelSource, RunConfig, EXIT_SETUP};

/// Tune controller parameters of power-system models by singular value
/// optimization along vertical curves.
///
/// Every command writes report.json, iterations.csv and params_final.json
/// into the output directory. Exit status: 0 when the goal was reached,
/// 1 for setup errors, 2 when tuning finished without reaching the goal.
#[derive(Parser, Debug)]
#[command(name = "svtune", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Move all poles into the open left half-plane.
    Stabilize(CommonArgs),
    /// Minimize the peak singular value along the curve Re s = delta.
    MinimizeGamma {
        #[command(flatten)]
        common: CommonArgs,
        /// Abscissa of the vertical curve.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        delta: f64,
    },
    /// List the poles at the initial parameters without tuning.
    Analyze(CommonArgs),
    /// Run the Lyapunov-matrix baseline.
    PkBaseline(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Built-in benchmark: two-area-4 or ring-10.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    benchmark: Option<String>,
    /// Model file (JSON, format 1).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Factor applied to the initial parameters, clamped into their bounds.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    scale: f64,
    /// Trust-region contraction factor in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Maximum inner iterations per curve.
    #[arg(long)]
    kmax: Option<usize>,
    /// Relative Γ improvement below which a step counts as small.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "svtune-out")]
    out: PathBuf,
    /// Seed for randomized tooling; recorded only.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn into_config(self, command: Command) -> RunConfig {
        let source = match (self.benchmark, self.model) {
            (Some(b), _) => ModelSource::Benchmark(b),
            (None, Some(m)) => ModelSource::File(m),
            (None, None) => unreachable!("clap requires a model source"),
        };
        RunConfig {
            scale: self.scale,
            alpha: self.alpha,
            k_max: self.kmax,
            rel_tol: self.rel_tol,
            out: self.out,
            seed: self.seed,
            ..RunConfig::new(command, source)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap reports usage errors with status 2, which is reserved for tuning failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_SETUP as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match cli.command {
        Cmd::Stabilize(a) => a.into_config(Command::Stabilize),
        Cmd::Analyze(a) => a.into_config(Command::Analyze),
        Cmd::PkBaseline(a) => a.into_config(Command::PkBaseline),
        Cmd::MinimizeGamma { common, delta } => RunConfig {
            delta: Some(delta),
            ..common.into_config(Command::MinimizeGamma)
        },
    };
    match run(&cfg) {
        Ok(outcome) => {
            let r = &outcome.report;
            println!(
                "{:?}: max Re pole {:.6} -> {:.6}, {} outer / {} inner iterations; report in {}",
                r.status,
                r.max_re_initial,
                r.max_re_final,
                r.outer.len(),
                r.inner.len(),
                cfg.out.display()
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SETUP as u8)
        }
    }
}
