//! `polydich`: certify polynomial dichotomies from the command line.
//!
//! Exit codes: 0 on success, 1 on errors (I/O, parse, invalid input),
//! 2 when the analysis itself comes back negative.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "polydich", version, about = "Polynomial dichotomies via admissibility")]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true, env = "POLYDICH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify a dichotomy and write the certificate JSON.
    Certify(CertifyArgs),
    /// Solve the admissibility equation or report on invertibility.
    Solve(SolveArgs),
    /// Robustness experiment under polynomially small perturbations.
    Perturb(PerturbArgs),
    /// Polynomial Lyapunov exponents of the standard basis vectors (CSV).
    Lyapunov(LyapunovArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Base {
    Euclidean,
    Sup,
    One,
}

impl From<Base> for polydich::BaseNorm {
    fn from(b: Base) -> Self {
        match b {
            Base::Euclidean => polydich::BaseNorm::Euclidean,
            Base::Sup => polydich::BaseNorm::Sup,
            Base::One => polydich::BaseNorm::One,
        }
    }
}

#[derive(Args, Debug)]
struct Tolerances {
    /// Slope margin separating stable from unstable directions.
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    /// Nonuniformity accepted as uniform.
    #[arg(long, default_value_t = 0.05)]
    epsilon_tol: f64,
    /// Points of the geometric grid used for direction slopes.
    #[arg(long, default_value_t = 24)]
    slope_points: usize,
    /// Skip the invertibility report on `T_Z`.
    #[arg(long)]
    no_admissibility: bool,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[arg(long)]
    system: PathBuf,
    /// `base`, or a path to a norm spec JSON.
    #[arg(long, default_value = "base")]
    norms: String,
    #[arg(long, value_enum, default_value_t = Base::Euclidean)]
    base_norm: Base,
    /// Certificate path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tol: Tolerances,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ZChoice {
    /// `Z = R^d`.
    Full,
    /// `Z = {0}`.
    Zero,
    /// The complement recorded in `--cert`.
    Cert,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).args(["green", "truncated", "report"])))]
struct SolveArgs {
    /// Green-kernel formula with the certified projections.
    #[arg(long)]
    green: bool,
    /// Dense solve of the truncated system.
    #[arg(long)]
    truncated: bool,
    /// Invertibility report; no right-hand side needed.
    #[arg(long)]
    report: bool,
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Right-hand side sequence file tagged `Y0`.
    #[arg(long)]
    rhs: Option<PathBuf>,
    #[arg(long = "Z", value_enum)]
    z: Option<ZChoice>,
    #[arg(long, value_enum, default_value_t = Base::Euclidean)]
    base_norm: Base,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Strong,
    Weak,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Random,
    Adversarial,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    system: PathBuf,
    /// Budget constant in `c / (m+1)^p`.
    #[arg(long)]
    c: f64,
    #[arg(long, value_enum, default_value_t = RegimeArg::Strong)]
    regime: RegimeArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Random)]
    mode: ModeArg,
    /// Number of perturbation seeds.
    #[arg(long, default_value_t = 32)]
    seeds: u64,
    /// First seed; seeds run from here upwards.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Base::Euclidean)]
    base_norm: Base,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LyapunovArgs {
    #[arg(long)]
    system: PathBuf,
    /// Fit window `lo,hi`; defaults to `max(2, N/16),N`.
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of `log n` against `log ||A(n,1) e_i||` for plotting.
    #[arg(long)]
    series: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(lo)?, p(hi)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors, which is reserved here
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Certify(a) => commands::certify(a),
        Command::Solve(a) => commands::solve(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Lyapunov(a) => commands::lyapunov(a),
    };
    match outcome {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Negative) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("4,64"), Ok((4, 64)));
        assert_eq!(parse_window(" 2 , 16"), Ok((2, 16)));
        assert!(parse_window("4").is_err());
        assert!(parse_window("a,3").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
