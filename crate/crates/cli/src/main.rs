use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qpstab::{find_equilibrium, integrate, Classification, LiapunovFunction, StateVector};
use qpstab_cli::pipeline::certify;
use qpstab_cli::report::{to_json, TOOL_NAME, TOOL_VERSION};
use qpstab_cli::{
    export, parse_input, run_analysis, run_certificate, verdict_exit_code, AnalysisOptions,
    CliError, PipelineError, EXIT_CERTIFIED, EXIT_INCONCLUSIVE, EXIT_INPUT,
};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "qpstab",
    version,
    about = "Stability analysis of quasipolynomial ODE systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug, Args)]
struct Shared {
    /// Seed for every randomized search (overrides the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative band for negative semidefiniteness.
    #[arg(long, global = true)]
    semidefinite_tol: Option<f64>,
    /// Relative band for negative definiteness.
    #[arg(long, global = true)]
    definite_tol: Option<f64>,
    /// Starts for the certificate search and random equilibrium starts.
    #[arg(long, global = true)]
    max_starts: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equilibrium, certificate, Liapunov function and trajectory validation.
    Analyze {
        file: PathBuf,
        /// Horizon of the validation trajectories.
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Integrate one trajectory and write t, x, W, dW/dt as tab-separated columns.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        t_final: f64,
        /// Initial state, comma- or space-separated.
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        x0: Vec<f64>,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Certificate search and verification only.
    Certificate { file: PathBuf },
}

#[derive(Serialize)]
struct SimulationSummary {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    output: String,
    samples: usize,
    accepted_steps: usize,
    rejected_steps: usize,
    classification: Classification,
    w_initial: f64,
    w_final: f64,
}

fn positive(name: &str, value: Option<f64>) -> Result<(), CliError> {
    match value {
        Some(v) if !(v.is_finite() && v > 0.0) => Err(CliError::Usage(format!(
            "--{name} must be positive, got {v}"
        ))),
        _ => Ok(()),
    }
}

fn options(
    file: &std::path::Path,
    shared: &Shared,
) -> Result<(qpstab::QpSystem, AnalysisOptions), CliError> {
    positive("semidefinite-tol", shared.semidefinite_tol)?;
    positive("definite-tol", shared.definite_tol)?;
    if shared.max_starts == Some(0) {
        return Err(CliError::Usage("--max-starts must be at least 1".into()));
    }
    let input = parse_input(file)?;
    let mut options = AnalysisOptions::from_input(&input);
    if let Some(seed) = shared.seed {
        options.seed = seed;
    }
    if let Some(v) = shared.semidefinite_tol {
        options.thresholds.semidefinite = v;
    }
    if let Some(v) = shared.definite_tol {
        options.thresholds.definite = v;
    }
    if let Some(v) = shared.max_starts {
        options.max_starts = v;
    }
    Ok((input.system, options))
}

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let shared = &cli.shared;
    match cli.command {
        Command::Analyze { file, t_final } => {
            let (sys, mut options) = options(&file, shared)?;
            positive("t-final", t_final)?;
            if let Some(t) = t_final {
                options.t_final = t;
            }
            let report = run_analysis(&sys, &options)?;
            emit(&match shared.format {
                Format::Json => to_json(&report),
                Format::Text => report.to_text(),
            });
            Ok(verdict_exit_code(report.verdict))
        }
        Command::Certificate { file } => {
            let (sys, options) = options(&file, shared)?;
            let report = run_certificate(&sys, &options)?;
            emit(&match shared.format {
                Format::Json => to_json(&report),
                Format::Text => report.to_text(),
            });
            Ok(match report.certificate.classification {
                Classification::Inconclusive => EXIT_INCONCLUSIVE,
                _ => EXIT_CERTIFIED,
            })
        }
        Command::Simulate {
            file,
            t_final,
            x0,
            output,
            samples,
        } => {
            let (sys, mut options) = options(&file, shared)?;
            positive("t-final", Some(t_final))?;
            if samples < 2 {
                return Err(CliError::Usage("--samples must be at least 2".into()));
            }
            let x0 = StateVector::new(x0).map_err(|e| CliError::Usage(format!("--x0: {e}")))?;
            if x0.dim() != sys.n() {
                return Err(CliError::Usage(format!(
                    "--x0 has {} entries but n = {}",
                    x0.dim(),
                    sys.n()
                )));
            }
            options.integrator.samples = samples;
            let eq = find_equilibrium(&sys, None, &options.equilibrium_config())
                .map_err(PipelineError::from)?;
            let (cert, _) = certify(&sys, &options)?;
            let lf = LiapunovFunction::new(&sys, &cert.scaling, &eq.xstar)
                .map_err(PipelineError::from)?;
            let record = integrate(&sys, &x0, t_final, &options.integrator, Some(&lf))
                .map_err(PipelineError::from)?;
            match &output {
                None => emit(&export::render(&record)?),
                Some(path) => {
                    export::export_trajectory(&record, path)?;
                    let summary = SimulationSummary {
                        tool: TOOL_NAME,
                        version: TOOL_VERSION,
                        seed: options.seed,
                        output: path.display().to_string(),
                        samples: record.len(),
                        accepted_steps: record.accepted_steps,
                        rejected_steps: record.rejected_steps,
                        classification: cert.classification,
                        w_initial: record.w_samples[0],
                        w_final: record.w_samples[record.len() - 1],
                    };
                    emit(&match shared.format {
                        Format::Json => to_json(&summary),
                        Format::Text => format!(
                            "wrote {} samples to {} ({} accepted, {} rejected steps; W {:.6e} -> {:.6e})\n",
                            summary.samples,
                            summary.output,
                            summary.accepted_steps,
                            summary.rejected_steps,
                            summary.w_initial,
                            summary.w_final
                        ),
                    });
                }
            }
            Ok(EXIT_CERTIFIED)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors; usage errors share the input code.
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
