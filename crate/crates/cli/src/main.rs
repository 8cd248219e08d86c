//! `qresnet`: run spectrum, regression, coefficient, expressibility,
//! gradient and MNIST studies and write JSON/CSV reports.
//!
//! Exit status: 0 success, 1 invalid input, 2 runtime failure.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{load, ExpressibilityConfig, GradCheckConfig, SpectrumConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::MissingData(_) | CliError::Runtime(_) => 2,
        }
    }
}

impl From<qresnet::Error> for CliError {
    fn from(e: qresnet::Error) -> Self {
        use qresnet::Error as E;
        match e {
            E::Io(_) | E::BadMagic { .. } | E::Malformed(_) => CliError::MissingData(e.to_string()),
            E::Conditioning(_) | E::NonConvergence { .. } | E::DegenerateFeature(_) => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qresnet",
    version,
    about = "Residual-encoded quantum circuit studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for report.json, manifest.json and CSV files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// MNIST on a 2000-sample stratified subset with 5 repetitions.
    #[arg(long)]
    pub desk_scale: bool,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory with the four MNIST IDX files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Frequencies reachable by stacked encodings.
    Spectrum {
        /// Generator eigenvalues, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        eigenvalues: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Residual instead of plain encodings.
        #[arg(long)]
        residual: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train regression models on Fourier targets.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Fourier coefficients of randomly initialized models.
    CoeffCloud {
        #[command(flatten)]
        common: Common,
    },
    /// KL divergence of output fidelities from the Haar distribution.
    Expressibility {
        #[command(flatten)]
        common: Common,
    },
    /// QCNN classification of MNIST digits.
    Mnist {
        #[command(flatten)]
        common: Common,
    },
    /// Compare parameter-shift, adjoint and finite-difference gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn required_config<T: serde::de::DeserializeOwned>(
    common: &Common,
    command: &str,
) -> Result<T, CliError> {
    match &common.config {
        Some(p) => load(p),
        None => Err(CliError::Validation(format!(
            "{command} needs --config <file>"
        ))),
    }
}

fn optional_config<T: serde::de::DeserializeOwned + Default>(
    common: &Common,
) -> Result<T, CliError> {
    common
        .config
        .as_deref()
        .map_or_else(|| Ok(T::default()), load)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let common = match &cli.command {
        Command::Spectrum { common, .. }
        | Command::Fit { common }
        | Command::CoeffCloud { common }
        | Command::Expressibility { common }
        | Command::Mnist { common }
        | Command::Gradcheck { common } => common.clone(),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Spectrum {
            eigenvalues,
            layers,
            residual,
            ..
        } => {
            let cfg = match (eigenvalues, &common.config) {
                (Some(eigenvalues), _) => SpectrumConfig {
                    eigenvalues,
                    layers,
                    residual,
                },
                (None, Some(p)) => load(p)?,
                (None, None) => {
                    return Err(CliError::Validation(
                        "spectrum needs --eigenvalues or --config".into(),
                    ))
                }
            };
            commands::spectrum(&common, cfg)?;
        }
        Command::Fit { .. } => commands::fit(&common, required_config(&common, "fit")?)?,
        Command::CoeffCloud { .. } => {
            commands::coeff_cloud(&common, required_config(&common, "coeff-cloud")?)?
        }
        Command::Expressibility { .. } => {
            commands::expressibility(&common, optional_config::<ExpressibilityConfig>(&common)?)?
        }
        Command::Mnist { .. } => commands::mnist(&common, required_config(&common, "mnist")?)?,
        Command::Gradcheck { .. } => {
            return commands::gradcheck(&common, optional_config::<GradCheckConfig>(&common)?)
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
