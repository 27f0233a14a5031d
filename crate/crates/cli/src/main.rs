use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;
mod output;
mod settings;

use error::CliError;

/// Homodyne simulation and covariance tomography of noisy squeezed vacuum.
///
/// Exit codes: 0 success, 2 usage error, 3 I/O or file-format error,
/// 4 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "gqst", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate labelled quadrature records into a GQST0001 dataset.
    Generate(GenerateArgs),
    /// Train the convolutional estimator; writes a GQNN0001 model and a loss CSV.
    Train(TrainArgs),
    /// Estimate the covariance matrix of one quadrature record.
    Estimate(EstimateArgs),
    /// Sub-sample a long record and report SQ, ASQ and purity spreads.
    Bootstrap(BootstrapArgs),
    /// Degradation (SQ vs ASQ) or purity curve over a squeezing sweep.
    Curves(CurvesArgs),
    /// Select the noise weight epsilon by minimum MSE.
    Select(SelectArgs),
    /// Fidelity benchmark over random two-component states.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Random seed; drawn and printed when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` config file (`#` comments); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RangeArgs {
    /// Squeezing range lower end, dB [default: 0].
    #[arg(long)]
    pub r_db_min: Option<f64>,
    /// Squeezing range upper end, dB [default: 15].
    #[arg(long)]
    pub r_db_max: Option<f64>,
    /// Thermal photon number lower end [default: 0].
    #[arg(long)]
    pub n_min: Option<f64>,
    /// Thermal photon number upper end [default: 1].
    #[arg(long)]
    pub n_max: Option<f64>,
    /// Squeezing phase lower end, rad [default: 0].
    #[arg(long)]
    pub phi_min: Option<f64>,
    /// Squeezing phase upper end, rad [default: pi].
    #[arg(long)]
    pub phi_max: Option<f64>,
    /// Mixture weight lower end [default: 0].
    #[arg(long)]
    pub eps_min: Option<f64>,
    /// Mixture weight upper end [default: 0.05].
    #[arg(long)]
    pub eps_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EstimatorArgs {
    /// Estimator: `direct` or `nn` [default: direct].
    #[arg(long)]
    pub method: Option<String>,
    /// GQNN0001 model file (required with `--method nn`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Phase bins of the direct estimator [default: 32].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Direct-estimator fit weighting: `count` or `inverse-variance` [default: inverse-variance].
    #[arg(long)]
    pub weighting: Option<String>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub ranges: RangeArgs,
    /// Number of states [default: 1000].
    #[arg(long)]
    pub count: Option<u64>,
    /// Quadrature points per state [default: 2048].
    #[arg(long)]
    pub points: Option<usize>,
    /// Phase layout: `uniform` or `sweep` [default: uniform].
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub ranges: RangeArgs,
    /// Training dataset (GQST0001). Mutually exclusive with --states.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train on this many freshly simulated states instead of a dataset.
    #[arg(long)]
    pub states: Option<u64>,
    /// Points per simulated state [default: 2048].
    #[arg(long)]
    pub points: Option<usize>,
    /// Epochs [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size, at least 2 [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.003].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate schedule: `cosine` or `constant` [default: cosine].
    #[arg(long)]
    pub schedule: Option<String>,
    /// Linear warm-up epochs [default: 0].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Adam first-moment decay [default: 0.9].
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.9].
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Filters of the stem convolution [default: 16].
    #[arg(long)]
    pub stem_filters: Option<usize>,
    /// Comma-separated filters per residual block [default: 16,32,64,128].
    #[arg(long)]
    pub blocks: Option<String>,
    /// Convolution kernel size, odd [default: 7].
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Downsampling stride [default: 2].
    #[arg(long)]
    pub stride: Option<usize>,
    /// Loss CSV path [default: <out> with extension `loss.csv`].
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RecordArgs {
    /// Quadrature record as CSV with columns `x,theta`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Take the record from this GQST0001 dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Record index within --dataset [default: 0].
    #[arg(long)]
    pub index: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub record: RecordArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
pub struct StateArgs {
    /// Squeezing of the simulated state, dB [default: 10].
    #[arg(long)]
    pub r_db: Option<f64>,
    /// Thermal photon number [default: 0].
    #[arg(long)]
    pub n: Option<f64>,
    /// Squeezing phase, rad [default: 0].
    #[arg(long)]
    pub phi: Option<f64>,
    /// Mixture weight [default: 0].
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub record: RecordArgs,
    #[command(flatten)]
    pub state: StateArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Length of the simulated record when no input is given [default: 3000000].
    #[arg(long)]
    pub record_length: Option<usize>,
    /// Number of replicates [default: 1000].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Points per replicate [default: 2048].
    #[arg(long)]
    pub points: Option<usize>,
    /// Resample with replacement instead of down-sampling.
    #[arg(long)]
    pub with_replacement: bool,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Curve: `degradation` or `purity` [default: degradation].
    #[arg(long)]
    pub kind: Option<String>,
    /// Comma-separated squeezing levels, dB [default: 1,3,5,7,9,11,13,15].
    #[arg(long)]
    pub r_db_list: Option<String>,
    /// Thermal photon number shared by all states [default: 0].
    #[arg(long)]
    pub n: Option<f64>,
    /// Squeezing phase, rad [default: 0].
    #[arg(long)]
    pub phi: Option<f64>,
    /// Mixture weight [default: 0].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Simulated record length per state [default: 65536].
    #[arg(long)]
    pub samples_per_state: Option<usize>,
    /// Bootstrap replicates per state [default: 20].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Points per replicate [default: 2048].
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// MSE table as CSV `epsilon,mse`; without it a pseudo-experiment is simulated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated epsilon grid [default: 0,0.01,0.02,0.03,0.04,0.05].
    #[arg(long)]
    pub grid: Option<String>,
    /// Pseudo-experiment noise weight [default: 0.01].
    #[arg(long)]
    pub true_epsilon: Option<f64>,
    /// Pseudo-experiment thermal photon number [default: 0.1].
    #[arg(long)]
    pub n: Option<f64>,
    /// Comma-separated squeezing parameters of the sweep [default: 0.2,0.4,...,1.6].
    #[arg(long)]
    pub r_list: Option<String>,
    /// Record length per pseudo-experiment state [default: 1048576].
    #[arg(long)]
    pub record_points: Option<usize>,
    /// Independent pseudo-experiments [default: 1].
    #[arg(long)]
    pub trials: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub ranges: RangeArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Number of random states [default: 6000].
    #[arg(long)]
    pub count: Option<u64>,
    /// Points per record [default: 2048].
    #[arg(long)]
    pub points: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Curves(a) => commands::curves(a),
        Command::Select(a) => commands::select(a),
        Command::Benchmark(a) => commands::benchmark(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
