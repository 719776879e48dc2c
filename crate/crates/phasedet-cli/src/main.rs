//! `phasedet`: detect production-phase starts and ends in furnace sensor
//! streams. Subcommands cover the whole workflow — synthetic data
//! generation, labeling, training, prediction, evaluation, and plot
//! export — driven by one optional config file plus flag overrides.

mod commands;
mod settings;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "phasedet",
    version,
    about = "Production-phase event detection for furnace sensor streams",
    after_help = "Precedence for every setting: flags > config file > built-in defaults.\n\
                  All randomness derives from --seed via a fixed per-stage fan-out,\n\
                  so identical inputs and seed reproduce identical output bytes."
)]
pub struct Cli {
    /// TOML or JSON config file; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Emit errors as one-line JSON on standard error.
    #[arg(long, global = true)]
    pub json: bool,

    /// Omit the generated_at field from JSON reports.
    #[arg(long, global = true)]
    pub no_timestamps: bool,

    /// Global random seed; per-stage seeds fan out from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Resampling grid step, seconds.
    #[arg(long, global = true)]
    pub dt: Option<f64>,

    /// Raw-data gaps longer than this split the trace, seconds
    /// (default: 5 * dt).
    #[arg(long, global = true)]
    pub gap_threshold: Option<f64>,

    /// Full width of the triangular label around each event, seconds.
    #[arg(long, global = true)]
    pub t_sw: Option<f64>,

    /// Samples per model input window (odd).
    #[arg(long, global = true)]
    pub window_len: Option<usize>,

    /// Window step during training and inference.
    #[arg(long, global = true)]
    pub stride: Option<usize>,

    /// Minimum |prediction| for a peak to become an event.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    /// Minimum spacing between detected events of one kind, seconds
    /// (default: t_sw).
    #[arg(long, global = true)]
    pub min_separation: Option<f64>,

    /// Match tolerance between detection and truth, seconds
    /// (default: t_sw / 2).
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,

    /// |label| at or above which a window always survives rebalancing.
    #[arg(long, global = true)]
    pub near_threshold: Option<f64>,

    /// Keep probability for far-from-event windows during rebalancing.
    #[arg(long, global = true)]
    pub keep_far_ratio: Option<f64>,

    /// Fraction of charges on the training side of the split.
    #[arg(long, global = true)]
    pub split_ratio: Option<f64>,

    /// Training epochs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,

    /// Mini-batch size.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,

    /// Adam learning rate.
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,

    /// Convolution filters in the model's first layer.
    #[arg(long, global = true)]
    pub conv_filters: Option<usize>,

    /// Convolution kernel width, samples.
    #[arg(long, global = true)]
    pub kernel_size: Option<usize>,

    /// Max-pooling block size.
    #[arg(long, global = true)]
    pub pool_size: Option<usize>,

    /// Units in the dense hidden layer.
    #[arg(long, global = true)]
    pub hidden_units: Option<usize>,

    /// Charges to synthesize (generate and pipeline).
    #[arg(long, global = true)]
    pub n_charges: Option<usize>,

    /// Directory for default input/output file locations.
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sensor trace with its ground-truth charge log.
    Generate {
        /// Sensor CSV output (default: <output-dir>/sensor.csv).
        #[arg(long, value_name = "PATH")]
        sensor_out: Option<PathBuf>,
        /// Charge log CSV output (default: <output-dir>/charges.csv).
        #[arg(long, value_name = "PATH")]
        charges_out: Option<PathBuf>,
    },
    /// Resample a sensor CSV and write the triangular label per sample.
    Label {
        /// Sensor CSV input (default: <output-dir>/sensor.csv).
        #[arg(long, value_name = "PATH")]
        sensor: Option<PathBuf>,
        /// Charge log CSV input (default: <output-dir>/charges.csv).
        #[arg(long, value_name = "PATH")]
        charges: Option<PathBuf>,
        /// Labels CSV output (default: <output-dir>/labels.csv).
        #[arg(long, value_name = "PATH")]
        labels_out: Option<PathBuf>,
    },
    /// Train a detector on a sensor trace and save the model file.
    Train {
        /// Sensor CSV input (default: <output-dir>/sensor.csv).
        #[arg(long, value_name = "PATH")]
        sensor: Option<PathBuf>,
        /// Charge log CSV input (default: <output-dir>/charges.csv).
        #[arg(long, value_name = "PATH")]
        charges: Option<PathBuf>,
        /// Model file output (default: <output-dir>/model.json).
        #[arg(long, value_name = "PATH")]
        model_out: Option<PathBuf>,
        /// Also write per-epoch training loss as CSV.
        #[arg(long, value_name = "PATH")]
        history_out: Option<PathBuf>,
    },
    /// Run a saved model over a sensor CSV and extract events.
    Predict {
        /// Sensor CSV input (default: <output-dir>/sensor.csv).
        #[arg(long, value_name = "PATH")]
        sensor: Option<PathBuf>,
        /// Model file input (default: <output-dir>/model.json).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Events CSV output (default: <output-dir>/events.csv).
        #[arg(long, value_name = "PATH")]
        events_out: Option<PathBuf>,
        /// Also write the raw prediction curve as CSV.
        #[arg(long, value_name = "PATH")]
        predictions_out: Option<PathBuf>,
    },
    /// Score an events CSV against a ground-truth charge log.
    Evaluate {
        /// Events CSV input (default: <output-dir>/events.csv).
        #[arg(long, value_name = "PATH")]
        events: Option<PathBuf>,
        /// Charge log CSV input (default: <output-dir>/charges.csv).
        #[arg(long, value_name = "PATH")]
        charges: Option<PathBuf>,
        /// JSON report output (default: <output-dir>/report.json).
        #[arg(long, value_name = "PATH")]
        report_out: Option<PathBuf>,
    },
    /// Generate data, train on the early charges, detect on the held-out
    /// ones, and evaluate — writing every artifact to the output dir.
    Pipeline,
    /// Write an aligned CSV of raw signal, true labels, predictions, and
    /// extracted events for plotting.
    ExportPlot {
        /// Sensor CSV input (default: <output-dir>/sensor.csv).
        #[arg(long, value_name = "PATH")]
        sensor: Option<PathBuf>,
        /// Charge log CSV input (default: <output-dir>/charges.csv).
        #[arg(long, value_name = "PATH")]
        charges: Option<PathBuf>,
        /// Model file input (default: <output-dir>/model.json).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Plot CSV output (default: <output-dir>/plot.csv).
        #[arg(long, value_name = "PATH")]
        plot_out: Option<PathBuf>,
    },
}

/// CLI failure split by exit code: usage/config problems exit 2, runtime
/// failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn emit_error(err: &CliError, json: bool) {
    if json {
        let doc = serde_json::json!({
            "error": { "kind": err.kind(), "message": err.message() }
        });
        eprintln!("{doc}");
    } else {
        eprintln!("error: {}", err.message());
    }
}

fn run() -> i32 {
    // The flag has to be inspected before parsing succeeds so that even
    // argument errors honor --json.
    let json_flag = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            if json_flag {
                emit_error(&CliError::Usage(e.to_string()), true);
            } else {
                let _ = e.print();
            }
            return 2;
        }
    };

    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            emit_error(&err, cli.json);
            err.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run());
}
