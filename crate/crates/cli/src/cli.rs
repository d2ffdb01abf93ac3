//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coalition_core::BinStrategy;

#[derive(Debug, Parser)]
#[command(name = "coalition", version, about = "Coalition detection from agent hidden states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the pairwise MI matrix of an HSD file (CSV output).
    EstimateMi {
        input: PathBuf,
        #[command(flatten)]
        mi: MiArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fiedler bipartition of an MI matrix CSV (JSON output).
    Partition {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recursive decomposition of an MI matrix CSV into a coalition tree.
    Hierarchy {
        input: PathBuf,
        #[arg(long, default_value_t = 1.05)]
        tau: f64,
        #[arg(long = "min-size", default_value_t = 2)]
        min_size: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition timeline over ordered HSD windows (JSON output).
    Track {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Split every input into consecutive windows of this many samples.
        #[arg(long)]
        window: Option<usize>,
        #[command(flatten)]
        mi: MiArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulated experiment and write its artifacts.
    Simulate(SimulateArgs),
    /// Per-column bootstrap CIs and pairwise paired t-tests over per-seed values.
    Stats {
        /// CSV with one column per condition and one row per seed; an optional
        /// leading `seed` column names the seeds.
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate experiment reports and merge them; prints a summary.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write the merged report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grayscale PGM heatmap of an MI matrix CSV.
    Render {
        input: PathBuf,
        /// Pixels per matrix entry.
        #[arg(long, default_value_t = 16)]
        cell: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct MiArgs {
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
    #[arg(long, default_value = "uniform")]
    pub strategy: BinStrategy,
    #[arg(long, default_value_t = 8)]
    pub pairs: usize,
    /// Seed for neuron-pair sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Hierarchical,
    Swap,
    NegativeControl,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, run in parallel.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Episode at which the swap happens.
    #[arg(long = "swap-at")]
    pub swap_at: Option<usize>,
    /// Episodes per MI window (swap only).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub strategy: Option<BinStrategy>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "min-size")]
    pub min_size: Option<usize>,
    /// Artifact directory; without it the report JSON goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn seed_list(&self) -> Vec<u64> {
        match (self.seed, self.seeds.is_empty()) {
            (Some(s), _) => vec![s],
            (None, false) => self.seeds.clone(),
            (None, true) => vec![42],
        }
    }
}
