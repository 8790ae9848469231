//! `rahfl` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rahfl::datagen::{
    apply_corruption, corrupt_dataset, load_manifest_dataset, make_synthetic_dataset, save_manifest_dataset,
    CorruptionKind, CorruptionSpec, Dataset, LabeledExample,
};
use rahfl::federation::{ExperimentConfig, Mode};
use rahfl::rng::Streams;

use crate::config::{keys_help, load_config, Preset};
use crate::error::Result;
use crate::metrics::{read_metrics, read_summary, METRICS_FILE, SUMMARY_FILE};
use crate::runner::{execute, parse_grid, run_grid};

#[derive(Debug, Parser)]
#[command(name = "rahfl", version, about = "Robust asymmetric heterogeneous federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file (TOML key/value) layered over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults the config file is layered on.
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: PresetArg,
    /// Master seed; overrides the config.
    #[arg(long, env = "RAHFL_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for per-client phases; overrides the config.
    #[arg(long, env = "RAHFL_THREADS")]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.config.as_deref(), self.preset.into())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write metrics.jsonl, summary.csv and config.toml.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Collaboration protocol; overrides the config.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Output directory; overrides the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of configs, e.g. --grid "mode=local_only,rahfl;aug=on,off".
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axes `key=v1,v2` separated by `;`; any config key may be an axis.
        #[arg(long)]
        grid: String,
        /// Root directory; each grid point gets a subdirectory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic labeled dataset as a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "data")]
        name: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 0, env = "RAHFL_SEED")]
        seed: u64,
    },
    /// Corrupt a manifest dataset and write the result as a new manifest.
    Corrupt {
        /// Input manifest JSON.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "corrupted")]
        name: String,
        /// Fraction of examples corrupted with a random kind and severity.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Apply this kind to every example instead of random draws.
        #[arg(long, value_parser = parse_kind, requires = "severity")]
        kind: Option<CorruptionKind>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        severity: Option<u8>,
        #[arg(long, default_value_t = 0, env = "RAHFL_SEED")]
        seed: u64,
    },
    /// Print per-round average accuracies and the final summary of a run.
    InspectMetrics {
        /// Run output directory.
        dir: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<CorruptionKind, String> {
    s.parse::<CorruptionKind>().map_err(|e| e.to_string())
}

fn command() -> clap::Command {
    Cli::command()
        .mut_subcommand("run", |c| c.after_long_help(keys_help()))
        .mut_subcommand("ablate", |c| c.after_long_help(keys_help()))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 on usage errors, 1 on
/// runtime failures.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Run { config, mode, out: dir } => {
            let mut cfg = config.resolve()?;
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            if let Some(dir) = dir {
                cfg.out_dir = dir;
            }
            let dir = cfg.out_dir.clone();
            execute(&cfg, &dir)?;
            writeln!(out, "wrote {}", dir.display())?;
        }
        Command::Ablate { config, grid, out: dir } => {
            let cfg = config.resolve()?;
            let axes = parse_grid(&grid)?;
            let root = dir.unwrap_or_else(|| cfg.out_dir.clone());
            for (path, row) in run_grid(&cfg, &axes, &root)? {
                writeln!(
                    out,
                    "{:<48} clean {:.4} corrupt {:.4}  {}",
                    row.label,
                    row.acc_clean_final,
                    row.acc_corrupt_final,
                    path.display()
                )?;
            }
        }
        Command::GenData {
            out: dir,
            name,
            samples,
            classes,
            side,
            seed,
        } => {
            let data = make_synthetic_dataset(samples, classes, side, &mut Streams::new(seed).get("data", 0))?;
            let path = save_manifest_dataset(&data, &dir, &name)?;
            writeln!(out, "wrote {} ({samples} examples, {classes} classes)", path.display())?;
        }
        Command::Corrupt {
            input,
            out: dir,
            name,
            rate,
            kind,
            severity,
            seed,
        } => {
            let data = load_manifest_dataset(&input)?;
            let mut rng = Streams::new(seed).get("corruption", 0);
            let corrupted = match (kind, severity) {
                (Some(kind), Some(severity)) => {
                    let spec = CorruptionSpec::new(kind, severity)?;
                    let examples = data
                        .examples()
                        .iter()
                        .map(|e| {
                            Ok(LabeledExample {
                                image: apply_corruption(&e.image, spec, &mut rng)?,
                                label: e.label,
                                corrupted: true,
                            })
                        })
                        .collect::<rahfl::Result<Vec<_>>>()?;
                    Dataset::new(examples, data.num_classes())?
                }
                _ => corrupt_dataset(&data, rate, &mut rng)?,
            };
            let path = save_manifest_dataset(&corrupted, &dir, &name)?;
            writeln!(
                out,
                "wrote {} ({:.1}% corrupted)",
                path.display(),
                100.0 * corrupted.corrupted_fraction()
            )?;
        }
        Command::InspectMetrics { dir } => {
            let metrics = read_metrics(&dir.join(METRICS_FILE))?;
            writeln!(out, "{:>5}  {:>9}  {:>11}  {:>9}  {:>6}", "round", "acc_clean", "acc_corrupt", "loss_col", "ones")?;
            for m in &metrics {
                let k = m.acc_clean.len().max(1) as f64;
                writeln!(
                    out,
                    "{:>5}  {:>9.4}  {:>11.4}  {:>9.4}  {:>6}",
                    m.round,
                    m.acc_clean.iter().sum::<f64>() / k,
                    m.acc_corrupt.iter().sum::<f64>() / k,
                    m.loss_col.iter().sum::<f64>() / k,
                    m.matrix_ones
                )?;
            }
            let summary = dir.join(SUMMARY_FILE);
            if summary.is_file() {
                writeln!(out)?;
                for row in read_summary(&summary)? {
                    writeln!(
                        out,
                        "{:<14} seed {:<4} client {:<4} {:<14} clean {:.4} corrupt {:.4}",
                        row.mode, row.seed, row.client_id, row.arch, row.acc_clean_final, row.acc_corrupt_final
                    )?;
                }
            }
        }
    }
    Ok(())
}
