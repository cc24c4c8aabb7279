use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfedpm::runner::{self, MANIFEST_FILE};
use pfedpm::{config::ExperimentConfig, io, presets, Result, SimError};

#[derive(Parser)]
#[command(name = "pfedpm", version, about = "Seeded prototype-exchange federated learning simulator")]
#[command(after_help = help_footer())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, summary.json, partition.json
    /// and manifest.json.
    Run(Source),
    /// One run per value of a parameter plus a combined sweep.csv.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// a | lambda | stdev | n_mean
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Re-run a manifest and check its output checksums.
    Replay {
        /// manifest.json, or the directory holding it.
        manifest: PathBuf,
        /// Defaults to `<run dir>/replay`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print the client partition and optionally write partition.json.
    InspectPartition(Source),
}

#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Extra `key=value` assignments applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn help_footer() -> String {
    format!(
        "Presets: {}\n\n{}",
        presets::names().join(", "),
        ExperimentConfig::key_help()
    )
}

impl Source {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => presets::load(name)?,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| SimError::config(kv.as_str(), None, "expected KEY=VALUE"))?;
            cfg.set(k.trim(), v).map_err(|m| SimError::config(k.trim(), None, m))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(source) => {
            let cfg = source.resolve()?;
            let (run, _) = runner::run_experiment(&cfg, source.threads)?;
            print_summary(&run.summary);
            println!("wrote {}", cfg.out.display());
        }
        Command::Sweep {
            source,
            param,
            values,
        } => {
            let cfg = source.resolve()?;
            for p in runner::sweep(&cfg, &param, &values, source.threads)? {
                println!(
                    "{param}={:<8} decision {:.4} relation {}",
                    p.value,
                    p.summary.final_mean_acc_decision,
                    p.summary
                        .final_mean_acc_relation
                        .map_or("-".to_owned(), |r| format!("{r:.4}"))
                );
            }
            println!("wrote {}", cfg.out.join(runner::SWEEP_FILE).display());
        }
        Command::Replay {
            manifest,
            out,
            threads,
        } => {
            let path = if manifest.is_dir() {
                manifest.join(MANIFEST_FILE)
            } else {
                manifest
            };
            let dir = path.parent().map(PathBuf::from).unwrap_or_default();
            let out = out.unwrap_or_else(|| dir.join("replay"));
            let fresh = runner::replay(&path, &out, threads)?;
            println!("replay matches {} checksummed outputs", fresh.outputs.len());
        }
        Command::InspectPartition(source) => {
            let cfg = source.resolve()?;
            let ds = io::load_dataset(&cfg)?;
            let splits = runner::partition(&cfg, &ds)?;
            print!("{}", runner::describe_partition(&ds, &splits));
            if source.out.is_some() {
                io::create_dir(&cfg.out)?;
                io::write_json(&cfg.out.join(runner::PARTITION_FILE), &splits)?;
            }
        }
    }
    Ok(())
}

fn print_summary(s: &runner::Summary) {
    println!(
        "{} on {}: {} clients, {} rounds, {} train / {} test samples",
        s.method.name(),
        s.dataset.name(),
        s.clients,
        s.rounds,
        s.train_samples,
        s.test_samples
    );
    println!(
        "decision accuracy {:.4} ± {:.4}",
        s.final_mean_acc_decision, s.final_std_acc_decision
    );
    if let (Some(m), Some(sd)) = (s.final_mean_acc_relation, s.final_std_acc_relation) {
        println!("relation accuracy {m:.4} ± {sd:.4}");
    }
    println!(
        "uploaded {} scalars ({} bytes); FedAvg would upload {} per round",
        s.total_upload_scalars, s.total_upload_bytes, s.fedavg_scalars_per_round
    );
}
