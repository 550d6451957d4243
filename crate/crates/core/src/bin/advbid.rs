//! `advbid`: dataset generation, oracle solving, training, evaluation and
//! reporting for ROI-constrained bidding.
//!
//! Exit status: 0 ok, 2 usage, 3 missing upstream artifact, 4 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advbid_core::pipeline::{self, EvalOptions, Layout, TrainOptions};
use advbid_core::train::Algo;
use advbid_core::{Error, Result};

#[derive(Parser)]
#[command(name = "advbid", version, about = "ROI-constrained bidding: data, oracles, training and evaluation")]
struct Cli {
    /// Output root. Falls back to $ADVBID_OUT, then ./advbid-out.
    #[arg(long, global = true, env = "ADVBID_OUT", default_value = "advbid-out")]
    out: PathBuf,

    /// Config document (TOML). Without it a stage reuses its input's config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Dataset directory (default <out>/dataset).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Expert directory (default <out>/experts).
    #[arg(long)]
    experts: Option<PathBuf>,
}

impl Inputs {
    fn dataset(&self, layout: &Layout) -> PathBuf {
        self.data.clone().unwrap_or_else(|| layout.dataset())
    }

    fn experts(&self, layout: &Layout) -> PathBuf {
        self.experts.clone().unwrap_or_else(|| layout.experts())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Gen {
        /// Overrides `generator.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the hindsight oracle for every day.
    Expert {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Worker threads; falls back to $ADVBID_WORKERS, then 1.
        #[arg(long, env = "ADVBID_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Train one algorithm with one seed.
    Train {
        #[arg(long)]
        algo: Algo,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `train.rounds`.
        #[arg(long)]
        rounds: Option<usize>,
        /// Continue from the last checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Evaluate a training run on a split.
    Eval {
        /// Training run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, test-iid, test-ood, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Aggregate evaluation results.
    Report {
        /// Evaluation directories, or directories holding them.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Accept inputs produced under different configs.
        #[arg(long)]
        force: bool,
    },
    /// Play a trained agent on one day and print the trajectory as JSON.
    Act {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        day: u32,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Print the resolved config document.
    Config {
        /// Start from the small smoke-test config instead of the defaults.
        #[arg(long)]
        smoke: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let layout = Layout::new(&cli.out);
    let config = |upstream: Option<&Path>| pipeline::resolve_config(cli.config.as_deref(), upstream);
    match cli.command {
        Command::Gen { seed } => {
            let mut cfg = config(None)?;
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            let m = pipeline::gen_stage(&cfg, &layout.dataset())?;
            println!("dataset: {} ({} days, digest {})", layout.dataset().display(), m.labels["days"], m.digest());
        }
        Command::Expert { data, workers } => {
            let dataset = data.unwrap_or_else(|| layout.dataset());
            let cfg = config(Some(&dataset))?;
            let m = pipeline::expert_stage(&cfg, &dataset, &layout.experts(), workers)?;
            println!("experts: {} ({} days, {} flagged)", layout.experts().display(), m.labels["days"], m.labels["flagged"]);
        }
        Command::Train { algo, seed, rounds, resume, inputs } => {
            let experts = inputs.experts(&layout);
            let mut cfg = config(Some(&experts))?;
            if let Some(r) = rounds {
                cfg.train.rounds = r;
            }
            let out = layout.run(algo, seed);
            let opts = TrainOptions { algo, seed, dataset: inputs.dataset(&layout), experts, out: out.clone(), resume };
            pipeline::train_stage(&cfg, &opts)?;
            println!("run: {}", out.display());
        }
        Command::Eval { checkpoint, split, inputs } => {
            let cfg = config(Some(&checkpoint))?;
            let file: pipeline::AgentFile = serde_json::from_str(
                &std::fs::read_to_string(checkpoint.join("agent.json"))
                    .map_err(|_| Error::Dependency(format!("no training run at {} (run `train` first)", checkpoint.display())))?,
            )
            .map_err(|e| Error::format(checkpoint.join("agent.json"), e.to_string()))?;
            let out = layout.eval(file.algo, file.seed, &split);
            let opts = EvalOptions { checkpoint, split, dataset: inputs.dataset(&layout), experts: inputs.experts(&layout), out: out.clone() };
            let (_, run) = pipeline::eval_stage(&cfg, &opts)?;
            let t = advbid_core::metrics::tacr(&run.scores).map_or("n/a".into(), |x| format!("{x:.4}"));
            println!("eval: {} (TACR {t})", out.display());
        }
        Command::Report { runs, force } => {
            let (_, report) = pipeline::report_stage(&runs, &layout.report(), force)?;
            print!("{}", pipeline::summary_table(&report));
        }
        Command::Act { checkpoint, day, inputs } => {
            let cfg = config(Some(&checkpoint))?;
            let rec = pipeline::act_stage(&cfg, &checkpoint, &inputs.dataset(&layout), &inputs.experts(&layout), day)?;
            println!("{}", serde_json::to_string_pretty(&rec).map_err(|e| Error::Runtime(e.to_string()))?);
        }
        Command::Config { smoke } => {
            let cfg = match (&cli.config, smoke) {
                (None, true) => pipeline::smoke_config(),
                _ => config(None)?,
            };
            cfg.validate()?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on argument errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
