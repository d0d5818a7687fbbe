use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ranai_core::agents::PolicyKind;
use ranai_core::config::{ExperimentConfig, Overrides, Profile};
use ranai_core::harness;
use ranai_core::metrics::StateConfig;

#[derive(Parser)]
#[command(
    name = "ranai",
    version,
    about = "Segmentation-mode control in a simulated 5G teleoperated-driving cell"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (if the policy learns), evaluate, and write CSV outputs.
    Run {
        /// TOML configuration; defaults apply to every missing key.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        num_vehicles: Option<u32>,
        #[arg(long, allow_negative_numbers = true)]
        tx_power_dbm: Option<f64>,
        #[arg(long)]
        state_config: Option<StateConfig>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        profile: Option<Profile>,
        #[arg(long)]
        train_episodes: Option<u64>,
        #[arg(long)]
        test_episodes: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute summary.csv from per-tick outputs under a directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Re-run a campaign from its echoed config and diff the outputs.
    ReplayCheck {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            policy,
            num_vehicles,
            tx_power_dbm,
            state_config,
            seed,
            profile,
            train_episodes,
            test_episodes,
            out,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            cfg.apply(&Overrides {
                policy,
                num_vehicles,
                tx_power_dbm,
                state_config,
                master_seed: seed,
                profile,
                train_episodes,
                test_episodes,
            })?;
            log::info!(
                "{}: {} training and {} test episodes",
                cfg.label(),
                cfg.train_episodes(),
                cfg.test_episodes()
            );
            let res = harness::run_campaign(&cfg, &out).with_context(|| format!("campaign into {}", out.display()))?;
            harness::print_summary(&mut std::io::stdout(), std::slice::from_ref(&res.summary_row))?;
        }
        Command::Summarize { input } => {
            let rows = harness::summarize(&input)?;
            harness::print_summary(&mut std::io::stdout(), &rows)?;
        }
        Command::ReplayCheck { input } => {
            let scratch = tempfile::tempdir()?;
            let report = harness::replay_check(&input, scratch.path())?;
            for f in &report.files_compared {
                println!("compared {f}");
            }
            if !report.identical() {
                for d in &report.differences {
                    println!("differs  {d}");
                }
                bail!("{} file(s) differ", report.differences.len());
            }
            println!("identical");
        }
    }
    Ok(())
}
