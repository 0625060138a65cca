//! `gmdp`: generate synthetic mixtures, separate them, estimate source
//! images with a chosen scaling back-end, evaluate, and sweep (p, q).

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{FileConfig, ScalingOverrides};

#[derive(Parser)]
#[command(name = "gmdp", version, about = "Determined BSS with generalized minimal-distortion source image scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic mixture scenarios plus a manifest.
    Mix {
        /// TOML run configuration (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for WAVs and manifest.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Base seed override; scenario s uses seed + s.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of scenarios override.
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Separate manifest scenarios and write reference-mic image estimates.
    Separate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scaling back-end: pb, mdp, or gmdp.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        rel_tol: Option<f64>,
        /// 1-based reference microphone.
        #[arg(long)]
        ref_mic: Option<usize>,
        /// Separator iterations override.
        #[arg(long)]
        auxiva_iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = automatic).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Score estimates against ground-truth source images.
    Eval {
        /// Directory written by `separate` (estimates + run record).
        #[arg(long)]
        estimates: PathBuf,
        /// Directory written by `mix` (manifest + image WAVs).
        #[arg(long)]
        references: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the mixed-norm back-end over a (p, q) grid and aggregate metrics.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid as `a,b,c` or `start:end:step`, values in (0, 2].
        #[arg(long)]
        p_grid: String,
        #[arg(long)]
        q_grid: String,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        rel_tol: Option<f64>,
        #[arg(long)]
        ref_mic: Option<usize>,
        #[arg(long)]
        auxiva_iters: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = automatic).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Mix { config, out, seed, scenarios } => {
            let cfg = FileConfig::load(config.as_deref())?;
            pipeline::cmd_mix(&cfg, &out, seed, scenarios)
        }
        Command::Separate {
            manifest,
            config,
            method,
            p,
            q,
            max_iters,
            rel_tol,
            ref_mic,
            auxiva_iters,
            out,
            workers,
        } => {
            let cfg = FileConfig::load(config.as_deref())?;
            let method = method
                .map(|m| m.parse().map_err(|e: String| anyhow::anyhow!("config error: {e}")))
                .transpose()?;
            let overrides = ScalingOverrides { method, p, q, max_iters, rel_tol, ref_mic };
            let settings = cfg.scaling_settings(&overrides)?;
            pipeline::cmd_separate(&manifest, &cfg, &settings, auxiva_iters, &out, workers)
        }
        Command::Eval { estimates, references, out } => {
            pipeline::cmd_eval(&estimates, &references, &out)
        }
        Command::Sweep {
            manifest,
            config,
            p_grid,
            q_grid,
            max_iters,
            rel_tol,
            ref_mic,
            auxiva_iters,
            out,
            workers,
        } => {
            let cfg = FileConfig::load(config.as_deref())?;
            let overrides = ScalingOverrides {
                method: Some(gmdp::ScalingMethod::Gmdp),
                p: None,
                q: None,
                max_iters,
                rel_tol,
                ref_mic,
            };
            let settings = cfg.scaling_settings(&overrides)?;
            let p_values = pipeline::parse_grid(&p_grid)?;
            let q_values = pipeline::parse_grid(&q_grid)?;
            pipeline::cmd_sweep(
                &manifest,
                &cfg,
                &settings,
                auxiva_iters,
                &p_values,
                &q_values,
                &out,
                workers,
            )
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
