use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use abn_core::ctc::{edit_distance, token_error_rate};
use abn_core::harness::batching::batch_dataset;
use abn_core::harness::checkpoint::{checkpoint_load, checkpoint_save};
use abn_core::harness::diagnostics::{ctc_oracle_sweep, op_gradchecks, stack_gradcheck, STACK_FRAMES};
use abn_core::harness::train::{decode_batch, deterministic_from_env, evaluate, split_data, train, Split};
use abn_core::harness::{MetricsWriter, TrainConfig};
use abn_core::model::{closed_form_param_counts, module_param_counts};
use abn_core::{Model, Variant};

/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// The CTC sweep passes below this absolute difference.
const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "abn", version, about = "BiLSTM-CTC with batch or attentive batch normalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic task; writes metrics.csv and model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Dev-split loss and token error rate of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy transcripts of the dev split stored with the checkpoint.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Finite-difference check of every operation and the full stack.
    Gradcheck {
        /// Check one variant only (default: all three).
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Compare the CTC loss with exhaustive path enumeration.
    CtcOracle {
        #[arg(long, default_value_t = 6)]
        max_t: usize,
    },
    /// Per-module parameter counts next to their closed forms.
    ParamCount {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    TrainConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

/// Returns whether the command's check passed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train {
            config,
            variant,
            seed,
            out_dir,
        } => {
            let mut cfg = load_config(&config)?.with_variant(variant);
            cfg.seed = seed;
            cfg.validate()?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
            let outcome = train(&cfg, deterministic_from_env(), &mut |row| {
                println!(
                    "epoch {:>3} {:<5} loss {:.5} ter {} lr {:.3e}",
                    row.epoch,
                    row.split,
                    row.loss,
                    row.token_error_rate.map_or("-".into(), |t| format!("{t:.4}")),
                    row.learning_rate
                );
                metrics.append(row)
            })?;
            let ckpt = out_dir.join("model.ckpt");
            checkpoint_save(&cfg, &outcome.model, &ckpt)?;
            println!(
                "finished after {} epoch(s){}; dev loss {:.5}, dev ter {:.4}; checkpoint {}",
                outcome.epochs_run,
                if outcome.stopped_early { " (schedule stop)" } else { "" },
                outcome.final_dev.loss,
                outcome.final_dev.token_error_rate(),
                ckpt.display()
            );
            Ok(true)
        }
        Command::Eval { ckpt, config } => {
            let cfg = load_config(&config)?;
            let variant = cfg.variant().context("config mixes variants")?;
            let mut model: Model<f64> = checkpoint_load(&ckpt, Some(variant))?.model;
            if model.config != cfg.model {
                bail!("checkpoint architecture differs from the one in {}", config.display());
            }
            let dev = batch_dataset(&split_data(&cfg, Split::Dev)?, cfg.max_frames_per_batch)?;
            let r = evaluate(&mut model, &dev)?;
            println!(
                "dev loss {:.6} ter {:.4} ({} edits / {} tokens)",
                r.loss,
                r.token_error_rate(),
                r.edit_distance,
                r.reference_tokens
            );
            Ok(true)
        }
        Command::Decode { ckpt } => {
            let loaded = checkpoint_load::<f64>(&ckpt, None)?;
            let cfg = loaded.config;
            let mut model = loaded.model;
            let dev = batch_dataset(&split_data(&cfg, Split::Dev)?, cfg.max_frames_per_batch)?;
            let (mut edits, mut tokens) = (0, 0);
            for lb in &dev {
                for (hyp, reference) in decode_batch(&mut model, lb)?.iter().zip(&lb.labels) {
                    let rate = token_error_rate(hyp.tokens(), reference.tokens());
                    println!("ref {reference} hyp {hyp} edits {}", rate.distance);
                    edits += edit_distance(hyp.tokens(), reference.tokens());
                    tokens += reference.len();
                }
            }
            println!("token error rate {:.4}", edits as f64 / tokens.max(1) as f64);
            Ok(true)
        }
        Command::Gradcheck { variant, seed } => {
            let mut worst: f64 = 0.0;
            for (name, err) in op_gradchecks(seed)? {
                println!("{name:<24} {err:.3e}");
                worst = worst.max(err);
            }
            let variants = variant.map_or(Variant::ALL.to_vec(), |v| vec![v]);
            for v in variants {
                for frames in STACK_FRAMES {
                    let err = stack_gradcheck(v, frames, seed)?;
                    println!("{:<24} {err:.3e}", format!("stack {v} T={frames}"));
                    worst = worst.max(err);
                }
            }
            let pass = worst < GRADCHECK_TOLERANCE;
            println!("max relative error {worst:.3e} ({})", if pass { "PASS" } else { "FAIL" });
            Ok(pass)
        }
        Command::CtcOracle { max_t } => {
            if max_t == 0 {
                bail!("--max-t must be at least 1");
            }
            let report = ctc_oracle_sweep(max_t, 3, &[2, 3], 3, 0)?;
            let pass = report.passed(ORACLE_TOLERANCE);
            println!(
                "{} cases ({} infeasible), max |difference| {:.3e}, feasibility mismatches {}",
                report.cases, report.infeasible, report.max_abs_diff, report.feasibility_mismatches
            );
            println!("{}", if pass { "PASS" } else { "FAIL" });
            Ok(pass)
        }
        Command::ParamCount { config } => {
            let cfg = load_config(&config)?;
            let model = Model::<f64>::new(cfg.model.clone(), cfg.seed)?;
            let counted = module_param_counts(&model.params);
            let closed = closed_form_param_counts(&cfg.model);
            let mut all_match = counted.len() == closed.len();
            println!("{:<12} {:>10} {:>12}", "module", "params", "closed-form");
            for ((name, n), (_, c)) in counted.iter().zip(&closed) {
                all_match &= n == c;
                println!("{name:<12} {n:>10} {c:>12}");
            }
            let total: usize = counted.iter().map(|(_, n)| n).sum();
            println!("{:<12} {total:>10}", "total");
            if !all_match {
                eprintln!("instantiated counts differ from the closed form");
            }
            Ok(all_match)
        }
    }
}
