//! Single-threaded training loop with dev evaluation and the schedule.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{edit_distance, greedy_decode, LabelSequence};
use crate::error::{Error, Result};
use crate::harness::adam::{adam_step, AdamHyper, AdamState};
use crate::harness::batching::{batch_dataset, LabelledBatch};
use crate::harness::config::{ScheduleMetric, TrainConfig};
use crate::harness::metrics::MetricsRow;
use crate::harness::schedule::{lr_schedule, LrAction, Thresholds};
use crate::harness::synth::{synth_generate, Utterance};
use crate::model::Model;
use crate::normalization::Mode;

/// Environment variable that requests bitwise-reproducible output.
pub const DETERMINISTIC_ENV: &str = "ABN_DETERMINISTIC";

/// `true` iff `ABN_DETERMINISTIC=1`. Deterministic runs report zero wall
/// time so that metrics files compare byte for byte.
pub fn deterministic_from_env() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v.trim() == "1")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

/// Data seed of a split; train and dev draw from unrelated streams.
pub fn split_seed(seed: u64, split: Split) -> u64 {
    let salt = match split {
        Split::Train => 0x5452_4149_4e00_0000,
        Split::Dev => 0x4445_5600_0000_0000,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

pub fn split_data(cfg: &TrainConfig, split: Split) -> Result<Vec<Utterance<f64>>> {
    let n = match split {
        Split::Train => cfg.train_utterances,
        Split::Dev => cfg.dev_utterances,
    };
    synth_generate(&cfg.task, n, split_seed(cfg.seed, split))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalResult {
    /// Utterance-weighted mean CTC loss.
    pub loss: f64,
    pub edit_distance: usize,
    pub reference_tokens: usize,
}

impl EvalResult {
    pub fn token_error_rate(&self) -> f64 {
        self.edit_distance as f64 / self.reference_tokens.max(1) as f64
    }
}

/// Greedy hypotheses for every utterance of a batch.
pub fn decode_batch(model: &mut Model<f64>, batch: &LabelledBatch<f64>) -> Result<Vec<LabelSequence>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let logits = model.logits(&batch.batch, Mode::Infer, &mut unused)?;
    let t = batch.batch.frames();
    batch
        .batch
        .lengths()
        .iter()
        .enumerate()
        .map(|(b, &len)| Ok(greedy_decode(&logits.slice_rows(b * t, len)?)))
        .collect()
}

/// Inference-mode loss and token error rate.
pub fn evaluate(model: &mut Model<f64>, batches: &[LabelledBatch<f64>]) -> Result<EvalResult> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut out = EvalResult::default();
    let mut utterances = 0;
    for lb in batches {
        let b = lb.batch.batch_size();
        out.loss += model.loss(&lb.batch, &lb.label_slices(), Mode::Infer, &mut unused)? * b as f64;
        utterances += b;
        for (hyp, reference) in decode_batch(model, lb)?.iter().zip(&lb.labels) {
            out.edit_distance += edit_distance(hyp.tokens(), reference.tokens());
            out.reference_tokens += reference.len();
        }
    }
    out.loss /= utterances.max(1) as f64;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model<f64>,
    pub rows: Vec<MetricsRow>,
    pub final_dev: EvalResult,
    pub epochs_run: usize,
    /// The schedule ended training before the epoch cap.
    pub stopped_early: bool,
}

/// Train from scratch. `on_row` sees every metrics row as it is produced.
pub fn train(
    cfg: &TrainConfig,
    deterministic: bool,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let wall = || if deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
    let train_batches = batch_dataset(&split_data(cfg, Split::Train)?, cfg.max_frames_per_batch)?;
    let dev_batches = batch_dataset(&split_data(cfg, Split::Dev)?, cfg.max_frames_per_batch)?;
    let mut model = Model::<f64>::new(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let hyper = AdamHyper {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        epsilon: cfg.adam_epsilon,
    };
    let thresholds = Thresholds {
        halve: cfg.halve_threshold,
        stop: cfg.stop_threshold,
    };
    let mut adam = AdamState::default();
    let mut lr = cfg.initial_lr;
    let mut history = Vec::new();
    let mut rows = Vec::new();
    let mut order: Vec<usize> = (0..train_batches.len()).collect();
    let mut final_dev = EvalResult::default();
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for &i in &order {
            let lb = &train_batches[i];
            let (loss, grads) = model.loss_and_grad(&lb.batch, &lb.label_slices(), Mode::Train, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Domain {
                    op: "train",
                    msg: format!("non-finite training loss {loss} in epoch {epoch}"),
                });
            }
            total += loss * lb.batch.batch_size() as f64;
            count += lb.batch.batch_size();
            let mut params: Vec<_> = model.params.named_mut().into_iter().map(|(_, t)| t).collect();
            let grads: Vec<_> = grads.named().into_iter().map(|(_, t)| t).collect();
            adam_step(&mut params, &grads, &mut adam, lr, &hyper)?;
        }
        let train_row = MetricsRow {
            epoch,
            split: Split::Train.as_str().into(),
            loss: total / count as f64,
            token_error_rate: None,
            learning_rate: lr,
            wall_seconds: wall(),
        };
        on_row(&train_row)?;
        rows.push(train_row);

        final_dev = evaluate(&mut model, &dev_batches)?;
        let dev_row = MetricsRow {
            epoch,
            split: Split::Dev.as_str().into(),
            loss: final_dev.loss,
            token_error_rate: Some(final_dev.token_error_rate()),
            learning_rate: lr,
            wall_seconds: wall(),
        };
        on_row(&dev_row)?;
        rows.push(dev_row);
        epochs_run = epoch;

        history.push(match cfg.schedule_metric {
            ScheduleMetric::Loss => final_dev.loss,
            ScheduleMetric::Ter => final_dev.token_error_rate(),
        });
        if history.len() >= 2 {
            // A perfect previous score leaves nothing to improve.
            let action = if history[history.len() - 2] <= 0.0 {
                LrAction::Stop
            } else {
                lr_schedule(&history, thresholds)?
            };
            match action {
                LrAction::Keep => {}
                LrAction::Halve => lr *= 0.5,
                LrAction::Stop => {
                    stopped_early = epoch < cfg.epochs;
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        rows,
        final_dev,
        epochs_run,
        stopped_early,
    })
}
