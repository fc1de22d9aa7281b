//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid configuration. Unknown or repeated keys are errors.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `max_frames_per_batch` | 5000 | padded-frame budget per mini-batch |
//! | `initial_lr` | 0.0001 | Adam step size at epoch 1 |
//! | `halve_threshold` | 0.004 | relative improvement below which the rate halves |
//! | `stop_threshold` | 0.0005 | relative improvement below which training ends |
//! | `adam_beta1`, `adam_beta2`, `adam_epsilon` | 0.9, 0.999, 1e-8 | Adam constants |
//! | `epochs` | 30 | hard cap on training epochs |
//! | `seed` | 1 | model initialization, data sampling, dropout |
//! | `schedule_metric` | `loss` | `loss` or `ter` on the dev split |
//! | `train_utterances`, `dev_utterances` | 500, 100 | synthetic split sizes |
//! | `layers` | 2 | BiLSTM layers |
//! | `variant` | `bn` | `bn`, `abn-f` or `abn-u`, used in every layer |
//! | `hidden` | 64 | LSTM cells per direction |
//! | `feature_dim` | 16 | input features per frame |
//! | `vocab` | 12 | output symbols including the blank |
//! | `d_e`, `d_a` | 8, 8 | generator widths |
//! | `dropout`, `gen_dropout` | 0.3, 0.3 | dropout rates |
//! | `bn_epsilon`, `bn_momentum` | 1e-5, 0.1 | normalization constants |
//! | `tokens_min`, `tokens_max` | 2, 5 | tokens per synthetic utterance |
//! | `frames_per_token_min`, `frames_per_token_max` | 2, 3 | token duration range |
//! | `noise` | 0.3 | standard deviation of additive Gaussian noise |
//! | `task_seed` | 1234 | seed of the token feature templates |

use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

use crate::abn::Variant;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Quantity on the dev split that drives the learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMetric {
    Loss,
    Ter,
}

impl Display for ScheduleMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMetric::Loss => "loss",
            ScheduleMetric::Ter => "ter",
        })
    }
}

impl FromStr for ScheduleMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "loss" => Ok(ScheduleMetric::Loss),
            "ter" => Ok(ScheduleMetric::Ter),
            _ => Err(format!("unknown schedule metric `{s}` (expected loss or ter)")),
        }
    }
}

/// Synthetic sequence-labelling task.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    /// Output symbols including the blank; tokens are `1..vocab`.
    pub vocab: usize,
    pub feature_dim: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub frames_per_token_min: usize,
    pub frames_per_token_max: usize,
    pub noise: f64,
    /// Seed of the per-token feature templates, shared by every split.
    pub task_seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            vocab: 12,
            feature_dim: 16,
            tokens_min: 2,
            tokens_max: 5,
            frames_per_token_min: 2,
            frames_per_token_max: 3,
            noise: 0.3,
            task_seed: 1234,
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Contract(m.to_string()));
        if self.vocab < 2 {
            return fail("vocab must include the blank and at least one token");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive");
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return fail("need 1 <= tokens_min <= tokens_max");
        }
        if self.frames_per_token_min == 0 || self.frames_per_token_min > self.frames_per_token_max {
            return fail("need 1 <= frames_per_token_min <= frames_per_token_max");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_frames_per_batch: usize,
    pub initial_lr: f64,
    pub halve_threshold: f64,
    pub stop_threshold: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    pub schedule_metric: ScheduleMetric,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub model: ModelConfig,
    pub task: SyntheticTask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_frames_per_batch: 5000,
            initial_lr: 1e-4,
            halve_threshold: 0.004,
            stop_threshold: 0.0005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 30,
            seed: 1,
            schedule_metric: ScheduleMetric::Loss,
            train_utterances: 500,
            dev_utterances: 100,
            model: ModelConfig::default(),
            task: SyntheticTask::default(),
        }
    }
}

/// Keys in the order they are written by [`TrainConfig::to_text`].
pub const KEYS: &[&str] = &[
    "max_frames_per_batch",
    "initial_lr",
    "halve_threshold",
    "stop_threshold",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "epochs",
    "seed",
    "schedule_metric",
    "train_utterances",
    "dev_utterances",
    "layers",
    "variant",
    "hidden",
    "feature_dim",
    "vocab",
    "d_e",
    "d_a",
    "dropout",
    "gen_dropout",
    "bn_epsilon",
    "bn_momentum",
    "tokens_min",
    "tokens_max",
    "frames_per_token_min",
    "frames_per_token_max",
    "noise",
    "task_seed",
];

impl TrainConfig {
    /// The single variant used by every layer, if the layers agree.
    pub fn variant(&self) -> Option<Variant> {
        let first = *self.model.variants.first()?;
        self.model.variants.iter().all(|&v| v == first).then_some(first)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            model: self.model.with_variant(variant),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.max_frames_per_batch == 0 {
            return fail("max_frames_per_batch must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail("initial_lr must be positive".into());
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < self.halve_threshold) {
            return fail(format!(
                "thresholds must satisfy 0 < stop ({}) < halve ({})",
                self.stop_threshold, self.halve_threshold
            ));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return fail("adam_epsilon must be positive".into());
        }
        if self.epochs == 0 || self.train_utterances == 0 || self.dev_utterances == 0 {
            return fail("epochs and split sizes must be positive".into());
        }
        if self.model.input_dim != self.task.feature_dim || self.model.vocab != self.task.vocab {
            return fail("model and task disagree on feature_dim or vocab".into());
        }
        self.model.validate()?;
        self.task.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse configuration text; the result is validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut layers = cfg.model.num_layers();
        let mut variant = Variant::Bn;
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::Config { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = *KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key);
            let m = &mut cfg.model;
            let t = &mut cfg.task;
            match key {
                "max_frames_per_batch" => cfg.max_frames_per_batch = parse(value, line_no)?,
                "initial_lr" => cfg.initial_lr = parse(value, line_no)?,
                "halve_threshold" => cfg.halve_threshold = parse(value, line_no)?,
                "stop_threshold" => cfg.stop_threshold = parse(value, line_no)?,
                "adam_beta1" => cfg.adam_beta1 = parse(value, line_no)?,
                "adam_beta2" => cfg.adam_beta2 = parse(value, line_no)?,
                "adam_epsilon" => cfg.adam_epsilon = parse(value, line_no)?,
                "epochs" => cfg.epochs = parse(value, line_no)?,
                "seed" => cfg.seed = parse(value, line_no)?,
                "schedule_metric" => cfg.schedule_metric = parse(value, line_no)?,
                "train_utterances" => cfg.train_utterances = parse(value, line_no)?,
                "dev_utterances" => cfg.dev_utterances = parse(value, line_no)?,
                "layers" => layers = parse(value, line_no)?,
                "variant" => variant = parse(value, line_no)?,
                "hidden" => m.hidden = parse(value, line_no)?,
                "feature_dim" => t.feature_dim = parse(value, line_no)?,
                "vocab" => t.vocab = parse(value, line_no)?,
                "d_e" => m.d_e = parse(value, line_no)?,
                "d_a" => m.d_a = parse(value, line_no)?,
                "dropout" => m.dropout = parse(value, line_no)?,
                "gen_dropout" => m.gen_dropout = parse(value, line_no)?,
                "bn_epsilon" => m.epsilon = parse(value, line_no)?,
                "bn_momentum" => m.momentum = parse(value, line_no)?,
                "tokens_min" => t.tokens_min = parse(value, line_no)?,
                "tokens_max" => t.tokens_max = parse(value, line_no)?,
                "frames_per_token_min" => t.frames_per_token_min = parse(value, line_no)?,
                "frames_per_token_max" => t.frames_per_token_max = parse(value, line_no)?,
                "noise" => t.noise = parse(value, line_no)?,
                "task_seed" => t.task_seed = parse(value, line_no)?,
                _ => unreachable!("key list and match arms out of sync"),
            }
        }
        cfg.model.variants = vec![variant; layers];
        cfg.model.input_dim = cfg.task.feature_dim;
        cfg.model.vocab = cfg.task.vocab;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize to text that [`TrainConfig::parse`] reads back unchanged.
    ///
    /// Fails if the layers use different variants, which the flat format
    /// cannot express.
    pub fn to_text(&self) -> Result<String> {
        let variant = self
            .variant()
            .ok_or_else(|| Error::Contract("mixed per-layer variants cannot be written".into()))?;
        let m = &self.model;
        let t = &self.task;
        let values: Vec<String> = vec![
            self.max_frames_per_batch.to_string(),
            f(self.initial_lr),
            f(self.halve_threshold),
            f(self.stop_threshold),
            f(self.adam_beta1),
            f(self.adam_beta2),
            f(self.adam_epsilon),
            self.epochs.to_string(),
            self.seed.to_string(),
            self.schedule_metric.to_string(),
            self.train_utterances.to_string(),
            self.dev_utterances.to_string(),
            m.num_layers().to_string(),
            variant.to_string(),
            m.hidden.to_string(),
            t.feature_dim.to_string(),
            t.vocab.to_string(),
            m.d_e.to_string(),
            m.d_a.to_string(),
            f(m.dropout),
            f(m.gen_dropout),
            f(m.epsilon),
            f(m.momentum),
            t.tokens_min.to_string(),
            t.tokens_max.to_string(),
            t.frames_per_token_min.to_string(),
            t.frames_per_token_max.to_string(),
            f(t.noise),
            t.task_seed.to_string(),
        ];
        Ok(KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect())
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn f(x: f64) -> String {
    format!("{x:?}")
}

fn parse<V: FromStr>(value: &str, line: usize) -> Result<V>
where
    V::Err: Display,
{
    value.parse().map_err(|e: V::Err| Error::Config {
        line,
        msg: format!("invalid value `{value}`: {e}"),
    })
}
