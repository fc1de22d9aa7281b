//! Synthetic sequence-labelling data.
//!
//! Each token owns a fixed feature template. An utterance is a random token
//! string; each token is rendered as its template repeated for a random
//! number of frames, plus Gaussian noise. Two equal neighbouring tokens are
//! separated by one silent (all-zero template) frame so that the frame
//! sequence still spells both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ctc::{LabelSequence, BLANK};
use crate::error::{Error, Result};
use crate::harness::config::SyntheticTask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One labelled utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance<T> {
    /// `frames × feature_dim`.
    pub features: Tensor<T>,
    pub labels: LabelSequence,
}

impl<T: Scalar> Utterance<T> {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

/// `vocab × feature_dim` templates; row [`BLANK`] is silence (zeros).
pub fn token_templates<T: Scalar>(task: &SyntheticTask) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(task.task_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let f = task.feature_dim;
    let mut data = vec![T::zero(); task.vocab * f];
    for v in data.iter_mut().skip(f) {
        *v = T::lit(normal.sample(&mut rng));
    }
    Tensor::new(vec![task.vocab, f], data).expect("non-empty template table")
}

/// Render a token string with fixed durations; `noise_rng` is only
/// consulted when the task's noise level is positive.
pub fn render<T: Scalar>(
    task: &SyntheticTask,
    templates: &Tensor<T>,
    tokens: &[usize],
    durations: &[usize],
    noise_rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    if tokens.len() != durations.len() || tokens.is_empty() {
        return Err(Error::Contract("one positive duration per token required".into()));
    }
    let mut rows: Vec<usize> = Vec::new();
    for (i, (&tok, &d)) in tokens.iter().zip(durations).enumerate() {
        if tok == BLANK || tok >= task.vocab || d == 0 {
            return Err(Error::Contract(format!("bad token {tok} or duration {d}")));
        }
        if i > 0 && tokens[i - 1] == tok {
            rows.push(BLANK);
        }
        rows.extend(std::iter::repeat_n(tok, d));
    }
    let mut x = templates.gather_rows(&rows)?;
    if task.noise > 0.0 {
        let normal = Normal::new(0.0, task.noise).map_err(|e| Error::Contract(e.to_string()))?;
        for v in x.data_mut() {
            *v += T::lit(normal.sample(noise_rng));
        }
    }
    Ok(x)
}

/// Utterance `index` of the stream selected by `seed`.
pub fn synth_utterance<T: Scalar>(
    task: &SyntheticTask,
    templates: &Tensor<T>,
    seed: u64,
    index: u64,
) -> Result<Utterance<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let len = rng.gen_range(task.tokens_min..=task.tokens_max);
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(1..task.vocab)).collect();
    let durations: Vec<usize> = (0..len)
        .map(|_| rng.gen_range(task.frames_per_token_min..=task.frames_per_token_max))
        .collect();
    let features = render(task, templates, &tokens, &durations, &mut rng)?;
    Ok(Utterance {
        features,
        labels: LabelSequence::new(tokens, task.vocab)?,
    })
}

/// `n` utterances, each determined by `(seed, index)` alone.
pub fn synth_generate<T: Scalar>(task: &SyntheticTask, n: usize, seed: u64) -> Result<Vec<Utterance<T>>> {
    task.validate()?;
    let templates = token_templates(task);
    (0..n as u64)
        .map(|i| synth_utterance(task, &templates, seed, i))
        .collect()
}
