//! Connectionist temporal classification: loss, an enumeration oracle,
//! greedy decoding and token error rate.
//!
//! The blank symbol is always index 0.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BLANK: usize = 0;

/// Largest instance [`ctc_brute_force`] agrees to enumerate.
pub const BRUTE_FORCE_MAX_T: usize = 8;
pub const BRUTE_FORCE_MAX_V: usize = 4;

/// Target token sequence. Never contains the blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(tokens: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t == BLANK || t >= vocab) {
            return Err(Error::Domain {
                op: "label_sequence",
                msg: format!("token {bad} is blank or outside vocabulary of {vocab}"),
            });
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Fewest frames that can emit `labels`: one per token plus a separating
/// blank between equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (r, c) = logits.dims2();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(vec![r, c], out).expect("same shape")
}

/// Loss for one utterance.
#[derive(Clone, Debug)]
pub struct CtcOutput<T> {
    /// `−log p(labels | logits)`; `+∞` when infeasible.
    pub loss: T,
    /// Gradient of `loss` with respect to the raw logits; zero when infeasible.
    pub grad: Tensor<T>,
    pub feasible: bool,
}

fn check_labels(labels: &[usize], vocab: usize) -> Result<()> {
    match labels.iter().find(|&&t| t == BLANK || t >= vocab) {
        Some(bad) => Err(Error::Domain {
            op: "ctc",
            msg: format!("label {bad} is blank or outside vocabulary of {vocab}"),
        }),
        None => Ok(()),
    }
}

/// CTC loss of raw `T×V` logits against `labels`, via the log-space
/// forward-backward recursion over the blank-interleaved label sequence.
pub fn ctc_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<CtcOutput<T>> {
    let (frames, vocab) = logits.dims2();
    check_labels(labels, vocab)?;
    let zero_grad = || Tensor::zeros(&[frames, vocab]);
    if min_frames(labels) > frames {
        return Ok(CtcOutput {
            loss: T::infinity(),
            grad: zero_grad(),
            feasible: false,
        });
    }

    let lp = log_softmax_rows(logits);
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(labels.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s_len = ext.len();
    let ninf = T::neg_infinity();
    // Skipping the blank at s−1 is allowed between distinct labels only.
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp.at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp.at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == ninf { ninf } else { acc + lp.at(t, ext[s]) };
        }
    }
    let last = (frames - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == ninf {
        return Ok(CtcOutput {
            loss: T::infinity(),
            grad: zero_grad(),
            feasible: false,
        });
    }

    // beta[t][s]: log-probability of finishing from state s at frame t,
    // excluding the emission at t itself.
    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = T::zero();
    if s_len > 1 {
        beta[last + s_len - 2] = T::zero();
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut acc = beta[next + s] + lp.at(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, beta[next + s + 1] + lp.at(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, beta[next + s + 2] + lp.at(t + 1, ext[s + 2]));
            }
            beta[t * s_len + s] = acc;
        }
    }

    let mut grad = lp.exp();
    for t in 0..frames {
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s];
            if occ == ninf {
                continue;
            }
            grad.data_mut()[t * vocab + ext[s]] -= (occ - log_p).exp();
        }
    }
    Ok(CtcOutput {
        loss: -log_p,
        grad,
        feasible: true,
    })
}

/// Mean CTC loss over the utterances of a batch-major `[B·frames × V]`
/// logit matrix, with the gradient of that mean when `want_grad`.
pub fn ctc_batch_mean<T: Scalar>(
    logits: &Tensor<T>,
    frames: usize,
    lengths: &[usize],
    labels: &[&[usize]],
    want_grad: bool,
) -> Result<(T, Option<Tensor<T>>)> {
    let (rows, vocab) = logits.dims2();
    let batch = lengths.len();
    if rows != batch * frames || labels.len() != batch || batch == 0 {
        return Err(shape_err("ctc_batch", logits.shape(), &[batch, frames, vocab]));
    }
    let inv_b = T::one() / T::from_usize(batch).expect("batch size");
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Tensor::zeros(&[rows, vocab]));
    for (b, (&len, lab)) in lengths.iter().zip(labels).enumerate() {
        if len == 0 || len > frames {
            return Err(Error::Contract(format!("utterance length {len} outside 1..={frames}")));
        }
        let utt = logits.slice_rows(b * frames, len)?;
        let out = ctc_loss(&utt, lab)?;
        total += out.loss;
        if let Some(g) = grad.as_mut() {
            let dst = &mut g.data_mut()[b * frames * vocab..(b * frames + len) * vocab];
            for (d, &s) in dst.iter_mut().zip(out.grad.data()) {
                *d = s * inv_b;
            }
        }
    }
    Ok((total * inv_b, grad))
}

/// Exhaustive oracle: sums the probability of every frame-level path that
/// collapses to `labels`. Takes per-frame log-probabilities and returns the
/// loss `−log p`. Refuses instances larger than `V ≤ 4, T ≤ 8`.
pub fn ctc_brute_force<T: Scalar>(logprobs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (frames, vocab) = logprobs.dims2();
    if frames > BRUTE_FORCE_MAX_T || vocab > BRUTE_FORCE_MAX_V {
        return Err(Error::TooLarge(format!(
            "{vocab}^{frames} paths (limit V ≤ {BRUTE_FORCE_MAX_V}, T ≤ {BRUTE_FORCE_MAX_T})"
        )));
    }
    check_labels(labels, vocab)?;
    let probs = logprobs.exp();
    let mut path = vec![0usize; frames];
    let mut total = T::zero();
    loop {
        if collapse(&path) == labels {
            let mut p = T::one();
            for (t, &k) in path.iter().enumerate() {
                p *= probs.at(t, k);
            }
            total += p;
        }
        // Odometer increment over vocab^frames.
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(-total.ln());
            }
            path[pos] += 1;
            if path[pos] < vocab {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Per-frame argmax (lowest index wins ties), collapsed.
pub fn greedy_decode<T: Scalar>(logits: &Tensor<T>) -> LabelSequence {
    let (frames, _) = logits.dims2();
    let best: Vec<usize> = (0..frames)
        .map(|t| {
            let row = logits.row(t);
            let mut arg = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = k;
                }
            }
            arg
        })
        .collect();
    LabelSequence(collapse(&best))
}

/// Edit distance and reference length of a hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ErrorRate {
    pub distance: usize,
    pub reference_len: usize,
}

impl ErrorRate {
    /// `distance / reference_len`, undefined for an empty reference.
    pub fn rate(&self) -> Option<f64> {
        (self.reference_len > 0).then(|| self.distance as f64 / self.reference_len as f64)
    }
}

/// Unit-cost Levenshtein distance between token sequences.
pub fn edit_distance(hyp: &[usize], reference: &[usize]) -> usize {
    strsim::generic_levenshtein(&hyp.to_vec(), &reference.to_vec())
}

pub fn token_error_rate(hyp: &[usize], reference: &[usize]) -> ErrorRate {
    ErrorRate {
        distance: edit_distance(hyp, reference),
        reference_len: reference.len(),
    }
}
