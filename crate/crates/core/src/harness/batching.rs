//! Length-sorted mini-batches under a padded-frame budget.

use std::ops::Range;

use crate::batch::SequenceBatch;
use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::harness::synth::Utterance;
use crate::scalar::Scalar;

/// Split lengths (sorted descending) into consecutive batches.
///
/// A batch starting at an utterance of length `L_max` holds
/// `floor(max_frames / L_max)` utterances (fewer at the end of the list),
/// so it never exceeds `max_frames` padded frames.
pub fn make_batches(lengths: &[usize], max_frames: usize) -> Result<Vec<Range<usize>>> {
    if let Some(i) = lengths.windows(2).position(|w| w[0] < w[1]) {
        return Err(Error::Batching(format!(
            "lengths not sorted in descending order at position {}: {} < {}",
            i + 1,
            lengths[i],
            lengths[i + 1]
        )));
    }
    if let Some(&l) = lengths.first() {
        if l > max_frames {
            return Err(Error::Batching(format!(
                "utterance of {l} frames exceeds the {max_frames}-frame batch budget"
            )));
        }
    }
    if lengths.last() == Some(&0) {
        return Err(Error::Batching("empty utterance".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < lengths.len() {
        let size = max_frames / lengths[start];
        let end = (start + size).min(lengths.len());
        out.push(start..end);
        start = end;
    }
    Ok(out)
}

/// Indices of `lengths` sorted by decreasing length; ties keep input order.
pub fn sort_descending(lengths: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
    order
}

/// A padded batch with its label sequences.
#[derive(Clone, Debug)]
pub struct LabelledBatch<T> {
    pub batch: SequenceBatch<T>,
    pub labels: Vec<LabelSequence>,
}

impl<T> LabelledBatch<T> {
    pub fn label_slices(&self) -> Vec<&[usize]> {
        self.labels.iter().map(|l| l.tokens()).collect()
    }
}

pub fn collate<T: Scalar>(utterances: &[&Utterance<T>]) -> Result<LabelledBatch<T>> {
    let feats: Vec<_> = utterances.iter().map(|u| &u.features).collect();
    Ok(LabelledBatch {
        batch: SequenceBatch::from_utterances(&feats)?,
        labels: utterances.iter().map(|u| u.labels.clone()).collect(),
    })
}

/// Sort a dataset by length and collate it into budgeted batches.
pub fn batch_dataset<T: Scalar>(data: &[Utterance<T>], max_frames: usize) -> Result<Vec<LabelledBatch<T>>> {
    let lengths: Vec<usize> = data.iter().map(Utterance::frames).collect();
    let order = sort_descending(&lengths);
    let sorted: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();
    make_batches(&sorted, max_frames)?
        .into_iter()
        .map(|r| collate(&order[r].iter().map(|&i| &data[i]).collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_examples() {
        assert_eq!(make_batches(&[2500, 2400, 100], 5000).unwrap()[0], 0..2);
        assert_eq!(make_batches(&[5000], 5000).unwrap(), vec![0..1]);
        assert_eq!(make_batches(&[1000; 7], 5000).unwrap(), vec![0..5, 5..7]);
    }

    #[test]
    fn floor_not_round() {
        // 5000 / 1900 = 2.63: floor keeps the batch at 3800 frames.
        assert_eq!(make_batches(&[1900; 4], 5000).unwrap()[0], 0..2);
    }

    #[test]
    fn rejects_unsorted_and_oversized() {
        assert!(matches!(make_batches(&[10, 20], 100), Err(Error::Batching(_))));
        assert!(matches!(make_batches(&[5001], 5000), Err(Error::Batching(_))));
        assert!(make_batches(&[], 10).unwrap().is_empty());
    }

    #[test]
    fn stable_descending_sort() {
        assert_eq!(sort_descending(&[3, 5, 3, 7]), vec![3, 1, 0, 2]);
    }
}
