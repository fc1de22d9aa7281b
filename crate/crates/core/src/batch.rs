//! Padded sequence batches.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which rows of a batch-major `[B·T × F]` matrix hold real frames.
///
/// Row `b·T + t` is frame `t` of utterance `b`; it is valid iff
/// `t < lengths[b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLayout {
    frames: usize,
    lengths: Vec<usize>,
}

impl BatchLayout {
    pub fn new(frames: usize, lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() || frames == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > frames) {
            return Err(Error::Contract(format!("utterance length {bad} outside 1..={frames}")));
        }
        Ok(Self { frames, lengths })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn rows(&self) -> usize {
        self.frames * self.lengths.len()
    }

    pub fn valid_frames(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn is_valid(&self, row: usize) -> bool {
        row % self.frames < self.lengths[row / self.frames]
    }

    pub fn row_mask(&self) -> Vec<bool> {
        (0..self.rows()).map(|r| self.is_valid(r)).collect()
    }

    /// `R × cols` matrix of ones on valid rows and zeros on padding.
    pub fn mask_matrix<T: Scalar>(&self, cols: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.rows() * cols);
        for r in 0..self.rows() {
            let v = if self.is_valid(r) { T::one() } else { T::zero() };
            data.extend(std::iter::repeat_n(v, cols));
        }
        Tensor::new(vec![self.rows(), cols], data).expect("mask shape")
    }

    /// `1 × R` row holding `1/N` on the N valid rows; multiplying it into a
    /// `R × F` matrix averages over valid frames.
    pub fn mean_weights<T: Scalar>(&self) -> Tensor<T> {
        let w = T::one() / T::from_usize(self.valid_frames()).expect("frame count");
        let data = (0..self.rows())
            .map(|r| if self.is_valid(r) { w } else { T::zero() })
            .collect();
        Tensor::new(vec![1, self.rows()], data).expect("weights shape")
    }

    /// Row index → utterance index.
    pub fn utterance_of_rows(&self) -> Vec<usize> {
        (0..self.rows()).map(|r| r / self.frames).collect()
    }

    /// Column validity for utterance `b` (length `T`).
    pub fn frame_valid(&self, b: usize) -> Vec<bool> {
        (0..self.frames).map(|t| t < self.lengths[b]).collect()
    }
}

/// Padded activations `[B × T × F]`, stored as a batch-major `[B·T × F]`
/// matrix, plus per-utterance valid lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<T> {
    data: Tensor<T>,
    layout: BatchLayout,
}

impl<T: Scalar> SequenceBatch<T> {
    pub fn new(data: Tensor<T>, layout: BatchLayout) -> Result<Self> {
        if data.shape().len() != 2 || data.rows() != layout.rows() {
            return Err(Error::Shape {
                op: "sequence_batch",
                left: data.shape().to_vec(),
                right: vec![layout.rows(), data.cols()],
            });
        }
        Ok(Self { data, layout })
    }

    /// Zero-pads `[len × F]` utterances to the longest one.
    pub fn from_utterances(utterances: &[&Tensor<T>]) -> Result<Self> {
        let first = utterances
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let feat = first.cols();
        let frames = utterances.iter().map(|u| u.rows()).max().unwrap_or(0);
        let mut data = Vec::with_capacity(utterances.len() * frames * feat);
        let mut lengths = Vec::with_capacity(utterances.len());
        for u in utterances {
            if u.cols() != feat {
                return Err(Error::Shape {
                    op: "from_utterances",
                    left: first.shape().to_vec(),
                    right: u.shape().to_vec(),
                });
            }
            data.extend_from_slice(u.data());
            data.extend(std::iter::repeat_n(T::zero(), (frames - u.rows()) * feat));
            lengths.push(u.rows());
        }
        let layout = BatchLayout::new(frames, lengths)?;
        Self::new(Tensor::new(vec![layout.rows(), feat], data)?, layout)
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn layout(&self) -> &BatchLayout {
        &self.layout
    }

    pub fn lengths(&self) -> &[usize] {
        self.layout.lengths()
    }

    pub fn batch_size(&self) -> usize {
        self.layout.batch_size()
    }

    pub fn frames(&self) -> usize {
        self.layout.frames()
    }

    pub fn feature_dim(&self) -> usize {
        self.data.cols()
    }

    /// Same layout, different per-frame values.
    pub fn with_data(&self, data: Tensor<T>) -> Result<Self> {
        Self::new(data, self.layout.clone())
    }

    /// The valid `[len × F]` frames of utterance `b`.
    pub fn utterance(&self, b: usize) -> Result<Tensor<T>> {
        self.data.slice_rows(b * self.frames(), self.lengths()[b])
    }

    /// Value at (utterance, frame, feature).
    pub fn at(&self, b: usize, t: usize, f: usize) -> T {
        self.data.at(b * self.frames() + t, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_layout() {
        let a = Tensor::<f64>::from_f64(&[2, 1], &[1.0, 2.0]).unwrap();
        let b = Tensor::from_f64(&[1, 1], &[3.0]).unwrap();
        let batch = SequenceBatch::from_utterances(&[&a, &b]).unwrap();
        assert_eq!(batch.frames(), 2);
        assert_eq!(batch.data().data(), &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(batch.layout().row_mask(), vec![true, true, true, false]);
        assert_eq!(batch.layout().mean_weights::<f64>().data(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(batch.utterance(1).unwrap(), b);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(BatchLayout::new(3, vec![4]).is_err());
        assert!(BatchLayout::new(3, vec![0]).is_err());
        assert!(BatchLayout::new(3, vec![]).is_err());
    }
}
