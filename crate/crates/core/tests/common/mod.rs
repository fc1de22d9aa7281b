//! Helpers shared by the property and acceptance suites.
#![allow(dead_code)]

use abn_core::batch::{BatchLayout, SequenceBatch};
use abn_core::{uniform, Tensor};
use rand::{Rng, RngCore};

/// Random batch with the given lengths; valid entries are
/// `offset + scale·U(−1, 1)` per feature, padded rows are zero.
pub fn random_batch(lengths: &[usize], p: usize, scale: f64, rng: &mut impl Rng) -> SequenceBatch<f64> {
    let frames = *lengths.iter().max().expect("at least one utterance");
    let layout = BatchLayout::new(frames, lengths.to_vec()).expect("valid lengths");
    let offsets: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let noise: Tensor<f64> = uniform(&[layout.rows(), p], scale, rng);
    let mut data = noise.into_data();
    for r in 0..layout.rows() {
        for f in 0..p {
            let v = &mut data[r * p + f];
            *v = if layout.is_valid(r) { *v + offsets[f] } else { 0.0 };
        }
    }
    SequenceBatch::new(Tensor::new(vec![layout.rows(), p], data).unwrap(), layout).unwrap()
}

/// The same batch with every padded entry replaced by large random values.
pub fn scramble_padding(batch: &SequenceBatch<f64>, rng: &mut dyn RngCore) -> SequenceBatch<f64> {
    let layout = batch.layout();
    let p = batch.feature_dim();
    let mut data = batch.data().clone();
    for r in 0..layout.rows() {
        if !layout.is_valid(r) {
            for v in &mut data.data_mut()[r * p..(r + 1) * p] {
                *v = rng.gen_range(-1e3..1e3);
            }
        }
    }
    batch.with_data(data).unwrap()
}

/// Largest difference between two `R×F` matrices over valid rows only.
pub fn valid_rows_max_diff(a: &Tensor<f64>, b: &Tensor<f64>, layout: &BatchLayout) -> f64 {
    (0..layout.rows())
        .filter(|&r| layout.is_valid(r))
        .flat_map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Row index mapping that permutes the valid frames of utterance `b`
/// by `perm` (a permutation of `0..lengths[b]`) and fixes every other row.
pub fn frame_permutation(layout: &BatchLayout, b: usize, perm: &[usize]) -> Vec<usize> {
    let base = b * layout.frames();
    let mut rows: Vec<usize> = (0..layout.rows()).collect();
    for (t, &src) in perm.iter().enumerate() {
        rows[base + t] = base + src;
    }
    rows
}

/// Random permutation of `0..n`.
pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Per-column mean and population variance over the valid rows.
pub fn valid_moments(x: &Tensor<f64>, layout: &BatchLayout) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<&[f64]> = (0..layout.rows()).filter(|&r| layout.is_valid(r)).map(|r| x.row(r)).collect();
    let n = rows.len() as f64;
    let cols = x.cols();
    let mean: Vec<f64> = (0..cols).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let var = (0..cols)
        .map(|c| rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}
