//! Batch normalization over the valid frames of a padded sequence batch.
//!
//! Statistics are per feature, pooled over every valid frame of every
//! utterance; padded frames never contribute. Variance is the population
//! variance.

use crate::batch::{BatchLayout, SequenceBatch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Eager, Exec};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-average updates, dropout active.
    Train,
    /// Running statistics, no dropout.
    Infer,
}

/// Learned scale and shift, each of shape `[p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormAffine<V> {
    pub gamma: V,
    pub beta: V,
}

crate::params::param_fields!(NormAffine { gamma, beta });

impl<T: Scalar> NormAffine<Tensor<T>> {
    pub fn identity(p: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[p]),
            beta: Tensor::zeros(&[p]),
        }
    }
}

/// Exponential running averages used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(p: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[p]),
            var: Tensor::ones(&[p]),
        }
    }

    /// `run ← (1 − momentum)·run + momentum·batch`
    pub fn update(&mut self, batch_mean: &Tensor<T>, batch_var: &Tensor<T>, momentum: T) -> Result<()> {
        let keep = T::one() - momentum;
        let blend = |run: &Tensor<T>, stat: &Tensor<T>| -> Result<Tensor<T>> {
            let stat = stat.reshape(run.shape())?;
            run.zip_with(&stat, "running_update", |r, s| keep * r + momentum * s)
        };
        self.mean = blend(&self.mean, batch_mean)?;
        self.var = blend(&self.var, batch_var)?;
        Ok(())
    }
}

/// Everything standard batch normalization needs for one feature group.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub affine: NormAffine<Tensor<T>>,
    pub running: RunningStats<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(p: usize) -> Self {
        Self {
            affine: NormAffine::identity(p),
            running: RunningStats::new(p),
            epsilon: T::lit(DEFAULT_EPSILON),
            momentum: T::lit(DEFAULT_MOMENTUM),
        }
    }

    pub fn with_hyper(p: usize, epsilon: T, momentum: T) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= T::zero() {
            return Err(Error::Contract("epsilon must be positive".into()));
        }
        if !(momentum > T::zero() && momentum <= T::one()) {
            return Err(Error::Contract("momentum must lie in (0, 1]".into()));
        }
        Ok(Self {
            epsilon,
            momentum,
            ..Self::new(p)
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.running.mean.numel()
    }
}

/// Per-feature mean and population variance over the valid rows, each `1×p`.
pub fn masked_statistics<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    layout: &BatchLayout,
) -> Result<(E::Value, E::Value)> {
    let valid = layout.valid_frames();
    if valid < 2 {
        return Err(Error::DegenerateBatch { valid });
    }
    let rows = layout.rows();
    let weights = exec.constant(layout.mean_weights());
    let mean = exec.matmul(&weights, x)?;
    let mean_rows = exec.broadcast_rows(&mean, rows)?;
    let centered = exec.sub(x, &mean_rows)?;
    let sq = exec.mul(&centered, &centered)?;
    let var = exec.matmul(&weights, &sq)?;
    Ok((mean, var))
}

/// `(x − μ) / √(σ² + ε)` per feature. With a layout, padded rows are zeroed.
pub fn standardize<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    mean: &E::Value,
    var: &E::Value,
    epsilon: T,
    layout: Option<&BatchLayout>,
) -> Result<E::Value> {
    let (rows, cols) = exec.value(x).dims2();
    let mean_rows = exec.broadcast_rows(mean, rows)?;
    let centered = exec.sub(x, &mean_rows)?;
    let shifted = exec.add_scalar(var, epsilon);
    let inv_std = exec.powf(&shifted, T::lit(-0.5));
    let inv_rows = exec.broadcast_rows(&inv_std, rows)?;
    let xhat = exec.mul(&centered, &inv_rows)?;
    match layout {
        None => Ok(xhat),
        Some(l) => {
            let mask = exec.constant(l.mask_matrix(cols));
            exec.mul(&xhat, &mask)
        }
    }
}

/// Standardizes a layer input: batch statistics (updating `running`) in
/// train mode, running statistics in infer mode. Returns the pre-affine
/// activation with padded rows zeroed.
pub fn normalize_input<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    layout: &BatchLayout,
    running: &mut RunningStats<T>,
    epsilon: T,
    momentum: T,
    mode: Mode,
) -> Result<E::Value> {
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = masked_statistics(exec, x, layout)?;
            running.update(exec.value(&mean), exec.value(&var), momentum)?;
            (mean, var)
        }
        Mode::Infer => (
            exec.constant(running.mean.clone()),
            exec.constant(running.var.clone()),
        ),
    };
    standardize(exec, x, &mean, &var, epsilon, Some(layout))
}

/// `γ ⊙ x̂ + β` with row-shaped `γ`, `β` already expanded to `x̂`'s shape.
pub fn scale_shift<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    xhat: &E::Value,
    gamma: &E::Value,
    beta: &E::Value,
) -> Result<E::Value> {
    let scaled = exec.mul(xhat, gamma)?;
    exec.add(&scaled, beta)
}

/// Mini-batch mean and population variance over the valid frames, each `[p]`.
pub fn bn_statistics<T: Scalar>(batch: &SequenceBatch<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (mean, var) = masked_statistics(&mut Eager, batch.data(), batch.layout())?;
    let p = batch.feature_dim();
    Ok((mean.reshape(&[p])?, var.reshape(&[p])?))
}

/// `(x − μ) / √(σ² + ε)` for every row of `x`.
pub fn bn_normalize<T: Scalar>(x: &Tensor<T>, mean: &Tensor<T>, var: &Tensor<T>, epsilon: T) -> Result<Tensor<T>> {
    standardize(&mut Eager, x, mean, var, epsilon, None)
}

/// `γ ⊙ x̂ + β` for every row of `x̂`.
pub fn bn_affine<T: Scalar>(xhat: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let rows = xhat.rows();
    let g = gamma.broadcast_rows(rows)?;
    let b = beta.broadcast_rows(rows)?;
    scale_shift(&mut Eager, xhat, &g, &b)
}

/// Full batch normalization of a sequence batch.
pub fn bn_forward<T: Scalar>(
    batch: &SequenceBatch<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<SequenceBatch<T>> {
    if state.feature_dim() != batch.feature_dim() {
        return Err(Error::Shape {
            op: "bn_forward",
            left: vec![state.feature_dim()],
            right: vec![batch.feature_dim()],
        });
    }
    let exec = &mut Eager;
    let xhat = normalize_input(
        exec,
        batch.data(),
        batch.layout(),
        &mut state.running,
        state.epsilon,
        state.momentum,
        mode,
    )?;
    let y = bn_affine(&xhat, &state.affine.gamma, &state.affine.beta)?;
    batch.with_data(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_batch(utts: &[&[f64]]) -> SequenceBatch<f64> {
        let ts: Vec<Tensor<f64>> = utts
            .iter()
            .map(|u| Tensor::from_f64(&[u.len(), 1], u).unwrap())
            .collect();
        SequenceBatch::from_utterances(&ts.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn statistics_hand_cases() {
        let (mu, var) = bn_statistics(&column_batch(&[&[1.0, 3.0]])).unwrap();
        assert_eq!((mu.data()[0], var.data()[0]), (2.0, 1.0));
        let (mu, var) = bn_statistics(&column_batch(&[&[4.5, 4.5, 4.5]])).unwrap();
        assert_eq!((mu.data()[0], var.data()[0]), (4.5, 0.0));
    }

    #[test]
    fn statistics_ignore_padding() {
        // Utterance lengths 1 and 2; overwrite the padded frame with 100.
        let batch = column_batch(&[&[1.0, 5.0], &[3.0]]);
        let mut data = batch.data().clone();
        data.data_mut()[3] = 100.0;
        let batch = batch.with_data(data).unwrap();
        let (mu, var) = bn_statistics(&batch).unwrap();
        assert_eq!(mu.data()[0], 3.0);
        assert!((var.data()[0] - 8.0 / 3.0).abs() < 1e-15);

        let b = column_batch(&[&[1.0], &[3.0]]);
        let padded = SequenceBatch::new(
            Tensor::from_f64(&[4, 1], &[1.0, 100.0, 3.0, 0.0]).unwrap(),
            BatchLayout::new(2, vec![1, 1]).unwrap(),
        )
        .unwrap();
        assert_eq!(bn_statistics(&b).unwrap(), bn_statistics(&padded).unwrap());
        let (mu, var) = bn_statistics(&padded).unwrap();
        assert_eq!((mu.data()[0], var.data()[0]), (2.0, 1.0));
    }

    #[test]
    fn degenerate_batch() {
        let err = bn_statistics(&column_batch(&[&[1.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch { valid: 1 }));
    }

    #[test]
    fn normalize_hand_cases() {
        let x = Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap();
        let mu = Tensor::vector(vec![2.0]);
        let var = Tensor::vector(vec![1.0]);
        assert_eq!(bn_normalize(&x, &mu, &var, 0.0).unwrap().data(), &[-1.0, 1.0]);
        let centered = bn_normalize(&Tensor::from_f64(&[1, 1], &[2.0]).unwrap(), &mu, &Tensor::vector(vec![7.0]), 1e-5).unwrap();
        assert_eq!(centered.data(), &[0.0]);
        let y = bn_normalize(&Tensor::<f64>::from_f64(&[1, 1], &[1.0]).unwrap(), &Tensor::vector(vec![0.0]), &Tensor::vector(vec![0.0]), 1e-5).unwrap();
        assert!((y.data()[0] - 316.227_766_016_838).abs() < 1e-9);
    }

    #[test]
    fn affine_hand_cases() {
        let xhat = Tensor::from_f64(&[2, 2], &[-1.0, 0.5, 2.0, -3.0]).unwrap();
        assert_eq!(bn_affine(&xhat, &Tensor::ones(&[2]), &Tensor::zeros(&[2])).unwrap(), xhat);
        let y = bn_affine(&Tensor::from_f64(&[1, 1], &[-1.0]).unwrap(), &Tensor::vector(vec![2.0]), &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(y.data(), &[-1.0]);
        let beta = Tensor::vector(vec![0.25, -4.0]);
        let y = bn_affine(&xhat, &Tensor::zeros(&[2]), &beta).unwrap();
        assert_eq!(y, beta.broadcast_rows(2).unwrap());
        assert!(bn_affine(&xhat, &Tensor::ones(&[3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn fresh_state_defaults() {
        let s = BatchNormState::<f64>::new(3);
        assert_eq!(s.affine.gamma, Tensor::ones(&[3]));
        assert_eq!(s.affine.beta, Tensor::zeros(&[3]));
        assert_eq!(s.running.mean, Tensor::zeros(&[3]));
        assert_eq!(s.running.var, Tensor::ones(&[3]));
        assert!(BatchNormState::<f64>::with_hyper(3, 0.0, 0.1).is_err());
        assert!(BatchNormState::<f64>::with_hyper(3, 1e-5, 0.0).is_err());
    }

    #[test]
    fn infer_with_unit_running_stats() {
        let batch = column_batch(&[&[2.0, -1.0]]);
        let mut s = BatchNormState::new(1);
        let y = bn_forward(&batch, &mut s, Mode::Infer).unwrap();
        let k = 1.0 / (1.0 + 1e-5_f64).sqrt();
        for (got, want) in y.data().data().iter().zip([2.0 * k, -k]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn momentum_one_copies_batch_stats() {
        let batch = column_batch(&[&[1.0, 3.0]]);
        let mut s = BatchNormState::with_hyper(1, 1e-5, 1.0).unwrap();
        bn_forward(&batch, &mut s, Mode::Train).unwrap();
        assert_eq!(s.running.mean.data(), &[2.0]);
        assert_eq!(s.running.var.data(), &[1.0]);
    }

    #[test]
    fn train_mode_moves_running_stats_by_momentum() {
        let batch = column_batch(&[&[1.0, 3.0]]);
        let mut s = BatchNormState::new(1);
        bn_forward(&batch, &mut s, Mode::Train).unwrap();
        assert!((s.running.mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((s.running.var.data()[0] - 1.0).abs() < 1e-15);
    }
}
