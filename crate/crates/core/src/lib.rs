//! Attentive batch normalization for BiLSTM-CTC sequence models.
//!
//! The kernels are generic over the floating-point type ([`Scalar`]); the
//! `*64` aliases below fix it to `f64`, which is what the gradient checks
//! and the command-line tool use.
//!
//! Layers of the crate, bottom up:
//!
//! * [`tensor`]: dense row-major tensors and forward kernels.
//! * [`tape`]: the [`Exec`] abstraction with an eager (no tape) and a
//!   recording implementation, plus reverse-mode [`Tape::backward`].
//! * [`normalization`]: batch normalization over the valid frames of a
//!   padded batch.
//! * [`abn`]: attention-generated scale/shift at frame and utterance level.
//! * [`recurrent`] and [`model`]: LSTM with an output-gate peephole, the
//!   bidirectional layer and the deep stack.
//! * [`ctc`]: CTC loss, an enumeration oracle, greedy decoding, error rates.
//! * [`gradcheck`] and [`dd`]: central differences, evaluated in
//!   double-double arithmetic by the built-in checks.
//! * [`harness`]: configuration, synthetic data, batching, Adam, the
//!   learning-rate schedule, checkpoints, metrics and the training loop.

mod params;

pub mod abn;
pub mod batch;
pub mod ctc;
pub mod dd;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod normalization;
pub mod recurrent;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use abn::{FrameAbnGenerator, Generator, UttAbnGenerator, Variant};
pub use batch::{BatchLayout, SequenceBatch};
pub use ctc::LabelSequence;
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelParams};
pub use normalization::{BatchNormState, Mode};
pub use params::uniform;
pub use recurrent::{LstmLayerParams, LstmState};
pub use scalar::Scalar;
pub use tape::{Eager, Exec, Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type SequenceBatch64 = SequenceBatch<f64>;
pub type BatchNormState64 = BatchNormState<f64>;
pub type Model64 = Model<f64>;
pub type Tape64 = Tape<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Model32 = Model<f32>;
