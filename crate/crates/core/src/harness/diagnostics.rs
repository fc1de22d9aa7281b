//! Self-checks exposed by the CLI and the acceptance suite: finite-difference
//! gradient checks and the exhaustive CTC sweep.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abn::{abn_layer, Generator, NormHyper, Variant};
use crate::batch::{BatchLayout, SequenceBatch};
use crate::dd::Dd;
use crate::ctc::{ctc_brute_force, ctc_loss, log_softmax_rows};
use crate::error::Result;
use crate::gradcheck::finite_diff_check;
use crate::model::{stack_forward, ModelConfig, ModelParams};
use crate::normalization::{Mode, NormAffine, RunningStats};
use crate::params::uniform;
use crate::scalar::Scalar;
use crate::recurrent::{bilstm_layer, lstm_step, LstmLayerParams, LstmState};
use crate::tape::{Eager, Exec, Tape};
use crate::tensor::Tensor;

/// A differentiable computation from a list of input tensors to one output.
pub trait Probe {
    fn run<T: Scalar, E: Exec<T>>(&self, exec: &mut E, inputs: &[E::Value]) -> Result<E::Value>;
}

/// Max relative error of `Σ w ⊙ probe(inputs)` for a fixed random `w`,
/// differentiating with respect to every input. The analytic side runs on
/// the `f64` tape, the numeric side in double-double at [`DD_STEP`].
pub fn check_probe<P: Probe>(probe: &P, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let out = probe.run::<f64, _>(&mut Eager, inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let weights: Tensor<f64> = uniform(out.shape(), 1.0, &mut rng);

    let mut tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let y = probe.run(&mut tape, &leaves)?;
    let w = tape.constant(weights.clone());
    let yw = tape.mul(&y, &w)?;
    let loss = tape.sum_all(&yw);
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = leaves
        .iter()
        .flat_map(|v| grads.wrt(&tape, *v).into_data())
        .collect();

    let theta: Tensor<Dd> = Tensor::vector(inputs.iter().flat_map(|t| t.data().to_vec()).collect()).cast();
    let weights: Tensor<Dd> = weights.cast();
    let f = |flat: &Tensor<Dd>| -> Dd {
        let parts = unflatten(flat, inputs);
        match probe.run(&mut Eager, &parts).and_then(|o| o.mul(&weights)) {
            Ok(o) => o.sum(),
            Err(_) => Dd::lit(f64::NAN),
        }
    };
    let analytic = Tensor::vector(analytic).cast();
    Ok(finite_diff_check(f, &theta, &analytic, Dd::lit(DD_STEP)).to_f64_lossy())
}

fn unflatten<T: Scalar>(flat: &Tensor<T>, like: &[Tensor<f64>]) -> Vec<Tensor<T>> {
    let mut offset = 0;
    like.iter()
        .map(|t| {
            let n = t.numel();
            let part = Tensor::new(t.shape().to_vec(), flat.data()[offset..offset + n].to_vec());
            offset += n;
            part.expect("shape taken from a valid tensor")
        })
        .collect()
}

macro_rules! probe {
    ($name:ident, |$exec:ident, $x:ident| $body:expr) => {
        struct $name;
        impl Probe for $name {
            fn run<T: Scalar, E: Exec<T>>(&self, $exec: &mut E, $x: &[E::Value]) -> Result<E::Value> {
                $body
            }
        }
    };
}

probe!(MatMul, |e, x| e.matmul(&x[0], &x[1]));
probe!(MatMulT, |e, x| e.matmul_t(&x[0], &x[1]));
probe!(Transpose, |e, x| Ok(e.transpose(&x[0])));
probe!(Add, |e, x| e.add(&x[0], &x[1]));
probe!(Sub, |e, x| e.sub(&x[0], &x[1]));
probe!(Mul, |e, x| e.mul(&x[0], &x[1]));
probe!(Scale, |e, x| Ok(e.scale(&x[0], T::lit(-1.7))));
probe!(AddScalar, |e, x| Ok(e.add_scalar(&x[0], T::lit(0.4))));
probe!(Sigmoid, |e, x| Ok(e.sigmoid(&x[0])));
probe!(Tanh, |e, x| Ok(e.tanh(&x[0])));
probe!(ExpOp, |e, x| Ok(e.exp(&x[0])));
probe!(PowF, |e, x| Ok(e.powf(&x[0], T::lit(-0.5))));
probe!(BroadcastRows, |e, x| e.broadcast_rows(&x[0], 3));
probe!(BroadcastCols, |e, x| e.broadcast_cols(&x[0], 4));
probe!(SumAll, |e, x| Ok(e.sum_all(&x[0])));
probe!(SumRows, |e, x| Ok(e.sum_rows(&x[0])));
probe!(SumCols, |e, x| Ok(e.sum_cols(&x[0])));
probe!(Softmax, |e, x| e.masked_softmax_rows(&x[0], &[true, false, true, true]));
probe!(SliceRows, |e, x| e.slice_rows(&x[0], 1, 2));
probe!(SliceCols, |e, x| e.slice_cols(&x[0], 1, 2));
probe!(ConcatRows, |e, x| e.concat_rows(&[x[0].clone(), x[1].clone()]));
probe!(ConcatCols, |e, x| e.concat_cols(&[x[0].clone(), x[1].clone()]));
probe!(GatherRows, |e, x| e.gather_rows(&x[0], &[2, 0, 2, 1, 2]));
probe!(Linear, |e, x| e.linear(&x[0], &x[1], Some(&x[2])));
probe!(Ctc, |e, x| e.ctc_mean_loss(&x[0], 5, &[5, 3], &[&[1, 2, 2], &[2]]));

fn take<V: Clone>(leaves: &[V], at: &mut usize) -> V {
    *at += 1;
    leaves[*at - 1].clone()
}

/// One LSTM step from inputs `[x, h, c, params...]`.
pub struct LstmStepProbe(pub LstmLayerParams<Tensor<f64>>);

impl Probe for LstmStepProbe {
    fn run<T: Scalar, E: Exec<T>>(&self, e: &mut E, x: &[E::Value]) -> Result<E::Value> {
        let mut at = 3;
        let params = self.0.map(&mut |_| take(x, &mut at));
        let prev = LstmState {
            h: x[1].clone(),
            c: x[2].clone(),
        };
        let next = lstm_step(e, &x[0], &prev, &params)?;
        e.concat_cols(&[next.h, next.c])
    }
}

/// Bidirectional layer from `[x, fwd params..., bwd params...]`.
pub struct BiLstmProbe {
    pub layout: BatchLayout,
    pub forward: LstmLayerParams<Tensor<f64>>,
    pub backward: LstmLayerParams<Tensor<f64>>,
}

impl Probe for BiLstmProbe {
    fn run<T: Scalar, E: Exec<T>>(&self, e: &mut E, x: &[E::Value]) -> Result<E::Value> {
        let mut at = 1;
        let fwd = self.forward.map(&mut |_| take(x, &mut at));
        let bwd = self.backward.map(&mut |_| take(x, &mut at));
        bilstm_layer(e, &x[0], &self.layout, &fwd, &bwd)
    }
}

/// Train-mode normalization layer from `[x, γ, β, generator params...]`.
/// Generator dropout uses a mask fixed by `dropout_seed`.
pub struct NormLayerProbe {
    pub layout: BatchLayout,
    pub generator: Generator<Tensor<f64>>,
    pub gen_dropout: f64,
    pub dropout_seed: u64,
}

impl Probe for NormLayerProbe {
    fn run<T: Scalar, E: Exec<T>>(&self, e: &mut E, x: &[E::Value]) -> Result<E::Value> {
        let affine = NormAffine {
            gamma: x[1].clone(),
            beta: x[2].clone(),
        };
        let mut at = 3;
        let generator = self.generator.map(&mut |_| take(x, &mut at));
        let p = e.value(&x[0]).cols();
        let mut running = RunningStats::new(p);
        let hyper = NormHyper {
            epsilon: T::lit(1e-5),
            momentum: T::lit(0.1),
            gen_dropout: T::lit(self.gen_dropout),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        abn_layer(e, &x[0], &self.layout, &affine, &generator, &mut running, hyper, Mode::Train, &mut rng)
    }
}

fn rand_t(shape: &[usize], rng: &mut dyn RngCore) -> Tensor<f64> {
    uniform(shape, 1.0, rng)
}

fn positive_t(shape: &[usize], rng: &mut dyn RngCore) -> Tensor<f64> {
    rand_t(shape, rng).map(|v| 1.0 + 0.5 * v)
}

/// Padded layout `[frames, frames − 2]` (clamped to at least 1).
pub fn two_utterance_layout(frames: usize) -> BatchLayout {
    BatchLayout::new(frames, vec![frames, frames.saturating_sub(2).max(1)]).expect("valid layout")
}

/// Gradient check of every primitive and composite operation.
/// Returns `(name, max relative error)` per check.
pub fn op_gradchecks(seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, err: Result<f64>| -> Result<()> {
        out.push((name.to_string(), err?));
        Ok(())
    };
    push("matmul", check_probe(&MatMul, &[rand_t(&[3, 4], r), rand_t(&[4, 2], r)], seed))?;
    push("matmul_t", check_probe(&MatMulT, &[rand_t(&[3, 4], r), rand_t(&[2, 4], r)], seed))?;
    push("transpose", check_probe(&Transpose, &[rand_t(&[3, 4], r)], seed))?;
    push("add", check_probe(&Add, &[rand_t(&[3, 4], r), rand_t(&[3, 4], r)], seed))?;
    push("sub", check_probe(&Sub, &[rand_t(&[3, 4], r), rand_t(&[3, 4], r)], seed))?;
    push("mul", check_probe(&Mul, &[rand_t(&[3, 4], r), rand_t(&[3, 4], r)], seed))?;
    push("scale", check_probe(&Scale, &[rand_t(&[3, 4], r)], seed))?;
    push("add_scalar", check_probe(&AddScalar, &[rand_t(&[3, 4], r)], seed))?;
    push("sigmoid", check_probe(&Sigmoid, &[rand_t(&[3, 4], r).scale(3.0)], seed))?;
    push("tanh", check_probe(&Tanh, &[rand_t(&[3, 4], r).scale(2.0)], seed))?;
    push("exp", check_probe(&ExpOp, &[rand_t(&[3, 4], r)], seed))?;
    push("powf", check_probe(&PowF, &[positive_t(&[3, 4], r)], seed))?;
    push("broadcast_rows", check_probe(&BroadcastRows, &[rand_t(&[1, 4], r)], seed))?;
    push("broadcast_cols", check_probe(&BroadcastCols, &[rand_t(&[3, 1], r)], seed))?;
    push("sum_all", check_probe(&SumAll, &[rand_t(&[3, 4], r)], seed))?;
    push("sum_rows", check_probe(&SumRows, &[rand_t(&[3, 4], r)], seed))?;
    push("sum_cols", check_probe(&SumCols, &[rand_t(&[3, 4], r)], seed))?;
    push("masked_softmax_rows", check_probe(&Softmax, &[rand_t(&[3, 4], r).scale(2.0)], seed))?;
    push("slice_rows", check_probe(&SliceRows, &[rand_t(&[4, 3], r)], seed))?;
    push("slice_cols", check_probe(&SliceCols, &[rand_t(&[3, 4], r)], seed))?;
    push("concat_rows", check_probe(&ConcatRows, &[rand_t(&[2, 3], r), rand_t(&[1, 3], r)], seed))?;
    push("concat_cols", check_probe(&ConcatCols, &[rand_t(&[3, 2], r), rand_t(&[3, 1], r)], seed))?;
    push("gather_rows", check_probe(&GatherRows, &[rand_t(&[3, 2], r)], seed))?;
    push("linear", check_probe(&Linear, &[rand_t(&[3, 4], r), rand_t(&[2, 4], r), rand_t(&[2], r)], seed))?;
    push("ctc_mean_loss", check_probe(&Ctc, &[rand_t(&[10, 3], r).scale(2.0)], seed))?;

    let (n, p, b) = (4, 6, 2);
    let cell = LstmLayerParams::<Tensor<f64>>::zeros(n, p).map(&mut |t| uniform(t.shape(), 0.8, r));
    let mut inputs = vec![rand_t(&[b, p], r), rand_t(&[b, n], r), rand_t(&[b, n], r)];
    cell.visit("", &mut |_, t| inputs.push(t.clone()));
    push("lstm_step", check_probe(&LstmStepProbe(cell), &inputs, seed))?;

    for frames in [1, 2, 5] {
        let layout = two_utterance_layout(frames);
        let forward = LstmLayerParams::<Tensor<f64>>::zeros(n, p).map(&mut |t| uniform(t.shape(), 0.8, r));
        let backward = LstmLayerParams::<Tensor<f64>>::zeros(n, p).map(&mut |t| uniform(t.shape(), 0.8, r));
        let mut inputs = vec![padded_input(&layout, p, r)];
        forward.visit("", &mut |_, t| inputs.push(t.clone()));
        backward.visit("", &mut |_, t| inputs.push(t.clone()));
        let probe = BiLstmProbe {
            layout,
            forward,
            backward,
        };
        push(&format!("bilstm_layer T={frames}"), check_probe(&probe, &inputs, seed))?;
    }

    for variant in Variant::ALL {
        for frames in [1, 2, 7] {
            let layout = two_utterance_layout(frames);
            let generator = Generator::<Tensor<f64>>::new(variant, p, 3, 3, r)?.map(&mut |t| uniform(t.shape(), 0.8, r));
            let mut inputs = vec![padded_input(&layout, p, r), positive_t(&[p], r), rand_t(&[p], r)];
            generator.visit("", &mut |_, t| inputs.push(t.clone()));
            let probe = NormLayerProbe {
                layout,
                generator,
                gen_dropout: 0.3,
                dropout_seed: seed,
            };
            push(&format!("{variant} layer T={frames}"), check_probe(&probe, &inputs, seed))?;
        }
    }
    Ok(out)
}

/// Random `R×p` input with zero padded rows.
fn padded_input(layout: &BatchLayout, p: usize, rng: &mut dyn RngCore) -> Tensor<f64> {
    let x = rand_t(&[layout.rows(), p], rng).scale(2.0);
    x.mul(&layout.mask_matrix(p)).expect("same shape")
}

/// The small model used by the full-stack gradient check: two layers,
/// `n = 4`, `p = 6`, `V = 3`, generator widths 3.
pub fn gradcheck_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden: 4,
        vocab: 3,
        variants: vec![variant; 2],
        d_e: 3,
        d_a: 3,
        ..ModelConfig::default()
    }
}

/// Max relative error of the CTC loss of the whole stack with respect to
/// every parameter, on two utterances padded to `frames`. Parameters are
/// randomized away from their initialization so that no path is trivially
/// zero; dropout masks are identical across evaluations.
pub fn stack_gradcheck(variant: Variant, frames: usize, seed: u64) -> Result<f64> {
    let case = StackCase::new(variant, frames, seed)?;
    let analytic = case.analytic()?;
    Ok(case.numeric_check(&analytic).to_f64_lossy())
}

/// Central-difference step of the double-double oracle. Roundoff is
/// negligible at this size, so only the `O(h²)` truncation term remains.
pub const DD_STEP: f64 = 1e-7;

/// Inputs of one full-stack gradient check.
pub struct StackCase {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<f64>>,
    pub batch: SequenceBatch<f64>,
    pub labels: Vec<Vec<usize>>,
    dropout_seed: u64,
}

impl StackCase {
    pub fn new(variant: Variant, frames: usize, seed: u64) -> Result<Self> {
        let config = gradcheck_config(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::<Tensor<f64>>::init(&config, &mut rng)?;
        let params = params.map(&mut |t| t.add(&uniform(t.shape(), 0.3, &mut rng)).expect("same shape"));
        let layout = two_utterance_layout(frames);
        let x = padded_input(&layout, config.input_dim, &mut rng);
        let labels = layout
            .lengths()
            .iter()
            .map(|&len| {
                let l: Vec<usize> = (0..len.div_ceil(2)).map(|_| rng.gen_range(1..config.vocab)).collect();
                if crate::ctc::min_frames(&l) <= len {
                    l
                } else {
                    vec![1]
                }
            })
            .collect();
        Ok(Self {
            config,
            params,
            batch: SequenceBatch::new(x, layout)?,
            labels,
            dropout_seed: seed.wrapping_add(1),
        })
    }

    fn running<T: Scalar>(&self) -> Vec<RunningStats<T>> {
        (0..self.config.num_layers())
            .map(|l| RunningStats::new(self.config.layer_input_dim(l)))
            .collect()
    }

    fn loss<T: Scalar, E: Exec<T>>(
        &self,
        exec: &mut E,
        params: &ModelParams<E::Value>,
        batch: &SequenceBatch<T>,
    ) -> Result<E::Value> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let logits = stack_forward(exec, &self.config, params, &mut self.running(), batch, Mode::Train, &mut rng)?;
        let labels: Vec<&[usize]> = self.labels.iter().map(Vec::as_slice).collect();
        exec.ctc_mean_loss(&logits, self.batch.frames(), self.batch.lengths(), &labels)
    }

    /// Loss with every parameter replaced by the flat vector `theta`.
    pub fn loss_at(&self, theta: &Tensor<f64>) -> f64 {
        let mut params = self.params.clone();
        params
            .assign_flat(theta)
            .and_then(|_| self.loss(&mut Eager, &params, &self.batch)?.item())
            .unwrap_or(f64::NAN)
    }

    /// [`finite_diff_check`] of `analytic` with the loss evaluated in
    /// double-double arithmetic at step [`DD_STEP`].
    pub fn numeric_check(&self, analytic: &Tensor<f64>) -> Dd {
        let mut params: ModelParams<Tensor<Dd>> = self.params.map(&mut |t| t.cast());
        let batch = SequenceBatch::new(self.batch.data().cast(), self.batch.layout().clone())
            .expect("layout unchanged");
        let loss_at = |theta: &Tensor<Dd>| {
            params
                .assign_flat(theta)
                .and_then(|_| self.loss(&mut Eager, &params, &batch)?.item())
                .unwrap_or_else(|_| Dd::lit(f64::NAN))
        };
        finite_diff_check(loss_at, &self.params.flatten().cast(), &analytic.cast(), Dd::lit(DD_STEP))
    }

    /// Flat reverse-mode gradient at the case's parameters.
    pub fn analytic(&self) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.map(&mut |t| tape.leaf(t));
        let loss = self.loss(&mut tape, &vars, &self.batch)?;
        let grads = tape.backward(loss)?;
        Ok(vars.map(&mut |v| grads.wrt(&tape, *v)).flatten())
    }
}

/// Frame counts exercised by the full-stack check.
pub const STACK_FRAMES: [usize; 4] = [1, 2, 5, 7];

/// Outcome of the exhaustive CTC comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub cases: usize,
    pub infeasible: usize,
    /// Largest `|forward-backward − enumeration|` over feasible cases.
    pub max_abs_diff: f64,
    /// Cases where exactly one side was infinite.
    pub feasibility_mismatches: usize,
}

impl SweepReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.feasibility_mismatches == 0 && self.max_abs_diff <= tolerance
    }
}

/// Every label sequence up to `max_len` tokens over each vocabulary size
/// (blank included) and every frame count `1..=max_t`, with `draws` random
/// logit matrices per case.
pub fn ctc_oracle_sweep(max_t: usize, max_len: usize, vocabs: &[usize], draws: usize, seed: u64) -> Result<SweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport::default();
    for &vocab in vocabs {
        for labels in all_label_sequences(vocab, max_len) {
            for frames in 1..=max_t {
                for _ in 0..draws {
                    let logits: Tensor<f64> = uniform(&[frames, vocab], 3.0, &mut rng);
                    let fb = ctc_loss(&logits, &labels)?.loss;
                    let bf = ctc_brute_force(&log_softmax_rows(&logits), &labels)?;
                    report.cases += 1;
                    match (fb.is_finite(), bf.is_finite()) {
                        (true, true) => report.max_abs_diff = report.max_abs_diff.max((fb - bf).abs()),
                        (false, false) => report.infeasible += 1,
                        _ => report.feasibility_mismatches += 1,
                    }
                }
            }
        }
    }
    Ok(report)
}

/// All sequences over tokens `1..vocab` of length `0..=max_len`.
pub fn all_label_sequences(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for tok in 1..vocab {
                let mut s: Vec<usize> = seq.clone();
                s.push(tok);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
