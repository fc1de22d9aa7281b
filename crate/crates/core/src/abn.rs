//! Attentive batch normalization.
//!
//! Instead of learning free scale/shift vectors, an auxiliary network reads
//! the standardized activations `h̃` of the layer being normalized and
//! produces them:
//!
//! * frame-level ([`FrameAbnGenerator`]): frames are embedded with
//!   `e_t = tanh(W_e h̃_t + b_e)`, scored by the mean of `e_t`, softmax-pooled
//!   into one summary `u` per utterance, and `γ = W_γ u + b_γ`,
//!   `β = W_β u + b_β` is shared by every frame of that utterance.
//! * utterance-level ([`UttAbnGenerator`]): scaled dot-product self-attention
//!   over `h̃` gives a context `c_t` per frame and a per-frame
//!   `γ_t = W_γ c_t + b_γ`, `β_t = W_β c_t + b_β`.
//!
//! The generated parameters replace the learned ones. With `W_γ = W_β = 0`,
//! `b_γ = 1`, `b_β = 0` both variants reduce exactly to standard batch
//! normalization, which is how generators are initialized.
//!
//! Attention never looks at padded frames: their scores are excluded before
//! the softmax.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::batch::{BatchLayout, SequenceBatch};
use crate::dropout::dropout_exec;
use crate::error::{Error, Result};
use crate::normalization::{normalize_input, scale_shift, BatchNormState, Mode, NormAffine, RunningStats};
use crate::params::{param_fields, uniform};
use crate::scalar::Scalar;
use crate::tape::{Eager, Exec};
use crate::tensor::Tensor;

/// How a layer obtains its scale and shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Learned `γ`, `β`.
    Bn,
    /// One generated pair per utterance.
    AbnFrame,
    /// One generated pair per frame.
    AbnUtterance,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Bn, Variant::AbnFrame, Variant::AbnUtterance];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bn => "bn",
            Variant::AbnFrame => "abn-f",
            Variant::AbnUtterance => "abn-u",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bn" => Ok(Variant::Bn),
            "abn-f" => Ok(Variant::AbnFrame),
            "abn-u" => Ok(Variant::AbnUtterance),
            other => Err(Error::Contract(format!(
                "unknown variant `{other}` (expected bn, abn-f or abn-u)"
            ))),
        }
    }
}

/// Frame-level generator: `W_e: d_e×p`, `W_γ, W_β: p×d_e`, biases `[d_e]`/`[p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameAbnGenerator<V> {
    pub w_e: V,
    pub b_e: V,
    pub w_gamma: V,
    pub b_gamma: V,
    pub w_beta: V,
    pub b_beta: V,
}

param_fields!(FrameAbnGenerator { w_e, b_e, w_gamma, b_gamma, w_beta, b_beta });

/// Utterance-level generator: `W_k, W_q, W_v: d_a×p`, `W_γ, W_β: p×d_a`.
/// The projections carry no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct UttAbnGenerator<V> {
    pub w_k: V,
    pub w_q: V,
    pub w_v: V,
    pub w_gamma: V,
    pub b_gamma: V,
    pub w_beta: V,
    pub b_beta: V,
}

param_fields!(UttAbnGenerator { w_k, w_q, w_v, w_gamma, b_gamma, w_beta, b_beta });

fn check_bottleneck(width: usize, p: usize) -> Result<()> {
    if width == 0 || width >= p {
        return Err(Error::Contract(format!(
            "generator width {width} must satisfy 0 < width < p = {p}"
        )));
    }
    Ok(())
}

impl<T: Scalar> FrameAbnGenerator<Tensor<T>> {
    /// Random embedding, reduction output head (`W_γ = W_β = 0`, `b_γ = 1`).
    pub fn new(p: usize, d_e: usize, rng: &mut dyn RngCore) -> Result<Self> {
        check_bottleneck(d_e, p)?;
        Ok(Self {
            w_e: uniform(&[d_e, p], 1.0 / (p as f64).sqrt(), rng),
            b_e: Tensor::zeros(&[d_e]),
            w_gamma: Tensor::zeros(&[p, d_e]),
            b_gamma: Tensor::ones(&[p]),
            w_beta: Tensor::zeros(&[p, d_e]),
            b_beta: Tensor::zeros(&[p]),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.w_e.cols()
    }

    pub fn width(&self) -> usize {
        self.w_e.rows()
    }
}

impl<T: Scalar> UttAbnGenerator<Tensor<T>> {
    pub fn new(p: usize, d_a: usize, rng: &mut dyn RngCore) -> Result<Self> {
        check_bottleneck(d_a, p)?;
        let bound = 1.0 / (p as f64).sqrt();
        Ok(Self {
            w_k: uniform(&[d_a, p], bound, rng),
            w_q: uniform(&[d_a, p], bound, rng),
            w_v: uniform(&[d_a, p], bound, rng),
            w_gamma: Tensor::zeros(&[p, d_a]),
            b_gamma: Tensor::ones(&[p]),
            w_beta: Tensor::zeros(&[p, d_a]),
            b_beta: Tensor::zeros(&[p]),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.w_k.cols()
    }

    pub fn width(&self) -> usize {
        self.w_k.rows()
    }
}

/// The scale/shift source of one normalized layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator<V> {
    None,
    Frame(FrameAbnGenerator<V>),
    Utterance(UttAbnGenerator<V>),
}

impl<V> Generator<V> {
    pub fn variant(&self) -> Variant {
        match self {
            Generator::None => Variant::Bn,
            Generator::Frame(_) => Variant::AbnFrame,
            Generator::Utterance(_) => Variant::AbnUtterance,
        }
    }

    pub fn map<W>(&self, f: &mut impl FnMut(&V) -> W) -> Generator<W> {
        match self {
            Generator::None => Generator::None,
            Generator::Frame(g) => Generator::Frame(g.map(f)),
            Generator::Utterance(g) => Generator::Utterance(g.map(f)),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a V)) {
        match self {
            Generator::None => {}
            Generator::Frame(g) => g.visit(&format!("{prefix}frame."), f),
            Generator::Utterance(g) => g.visit(&format!("{prefix}utt."), f),
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut V)) {
        match self {
            Generator::None => {}
            Generator::Frame(g) => g.visit_mut(&format!("{prefix}frame."), f),
            Generator::Utterance(g) => g.visit_mut(&format!("{prefix}utt."), f),
        }
    }
}

impl<T: Scalar> Generator<Tensor<T>> {
    pub fn new(variant: Variant, p: usize, d_e: usize, d_a: usize, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(match variant {
            Variant::Bn => Generator::None,
            Variant::AbnFrame => Generator::Frame(FrameAbnGenerator::new(p, d_e, rng)?),
            Variant::AbnUtterance => Generator::Utterance(UttAbnGenerator::new(p, d_a, rng)?),
        })
    }
}

// ---- frame-level ---------------------------------------------------------

/// `e_t = tanh(W_e h̃_t + b_e)` for every row of `h_norm: T×p`; returns `T×d_e`.
pub fn frame_embed<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    h_norm: &E::Value,
    gen: &FrameAbnGenerator<E::Value>,
) -> Result<E::Value> {
    let z = exec.linear(h_norm, &gen.w_e, Some(&gen.b_e))?;
    Ok(exec.tanh(&z))
}

/// Attention weights `1×T`: softmax over valid frames of the mean of `e_t`.
pub fn frame_attention<T: Scalar, E: Exec<T>>(exec: &mut E, e: &E::Value, valid: &[bool]) -> Result<E::Value> {
    let width = exec.value(e).cols();
    let sums = exec.sum_cols(e);
    let means = exec.scale(&sums, T::one() / T::from_usize(width).expect("width"));
    let scores = exec.transpose(&means);
    exec.masked_softmax_rows(&scores, valid)
}

/// `u = Σ_t α_t e_t` as a `1×d_e` row.
pub fn frame_pool<T: Scalar, E: Exec<T>>(exec: &mut E, e: &E::Value, alpha: &E::Value) -> Result<E::Value> {
    exec.matmul(alpha, e)
}

/// `(W_γ u + b_γ, W_β u + b_β)`, each `1×p`.
pub fn frame_params<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    u: &E::Value,
    gen: &FrameAbnGenerator<E::Value>,
) -> Result<(E::Value, E::Value)> {
    let gamma = exec.linear(u, &gen.w_gamma, Some(&gen.b_gamma))?;
    let beta = exec.linear(u, &gen.w_beta, Some(&gen.b_beta))?;
    Ok((gamma, beta))
}

// ---- utterance-level ------------------------------------------------------

/// `(K, Q, V)` projections of `h_norm: T×p`, each `T×d_a`.
pub fn utt_project<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    h_norm: &E::Value,
    gen: &UttAbnGenerator<E::Value>,
) -> Result<(E::Value, E::Value, E::Value)> {
    let k = exec.matmul_t(h_norm, &gen.w_k)?;
    let q = exec.matmul_t(h_norm, &gen.w_q)?;
    let v = exec.matmul_t(h_norm, &gen.w_v)?;
    Ok((k, q, v))
}

/// `α[t, τ] = softmax_τ(K_τ·Q_t / √d_a)` over valid `τ`; returns `T×T`.
pub fn utt_attention<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    k: &E::Value,
    q: &E::Value,
    valid: &[bool],
) -> Result<E::Value> {
    let width = exec.value(k).cols();
    let scores = exec.matmul_t(q, k)?;
    let scaled = exec.scale(&scores, T::one() / T::from_usize(width).expect("width").sqrt());
    exec.masked_softmax_rows(&scaled, valid)
}

/// `c_t = Σ_τ α[t, τ] V_τ`; returns `T×d_a`.
pub fn utt_context<T: Scalar, E: Exec<T>>(exec: &mut E, alpha: &E::Value, v: &E::Value) -> Result<E::Value> {
    exec.matmul(alpha, v)
}

/// Per-frame `(γ_t, β_t)`, each `T×p`.
pub fn utt_params<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    c: &E::Value,
    gen: &UttAbnGenerator<E::Value>,
) -> Result<(E::Value, E::Value)> {
    let gamma = exec.linear(c, &gen.w_gamma, Some(&gen.b_gamma))?;
    let beta = exec.linear(c, &gen.w_beta, Some(&gen.b_beta))?;
    Ok((gamma, beta))
}

// ---- layer ------------------------------------------------------------------

/// Scale and shift for every row of the standardized `xhat: R×p`, each `R×p`.
///
/// `gen_dropout` is applied to `e_t` (frame-level) or `c_t`
/// (utterance-level) in train mode.
#[allow(clippy::too_many_arguments)]
pub fn generate_scale_shift<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    xhat: &E::Value,
    layout: &BatchLayout,
    affine: &NormAffine<E::Value>,
    generator: &Generator<E::Value>,
    gen_dropout: T,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(E::Value, E::Value)> {
    let rows = layout.rows();
    let frames = layout.frames();
    match generator {
        Generator::None => {
            let gamma = exec.broadcast_rows(&affine.gamma, rows)?;
            let beta = exec.broadcast_rows(&affine.beta, rows)?;
            Ok((gamma, beta))
        }
        Generator::Frame(gen) => {
            let mut gammas = Vec::with_capacity(layout.batch_size());
            let mut betas = Vec::with_capacity(layout.batch_size());
            for b in 0..layout.batch_size() {
                let h = exec.slice_rows(xhat, b * frames, frames)?;
                let e = frame_embed(exec, &h, gen)?;
                let e = dropout_exec(exec, &e, gen_dropout, rng, mode)?;
                let alpha = frame_attention(exec, &e, &layout.frame_valid(b))?;
                let u = frame_pool(exec, &e, &alpha)?;
                let (g, bt) = frame_params(exec, &u, gen)?;
                gammas.push(g);
                betas.push(bt);
            }
            let per_utt_gamma = exec.concat_rows(&gammas)?;
            let per_utt_beta = exec.concat_rows(&betas)?;
            let owner = layout.utterance_of_rows();
            Ok((
                exec.gather_rows(&per_utt_gamma, &owner)?,
                exec.gather_rows(&per_utt_beta, &owner)?,
            ))
        }
        Generator::Utterance(gen) => {
            let mut gammas = Vec::with_capacity(layout.batch_size());
            let mut betas = Vec::with_capacity(layout.batch_size());
            for b in 0..layout.batch_size() {
                let h = exec.slice_rows(xhat, b * frames, frames)?;
                let (k, q, v) = utt_project(exec, &h, gen)?;
                let alpha = utt_attention(exec, &k, &q, &layout.frame_valid(b))?;
                let c = utt_context(exec, &alpha, &v)?;
                let c = dropout_exec(exec, &c, gen_dropout, rng, mode)?;
                let (g, bt) = utt_params(exec, &c, gen)?;
                gammas.push(g);
                betas.push(bt);
            }
            Ok((exec.concat_rows(&gammas)?, exec.concat_rows(&betas)?))
        }
    }
}

/// Hyper-parameters of one normalized layer.
#[derive(Clone, Copy, Debug)]
pub struct NormHyper<T> {
    pub epsilon: T,
    pub momentum: T,
    pub gen_dropout: T,
}

/// Standardize → generate `(γ, β)` from the standardized activation →
/// scale/shift. Returns `R×p` with padded rows equal to `β`.
#[allow(clippy::too_many_arguments)]
pub fn abn_layer<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    layout: &BatchLayout,
    affine: &NormAffine<E::Value>,
    generator: &Generator<E::Value>,
    running: &mut RunningStats<T>,
    hyper: NormHyper<T>,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<E::Value> {
    let xhat = normalize_input(exec, x, layout, running, hyper.epsilon, hyper.momentum, mode)?;
    let (gamma, beta) = generate_scale_shift(exec, &xhat, layout, affine, generator, hyper.gen_dropout, mode, rng)?;
    scale_shift(exec, &xhat, &gamma, &beta)
}

/// Attentive batch normalization of a sequence batch with plain tensors.
///
/// `variant` must match the supplied generator. For [`Variant::Bn`] this is
/// exactly [`crate::normalization::bn_forward`].
pub fn abn_forward<T: Scalar>(
    batch: &SequenceBatch<T>,
    state: &mut BatchNormState<T>,
    generator: &Generator<Tensor<T>>,
    variant: Variant,
    mode: Mode,
    gen_dropout: T,
    rng: &mut dyn RngCore,
) -> Result<SequenceBatch<T>> {
    if generator.variant() != variant {
        return Err(Error::Contract(format!(
            "variant {variant} requested with a {} generator",
            generator.variant()
        )));
    }
    if state.feature_dim() != batch.feature_dim() {
        return Err(Error::Shape {
            op: "abn_forward",
            left: vec![state.feature_dim()],
            right: vec![batch.feature_dim()],
        });
    }
    let hyper = NormHyper {
        epsilon: state.epsilon,
        momentum: state.momentum,
        gen_dropout,
    };
    let y = abn_layer(
        &mut Eager,
        batch.data(),
        batch.layout(),
        &state.affine,
        generator,
        &mut state.running,
        hyper,
        mode,
        rng,
    )?;
    batch.with_data(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn frame_gen(p: usize, d_e: usize) -> FrameAbnGenerator<Tensor<f64>> {
        FrameAbnGenerator::new(p, d_e, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("abn".parse::<Variant>().is_err());
    }

    #[test]
    fn bottleneck_must_be_narrower_than_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FrameAbnGenerator::<Tensor<f64>>::new(4, 4, &mut rng).is_err());
        assert!(UttAbnGenerator::<Tensor<f64>>::new(4, 5, &mut rng).is_err());
        assert!(UttAbnGenerator::<Tensor<f64>>::new(4, 3, &mut rng).is_ok());
    }

    #[test]
    fn frame_embed_cases() {
        let ex = &mut Eager;
        let h = t(&[2, 2], &[0.3, -0.7, 1.0, 2.0]);
        let mut g = frame_gen(2, 1);
        g.w_e = Tensor::zeros(&[1, 2]);
        assert_eq!(frame_embed(ex, &h, &g).unwrap(), Tensor::zeros(&[2, 1]));
        g.b_e = t(&[1], &[0.5_f64.atanh()]);
        let e = frame_embed(ex, &h, &g).unwrap();
        assert!(e.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        g.w_e = t(&[1, 2], &[1.0, 1.0]);
        g.b_e = Tensor::zeros(&[1]);
        let e = frame_embed(ex, &t(&[1, 2], &[1.0, -1.0]), &g).unwrap();
        assert_eq!(e.data(), &[0.0]);
    }

    #[test]
    fn frame_attention_cases() {
        let ex = &mut Eager;
        let same = t(&[3, 2], &[0.2, 0.4, 0.2, 0.4, 0.2, 0.4]);
        let a = frame_attention(ex, &same, &[true; 3]).unwrap();
        assert!(a.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        // Means ln 3 and 0 with d_e = 2.
        let l3 = 3.0_f64.ln();
        let e = t(&[2, 2], &[l3 + 0.1, l3 - 0.1, 0.5, -0.5]);
        let a = frame_attention(ex, &e, &[true, true]).unwrap();
        assert!((a.data()[0] - 0.75).abs() < 1e-15);
        assert!((a.data()[1] - 0.25).abs() < 1e-15);
        let e = t(&[3, 1], &[0.0, 0.0, 9.0]);
        let a = frame_attention(ex, &e, &[true, true, false]).unwrap();
        assert_eq!(a.data(), &[0.5, 0.5, 0.0]);
        assert!(frame_attention(ex, &e, &[false; 3]).is_err());
    }

    #[test]
    fn frame_pool_cases() {
        let ex = &mut Eager;
        let e = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(frame_pool(ex, &e, &t(&[1, 2], &[1.0, 0.0])).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(frame_pool(ex, &e, &t(&[1, 2], &[0.5, 0.5])).unwrap().data(), &[0.5, 0.5]);
        let same = t(&[2, 2], &[0.3, -0.6, 0.3, -0.6]);
        let u = frame_pool(ex, &same, &t(&[1, 2], &[0.8, 0.2])).unwrap();
        assert!(u.max_abs_diff(&t(&[1, 2], &[0.3, -0.6])) < 1e-15);
    }

    #[test]
    fn frame_params_cases() {
        let ex = &mut Eager;
        let g = frame_gen(3, 1);
        let (gamma, beta) = frame_params(ex, &t(&[1, 1], &[0.7]), &g).unwrap();
        assert_eq!(gamma.data(), &[1.0; 3]);
        assert_eq!(beta.data(), &[0.0; 3]);
        let mut g = frame_gen(3, 1);
        g.b_gamma = t(&[3], &[0.5, 0.6, 0.7]);
        g.b_beta = t(&[3], &[-1.0, 0.0, 1.0]);
        g.w_gamma = t(&[3, 1], &[9.0, 9.0, 9.0]);
        let (gamma, beta) = frame_params(ex, &Tensor::zeros(&[1, 1]), &g).unwrap();
        assert_eq!(gamma.data(), g.b_gamma.data());
        assert_eq!(beta.data(), g.b_beta.data());
        g.w_gamma = t(&[3, 1], &[2.0, 2.0, 2.0]);
        g.b_gamma = Tensor::ones(&[3]);
        let (gamma, _) = frame_params(ex, &t(&[1, 1], &[3.0]), &g).unwrap();
        assert_eq!(gamma.data(), &[7.0; 3]);
    }

    fn utt_gen(p: usize, d_a: usize) -> UttAbnGenerator<Tensor<f64>> {
        UttAbnGenerator::new(p, d_a, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn utt_project_cases() {
        let ex = &mut Eager;
        let h = t(&[2, 3], &[1.0, 2.0, 3.0, -4.0, 5.0, -6.0]);
        let mut g = utt_gen(3, 2);
        let (k, q, v) = utt_project(ex, &h, &g).unwrap();
        assert_eq!(k, h.matmul(&g.w_k.transpose()).unwrap());
        assert_eq!(q, h.matmul(&g.w_q.transpose()).unwrap());
        assert_eq!(v, h.matmul(&g.w_v.transpose()).unwrap());
        g.w_k = t(&[1, 3], &[1.0, 0.0, 0.0]);
        let (k, _, _) = utt_project(ex, &h, &g).unwrap();
        assert_eq!(k.data(), &[1.0, -4.0]);
        g.w_k = Tensor::zeros(&[2, 3]);
        g.w_q = Tensor::zeros(&[2, 3]);
        g.w_v = Tensor::zeros(&[2, 3]);
        let (k, q, v) = utt_project(ex, &h, &g).unwrap();
        for m in [k, q, v] {
            assert_eq!(m, Tensor::zeros(&[2, 2]));
        }
    }

    #[test]
    fn utt_attention_cases() {
        let ex = &mut Eager;
        let one = t(&[1, 2], &[0.3, -2.0]);
        assert_eq!(utt_attention(ex, &one, &one, &[true]).unwrap().data(), &[1.0]);
        // d_a = 4 with all-ones keys/queries: every score is 4/√4 = 2.
        let ones = Tensor::<f64>::ones(&[3, 4]);
        let a = utt_attention(ex, &ones, &ones, &[true; 3]).unwrap();
        assert!(a.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        // Orthogonal keys, Q = s·K: diagonal mass grows with s.
        let mut prev = 0.0;
        for s in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let k = Tensor::eye(3).scale(s);
            let a = utt_attention(ex, &k, &k, &[true; 3]).unwrap();
            let diag = a.at(1, 1);
            assert!(diag > prev);
            prev = diag;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn utt_context_cases() {
        let ex = &mut Eager;
        let v = t(&[2, 2], &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(utt_context(ex, &Tensor::eye(2), &v).unwrap(), v);
        let uniform = Tensor::full(&[2, 2], 0.5);
        assert_eq!(utt_context(ex, &uniform, &v).unwrap().data(), &[1.0; 4]);
        let same = t(&[2, 2], &[0.25, -1.0, 0.25, -1.0]);
        let c = utt_context(ex, &t(&[2, 2], &[0.9, 0.1, 0.3, 0.7]), &same).unwrap();
        assert!(c.max_abs_diff(&same) < 1e-15);
    }

    #[test]
    fn utt_params_cases() {
        let ex = &mut Eager;
        let g = utt_gen(3, 2);
        let c = t(&[2, 2], &[0.4, -0.2, 1.0, 3.0]);
        let (gamma, beta) = utt_params(ex, &c, &g).unwrap();
        assert_eq!(gamma, Tensor::ones(&[2, 3]));
        assert_eq!(beta, Tensor::zeros(&[2, 3]));
        let mut g = utt_gen(3, 2);
        g.w_gamma = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        g.b_beta = t(&[3], &[0.1, 0.2, 0.3]);
        let (gamma, beta) = utt_params(ex, &Tensor::zeros(&[2, 2]), &g).unwrap();
        assert_eq!(gamma, Tensor::ones(&[2, 3]));
        assert_eq!(beta, g.b_beta.broadcast_rows(2).unwrap());
        let same = t(&[2, 2], &[0.5, 0.5, 0.5, 0.5]);
        let (gamma, _) = utt_params(ex, &same, &g).unwrap();
        assert_eq!(gamma.row(0), gamma.row(1));
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let batch = SequenceBatch::from_utterances(&[&Tensor::<f64>::ones(&[3, 3])]).unwrap();
        let mut st = BatchNormState::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = abn_forward(&batch, &mut st, &Generator::None, Variant::AbnFrame, Mode::Train, 0.0, &mut rng);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
