//! Deep bidirectional LSTM with a normalization (BN or ABN) in front of
//! every layer and a linear projection to CTC logits.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abn::{abn_layer, Generator, NormHyper, Variant};
use crate::batch::SequenceBatch;
use crate::dropout::dropout_exec;
use crate::error::{Error, Result};
use crate::normalization::{Mode, NormAffine, RunningStats};
use crate::params::uniform;
use crate::recurrent::{bilstm_layer, LstmLayerParams};
use crate::scalar::Scalar;
use crate::tape::{Eager, Exec, Tape};
use crate::tensor::Tensor;

/// Architecture and regularization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input feature dimension of the first layer.
    pub input_dim: usize,
    /// LSTM cells per direction.
    pub hidden: usize,
    /// Output vocabulary size including the blank (index 0).
    pub vocab: usize,
    /// One entry per BiLSTM layer.
    pub variants: Vec<Variant>,
    /// Dropout on every BiLSTM output in train mode.
    pub dropout: f64,
    /// Dropout inside the scale/shift generators in train mode.
    pub gen_dropout: f64,
    pub d_e: usize,
    pub d_a: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden: 64,
            vocab: 12,
            variants: vec![Variant::Bn; 2],
            dropout: 0.3,
            gen_dropout: 0.3,
            d_e: 8,
            d_a: 8,
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn num_layers(&self) -> usize {
        self.variants.len()
    }

    /// Feature dimension `p` seen by layer `l`'s normalization.
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            2 * self.hidden
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variants: vec![variant; self.num_layers()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.variants.is_empty() {
            return fail("at least one layer is required".into());
        }
        if self.input_dim == 0 || self.hidden == 0 {
            return fail("input_dim and hidden must be positive".into());
        }
        if self.vocab < 2 {
            return fail("vocabulary needs the blank plus at least one token".into());
        }
        for (name, rate) in [("dropout", self.dropout), ("gen_dropout", self.gen_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} {rate} outside [0, 1)"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive".into());
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return fail("momentum must lie in (0, 1]".into());
        }
        for (l, v) in self.variants.iter().enumerate() {
            let p = self.layer_input_dim(l);
            let width = match v {
                Variant::Bn => continue,
                Variant::AbnFrame => self.d_e,
                Variant::AbnUtterance => self.d_a,
            };
            if width == 0 || width >= p {
                return fail(format!("layer {l}: generator width {width} must be in 1..{p}"));
            }
        }
        Ok(())
    }
}

/// Parameters of one normalized BiLSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<V> {
    pub norm: NormAffine<V>,
    pub generator: Generator<V>,
    pub forward: LstmLayerParams<V>,
    pub backward: LstmLayerParams<V>,
}

impl<V> LayerParams<V> {
    pub fn map<W>(&self, f: &mut impl FnMut(&V) -> W) -> LayerParams<W> {
        LayerParams {
            norm: self.norm.map(f),
            generator: self.generator.map(f),
            forward: self.forward.map(f),
            backward: self.backward.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a V)) {
        self.norm.visit(&format!("{prefix}norm."), f);
        self.generator.visit(&format!("{prefix}gen."), f);
        self.forward.visit(&format!("{prefix}fwd."), f);
        self.backward.visit(&format!("{prefix}bwd."), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut V)) {
        self.norm.visit_mut(&format!("{prefix}norm."), f);
        self.generator.visit_mut(&format!("{prefix}gen."), f);
        self.forward.visit_mut(&format!("{prefix}fwd."), f);
        self.backward.visit_mut(&format!("{prefix}bwd."), f);
    }
}

/// Every trainable parameter of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<V> {
    pub layers: Vec<LayerParams<V>>,
    /// `V × 2n`
    pub out_w: V,
    /// `[V]`
    pub out_b: V,
}

impl<V> ModelParams<V> {
    pub fn map<W>(&self, f: &mut impl FnMut(&V) -> W) -> ModelParams<W> {
        ModelParams {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a V)) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("layer{l}."), f);
        }
        f("out.w".into(), &self.out_w);
        f("out.b".into(), &self.out_b);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut V)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("layer{l}."), f);
        }
        f("out.w".into(), &mut self.out_w);
        f("out.b".into(), &mut self.out_b);
    }

    pub fn named(&self) -> Vec<(String, &V)> {
        let mut out = Vec::new();
        self.visit(&mut |n, v| out.push((n, v)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut V)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |n, v| out.push((n, v)));
        out
    }
}

impl<T: Scalar> ModelParams<Tensor<T>> {
    pub fn init(config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let n = config.hidden;
        let mut layers = Vec::with_capacity(config.num_layers());
        for (l, &variant) in config.variants.iter().enumerate() {
            let p = config.layer_input_dim(l);
            layers.push(LayerParams {
                norm: NormAffine::identity(p),
                generator: Generator::new(variant, p, config.d_e, config.d_a, rng)?,
                forward: LstmLayerParams::new(n, p, rng),
                backward: LstmLayerParams::new(n, p, rng),
            });
        }
        Ok(Self {
            layers,
            out_w: uniform(&[config.vocab, 2 * n], 1.0 / ((2 * n) as f64).sqrt(), rng),
            out_b: Tensor::zeros(&[config.vocab]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |t| Tensor::zeros(t.shape()))
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// All parameters concatenated in visiting order.
    pub fn flatten(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.count());
        self.visit(&mut |_, t| data.extend_from_slice(t.data()));
        Tensor::vector(data)
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &Tensor<T>) -> Result<()> {
        if flat.numel() != self.count() {
            return Err(Error::Contract(format!(
                "flat vector has {} values, model has {}",
                flat.numel(),
                self.count()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }
}

/// Full forward pass to `R × V` logits (padded rows hold the output bias).
pub fn stack_forward<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    config: &ModelConfig,
    params: &ModelParams<E::Value>,
    running: &mut [RunningStats<T>],
    batch: &SequenceBatch<T>,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<E::Value> {
    if batch.feature_dim() != config.input_dim {
        return Err(Error::Shape {
            op: "stack_forward",
            left: vec![config.input_dim],
            right: vec![batch.feature_dim()],
        });
    }
    if running.len() != params.layers.len() {
        return Err(Error::Contract("one running-statistics slot per layer".into()));
    }
    let layout = batch.layout();
    let hyper = NormHyper {
        epsilon: T::lit(config.epsilon),
        momentum: T::lit(config.momentum),
        gen_dropout: T::lit(config.gen_dropout),
    };
    let mut x = exec.constant(batch.data().clone());
    for (layer, stats) in params.layers.iter().zip(running.iter_mut()) {
        let normed = abn_layer(exec, &x, layout, &layer.norm, &layer.generator, stats, hyper, mode, rng)?;
        let h = bilstm_layer(exec, &normed, layout, &layer.forward, &layer.backward)?;
        x = dropout_exec(exec, &h, T::lit(config.dropout), rng, mode)?;
    }
    exec.linear(&x, &params.out_w, Some(&params.out_b))
}

/// A model instance: configuration, parameters and inference statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
    pub running: Vec<RunningStats<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng)?;
        let running = (0..config.num_layers())
            .map(|l| RunningStats::new(config.layer_input_dim(l)))
            .collect();
        Ok(Self {
            config,
            params,
            running,
        })
    }

    /// Logits without recording a tape.
    pub fn logits(&mut self, batch: &SequenceBatch<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        stack_forward(&mut Eager, &self.config, &self.params, &mut self.running, batch, mode, rng)
    }

    /// Mean CTC loss without recording a tape.
    pub fn loss(
        &mut self,
        batch: &SequenceBatch<T>,
        labels: &[&[usize]],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<T> {
        let logits = self.logits(batch, mode, rng)?;
        let loss = Eager.ctc_mean_loss(&logits, batch.frames(), batch.lengths(), labels)?;
        loss.item()
    }

    /// Mean CTC loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &mut self,
        batch: &SequenceBatch<T>,
        labels: &[&[usize]],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(T, ModelParams<Tensor<T>>)> {
        let mut tape = Tape::new();
        let vars = self.params.map(&mut |t| tape.leaf(t));
        let logits = stack_forward(&mut tape, &self.config, &vars, &mut self.running, batch, mode, rng)?;
        let loss = tape.ctc_mean_loss(&logits, batch.frames(), batch.lengths(), labels)?;
        let value = tape.value(&loss).item()?;
        let grads = tape.backward(loss)?;
        Ok((value, vars.map(&mut |v| grads.wrt(&tape, *v))))
    }
}

/// Parameter count per module, computed from the instantiated tensors.
pub fn module_param_counts<T: Scalar>(params: &ModelParams<Tensor<T>>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    params.visit(&mut |name, t| {
        let module = module_of(&name);
        match out.iter_mut().find(|(m, _)| *m == module) {
            Some((_, n)) => *n += t.numel(),
            None => out.push((module, t.numel())),
        }
    });
    out
}

/// `layer0.gen.frame.w_e` → `layer0.gen`; `out.w` → `out`.
fn module_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    if parts[0].starts_with("layer") {
        format!("{}.{}", parts[0], parts[1])
    } else {
        parts[0].to_string()
    }
}

/// Closed-form parameter counts per module, independent of any tensors.
pub fn closed_form_param_counts(config: &ModelConfig) -> Vec<(String, usize)> {
    let n = config.hidden;
    let mut out = Vec::new();
    for (l, &variant) in config.variants.iter().enumerate() {
        let p = config.layer_input_dim(l);
        out.push((format!("layer{l}.norm"), 2 * p));
        let gen = match variant {
            Variant::Bn => 0,
            // W_e, b_e, W_γ, b_γ, W_β, b_β
            Variant::AbnFrame => config.d_e * p + config.d_e + 2 * (p * config.d_e + p),
            // W_k, W_q, W_v, W_γ, b_γ, W_β, b_β
            Variant::AbnUtterance => 3 * config.d_a * p + 2 * (p * config.d_a + p),
        };
        if gen > 0 {
            out.push((format!("layer{l}.gen"), gen));
        }
        // four n×n, four n×p, peephole n, four biases n
        let lstm = 4 * n * n + 4 * n * p + n + 4 * n;
        out.push((format!("layer{l}.fwd"), lstm));
        out.push((format!("layer{l}.bwd"), lstm));
    }
    out.push(("out".into(), config.vocab * 2 * n + config.vocab));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_generator_closed_form_example() {
        // p = 8, d_e = 4: 32 + 4 + 32 + 8 + 32 + 8 = 116
        let cfg = ModelConfig {
            input_dim: 8,
            hidden: 4,
            d_e: 4,
            variants: vec![Variant::AbnFrame],
            ..ModelConfig::default()
        };
        let counts = closed_form_param_counts(&cfg);
        assert!(counts.contains(&("layer0.gen".to_string(), 116)));
    }

    #[test]
    fn counts_match_instantiated_tensors() {
        for v in Variant::ALL {
            let cfg = ModelConfig::default().with_variant(v);
            let m = Model::<f64>::new(cfg.clone(), 1).unwrap();
            assert_eq!(module_param_counts(&m.params), closed_form_param_counts(&cfg));
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let mut m = Model::<f64>::new(ModelConfig::default().with_variant(Variant::AbnUtterance), 4).unwrap();
        let flat = m.params.flatten();
        let before = m.params.clone();
        m.params.assign_flat(&flat.scale(1.0)).unwrap();
        assert_eq!(m.params, before);
        assert!(m.params.assign_flat(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.variants = vec![Variant::AbnFrame];
        cfg.d_e = 16; // equals input_dim
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            variants: vec![],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
