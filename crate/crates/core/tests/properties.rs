mod common;

use abn_core::abn::{abn_forward, frame_attention, frame_embed, generate_scale_shift, utt_attention, utt_project};
use abn_core::batch::{BatchLayout, SequenceBatch};
use abn_core::ctc::{ctc_brute_force, ctc_loss, edit_distance, log_softmax_rows, min_frames};
use abn_core::dd::Dd;
use abn_core::Scalar;
use abn_core::harness::checkpoint::{checkpoint_from_text, checkpoint_to_text};
use abn_core::harness::synth::{synth_generate, synth_utterance, token_templates};
use abn_core::harness::{adam_step, lr_schedule, make_batches, AdamHyper, AdamState, LrAction, Thresholds, TrainConfig};
use abn_core::normalization::{bn_forward, bn_normalize, bn_statistics};
use abn_core::recurrent::lstm_step;
use abn_core::{
    uniform, BatchNormState, Eager, FrameAbnGenerator, Generator, LstmLayerParams, LstmState, Mode, Model, ModelConfig,
    Tensor, UttAbnGenerator, Variant,
};
use common::*;
use num_traits::Float;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One to four utterance lengths in `1..=max_t`.
fn lengths(max_t: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_t, 1..=4)
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

/// Lengths whose total leaves at least two valid frames for statistics.
fn stat_lengths(max_t: usize) -> impl Strategy<Value = Vec<usize>> {
    lengths(max_t).prop_filter("two valid frames", |l| l.iter().sum::<usize>() >= 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_softmax_is_a_distribution(
        scores in prop::collection::vec(-50.0f64..50.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let n = scores.len();
        let mut valid = mask_bits[..n].to_vec();
        valid[0] = true;
        let s = Tensor::new(vec![1, n], scores).unwrap().masked_softmax_rows(&valid).unwrap();
        let total: f64 = s.data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (v, ok) in s.data().iter().zip(&valid) {
            prop_assert!(*v >= 0.0);
            if !ok {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn matmul_is_associative(m in 1usize..5, k in 1usize..5, l in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let r = &mut rng(seed);
        let a: Tensor<f64> = uniform(&[m, k], 1.0, r);
        let b: Tensor<f64> = uniform(&[k, l], 1.0, r);
        let c: Tensor<f64> = uniform(&[l, n], 1.0, r);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right) <= 1e-10 * scale);
    }

    #[test]
    fn standardized_features_have_zero_mean_and_shrunk_unit_variance(
        lens in stat_lengths(9),
        scale in 0.01f64..50.0,
        seed in any::<u64>(),
    ) {
        let batch = random_batch(&lens, 5, scale, &mut rng(seed));
        let (mu, var) = bn_statistics(&batch).unwrap();
        let eps = 1e-5;
        let xhat = bn_normalize(batch.data(), &mu, &var, eps).unwrap();
        let (m, v) = valid_moments(&xhat, batch.layout());
        for f in 0..5 {
            prop_assert!(m[f].abs() < 1e-9, "mean {}", m[f]);
            let target = var.data()[f] / (var.data()[f] + eps);
            prop_assert!((v[f] - target).abs() < 1e-6, "var {} vs {}", v[f], target);
        }
    }

    #[test]
    fn bn_ignores_padding_content(lens in stat_lengths(8), seed in any::<u64>(), train in any::<bool>()) {
        let r = &mut rng(seed);
        let batch = random_batch(&lens, 4, 2.0, r);
        let noisy = scramble_padding(&batch, r);
        let mode = if train { Mode::Train } else { Mode::Infer };
        let mut s1 = BatchNormState::new(4);
        s1.affine.gamma = uniform(&[4], 2.0, r);
        s1.affine.beta = uniform(&[4], 2.0, r);
        let mut s2 = s1.clone();
        let a = bn_forward(&batch, &mut s1, mode).unwrap();
        let b = bn_forward(&noisy, &mut s2, mode).unwrap();
        prop_assert_eq!(valid_rows_max_diff(a.data(), b.data(), batch.layout()), 0.0);
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn zero_head_generators_reduce_to_bn(lens in stat_lengths(7), v in variant(), seed in any::<u64>()) {
        let r = &mut rng(seed);
        let batch = random_batch(&lens, 6, 3.0, r);
        let generator = Generator::<Tensor<f64>>::new(v, 6, 3, 3, r).unwrap();
        let mut bn_state = BatchNormState::new(6);
        let mut abn_state = bn_state.clone();
        let expect = bn_forward(&batch, &mut bn_state, Mode::Train).unwrap();
        let got = abn_forward(&batch, &mut abn_state, &generator, v, Mode::Train, 0.3, r).unwrap();
        prop_assert!(got.data().max_abs_diff(expect.data()) <= 1e-12);
    }

    #[test]
    fn attention_ignores_padding(lens in stat_lengths(7), v in variant(), seed in any::<u64>()) {
        let r = &mut rng(seed);
        let batch = random_batch(&lens, 6, 2.0, r);
        let noisy = scramble_padding(&batch, r);
        let mut generator = Generator::<Tensor<f64>>::new(v, 6, 3, 3, r).unwrap();
        let jitter = &mut rng(seed ^ 1);
        generator.visit_mut("", &mut |_, t| *t = t.add(&uniform(t.shape(), 0.5, jitter)).unwrap());
        let run = |b: &SequenceBatch<f64>| {
            let mut state = BatchNormState::new(6);
            abn_forward(b, &mut state, &generator, v, Mode::Train, 0.0, &mut rng(0)).unwrap()
        };
        let (a, b) = (run(&batch), run(&noisy));
        prop_assert_eq!(valid_rows_max_diff(a.data(), b.data(), batch.layout()), 0.0);
    }

    #[test]
    fn attention_rows_are_distributions_over_valid_frames(len in 1usize..7, pad in 0usize..3, seed in any::<u64>()) {
        let r = &mut rng(seed);
        let frames = len + pad;
        let valid: Vec<bool> = (0..frames).map(|t| t < len).collect();
        let h: Tensor<f64> = uniform(&[frames, 6], 2.0, r);
        let fgen = FrameAbnGenerator::<Tensor<f64>>::new(6, 3, r).unwrap();
        let e = frame_embed(&mut Eager, &h, &fgen).unwrap();
        let alpha = frame_attention(&mut Eager, &e, &valid).unwrap();
        let ugen = UttAbnGenerator::<Tensor<f64>>::new(6, 3, r).unwrap();
        let (k, q, _) = utt_project(&mut Eager, &h, &ugen).unwrap();
        let beta = utt_attention(&mut Eager, &k, &q, &valid).unwrap();
        for row in std::iter::once(alpha.row(0)).chain((0..len).map(|t| beta.row(t))) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row[len..].iter().all(|&x| x == 0.0));
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn frame_order_is_irrelevant_to_pooled_parameters(lens in stat_lengths(7), seed in any::<u64>()) {
        let r = &mut rng(seed);
        let batch = random_batch(&lens, 6, 2.0, r);
        let mut generator = Generator::<Tensor<f64>>::new(Variant::AbnFrame, 6, 3, 3, r).unwrap();
        let jitter = &mut rng(seed ^ 2);
        generator.visit_mut("", &mut |_, t| *t = t.add(&uniform(t.shape(), 0.5, jitter)).unwrap());
        let layout = batch.layout().clone();
        let perm = frame_permutation(&layout, 0, &shuffled(lens[0], r));
        let xhat: Tensor<f64> = uniform(&[layout.rows(), 6], 2.0, r);
        let xhat_p = xhat.gather_rows(&perm).unwrap();
        let affine = BatchNormState::<f64>::new(6).affine;
        let gen = |x: &Tensor<f64>| {
            generate_scale_shift(&mut Eager, x, &layout, &affine, &generator, 0.0, Mode::Infer, &mut rng(0)).unwrap()
        };
        let ((g1, b1), (g2, b2)) = (gen(&xhat), gen(&xhat_p));
        prop_assert!(valid_rows_max_diff(&g1, &g2, &layout) <= 1e-12);
        prop_assert!(valid_rows_max_diff(&b1, &b2, &layout) <= 1e-12);
    }

    #[test]
    fn utterance_level_is_permutation_equivariant(lens in stat_lengths(7), seed in any::<u64>()) {
        let r = &mut rng(seed);
        let batch = random_batch(&lens, 6, 2.0, r);
        let mut generator = Generator::<Tensor<f64>>::new(Variant::AbnUtterance, 6, 3, 3, r).unwrap();
        let jitter = &mut rng(seed ^ 3);
        generator.visit_mut("", &mut |_, t| *t = t.add(&uniform(t.shape(), 0.5, jitter)).unwrap());
        let layout = batch.layout().clone();
        let perm = frame_permutation(&layout, 0, &shuffled(lens[0], r));
        let permuted = batch.with_data(batch.data().gather_rows(&perm).unwrap()).unwrap();
        let run = |b: &SequenceBatch<f64>| {
            let mut state = BatchNormState::new(6);
            abn_forward(b, &mut state, &generator, Variant::AbnUtterance, Mode::Train, 0.0, &mut rng(0)).unwrap()
        };
        let expect = run(&batch).data().gather_rows(&perm).unwrap();
        let got = run(&permuted);
        prop_assert!(valid_rows_max_diff(got.data(), &expect, &layout) <= 1e-12);
    }

    #[test]
    fn lstm_hidden_state_is_bounded(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let r = &mut rng(seed);
        let params = LstmLayerParams::<Tensor<f64>>::zeros(5, 3).map(&mut |t| uniform(t.shape(), scale, r));
        let x: Tensor<f64> = uniform(&[2, 3], scale, r);
        let prev = LstmState { h: uniform(&[2, 5], 1.0, r), c: uniform(&[2, 5], scale, r) };
        let next = lstm_step(&mut Eager, &x, &prev, &params).unwrap();
        prop_assert!(next.h.data().iter().all(|v| v.abs() <= 1.0));
        prop_assert!(next.c.all_finite());
    }

    #[test]
    fn ctc_ignores_per_frame_logit_shifts(frames in 1usize..7, seed in any::<u64>()) {
        let r = &mut rng(seed);
        let logits: Tensor<f64> = uniform(&[frames, 4], 3.0, r);
        let shifts: Tensor<f64> = uniform(&[frames, 1], 20.0, r);
        let shifted = logits.add(&shifts.broadcast_cols(4).unwrap()).unwrap();
        let labels = [1, 3];
        let a = ctc_loss(&logits, &labels).unwrap();
        let b = ctc_loss(&shifted, &labels).unwrap();
        prop_assert_eq!(a.feasible, b.feasible);
        if a.feasible {
            prop_assert!((a.loss - b.loss).abs() <= 1e-10);
        }
    }

    #[test]
    fn ctc_matches_enumeration(
        frames in 1usize..=6,
        vocab in 2usize..=3,
        labels in prop::collection::vec(1usize..3, 0..=3),
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = labels.into_iter().filter(|&l| l < vocab).collect();
        let logits: Tensor<f64> = uniform(&[frames, vocab], 4.0, &mut rng(seed));
        let fb = ctc_loss(&logits, &labels).unwrap();
        let bf = ctc_brute_force(&log_softmax_rows(&logits), &labels).unwrap();
        prop_assert_eq!(fb.feasible, frames >= min_frames(&labels));
        prop_assert_eq!(fb.loss.is_finite(), bf.is_finite());
        if fb.feasible {
            prop_assert!((fb.loss - bf).abs() <= 1e-9);
        }
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in prop::collection::vec(1usize..5, 0..8),
        b in prop::collection::vec(1usize..5, 0..8),
        c in prop::collection::vec(1usize..5, 0..8),
    ) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert!(edit_distance(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn batches_respect_budget_and_order(
        mut lens in prop::collection::vec(1usize..200, 1..60),
        max_frames in 200usize..2000,
    ) {
        lens.sort_unstable_by(|a, b| b.cmp(a));
        let batches = make_batches(&lens, max_frames).unwrap();
        let mut next = 0;
        for range in &batches {
            prop_assert_eq!(range.start, next);
            prop_assert!(!range.is_empty());
            let l_max = lens[range.start];
            prop_assert!(range.len() * l_max <= max_frames);
            prop_assert!(range.len() == max_frames / l_max || range.end == lens.len());
            next = range.end;
        }
        prop_assert_eq!(next, lens.len());
    }

    #[test]
    fn schedule_depends_only_on_the_last_two_entries(
        prefix in prop::collection::vec(0.1f64..100.0, 0..5),
        prev in 0.1f64..100.0,
        curr in 0.0f64..100.0,
    ) {
        let th = Thresholds::default();
        let mut history = prefix.clone();
        history.extend([prev, curr]);
        let action = lr_schedule(&history, th).unwrap();
        prop_assert_eq!(action, lr_schedule(&[prev, curr], th).unwrap());
        prop_assert_eq!(action, lr_schedule(&history, th).unwrap());
        let r = (prev - curr) / prev;
        let expect = if r < th.stop { LrAction::Stop } else if r < th.halve { LrAction::Halve } else { LrAction::Keep };
        prop_assert_eq!(action, expect);
    }

    #[test]
    fn adam_first_step_moves_each_coordinate_by_lr(g in prop::collection::vec(-1e3f64..1e3, 1..10), lr in 1e-5f64..1e-1) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let grad = Tensor::vector(g.clone());
        let mut theta = Tensor::<f64>::zeros(&[g.len()]);
        let mut state = AdamState::default();
        adam_step(&mut [&mut theta], &[&grad], &mut state, lr, &AdamHyper::default()).unwrap();
        for (d, gi) in theta.data().iter().zip(&g) {
            prop_assert!((d + lr * gi.signum()).abs() <= lr * 1e-6);
        }
    }

    #[test]
    fn dd_exp_and_ln_are_inverse(x in -30.0f64..30.0, tail in -1.0f64..1.0) {
        let v = Dd::lit(x) + Dd::lit(tail * 1e-17 * x.abs().max(1.0));
        let back = v.exp().ln();
        prop_assert!((back - v).abs().to_f64_lossy() <= 1e-27 * x.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stack_ignores_padding_end_to_end(lens in lengths(6), v in variant(), seed in any::<u64>()) {
        let cfg = ModelConfig { input_dim: 6, hidden: 4, vocab: 3, d_e: 3, d_a: 3, ..ModelConfig::default() }
            .with_variant(v);
        let r = &mut rng(seed);
        let batch = random_batch(&lens, 6, 2.0, r);
        let noisy = scramble_padding(&batch, r);
        let mut m1 = Model::<f64>::new(cfg.clone(), seed).unwrap();
        let mut m2 = Model::<f64>::new(cfg, seed).unwrap();
        let mode = if lens.iter().sum::<usize>() >= 2 { Mode::Train } else { Mode::Infer };
        let a = m1.logits(&batch, mode, &mut rng(5)).unwrap();
        let b = m2.logits(&noisy, mode, &mut rng(5)).unwrap();
        prop_assert_eq!(valid_rows_max_diff(&a, &b, batch.layout()), 0.0);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_outputs(v in variant(), seed in any::<u64>()) {
        let mut cfg = TrainConfig::default().with_variant(v);
        cfg.model.hidden = 5;
        let mut model = Model::<f64>::new(cfg.model.clone(), seed).unwrap();
        let jitter = &mut rng(seed);
        model.params.visit_mut(&mut |_, t| *t = t.add(&uniform(t.shape(), 0.1, jitter)).unwrap());
        let text = checkpoint_to_text(&cfg, &model).unwrap();
        let mut back = checkpoint_from_text::<f64>(&text, Some(v)).unwrap().model;
        prop_assert_eq!(&back, &model);
        let batch = random_batch(&[4, 2], cfg.model.input_dim, 1.0, &mut rng(seed));
        let a = model.logits(&batch, Mode::Infer, &mut rng(0)).unwrap();
        let b = back.logits(&batch, Mode::Infer, &mut rng(0)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn synthetic_utterances_depend_only_on_seed_and_index(seed in any::<u64>(), n in 1usize..20) {
        let task = TrainConfig::default().task;
        let all = synth_generate::<f64>(&task, n, seed).unwrap();
        let templates = token_templates::<f64>(&task);
        let i = n / 2;
        prop_assert_eq!(&synth_utterance::<f64>(&task, &templates, seed, i as u64).unwrap(), &all[i]);
        prop_assert_eq!(synth_generate::<f64>(&task, n, seed).unwrap(), all);
    }
}

#[test]
fn padded_batch_layout_helpers_agree() {
    let layout = BatchLayout::new(3, vec![3, 1]).unwrap();
    let perm = frame_permutation(&layout, 0, &[2, 0, 1]);
    assert_eq!(perm, vec![2, 0, 1, 3, 4, 5]);
}
