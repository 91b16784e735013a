mod common;

use common::*;
use topk_attention::engine::AttentionMode;
use topk_attention::nn::*;
use topk_attention::reference::{attention_dense, numeric_gradient};
use topk_attention::tasks::{CopyTask, ListOpsTask, Task};
use topk_attention::{AttentionConfig, Error, MaskSpec, Matrix, TopK};

fn tiny(layers: usize, causal: bool) -> ModelConfig {
    ModelConfig {
        vocab: 9,
        max_len: 10,
        d_model: 8,
        heads: 2,
        d_ff: 12,
        layers,
        causal,
        tied_output: true,
    }
}

fn tokens(n: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..9)).collect()
}

#[test]
fn single_identity_head_is_plain_self_attention() {
    let mut r = rng(1);
    let x: Matrix<f64> = rand_mat(7, 5, &mut r);
    let p = MhaParams {
        w_q: vec![Matrix::identity(5)],
        w_k: vec![Matrix::identity(5)],
        w_v: vec![Matrix::identity(5)],
        w_o: Matrix::identity(5),
    };
    let cfg = AttentionConfig::softmax().with_chunk(7);
    let out = mha_forward(&x, &p, &cfg, AttentionMode::ChunkedTopk).unwrap();
    let dense = attention_dense(&x, &x, &x, &cfg).unwrap();
    assert!(out.max_abs_diff(&dense) < 1e-12);
}

#[test]
fn mha_topk_with_all_keys_matches_dense_f32() {
    let mut r = rng(2);
    let d_model = 16;
    let x: Matrix<f32> = rand_mat(40, d_model, &mut r);
    let w = |r: &mut _| rand_mat::<f32>(d_model, 4, r).scale(0.3);
    let p = MhaParams {
        w_q: (0..4).map(|_| w(&mut r)).collect(),
        w_k: (0..4).map(|_| w(&mut r)).collect(),
        w_v: (0..4).map(|_| w(&mut r)).collect(),
        w_o: rand_mat(d_model, d_model, &mut r),
    };
    let cfg = AttentionConfig::softmax().with_chunk(9).causal();
    let dense = mha_forward(&x, &p, &cfg, AttentionMode::Dense).unwrap();
    let topk = mha_forward(&x, &p, &cfg, AttentionMode::ChunkedTopk).unwrap();
    assert!(dense.max_abs_diff(&topk) < 1e-5);
}

#[test]
fn mha_parameter_gradients_match_central_differences() {
    let (l, d_model, heads) = (12, 8, 2);
    let mut r = rng(3);
    let x: Matrix<f64> = rand_mat(l, d_model, &mut r);
    let mut ws: Vec<Matrix<f64>> = (0..3 * heads).map(|_| rand_mat(d_model, 4, &mut r).scale(0.5)).collect();
    ws.push(rand_mat(d_model, d_model, &mut r).scale(0.5));
    let targets: Vec<Option<usize>> = (0..l).map(|i| Some(i % d_model)).collect();
    for (mode, k) in [(AttentionMode::Dense, TopK::All), (AttentionMode::ChunkedTopk, TopK::Keep(4))] {
        let cfg = AttentionConfig::softmax().with_k(k).with_chunk(5).causal();
        let loss = |ws: &[Matrix<f64>], tape: &mut Tape<f64>, params: bool| {
            let vars: Vec<Var> = ws
                .iter()
                .enumerate()
                .map(|(i, w)| if params { tape.param(i, w).unwrap() } else { tape.constant(w.clone()) })
                .collect();
            let xv = tape.constant(x.clone());
            let mv = MhaVars {
                w_q: (0..heads).map(|h| vars[3 * h]).collect(),
                w_k: (0..heads).map(|h| vars[3 * h + 1]).collect(),
                w_v: (0..heads).map(|h| vars[3 * h + 2]).collect(),
                w_o: vars[3 * heads],
            };
            let out = mha(tape, xv, &mv, &cfg, mode).unwrap();
            tape.cross_entropy(out, &targets).unwrap()
        };
        let mut tape = Tape::new();
        let l = loss(&ws, &mut tape, true);
        let grads = tape.backward(l, 1.0).unwrap();
        for i in 0..ws.len() {
            let num = numeric_gradient(
                |w| {
                    let mut ws2 = ws.clone();
                    ws2[i] = w.clone();
                    let mut t = Tape::new();
                    let l = loss(&ws2, &mut t, false);
                    Ok(t.value(l).get(0, 0))
                },
                &ws[i],
                1e-5,
            )
            .unwrap();
            let e = rel_err(grads.get(i).unwrap(), &num);
            assert!(e < 1e-4, "{mode} param {i}: {e}");
        }
        ws.iter_mut().for_each(|w| *w = w.scale(1.1));
    }
}

#[test]
fn ff_with_all_keys_is_the_mlp() {
    let mut r = rng(4);
    let x: Matrix<f64> = rand_mat(6, 5, &mut r);
    let p = FfParams {
        w_k: rand_mat(11, 5, &mut r),
        w_v: rand_mat(11, 5, &mut r),
    };
    let cfg = AttentionConfig::feed_forward().with_k(TopK::All);
    let hidden = naive_matmul(&to_rows(&x), &to_rows(&p.w_k.transpose()));
    let hidden: Vec<Vec<f64>> = hidden.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    let mlp = Matrix::from_rows(&naive_matmul(&hidden, &to_rows(&p.w_v))).unwrap();
    for mode in AttentionMode::ALL {
        let out = ff_forward(&x, &p, &cfg, mode).unwrap();
        assert!(out.max_abs_diff(&mlp) < 1e-12, "{mode}");
    }
}

#[test]
fn ff_top1_output_is_one_scaled_value_row() {
    let mut r = rng(5);
    let x: Matrix<f64> = rand_mat(8, 4, &mut r);
    let p = FfParams {
        w_k: rand_mat(10, 4, &mut r),
        w_v: rand_mat(10, 4, &mut r),
    };
    let out = ff_forward(&x, &p, &AttentionConfig::feed_forward().with_top(1), AttentionMode::ChunkedTopk).unwrap();
    for t in 0..8 {
        let row = out.row(t);
        let spans_one = (0..10).any(|j| {
            let v = p.w_v.row(j);
            let c = row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|b| b * b).sum::<f64>();
            row.iter().zip(v).all(|(a, b)| (a - c * b).abs() < 1e-12)
        });
        assert!(spans_one, "token {t}");
    }
}

#[test]
fn masked_feed_forward_is_rejected() {
    let x = Matrix::<f64>::zeros(3, 2);
    let p = FfParams {
        w_k: Matrix::zeros(4, 2),
        w_v: Matrix::zeros(4, 2),
    };
    let cfg = AttentionConfig::feed_forward().with_mask(MaskSpec::Causal);
    assert!(matches!(ff_forward(&x, &p, &cfg, AttentionMode::Dense), Err(Error::InvalidConfig(_))));
    let soft = AttentionConfig::softmax();
    assert!(matches!(ff_forward(&x, &p, &soft, AttentionMode::Dense), Err(Error::InvalidConfig(_))));
}

#[test]
fn zero_layers_is_embedding_then_output_projection() {
    for tied in [true, false] {
        let cfg = ModelConfig {
            layers: 0,
            tied_output: tied,
            ..tiny(0, true)
        };
        let p = ModelParams::<f64>::init(&cfg, 6).unwrap();
        let toks = tokens(7, 7);
        let logits = transformer_forward(&toks, &p, &Sublayers::default()).unwrap();
        let emb = Matrix::from_fn(7, 8, |r, c| p.get(0).get(toks[r], c) + p.get(1).get(r, c));
        let proj = if tied { p.get(0).transpose() } else { p.get(2).clone() };
        let expect = Matrix::from_rows(&naive_matmul(&to_rows(&emb), &to_rows(&proj))).unwrap();
        assert!(logits.max_abs_diff(&expect) < 1e-12);
    }
}

fn sublayer_variants() -> Vec<Sublayers> {
    vec![
        Sublayers::default(),
        Sublayers {
            attn: SublayerSpec {
                mode: AttentionMode::ChunkedRecompute,
                k: TopK::All,
                chunk: 3,
            },
            ff: SublayerSpec {
                mode: AttentionMode::ChunkedRecompute,
                k: TopK::All,
                chunk: 4,
            },
        },
        Sublayers {
            attn: SublayerSpec::topk(3, 4),
            ff: SublayerSpec::topk(5, 3),
        },
    ]
}

#[test]
fn decoder_logits_ignore_future_tokens() {
    let p = ModelParams::<f64>::init(&tiny(2, true), 8).unwrap();
    let toks = tokens(10, 9);
    for sub in sublayer_variants() {
        let base = transformer_forward(&toks, &p, &sub).unwrap();
        for t in 0..9 {
            let mut changed = toks.clone();
            for tok in changed.iter_mut().skip(t + 1) {
                *tok = (*tok + 4) % 9;
            }
            let out = transformer_forward(&changed, &p, &sub).unwrap();
            for r in 0..=t {
                assert_eq!(out.row(r), base.row(r), "position {r} moved after change past {t}");
            }
            assert!(out.row(t + 1) != base.row(t + 1));
        }
    }
}

#[test]
fn full_model_gradients_match_central_differences() {
    let cfg = ModelConfig {
        tied_output: false,
        ..tiny(2, true)
    };
    let toks = tokens(10, 10);
    let targets: Vec<Option<usize>> = toks.iter().enumerate().map(|(i, &t)| (i % 3 != 0).then_some((t + 1) % 9)).collect();
    for (v, sub) in sublayer_variants().into_iter().enumerate() {
        let p = ModelParams::<f64>::init(&cfg, 11 + v as u64).unwrap();
        let mut tape = Tape::new();
        let logits = transformer_tape(&mut tape, &toks, &p, &sub, None).unwrap();
        let l = tape.cross_entropy(logits, &targets).unwrap();
        let grads = tape.backward(l, 1.0).unwrap();
        audit_gradients(&grads, &p).unwrap();
        for (i, (name, _, _)) in cfg.param_specs().iter().enumerate() {
            let num = numeric_gradient(
                |w| {
                    let mut q = p.clone();
                    q.tensors_mut()[i] = w.clone();
                    let mut t = Tape::new();
                    let lg = transformer_tape(&mut t, &toks, &q, &sub, None)?;
                    let l = t.cross_entropy(lg, &targets)?;
                    Ok(t.value(l).get(0, 0))
                },
                p.get(i),
                1e-5,
            )
            .unwrap();
            let e = rel_err(grads.get(i).unwrap(), &num);
            assert!(e < 1e-3, "variant {v} {name}: {e}");
        }
    }
}

#[test]
fn unselected_feed_forward_values_get_no_gradient() {
    let mut r = rng(12);
    let w_k: Matrix<f64> = rand_mat(24, 6, &mut r);
    let w_v: Matrix<f64> = rand_mat(24, 6, &mut r);
    let batch: Vec<Matrix<f64>> = (0..3).map(|_| rand_mat(5, 6, &mut r)).collect();
    let cfg = AttentionConfig::feed_forward().with_top(2).with_chunk(2);
    let mut selected = [false; 24];
    let mut total = Matrix::<f64>::zeros(24, 6);
    for x in &batch {
        let scores = x.view().to_matrix();
        for t in 0..5 {
            let row: Vec<f64> = (0..24).map(|j| (0..6).map(|c| scores.get(t, c) * w_k.get(j, c)).sum()).collect();
            for j in sort_topk(&row, &|_| true, 2) {
                selected[j] = true;
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.param(0, &w_k).unwrap();
        let vv = tape.param(1, &w_v).unwrap();
        let out = ff(&mut tape, xv, kv, vv, &cfg, AttentionMode::ChunkedTopk).unwrap();
        let l = tape.cross_entropy(out, &[Some(0), Some(1), Some(2), Some(3), Some(4)]).unwrap();
        total.add_assign(tape.backward(l, 1.0).unwrap().get(1).unwrap()).unwrap();
    }
    assert!(selected.iter().any(|s| !s));
    for (j, &s) in selected.iter().enumerate() {
        if !s {
            assert!(total.row(j).iter().all(|&g| g == 0.0), "row {j}");
        }
    }
}

fn copy_setup() -> (CopyTask, ModelConfig, TrainConfig) {
    let task = CopyTask::new(1, 4, 6);
    let model = ModelConfig {
        vocab: task.vocab_size(),
        max_len: task.max_len(),
        d_model: 16,
        heads: 2,
        d_ff: 32,
        layers: 1,
        causal: true,
        tied_output: true,
    };
    let train = TrainConfig {
        steps: 6,
        batch: 4,
        eval_every: 3,
        eval_samples: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    (task, model, train)
}

#[test]
fn dense_and_recompute_training_trajectories_agree() {
    let (task, model, train) = copy_setup();
    let dense = train_toy::<f64>(&task, &model, &Sublayers::default(), &train).unwrap();
    let rc = SublayerSpec {
        mode: AttentionMode::ChunkedRecompute,
        k: TopK::All,
        chunk: 3,
    };
    let sub = Sublayers { attn: rc, ff: rc };
    let recompute = train_toy::<f64>(&task, &model, &sub, &train).unwrap();
    for (a, b) in dense.train_loss.iter().zip(&recompute.train_loss) {
        assert!((a - b).abs() <= 1e-6 * a.abs());
    }
    for (a, b) in dense.params.tensors().iter().zip(recompute.params.tensors()) {
        assert!(a.max_abs_diff(b) <= 1e-6 * a.max_abs());
    }
}

#[test]
fn equal_seeds_give_bitwise_equal_histories() {
    let (task, model, train) = copy_setup();
    let sub = Sublayers {
        attn: SublayerSpec::topk(2, 3),
        ff: SublayerSpec::topk(8, 5),
    };
    let train = TrainConfig { dropout: 0.1, ..train };
    let a = train_toy::<f64>(&task, &model, &sub, &train).unwrap();
    let b = train_toy::<f64>(&task, &model, &sub, &train).unwrap();
    let bits = |r: &TrainReport<f64>| -> Vec<u64> {
        r.history
            .iter()
            .flat_map(|m| [m.loss, m.accuracy, m.perplexity])
            .chain(r.train_loss.iter().copied())
            .map(f64::to_bits)
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.history[1].step, 6);
}

#[test]
fn training_reduces_loss_on_both_tasks() {
    let (task, model, train) = copy_setup();
    let train = TrainConfig {
        steps: 60,
        eval_every: 60,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..train
    };
    let rep = train_toy::<f32>(&task, &model, &Sublayers::default(), &train).unwrap();
    let first: f64 = rep.train_loss[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = rep.train_loss[55..].iter().sum::<f64>() / 5.0;
    assert!(last < first, "{first} -> {last}");

    let lo = ListOpsTask::new(2, 2, 24);
    let model = ModelConfig {
        vocab: lo.vocab_size(),
        max_len: 24,
        causal: false,
        ..model
    };
    let rep = train_toy::<f32>(&lo, &model, &Sublayers::default(), &train).unwrap();
    assert!(rep.final_metrics().unwrap().accuracy > 0.0);
}

#[test]
fn divergence_is_reported() {
    let (task, model, train) = copy_setup();
    let train = TrainConfig {
        adam: AdamConfig { lr: 1e30, ..AdamConfig::default() },
        clip_norm: 0.0,
        steps: 20,
        ..train
    };
    let err = train_toy::<f32>(&task, &model, &Sublayers::default(), &train).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn model_must_fit_task() {
    let (task, model, train) = copy_setup();
    let small = ModelConfig { max_len: 3, ..model.clone() };
    assert!(train_toy::<f32>(&task, &small, &Sublayers::default(), &train).is_err());
    let enc = ModelConfig { causal: false, ..model };
    assert!(train_toy::<f32>(&task, &enc, &Sublayers::default(), &train).is_err());
}

#[test]
fn trained_checkpoint_round_trips() {
    let (task, model, train) = copy_setup();
    let rep = train_toy::<f32>(&task, &model, &Sublayers::default(), &train).unwrap();
    let meta = CheckpointMeta {
        model: model.clone(),
        sublayers: Sublayers::default(),
        task: None,
        task_seed: 1,
        step: 6,
        seed: 5,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &rep.params, &meta).unwrap();
    let (back, m) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(m, meta);
    assert!(back.tensors().iter().zip(rep.params.tensors()).all(|(a, b)| a.bit_eq(b)));
    let e1 = evaluate(&rep.params, &Sublayers::default(), &task, EVAL_OFFSET, 8).unwrap();
    let e2 = evaluate(&back, &Sublayers::default(), &task, EVAL_OFFSET, 8).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn copy_baseline_and_topk_self_attention_parity() {
    let task = CopyTask::new(1, 16, 16);
    let model = ModelConfig {
        vocab: task.vocab_size(),
        max_len: task.max_len(),
        d_model: 64,
        heads: 4,
        d_ff: 256,
        layers: 2,
        causal: true,
        tied_output: true,
    };
    let train = TrainConfig {
        steps: 1000,
        eval_every: 1000,
        eval_samples: 500,
        seed: 1,
        ..TrainConfig::default()
    };
    let dense = train_toy::<f32>(&task, &model, &Sublayers::default(), &train).unwrap();
    let dense_acc = dense.final_metrics().unwrap().accuracy;
    assert!(dense_acc >= 0.99, "dense accuracy {dense_acc}");
    let sub = Sublayers {
        attn: SublayerSpec::topk(8, 32),
        ..Sublayers::default()
    };
    let topk = train_toy::<f32>(&task, &model, &sub, &train).unwrap();
    let topk_acc = topk.final_metrics().unwrap().accuracy;
    assert!((dense_acc - topk_acc).abs() <= 0.02, "dense {dense_acc} vs top-8 {topk_acc}");
}
