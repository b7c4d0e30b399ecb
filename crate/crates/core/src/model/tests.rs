use super::forward::load_params;
use super::*;
use crate::rng::SplitMix64;
use crate::tensor::Tape;
use crate::tokenizer::{BOS, EOS, PAD};

fn tiny() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 8,
        d_ff: 12,
        max_seq_len: 16,
        vocab_size: 20,
        dropout_rate: 0.0,
    }
}

fn random_ids(rng: &mut SplitMix64, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| 3 + rng.below(vocab - 3)).collect()
}

#[test]
fn init_is_deterministic() {
    let c = ModelConfig::default();
    assert_eq!(ModelParams::init(&c, 7).unwrap(), ModelParams::init(&c, 7).unwrap());
    assert_ne!(ModelParams::init(&c, 7).unwrap(), ModelParams::init(&c, 8).unwrap());
}

#[test]
fn default_param_count_matches_hand_computation() {
    // V·d = 512·64 = 32768
    // encoder layer: 4·(64·64+64) + (2·64·128 + 128 + 64) + 4·64 = 16640 + 16576 + 256 = 33472
    // decoder layer: 8·(64·64+64) + 16576 + 6·64 = 33280 + 16576 + 384 = 50240
    // total: 32768 + 2·33472 + 128 + 2·50240 + 128 = 200448
    let c = ModelConfig::default();
    assert_eq!(c.param_count(), 200_448);
    assert_eq!(ModelParams::init(&c, 1).unwrap().param_count(), 200_448);
}

#[test]
fn init_bounds_are_xavier() {
    let p = ModelParams::init(&tiny(), 3).unwrap();
    for (spec, t) in p.specs().iter().zip(p.tensors()) {
        if spec.shape.len() == 2 {
            let bound = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
            assert!(t.data().iter().all(|v| v.abs() <= bound), "{}", spec.name);
        } else if spec.name.ends_with("gain") {
            assert!(t.data().iter().all(|v| *v == 1.0));
        } else {
            assert!(t.data().iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn rejects_bad_configs() {
    let mut c = ModelConfig::default();
    c.d_model = 63;
    assert!(matches!(ModelParams::init(&c, 1), Err(ModelError::Config(_))));
    let mut c = ModelConfig::default();
    c.max_seq_len = 1;
    assert!(c.validate().is_err());
    assert!(ModelConfig::reference(32000).validate().is_ok());
}

#[test]
fn logits_shape() {
    let p = ModelParams::init(&tiny(), 1).unwrap();
    let mut r = SplitMix64::new(1);
    let src = random_ids(&mut r, 5, 20);
    let tgt = random_ids(&mut r, 7, 20);
    assert_eq!(forward(&p, &src, &tgt).unwrap().shape(), &[7, 20]);
}

#[test]
fn length_and_token_errors() {
    let p = ModelParams::init(&tiny(), 1).unwrap();
    let long = vec![5; 17];
    assert!(matches!(forward(&p, &long, &[BOS]), Err(ModelError::Length { len: 17, max: 16 })));
    assert!(matches!(forward(&p, &[3, 20], &[BOS]), Err(ModelError::Token { id: 20, .. })));
}

#[test]
fn causal_prefix_is_bit_identical() {
    let p = ModelParams::init(&tiny(), 2).unwrap();
    let mut r = SplitMix64::new(2);
    let src = random_ids(&mut r, 6, 20);
    let tgt = random_ids(&mut r, 8, 20);
    let base = forward(&p, &src, &tgt).unwrap();
    for t in 0..7 {
        let mut changed = tgt.clone();
        changed[t + 1] = 3 + (changed[t + 1] + 1 - 3) % 17;
        let out = forward(&p, &src, &changed).unwrap();
        assert_eq!(&base.data()[..(t + 1) * 20], &out.data()[..(t + 1) * 20]);
        assert_ne!(base.data(), out.data());
    }
}

#[test]
fn source_padding_is_invisible() {
    let p = ModelParams::init(&tiny(), 3).unwrap();
    let mut r = SplitMix64::new(3);
    let src = random_ids(&mut r, 6, 20);
    let tgt = random_ids(&mut r, 5, 20);
    let base = forward(&p, &src, &tgt).unwrap();
    let mut padded = src.clone();
    padded.extend([PAD, PAD, PAD]);
    let out = forward(&p, &padded, &tgt).unwrap();
    for (a, b) in base.data().iter().zip(out.data()) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn eval_forward_is_deterministic_with_dropout_configured() {
    let mut c = tiny();
    c.dropout_rate = 0.3;
    let p = ModelParams::init(&c, 4).unwrap();
    let a = forward(&p, &[3, 4, 5], &[BOS, 6]).unwrap();
    let b = forward(&p, &[3, 4, 5], &[BOS, 6]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batched_rows_match_single_pairs() {
    let p = ModelParams::init(&tiny(), 5).unwrap();
    let mut r = SplitMix64::new(5);
    let srcs: Vec<Vec<usize>> = (0..3).map(|i| random_ids(&mut r, 3 + i, 20)).collect();
    let tgts: Vec<Vec<usize>> = (0..3).map(|i| random_ids(&mut r, 5 - i, 20)).collect();
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, &p, false);
    let s: Vec<&[usize]> = srcs.iter().map(|v| v.as_slice()).collect();
    let t: Vec<&[usize]> = tgts.iter().map(|v| v.as_slice()).collect();
    let all = forward_on_tape(&mut tape, &p, &vars, &s, &t, &mut ForwardMode::Eval).unwrap();
    let all = tape.value(all).data().to_vec();
    let mut row = 0;
    for (src, tgt) in srcs.iter().zip(&tgts) {
        let one = forward(&p, src, tgt).unwrap();
        let n = tgt.len() * 20;
        for (a, b) in one.data().iter().zip(&all[row..row + n]) {
            assert!((a - b).abs() < 1e-12);
        }
        row += n;
    }
}

/// Reference greedy decoder: re-runs the full tape forward for every prefix.
fn naive_greedy(p: &ModelParams, src: &[usize], max_len: usize) -> Vec<usize> {
    let mut out = vec![BOS];
    let v = p.config().vocab_size;
    while out.len() - 1 < max_len.min(p.config().max_seq_len - 1) {
        let logits = forward(p, src, &out).unwrap();
        let last = &logits.data()[(out.len() - 1) * v..];
        let mut best = 0;
        for (i, &x) in last.iter().enumerate() {
            if x > last[best] {
                best = i;
            }
        }
        out.push(best);
        if best == EOS {
            break;
        }
    }
    out
}

#[test]
fn cached_decoder_matches_full_recompute() {
    let p = ModelParams::init(&tiny(), 6).unwrap();
    let mut r = SplitMix64::new(6);
    let srcs: Vec<Vec<usize>> = (0..4).map(|i| random_ids(&mut r, 2 + 2 * i, 20)).collect();
    let batch = greedy_decode_batch(&p, &srcs, 10).unwrap();
    for (src, got) in srcs.iter().zip(&batch) {
        assert_eq!(got, &naive_greedy(&p, src, 10));
        assert_eq!(got, &greedy_decode(&p, src, 10).unwrap());
    }
}

#[test]
fn decode_budget_and_determinism() {
    let p = ModelParams::init(&tiny(), 7).unwrap();
    let out = greedy_decode(&p, &[3, 4, 5], 1).unwrap();
    assert!(out.len() <= 2 && out[0] == BOS);
    assert_eq!(greedy_decode(&p, &[3, 4, 5], 0).unwrap(), vec![BOS]);
    let long = greedy_decode(&p, &[3, 4, 5], 100).unwrap();
    assert!(long.len() <= 16);
    assert_eq!(long, greedy_decode(&p, &[3, 4, 5], 100).unwrap());
}

#[test]
fn every_trainable_tensor_receives_gradient() {
    let p = ModelParams::init(&tiny(), 8).unwrap();
    let mut r = SplitMix64::new(8);
    let srcs: Vec<Vec<usize>> = (0..3).map(|_| random_ids(&mut r, 5, 20)).collect();
    let tgts: Vec<Vec<usize>> = (0..3).map(|_| random_ids(&mut r, 6, 20)).collect();
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, &p, true);
    let s: Vec<&[usize]> = srcs.iter().map(|v| v.as_slice()).collect();
    let t: Vec<&[usize]> = tgts.iter().map(|v| &v[..5]).collect();
    let labels: Vec<usize> = tgts.iter().flat_map(|v| v[1..].iter().copied()).collect();
    let logits = forward_on_tape(&mut tape, &p, &vars, &s, &t, &mut ForwardMode::Eval).unwrap();
    let loss = tape.cross_entropy(logits, &labels, PAD).unwrap();
    tape.backward(loss).unwrap();
    for (spec, v) in p.specs().iter().zip(&vars) {
        let g = tape.grad(*v).unwrap();
        assert!(g.iter().any(|x| *x != 0.0), "{} has no gradient", spec.name);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let mut c = tiny();
    c.dropout_rate = 0.1;
    let p = ModelParams::init(&c, 9).unwrap();
    let bytes = p.to_bytes();
    let back = ModelParams::from_bytes(&bytes).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.to_bytes(), bytes);
    let header = String::from_utf8_lossy(&bytes[..200]);
    assert!(header.starts_with("mtlab-checkpoint 1\nnum_layers=2\nnum_heads=2\nd_model=8\n"));
    assert!(header.contains("dropout_rate=0.1\n"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    p.save(&path).unwrap();
    assert_eq!(ModelParams::load(&path).unwrap(), p);

    assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(ModelParams::from_bytes(b"garbage\n").is_err());
}
