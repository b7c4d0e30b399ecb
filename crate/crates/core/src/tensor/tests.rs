use super::ops::Segment;
use super::*;
use crate::rng::SplitMix64;

fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
}

/// Central finite differences of a scalar function of several inputs,
/// compared entry by entry against the tape's analytic gradient.
fn max_grad_error(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let h = 1e-5;
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vars).unwrap();
        t.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (vi, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[vi]).map(|g| g.to_vec()).unwrap_or(vec![0.0; x.len()]);
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[vi].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[vi].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max((numeric - analytic[j]).abs());
        }
    }
    worst
}

/// Weighted sum with fixed pseudo-random weights so gradients are not uniform.
fn probe(t: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let mut r = SplitMix64::new(seed);
    let w = random(t.shape(x), &mut r);
    let w = t.constant(w);
    let p = t.mul(x, w)?;
    t.sum(p)
}

#[test]
fn matmul_identity_and_dot() {
    let mut t = Tape::new();
    let i2 = t.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let b = t.constant(Tensor::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap());
    let c = t.matmul(i2, b).unwrap();
    assert_eq!(t.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

    let a = t.constant(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
    let b = t.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.shape(c), &[1, 1]);
    assert_eq!(t.value(c).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
}

#[test]
fn matmul_sum_gradient() {
    let mut r = SplitMix64::new(1);
    let inputs = [random(&[4, 3], &mut r), random(&[3, 5], &mut r)];
    let err = max_grad_error(&inputs, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        t.sum(c)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn matmul_nt_gradient() {
    let mut r = SplitMix64::new(2);
    let inputs = [random(&[4, 3], &mut r), random(&[5, 3], &mut r)];
    let err = max_grad_error(&inputs, |t, v| {
        let c = t.matmul_nt(v[0], v[1])?;
        probe(t, c, 9)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_uniform_and_stable() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let y = t.softmax(x, 0).unwrap();
    for p in t.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = t.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let y = t.softmax(x, 0).unwrap();
    assert_eq!(t.value(y).data()[0], 1.0);
    assert!(t.value(y).data()[1] < 1e-300);
}

#[test]
fn softmax_axis_out_of_range() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(t.softmax(x, 2), Err(TensorError::Axis { axis: 2, rank: 2, .. })));
}

#[test]
fn softmax_gradient_both_axes() {
    let mut r = SplitMix64::new(3);
    let inputs = [random(&[3, 4], &mut r)];
    for axis in 0..2 {
        let err = max_grad_error(&inputs, |t, v| {
            let y = t.softmax(v[0], axis)?;
            probe(t, y, 11)
        });
        assert!(err < 1e-6, "axis {axis}: {err}");
    }
}

#[test]
fn layer_norm_cases() {
    let mut t = Tape::new();
    let g = t.constant(Tensor::new(vec![3], vec![1.0; 3]).unwrap());
    let b = t.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let x = t.constant(Tensor::new(vec![1, 3], vec![5.0; 3]).unwrap());
    let y = t.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 0.0]);

    let g = t.constant(Tensor::new(vec![2], vec![1.0; 2]).unwrap());
    let b = t.constant(Tensor::new(vec![2], vec![0.0; 2]).unwrap());
    let x = t.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
    let y = t.layer_norm(x, g, b, 0.0).unwrap();
    assert_eq!(t.value(y).data(), &[-1.0, 1.0]);
}

#[test]
fn layer_norm_gradient() {
    let mut r = SplitMix64::new(4);
    let inputs = [random(&[3, 5], &mut r), random(&[5], &mut r), random(&[5], &mut r)];
    let err = max_grad_error(&inputs, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        probe(t, y, 12)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn cross_entropy_forced_values() {
    let mut t = Tape::new();
    let mut logits = vec![0.0; 8];
    logits[1] = 1e6;
    logits[4 + 3] = 1e6;
    let x = t.constant(Tensor::new(vec![2, 4], logits).unwrap());
    let l = t.cross_entropy(x, &[1, 3], usize::MAX).unwrap();
    assert!(t.value(l).data()[0].abs() < 1e-12);

    let x = t.constant(Tensor::zeros(&[3, 4]));
    let l = t.cross_entropy(x, &[0, 2, 3], usize::MAX).unwrap();
    assert!((t.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn cross_entropy_matches_naive_log_softmax() {
    let mut r = SplitMix64::new(5);
    let logits = random(&[6, 7], &mut r);
    let targets = [0usize, 6, 99, 3, 3, 1];
    let mut t = Tape::new();
    let x = t.constant(logits.clone());
    let l = t.cross_entropy(x, &targets, 99).unwrap();
    let mut total = 0.0;
    let mut n = 0.0;
    for (row, &tgt) in logits.data().chunks(7).zip(&targets) {
        if tgt == 99 {
            continue;
        }
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total -= (row[tgt].exp() / z).ln();
        n += 1.0;
    }
    assert!((t.value(l).data()[0] - total / n).abs() < 1e-9);
}

#[test]
fn cross_entropy_rejects_bad_target() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 4]));
    let err = t.cross_entropy(x, &[0, 4], 9).unwrap_err();
    assert!(matches!(err, TensorError::Index { index: 4, limit: 4, .. }));
}

#[test]
fn cross_entropy_gradient() {
    let mut r = SplitMix64::new(6);
    let inputs = [random(&[5, 6], &mut r)];
    let err = max_grad_error(&inputs, |t, v| t.cross_entropy(v[0], &[1, 0, 7, 5, 2], 7));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backward_square_sum() {
    let mut t = Tape::new();
    let x = t.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_fan_out_accumulates() {
    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(1.5));
    let y = t.add(x, x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.param(Tensor::zeros(&[2]));
    assert!(matches!(t.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn backward_repeatable_after_zero_grad() {
    let mut r = SplitMix64::new(7);
    let mut t = Tape::new();
    let a = t.param(random(&[3, 4], &mut r));
    let b = t.param(random(&[4, 2], &mut r));
    let c = t.matmul(a, b).unwrap();
    let s = t.softmax(c, 1).unwrap();
    let l = probe(&mut t, s, 3).unwrap();
    t.backward(l).unwrap();
    let first = (t.grad(a).unwrap().to_vec(), t.grad(b).unwrap().to_vec());
    t.zero_grad();
    t.backward(l).unwrap();
    assert_eq!(first.0, t.grad(a).unwrap());
    assert_eq!(first.1, t.grad(b).unwrap());
}

#[test]
fn ops_leave_operands_untouched() {
    let mut r = SplitMix64::new(8);
    let x0 = random(&[3, 4], &mut r);
    let mut t = Tape::new();
    let x = t.param(x0.clone());
    let y = t.softmax(x, 1).unwrap();
    let z = t.relu(y).unwrap();
    let l = t.sum(z).unwrap();
    t.backward(l).unwrap();
    assert_eq!(t.value(x), &x0);
}

#[test]
fn non_finite_is_reported_with_op_name() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![1], vec![1e300]).unwrap());
    let err = t.scale(x, 1e300).unwrap_err();
    assert_eq!(err, TensorError::NonFinite { op: "scale" });
}

#[test]
fn elementwise_gradients() {
    let mut r = SplitMix64::new(9);
    let inputs = [random(&[2, 3], &mut r), random(&[2, 3], &mut r), random(&[3], &mut r)];
    let err = max_grad_error(&inputs, |t, v| {
        let a = t.mul(v[0], v[1])?;
        let b = t.add_row(a, v[2])?;
        let c = t.relu(b)?;
        let d = t.scale(c, 0.7)?;
        let e = t.add(d, v[0])?;
        let f = t.mask(e, vec![0.0, 2.0, 1.0, 1.0, 0.5, 3.0])?;
        probe(t, f, 13)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gather_gradient() {
    let mut r = SplitMix64::new(10);
    let inputs = [random(&[5, 3], &mut r)];
    let err = max_grad_error(&inputs, |t, v| {
        let g = t.gather(v[0], &[4, 1, 4, 0])?;
        probe(t, g, 14)
    });
    assert!(err < 1e-6, "{err}");
}

fn two_segment_layout(causal: bool) -> AttentionLayout {
    AttentionLayout {
        num_heads: 2,
        causal,
        segments: vec![
            Segment { q_start: 0, q_len: 3, k_start: 0, k_len: 3 },
            Segment { q_start: 3, q_len: 2, k_start: 3, k_len: 2 },
        ],
        key_valid: vec![true, true, false, true, true],
    }
}

#[test]
fn attention_gradient() {
    let mut r = SplitMix64::new(11);
    let inputs = [random(&[5, 4], &mut r), random(&[5, 4], &mut r), random(&[5, 4], &mut r)];
    for causal in [false, true] {
        let err = max_grad_error(&inputs, |t, v| {
            let o = t.attention(v[0], v[1], v[2], two_segment_layout(causal))?;
            probe(t, o, 15)
        });
        assert!(err < 1e-6, "causal={causal}: {err}");
    }
}

#[test]
fn attention_ignores_masked_keys() {
    let mut r = SplitMix64::new(12);
    let q = random(&[5, 4], &mut r);
    let k = random(&[5, 4], &mut r);
    let v = random(&[5, 4], &mut r);
    let run = |v: Tensor| {
        let mut t = Tape::new();
        let (qv, kv, vv) = (t.constant(q.clone()), t.constant(k.clone()), t.constant(v));
        let o = t.attention(qv, kv, vv, two_segment_layout(false)).unwrap();
        t.value(o).clone()
    };
    let base = run(v.clone());
    let mut changed = v.clone();
    changed.data_mut()[2 * 4..3 * 4].copy_from_slice(&[9.0, 9.0, 9.0, 9.0]);
    assert_eq!(base, run(changed));
}

#[test]
fn rows_of_softmax_sum_to_one() {
    let mut r = SplitMix64::new(13);
    let mut t = Tape::new();
    let x = t.constant(random(&[6, 9], &mut r));
    let y = t.softmax(x, 1).unwrap();
    for row in t.value(y).data().chunks(9) {
        assert!(row.iter().all(|p| *p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
