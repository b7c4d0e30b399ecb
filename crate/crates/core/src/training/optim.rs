use crate::tensor::Tensor;

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first step is lr · g/|g| (up to eps).
        let mut p = vec![Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()];
        let mut opt = Adam::new(&p, 0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[vec![3.0, -0.5]]);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-7);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![Tensor::new(vec![3], vec![2.0, -3.0, 0.5]).unwrap()];
        let mut opt = Adam::new(&p, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g: Vec<f64> = p[0].data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[g]);
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let p0 = vec![Tensor::new(vec![3], vec![0.25, -0.0, 7.0]).unwrap()];
        let mut p = p0.clone();
        let mut opt = Adam::new(&p, 0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[vec![1.0, 2.0, -3.0]]);
        assert_eq!(p, p0);
    }

    proptest! {
        #[test]
        fn clipped_norm_within_bound(
            a in proptest::collection::vec(-50.0f64..50.0, 1..20),
            b in proptest::collection::vec(-50.0f64..50.0, 1..20),
            clip in 0.01f64..10.0,
        ) {
            let mut g = vec![a, b];
            let before = global_norm(&g);
            let reported = clip_grad_norm(&mut g, clip);
            prop_assert_eq!(before, reported);
            prop_assert!(global_norm(&g) <= clip + 1e-9);
            if before <= clip {
                prop_assert!((global_norm(&g) - before).abs() < 1e-12);
            }
        }
    }
}
