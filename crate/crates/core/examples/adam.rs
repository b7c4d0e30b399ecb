// Adam with global-norm clipping on a badly scaled quadratic.

use mtlab::tensor::Tensor;
use mtlab::training::{clip_grad_norm, Adam};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    // f(x) = Σ a_i (x_i - t_i)²
    let a = [100.0, 1.0, 0.01];
    let target = [1.0, -2.0, 3.0];
    let mut params = vec![Tensor::new(vec![3], vec![0.0; 3])?];
    let mut opt = Adam::new(&params, 0.01, 0.9, 0.999, 1e-8);
    for step in 1..=2000 {
        let x = params[0].data();
        let mut grads = vec![(0..3).map(|i| 2.0 * a[i] * (x[i] - target[i])).collect::<Vec<f64>>()];
        let norm = clip_grad_norm(&mut grads, 1.0);
        opt.step(&mut params, &grads);
        if step == 1 || step % 500 == 0 {
            println!("step {step:>4}: x = {:.4?}, pre-clip grad norm {norm:.3}", params[0].data());
        }
    }
    let x = params[0].data();
    assert!((x[0] - 1.0).abs() < 1e-2 && (x[1] + 2.0).abs() < 1e-2);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
