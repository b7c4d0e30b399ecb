// Build a small graph on the tape, backpropagate, and compare one gradient
// with a central finite difference.

use mtlab::tensor::{Tape, Tensor};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let x0 = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]])?;
    let w0 = Tensor::from_rows(&[&[0.2, -0.4], &[0.7, 0.1], &[-0.3, 0.9]])?;

    // loss = sum(softmax(relu(x·w)) * c)
    let loss_of = |x: &Tensor, w: &Tensor| -> Result<(Tape, mtlab::tensor::Var, mtlab::tensor::Var), Box<dyn std::error::Error>> {
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x.clone()), t.param(w.clone()));
        let h = t.matmul(xv, wv)?;
        let h = t.relu(h)?;
        let p = t.softmax(h, 1)?;
        let c = t.constant(Tensor::from_rows(&[&[1.0, 3.0], &[-2.0, 0.5]])?);
        let y = t.mul(p, c)?;
        let loss = t.sum(y)?;
        Ok((t, wv, loss))
    };

    let (mut tape, w, loss) = loss_of(&x0, &w0)?;
    tape.backward(loss)?;
    let grad = tape.grad(w).expect("w is a parameter").to_vec();
    println!("loss = {:.6}", tape.value(loss).data()[0]);
    println!("dloss/dw = {grad:.6?}");

    let h = 1e-5;
    let at = |delta: f64| -> Result<f64, Box<dyn std::error::Error>> {
        let mut w = w0.clone();
        w.data_mut()[3] += delta;
        let (t, _, l) = loss_of(&x0, &w)?;
        Ok(t.value(l).data()[0])
    };
    let numeric = (at(h)? - at(-h)?) / (2.0 * h);
    println!("w[1,1]: analytic {:.9}, numeric {:.9}", grad[3], numeric);
    assert!((numeric - grad[3]).abs() < 1e-6);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
