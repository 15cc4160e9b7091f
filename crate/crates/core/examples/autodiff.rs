//! The tape on its own: a two-layer perceptron and a finite-difference check
//! of one weight.

use mlvc::tape::Tape;
use mlvc::Tensor;

fn loss(w1: &Tensor<f64>, w2: &Tensor<f64>, x: &Tensor<f64>) -> mlvc::Result<(f64, Tensor<f64>)> {
    let mut t = Tape::new();
    let (x, w1v, w2v) = (
        t.constant(x.clone()),
        t.param(w1.clone()),
        t.param(w2.clone()),
    );
    let h = t.matmul(x, w1v)?;
    let h = t.gelu(h);
    let y = t.matmul(h, w2v)?;
    let l = t.cross_entropy(y, &[0, 2, 1])?;
    let value = t.value(l).item()?;
    let grads = t.backward(l)?;
    Ok((value, grads.get(w1v).expect("w1 is a parameter").clone()))
}

fn main() -> mlvc::Result<()> {
    let x = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
    let w1 = Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.11).cos() * 0.5);
    let w2 = Tensor::from_fn(&[5, 3], |i| (i as f64 * 0.23).sin() * 0.5);
    let (l, g) = loss(&w1, &w2, &x)?;
    let eps = 1e-6;
    let mut bumped = w1.clone();
    bumped.data_mut()[7] += eps;
    let (l2, _) = loss(&bumped, &w2, &x)?;
    println!("loss {l:.6}");
    println!(
        "dL/dw1[7]: tape {:.8}, forward difference {:.8}",
        g.data()[7],
        (l2 - l) / eps
    );
    Ok(())
}
