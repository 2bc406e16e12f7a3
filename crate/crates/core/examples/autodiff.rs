//! Reverse-mode gradients of a small expression.

use mgfuse::autodiff::{Array, Tape};

fn main() -> mgfuse::Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(Array::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0])?);
    let w = tape.leaf(Array::new(vec![3, 1], vec![0.2, -0.4, 0.6])?);
    let y = tape.matmul(x, w)?;
    let y = tape.sigmoid(y);
    let loss = tape.mean(y);
    let grads = tape.backward(loss)?;
    println!("loss      {:.6}", tape.value(loss).item());
    println!("dloss/dw  {:?}", grads.get(w).expect("leaf").data());
    println!("dloss/dx  {:?}", grads.get(x).expect("leaf").data());
    Ok(())
}
