//! Reverse-mode autodiff with differentiable backward passes.
//!
//! Computes d/dx and d²/dx² of `f(x) = x³ + x²` by taking
//! the gradient of a gradient, then checks a small network loss against
//! central finite differences.
//!
//! ```text
//! cargo run --example autodiff
//! ```

use conml::autodiff::{finite_diff_check, ParamVector, Tape, Tensor, DEFAULT_EPS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let x2 = tape.mul(x, x)?;
    let x3 = tape.mul(x2, x)?;
    let f = tape.add(x3, x2)?;
    // create_graph keeps the first derivative on the tape so it can be differentiated again.
    let df = tape.grad(f, &[x], true)?[0];
    let d2f = tape.grad(df, &[x], false)?[0];
    println!("f(2) = {}  f'(2) = {}  f''(2) = {}", tape.scalar(f), tape.scalar(df), tape.scalar(d2f));

    let mut theta = ParamVector::new();
    theta.push("w", Tensor::new(vec![3, 2], vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7])?)?;
    theta.push("b", Tensor::vector(vec![0.05, -0.1]))?;
    let xs = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let err = finite_diff_check(
        |tape: &mut Tape, p| {
            let input = tape.leaf(xs.clone());
            let h = tape.matmul(input, p.vars[0])?;
            let h = tape.add(h, p.vars[1])?;
            let h = tape.sigmoid(h);
            let sq = tape.square(h);
            Ok::<_, conml::autodiff::AutodiffError>(tape.mean(sq))
        },
        &theta,
        DEFAULT_EPS,
    )?;
    println!("finite-difference relative error of a one-layer loss: {err:.2e}");
    Ok(())
}
