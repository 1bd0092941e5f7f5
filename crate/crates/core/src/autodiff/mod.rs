//! Forward-mode duals, nested second-order duals, and a reverse-mode tape.

mod dual;
mod tape;

pub use dual::{sigmoid, Dual, Dual2, Scalar};
pub use tape::{Gradients, Tape, Var};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Jacobian-vector product `J_f(x)·v`, evaluated by pushing dual numbers
/// through `f`. No Jacobian matrix is formed.
pub fn jvp<F>(f: F, x: &[f64], v: &[f64]) -> Result<Vec<f64>>
where
    F: FnOnce(&[Dual]) -> Vec<Dual>,
{
    if x.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "jvp: point has {} entries, direction has {}",
            x.len(),
            v.len()
        )));
    }
    let xs: Vec<Dual> = x.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect();
    let out: Vec<f64> = f(&xs).into_iter().map(|d| d.deriv).collect();
    if out.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite { context: "jvp".into() });
    }
    Ok(out)
}

/// Reverse-mode gradient of a scalar loss built on a tape from a single
/// `1×p` parameter row. Returns the loss value and its gradient.
pub fn grad<F>(params: &[f64], loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = tape.leaf(Array2::from_shape_vec((1, params.len()), params.to_vec()).expect("row shape"));
    let y = loss(&mut tape, p)?;
    let value = tape.scalar(y);
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "loss".into() });
    }
    let g = tape.backward(y)?;
    let grad = match g.wrt(p) {
        Some(a) => a.iter().copied().collect(),
        None => vec![0.0; params.len()],
    };
    Ok((value, grad))
}
