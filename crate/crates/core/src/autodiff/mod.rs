//! Differentiation engine: reverse mode over parameters, nested forward
//! jets over inputs.
//!
//! The reverse sweep runs on a [`Tape`] of batched matrices. Input
//! derivatives are carried by [`Jet`]s whose components live on the same
//! tape, so a loss built from `∇ₓf` or `∇²ₓf` is itself differentiable with
//! respect to the parameters.

mod jet;
mod tape;

pub use jet::{Jet, JetOrder};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// A scalar function of a batch of input points, expressible as jet ops.
pub trait JetFunction {
    fn input_width(&self) -> usize;

    /// Evaluate on the batch carried by `input`; the result has width one.
    fn eval_jet(&self, tape: &mut Tape, input: &Jet) -> Result<Jet>;
}

fn check_width(f: &impl JetFunction, width: usize) -> Result<()> {
    if f.input_width() != width {
        return Err(Error::DimensionMismatch {
            expected: f.input_width(),
            actual: width,
        });
    }
    Ok(())
}

fn point_batch(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}

fn ensure_finite(values: impl IntoIterator<Item = f64>, context: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Values and gradients of `f` on every row of `x`.
pub fn input_gradient_batch(
    f: &impl JetFunction,
    x: &Array2<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    check_width(f, x.ncols())?;
    let mut tape = Tape::new();
    let input = Jet::input(&mut tape, x, JetOrder::gradient(x.ncols()));
    let out = f.eval_jet(&mut tape, &input)?;
    let values = out.values(&tape);
    let grads = out.gradient_matrix(&tape);
    ensure_finite(values.iter().chain(grads.iter()).copied(), "input gradient")?;
    Ok((values, grads))
}

/// `f(x)` and `∇ₓf(x)` at a single point.
pub fn input_gradient(f: &impl JetFunction, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (v, g) = input_gradient_batch(f, &point_batch(x))?;
    Ok((v[0], g.row(0).to_vec()))
}

/// Values, gradients and Hessians (`rows` matrices of `width × width`).
pub fn input_hessian_batch(
    f: &impl JetFunction,
    x: &Array2<f64>,
) -> Result<(Array1<f64>, Array2<f64>, Vec<Array2<f64>>)> {
    check_width(f, x.ncols())?;
    let n = x.ncols();
    let mut tape = Tape::new();
    let order = JetOrder::hessian(n);
    let input = Jet::input(&mut tape, x, order);
    let out = f.eval_jet(&mut tape, &input)?;
    let values = out.values(&tape);
    let grads = out.gradient_matrix(&tape);
    let mut hessians = vec![Array2::zeros((n, n)); x.nrows()];
    for (i, j) in order.pairs() {
        let col = out.second_column(&tape, i, j);
        for (h, &c) in hessians.iter_mut().zip(col.iter()) {
            h[[i, j]] = c;
            h[[j, i]] = c;
        }
    }
    ensure_finite(
        values
            .iter()
            .chain(grads.iter())
            .chain(hessians.iter().flat_map(|h| h.iter()))
            .copied(),
        "input hessian",
    )?;
    Ok((values, grads, hessians))
}

/// `f(x)`, `∇ₓf(x)` and `∇²ₓf(x)` at a single point. Only the upper
/// triangle is propagated, so the result is symmetric by construction.
pub fn input_hessian(f: &impl JetFunction, x: &[f64]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
    let (v, g, mut h) = input_hessian_batch(f, &point_batch(x))?;
    Ok((v[0], g.row(0).to_vec(), h.remove(0)))
}

/// Loss value and its gradient with respect to every tensor in `params`.
///
/// `build` receives a fresh tape with `params` registered as leaves (same
/// order) and returns the `1 × 1` loss node.
pub fn grad_wrt_params<F>(params: &[Array2<f64>], build: F) -> Result<(f64, Vec<Array2<f64>>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "loss".into(),
        });
    }
    let mut grads = tape.backward(loss);
    Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Product;
    impl JetFunction for Product {
        fn input_width(&self) -> usize {
            2
        }
        fn eval_jet(&self, tape: &mut Tape, input: &Jet) -> Result<Jet> {
            let a = Jet::column(tape, input, 0);
            let b = Jet::column(tape, input, 1);
            Ok(Jet::mul(tape, &a, &b))
        }
    }

    struct FirstSquared;
    impl JetFunction for FirstSquared {
        fn input_width(&self) -> usize {
            1
        }
        fn eval_jet(&self, tape: &mut Tape, input: &Jet) -> Result<Jet> {
            Ok(Jet::mul(tape, input, input))
        }
    }

    #[test]
    fn product_gradient() {
        let (v, g) = input_gradient(&Product, &[2.0, 3.0]).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(g, vec![3.0, 2.0]);
    }

    #[test]
    fn product_hessian() {
        let (_, _, h) = input_hessian(&Product, &[2.0, 3.0]).unwrap();
        assert_eq!(h, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn square_hessian() {
        let (v, g, h) = input_hessian(&FirstSquared, &[1.0]).unwrap();
        assert_eq!((v, g[0], h[[0, 0]]), (1.0, 2.0, 2.0));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        assert!(matches!(
            input_gradient(&Product, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quadratic_param_gradient() {
        let params = vec![array![[3.0]], array![[5.0]]];
        let (loss, g) = grad_wrt_params(&params, |t, p| {
            let sq = t.square(p[0]);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g[0][[0, 0]], 6.0);
        assert_eq!(g[1][[0, 0]], 0.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = vec![array![[1.0, 2.0]]];
        let (_, g) = grad_wrt_params(&params, |t, _| {
            let c = t.constant(array![[4.0]]);
            Ok(t.sum(c))
        })
        .unwrap();
        assert!(g[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nan_loss_is_rejected() {
        let params = vec![array![[f64::NAN]]];
        let r = grad_wrt_params(&params, |t, p| Ok(t.sum(p[0])));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
