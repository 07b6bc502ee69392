//! Truncated Taylor jets recorded on a [`Tape`].
//!
//! A jet carries the value of a batched quantity together with its first
//! derivatives along `order.first` input directions and its second
//! derivatives over the leading `order.second` directions (upper triangle,
//! row-major). Missing components are structurally zero. Because every jet
//! component is itself a tape node, a reverse sweep differentiates input
//! derivatives with respect to the parameters.

use ndarray::{Array2, Axis};

use super::tape::{Tape, Var};

/// How many input directions a jet differentiates along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetOrder {
    /// Directions with first derivatives (leading input coordinates).
    pub first: usize,
    /// Leading directions with second derivatives; `second <= first`.
    pub second: usize,
}

impl JetOrder {
    pub const VALUE: JetOrder = JetOrder {
        first: 0,
        second: 0,
    };

    pub fn gradient(n: usize) -> Self {
        JetOrder {
            first: n,
            second: 0,
        }
    }

    pub fn hessian(n: usize) -> Self {
        JetOrder {
            first: n,
            second: n,
        }
    }

    pub fn pair_count(&self) -> usize {
        self.second * (self.second + 1) / 2
    }

    /// Packed index of the pair `(i, j)`, `i <= j < second`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j < self.second);
        i * self.second - i * (i + 1) / 2 + j
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.second).flat_map(move |i| (i..self.second).map(move |j| (i, j)))
    }
}

#[derive(Debug, Clone)]
pub struct Jet {
    pub value: Var,
    pub first: Vec<Option<Var>>,
    pub second: Vec<Option<Var>>,
    pub order: JetOrder,
}

fn opt_add(tape: &mut Tape, a: Option<Var>, b: Option<Var>) -> Option<Var> {
    match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)),
        (x, None) | (None, x) => x,
    }
}

fn opt_mul(tape: &mut Tape, a: Option<Var>, b: Var) -> Option<Var> {
    a.map(|a| tape.mul(a, b))
}

impl Jet {
    /// Jet of the identity map on a batch of points `x` (`rows × width`).
    pub fn input(tape: &mut Tape, x: &Array2<f64>, order: JetOrder) -> Jet {
        let (rows, width) = x.dim();
        assert!(order.first <= width && order.second <= order.first);
        let value = tape.constant(x.clone());
        let first = (0..order.first)
            .map(|i| {
                let mut e = Array2::zeros((rows, width));
                e.column_mut(i).fill(1.0);
                Some(tape.constant(e))
            })
            .collect();
        Jet {
            value,
            first,
            second: vec![None; order.pair_count()],
            order,
        }
    }

    /// Constant jet from explicit derivative columns.
    pub fn constant(
        tape: &mut Tape,
        value: Array2<f64>,
        first: Vec<Option<Array2<f64>>>,
        second: Vec<Option<Array2<f64>>>,
        order: JetOrder,
    ) -> Jet {
        assert_eq!(first.len(), order.first);
        assert_eq!(second.len(), order.pair_count());
        let value = tape.constant(value);
        let first = first.into_iter().map(|c| c.map(|c| tape.constant(c))).collect();
        let second = second.into_iter().map(|c| c.map(|c| tape.constant(c))).collect();
        Jet {
            value,
            first,
            second,
            order,
        }
    }

    /// Pick coordinate `k` of a jet of width-`n` rows (selection is linear).
    pub fn column(tape: &mut Tape, jet: &Jet, k: usize) -> Jet {
        let width = tape.value(jet.value).ncols();
        let mut sel = Array2::zeros((width, 1));
        sel[[k, 0]] = 1.0;
        let sel = tape.constant(sel.reversed_axes());
        let pick = |tape: &mut Tape, v: Option<Var>| v.map(|v| tape.matmul_t(v, sel));
        Jet {
            value: tape.matmul_t(jet.value, sel),
            first: jet.first.iter().map(|&v| pick(tape, v)).collect(),
            second: jet.second.iter().map(|&v| pick(tape, v)).collect(),
            order: jet.order,
        }
    }

    /// `Σ_k jet_k · W_kᵀ (+ bias)`; linear, so derivatives pass through.
    pub fn affine(tape: &mut Tape, terms: &[(&Jet, Var)], bias: Option<Var>) -> Jet {
        let order = terms[0].0.order;
        let mut value: Option<Var> = None;
        let mut first = vec![None; order.first];
        let mut second = vec![None; order.pair_count()];
        for (jet, w) in terms {
            debug_assert_eq!(jet.order, order);
            let v = tape.matmul_t(jet.value, *w);
            value = opt_add(tape, value, Some(v));
            for (acc, d) in first.iter_mut().zip(&jet.first) {
                if let Some(d) = d {
                    let p = tape.matmul_t(*d, *w);
                    *acc = opt_add(tape, *acc, Some(p));
                }
            }
            for (acc, d) in second.iter_mut().zip(&jet.second) {
                if let Some(d) = d {
                    let p = tape.matmul_t(*d, *w);
                    *acc = opt_add(tape, *acc, Some(p));
                }
            }
        }
        let mut value = value.expect("affine needs at least one term");
        if let Some(b) = bias {
            value = tape.add_row(value, b);
        }
        Jet {
            value,
            first,
            second,
            order,
        }
    }

    pub fn add(tape: &mut Tape, a: &Jet, b: &Jet) -> Jet {
        let value = tape.add(a.value, b.value);
        let first = a
            .first
            .iter()
            .zip(&b.first)
            .map(|(&x, &y)| opt_add(tape, x, y))
            .collect();
        let second = a
            .second
            .iter()
            .zip(&b.second)
            .map(|(&x, &y)| opt_add(tape, x, y))
            .collect();
        Jet {
            value,
            first,
            second,
            order: a.order,
        }
    }

    pub fn sub(tape: &mut Tape, a: &Jet, b: &Jet) -> Jet {
        let nb = Jet::scale(tape, b, -1.0);
        Jet::add(tape, a, &nb)
    }

    pub fn scale(tape: &mut Tape, a: &Jet, c: f64) -> Jet {
        Jet {
            value: tape.scale(a.value, c),
            first: a.first.iter().map(|v| v.map(|v| tape.scale(v, c))).collect(),
            second: a.second.iter().map(|v| v.map(|v| tape.scale(v, c))).collect(),
            order: a.order,
        }
    }

    /// `1 − a`
    pub fn one_minus(tape: &mut Tape, a: &Jet) -> Jet {
        let neg = Jet::scale(tape, a, -1.0);
        Jet {
            value: tape.add_scalar(neg.value, 1.0),
            ..neg
        }
    }

    /// Product rule up to second order.
    pub fn mul(tape: &mut Tape, a: &Jet, b: &Jet) -> Jet {
        let order = a.order;
        let value = tape.mul(a.value, b.value);
        let mut first = Vec::with_capacity(order.first);
        for i in 0..order.first {
            let x = opt_mul(tape, a.first[i], b.value);
            let y = opt_mul(tape, b.first[i], a.value);
            first.push(opt_add(tape, x, y));
        }
        let mut second = Vec::with_capacity(order.pair_count());
        for (i, j) in order.pairs() {
            let p = order.pair_index(i, j);
            let mut acc = opt_mul(tape, a.second[p], b.value);
            let t = opt_mul(tape, b.second[p], a.value);
            acc = opt_add(tape, acc, t);
            if let (Some(ai), Some(bj)) = (a.first[i], b.first[j]) {
                let t = tape.mul(ai, bj);
                acc = opt_add(tape, acc, Some(t));
            }
            if let (Some(aj), Some(bi)) = (a.first[j], b.first[i]) {
                let t = tape.mul(aj, bi);
                acc = opt_add(tape, acc, Some(t));
            }
            second.push(acc);
        }
        Jet {
            value,
            first,
            second,
            order,
        }
    }

    /// Chain rule for a scalar map `φ` given `φ(v)`, `φ'(v)` and `φ''(v)`
    /// as tape nodes.
    fn compose(tape: &mut Tape, a: &Jet, y: Var, d1: Var, d2: Option<Var>) -> Jet {
        let order = a.order;
        let first: Vec<Option<Var>> = a.first.iter().map(|v| opt_mul(tape, *v, d1)).collect();
        let mut second = Vec::with_capacity(order.pair_count());
        for (i, j) in order.pairs() {
            let p = order.pair_index(i, j);
            let mut acc = opt_mul(tape, a.second[p], d1);
            if let (Some(d2), Some(vi), Some(vj)) = (d2, a.first[i], a.first[j]) {
                let t = tape.mul(vi, vj);
                let t = tape.mul(t, d2);
                acc = opt_add(tape, acc, Some(t));
            }
            second.push(acc);
        }
        Jet {
            value: y,
            first,
            second,
            order,
        }
    }

    pub fn tanh(tape: &mut Tape, a: &Jet) -> Jet {
        let y = tape.tanh(a.value);
        if a.order.first == 0 {
            return Jet {
                value: y,
                first: vec![],
                second: vec![],
                order: a.order,
            };
        }
        let d1 = tape.tanh_deriv(y);
        let d2 = (a.order.second > 0).then(|| {
            let yd = tape.mul(y, d1);
            tape.scale(yd, -2.0)
        });
        Jet::compose(tape, a, y, d1, d2)
    }

    pub fn softplus(tape: &mut Tape, a: &Jet) -> Jet {
        let y = tape.softplus(a.value);
        if a.order.first == 0 {
            return Jet {
                value: y,
                first: vec![],
                second: vec![],
                order: a.order,
            };
        }
        let s = tape.sigmoid(a.value);
        let d2 = (a.order.second > 0).then(|| {
            let one_minus = tape.scale(s, -1.0);
            let one_minus = tape.add_scalar(one_minus, 1.0);
            tape.mul(s, one_minus)
        });
        Jet::compose(tape, a, y, s, d2)
    }

    /// Value column as a plain vector (jet of a width-one quantity).
    pub fn values(&self, tape: &Tape) -> ndarray::Array1<f64> {
        tape.value(self.value).index_axis(Axis(1), 0).to_owned()
    }

    /// First derivatives as a `rows × first` matrix, zeros where absent.
    pub fn gradient_matrix(&self, tape: &Tape) -> Array2<f64> {
        let rows = tape.value(self.value).nrows();
        let mut g = Array2::zeros((rows, self.order.first));
        for (i, d) in self.first.iter().enumerate() {
            if let Some(d) = d {
                g.column_mut(i).assign(&tape.value(*d).column(0));
            }
        }
        g
    }

    /// Second derivative column for pair `(i, j)`, zeros where absent.
    pub fn second_column(&self, tape: &Tape, i: usize, j: usize) -> ndarray::Array1<f64> {
        let rows = tape.value(self.value).nrows();
        match self.second[self.order.pair_index(i, j)] {
            Some(v) => tape.value(v).column(0).to_owned(),
            None => ndarray::Array1::zeros(rows),
        }
    }
}
