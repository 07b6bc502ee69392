//! Reverse-mode tape over batched matrix values.
//!
//! Every node holds a `rows × cols` matrix where rows index sample points.
//! Parameter leaves require gradients; constant leaves and everything built
//! only from constants do not, and are skipped during the backward sweep.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row` with `row` of shape `1 × cols` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    /// Elementwise product with a constant broadcast to the shape of `a`.
    MulConst(Var, Array2<f64>),
    /// `Σ c_k ⊙ v_k` with constants broadcast to the common shape.
    LinComb(Vec<(Var, Array2<f64>)>),
    Tanh(Var),
    /// `1 − a²`, the derivative of tanh expressed through its output.
    TanhDeriv(Var),
    Softplus(Var),
    Sigmoid(Var),
    Square(Var),
    /// Elementwise max; ties resolve to the first argument.
    Max(Var, Var),
    /// Sum of all entries, as a `1 × 1` matrix.
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Recorded computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `var`; exact zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Array2<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Array2<f64> {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Array2::zeros(self.shapes[var.0]),
        }
    }
}

fn broadcast_mul(a: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    let cb = c
        .broadcast(a.raw_dim())
        .expect("constant not broadcastable to operand shape");
    Zip::from(a).and(&cb).map_collect(|&x, &y| x * y)
}

fn accumulate(slot: &mut Option<Array2<f64>>, value: Array2<f64>) {
    match slot {
        Some(s) => *s += &value,
        None => *slot = Some(value),
    }
}

fn accumulate_scaled(slot: &mut Option<Array2<f64>>, g: &Array2<f64>, scale: f64) {
    match slot {
        Some(s) => s.scaled_add(scale, g),
        None => *slot = Some(g * scale),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.compute(&op);
        let requires_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Overwrite a leaf value. Call [`Tape::replay`] to refresh dependents.
    pub fn set_leaf(&mut self, v: Var, value: Array2<f64>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::invalid("var", "not a leaf"));
        }
        if node.value.dim() != value.dim() {
            return Err(Error::DimensionMismatch {
                expected: node.value.len(),
                actual: value.len(),
            });
        }
        node.value = value;
        Ok(())
    }

    /// Recompute every non-leaf node in recording order.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.compute(&op);
            self.nodes[i].value = value;
        }
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMulT(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.push(Op::AddRow(a, row))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a, c))
    }
    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Scale(a, -1.0))
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::AddScalar(a, c))
    }
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        self.push(Op::MulConst(a, c))
    }
    pub fn lin_comb(&mut self, terms: Vec<(Var, Array2<f64>)>) -> Var {
        assert!(!terms.is_empty(), "empty linear combination");
        self.push(Op::LinComb(terms))
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }
    pub fn tanh_deriv(&mut self, a: Var) -> Var {
        self.push(Op::TanhDeriv(a))
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.push(Op::Softplus(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Max(a, b))
    }
    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Max(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::MulConst(a, _)
            | Op::Tanh(a)
            | Op::TanhDeriv(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Square(a)
            | Op::Sum(a) => vec![*a],
            Op::LinComb(terms) => terms.iter().map(|(v, _)| *v).collect(),
        }
    }

    fn compute(&self, op: &Op) -> Array2<f64> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::MatMulT(a, b) => val(a).dot(&val(b).t()),
            Op::Add(a, b) => val(a) + val(b),
            Op::Sub(a, b) => val(a) - val(b),
            Op::Mul(a, b) => val(a) * val(b),
            Op::AddRow(a, row) => val(a) + val(row),
            Op::Scale(a, c) => val(a) * *c,
            Op::AddScalar(a, c) => val(a) + *c,
            Op::MulConst(a, c) => broadcast_mul(val(a), c),
            Op::LinComb(terms) => {
                let shape = terms
                    .iter()
                    .map(|(v, _)| val(v).dim())
                    .max()
                    .expect("non-empty");
                let mut out = Array2::<f64>::zeros(shape);
                for (v, c) in terms {
                    let x = val(v).broadcast(shape).expect("lin_comb shape");
                    let cb = c.broadcast(shape).expect("lin_comb coefficient shape");
                    Zip::from(&mut out)
                        .and(&x)
                        .and(&cb)
                        .for_each(|o, &x, &c| *o += c * x);
                }
                out
            }
            Op::Tanh(a) => val(a).mapv(f64::tanh),
            Op::TanhDeriv(a) => val(a).mapv(|y| 1.0 - y * y),
            Op::Softplus(a) => val(a).mapv(softplus),
            Op::Sigmoid(a) => val(a).mapv(sigmoid),
            Op::Square(a) => val(a).mapv(|x| x * x),
            Op::Max(a, b) => Zip::from(val(a))
                .and(val(b))
                .map_collect(|&x, &y| if x >= y { x } else { y }),
            Op::Sum(a) => Array2::from_elem((1, 1), val(a).sum()),
        }
    }

    /// Reverse sweep from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.nodes[output.0].value.dim(),
            (1, 1),
            "backward requires a scalar output"
        );
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let rg = |v: &Var| self.nodes[v.0].requires_grad;
            let val = |v: &Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMulT(a, b) => {
                    if rg(a) {
                        match &mut grads[a.0] {
                            Some(s) => general_mat_mul(1.0, &g, val(b), 1.0, s),
                            slot => *slot = Some(g.dot(val(b))),
                        }
                    }
                    if rg(b) {
                        match &mut grads[b.0] {
                            Some(s) => general_mat_mul(1.0, &g.t(), val(a), 1.0, s),
                            slot => *slot = Some(g.t().dot(val(a))),
                        }
                    }
                }
                Op::Add(a, b) => {
                    if rg(a) {
                        accumulate_scaled(&mut grads[a.0], &g, 1.0);
                    }
                    if rg(b) {
                        accumulate_scaled(&mut grads[b.0], &g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if rg(a) {
                        accumulate_scaled(&mut grads[a.0], &g, 1.0);
                    }
                    if rg(b) {
                        accumulate_scaled(&mut grads[b.0], &g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    if rg(a) {
                        accumulate(&mut grads[a.0], &g * val(b));
                    }
                    if rg(b) {
                        accumulate(&mut grads[b.0], &g * val(a));
                    }
                }
                Op::AddRow(a, row) => {
                    if rg(row) {
                        accumulate(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Scale(a, c) => accumulate_scaled(&mut grads[a.0], &g, *c),
                Op::AddScalar(a, _) => accumulate(&mut grads[a.0], g),
                Op::MulConst(a, c) => accumulate(&mut grads[a.0], broadcast_mul(&g, c)),
                Op::LinComb(terms) => {
                    for (v, c) in terms {
                        if !rg(v) {
                            continue;
                        }
                        let shape = val(v).dim();
                        let contrib = if g.dim() == shape {
                            broadcast_mul(&g, c)
                        } else {
                            // operand was broadcast along columns; fold back
                            let full = broadcast_mul(&g, c);
                            full.sum_axis(Axis(1)).insert_axis(Axis(1))
                        };
                        accumulate(&mut grads[v.0], contrib);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y));
                    accumulate(&mut grads[a.0], d);
                }
                Op::TanhDeriv(a) => {
                    let d = Zip::from(&g).and(val(a)).map_collect(|&g, &x| -2.0 * g * x);
                    accumulate(&mut grads[a.0], d);
                }
                Op::Softplus(a) => {
                    let d = Zip::from(&g).and(val(a)).map_collect(|&g, &x| g * sigmoid(x));
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (1.0 - y));
                    accumulate(&mut grads[a.0], d);
                }
                Op::Square(a) => {
                    let d = Zip::from(&g).and(val(a)).map_collect(|&g, &x| 2.0 * g * x);
                    accumulate(&mut grads[a.0], d);
                }
                Op::Max(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    if rg(a) {
                        let d = Zip::from(&g)
                            .and(va)
                            .and(vb)
                            .map_collect(|&g, &x, &y| if x >= y { g } else { 0.0 });
                        accumulate(&mut grads[a.0], d);
                    }
                    if rg(b) {
                        let d = Zip::from(&g)
                            .and(va)
                            .and(vb)
                            .map_collect(|&g, &x, &y| if x >= y { 0.0 } else { g });
                        accumulate(&mut grads[b.0], d);
                    }
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    accumulate(&mut grads[a.0], Array2::from_elem(val(a).dim(), s));
                }
            }
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }
}
