//! Minimal reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records eagerly evaluated operations; [`Tape::backward`] walks
//! the record in reverse and accumulates gradients. Scalars are `(1, 1)`
//! arrays so one node type covers losses, activations, and weights.
//!
//! The operation set is exactly what the models in this crate need: dense
//! affine layers, gated recurrences, row-wise attention, concatenation and
//! row gathering for batching, and the stable primitives (`softplus`,
//! row-softmax with max subtraction, branch-stable `sigmoid`) the losses are
//! built from. Every operation's gradient is locked down by the
//! finite-difference tests at the bottom of this file.

use crate::scalar::{lit, Scalar};
use ndarray::{concatenate, s, Array2, Axis};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// `(r, c) + (1, c)` with the row broadcast over all rows.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    /// Gather rows by index; backward scatter-adds into the source.
    SelectRows(usize, Vec<usize>),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, S),
    Softplus(usize),
    SoftmaxRows(usize),
    SumAll(usize),
    MeanAll(usize),
}

struct Node<S: Scalar> {
    value: Array2<S>,
    op: Op<S>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `v`; zero-shaped `None` means the
    /// variable did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Array2<S>> {
        self.grads[v.0].as_ref()
    }

    /// Moves the gradient for `v` out of the set.
    pub fn take(&mut self, v: Var) -> Option<Array2<S>> {
        self.grads[v.0].take()
    }
}

/// Recorded computation over `Array2<S>` values.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded variable.
    pub fn value(&self, v: Var) -> &Array2<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input value (parameter or constant).
    pub fn leaf(&mut self, value: Array2<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Matrix product `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    /// Elementwise sum of same-shape values.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    /// `(r, c)` plus a `(1, c)` row broadcast to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    /// Elementwise product of same-shape values.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * k);
        self.push(v, Op::Scale(a.0, k))
    }

    /// Horizontal concatenation of equal-row-count values.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols shapes agree");
        self.push(v, Op::ConcatCols(parts.iter().map(|v| v.0).collect()))
    }

    /// Vertical concatenation of equal-column-count values.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows shapes agree");
        self.push(v, Op::ConcatRows(parts.iter().map(|v| v.0).collect()))
    }

    /// Gathers `indices` rows of `a` into a new value, in order. Indices may
    /// repeat; backward scatter-adds.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = &self.nodes[a.0].value;
        let mut v = Array2::zeros((indices.len(), src.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).assign(&src.row(i));
        }
        self.push(v, Op::SelectRows(a.0, indices.to_vec()))
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    /// Elementwise logistic function, branch-stable for large `|x|`.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(sigmoid_scalar);
        self.push(v, Op::Sigmoid(a.0))
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.tanh());
        self.push(v, Op::Tanh(a.0))
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| if x > S::zero() { x } else { S::zero() });
        self.push(v, Op::Relu(a.0))
    }

    /// Elementwise leaky rectifier with the given negative slope.
    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        let v = self.nodes[a.0]
            .value
            .mapv(|x| if x > S::zero() { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a.0, slope))
    }

    /// Elementwise `ln(1 + e^x)`, computed as `max(x,0) + ln1p(e^-|x|)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(softplus_scalar);
        self.push(v, Op::Softplus(a.0))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let mut v = src.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: S = row.iter().cloned().sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Sum of all entries, as a `(1, 1)` value.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: S = self.nodes[a.0].value.iter().cloned().sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a.0))
    }

    /// Mean of all entries, as a `(1, 1)` value.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = &self.nodes[a.0].value;
        let s: S = value.iter().cloned().sum();
        let m = s / lit(value.len() as f64);
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a.0))
    }

    /// Reverse pass from a scalar `(1, 1)` loss. Returns one gradient slot
    /// per recorded node.
    pub fn backward(&self, loss: Var) -> Gradients<S> {
        assert_eq!(
            self.nodes[loss.0].value.dim(),
            (1, 1),
            "backward requires a scalar (1,1) loss"
        );
        let mut grads: Vec<Option<Array2<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), S::one()));

        for idx in (0..=loss.0).rev() {
            // Intermediate gradients are consumed as they propagate; leaves
            // keep theirs so callers can collect them afterwards.
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g.clone());
                }
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*row], grow);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads[*a], g.mapv(|x| x * *k));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let slice = g.slice(s![.., offset..offset + w]).to_owned();
                        accumulate(&mut grads[p], slice);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.nodes[p].value.nrows();
                        let slice = g.slice(s![offset..offset + h, ..]).to_owned();
                        accumulate(&mut grads[p], slice);
                        offset += h;
                    }
                }
                Op::SelectRows(a, indices) => {
                    let src = &self.nodes[*a].value;
                    let mut ga = Array2::zeros(src.dim());
                    for (r, &i) in indices.iter().enumerate() {
                        let mut row = ga.row_mut(i);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads[*a], ga);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads[*a], g.t().to_owned());
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = &g * &y.mapv(|y| y * (S::one() - y));
                    accumulate(&mut grads[*a], ga);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = &g * &y.mapv(|y| S::one() - y * y);
                    accumulate(&mut grads[*a], ga);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = &g * &x.mapv(|x| if x > S::zero() { S::one() } else { S::zero() });
                    accumulate(&mut grads[*a], ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let x = &self.nodes[*a].value;
                    let ga = &g * &x.mapv(|x| if x > S::zero() { S::one() } else { slope });
                    accumulate(&mut grads[*a], ga);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = &g * &x.mapv(sigmoid_scalar);
                    accumulate(&mut grads[*a], ga);
                }
                Op::SoftmaxRows(a) => {
                    // Per row: dx = y * (g - <g, y>).
                    let y = &self.nodes[idx].value;
                    let mut ga = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: S = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                        for c in 0..y.ncols() {
                            ga[[r, c]] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads[*a], ga);
                }
                Op::SumAll(a) => {
                    let k = g[[0, 0]];
                    let shape = self.nodes[*a].value.dim();
                    accumulate(&mut grads[*a], Array2::from_elem(shape, k));
                }
                Op::MeanAll(a) => {
                    let shape = self.nodes[*a].value.dim();
                    let k = g[[0, 0]] / lit((shape.0 * shape.1) as f64);
                    accumulate(&mut grads[*a], Array2::from_elem(shape, k));
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Array2<S>>, g: Array2<S>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Branch-stable logistic function.
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Overflow-stable `ln(1 + e^x)`.
pub fn softplus_scalar<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}
