//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse and accumulates adjoints. A tape is meant to be
//! rebuilt for each minibatch.

use nalgebra::DMatrix;

use super::params::{ParamId, ParamStore};

pub type Matrix = DMatrix<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients aligned with a [`ParamStore`]'s ids.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.index()]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds a 1 x k row vector to every row of a b x k matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "bias must be a row vector");
        assert_eq!(b.ncols(), self.value(x).ncols(), "bias width mismatch");
        let mut value = self.value(x).clone();
        for (j, mut col) in value.column_iter_mut().enumerate() {
            let bj = b[(0, j)];
            col.iter_mut().for_each(|v| *v += bj);
        }
        self.push(value, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).component_mul(self.value(b));
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_element(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Matrix::from_element(1, 1, self.value(a).mean());
        self.push(value, Op::Mean(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.nrows(), vb.nrows(), "row mismatch in concat");
        let mut value = Matrix::zeros(va.nrows(), va.ncols() + vb.ncols());
        value.columns_mut(0, va.ncols()).copy_from(va);
        value.columns_mut(va.ncols(), vb.ncols()).copy_from(vb);
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).columns(start, len).into_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not
    /// depend on receive an all-zero gradient.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::from_element(1, 1, 1.0));
        let mut grads: Vec<Matrix> = store
            .iter_ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                Matrix::zeros(r, c)
            })
            .collect();

        fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Constant => {}
                Op::Param(id) => grads[id.index()] += &g,
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(b).transpose();
                    let gb = self.value(a).transpose() * &g;
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::AddBias(x, bias) => {
                    let gb = g.row_sum();
                    accumulate(&mut adj, bias, Matrix::from_row_slice(1, gb.len(), gb.as_slice()));
                    accumulate(&mut adj, x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, -g);
                }
                Op::Mul(a, b) => {
                    let ga = g.component_mul(self.value(b));
                    let gb = g.component_mul(self.value(a));
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::Scale(a, factor) => accumulate(&mut adj, a, g * factor),
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gi, t| gi * (1.0 - t * t));
                    accumulate(&mut adj, a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.component_mul(&node.value);
                    accumulate(&mut adj, a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(a), |gi, x| gi / x);
                    accumulate(&mut adj, a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(a), |gi, x| 2.0 * gi * x);
                    accumulate(&mut adj, a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut adj, a, Matrix::from_element(r, c, g[(0, 0)]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(a).shape();
                    let n = (r * c) as f64;
                    accumulate(&mut adj, a, Matrix::from_element(r, c, g[(0, 0)] / n));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(a).ncols();
                    let cb = self.value(b).ncols();
                    accumulate(&mut adj, a, g.columns(0, ca).into_owned());
                    accumulate(&mut adj, b, g.columns(ca, cb).into_owned());
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    ga.columns_mut(start, g.ncols()).copy_from(&g);
                    accumulate(&mut adj, a, ga);
                }
            }
        }
        Gradients { grads }
    }
}
