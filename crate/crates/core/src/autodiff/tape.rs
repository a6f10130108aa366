use super::tensor::gemm;
use super::{AutodiffError, ParameterSet, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Element-wise operations selectable through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Neg,
    Tanh,
    Exp,
    Log,
    Relu,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug)]
enum Op {
    Input { watched: bool },
    Param { set: u64, index: usize },
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize, bc: Broadcast },
    Mul { a: usize, b: usize, bc: Broadcast },
    AddRow { a: usize, row: usize },
    Neg(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Square(usize),
    Scale(usize, f64),
    Offset(usize),
    Reshape(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    ColAffine { a: usize, scale: Vec<f64> },
    Sum { a: usize, axis: Option<usize> },
    Mean { a: usize, axis: Option<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceCols { a: usize, start: usize, end: usize },
    /// Per-row Jacobian `[rows, out, in]` of an opaque row map.
    RowJacobian { a: usize, jac: Vec<f64> },
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(usize)) {
        match self {
            Op::Input { .. } | Op::Param { .. } => {}
            Op::MatMul { a, b } | Op::Add { a, b, .. } | Op::Mul { a, b, .. } | Op::AddRow { a, row: b } => {
                f(*a);
                f(*b);
            }
            Op::Neg(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Reshape(a)
            | Op::Clamp { a, .. }
            | Op::ColAffine { a, .. }
            | Op::Sum { a, .. }
            | Op::Mean { a, .. }
            | Op::SliceCols { a, .. }
            | Op::RowJacobian { a, .. } => f(*a),
            Op::ConcatCols { parts } => parts.iter().copied().for_each(f),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of watched inputs produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a watched input, if it influenced the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// A dynamic computation graph, rebuilt for every forward pass.
///
/// Node ids increase in creation order, so the graph is a DAG by construction and
/// reverse creation order is a valid topological order for backpropagation.
/// A tape is single-threaded; use one tape per concurrent computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn scalar_like(t: &Tensor) -> bool {
    t.len() == 1
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), AutodiffError> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, len: usize, f: impl Fn(&mut [f64])) {
    let buf = acc.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        check_finite(op_name, value.data())?;
        Ok(self.push(value, op))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input { watched: false })
    }

    /// Leaf whose gradient is reported in [`Gradients`].
    pub fn watch(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input { watched: true })
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    /// Leaf bound to parameter `index` of `set`.
    pub fn param(&mut self, set: &ParameterSet, index: usize) -> Var {
        self.push(
            set.value(index).clone(),
            Op::Param {
                set: set.id(),
                index,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let value = Tensor::from_parts(vec![m, n], out);
        self.push_checked("matmul", value, Op::MatMul { a: a.0, b: b.0 })
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Ok(Broadcast::Same)
        } else if scalar_like(av) {
            Ok(Broadcast::LhsScalar)
        } else if scalar_like(bv) {
            Ok(Broadcast::RhsScalar)
        } else {
            Err(AutodiffError::Shape {
                op,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            })
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Broadcast), AutodiffError> {
        let bc = self.broadcast(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let value = match bc {
            Broadcast::Same => Tensor::from_parts(
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::LhsScalar => {
                let x = av.data()[0];
                Tensor::from_parts(bv.shape().to_vec(), bv.data().iter().map(|&y| f(x, y)).collect())
            }
            Broadcast::RhsScalar => {
                let y = bv.data()[0];
                Tensor::from_parts(av.shape().to_vec(), av.data().iter().map(|&x| f(x, y)).collect())
            }
        };
        Ok((value, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (value, bc) = self.binary("add", a, b, |x, y| x + y)?;
        self.push_checked("add", value, Op::Add { a: a.0, b: b.0, bc })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (value, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push_checked("mul", value, Op::Mul { a: a.0, b: b.0, bc })
    }

    /// Adds a length-`n` row vector to every row of an `[rows, n]` matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (av, rv) = (self.value(a), self.value(row));
        if av.rank() != 2 || rv.len() != av.cols() {
            return Err(AutodiffError::Shape {
                op: "add_row",
                lhs: av.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let cols = av.cols();
        let r = rv.data();
        let data = av
            .data()
            .chunks(cols.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        self.push_checked("add_row", value, Op::AddRow { a: a.0, row: row.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(f);
        self.push_checked(name, value, op)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("neg", a, |x| -x, Op::Neg(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("exp", a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::Domain { op: "log" });
        }
        self.unary("log", a, f64::ln, Op::Log(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("square", a, |x| x * x, Op::Square(a.0))
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary("scale", a, |x| c * x, Op::Scale(a.0, c))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary("offset", a, |x| x + c, Op::Offset(a.0))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                lhs: av.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::from_parts(shape.to_vec(), av.data().to_vec());
        Ok(self.push(value, Op::Reshape(a.0)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp { a: a.0, lo, hi })
    }

    /// Column-wise `a[:, j]·scale[j] + shift[j]` with constant `scale`/`shift`.
    pub fn col_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let cols = av.cols();
        if av.rank() != 2 || scale.len() != cols || shift.len() != cols {
            return Err(AutodiffError::Shape {
                op: "col_affine",
                lhs: av.shape().to_vec(),
                rhs: vec![scale.len()],
            });
        }
        let data = av
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().enumerate().map(|(j, &x)| x * scale[j] + shift[j]))
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        self.push_checked(
            "col_affine",
            value,
            Op::ColAffine {
                a: a.0,
                scale: scale.to_vec(),
            },
        )
    }

    /// Dispatches an [`Elementwise`] op over one or two arguments.
    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var, AutodiffError> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(AutodiffError::Arity {
                op: "elementwise",
                expected: arity,
                got: args.len(),
            });
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Neg => self.neg(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Exp => self.exp(args[0]),
            Elementwise::Log => self.log(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Square => self.square(args[0]),
        }
    }

    fn reduce_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        (outer, shape[axis], inner)
    }

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let value = match axis {
            None => {
                let s: f64 = av.data().iter().sum();
                let n = av.len().max(1) as f64;
                Tensor::scalar(if mean { s / n } else { s })
            }
            Some(ax) => {
                if ax >= av.rank() {
                    return Err(AutodiffError::Axis { axis: ax, rank: av.rank() });
                }
                let (outer, len, inner) = Self::reduce_dims(av.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let d = av.data();
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += d[base + i];
                        }
                    }
                }
                if mean && len > 0 {
                    out.iter_mut().for_each(|x| *x /= len as f64);
                }
                let mut shape = av.shape().to_vec();
                shape.remove(ax);
                Tensor::from_parts(shape, out)
            }
        };
        let op = if mean {
            Op::Mean { a: a.0, axis }
        } else {
            Op::Sum { a: a.0, axis }
        };
        self.push_checked("reduce", value, op)
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        self.reduce(a, axis, true)
    }

    /// Horizontal concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows() != rows {
                return Err(AutodiffError::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_parts(vec![rows, total], data);
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 || start > end || end > av.cols() {
            return Err(AutodiffError::Shape {
                op: "slice_cols",
                lhs: av.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let rows = av.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let value = Tensor::from_parts(vec![rows, end - start], data);
        Ok(self.push(value, Op::SliceCols { a: a.0, start, end }))
    }

    /// Applies an opaque function row by row and differentiates it with central
    /// finite differences of step `h`.
    pub fn row_map_fd(
        &mut self,
        a: Var,
        out_cols: usize,
        h: f64,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(AutodiffError::Shape {
                op: "row_map_fd",
                lhs: av.shape().to_vec(),
                rhs: vec![out_cols],
            });
        }
        let (rows, in_cols) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(rows * out_cols);
        let mut jac = vec![0.0; rows * out_cols * in_cols];
        let mut probe = vec![0.0; in_cols];
        for r in 0..rows {
            let x = av.row(r);
            let y = f(x);
            if y.len() != out_cols {
                return Err(AutodiffError::Shape {
                    op: "row_map_fd",
                    lhs: vec![out_cols],
                    rhs: vec![y.len()],
                });
            }
            out.extend_from_slice(&y);
            for i in 0..in_cols {
                probe.copy_from_slice(x);
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                for o in 0..out_cols {
                    jac[(r * out_cols + o) * in_cols + i] = (up[o] - down[o]) / (2.0 * h);
                }
            }
        }
        check_finite("row_map_fd", &jac)?;
        let value = Tensor::from_parts(vec![rows, out_cols], out);
        self.push_checked("row_map_fd", value, Op::RowJacobian { a: a.0, jac })
    }

    /// Reverse-mode sweep from a scalar `root`.
    ///
    /// Parameter leaves whose set is in `params` accumulate into that set's gradient
    /// buffers; leaves of other sets are treated as constants. Watched inputs get
    /// their gradients returned.
    pub fn backward(&self, root: Var, params: &mut [&mut ParameterSet]) -> Result<Gradients, AutodiffError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let set_ids: Vec<u64> = params.iter().map(|p| p.id()).collect();

        let n = root.0 + 1;
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.nodes[i].op {
                Op::Input { watched } => *watched,
                Op::Param { set, .. } => set_ids.contains(set),
                op => {
                    let mut any = false;
                    op.for_each_input(|j| any |= needs[j]);
                    any
                }
            };
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);
        let mut out_grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();

        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input { .. } => {
                    out_grads[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Param { set, index } => {
                    let pos = set_ids.iter().position(|s| s == set).expect("needs implies requested set");
                    params[pos].accumulate_grad(*index, &g);
                }
                op => self.propagate(op, &node.value, &g, &needs, &mut grads),
            }
        }
        Ok(Gradients { grads: out_grads })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], needs: &[bool], grads: &mut [Option<Vec<f64>>]) {
        let val = |j: usize| &self.nodes[j].value;
        match op {
            Op::Input { .. } | Op::Param { .. } => unreachable!(),
            Op::MatMul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs[*a] {
                    // grad_a = g · bᵀ
                    add_into(&mut grads[*a], m * k, |buf| gemm(m, n, k, g, false, bv.data(), true, buf, true));
                }
                if needs[*b] {
                    // grad_b = aᵀ · g
                    add_into(&mut grads[*b], k * n, |buf| gemm(k, m, n, av.data(), true, g, false, buf, true));
                }
            }
            Op::Add { a, b, bc } => {
                let total: f64 = g.iter().sum();
                for (side, is_scalar) in [(*a, *bc == Broadcast::LhsScalar), (*b, *bc == Broadcast::RhsScalar)] {
                    if !needs[side] {
                        continue;
                    }
                    let len = val(side).len();
                    if is_scalar {
                        add_into(&mut grads[side], len, |buf| buf[0] += total);
                    } else {
                        add_into(&mut grads[side], len, |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                    }
                }
            }
            Op::Mul { a, b, bc } => {
                let (av, bv) = (val(*a), val(*b));
                for (side, other, is_scalar) in [
                    (*a, bv, *bc == Broadcast::LhsScalar),
                    (*b, av, *bc == Broadcast::RhsScalar),
                ] {
                    if !needs[side] {
                        continue;
                    }
                    let len = val(side).len();
                    if is_scalar {
                        let s: f64 = g.iter().zip(other.data()).map(|(x, y)| x * y).sum();
                        add_into(&mut grads[side], len, |buf| buf[0] += s);
                    } else if other.len() == 1 {
                        let o = other.data()[0];
                        add_into(&mut grads[side], len, |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y * o));
                    } else {
                        add_into(&mut grads[side], len, |buf| {
                            for ((x, y), o) in buf.iter_mut().zip(g).zip(other.data()) {
                                *x += y * o;
                            }
                        });
                    }
                }
            }
            Op::AddRow { a, row } => {
                let cols = val(*row).len();
                if needs[*a] {
                    add_into(&mut grads[*a], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
                if needs[*row] {
                    add_into(&mut grads[*row], cols, |buf| {
                        for chunk in g.chunks(cols.max(1)) {
                            buf.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Neg(a) => self.pointwise(*a, grads, g, |gi, _, _| -gi),
            Op::Tanh(a) => {
                let y = out.data();
                add_into(&mut grads[*a], y.len(), |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                add_into(&mut grads[*a], y.len(), |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * y[i];
                    }
                });
            }
            Op::Log(a) => self.pointwise(*a, grads, g, |gi, x, _| gi / x),
            Op::Relu(a) => self.pointwise(*a, grads, g, |gi, x, _| if x > 0.0 { gi } else { 0.0 }),
            Op::Square(a) => self.pointwise(*a, grads, g, |gi, x, _| 2.0 * x * gi),
            Op::Scale(a, c) => {
                let c = *c;
                self.pointwise(*a, grads, g, move |gi, _, _| c * gi)
            }
            Op::Offset(a) | Op::Reshape(a) => self.pointwise(*a, grads, g, |gi, _, _| gi),
            Op::Clamp { a, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                self.pointwise(*a, grads, g, move |gi, x, _| if x >= lo && x <= hi { gi } else { 0.0 })
            }
            Op::ColAffine { a, scale } => {
                let cols = scale.len();
                self.pointwise(*a, grads, g, |gi, _, idx| gi * scale[idx % cols])
            }
            Op::Sum { a, axis } | Op::Mean { a, axis } => {
                let mean = matches!(op, Op::Mean { .. });
                let av = val(*a);
                let len = av.len();
                match axis {
                    None => {
                        let s = if mean { g[0] / len.max(1) as f64 } else { g[0] };
                        add_into(&mut grads[*a], len, |buf| buf.iter_mut().for_each(|x| *x += s));
                    }
                    Some(ax) => {
                        let (outer, l, inner) = Self::reduce_dims(av.shape(), *ax);
                        let div = if mean { l.max(1) as f64 } else { 1.0 };
                        add_into(&mut grads[*a], len, |buf| {
                            for o in 0..outer {
                                for k in 0..l {
                                    let base = (o * l + k) * inner;
                                    for i in 0..inner {
                                        buf[base + i] += g[o * inner + i] / div;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs[p] {
                        add_into(&mut grads[p], rows * w, |buf| {
                            for r in 0..rows {
                                for c in 0..w {
                                    buf[r * w + c] += g[r * total + offset + c];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceCols { a, start, end } => {
                let av = val(*a);
                let (rows, cols, w) = (av.rows(), av.cols(), end - start);
                add_into(&mut grads[*a], av.len(), |buf| {
                    for r in 0..rows {
                        for c in 0..w {
                            buf[r * cols + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            Op::RowJacobian { a, jac } => {
                let av = val(*a);
                let (rows, in_cols, out_cols) = (av.rows(), av.cols(), out.cols());
                add_into(&mut grads[*a], av.len(), |buf| {
                    for r in 0..rows {
                        for o in 0..out_cols {
                            let go = g[r * out_cols + o];
                            let jrow = &jac[(r * out_cols + o) * in_cols..(r * out_cols + o + 1) * in_cols];
                            for i in 0..in_cols {
                                buf[r * in_cols + i] += go * jrow[i];
                            }
                        }
                    }
                });
            }
        }
    }

    /// Unary backward helper: `f(upstream, input value, flat index)`.
    fn pointwise(&self, a: usize, grads: &mut [Option<Vec<f64>>], g: &[f64], f: impl Fn(f64, f64, usize) -> f64) {
        let x = self.nodes[a].value.data();
        add_into(&mut grads[a], x.len(), |buf| {
            for i in 0..buf.len() {
                buf[i] += f(g[i], x[i], i);
            }
        });
    }
}
