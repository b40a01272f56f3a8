//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Ops are coarse (a whole convolution or classifier head is one node) and
//! batched along the first axis. Every forward op checks its output for
//! non-finite values and reports the op by name.

use super::kernels::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, ConvGeometry};
use super::tensor::{log_sum_exp_split, softmax_slice, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    GlobalAvgPool(Var),
    GridAvgPool {
        x: Var,
        grid: usize,
    },
    ChannelScale {
        x: Var,
        gate: Var,
    },
    ConcatCols(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
        total_weight: T,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A recorded computation. Build it forward with the op methods, then call
/// [`Tape::backward`] on a scalar node.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::contract(op, detail)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    ///
    /// `None` for nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("add", value, &[a, b], Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("mul", value, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| *x * factor).collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("scale", value, &[a], Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), &[a], Op::Sum(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| x.max(T::zero()))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("relu", value, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push("sigmoid", value, &[a], Op::Sigmoid(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, &[a], Op::Reshape(a))
    }

    /// `x · w + b` with `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(shape_err(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        let (n, inp, out) = (xs[0], ws[0], ws[1]);
        let bias = self.value(b).data();
        let mut data = Vec::with_capacity(n * out);
        for _ in 0..n {
            data.extend_from_slice(bias);
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut data, n, inp, out);
        let value = Tensor::new(&[n, out], data)?;
        self.push("linear", value, &[x, w, b], Op::Linear { x, w, b })
    }

    /// Square-kernel convolution. `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || bs != [ws[0]] {
            return Err(shape_err(
                "conv2d",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2] {
            return Err(shape_err("conv2d", format!("kernel {} too large", ws[2])));
        }
        let geom = ConvGeometry {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let (n, o) = (xs[0], ws[0]);
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let in_size = geom.channels * geom.height * geom.width;
        let mut cols = vec![T::zero(); n * rows * cols_n];
        let mut data = vec![T::zero(); n * o * cols_n];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        for s in 0..n {
            let col = &mut cols[s * rows * cols_n..(s + 1) * rows * cols_n];
            geom.im2col(&xv[s * in_size..(s + 1) * in_size], col);
            let out = &mut data[s * o * cols_n..(s + 1) * o * cols_n];
            for (ch, chunk) in out.chunks_mut(cols_n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bv[ch]);
            }
            matmul_acc(wv, col, out, o, rows, cols_n);
        }
        let value = Tensor::new(&[n, o, geom.out_height(), geom.out_width()], data)?;
        self.push(
            "conv2d",
            value,
            &[x, w, b],
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
        )
    }

    /// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("{xs:?}")));
        }
        let (n, c, area) = (xs[0], xs[1], xs[2] * xs[3]);
        let inv = T::one() / T::of(area as f64);
        let data = self
            .value(x)
            .data()
            .chunks(area)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(&[n, c], data)?;
        self.push("global_avg_pool", value, &[x], Op::GlobalAvgPool(x))
    }

    /// Means over a `grid × grid` partition of each plane:
    /// `[n, c, h, w] -> [n, c * grid * grid]`, channel-major. `h` and `w`
    /// must be multiples of `grid`; `grid = 1` is a global pool.
    pub fn grid_avg_pool(&mut self, x: Var, grid: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 || grid == 0 || !xs[2].is_multiple_of(grid) || !xs[3].is_multiple_of(grid) {
            return Err(shape_err("grid_avg_pool", format!("{xs:?} into {grid}x{grid}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ch, cw) = (h / grid, w / grid);
        let inv = T::one() / T::of((ch * cw) as f64);
        let mut data = vec![T::zero(); n * c * grid * grid];
        for (plane, out) in self.value(x).data().chunks(h * w).zip(data.chunks_mut(grid * grid)) {
            for y in 0..h {
                for xx in 0..w {
                    let cell = (y / ch) * grid + xx / cw;
                    out[cell] = out[cell] + plane[y * w + xx];
                }
            }
            out.iter_mut().for_each(|v| *v = *v * inv);
        }
        let value = Tensor::new(&[n, c * grid * grid], data)?;
        self.push("grid_avg_pool", value, &[x], Op::GridAvgPool { x, grid })
    }

    /// Multiplies every channel plane of `x: [n, c, h, w]` by `gate: [n, c]`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        if xs.len() != 4 || gs != [xs[0], xs[1]] {
            return Err(shape_err("channel_scale", format!("x {xs:?}, gate {gs:?}")));
        }
        let area = xs[2] * xs[3];
        let g = self.value(gate).data();
        let data = self
            .value(x)
            .data()
            .chunks(area)
            .zip(g)
            .flat_map(|(plane, &s)| plane.iter().map(move |v| *v * s))
            .collect();
        let value = Tensor::new(xs, data)?;
        self.push("channel_scale", value, &[x, gate], Op::ChannelScale { x, gate })
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[0] != bs[0] {
            return Err(shape_err("concat_cols", format!("{as_:?} vs {bs:?}")));
        }
        let (n, wa, wb) = (as_[0], as_[1], bs[1]);
        let mut data = Vec::with_capacity(n * (wa + wb));
        for i in 0..n {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let value = Tensor::new(&[n, wa + wb], data)?;
        self.push("concat_cols", value, &[a, b], Op::ConcatCols(a, b))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {ls:?} with {} labels", labels.len()),
            ));
        }
        let (n, k) = (ls[0], ls[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(shape_err("cross_entropy", format!("label {bad} >= {k} classes")));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            softmax_slice(row, &mut probs[i * k..(i + 1) * k]);
            let (max, tail) = log_sum_exp_split(row);
            total = total + ((max - row[y]) + tail);
        }
        let loss = total / T::of(n as f64);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Weighted mean over rows of `-Σ_m q_m log softmax(logits)_m`.
    ///
    /// `targets` is a constant `[n, k]` distribution; `weights` selects and
    /// weights rows. The loss is zero when every weight is zero.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>, weights: &[T]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || targets.shape() != ls || weights.len() != ls[0] {
            return Err(shape_err(
                "soft_cross_entropy",
                format!(
                    "logits {ls:?}, targets {:?}, {} weights",
                    targets.shape(),
                    weights.len()
                ),
            ));
        }
        let (n, k) = (ls[0], ls[1]);
        let tol = T::of(1e-6);
        for i in 0..n {
            let row = targets.row(i);
            let s: T = row.iter().copied().sum();
            if row.iter().any(|&q| q < T::zero()) || (s - T::one()).abs() > tol {
                return Err(shape_err(
                    "soft_cross_entropy",
                    format!("target row {i} is not a distribution (sum {s})"),
                ));
            }
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        let mut total_weight = T::zero();
        for i in 0..n {
            let row = lv.row(i);
            softmax_slice(row, &mut probs[i * k..(i + 1) * k]);
            if weights[i] == T::zero() {
                continue;
            }
            let (max, tail) = log_sum_exp_split(row);
            let mut nll = T::zero();
            for (m, &q) in targets.row(i).iter().enumerate() {
                nll = nll + q * ((max - row[m]) + tail);
            }
            total = total + weights[i] * nll;
            total_weight = total_weight + weights[i];
        }
        let loss = if total_weight > T::zero() {
            total / total_weight
        } else {
            T::zero()
        };
        self.push(
            "soft_cross_entropy",
            Tensor::scalar(loss),
            &[logits],
            Op::SoftCrossEntropy {
                logits,
                targets: targets.data().to_vec(),
                weights: weights.to_vec(),
                total_weight,
                probs,
            },
        )
    }

    /// Backpropagates from the scalar `loss`. Every leaf that requires a
    /// gradient receives one; leaves the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad {
                Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape())))
            } else {
                None
            };
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| add_into(d, gd));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(gd).zip(bv) {
                        *d = *d + *g * *y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(gd).zip(av) {
                        *d = *d + *g * *x;
                    }
                });
            }
            Op::Scale(a, factor) => acc(*a, &mut |d| {
                for (d, g) in d.iter_mut().zip(gd) {
                    *d = *d + *g * *factor;
                }
            }),
            Op::Sum(a) => {
                let s = gd[0];
                acc(*a, &mut |d| d.iter_mut().for_each(|v| *v = *v + s));
            }
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                acc(*a, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(gd).zip(xv) {
                        if *x > T::zero() {
                            *d = *d + *g;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = node.value.data();
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(gd).zip(yv) {
                        *d = *d + *g * *y * (T::one() - *y);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, gd)),
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (n, inp, out) = (self.shape(*x)[0], ws[0], ws[1]);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &mut |d| matmul_a_bt_acc(gd, wv, d, n, out, inp));
                acc(*w, &mut |d| matmul_at_b_acc(xv, gd, d, inp, n, out));
                acc(*b, &mut |d| {
                    for row in gd.chunks(out) {
                        add_into(d, row);
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let n = self.shape(*x)[0];
                let o = self.shape(*w)[0];
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let in_size = geom.channels * geom.height * geom.width;
                let wv = self.value(*w).data();
                acc(*b, &mut |d| {
                    for (i, plane) in gd.chunks(cols_n).enumerate() {
                        let ch = i % o;
                        d[ch] = d[ch] + plane.iter().copied().sum::<T>();
                    }
                });
                acc(*w, &mut |d| {
                    let mut col_t = vec![T::zero(); rows * cols_n];
                    for s in 0..n {
                        let go = &gd[s * o * cols_n..(s + 1) * o * cols_n];
                        let col = &cols[s * rows * cols_n..(s + 1) * rows * cols_n];
                        for (r, row) in col.chunks(cols_n).enumerate() {
                            for (j, &v) in row.iter().enumerate() {
                                col_t[j * rows + r] = v;
                            }
                        }
                        matmul_acc(go, &col_t, d, o, cols_n, rows);
                    }
                });
                acc(*x, &mut |d| {
                    let mut dcol = vec![T::zero(); rows * cols_n];
                    for s in 0..n {
                        let go = &gd[s * o * cols_n..(s + 1) * o * cols_n];
                        dcol.iter_mut().for_each(|v| *v = T::zero());
                        matmul_at_b_acc(wv, go, &mut dcol, rows, o, cols_n);
                        geom.col2im_acc(&dcol, &mut d[s * in_size..(s + 1) * in_size]);
                    }
                });
            }
            Op::GlobalAvgPool(a) => {
                let xs = self.shape(*a);
                let area = xs[2] * xs[3];
                let inv = T::one() / T::of(area as f64);
                acc(*a, &mut |d| {
                    for (plane, g) in d.chunks_mut(area).zip(gd) {
                        let s = *g * inv;
                        plane.iter_mut().for_each(|v| *v = *v + s);
                    }
                });
            }
            Op::GridAvgPool { x, grid } => {
                let xs = self.shape(*x);
                let (h, w, grid) = (xs[2], xs[3], *grid);
                let (ch, cw) = (h / grid, w / grid);
                let inv = T::one() / T::of((ch * cw) as f64);
                acc(*x, &mut |d| {
                    for (plane, g) in d.chunks_mut(h * w).zip(gd.chunks(grid * grid)) {
                        for y in 0..h {
                            for xx in 0..w {
                                let cell = (y / ch) * grid + xx / cw;
                                plane[y * w + xx] = plane[y * w + xx] + g[cell] * inv;
                            }
                        }
                    }
                });
            }
            Op::ChannelScale { x, gate } => {
                let xs = self.shape(*x);
                let area = xs[2] * xs[3];
                let (xv, gv) = (self.value(*x).data(), self.value(*gate).data());
                acc(*x, &mut |d| {
                    for ((dp, gp), s) in d.chunks_mut(area).zip(gd.chunks(area)).zip(gv) {
                        for (dv, gval) in dp.iter_mut().zip(gp) {
                            *dv = *dv + *gval * *s;
                        }
                    }
                });
                acc(*gate, &mut |d| {
                    for ((dv, gp), xp) in d.iter_mut().zip(gd.chunks(area)).zip(xv.chunks(area)) {
                        let dot: T = gp.iter().zip(xp).map(|(a, b)| *a * *b).sum();
                        *dv = *dv + dot;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (wa, wb) = (self.shape(*a)[1], self.shape(*b)[1]);
                acc(*a, &mut |d| {
                    for (dr, gr) in d.chunks_mut(wa).zip(gd.chunks(wa + wb)) {
                        add_into(dr, &gr[..wa]);
                    }
                });
                acc(*b, &mut |d| {
                    for (dr, gr) in d.chunks_mut(wb).zip(gd.chunks(wa + wb)) {
                        add_into(dr, &gr[wa..]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let s = gd[0] / T::of(labels.len() as f64);
                acc(*logits, &mut |d| {
                    for (i, &y) in labels.iter().enumerate() {
                        for m in 0..k {
                            let onehot = if m == y { T::one() } else { T::zero() };
                            d[i * k + m] = d[i * k + m] + s * (probs[i * k + m] - onehot);
                        }
                    }
                });
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                weights,
                total_weight,
                probs,
            } => {
                if *total_weight > T::zero() {
                    let k = self.shape(*logits)[1];
                    let s = gd[0] / *total_weight;
                    acc(*logits, &mut |d| {
                        for (i, &wt) in weights.iter().enumerate() {
                            if wt == T::zero() {
                                continue;
                            }
                            let q_sum: T = targets[i * k..(i + 1) * k].iter().copied().sum();
                            for m in 0..k {
                                let idx = i * k + m;
                                d[idx] = d[idx] + s * wt * (q_sum * probs[idx] - targets[idx]);
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn grid_pool_of_one_cell_is_global_pool() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = tape.constant(Tensor::new(&[2, 3, 4, 4], data).unwrap());
        let a = tape.grid_avg_pool(x, 1).unwrap();
        let b = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        let q = tape.grid_avg_pool(x, 2).unwrap();
        assert_eq!(tape.shape(q), &[2, 12]);
        // Top-left cell of the first plane.
        let v = tape.value(x).data();
        let expect = (v[0] + v[1] + v[4] + v[5]) / 4.0;
        assert!((tape.value(q).data()[0] - expect).abs() < 1e-15);
        assert!(tape.grid_avg_pool(x, 3).is_err());
    }

    #[test]
    fn constant_loss_leaves_zero_gradients() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, -3.0]));
        let c = tape.constant(Tensor::scalar(5.0));
        let loss = tape.sum(c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.value(loss).item(), 5.0);
        assert_eq!(tape.grad(w).unwrap().data(), &[0.0, 0.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Contract { .. })));
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_vec(vec![1e300, 1e300]));
        let err = tape.mul(w, w).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "mul" }));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::<f64>::new();
        let l = tape.param(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap());
        assert!(tape.cross_entropy(l, &[2]).is_err());
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        for x in [-40.0f64, -3.0, 0.0, 2.5, 40.0] {
            let s = sigmoid(x);
            assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&s));
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
