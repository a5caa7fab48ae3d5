//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] runs one
//! reverse sweep in recording order (which is already topological) and
//! accumulates gradients additively across fan-out. Gradients are never
//! cleared implicitly: calling `backward` twice accumulates, and the
//! trainer starts from fresh gradients each step (it stages parameters
//! onto a fresh tape per batch).
//!
//! The primitive set is exactly what the GIN + distribution-aware pooling
//! + linear classifier pipeline needs; shape mismatches are programming
//! errors and panic.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    /// Broadcast-add a `1 x f` row vector to every row of an `n x f` matrix.
    AddRow(ValueId, ValueId),
    Relu(ValueId),
    MeanRows(ValueId),
    SumRows(ValueId),
    MeanCols(ValueId),
    /// `(1/n) * H~^T H~` with `H~` the row-centered input.
    Covariance(ValueId),
    Scale(ValueId, f64),
    SoftmaxCrossEntropy {
        logits: ValueId,
        label: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    data: Mat,
    grad: Option<Mat>,
    op: Op,
}

/// Recording tape. Single-threaded by design; run one tape per worker.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Mat, op: Op) -> ValueId {
        self.nodes.push(Node {
            data,
            grad: None,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    /// Record an input: constant, feature matrix, or parameter.
    pub fn leaf(&mut self, data: Mat) -> ValueId {
        self.push(data, Op::Leaf)
    }

    pub fn data(&self, id: ValueId) -> &Mat {
        &self.nodes[id.0].data
    }

    /// Gradient accumulated on `id`, if `backward` touched it.
    pub fn grad(&self, id: ValueId) -> Option<&Mat> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let out = self.nodes[a.0].data.matmul(&self.nodes[b.0].data);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let out = self.nodes[a.0].data.add(&self.nodes[b.0].data);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> ValueId {
        let m = &self.nodes[a.0].data;
        let r = &self.nodes[row.0].data;
        assert_eq!(r.rows(), 1, "add_row needs a 1 x f row vector");
        assert_eq!(r.cols(), m.cols(), "add_row width mismatch");
        let mut out = m.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out[(i, j)] += r[(0, j)];
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let m = &self.nodes[a.0].data;
        let out = Mat::from_vec(
            m.rows(),
            m.cols(),
            m.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        );
        self.push(out, Op::Relu(a))
    }

    /// Column-wise mean over rows: `n x f -> 1 x f`.
    pub fn mean_rows(&mut self, a: ValueId) -> ValueId {
        let m = &self.nodes[a.0].data;
        let n = m.rows();
        let mut out = Mat::zeros(1, m.cols());
        for i in 0..n {
            for j in 0..m.cols() {
                out[(0, j)] += m[(i, j)];
            }
        }
        for j in 0..m.cols() {
            out[(0, j)] /= n as f64;
        }
        self.push(out, Op::MeanRows(a))
    }

    /// Column-wise sum over rows: `n x f -> 1 x f`.
    pub fn sum_rows(&mut self, a: ValueId) -> ValueId {
        let m = &self.nodes[a.0].data;
        let mut out = Mat::zeros(1, m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out[(0, j)] += m[(i, j)];
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Row-wise mean over columns: `n x f -> n x 1`.
    pub fn mean_cols(&mut self, a: ValueId) -> ValueId {
        let m = &self.nodes[a.0].data;
        let f = m.cols();
        let mut out = Mat::zeros(m.rows(), 1);
        for i in 0..m.rows() {
            out[(i, 0)] = m.row(i).iter().sum::<f64>() / f as f64;
        }
        self.push(out, Op::MeanCols(a))
    }

    /// Biased covariance of the rows: `(1/n) H~^T H~`, an `f x f` matrix.
    /// Computed entry-pair symmetric, so the output is bitwise symmetric.
    pub fn covariance(&mut self, a: ValueId) -> ValueId {
        let m = &self.nodes[a.0].data;
        let out = covariance_data(m);
        self.push(out, Op::Covariance(a))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let out = self.nodes[a.0].data.scale(c);
        self.push(out, Op::Scale(a, c))
    }

    /// Numerically stable `-log softmax(logits)[label]` on a `1 x c` row.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, label: usize) -> ValueId {
        let l = &self.nodes[logits.0].data;
        assert_eq!(l.rows(), 1, "logits must be a 1 x c row");
        assert!(label < l.cols(), "label out of range");
        let row = l.row(0);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        let loss = lse - row[label];
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::SoftmaxCrossEntropy { logits, label },
        )
    }

    fn accumulate(&mut self, id: ValueId, delta: &Mat) {
        let node = &mut self.nodes[id.0];
        match node.grad.as_mut() {
            Some(g) => g.add_assign(delta),
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate on every
    /// ancestor, additively across fan-out and across repeated calls.
    pub fn backward(&mut self, loss: ValueId) {
        {
            let l = &self.nodes[loss.0].data;
            assert_eq!((l.rows(), l.cols()), (1, 1), "backward needs a scalar loss");
        }
        self.accumulate(loss, &Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[idx].grad.clone() else {
                continue;
            };
            match self.nodes[idx].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = grad.matmul(&self.nodes[b.0].data.transpose());
                    let db = self.nodes[a.0].data.transpose().matmul(&grad);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::AddRow(a, row) => {
                    self.accumulate(a, &grad);
                    let mut dr = Mat::zeros(1, grad.cols());
                    for i in 0..grad.rows() {
                        for j in 0..grad.cols() {
                            dr[(0, j)] += grad[(i, j)];
                        }
                    }
                    self.accumulate(row, &dr);
                }
                Op::Relu(a) => {
                    let input = &self.nodes[a.0].data;
                    let mut da = grad.clone();
                    for (g, &x) in da.data_mut().iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::MeanRows(a) => {
                    let n = self.nodes[a.0].data.rows();
                    let mut da = Mat::zeros(n, grad.cols());
                    for i in 0..n {
                        for j in 0..grad.cols() {
                            da[(i, j)] = grad[(0, j)] / n as f64;
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumRows(a) => {
                    let n = self.nodes[a.0].data.rows();
                    let mut da = Mat::zeros(n, grad.cols());
                    for i in 0..n {
                        for j in 0..grad.cols() {
                            da[(i, j)] = grad[(0, j)];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::MeanCols(a) => {
                    let src = &self.nodes[a.0].data;
                    let f = src.cols();
                    let mut da = Mat::zeros(src.rows(), f);
                    for i in 0..src.rows() {
                        for j in 0..f {
                            da[(i, j)] = grad[(i, 0)] / f as f64;
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Covariance(a) => {
                    // Sigma = (1/n) H~^T H~ with H~ = C H (row centering).
                    // dH = C ( H~ (G + G^T) / n ), and C M subtracts the
                    // column means of M from every row.
                    let h = &self.nodes[a.0].data;
                    let n = h.rows();
                    let f = h.cols();
                    let centered = center_rows(h);
                    let mut gsym = Mat::zeros(f, f);
                    for r in 0..f {
                        for c in 0..f {
                            gsym[(r, c)] = grad[(r, c)] + grad[(c, r)];
                        }
                    }
                    let mut da = centered.matmul(&gsym).scale(1.0 / n as f64);
                    da = center_rows(&da);
                    self.accumulate(a, &da);
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, &grad.scale(c));
                }
                Op::SoftmaxCrossEntropy { logits, label } => {
                    let l = &self.nodes[logits.0].data;
                    let probs = softmax_row(l.row(0));
                    let mut dl = Mat::zeros(1, l.cols());
                    let g = grad[(0, 0)];
                    for j in 0..l.cols() {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        dl[(0, j)] = g * (probs[j] - onehot);
                    }
                    self.accumulate(logits, &dl);
                }
            }
        }
    }
}

/// Subtract the column means of `m` from each of its rows.
fn center_rows(m: &Mat) -> Mat {
    let n = m.rows();
    let f = m.cols();
    let mut mean = vec![0.0; f];
    for i in 0..n {
        for j in 0..f {
            mean[j] += m[(i, j)];
        }
    }
    for v in mean.iter_mut() {
        *v /= n as f64;
    }
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..f {
            out[(i, j)] -= mean[j];
        }
    }
    out
}

/// Plain (non-recorded) biased row covariance; also used by the pooling
/// diagnostics where no gradients are needed.
pub fn covariance_data(m: &Mat) -> Mat {
    let n = m.rows();
    let f = m.cols();
    let centered = center_rows(m);
    let mut out = Mat::zeros(f, f);
    for a in 0..f {
        for b in a..f {
            let mut acc = 0.0;
            for i in 0..n {
                acc += centered[(i, a)] * centered[(i, b)];
            }
            acc /= n as f64;
            out[(a, b)] = acc;
            out[(b, a)] = acc;
        }
    }
    out
}

/// Stable softmax of a row slice.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite differences on every entry of leaf `target` for a
    /// scalar forward function rebuilt from scratch per evaluation.
    fn finite_diff<F>(base: &Mat, forward: F) -> Mat
    where
        F: Fn(&Mat) -> f64,
    {
        let h = 1e-5;
        let mut out = Mat::zeros(base.rows(), base.cols());
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let mut plus = base.clone();
                plus[(i, j)] += h;
                let mut minus = base.clone();
                minus[(i, j)] -= h;
                out[(i, j)] = (forward(&plus) - forward(&minus)) / (2.0 * h);
            }
        }
        out
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        assert!(a.same_shape(b));
        let scale = 1.0 + a.max_abs().max(b.max_abs());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(
                (x - y).abs() / scale < tol,
                "gradient mismatch: {x} vs {y} (scale {scale})"
            );
        }
    }

    fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
    }

    #[test]
    fn relu_forward_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_rows(&[&[-1.0, 2.0]]));
        let y = tape.relu(x);
        assert_eq!(tape.data(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn covariance_forward_hand_checked() {
        // rows [1,2] and [3,4]: centered rows [-1,-1],[1,1];
        // (1/2) H~^T H~ = [[1,1],[1,1]]
        let m = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let cov = covariance_data(&m);
        assert_eq!(cov, Mat::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn covariance_matches_naive_double_loop() {
        let mut rng = crate::rng::rng_from_seed(4);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let f = rng.random_range(1..=8);
            let m = random_mat(&mut rng, n, f);
            let cov = covariance_data(&m);
            // independent oracle: explicit sum over (h_k - mu) products
            let mut mu = vec![0.0; f];
            for i in 0..n {
                for j in 0..f {
                    mu[j] += m[(i, j)] / n as f64;
                }
            }
            for a in 0..f {
                for b in 0..f {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += (m[(k, a)] - mu[a]) * (m[(k, b)] - mu[b]);
                    }
                    acc /= n as f64;
                    assert!((cov[(a, b)] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let m = Mat::from_rows(&[&[3.0, -1.0], &[3.0, -1.0], &[3.0, -1.0]]);
        assert_eq!(covariance_data(&m).max_abs(), 0.0);
    }

    #[test]
    fn quadratic_form_gradient() {
        // d(x^T x)/dx = 2x at x = [1, 2]
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_rows(&[&[1.0], &[2.0]]));
        let xt = tape.leaf(Mat::from_rows(&[&[1.0, 2.0]]));
        let y = tape.matmul(xt, x);
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(tape.grad(xt).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // inputs exactly on the kink propagate nothing; this happens in
        // practice when dead rows meet zero-initialized biases
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_rows(&[&[0.0, 1.0]]));
        let r = tape.relu(x);
        let w = tape.leaf(Mat::from_rows(&[&[1.0], &[1.0]]));
        let loss = tape.matmul(r, w);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_rows(&[&[3.0]]));
        let y = tape.scale(x, 2.0);
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
        tape.backward(y);
        // second sweep adds on top; trainers use a fresh tape per step
        assert!(tape.grad(x).unwrap().data()[0] > 2.0);
    }

    #[test]
    fn every_primitive_passes_finite_difference_checks() {
        let mut rng = crate::rng::rng_from_seed(19);
        for trial in 0..12 {
            let n = rng.random_range(2..=6);
            let f = rng.random_range(2..=5);
            let x0 = random_mat(&mut rng, n, f);
            let w0 = random_mat(&mut rng, f, f);
            let r0 = random_mat(&mut rng, 1, f);
            let wa = random_mat(&mut rng, 1, n);
            let wb = random_mat(&mut rng, f, 1);
            let wc = random_mat(&mut rng, 1, 1);
            let label = trial % f.min(2);

            // scalarized pipeline exercising every op
            let forward = |x: &Mat| -> (Tape, ValueId, ValueId) {
                let mut tape = Tape::new();
                let xi = tape.leaf(x.clone());
                let w = tape.leaf(w0.clone());
                let r = tape.leaf(r0.clone());
                let a = tape.matmul(xi, w);
                let b = tape.add_row(a, r);
                let c = tape.relu(b);
                let d = tape.add(c, a);
                let cov = tape.covariance(d);
                let mu = tape.mean_rows(d);
                let z = tape.matmul(mu, cov);
                let s = tape.sum_rows(d);
                let zs = tape.add(z, s);
                let mc = tape.mean_cols(d);
                let wa_id = tape.leaf(wa.clone());
                let wb_id = tape.leaf(wb.clone());
                let woc = tape.matmul(wa_id, mc); // 1x1
                let t1 = tape.matmul(zs, wb_id); // 1x1
                let ce = tape.softmax_cross_entropy(zs, label);
                let t2 = tape.add(t1, ce);
                let t3 = tape.add(t2, woc);
                let wc_id = tape.leaf(wc.clone());
                let loss = tape.matmul(t3, wc_id);
                let loss = tape.scale(loss, 0.5);
                (tape, loss, xi)
            };

            let (mut tape, loss, xi) = forward(&x0);
            tape.backward(loss);
            let analytic = tape.grad(xi).unwrap().clone();
            let numeric = finite_diff(&x0, |x| {
                let (tape, loss, _) = forward(x);
                tape.data(loss)[(0, 0)]
            });
            assert_close(&analytic, &numeric, 1e-4);
        }
    }

    #[test]
    fn covariance_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(31);
        let x0 = random_mat(&mut rng, 5, 3);
        let w = random_mat(&mut rng, 3, 1);
        let v = random_mat(&mut rng, 1, 3);
        let forward = |x: &Mat| -> (Tape, ValueId, ValueId) {
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone());
            let cov = tape.covariance(xi);
            let vi = tape.leaf(v.clone());
            let wi = tape.leaf(w.clone());
            let t = tape.matmul(vi, cov);
            let loss = tape.matmul(t, wi);
            (tape, loss, xi)
        };
        let (mut tape, loss, xi) = forward(&x0);
        tape.backward(loss);
        let analytic = tape.grad(xi).unwrap().clone();
        let numeric = finite_diff(&x0, |x| {
            let (tape, loss, _) = forward(x);
            tape.data(loss)[(0, 0)]
        });
        assert_close(&analytic, &numeric, 1e-4);
    }

    #[test]
    fn softmax_ce_gradient_is_probs_minus_onehot() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Mat::from_rows(&[&[0.2, -0.4]]));
        let loss = tape.softmax_cross_entropy(logits, 1);
        tape.backward(loss);
        let probs = softmax_row(&[0.2, -0.4]);
        let g = tape.grad(logits).unwrap();
        assert!((g[(0, 0)] - probs[0]).abs() < 1e-12);
        assert!((g[(0, 1)] - (probs[1] - 1.0)).abs() < 1e-12);
    }
}
