//! Matrix-valued reverse-mode tape for the planning graph.

use crate::allocation::softmax_rows;
use crate::error::Result;
use crate::linalg::{spd_inverse, spectral_adjoint, sym_eigen, KernelConfig, Mat, SymMatrix};
use crate::Scalar;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spectral {
    /// `lambda -> sqrt(max(lambda, 0))`.
    Sqrt,
    /// `lambda -> lambda^{-1/2}` on the numerical range, zero elsewhere.
    PinvSqrt,
}

/// One coefficient of a linear map from an allocation matrix: `p[row][arm] * m`.
#[derive(Clone, Debug)]
pub struct LinearTerm<T> {
    pub row: usize,
    pub arm: usize,
    pub m: Mat<T>,
}

enum Op<'a, T> {
    Leaf,
    SoftmaxRows(NodeId),
    Affine { x: NodeId, scale: T },
    Linear { p: NodeId, terms: &'a [LinearTerm<T>] },
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    TrMatMul(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, T),
    AddIdentity(NodeId),
    SpdInverse(NodeId),
    Spectral {
        x: NodeId,
        kind: Spectral,
        u: Mat<T>,
        values: Vec<T>,
        null: T,
    },
    /// Scalar-valued node whose input gradients were produced with its value.
    Scalar { inputs: Vec<NodeId>, grads: Vec<Mat<T>> },
    WeightedSum(Vec<(NodeId, T)>),
}

struct Node<'a, T> {
    op: Op<'a, T>,
    value: Mat<T>,
}

pub struct Tape<'a, T> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op<'a, T>, value: Mat<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat<T> {
        &self.nodes[id].value
    }

    pub fn leaf(&mut self, v: Mat<T>) -> NodeId {
        self.push(Op::Leaf, v)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = softmax_rows(self.value(x));
        self.push(Op::SoftmaxRows(x), v)
    }

    /// `shift + scale * x` elementwise.
    pub fn affine(&mut self, x: NodeId, shift: T, scale: T) -> NodeId {
        let mut v = self.value(x).scale(scale);
        v.as_mut_slice().iter_mut().for_each(|e| *e += shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn linear(&mut self, p: NodeId, terms: &'a [LinearTerm<T>], n: usize) -> NodeId {
        let pv = self.value(p);
        let mut v = Mat::zeros(n, n);
        for t in terms {
            v.add_scaled_assign(&t.m, pv[(t.row, t.arm)]);
        }
        self.push(Op::Linear { p, terms }, v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a b^T`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_tr(self.value(b));
        self.push(Op::MatMulT(a, b), v)
    }

    /// `a^T b`.
    pub fn tr_matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).tr_matmul(self.value(b));
        self.push(Op::TrMatMul(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_identity(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            v[(i, i)] += T::one();
        }
        self.push(Op::AddIdentity(a), v)
    }

    pub fn spd_inverse(&mut self, a: NodeId) -> Result<NodeId> {
        let v = spd_inverse(&SymMatrix::symmetrize(self.value(a).clone()))?.into_mat();
        Ok(self.push(Op::SpdInverse(a), v))
    }

    pub fn spectral(&mut self, x: NodeId, kind: Spectral) -> NodeId {
        let sym = SymMatrix::symmetrize(self.value(x).clone());
        let eig = sym_eigen(&sym);
        let null = KernelConfig::<T>::default().tol_rank * eig.max_abs_value();
        let out = match kind {
            Spectral::Sqrt => eig.map(|l| if l > null { l.sqrt() } else { T::zero() }),
            Spectral::PinvSqrt => eig.map(|l| if l > null { T::one() / l.sqrt() } else { T::zero() }),
        };
        let u = eig.vectors_dense();
        let values = eig.values();
        self.push(
            Op::Spectral {
                x,
                kind,
                u,
                values,
                null,
            },
            out.into_mat(),
        )
    }

    /// Non-null spectrum of a spectral node as `(U_r, f(lambda_r))`, so its value
    /// equals `U_r diag(f) U_r^T`.
    pub fn spectral_factor(&self, id: NodeId) -> Option<(Mat<T>, Vec<T>)> {
        let Op::Spectral { kind, u, values, null, .. } = &self.nodes[id].op else {
            return None;
        };
        let keep: Vec<usize> = (0..values.len()).filter(|&k| values[k] > *null).collect();
        let n = u.rows();
        let ur = Mat::from_fn(n, keep.len(), |i, c| u[(i, keep[c])]);
        let f = keep
            .iter()
            .map(|&k| match kind {
                Spectral::Sqrt => values[k].sqrt(),
                Spectral::PinvSqrt => T::one() / values[k].sqrt(),
            })
            .collect();
        Some((ur, f))
    }

    /// Records a scalar computed outside the tape together with its input gradients.
    pub fn scalar(&mut self, value: T, inputs: Vec<NodeId>, grads: Vec<Mat<T>>) -> NodeId {
        debug_assert_eq!(inputs.len(), grads.len());
        self.push(Op::Scalar { inputs, grads }, Mat::from_fn(1, 1, |_, _| value))
    }

    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, T)>) -> NodeId {
        let s: T = terms.iter().map(|&(id, w)| w * self.value(id)[(0, 0)]).sum();
        self.push(Op::WeightedSum(terms), Mat::from_fn(1, 1, |_, _| s))
    }

    /// Adjoints of every node with respect to the scalar node `out`.
    pub fn backward(&self, out: NodeId) -> Vec<Option<Mat<T>>> {
        let mut bar: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        bar[out] = Some(Mat::from_fn(1, 1, |_, _| T::one()));
        fn acc<T: Scalar>(bar: &mut [Option<Mat<T>>], id: NodeId, g: Mat<T>) {
            match &mut bar[id] {
                Some(b) => b.add_scaled_assign(&g, T::one()),
                slot @ None => *slot = Some(g),
            }
        }
        for id in (0..=out).rev() {
            let Some(ybar) = bar[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut g = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dotp: T = y.row(r).iter().zip(ybar.row(r)).map(|(&a, &b)| a * b).sum();
                        for c in 0..y.cols() {
                            g[(r, c)] = y[(r, c)] * (ybar[(r, c)] - dotp);
                        }
                    }
                    acc(&mut bar, *x, g);
                }
                Op::Affine { x, scale } => acc(&mut bar, *x, ybar.scale(*scale)),
                Op::Linear { p, terms } => {
                    let pv = self.value(*p);
                    let mut g = Mat::zeros(pv.rows(), pv.cols());
                    for t in terms.iter() {
                        g[(t.row, t.arm)] += crate::linalg::dot(t.m.as_slice(), ybar.as_slice());
                    }
                    acc(&mut bar, *p, g);
                }
                Op::MatMul(a, b) => {
                    let ga = ybar.matmul_tr(self.value(*b));
                    let gb = self.value(*a).tr_matmul(&ybar);
                    acc(&mut bar, *a, ga);
                    acc(&mut bar, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = ybar.matmul(self.value(*b));
                    let gb = ybar.tr_matmul(self.value(*a));
                    acc(&mut bar, *a, ga);
                    acc(&mut bar, *b, gb);
                }
                Op::TrMatMul(a, b) => {
                    let ga = self.value(*b).matmul_tr(&ybar);
                    let gb = self.value(*a).matmul(&ybar);
                    acc(&mut bar, *a, ga);
                    acc(&mut bar, *b, gb);
                }
                Op::Sub(a, b) => {
                    acc(&mut bar, *b, ybar.scale(-T::one()));
                    acc(&mut bar, *a, ybar.clone());
                }
                Op::Scale(a, s) => acc(&mut bar, *a, ybar.scale(*s)),
                Op::AddIdentity(a) => acc(&mut bar, *a, ybar.clone()),
                Op::SpdInverse(a) => {
                    let y = &node.value;
                    let g = y.matmul(&ybar).matmul(y).scale(-T::one());
                    acc(&mut bar, *a, g);
                }
                Op::Spectral {
                    x,
                    kind,
                    u,
                    values,
                    null,
                } => {
                    let null = *null;
                    let g = match kind {
                        Spectral::Sqrt => spectral_adjoint(u, values, &ybar, |a, b| {
                            let (ra, rb) = (
                                if a > null { a.sqrt() } else { T::zero() },
                                if b > null { b.sqrt() } else { T::zero() },
                            );
                            if ra + rb > T::zero() {
                                T::one() / (ra + rb)
                            } else {
                                T::zero()
                            }
                        }),
                        Spectral::PinvSqrt => spectral_adjoint(u, values, &ybar, |a, b| {
                            if a > null && b > null {
                                let (ra, rb) = (a.sqrt(), b.sqrt());
                                -T::one() / (ra * rb * (ra + rb))
                            } else {
                                T::zero()
                            }
                        }),
                    };
                    acc(&mut bar, *x, g);
                }
                Op::Scalar { inputs, grads } => {
                    let s = ybar[(0, 0)];
                    for (&i, g) in inputs.iter().zip(grads) {
                        acc(&mut bar, i, g.scale(s));
                    }
                }
                Op::WeightedSum(terms) => {
                    let s = ybar[(0, 0)];
                    for &(i, w) in terms {
                        acc(&mut bar, i, Mat::from_fn(1, 1, |_, _| s * w));
                    }
                }
            }
            bar[id] = Some(ybar);
        }
        bar
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` at `x` along every entry.
    fn fd(x: &Mat<f64>, f: &dyn Fn(&Mat<f64>) -> f64) -> Mat<f64> {
        let h = 1e-6;
        Mat::from_fn(x.rows(), x.cols(), |i, j| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[(i, j)] += h;
            b[(i, j)] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
    }

    fn weights(n: usize) -> Mat<f64> {
        Mat::from_fn(n, n, |i, j| ((i * 3 + j * 5) as f64 * 0.37).sin())
    }

    fn check(build: &dyn Fn(&mut Tape<f64>, NodeId) -> NodeId, x0: Mat<f64>, sym_input: bool) {
        let w = weights(x0.rows());
        let eval = |x: &Mat<f64>| {
            let mut t = Tape::new();
            let xs = if sym_input { SymMatrix::symmetrize(x.clone()).into_mat() } else { x.clone() };
            let l = t.leaf(xs);
            let y = build(&mut t, l);
            crate::linalg::dot(t.value(y).as_slice(), w.as_slice())
        };
        let mut t = Tape::new();
        let l = t.leaf(x0.clone());
        let y = build(&mut t, l);
        let v = crate::linalg::dot(t.value(y).as_slice(), w.as_slice());
        let s = t.scalar(v, vec![y], vec![w.clone()]);
        let g = t.backward(s)[l].clone().unwrap();
        let g = if sym_input { SymMatrix::symmetrize(g).into_mat() } else { g };
        let num = fd(&x0, &eval);
        let err = g.sub(&num).max_abs();
        assert!(err < 1e-6 * (1.0 + num.max_abs()), "adjoint {g:?} vs fd {num:?}");
    }

    fn spd(n: usize) -> Mat<f64> {
        let a = Mat::from_fn(n, n, |i, j| ((i + 2 * j) as f64 * 0.71).cos());
        let mut m = a.tr_matmul(&a);
        for i in 0..n {
            m[(i, i)] += 0.5;
        }
        m
    }

    #[test]
    fn sqrt_adjoint_matches_fd() {
        check(&|t, x| t.spectral(x, Spectral::Sqrt), spd(4), true);
    }

    #[test]
    fn pinv_sqrt_adjoint_matches_fd() {
        check(&|t, x| t.spectral(x, Spectral::PinvSqrt), spd(3), true);
    }

    #[test]
    fn inverse_adjoint_matches_fd() {
        check(&|t, x| t.spd_inverse(x).unwrap(), spd(3), true);
    }

    #[test]
    fn products_and_softmax_match_fd() {
        let x0 = Mat::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.3 + 0.1);
        check(
            &|t, x| {
                let s = t.softmax_rows(x);
                let a = t.affine(s, 0.05, 0.85);
                let b = t.matmul_t(a, x);
                let c = t.tr_matmul(b, a);
                let d = t.add_identity(c);
                let e = t.scale(d, 2.0);
                t.sub(e, x)
            },
            x0,
            false,
        );
    }

    #[test]
    fn sqrt_adjoint_on_rank_deficient_range() {
        // perturbations that stay in the range of a rank-one matrix
        let v = [1.0, 2.0, -1.0];
        let m = Mat::from_fn(3, 3, |i, j| v[i] * v[j]);
        let mut t = Tape::new();
        let c = t.leaf(Mat::from_fn(1, 1, |_, _| 2.0));
        let terms = vec![LinearTerm { row: 0, arm: 0, m: m.clone() }];
        let terms: &'static [LinearTerm<f64>] = Box::leak(terms.into_boxed_slice());
        let a = t.linear(c, terms, 3);
        let s = t.spectral(a, Spectral::Sqrt);
        let w = weights(3);
        let val = crate::linalg::dot(t.value(s).as_slice(), w.as_slice());
        let out = t.scalar(val, vec![s], vec![w.clone()]);
        let g = t.backward(out)[c].clone().unwrap()[(0, 0)];
        // sqrt(c) * m / |v| is the square root of c m
        let norm = 6f64.sqrt();
        let expect = 0.5 / 2f64.sqrt() / norm * crate::linalg::dot(m.as_slice(), w.as_slice());
        assert!((g - expect).abs() < 1e-10, "{g} vs {expect}");
    }
}
