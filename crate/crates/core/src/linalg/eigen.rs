use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMatrix};
use crate::Scalar;

/// Tolerances shared by the spectral routines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig<T> {
    /// Eigenvalues below `-tol_psd * max(1, max|m_ij|)` make a matrix indefinite.
    pub tol_psd: T,
    /// Eigenvalues with `|lambda| <= tol_rank * max|lambda|` count as zero.
    pub tol_rank: T,
}

impl<T: Scalar> Default for KernelConfig<T> {
    fn default() -> Self {
        let floor = T::epsilon() * T::lit(64.0);
        KernelConfig {
            tol_psd: T::lit(1e-10).max(floor),
            tol_rank: T::lit(1e-10).max(floor),
        }
    }
}

/// Eigendecomposition of one connected component of the sparsity graph.
#[derive(Clone, Debug)]
pub struct EigenPart<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
    /// Columns are eigenvectors in the local coordinates of `indices`.
    pub vectors: Mat<T>,
}

/// Eigendecomposition stored per component, so reconstruction stays sparse.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    dim: usize,
    parts: Vec<EigenPart<T>>,
}

impl<T: Scalar> SymEigen<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parts(&self) -> &[EigenPart<T>] {
        &self.parts
    }

    pub fn values(&self) -> Vec<T> {
        self.parts.iter().flat_map(|p| p.values.iter().copied()).collect()
    }

    pub fn max_abs_value(&self) -> T {
        self.parts
            .iter()
            .flat_map(|p| p.values.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> T {
        self.parts
            .iter()
            .flat_map(|p| p.values.iter())
            .fold(T::infinity(), |m, &v| m.min(v))
    }

    /// Dense eigenvector matrix, columns ordered as in `values()`.
    pub fn vectors_dense(&self) -> Mat<T> {
        let mut u = Mat::zeros(self.dim, self.dim);
        let mut col = 0;
        for part in &self.parts {
            for k in 0..part.values.len() {
                for (r, &i) in part.indices.iter().enumerate() {
                    u[(i, col + k)] = part.vectors[(r, k)];
                }
            }
            col += part.values.len();
        }
        u
    }

    /// `U f(Lambda) U^T`.
    pub fn map(&self, f: impl Fn(T) -> T) -> SymMatrix<T> {
        let mut out = Mat::zeros(self.dim, self.dim);
        for part in &self.parts {
            let m = part.indices.len();
            for k in 0..m {
                let fk = f(part.values[k]);
                if fk == T::zero() {
                    continue;
                }
                for r in 0..m {
                    let ur = fk * part.vectors[(r, k)];
                    if ur == T::zero() {
                        continue;
                    }
                    let i = part.indices[r];
                    for c in 0..m {
                        out[(i, part.indices[c])] += ur * part.vectors[(c, k)];
                    }
                }
            }
        }
        SymMatrix::symmetrize(out)
    }
}

/// Connected components of the graph on `0..n` with an edge wherever `linked(i, j)`.
pub fn components(n: usize, mut linked: impl FnMut(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if linked(i, j) {
                uf.union(i, j);
            }
        }
    }
    uf.groups()
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so group order follows the lowest index
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Groups sorted by their lowest member, members ascending.
    pub(crate) fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push(Vec::new());
            }
            out[slot[r]].push(i);
        }
        out
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi on each connected component.
pub fn sym_eigen<T: Scalar>(m: &SymMatrix<T>) -> SymEigen<T> {
    let n = m.dim();
    let comps = components(n, |i, j| m[(i, j)] != T::zero());
    let parts = comps
        .into_iter()
        .map(|indices| {
            if indices.len() == 1 {
                let i = indices[0];
                EigenPart {
                    values: vec![m[(i, i)]],
                    vectors: Mat::identity(1),
                    indices,
                }
            } else {
                let sub = m.as_mat().submatrix(&indices, &indices);
                let (values, vectors) = jacobi(sub);
                EigenPart {
                    indices,
                    values,
                    vectors,
                }
            }
        })
        .collect();
    SymEigen { dim: n, parts }
}

fn jacobi<T: Scalar>(mut a: Mat<T>) -> (Vec<T>, Mat<T>) {
    let n = a.rows();
    let mut v = Mat::identity(n);
    let eps = T::epsilon();
    let hundred = T::lit(100.0);
    for sweep in 0..64 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = a[(i, j)] * a[(i, j)];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off == T::zero() || off <= eps * eps * total * T::lit(1e-4) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let g = hundred * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    continue;
                }
                let h = aqq - app;
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = h / (T::lit(2.0) * apq);
                    let t = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

fn psd_threshold<T: Scalar>(m: &SymMatrix<T>, cfg: &KernelConfig<T>) -> T {
    cfg.tol_psd * T::one().max(m.as_mat().max_abs())
}

/// Checks positive semi-definiteness up to `tol_psd`.
pub fn check_psd<T: Scalar>(m: &SymMatrix<T>, cfg: &KernelConfig<T>) -> Result<SymEigen<T>> {
    let eig = sym_eigen(m);
    let min = eig.min_value();
    if !min.is_finite() && eig.dim() > 0 {
        return Err(Error::NonFinite {
            what: "eigenvalues",
            scenario: None,
        });
    }
    if min < -psd_threshold(m, cfg) {
        return Err(Error::IndefiniteMatrix {
            min_eigenvalue: min.as_f64(),
        });
    }
    Ok(eig)
}

/// Symmetric PSD square root with negative eigenvalues inside tolerance clamped to zero.
pub fn psd_sqrt<T: Scalar>(m: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    psd_sqrt_with(m, &KernelConfig::default())
}

pub fn psd_sqrt_with<T: Scalar>(m: &SymMatrix<T>, cfg: &KernelConfig<T>) -> Result<SymMatrix<T>> {
    let eig = check_psd(m, cfg)?;
    Ok(eig.map(|l| l.max(T::zero()).sqrt()))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
pub fn pseudo_inverse<T: Scalar>(m: &SymMatrix<T>) -> SymMatrix<T> {
    pseudo_inverse_with(m, &KernelConfig::default())
}

pub fn pseudo_inverse_with<T: Scalar>(m: &SymMatrix<T>, cfg: &KernelConfig<T>) -> SymMatrix<T> {
    let eig = sym_eigen(m);
    let cut = cfg.tol_rank * eig.max_abs_value();
    eig.map(|l| if l.abs() > cut { T::one() / l } else { T::zero() })
}

/// Numerical rank under `tol_rank`.
pub fn rank<T: Scalar>(m: &SymMatrix<T>, cfg: &KernelConfig<T>) -> usize {
    let eig = sym_eigen(m);
    let cut = cfg.tol_rank * eig.max_abs_value();
    eig.values().iter().filter(|l| l.abs() > cut && **l != T::zero()).count()
}

/// Lower Cholesky factor; fails with `SingularMatrix` on a non-positive pivot.
pub fn cholesky<T: Scalar>(m: &SymMatrix<T>) -> Result<Mat<T>> {
    let n = m.dim();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) {
            return Err(Error::SingularMatrix);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

fn jittered<T: Scalar>(m: &SymMatrix<T>) -> SymMatrix<T> {
    let n = m.dim();
    if n == 0 {
        return m.clone();
    }
    let jitter = T::lit(1e-12) * m.as_mat().trace().abs() / T::from_usize_lossy(n);
    let mut out = m.as_mat().clone();
    for i in 0..n {
        out[(i, i)] += jitter;
    }
    SymMatrix::symmetrize(out)
}

fn chol_solve_in_place<T: Scalar>(l: &Mat<T>, b: &mut [T]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `m x = b` for SPD `m`, with a diagonal jitter of `1e-12 * trace / d`.
pub fn spd_solve<T: Scalar>(m: &SymMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    if b.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: m.dim(),
            found: b.len(),
        });
    }
    let l = cholesky(&jittered(m))?;
    let mut x = b.to_vec();
    chol_solve_in_place(&l, &mut x);
    Ok(x)
}

/// Inverse of an SPD matrix via Cholesky (no jitter).
pub fn spd_inverse<T: Scalar>(m: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    let n = m.dim();
    let l = cholesky(m)?;
    let mut inv = Mat::zeros(n, n);
    let mut col = vec![T::zero(); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        chol_solve_in_place(&l, &mut col);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(SymMatrix::symmetrize(inv))
}

/// Reverse-mode adjoint of a spectral function `Y = U f(Lambda) U^T`.
///
/// `df(a, b)` returns the divided difference `(f(a) - f(b)) / (a - b)` (or `f'(a)`
/// when the two coincide); pairs it maps to zero do not propagate.
pub(crate) fn spectral_adjoint<T: Scalar>(
    u: &Mat<T>,
    values: &[T],
    ybar: &Mat<T>,
    df: impl Fn(T, T) -> T,
) -> Mat<T> {
    let n = values.len();
    let ybar_s = SymMatrix::symmetrize(ybar.clone());
    let mut inner = u.tr_matmul(&ybar_s.as_mat().matmul(u));
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] *= df(values[i], values[j]);
        }
    }
    u.matmul(&inner).matmul_tr(u)
}
