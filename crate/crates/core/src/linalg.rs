//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition,
//! rank-aware pseudo-inverse, spectral norms, band utilities.
//!
//! Matrices here are at most a few hundred rows (pixel counts), so Jacobi is
//! plenty; it keeps the whole core generic over the scalar type.

use ndarray::{Array1, Array2, ArrayView2};

use crate::scalar::Scalar;

/// Eigendecomposition of a symmetric matrix. `vectors` holds eigenvectors in
/// columns, `values` in matching order (ascending).
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Array2<T>,
}

/// Cyclic Jacobi on a symmetric matrix.
pub fn sym_eigen<T: Scalar>(a: &ArrayView2<T>) -> SymEigen<T> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    if n <= 1 {
        return SymEigen {
            values: (0..n).map(|i| m[[i, i]]).collect(),
            vectors: v,
        };
    }
    let fro = m.iter().map(|&x| x * x).sum::<T>().sqrt();
    let tol = fro * T::epsilon() * T::of(n as f64);
    for _sweep in 0..200 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + m[[p, q]] * m[[p, q]];
            }
        }
        if (off + off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol * T::of(1e-3) {
                    continue;
                }
                let tau = (m[[q, q]] - m[[p, p]]) / (T::of(2.0) * apq);
                let t = {
                    let s = if tau >= T::zero() { T::one() } else { -T::one() };
                    s / (tau.abs() + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    // sort ascending, carrying eigenvectors along
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let values = idx.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::<T>::zeros((n, n));
    for (new, &old) in idx.iter().enumerate() {
        for k in 0..n {
            vectors[[k, new]] = v[[k, old]];
        }
    }
    SymEigen { values, vectors }
}

impl<T: Scalar> SymEigen<T> {
    pub fn lambda_min(&self) -> T {
        self.values[0]
    }

    pub fn lambda_max(&self) -> T {
        *self.values.last().unwrap()
    }

    /// Reassemble sum_i f(lambda_i) v_i v_i^T.
    pub fn map_rebuild(&self, mut f: impl FnMut(T) -> T) -> Array2<T> {
        let n = self.values.len();
        let mut out = Array2::<T>::zeros((n, n));
        for (i, &l) in self.values.iter().enumerate() {
            let fl = f(l);
            if fl == T::zero() {
                continue;
            }
            for r in 0..n {
                let vr = self.vectors[[r, i]] * fl;
                for c in 0..n {
                    out[[r, c]] = out[[r, c]] + vr * self.vectors[[c, i]];
                }
            }
        }
        out
    }
}

/// Pseudo-inverse of a symmetric matrix with a relative eigenvalue cutoff.
/// Returns the inverse and the effective rank.
pub fn pseudo_inverse_sym<T: Scalar>(a: &ArrayView2<T>, rcond: T) -> (Array2<T>, usize) {
    let eig = sym_eigen(a);
    let cut = eig
        .values
        .iter()
        .fold(T::zero(), |m, &l| m.max(l.abs()))
        * rcond;
    let rank = eig.values.iter().filter(|&&l| l.abs() > cut).count();
    let inv = eig.map_rebuild(|l| if l.abs() > cut { T::one() / l } else { T::zero() });
    (inv, rank)
}

/// Trace of the pseudo-inverse together with the effective rank.
pub fn inv_trace_sym<T: Scalar>(a: &ArrayView2<T>, rcond: T) -> (T, usize) {
    let eig = sym_eigen(a);
    let cut = eig
        .values
        .iter()
        .fold(T::zero(), |m, &l| m.max(l.abs()))
        * rcond;
    let mut tr = T::zero();
    let mut rank = 0usize;
    for &l in &eig.values {
        if l.abs() > cut {
            tr = tr + T::one() / l;
            rank += 1;
        }
    }
    (tr, rank)
}

/// Spectral norm (largest |eigenvalue|) of a symmetric matrix.
pub fn spectral_norm_sym<T: Scalar>(a: &ArrayView2<T>) -> T {
    let eig = sym_eigen(a);
    eig.lambda_min().abs().max(eig.lambda_max().abs())
}

/// Zero all entries outside the band |i - j| <= l.
pub fn band_truncate<T: Scalar>(a: &ArrayView2<T>, l: usize) -> Array2<T> {
    let mut out = a.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        if i.abs_diff(j) > l {
            *v = T::zero();
        }
    }
    out
}

/// Smallest l such that every entry with |i - j| > l has magnitude <= tol.
pub fn matrix_bandwidth<T: Scalar>(a: &ArrayView2<T>, tol: T) -> usize {
    let n = a.nrows();
    let mut l = 0usize;
    for i in 0..n {
        for j in 0..a.ncols() {
            if a[[i, j]].abs() > tol {
                l = l.max(i.abs_diff(j));
            }
        }
    }
    l
}

/// Symmetric matrix-vector product helper for plain slices.
pub fn matvec<T: Scalar>(a: &ArrayView2<T>, x: &[T]) -> Array1<T> {
    let n = a.nrows();
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut acc = T::zero();
        for j in 0..a.ncols() {
            acc = acc + a[[i, j]] * x[j];
        }
        y[i] = acc;
    }
    y
}
