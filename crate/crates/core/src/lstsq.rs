//! Dense ridge least squares via Householder QR on the augmented system
//! `[K; sqrt(lambda) I] x = [y; 0]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ColMatrix<T> {
    rows: usize,
    cols: Vec<Vec<T>>,
}

impl<T: Scalar> ColMatrix<T> {
    pub fn from_columns(rows: usize, cols: Vec<Vec<T>>) -> Result<Self> {
        if let Some(c) = cols.iter().find(|c| c.len() != rows) {
            return Err(Error::Arity {
                what: "matrix column",
                expected: rows,
                got: c.len(),
            });
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.cols[j]
    }
}

/// Solves `argmin_x |K x - y|^2 + lambda |x|^2` for every right-hand side.
///
/// With `lambda == 0` a numerically rank-deficient `K` is reported as
/// [`Error::IllPosed`].
pub fn ridge_solve<T: Scalar>(k: &ColMatrix<T>, rhs: &[Vec<T>], lambda: T) -> Result<Vec<Vec<T>>> {
    if !(lambda >= T::zero() && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge weight must be >= 0, got {lambda}")));
    }
    let n = k.ncols();
    let m0 = k.rows();
    let ridge = lambda > T::zero();
    let m = if ridge { m0 + n } else { m0 };
    if m < n {
        return Err(Error::IllPosed(format!(
            "{m0} equations for {n} unknowns without regularization"
        )));
    }
    let sq = lambda.sqrt();
    let mut a: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut c = k.column(j).to_vec();
            if ridge {
                c.extend((0..n).map(|i| if i == j { sq } else { T::zero() }));
            }
            c
        })
        .collect();
    let mut b: Vec<Vec<T>> = rhs
        .iter()
        .map(|y| {
            if y.len() != m0 {
                return Err(Error::Arity {
                    what: "least-squares target",
                    expected: m0,
                    got: y.len(),
                });
            }
            let mut c = y.clone();
            if ridge {
                c.resize(m, T::zero());
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let mut diag = vec![T::zero(); n];
    for kk in 0..n {
        let norm = a[kk][kk..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if a[kk][kk] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = a[kk][kk..].to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|&x| x * x).sum::<T>();
        diag[kk] = alpha;
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::of(2.0);
        let reflect = |col: &mut [T]| {
            let dot = col.iter().zip(&v).map(|(&c, &w)| c * w).sum::<T>();
            let f = two * dot / vnorm2;
            for (c, &w) in col.iter_mut().zip(&v) {
                *c -= f * w;
            }
        };
        for col in a.iter_mut().skip(kk) {
            reflect(&mut col[kk..]);
        }
        for col in b.iter_mut() {
            reflect(&mut col[kk..]);
        }
    }

    let scale = diag.iter().fold(T::zero(), |acc, d| acc.max(d.abs()));
    let tol = T::epsilon() * T::of((m.max(n) * 100) as f64) * scale;
    if let Some(kk) = (0..n).find(|&kk| diag[kk].abs() <= tol) {
        return Err(Error::IllPosed(format!(
            "column {kk} is numerically dependent; supply a positive ridge weight"
        )));
    }

    Ok(b.into_iter()
        .map(|qty| {
            let mut x = vec![T::zero(); n];
            for i in (0..n).rev() {
                let mut s = qty[i];
                for j in i + 1..n {
                    s -= a[j][i] * x[j];
                }
                x[i] = s / diag[i];
            }
            x
        })
        .collect())
}
