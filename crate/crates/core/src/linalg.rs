//! Small dense-matrix helpers shared by the solver modules: symmetry checks,
//! definiteness tests via an LDL^T factorization, and block assembly.

use nalgebra::{DMatrix, DVector, Dyn};
use serde::Serialize;

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// Largest absolute entry of a vector, 0 if empty.
pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// max |X - X^T| over all entries.
pub fn sym_deviation(m: &DMatrix<f64>) -> f64 {
    let mut dev = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev
}

/// (X + X^T)/2.
pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (&x, &y)| acc.max((x - y).abs()))
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (&x, &y)| acc.max((x - y).abs()))
}

/// Copy `src` into `dst` with its top-left corner at (r, c).
pub fn set_block(dst: &mut DMatrix<f64>, r: usize, c: usize, src: &DMatrix<f64>) {
    dst.view_mut((r, c), src.shape()).copy_from(src);
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        set_block(&mut out, r, c, b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Reciprocal condition estimate from the U factor of an LU decomposition,
/// min |u_ii| / max |u_ii|. Cheap proxy, adequate for the desk-scale systems here.
pub fn lu_rcond(lu: &nalgebra::linalg::LU<f64, Dyn, Dyn>) -> f64 {
    let u = lu.u();
    let d = u.diagonal();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &x in d.iter() {
        lo = lo.min(x.abs());
        hi = hi.max(x.abs());
    }
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Outcome of the symmetric definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Definiteness {
    PositiveDefinite,
    /// Some pivot fell inside the tolerance band but no clearly negative
    /// curvature was found.
    SemidefiniteWithinTol,
    Indefinite,
}

#[derive(Debug, Clone)]
pub struct SymFactorization {
    /// Diagonal pivots d_j of the LDL^T factorization, in elimination order.
    /// Truncated at the first pivot at or below the threshold.
    pub pivots: Vec<f64>,
    pub min_pivot: f64,
    pub threshold: f64,
    pub definiteness: Definiteness,
}

/// Classify a symmetric matrix by an unpivoted LDL^T sweep. The matrix is
/// positive definite iff the factorization completes with every pivot above
/// `rel_tol * max_abs(m)`. On breakdown the sign of the spectrum is resolved
/// with a symmetric eigendecomposition, since a tiny or negative pivot alone
/// does not distinguish semidefinite from indefinite.
pub fn sym_definiteness(m: &DMatrix<f64>, rel_tol: f64) -> SymFactorization {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "definiteness test needs a square matrix");
    let scale = max_abs(m);
    let threshold = rel_tol * scale;
    if n == 0 {
        return SymFactorization {
            pivots: vec![],
            min_pivot: f64::INFINITY,
            threshold,
            definiteness: Definiteness::PositiveDefinite,
        };
    }

    let mut a = m.clone();
    let mut pivots = Vec::with_capacity(n);
    let mut min_pivot = f64::INFINITY;
    let mut completed = true;
    for j in 0..n {
        let d = a[(j, j)];
        min_pivot = min_pivot.min(d);
        pivots.push(d);
        if d <= threshold {
            completed = false;
            break;
        }
        // Right-looking rank-1 update of the trailing block.
        for i in (j + 1)..n {
            let lij = a[(i, j)] / d;
            for l in (j + 1)..=i {
                let upd = lij * a[(l, j)];
                a[(i, l)] -= upd;
                if i != l {
                    a[(l, i)] -= upd;
                }
            }
        }
    }

    let definiteness = if completed {
        Definiteness::PositiveDefinite
    } else {
        let eig = m.clone().symmetric_eigenvalues();
        let lam_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if lam_min < -threshold {
            Definiteness::Indefinite
        } else {
            Definiteness::SemidefiniteWithinTol
        }
    };
    SymFactorization {
        pivots,
        min_pivot,
        threshold,
        definiteness,
    }
}

/// True iff every entry is finite.
pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_deviation_detects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(sym_deviation(&m), 2.0);
        assert_eq!(sym_deviation(&symmetrized(&m)), 0.0);
    }

    #[test]
    fn definiteness_classifies_small_cases() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = sym_definiteness(&pd, 1e-10);
        assert_eq!(f.definiteness, Definiteness::PositiveDefinite);
        assert!((f.min_pivot - 1.5).abs() < 1e-14); // 2 - 1/2

        let indef = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            sym_definiteness(&indef, 1e-10).definiteness,
            Definiteness::Indefinite
        );

        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            sym_definiteness(&psd, 1e-10).definiteness,
            Definiteness::SemidefiniteWithinTol
        );
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let d = block_diag(&[a, b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 1)], 2.0);
        assert_eq!(d[(2, 2)], 4.0);
        assert_eq!(d[(0, 2)], 0.0);
    }

    #[test]
    fn lu_rcond_flags_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let lu = m.lu();
        assert!(lu_rcond(&lu) < 1e-14);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(lu_rcond(&id.lu()), 1.0);
    }
}
