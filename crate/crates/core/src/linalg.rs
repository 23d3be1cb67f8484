//! Dense linear algebra on top of nalgebra: reduced row echelon form with a
//! relative rank threshold, kernel vectors, solves and condition numbers.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Rref {
    pub matrix: DMatrix<f64>,
    pub pivots: Vec<usize>,
    pub rank: usize,
}

/// Gauss–Jordan elimination with partial pivoting. Entries below
/// `rel_tol · max|a_ij|` count as zero.
pub fn rref(a: &DMatrix<f64>, rel_tol: f64) -> Rref {
    let mut m = a.clone();
    let (rows, cols) = m.shape();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let thresh = rel_tol * scale;
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let (best, val) = (row..rows).map(|r| (r, m[(r, col)].abs())).fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(val > thresh) || scale == 0.0 {
            for r in row..rows {
                m[(r, col)] = 0.0;
            }
            continue;
        }
        m.swap_rows(row, best);
        let p = m[(row, col)];
        for c in 0..cols {
            m[(row, c)] /= p;
        }
        for r in 0..rows {
            if r != row {
                let factor = m[(r, col)];
                if factor != 0.0 {
                    for c in 0..cols {
                        let v = m[(row, c)];
                        m[(r, c)] -= factor * v;
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let rank = pivots.len();
    Rref { matrix: m, pivots, rank }
}

/// Kernel vector from the first free column of the RREF, or `None` when
/// the columns are independent.
pub fn kernel_vector(a: &DMatrix<f64>, rel_tol: f64) -> Option<DVector<f64>> {
    let r = rref(a, rel_tol);
    let cols = a.ncols();
    let free = (0..cols).find(|c| !r.pivots.contains(c))?;
    let mut k = DVector::zeros(cols);
    k[free] = 1.0;
    for (i, &p) in r.pivots.iter().enumerate() {
        if p < free {
            k[p] = -r.matrix[(i, free)];
        }
    }
    Some(k)
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// 2-norm condition number from singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
