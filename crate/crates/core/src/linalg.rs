use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative pivot below which a column counts as aliased with earlier ones.
const ALIAS_TOL: f64 = 1e-10;

/// Columns whose Cholesky pivot collapses relative to their diagonal.
pub fn aliased_columns(matrix: &DMatrix<f64>) -> Vec<usize> {
    let n = matrix.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut aliased = Vec::new();
    for j in 0..n {
        let diag = matrix[(j, j)];
        let mut d = diag;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > ALIAS_TOL * diag.abs().max(f64::MIN_POSITIVE)) || diag <= 0.0 {
            aliased.push(j);
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut s = matrix[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    aliased
}

/// Cholesky factor of a symmetric positive definite matrix, or an error
/// naming the aliased columns.
pub fn checked_cholesky(matrix: &DMatrix<f64>, names: &[String]) -> Result<Cholesky<f64, Dyn>> {
    let aliased = aliased_columns(matrix);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient {
            columns: aliased.iter().map(|&j| names[j].clone()).collect(),
        });
    }
    Cholesky::new(matrix.clone()).ok_or_else(|| Error::RankDeficient {
        columns: vec!["<numerically indefinite>".into()],
    })
}

pub fn solve(chol: &Cholesky<f64, Dyn>, rhs: &[f64]) -> Vec<f64> {
    chol.solve(&DVector::from_column_slice(rhs))
        .iter()
        .copied()
        .collect()
}

/// Inverse of a symmetric matrix through its eigendecomposition. Fails with
/// the eigen-directions whose eigenvalue is not clearly positive.
pub fn spd_inverse(matrix: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(matrix.clone());
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = 1e-10 * max_ev.max(f64::MIN_POSITIVE);
    let mut directions = Vec::new();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= threshold {
            let v = eig.eigenvectors.column(i);
            let mut loaded: Vec<(usize, f64)> = v.iter().copied().enumerate().collect();
            loaded.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
            let labels = loaded
                .iter()
                .take_while(|(_, c)| c.abs() > 0.1)
                .map(|(j, c)| format!("{}({c:+.2})", names[*j]))
                .collect();
            directions.push((ev, labels));
        }
    }
    if !directions.is_empty() {
        return Err(Error::NotPositiveDefinite { directions });
    }
    let n = matrix.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        inv += (v * v.transpose()) / ev;
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_duplicate_column() {
        // columns 0 and 2 identical in X; X'X is singular in column 2
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 0.0]);
        let xtx = x.transpose() * &x;
        assert_eq!(aliased_columns(&xtx), vec![2]);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let err = checked_cholesky(&xtx, &names).unwrap_err();
        assert!(err.to_string().contains('c'));
    }

    #[test]
    fn inverse_of_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let names = vec!["a".to_string(), "b".to_string()];
        let inv = spd_inverse(&m, &names).unwrap();
        let id = &m * inv;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse(&bad, &names),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
