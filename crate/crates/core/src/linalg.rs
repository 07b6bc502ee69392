use ndarray::Array2;

use crate::error::{Error, Result};

const PSD_TOL: f64 = 1e-12;

/// Lower-triangular `L` with `L Lᵀ = m` for symmetric positive semidefinite
/// `m`. Zero pivots are allowed as long as the rest of their column is zero
/// too; otherwise the matrix is not PSD and an error naming `field` is
/// returned.
pub fn cholesky_psd(m: &Array2<f64>, field: &str) -> Result<Array2<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::invalid(field, "matrix is not square"));
    }
    for i in 0..n {
        for j in 0..i {
            if (m[[i, j]] - m[[j, i]]).abs() > PSD_TOL {
                return Err(Error::invalid(field, "matrix is not symmetric"));
            }
        }
    }
    let scale = m.diag().iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let tol = PSD_TOL * scale * n as f64;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let s = m[[j, j]] - (0..j).map(|k| l[[j, k]] * l[[j, k]]).sum::<f64>();
        if s < -tol {
            return Err(Error::invalid(field, "matrix is not positive semidefinite"));
        }
        if s <= tol {
            for i in j + 1..n {
                let r = m[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
                if r.abs() > 1e-9 * scale {
                    return Err(Error::invalid(field, "matrix is not positive semidefinite"));
                }
            }
            continue;
        }
        let d = s.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let r = m[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            l[[i, j]] = r / d;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_reproduces_matrix() {
        let m = array![[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]];
        let l = cholesky_psd(&m, "m").unwrap();
        let back = l.dot(&l.t());
        for (a, b) in back.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_psd_is_accepted() {
        let m = array![[1.0, 1.0], [1.0, 1.0]];
        let l = cholesky_psd(&m, "m").unwrap();
        assert_eq!(l, array![[1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = array![[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]];
        assert!(cholesky_psd(&m, "rho").is_err());
    }
}
