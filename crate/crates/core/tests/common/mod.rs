//! Shared test oracles, independent of the library's iterative kernels.

use graphbound_core::DenseMatrix;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: returns
/// `(eigenvalues, eigenvectors-as-columns)`, unsorted.
pub fn jacobi_eigh(a: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    assert_eq!(a.rows(), a.cols(), "jacobi_eigh needs a square matrix");
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let fro: f64 = m
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let tol = 1e-15 * fro.max(1e-300);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p][q] * m[p][q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[i][j]);
    (eigenvalues, vectors)
}

/// Full SVD oracle built on the Jacobi eigendecomposition of `M^T M`:
/// singular values sorted descending with matching right singular
/// vectors (columns of the returned matrix).
pub fn jacobi_svd(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let mt = m.transpose();
    let b = mt.matmul(m).unwrap();
    let (mut eigs, vecs) = jacobi_eigh(&b);
    let k = eigs.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eigs[j].partial_cmp(&eigs[i]).unwrap());
    let sigmas: Vec<f64> = order.iter().map(|&i| eigs[i].max(0.0).sqrt()).collect();
    let sorted_vecs = DenseMatrix::from_fn(k, k, |r, c| vecs.at(r, order[c]));
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (sigmas, sorted_vecs)
}

/// Largest singular value per the oracle.
pub fn oracle_spectral_norm(m: &DenseMatrix) -> f64 {
    let (sigmas, _) = jacobi_svd(m);
    sigmas.first().copied().unwrap_or(0.0)
}
