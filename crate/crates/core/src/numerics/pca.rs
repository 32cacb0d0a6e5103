use nalgebra::DMatrix;

use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Width of the Gaussian random projection applied to inputs narrower than
/// the requested PCA dimension.
pub const RANDOM_PROJECTION_DIM: usize = 256;

/// Relative eigenvalue floor below which a direction counts as zero-variance.
const RANK_TOL: f64 = 1e-10;

/// `x · R` with `R` i.i.d. N(0, 1/out_dim), shape p×out_dim.
pub fn gaussian_random_projection(x: &Matrix, out_dim: usize, rng: &mut Rng) -> Matrix {
    let scale = 1.0 / (out_dim as f64).sqrt();
    let proj = Matrix::from_fn(x.cols(), out_dim, |_, _| rng.normal() * scale);
    x.matmul(&proj)
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue
/// (ties keep solver order). Eigenvectors are returned as columns.
pub(crate) fn symmetric_eigen_desc(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.rows();
    let dm = DMatrix::from_row_slice(n, n, m.data());
    let eig = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flip `v` so its largest-magnitude entry (first on ties) is non-negative.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Project `x` onto its top-`d` principal components.
///
/// Components come from the covariance of the column-centered input,
/// ordered by explained variance. Inputs with fewer than `d` columns are first
/// lifted by a seeded Gaussian random projection to
/// `max(p, RANDOM_PROJECTION_DIM)` columns. Missing directions (rank < d) are
/// zero columns.
pub fn pca_fit_transform(x: &Matrix, d: usize, rng: &mut Rng) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::invalid("PCA needs at least one row"));
    }
    if d == 0 {
        return Err(Error::invalid("PCA target dimension must be >= 1"));
    }
    let lifted;
    let x = if x.cols() < d {
        lifted = gaussian_random_projection(x, x.cols().max(RANDOM_PROJECTION_DIM), rng);
        &lifted
    } else {
        x
    };
    let n = x.rows();
    let p = x.cols();
    let xc = x.centered();
    let mut out = Matrix::zeros(n, d);

    // Component vectors (length p) paired with their eigenvalue.
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(d);
    if p <= n {
        let cov = xc.matmul_tn(&xc);
        let (values, vectors) = symmetric_eigen_desc(&cov);
        let top = values.first().copied().unwrap_or(0.0).max(0.0);
        for (c, &lambda) in values.iter().enumerate().take(d) {
            if !(lambda > top * RANK_TOL && lambda > 0.0) {
                break;
            }
            components.push((0..p).map(|r| vectors.get(r, c)).collect());
        }
    } else {
        let gram = xc.matmul_nt(&xc);
        let (values, vectors) = symmetric_eigen_desc(&gram);
        let top = values.first().copied().unwrap_or(0.0).max(0.0);
        for (c, &lambda) in values.iter().enumerate().take(d) {
            if !(lambda > top * RANK_TOL && lambda > 0.0) {
                break;
            }
            let u: Vec<f64> = (0..n).map(|r| vectors.get(r, c)).collect();
            let inv = 1.0 / lambda.sqrt();
            let mut v = vec![0.0; p];
            for (row, &ui) in xc.iter_rows().zip(&u) {
                for (vj, xj) in v.iter_mut().zip(row) {
                    *vj += ui * xj;
                }
            }
            v.iter_mut().for_each(|x| *x *= inv);
            components.push(v);
        }
    }

    for (c, mut v) in components.into_iter().enumerate() {
        fix_sign(&mut v);
        for r in 0..n {
            out.set(r, c, super::dot(xc.row(r), &v));
        }
    }
    Ok(out)
}
