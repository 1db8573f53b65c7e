//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used by every pseudo-inverse in the crate.
pub const RCOND: f64 = 1e-10;

/// Moore–Penrose pseudo-inverse via SVD, zeroing singular values below
/// `RCOND * sigma_max`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd computed u");
    let vt = svd.v_t.expect("svd computed v_t");
    let smax = svd.singular_values.max();
    let cut = RCOND * smax;
    let mut out = DMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            // out += v_i * u_i^T / s
            let vi = vt.row(i).transpose();
            let ui = u.column(i);
            out.ger(1.0 / s, &vi, &ui, 1.0);
        }
    }
    out
}

/// Minimum-norm least-squares solution of `a * x = b`.
///
/// Returns the coefficients and whether any singular value was cut.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd computed u");
    let vt = svd.v_t.expect("svd computed v_t");
    let smax = svd.singular_values.max();
    let cut = RCOND * smax;
    let n = a.ncols();
    let mut deficient = svd.singular_values.len() < n;
    let utb = u.transpose() * b;
    let mut scaled = DMatrix::zeros(svd.singular_values.len(), b.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            for j in 0..b.ncols() {
                scaled[(i, j)] = utb[(i, j)] / s;
            }
        } else {
            deficient = true;
        }
    }
    (vt.transpose() * scaled, deficient)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is signed so its largest-magnitude
/// entry is positive, which makes the result reproducible.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    (values, vectors)
}

/// `(M M^T)^{-1/2} M` for a square matrix, the symmetric decorrelation step.
pub fn symmetric_decorrelate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = m * m.transpose();
    let (vals, vecs) = sym_eigen_desc(&gram);
    let n = vals.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = vals[i].max(f64::MIN_POSITIVE);
        d[(i, i)] = 1.0 / v.sqrt();
    }
    &vecs * d * vecs.transpose() * m
}

/// Solve a symmetric positive-definite system by Cholesky, falling back to
/// the SVD pseudo-inverse if the factorization fails.
pub fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => {
            log::warn!("cholesky failed, falling back to SVD solve");
            pinv(&a) * b
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/n) standard deviation.
pub fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Per-column mean and population standard deviation.
pub fn column_stats(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(m.ncols());
    let mut sds = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let xs = col.as_slice();
        means.push(mean(xs));
        sds.push(pop_std(xs));
    }
    (means, sds)
}

/// Gather the given rows of `m` into a new matrix.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Row-major slice view of a column-major matrix, as a fresh vector.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}
