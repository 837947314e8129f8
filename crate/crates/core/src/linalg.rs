//! Dense row-major matrix and the two factorizations the solvers need:
//! Cholesky for SPD normal equations and Householder QR for least squares.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged rows");
        let data = rows.into_iter().flatten().collect();
        Mat { rows: r, cols: c, data }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Select a subset of rows, preserving order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut m = Mat::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.row(i));
        }
        m
    }

    /// Select a subset of columns, preserving order.
    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        let mut m = Mat::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = m.row_mut(i);
            for (c, &j) in idx.iter().enumerate() {
                dst[c] = src[j];
            }
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky factorization of a symmetric positive-definite matrix given as a
/// flat lower-triangle-complete n*n slice. Returns the lower factor L (flat),
/// or the pivot index where positivity failed.
pub fn cholesky(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(j);
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    Ok(l)
}

/// Solve L L^T x = b given the lower factor from `cholesky`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    // forward: L z = b
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    // backward: L^T x = z
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solve an SPD system a x = b. Fails with the offending pivot index.
pub fn solve_spd(a: &[f64], n: usize, b: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    let l = cholesky(a, n)?;
    Ok(cholesky_solve(&l, n, b))
}

/// Householder QR least squares: minimize ||a x - b||_2.
///
/// Detects rank deficiency by comparing each |R_jj| against the column norm
/// and reports the dependent column positions.
pub fn qr_lstsq(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = (a.rows(), a.cols());
    if b.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("rhs of length {n}"),
            got: format!("{}", b.len()),
        });
    }
    if p == 0 || n < p {
        return Err(Error::invalid(format!("least squares needs n >= p >= 1, got {n}x{p}")));
    }
    let mut r = a.clone();
    let mut rhs = b.to_vec();
    let col_norms: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| r.get(i, j) * r.get(i, j)).sum::<f64>().sqrt())
        .collect();
    let mut dependent = Vec::new();
    for j in 0..p {
        // Householder vector for column j below the diagonal.
        let mut norm = 0.0;
        for i in j..n {
            norm += r.get(i, j) * r.get(i, j);
        }
        let norm = norm.sqrt();
        if norm <= 1e-12 * col_norms[j].max(1e-300) {
            dependent.push(j);
            continue;
        }
        let alpha = if r.get(j, j) >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| r.get(i, j)).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for c in j..p {
                let mut s = 0.0;
                for (k, &vi) in v.iter().enumerate() {
                    s += vi * r.get(j + k, c);
                }
                let s = 2.0 * s / vnorm2;
                for (k, &vi) in v.iter().enumerate() {
                    let val = r.get(j + k, c) - s * vi;
                    r.set(j + k, c, val);
                }
            }
            let mut s = 0.0;
            for (k, &vi) in v.iter().enumerate() {
                s += vi * rhs[j + k];
            }
            let s = 2.0 * s / vnorm2;
            for (k, &vi) in v.iter().enumerate() {
                rhs[j + k] -= s * vi;
            }
        }
        if r.get(j, j).abs() <= 1e-10 * col_norms[j].max(1e-300) {
            dependent.push(j);
        }
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent.iter().map(|j| j.to_string()).collect()));
    }
    // Back substitution on R x = rhs[..p].
    let mut x = vec![0.0; p];
    for j in (0..p).rev() {
        let mut s = rhs[j];
        for k in (j + 1)..p {
            s -= r.get(j, k) * x[k];
        }
        x[j] = s / r.get(j, j);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cholesky_solves_spd() {
        // A = B^T B + I for a random-ish B.
        let b = Mat::from_rows(vec![
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.2, -0.7, 1.1],
            vec![3.0, 0.1, -0.4],
        ]);
        let n = 3;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for r in 0..b.rows() {
                    s += b.get(r, i) * b.get(r, j);
                }
                a[i * n + j] = s;
            }
        }
        let x_true = [1.0, -2.0, 0.5];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = (0..n).map(|j| a[i * n + j] * x_true[j]).sum();
        }
        let x = solve_spd(&a, n, &rhs).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(xi, ti, epsilon = 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert_eq!(cholesky(&a, 2), Err(1));
    }

    #[test]
    fn qr_recovers_exact_solution() {
        let a = Mat::from_rows(vec![
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
        ]);
        let b: Vec<f64> = (0..4).map(|i| 2.0 + 0.5 * i as f64).collect();
        let x = qr_lstsq(&a, &b).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn qr_names_dependent_columns() {
        let a = Mat::from_rows(vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 1.0],
            vec![3.0, 6.0, 0.5],
            vec![-1.0, -2.0, 2.0],
        ]);
        let b = vec![1.0, 2.0, 3.0, 4.0];
        match qr_lstsq(&a, &b) {
            Err(Error::RankDeficient(cols)) => assert!(cols.contains(&"1".to_string())),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }
}
