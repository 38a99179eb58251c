//! Dense vectors, matrices and small eigensolvers.
//!
//! Everything here is sized for analysis work: the eigensolvers target
//! matrices up to a couple of hundred rows. All loops run in a fixed order so
//! results are bit-stable across runs.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RidgeError};

/// Relative pivot tolerance below which a matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Relative asymmetry tolerance for matrices passed to symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest dimension accepted by [`general_eigenvalues`].
pub const ANALYSIS_DIM_LIMIT: usize = 200;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u - v).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u + v).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// A point `z = (x, y)` of the joint space, leader block first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl JointPoint {
    /// Panics if either block is empty.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(!x.is_empty() && !y.is_empty(), "both players need at least one coordinate");
        Self { x, y }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(vec![0.0; n], vec![0.0; m])
    }

    /// Splits a concatenated vector after the first `n` entries.
    pub fn from_concat(z: &[f64], n: usize) -> Result<Self> {
        if n == 0 || n >= z.len() {
            return Err(RidgeError::Shape(format!("cannot split vector of length {} at {}", z.len(), n)));
        }
        Ok(Self::new(z[..n].to_vec(), z[n..].to_vec()))
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&self.y);
        z
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.y.len()
    }

    pub fn norm(&self) -> f64 {
        (dot(&self.x, &self.x) + dot(&self.y, &self.y)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.x) && all_finite(&self.y)
    }

    pub fn distance(&self, other: &JointPoint) -> f64 {
        self.sub(other).norm()
    }

    pub fn sub(&self, other: &JointPoint) -> JointPoint {
        JointPoint { x: sub(&self.x, &other.x), y: sub(&self.y, &other.y) }
    }

    pub fn add(&self, other: &JointPoint) -> JointPoint {
        JointPoint { x: add(&self.x, &other.x), y: add(&self.y, &other.y) }
    }

    pub fn scale(&self, alpha: f64) -> JointPoint {
        JointPoint { x: scaled(alpha, &self.x), y: scaled(alpha, &self.y) }
    }

    /// `self + alpha * dir`
    pub fn offset(&self, alpha: f64, dir: &JointPoint) -> JointPoint {
        let mut out = self.clone();
        axpy(alpha, &dir.x, &mut out.x);
        axpy(alpha, &dir.y, &mut out.y);
        out
    }

    pub fn same_shape(&self, other: &JointPoint) -> bool {
        self.n() == other.n() && self.m() == other.m()
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 1.0;
        }
        a
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut a = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            a[(i, i)] = *v;
        }
        a
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RidgeError::Shape(format!("{} entries for a {}x{} matrix", data.len(), rows, cols)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Panics on ragged input; meant for literals in code and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose `j`-th column is `cols[j]`.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let mut a = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows);
            for i in 0..rows {
                a[(i, j)] = col[i];
            }
        }
        a
    }

    /// Assembles `[[a, b], [c, d]]`.
    pub fn from_blocks(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix, d: &DenseMatrix) -> Result<Self> {
        if a.rows != b.rows || c.rows != d.rows || a.cols != c.cols || b.cols != d.cols {
            return Err(RidgeError::Shape("incompatible block shapes".into()));
        }
        let (n, m) = (a.rows, c.rows);
        let (p, q) = (a.cols, b.cols);
        Ok(Self::from_fn(n + m, p + q, |i, j| match (i < n, j < p) {
            (true, true) => a[(i, j)],
            (true, false) => b[(i, j - p)],
            (false, true) => c[(i - n, j)],
            (false, false) => d[(i - n, j - p)],
        }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DenseMatrix {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn transpose(&self) -> DenseMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix { rows: self.rows, cols: self.cols, data: scaled(alpha, &self.data) }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// Largest `|A_ij - A_ji|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry() <= SYMMETRY_TOL * self.norm_inf().max(1.0)
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrized(&self) -> DenseMatrix {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }
}

/// Eigenvalues of a square matrix together with its spectral radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<Complex64>) -> Self {
        eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let spectral_radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        Self { eigenvalues, spectral_radius }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self::new(values.iter().map(|v| Complex64::new(*v, 0.0)).collect())
    }

    pub fn max_imag(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.im.abs()).fold(0.0, f64::max)
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.re).collect()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Greedy-free optimal matching distance between two eigenvalue multisets:
/// the largest pairwise distance under the best one-to-one assignment,
/// found by exhaustive search for small sizes and by sorted matching otherwise.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    if n <= 8 {
        let mut used = vec![false; n];
        let mut best = f64::INFINITY;
        bottleneck_search(a, b, 0, &mut used, 0.0, &mut best);
        return best;
    }
    let key = |l: &Complex64| (l.re, l.im);
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap_or(std::cmp::Ordering::Equal));
    sb.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap_or(std::cmp::Ordering::Equal));
    sa.iter().zip(&sb).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

fn bottleneck_search(a: &[Complex64], b: &[Complex64], i: usize, used: &mut [bool], current: f64, best: &mut f64) {
    if current >= *best {
        return;
    }
    if i == a.len() {
        *best = current;
        return;
    }
    for j in 0..b.len() {
        if !used[j] {
            used[j] = true;
            let d = (a[i] - b[j]).norm();
            bottleneck_search(a, b, i + 1, used, current.max(d), best);
            used[j] = false;
        }
    }
}

fn check_square(a: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(RidgeError::Shape(format!("expected square matrix, got {}x{}", a.rows, a.cols)));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending: Householder reduction to
/// tridiagonal form followed by the implicit QL iteration.
pub fn sym_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_square(a)?;
    if !a.is_symmetric() {
        return Err(RidgeError::Shape(format!("matrix is not symmetric (asymmetry {:e})", a.asymmetry())));
    }
    let (mut d, mut e) = tridiagonalize(a.symmetrized());
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Diagonal and sub-diagonal (`e[i]` couples `i` and `i + 1`, `e[n-1] = 0`)
/// of a tridiagonal matrix orthogonally similar to `w`.
fn tridiagonalize(mut w: DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = w.rows;
    let mut e = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let len = n - k - 1;
        let mut v: Vec<f64> = (k + 1..n).map(|i| w.data[i * n + k]).collect();
        let xnorm = norm(&v);
        if xnorm == 0.0 {
            continue;
        }
        let alpha = if v[0] > 0.0 { -xnorm } else { xnorm };
        v[0] -= alpha;
        let vnorm = norm(&v);
        if vnorm == 0.0 {
            e[k] = w.data[(k + 1) * n + k];
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        // trailing block A ← (I - 2vvᵀ) A (I - 2vvᵀ) = A - v qᵀ - q vᵀ
        let mut p = vec![0.0; len];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = &w.data[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + n];
            *pi = dot(row, &v);
        }
        let kk = dot(&v, &p);
        let q: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| 2.0 * (pi - kk * vi)).collect();
        for i in 0..len {
            let row = &mut w.data[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + n];
            for (j, r) in row.iter_mut().enumerate() {
                *r -= v[i] * q[j] + q[i] * v[j];
            }
        }
        for i in k + 1..n {
            w.data[i * n + k] = 0.0;
            w.data[k * n + i] = 0.0;
        }
        w.data[(k + 1) * n + k] = alpha;
        w.data[k * n + k + 1] = alpha;
        e[k] = alpha;
    }
    if n >= 2 {
        e[n - 2] = w.data[(n - 1) * n + n - 2];
    }
    let d = (0..n).map(|i| w.data[i * n + i]).collect();
    (d, e)
}

fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    // absolute floor for exactly singular blocks, where d[m] = d[m+1] = 0
    let floor = f64::EPSILON * d.iter().zip(e.iter()).map(|(a, b)| a.abs() + b.abs()).fold(0.0, f64::max);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(RidgeError::NoConvergence("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition: returns ascending eigenvalues and the
/// orthogonal matrix `Q` whose columns are the matching eigenvectors, so
/// that `A = Q diag(λ) Qᵀ`.
#[cfg(test)]
fn sym_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    check_square(a)?;
    if !a.is_symmetric() {
        return Err(RidgeError::Shape(format!("matrix is not symmetric (asymmetry {:e})", a.asymmetry())));
    }
    let n = a.rows;
    let mut w = a.symmetrized();
    let mut q = DenseMatrix::identity(n);
    let scale = w.norm_fro();
    if scale == 0.0 {
        return Ok((vec![0.0; n], q));
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += w[(i, j)] * w[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = w[(p, r)];
                if apr.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (w[(r, r)] - w[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let wkp = w[(k, p)];
                    let wkr = w[(k, r)];
                    w[(k, p)] = c * wkp - s * wkr;
                    w[(k, r)] = s * wkp + c * wkr;
                }
                for k in 0..n {
                    let wpk = w[(p, k)];
                    let wrk = w[(r, k)];
                    w[(p, k)] = c * wpk - s * wrk;
                    w[(r, k)] = s * wpk + c * wrk;
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| q[(i, order[j])]);
    Ok((values, vectors))
}

/// All eigenvalues of a general square matrix via balancing, reduction to
/// upper Hessenberg form and the shifted (Francis double-shift) QR iteration.
pub fn general_eigenvalues(a: &DenseMatrix) -> Result<Spectrum> {
    check_square(a)?;
    let n = a.rows;
    if n > ANALYSIS_DIM_LIMIT {
        return Err(RidgeError::Size { dim: n, limit: ANALYSIS_DIM_LIMIT });
    }
    if !a.is_finite() {
        return Err(RidgeError::Overflow("matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Spectrum::new(Vec::new()));
    }
    let mut h = a.clone();
    balance(&mut h);
    reduce_to_hessenberg(&mut h);
    let eig = hessenberg_qr(&mut h)?;
    Ok(Spectrum::new(eig))
}

/// Spectral radius, computed through [`general_eigenvalues`].
pub fn spectral_radius(a: &DenseMatrix) -> Result<f64> {
    Ok(general_eigenvalues(a)?.spectral_radius)
}

fn balance(a: &mut DenseMatrix) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = a.rows;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Gaussian elimination with pivoting to upper Hessenberg form (similarity
/// transform, so the spectrum is preserved).
fn reduce_to_hessenberg(a: &mut DenseMatrix) {
    let n = a.rows;
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut piv = m;
        for j in m..n {
            if a[(j, m - 1)].abs() > x.abs() {
                x = a[(j, m - 1)];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                let tmp = a[(piv, j)];
                a[(piv, j)] = a[(m, j)];
                a[(m, j)] = tmp;
            }
            for j in 0..n {
                let tmp = a[(j, piv)];
                a[(j, piv)] = a[(j, m)];
                a[(j, m)] = tmp;
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, m - 1)] = 0.0;
                    for j in m..n {
                        a[(i, j)] -= y * a[(m, j)];
                    }
                    for j in 0..n {
                        a[(j, m)] += y * a[(j, i)];
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            a[(i, j)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys `a`).
#[allow(clippy::many_single_char_names)]
fn hessenberg_qr(a: &mut DenseMatrix) -> Result<Vec<Complex64>> {
    const MAX_ITS: usize = 60;
    let n = a.rows;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    // `nn` is one past the active block's last index, so the block is 0..nn.
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let last = nn - 1;
            // look for a single small subdiagonal element
            let mut l = last;
            while l >= 1 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() + s == s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[(last, last)];
            if l == last {
                wr[last] = x + t;
                wi[last] = 0.0;
                nn -= 1;
                break;
            }
            y = a[(last - 1, last - 1)];
            w = a[(last, last - 1)] * a[(last - 1, last)];
            if l + 1 == last {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[last - 1] = x + z;
                    wr[last] = x + z;
                    if z != 0.0 {
                        wr[last] = x - w / z;
                    }
                    wi[last - 1] = 0.0;
                    wi[last] = 0.0;
                } else {
                    wr[last - 1] = x + p;
                    wr[last] = x + p;
                    wi[last - 1] = -z;
                    wi[last] = z;
                }
                nn -= 2;
                break;
            }
            if its == MAX_ITS {
                return Err(RidgeError::NoConvergence(format!(
                    "QR iteration stalled on a block of size {}",
                    last + 1 - l
                )));
            }
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for i in 0..=last {
                    a[(i, i)] -= x;
                }
                let s = a[(last, last - 1)].abs() + a[(last - 1, last - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = last - 2;
            loop {
                z = a[(m, m)];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - r - s;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=last {
                a[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[(i, i - 3)] = 0.0;
                }
            }
            let mut k = m;
            while k < last {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = 0.0;
                    if k != last - 1 {
                        r = a[(k + 2, k - 1)];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=last {
                        p = a[(k, j)] + q * a[(k + 1, j)];
                        if k != last - 1 {
                            p += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= p * z;
                        }
                        a[(k + 1, j)] -= p * y;
                        a[(k, j)] -= p * x;
                    }
                    let mmin = last.min(k + 3);
                    for i in l..=mmin {
                        p = x * a[(i, k)] + y * a[(i, k + 1)];
                        if k != last - 1 {
                            p += z * a[(i, k + 2)];
                            a[(i, k + 2)] -= p * r;
                        }
                        a[(i, k + 1)] -= p * q;
                        a[(i, k)] -= p;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

/// LU factorisation with partial pivoting, kept for repeated solves.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        check_square(a)?;
        let n = a.rows;
        let scale = a.norm_inf();
        let threshold = SINGULAR_TOL * scale;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut smallest = f64::INFINITY;
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    piv = i;
                }
            }
            smallest = smallest.min(best);
            if best <= threshold || best == 0.0 {
                return Err(RidgeError::Singular { pivot: best });
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        log::trace!("LU smallest pivot {smallest:e}");
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows;
        if b.len() != n {
            return Err(RidgeError::Shape(format!("rhs length {} for {}x{} system", b.len(), n, n)));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let cols = (0..b.cols()).map(|j| self.solve(&b.column(j))).collect::<Result<Vec<_>>>()?;
        Ok(DenseMatrix::from_columns(b.rows(), &cols))
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    LuFactors::new(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        random_matrix(rng, n).symmetrized()
    }

    #[test]
    fn joint_point_split_round_trip() {
        let z = JointPoint::new(vec![1.0, 2.0], vec![3.0]);
        let flat = z.concat();
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
        assert_eq!(JointPoint::from_concat(&flat, 2).unwrap(), z);
        assert!(JointPoint::from_concat(&flat, 3).is_err());
        assert!(JointPoint::from_concat(&flat, 0).is_err());
    }

    #[test]
    fn sym_eigenvalues_of_diagonal() {
        let ev = sym_eigenvalues(&DenseMatrix::diag(&[2.0, -3.0])).unwrap();
        assert_eq!(ev, vec![-3.0, 2.0]);
    }

    #[test]
    fn sym_eigenvalues_match_characteristic_polynomial() {
        // λ² − 8λ − 4 = 0
        let a = DenseMatrix::from_rows(&[&[6.0, 4.0], &[4.0, 2.0]]);
        let ev = sym_eigenvalues(&a).unwrap();
        let root = 20f64.sqrt();
        assert!((ev[0] - (4.0 - root)).abs() < 1e-12);
        assert!((ev[1] - (4.0 + root)).abs() < 1e-12);
    }

    #[test]
    fn sym_eigenvalues_zero_matrix() {
        assert_eq!(sym_eigenvalues(&DenseMatrix::zeros(3, 3)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn sym_eigenvalues_reject_bad_shapes() {
        assert!(matches!(sym_eigenvalues(&DenseMatrix::zeros(2, 3)), Err(RidgeError::Shape(_))));
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(sym_eigenvalues(&a), Err(RidgeError::Shape(_))));
    }

    #[test]
    fn tridiagonal_ql_agrees_with_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 7, 20, 45] {
            let a = random_symmetric(&mut rng, n);
            let fast = sym_eigenvalues(&a).unwrap();
            let (slow, _) = sym_eigen(&a).unwrap();
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).abs() <= 1e-10 * a.norm_fro().max(1.0), "n={n}: {x} vs {y}");
            }
        }
        let d = DenseMatrix::diag(&[3.0, -1.0, 2.0]);
        assert_eq!(sym_eigenvalues(&d).unwrap(), vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_reconstruction_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 5, 12, 30] {
            let a = random_symmetric(&mut rng, n);
            let (vals, q) = sym_eigen(&a).unwrap();
            let rebuilt = q.matmul(&DenseMatrix::diag(&vals)).matmul(&q.transpose());
            let err = rebuilt.sub(&a).norm_fro();
            assert!(err <= 1e-8 * a.norm_fro().max(1.0), "n={n} err={err:e}");
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn gda_jacobian_has_double_eigenvalue() {
        let eta = 0.1;
        let j = DenseMatrix::identity(2).sub(&DenseMatrix::from_rows(&[&[6.0, 4.0], &[-4.0, -2.0]]).scale(eta));
        let spec = general_eigenvalues(&j).unwrap();
        for l in &spec.eigenvalues {
            assert!((l - Complex64::new(0.8, 0.0)).norm() < 1e-8, "{l}");
        }
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let r = DenseMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let spec = general_eigenvalues(&r).unwrap();
        let want = [Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0)];
        assert!(multiset_distance(&spec.eigenvalues, &want) < 1e-12);
        assert!((spec.spectral_radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn companion_matrix_roots() {
        // λ² − 5λ + 6 = (λ − 2)(λ − 3)
        let c = DenseMatrix::from_rows(&[&[5.0, -6.0], &[1.0, 0.0]]);
        let spec = general_eigenvalues(&c).unwrap();
        let want = [Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)];
        assert!(multiset_distance(&spec.eigenvalues, &want) < 1e-12);
    }

    #[test]
    fn general_eigenvalues_size_guard() {
        let big = DenseMatrix::identity(ANALYSIS_DIM_LIMIT + 1);
        assert!(matches!(general_eigenvalues(&big), Err(RidgeError::Size { .. })));
    }

    #[test]
    fn complex_pairs_are_conjugate_and_radius_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3, 6, 10, 25, 60] {
            let a = random_matrix(&mut rng, n);
            let spec = general_eigenvalues(&a).unwrap();
            assert_eq!(spec.len(), n);
            let conj: Vec<Complex64> = spec.eigenvalues.iter().map(|l| l.conj()).collect();
            assert!(multiset_distance(&spec.eigenvalues, &conj) < 1e-10 || n > 8);
            let radius = spec.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
            assert_eq!(radius, spec.spectral_radius);
            // trace check as an independent sanity test
            let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
            let sum: f64 = spec.eigenvalues.iter().map(|l| l.re).sum();
            assert!((trace - sum).abs() < 1e-9 * n as f64, "n={n}");
            let imag_sum: f64 = spec.eigenvalues.iter().map(|l| l.im).sum();
            assert!(imag_sum.abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_and_general_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..=20);
            let a = random_symmetric(&mut rng, n);
            let sym = sym_eigenvalues(&a).unwrap();
            let gen = general_eigenvalues(&a).unwrap();
            let mut re = gen.real_parts();
            re.sort_by(f64::total_cmp);
            for (u, v) in sym.iter().zip(&re) {
                assert!((u - v).abs() < 1e-7, "{u} vs {v}");
            }
            assert!(gen.max_imag() <= 1e-10);
        }
    }

    #[test]
    fn solve_dense_examples() {
        let b = vec![1.5, -2.0, 3.0];
        assert_eq!(solve_dense(&DenseMatrix::identity(3), &b).unwrap(), b);
        let one = DenseMatrix::from_rows(&[&[-2.0]]);
        assert_eq!(solve_dense(&one, &[4.0]).unwrap(), vec![-2.0]);
    }

    #[test]
    fn solve_dense_reports_singularity() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        match solve_dense(&a, &[1.0, 1.0]) {
            Err(RidgeError::Singular { pivot }) => assert!(pivot.abs() < 1e-12),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn solve_dense_residual_bound_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..1000 {
            let n = 1 + trial % 8;
            // diagonally shifted for good conditioning
            let mut a = random_matrix(&mut rng, n);
            for i in 0..n {
                a[(i, i)] += 3.0 * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let sol = solve_dense(&a, &b).unwrap();
            let resid = norm(&sub(&a.matvec(&sol), &b));
            assert!(resid <= 1e-8 * (a.norm_inf() * norm(&sol) + norm(&b)));
        }
    }

    #[test]
    fn solve_dense_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = random_matrix(&mut rng, 5);
        for i in 0..5 {
            a[(i, i)] += 4.0;
        }
        let b = a.matvec(&[1.0; 5]);
        let sol = solve_dense(&a, &b).unwrap();
        for v in sol {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }
}
