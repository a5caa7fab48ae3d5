//! Dense matrices and LU solves.
//!
//! Everything in this crate runs on desk-scale systems (tens of buses,
//! embedding widths up to 64), so dense row-major storage with partial
//! pivoting is all the linear algebra we need. The complex variant backs
//! Kron reduction and the eliminated-bus voltage recovery.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

/// Error raised by the direct solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix (pivot {pivot:.3e} at column {col})")]
    Singular { col: usize, pivot: f64 },
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Mat { rows, cols, data }
    }

    /// Build from nested rows; rows must be rectangular.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        // k-in-the-middle loop order keeps both inner accesses contiguous.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert!(self.same_shape(other), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Extract the submatrix with the given row and column index lists.
    pub fn submatrix(&self, row_ids: &[usize], col_ids: &[usize]) -> CMat {
        let mut out = CMat::zeros(row_ids.len(), col_ids.len());
        for (i, &ri) in row_ids.iter().enumerate() {
            for (j, &cj) in col_ids.iter().enumerate() {
                out[(i, j)] = self[(ri, cj)];
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "sub shape mismatch"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        CMat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

impl core::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Solve `a * x = b` for a square real `a` by LU with partial pivoting.
/// `b` may carry multiple right-hand sides as columns.
pub fn lu_solve(a: &Mat, b: &Mat) -> Result<Mat, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "matrix is {}x{}, expected square",
            a.rows(),
            a.cols()
        )));
    }
    if b.rows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has {} rows, expected {}",
            b.rows(),
            n
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = lu.max_abs().max(1.0);
    let m = x.cols();
    for col in 0..n {
        // pivot
        let mut piv = col;
        let mut best = libm::fabs(lu[(col, col)]);
        for r in col + 1..n {
            let v = libm::fabs(lu[(r, col)]);
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= 1e-13 * scale {
            return Err(LinalgError::Singular { col, pivot: best });
        }
        if piv != col {
            for j in 0..n {
                let t = lu[(col, j)];
                lu[(col, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..m {
                let t = x[(col, j)];
                x[(col, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        let d = lu[(col, col)];
        for r in col + 1..n {
            let f = lu[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            lu[(r, col)] = 0.0;
            for j in col + 1..n {
                let v = lu[(col, j)];
                lu[(r, j)] -= f * v;
            }
            for j in 0..m {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    // back substitution
    for col in (0..n).rev() {
        let d = lu[(col, col)];
        for j in 0..m {
            x[(col, j)] /= d;
        }
        for r in 0..col {
            let f = lu[(r, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    Ok(x)
}

/// Complex counterpart of [`lu_solve`].
pub fn lu_solve_complex(a: &CMat, b: &CMat) -> Result<CMat, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "matrix is {}x{}, expected square",
            a.rows(),
            a.cols()
        )));
    }
    if b.rows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has {} rows, expected {}",
            b.rows(),
            n
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = lu.max_abs().max(1.0);
    let m = x.cols();
    for col in 0..n {
        let mut piv = col;
        let mut best = lu[(col, col)].norm();
        for r in col + 1..n {
            let v = lu[(r, col)].norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= 1e-13 * scale {
            return Err(LinalgError::Singular { col, pivot: best });
        }
        if piv != col {
            for j in 0..n {
                let t = lu[(col, j)];
                lu[(col, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..m {
                let t = x[(col, j)];
                x[(col, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        let d = lu[(col, col)];
        for r in col + 1..n {
            let f = lu[(r, col)] / d;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            lu[(r, col)] = Complex64::new(0.0, 0.0);
            for j in col + 1..n {
                let v = lu[(col, j)];
                lu[(r, j)] -= f * v;
            }
            for j in 0..m {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = lu[(col, col)];
        for j in 0..m {
            x[(col, j)] /= d;
        }
        for r in 0..col {
            let f = lu[(r, col)];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..m {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    Ok(x)
}
