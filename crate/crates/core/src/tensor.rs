//! Dense complex matrix and third-order tensor algebra.
//!
//! Matrices use column-major logical indexing throughout, so `vec(A)` stacks
//! columns and the unfoldings below have one unambiguous column order:
//!
//! - mode-1: `M × (L·B)`, column `b·L + l` is column `l` of frontal slice `b`
//! - mode-2: `L × (M·B)`, column `b·M + m` is row `m` of frontal slice `b`
//!
//! Pseudoinverses go through an SVD with a relative singular-value cutoff;
//! Gram matrices are never inverted explicitly.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

pub use nalgebra::Complex;

/// Double precision complex scalar.
pub type C64 = Complex<f64>;

/// Default relative singular-value cutoff used by the pseudoinverses.
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: {rows}x{cols} matrix is rank deficient (singular value ratio {ratio:e} below tolerance)")]
    Singular {
        op: &'static str,
        rows: usize,
        cols: usize,
        ratio: f64,
    },
    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    EmptyDimension { rows: usize, cols: usize },
    #[error("expected {expected} entries for the given shape, got {got}")]
    EntryCount { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("tensor slices must share one shape: slice {index} is {got:?}, expected {expected:?}")]
    SliceShape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix(DMatrix<C64>);

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CMatrix {}x{} {:?}", self.rows(), self.cols(), self.0.as_slice())
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self(DMatrix::from_element(rows, cols, C64::new(1.0, 0.0)))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(rows, cols, f))
    }

    /// Builds a matrix from entries listed column by column, validating shape and
    /// finiteness.
    pub fn from_column_major(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::EmptyDimension { rows, cols });
        }
        if entries.len() != rows * cols {
            return Err(TensorError::EntryCount {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        let m = Self(DMatrix::from_vec(rows, cols, entries));
        m.check_finite()?;
        Ok(m)
    }

    /// Row-major literal constructor, mostly for tests and small fixtures.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if nr == 0 || nc == 0 {
            return Err(TensorError::EmptyDimension { rows: nr, cols: nc });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != nc) {
            return Err(TensorError::EntryCount {
                expected: nc,
                got: bad.len(),
            });
        }
        let m = Self(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]));
        m.check_finite()?;
        Ok(m)
    }

    /// Real-valued row-major literal.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_inner(inner: DMatrix<C64>) -> Self {
        Self(inner)
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.0[(row, col)] = value;
    }

    /// Entries in column-major order, i.e. `vec(A)`.
    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn check_finite(&self) -> Result<()> {
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                let z = self.0[(i, j)];
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(TensorError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.check_finite().is_ok()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    /// Checked product; use the `*` operator when shapes are known to agree.
    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols() != rhs.rows() {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(Self(&self.0 * &rhs.0))
    }

    pub fn column(&self, j: usize) -> CMatrix {
        self.columns(j, 1)
    }

    /// Columns `start..start + count`.
    pub fn columns(&self, start: usize, count: usize) -> CMatrix {
        Self(self.0.columns(start, count).into_owned())
    }

    pub fn hstack(parts: &[&CMatrix]) -> Result<CMatrix> {
        let rows = parts.first().map_or(0, |p| p.rows());
        for p in parts {
            if p.rows() != rows {
                return Err(TensorError::Shape {
                    op: "hstack",
                    left: parts[0].shape(),
                    right: p.shape(),
                });
            }
        }
        let cols = parts.iter().map(|p| p.cols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            out.columns_mut(at, p.cols()).copy_from(&p.0);
            at += p.cols();
        }
        Ok(Self(out))
    }

    pub fn vstack(parts: &[&CMatrix]) -> Result<CMatrix> {
        let cols = parts.first().map_or(0, |p| p.cols());
        for p in parts {
            if p.cols() != cols {
                return Err(TensorError::Shape {
                    op: "vstack",
                    left: parts[0].shape(),
                    right: p.shape(),
                });
            }
        }
        let rows = parts.iter().map(|p| p.rows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            out.rows_mut(at, p.rows()).copy_from(&p.0);
            at += p.rows();
        }
        Ok(Self(out))
    }

    /// Largest entry-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖_F / ‖other‖_F`, or the absolute error when `other` is zero.
    pub fn rel_error(&self, reference: &CMatrix) -> f64 {
        let diff = (self - reference).frob_norm();
        let norm = reference.frob_norm();
        if norm > 0.0 {
            diff / norm
        } else {
            diff
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 * &rhs.0)
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;

    fn add(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 - &rhs.0)
    }
}

/// Third-order complex tensor stored as its frontal slices.
#[derive(Debug, Clone, PartialEq)]
pub struct CTensor3 {
    dim1: usize,
    dim2: usize,
    slices: Vec<CMatrix>,
}

impl CTensor3 {
    pub fn from_slices(slices: Vec<CMatrix>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or(TensorError::EmptyDimension { rows: 0, cols: 0 })?;
        let expected = first.shape();
        for (index, s) in slices.iter().enumerate() {
            if s.shape() != expected {
                return Err(TensorError::SliceShape {
                    index,
                    expected,
                    got: s.shape(),
                });
            }
        }
        Ok(Self {
            dim1: expected.0,
            dim2: expected.1,
            slices,
        })
    }

    pub fn zeros(dim1: usize, dim2: usize, dim3: usize) -> Self {
        Self {
            dim1,
            dim2,
            slices: vec![CMatrix::zeros(dim1, dim2); dim3],
        }
    }

    /// Builds `[[A, B, C]]`: frontal slice `b` is `A · D_b(C) · Bᵀ`.
    pub fn from_cp(a: &CMatrix, b: &CMatrix, c: &CMatrix) -> Result<Self> {
        if a.cols() != b.cols() || a.cols() != c.cols() {
            return Err(TensorError::Shape {
                op: "from_cp",
                left: a.shape(),
                right: if a.cols() != b.cols() { b.shape() } else { c.shape() },
            });
        }
        let bt = b.transpose();
        let slices = (0..c.rows())
            .map(|k| {
                let d = row_diag(c, k).expect("row index in range");
                &(a * &d) * &bt
            })
            .collect();
        Self::from_slices(slices)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dim1, self.dim2, self.slices.len())
    }

    pub fn slice(&self, b: usize) -> &CMatrix {
        &self.slices[b]
    }

    pub fn slices(&self) -> &[CMatrix] {
        &self.slices
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.slices.iter().map(CMatrix::frob_norm_sq).sum()
    }

    /// Applies `f` to every frontal slice.
    pub fn map_slices(&self, mut f: impl FnMut(usize, &CMatrix) -> CMatrix) -> Result<Self> {
        Self::from_slices(
            self.slices
                .iter()
                .enumerate()
                .map(|(b, s)| f(b, s))
                .collect(),
        )
    }
}

pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.cols() != b.cols() {
        return Err(TensorError::Shape {
            op: "khatri_rao",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let br = b.rows();
    Ok(CMatrix::from_fn(a.rows() * br, a.cols(), |r, j| {
        a.get(r / br, j) * b.get(r % br, j)
    }))
}

pub fn kronecker(a: &CMatrix, b: &CMatrix) -> CMatrix {
    CMatrix(a.0.kronecker(&b.0))
}

/// `[T_{:,:,1} … T_{:,:,B}]`, shape `dim1 × (dim2·dim3)`.
pub fn unfold_mode1(t: &CTensor3) -> CMatrix {
    let (d1, d2, d3) = t.dims();
    let mut out = DMatrix::zeros(d1, d2 * d3);
    for (b, s) in t.slices.iter().enumerate() {
        out.columns_mut(b * d2, d2).copy_from(&s.0);
    }
    CMatrix(out)
}

/// `[T_{:,:,1}ᵀ … T_{:,:,B}ᵀ]`, shape `dim2 × (dim1·dim3)`.
pub fn unfold_mode2(t: &CTensor3) -> CMatrix {
    let (d1, d2, d3) = t.dims();
    let mut out = DMatrix::zeros(d2, d1 * d3);
    for (b, s) in t.slices.iter().enumerate() {
        out.columns_mut(b * d1, d1).copy_from(&s.0.transpose());
    }
    CMatrix(out)
}

/// Pseudoinverse of a tall or wide matrix. A thin QR first compresses the long
/// dimension, then an SVD of the small triangular factor supplies the exact
/// singular values for the rank check.
fn svd_pinv(a: &CMatrix, tol: f64, op: &'static str) -> Result<CMatrix> {
    let (m, n) = a.shape();
    if m == n {
        return square_pinv(&a.0, tol, op, (m, n)).map(CMatrix);
    }
    if m < n {
        // aᴴ = QR  ⇒  a = Rᴴ Qᴴ  ⇒  a† = Q (Rᴴ)†
        let qr = a.0.adjoint().qr();
        let (q, r) = qr.unpack();
        let r_pinv = square_pinv(&r.adjoint(), tol, op, (m, n))?;
        Ok(CMatrix(q * r_pinv))
    } else {
        // a = QR  ⇒  a† = R† Qᴴ
        let qr = a.0.clone().qr();
        let (q, r) = qr.unpack();
        let r_pinv = square_pinv(&r, tol, op, (m, n))?;
        Ok(CMatrix(r_pinv * q.adjoint()))
    }
}

fn square_pinv(
    a: &DMatrix<C64>,
    tol: f64,
    op: &'static str,
    shape: (usize, usize),
) -> Result<DMatrix<C64>> {
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio.is_nan() || ratio < tol {
        return Err(TensorError::Singular {
            op,
            rows: shape.0,
            cols: shape.1,
            ratio,
        });
    }
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    // V Σ⁻¹ Uᴴ, scaling the columns of V by 1/σ.
    let mut v = v_t.adjoint();
    for (j, s) in sv.iter().enumerate() {
        v.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(v * u.adjoint())
}

/// Right pseudoinverse of a wide, full-row-rank matrix: `a · r = I`.
pub fn pinv_right(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    if a.rows() > a.cols() {
        return Err(TensorError::Shape {
            op: "pinv_right (needs rows <= cols)",
            left: a.shape(),
            right: a.shape(),
        });
    }
    svd_pinv(a, tol, "pinv_right")
}

/// Left pseudoinverse of a tall, full-column-rank matrix: `r · a = I`.
pub fn pinv_left(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    if a.rows() < a.cols() {
        return Err(TensorError::Shape {
            op: "pinv_left (needs rows >= cols)",
            left: a.shape(),
            right: a.shape(),
        });
    }
    svd_pinv(a, tol, "pinv_left")
}

/// `n × n` DFT matrix with entry `(j, k) = exp(−i·2π·j·k/n)`.
pub fn dft_matrix(n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |j, k| {
        // Reduce j·k mod n first so large indices keep full phase accuracy.
        let e = (j * k) % n;
        C64::from_polar(1.0, -2.0 * std::f64::consts::PI * e as f64 / n as f64)
    })
}

/// `D_i(A)`: diagonal matrix holding row `i` of `a`.
pub fn row_diag(a: &CMatrix, i: usize) -> Result<CMatrix> {
    if i >= a.rows() {
        return Err(TensorError::IndexOutOfRange {
            index: i,
            len: a.rows(),
        });
    }
    let n = a.cols();
    let mut d = CMatrix::zeros(n, n);
    for j in 0..n {
        d.set(j, j, a.get(i, j));
    }
    Ok(d)
}

/// Running count of complex multiply-accumulates spent by algorithm-level
/// matrix formulas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpTally {
    pub macs: u64,
}

impl OpTally {
    /// Product with its `m·n·p` cost recorded.
    pub fn mul(&mut self, a: &CMatrix, b: &CMatrix) -> CMatrix {
        self.macs += (a.rows() * a.cols() * b.cols()) as u64;
        a * b
    }

    /// Pseudoinverse of an `m × n` matrix, charged as Gram formation plus a
    /// cubic inversion in the smaller dimension and the final product.
    pub fn charge_pinv(&mut self, a: &CMatrix) {
        let (m, n) = a.shape();
        let (small, large) = (m.min(n) as u64, m.max(n) as u64);
        self.macs += small * small * large + small * small * small + small * small * large;
    }

    pub fn add(&mut self, macs: u64) {
        self.macs += macs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn khatri_rao_identity() {
        let i2 = CMatrix::identity(2);
        let kr = khatri_rao(&i2, &i2).unwrap();
        let expected =
            CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(kr, expected);
    }

    #[test]
    fn khatri_rao_single_column() {
        let a = CMatrix::from_real_rows(&[&[1.0], &[2.0]]).unwrap();
        let b = CMatrix::from_real_rows(&[&[3.0], &[4.0]]).unwrap();
        let expected = CMatrix::from_real_rows(&[&[3.0], &[4.0], &[6.0], &[8.0]]).unwrap();
        assert_eq!(khatri_rao(&a, &b).unwrap(), expected);
    }

    #[test]
    fn khatri_rao_shape_error() {
        let err = khatri_rao(&CMatrix::zeros(2, 2), &CMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(
            err,
            TensorError::Shape {
                left: (2, 2),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn kronecker_examples() {
        assert_eq!(
            kronecker(&CMatrix::identity(2), &CMatrix::identity(3)),
            CMatrix::identity(6)
        );
        let a = CMatrix::from_real_rows(&[&[1.0, 2.0]]).unwrap();
        let b = CMatrix::from_real_rows(&[&[0.0], &[1.0]]).unwrap();
        let expected = CMatrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 2.0]]).unwrap();
        assert_eq!(kronecker(&a, &b), expected);
    }

    #[test]
    fn unfold_small_cases() {
        let t = CTensor3::from_slices(vec![
            CMatrix::from_real_rows(&[&[1.0]]).unwrap(),
            CMatrix::from_real_rows(&[&[2.0]]).unwrap(),
        ])
        .unwrap();
        assert_eq!(
            unfold_mode1(&t),
            CMatrix::from_real_rows(&[&[1.0, 2.0]]).unwrap()
        );

        let t = CTensor3::from_slices(vec![CMatrix::from_real_rows(&[&[1.0, 2.0]]).unwrap()])
            .unwrap();
        assert_eq!(
            unfold_mode2(&t),
            CMatrix::from_real_rows(&[&[1.0], &[2.0]]).unwrap()
        );
    }

    #[test]
    fn unfold_zero_tensor() {
        let t = CTensor3::zeros(3, 4, 5);
        assert_eq!(unfold_mode1(&t), CMatrix::zeros(3, 20));
        assert_eq!(unfold_mode2(&t), CMatrix::zeros(4, 15));
    }

    #[test]
    fn slice_shape_mismatch_rejected() {
        let err = CTensor3::from_slices(vec![CMatrix::zeros(2, 2), CMatrix::zeros(2, 3)])
            .unwrap_err();
        assert!(matches!(err, TensorError::SliceShape { index: 1, .. }));
    }

    #[test]
    fn pinv_trivial_cases() {
        let i3 = CMatrix::identity(3);
        assert!(pinv_right(&i3, DEFAULT_PINV_TOL).unwrap().max_abs_diff(&i3) < 1e-14);
        let i4 = CMatrix::identity(4);
        assert!(pinv_left(&i4, DEFAULT_PINV_TOL).unwrap().max_abs_diff(&i4) < 1e-14);

        let row = CMatrix::from_real_rows(&[&[1.0, 0.0, 0.0]]).unwrap();
        let expected = CMatrix::from_real_rows(&[&[1.0], &[0.0], &[0.0]]).unwrap();
        assert!(pinv_right(&row, DEFAULT_PINV_TOL).unwrap().max_abs_diff(&expected) < 1e-14);

        let col = CMatrix::from_real_rows(&[&[1.0], &[1.0]]).unwrap();
        let expected = CMatrix::from_real_rows(&[&[0.5, 0.5]]).unwrap();
        assert!(pinv_left(&col, DEFAULT_PINV_TOL).unwrap().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn pinv_rejects_rank_deficiency() {
        let a = CMatrix::from_real_rows(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]).unwrap();
        let err = pinv_right(&a, DEFAULT_PINV_TOL).unwrap_err();
        assert!(matches!(err, TensorError::Singular { rows: 2, cols: 3, .. }));
        let err = pinv_left(&a.transpose(), DEFAULT_PINV_TOL).unwrap_err();
        assert!(matches!(err, TensorError::Singular { rows: 3, cols: 2, .. }));
        assert!(pinv_left(&CMatrix::zeros(3, 1), DEFAULT_PINV_TOL).is_err());
    }

    #[test]
    fn pinv_wrong_orientation_is_shape_error() {
        assert!(matches!(
            pinv_right(&CMatrix::identity(3).columns(0, 2), DEFAULT_PINV_TOL),
            Err(TensorError::Shape { .. })
        ));
    }

    #[test]
    fn dft_small() {
        assert_eq!(dft_matrix(1), CMatrix::from_real_rows(&[&[1.0]]).unwrap());
        let f2 = CMatrix::from_real_rows(&[&[1.0, 1.0], &[1.0, -1.0]]).unwrap();
        assert!(dft_matrix(2).max_abs_diff(&f2) < 1e-15);
    }

    #[test]
    fn dft_orthogonality() {
        let f = dft_matrix(26);
        let g = &f.adjoint() * &f;
        let expected = CMatrix::identity(26).scale_real(26.0);
        assert!(g.max_abs_diff(&expected) < 1e-10);
        for k in 0..26 {
            assert_eq!(f.get(0, k), c(1.0));
            assert_eq!(f.get(k, 0), c(1.0));
        }
    }

    #[test]
    fn dft_pilot_pinv_is_scaled_adjoint() {
        let k = 8;
        let a = dft_matrix(k);
        let r = pinv_right(&a, DEFAULT_PINV_TOL).unwrap();
        assert!(r.max_abs_diff(&a.adjoint().scale_real(1.0 / k as f64)) < 1e-13);
    }

    #[test]
    fn row_diag_cases() {
        let a = CMatrix::from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let d = row_diag(&a, 1).unwrap();
        assert_eq!(
            d,
            CMatrix::from_real_rows(&[&[3.0, 0.0], &[0.0, 4.0]]).unwrap()
        );
        assert_eq!(row_diag(&CMatrix::ones(5, 3), 2).unwrap(), CMatrix::identity(3));
        assert!(matches!(
            row_diag(&a, 2),
            Err(TensorError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn construction_validates() {
        assert!(CMatrix::from_column_major(0, 1, vec![]).is_err());
        assert!(CMatrix::from_column_major(2, 2, vec![c(1.0); 3]).is_err());
        assert!(matches!(
            CMatrix::from_column_major(1, 2, vec![c(1.0), C64::new(f64::NAN, 0.0)]),
            Err(TensorError::NonFinite { row: 0, col: 1 })
        ));
        // column-major: second entry lands in row 1
        let m = CMatrix::from_column_major(2, 1, vec![c(1.0), c(2.0)]).unwrap();
        assert_eq!(m.get(1, 0), c(2.0));
    }

    #[test]
    fn tally_counts_product_cost() {
        let mut t = OpTally::default();
        let _ = t.mul(&CMatrix::zeros(2, 3), &CMatrix::zeros(3, 4));
        assert_eq!(t.macs, 24);
    }
}
