//! Dense linear-algebra helpers: numerical rank, kernels, and the [`Subspace`] type.
//!
//! Rank decisions use a singular-value cutoff of `RANK_RTOL` times the largest
//! singular value, so they are invariant under rescaling of the input.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_RTOL: f64 = 1e-8;

fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Numerical rank with cutoff `RANK_RTOL * sigma_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Orthonormal basis (as columns) of the kernel of `m`.
///
/// `abs_floor` guards the all-zero case: singular values below it always count
/// as zero.
pub fn null_space(m: &DMatrix<f64>, abs_floor: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to at least square so the SVD exposes a full right basis.
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = (RANK_RTOL * smax).max(abs_floor);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular_values[i] <= cut)
        .map(|i| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_RTOL * smax)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Reduced row echelon form of a full-row-rank matrix, used to pick a canonical
/// basis of a row space. Coordinate-aligned subspaces come out as unit vectors.
fn rref_rows(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut pivot_row = 0;
    for c in 0..cols {
        if pivot_row == rows {
            break;
        }
        let (best, val) = (pivot_row..rows)
            .map(|r| (r, a[(r, c)].abs()))
            .fold((pivot_row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-9 * scale {
            continue;
        }
        a.swap_rows(pivot_row, best);
        let p = a[(pivot_row, c)];
        for j in 0..cols {
            a[(pivot_row, j)] /= p;
        }
        for r in 0..rows {
            if r != pivot_row {
                let f = a[(r, c)];
                if f != 0.0 {
                    for j in 0..cols {
                        a[(r, j)] -= f * a[(pivot_row, j)];
                    }
                }
            }
        }
        pivot_row += 1;
    }
    a.apply(|x| {
        if x.abs() < 1e-13 {
            *x = 0.0
        }
    });
    a
}

/// Linear subspace of R^n given by linearly independent basis columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subspace {
    ambient_dim: usize,
    basis: DMatrix<f64>,
    #[serde(skip)]
    ortho: Option<DMatrix<f64>>,
}

impl PartialEq for Subspace {
    fn eq(&self, other: &Self) -> bool {
        self.ambient_dim == other.ambient_dim && self.basis == other.basis
    }
}

impl Subspace {
    /// Canonical span of the given column vectors (rank-reduced, RREF basis).
    pub fn span_matrix(ambient_dim: usize, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), ambient_dim, "span: ambient dimension mismatch");
        let q = column_space(m);
        let k = q.ncols();
        let basis = if k == 0 {
            DMatrix::zeros(ambient_dim, 0)
        } else {
            rref_rows(q.transpose()).transpose()
        };
        let mut s = Subspace {
            ambient_dim,
            basis,
            ortho: None,
        };
        s.ortho = Some(column_space(&s.basis));
        s
    }

    pub fn span(ambient_dim: usize, vectors: &[DVector<f64>]) -> Self {
        if vectors.is_empty() {
            return Self::zero(ambient_dim);
        }
        Self::span_matrix(ambient_dim, &DMatrix::from_columns(vectors))
    }

    /// Subspace with exactly the given basis columns; fails if they are dependent.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        if rank(&basis) != k {
            return Err(Error::input("subspace basis columns are linearly dependent"));
        }
        let ortho = column_space(&basis);
        Ok(Subspace {
            ambient_dim: basis.nrows(),
            basis,
            ortho: Some(ortho),
        })
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Subspace {
            ambient_dim,
            basis: DMatrix::zeros(ambient_dim, 0),
            ortho: Some(DMatrix::zeros(ambient_dim, 0)),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self::span_matrix(ambient_dim, &DMatrix::identity(ambient_dim, ambient_dim))
    }

    /// Coordinate subspace spanned by the given standard basis indices, in order.
    pub fn coordinate(ambient_dim: usize, indices: &[usize]) -> Self {
        let mut b = DMatrix::zeros(ambient_dim, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            b[(i, c)] = 1.0;
        }
        Self::from_basis(b).expect("distinct coordinate indices")
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn basis_vectors(&self) -> Vec<DVector<f64>> {
        self.basis.column_iter().map(|c| c.into_owned()).collect()
    }

    fn ortho(&self) -> DMatrix<f64> {
        match &self.ortho {
            Some(q) => q.clone(),
            None => column_space(&self.basis),
        }
    }

    /// Euclidean orthogonal projection onto the subspace.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let q = self.ortho();
        if q.ncols() == 0 {
            return DVector::zeros(self.ambient_dim);
        }
        &q * (q.transpose() * v)
    }

    /// Distance from `v` to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        (v - self.project(v)).norm()
    }

    /// Relative membership residual `dist(v)/|v|` (0 for the zero vector).
    pub fn relative_residual(&self, v: &DVector<f64>) -> f64 {
        let n = v.norm();
        if n == 0.0 {
            0.0
        } else {
            self.residual(v) / n
        }
    }

    /// Coordinates of `v` in the stored basis (least squares).
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(0);
        }
        let b = &self.basis;
        let gram = b.transpose() * b;
        let rhs = b.transpose() * v;
        gram.clone().cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(b.ncols())))
    }

    /// Left inverse of the basis: maps ambient vectors in the subspace to coordinates.
    pub fn coordinate_map(&self) -> DMatrix<f64> {
        if self.dim() == 0 {
            return DMatrix::zeros(0, self.ambient_dim);
        }
        let b = &self.basis;
        let gram = b.transpose() * b;
        let inv = gram.try_inverse().expect("basis has full column rank");
        inv * b.transpose()
    }

    pub fn contains_subspace(&self, other: &Subspace, tol: f64) -> bool {
        other
            .basis_vectors()
            .iter()
            .all(|v| self.relative_residual(v) < tol)
    }

    pub fn sum(&self, other: &Subspace) -> Subspace {
        let mut cols = self.basis_vectors();
        cols.extend(other.basis_vectors());
        Subspace::span(self.ambient_dim, &cols)
    }

    pub fn sum_all(ambient_dim: usize, parts: &[&Subspace]) -> Subspace {
        let cols: Vec<DVector<f64>> = parts.iter().flat_map(|s| s.basis_vectors()).collect();
        Subspace::span(ambient_dim, &cols)
    }

    pub fn intersection(&self, other: &Subspace) -> Subspace {
        if self.dim() == 0 || other.dim() == 0 {
            return Subspace::zero(self.ambient_dim);
        }
        let a = self.ortho();
        let b = other.ortho();
        let mut m = DMatrix::zeros(self.ambient_dim, a.ncols() + b.ncols());
        m.view_mut((0, 0), a.shape()).copy_from(&a);
        m.view_mut((0, a.ncols()), b.shape()).copy_from(&(-&b));
        let ker = null_space(&m, 1e-10);
        let vecs: Vec<DVector<f64>> = ker
            .column_iter()
            .map(|c| &a * c.rows(0, a.ncols()))
            .collect();
        Subspace::span(self.ambient_dim, &vecs)
    }

    /// Orthogonal complement with respect to the symmetric form `gram`.
    pub fn orthogonal_complement(&self, gram: &DMatrix<f64>) -> Subspace {
        if self.dim() == 0 {
            return Subspace::full(self.ambient_dim);
        }
        let m = self.basis.transpose() * gram;
        Subspace::span_matrix(self.ambient_dim, &null_space(&m, 1e-12))
    }

    /// Image under a linear map of the ambient space.
    pub fn image(&self, map: &DMatrix<f64>) -> Subspace {
        Subspace::span_matrix(map.nrows(), &(map * &self.basis))
    }
}

/// Largest absolute entry, 0 for empty matrices.
/// Eigenvalues of a real square matrix.
///
/// The Schur iteration can stall on defective repeated eigenvalues at machine
/// precision, so each attempt is bounded and the deflation tolerance is relaxed
/// step by step; the last resort restarts on an orthogonally conjugated copy.
pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<Complex64> {
    let n = m.nrows();
    for (eps, iters) in [(f64::EPSILON, 300), (1e-14, 2000), (1e-13, 2000), (1e-12, 5000)] {
        if let Some(s) = Schur::try_new(m.clone(), eps, iters) {
            return quasi_triangular_eigenvalues(&s.unpack().1);
        }
    }
    let v = DVector::from_fn(n, |i, _| ((i + 1) as f64 * 1.7).sin()).normalize();
    let h = DMatrix::identity(n, n) - &v * v.transpose() * 2.0;
    Schur::try_new(&h * m * &h, 1e-12, 100_000)
        .map(|s| quasi_triangular_eigenvalues(&s.unpack().1))
        .unwrap_or_else(|| DVector::from_element(n, Complex64::new(f64::NAN, f64::NAN)))
}

// nalgebra's own extraction can return NaN for nearly defective 2x2 blocks.
fn quasi_triangular_eigenvalues(t: &DMatrix<f64>) -> DVector<Complex64> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let r = disc.sqrt();
                out.push(Complex64::new(half + r, 0.0));
                out.push(Complex64::new(half - r, 0.0));
            } else {
                let r = (-disc).sqrt();
                out.push(Complex64::new(half, r));
                out.push(Complex64::new(half, -r));
            }
            i += 2;
        } else {
            out.push(Complex64::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    DVector::from_vec(out)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &x| a.max(x.abs()))
}
