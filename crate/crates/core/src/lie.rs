//! Structure-constant Lie algebras and their affine representations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Subspace};
use crate::{Error, Result};

/// Default absolute tolerance for the Jacobi identity on a unit-normalized basis.
pub const JACOBI_TOL: f64 = 1e-9;
/// Tolerance for `rho([x,y]) = [rho x, rho y]`.
pub const REP_TOL: f64 = 1e-10;

/// Finite-dimensional real Lie algebra stored as a dense structure-constant tensor.
///
/// `c[i][j][k]` is the coefficient of `e_k` in `[e_i, e_j]`. Antisymmetry is
/// enforced at construction by averaging `c` with `-c^T`; the defect seen at load
/// time is kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieAlgebra {
    labels: Vec<String>,
    c: Vec<f64>,
    load_asymmetry: f64,
}

/// Outcome of [`LieAlgebra::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraReport {
    pub antisymmetry_defect: f64,
    pub jacobi_defect: f64,
    pub derived_series: Vec<usize>,
    pub solvable: bool,
    pub split: bool,
    pub passed: bool,
}

impl LieAlgebra {
    /// Builds an algebra from a flat `dim^3` tensor in `[i][j][k]` order.
    pub fn new(labels: Vec<String>, tensor: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if tensor.len() != n * n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n * n,
                got: tensor.len(),
            });
        }
        if tensor.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("structure constants"));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::input(format!("duplicate basis label `{l}`")));
            }
        }
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let mut c = vec![0.0; n * n * n];
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let a = tensor[idx(i, j, k)];
                    let b = tensor[idx(j, i, k)];
                    asym = asym.max((a + b).abs());
                    c[idx(i, j, k)] = 0.5 * (a - b);
                }
            }
        }
        Ok(LieAlgebra {
            labels,
            c,
            load_asymmetry: asym,
        })
    }

    /// Builds an algebra from a list of non-zero brackets `[e_i, e_j] = sum coeff e_k`.
    /// Each pair needs to be given once; the opposite order follows by antisymmetry.
    pub fn from_brackets(labels: Vec<String>, brackets: &[(usize, usize, Vec<(usize, f64)>)]) -> Result<Self> {
        let n = labels.len();
        let mut t = vec![0.0; n * n * n];
        for (i, j, coeffs) in brackets {
            if *i >= n || *j >= n {
                return Err(Error::input(format!("bracket index ({i},{j}) out of range")));
            }
            for &(k, v) in coeffs {
                if k >= n {
                    return Err(Error::input(format!("bracket target {k} out of range")));
                }
                t[(i * n + j) * n + k] += v;
                t[(j * n + i) * n + k] -= v;
            }
        }
        Self::new(labels, t)
    }

    /// The zero-dimensional algebra.
    pub fn empty() -> Self {
        LieAlgebra {
            labels: vec![],
            c: vec![],
            load_asymmetry: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `c[i][j][k]`.
    pub fn constant(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.dim();
        self.c[(i * n + j) * n + k]
    }

    pub fn tensor(&self) -> &[f64] {
        &self.c
    }

    /// Standard basis vector `e_i`.
    pub fn basis_vector(&self, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[i] = 1.0;
        v
    }

    /// `[a, b] = sum_{ij} a_i b_j c[i][j][.]`.
    pub fn bracket(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        for v in [a, b] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(self.br(a, b))
    }

    /// Bracket without the dimension check; callers guarantee lengths.
    pub(crate) fn br(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = a[i] * b[j];
                if w == 0.0 {
                    continue;
                }
                let base = (i * n + j) * n;
                for k in 0..n {
                    out[k] += w * self.c[base + k];
                }
            }
        }
        out
    }

    /// Matrix of `ad(x) = [x, .]`.
    pub fn ad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let base = (i * n + j) * n;
                for k in 0..n {
                    m[(k, j)] += x[i] * self.c[base + k];
                }
            }
        }
        m
    }

    /// `Ad(exp x) = exp(ad x)`.
    pub fn big_ad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if self.dim() == 0 {
            return DMatrix::zeros(0, 0);
        }
        self.ad(x).exp()
    }

    /// Largest Jacobi residual over basis triples.
    pub fn jacobi_defect(&self) -> f64 {
        let n = self.dim();
        let ads: Vec<DMatrix<f64>> = (0..n).map(|i| self.ad(&self.basis_vector(i))).collect();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let bij = self.br(&self.basis_vector(i), &self.basis_vector(j));
                for k in (j + 1)..n {
                    let bjk = ads[j].column(k).into_owned();
                    let bki = ads[k].column(i).into_owned();
                    let r = &ads[i] * bjk + &ads[j] * bki + &ads[k] * &bij;
                    worst = worst.max(r.amax());
                }
            }
        }
        worst
    }

    /// Span of `[V, W]` for two subspaces.
    pub fn bracket_space(&self, v: &Subspace, w: &Subspace) -> Subspace {
        // Brackets at round-off level would otherwise pass the relative rank cutoff.
        let scale = self.c.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        let mut cols = Vec::new();
        for a in v.basis_vectors() {
            for b in w.basis_vectors() {
                let c = self.br(&a, &b);
                if c.norm() > 1e-12 * scale * a.norm() * b.norm() {
                    cols.push(c);
                }
            }
        }
        Subspace::span(self.dim(), &cols)
    }

    /// The derived algebra `[g, g]`.
    pub fn derived_algebra(&self) -> Subspace {
        let full = Subspace::full(self.dim());
        self.bracket_space(&full, &full)
    }

    /// Dimensions of the derived series, starting with `dim` and ending at its fixed point.
    pub fn derived_series(&self) -> Vec<usize> {
        let mut cur = Subspace::full(self.dim());
        let mut dims = vec![cur.dim()];
        loop {
            let next = self.bracket_space(&cur, &cur);
            if next.dim() == cur.dim() {
                break;
            }
            dims.push(next.dim());
            if next.dim() == 0 {
                break;
            }
            cur = next;
        }
        dims
    }

    fn check_dim(&self, v: &Subspace) -> Result<()> {
        if v.ambient_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.ambient_dim(),
            });
        }
        Ok(())
    }

    /// Largest relative residual of `[V, V]` outside `V`.
    pub fn subalgebra_defect(&self, v: &Subspace) -> Result<f64> {
        self.check_dim(v)?;
        Ok(self.closure_defect(v, v))
    }

    /// Largest relative residual of `[g, V]` outside `V`.
    pub fn ideal_defect(&self, v: &Subspace) -> Result<f64> {
        self.check_dim(v)?;
        Ok(self.closure_defect(&Subspace::full(self.dim()), v))
    }

    fn closure_defect(&self, a: &Subspace, v: &Subspace) -> f64 {
        let scale = self.c.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        let mut worst: f64 = 0.0;
        for x in a.basis_vectors() {
            for y in v.basis_vectors() {
                let b = self.br(&x, &y);
                worst = worst.max(v.residual(&b) / (scale * x.norm() * y.norm()));
            }
        }
        worst
    }

    pub fn is_subalgebra(&self, v: &Subspace, tol: f64) -> Result<bool> {
        Ok(self.subalgebra_defect(v)? < tol)
    }

    pub fn is_ideal(&self, v: &Subspace, tol: f64) -> Result<bool> {
        Ok(self.ideal_defect(v)? < tol)
    }

    /// True when every `ad(x)` has real spectrum, probed on the basis and on a
    /// fixed family of generic combinations.
    pub fn is_split(&self, tol: f64) -> bool {
        let n = self.dim();
        if n == 0 {
            return true;
        }
        let mut probes: Vec<DVector<f64>> = (0..n).map(|i| self.basis_vector(i)).collect();
        for s in 1..=3 {
            probes.push(DVector::from_fn(n, |i, _| {
                let t = (i + 1) as f64 * (s as f64 * 0.618_033_988_7 + 0.3);
                (t * std::f64::consts::E).sin() + 0.1
            }));
        }
        // Nilpotent parts perturb eigenvalues like eps^(1/k); compare against a
        // square-root tolerance.
        let im_tol = tol.sqrt();
        probes.iter().all(|x| {
            let m = self.ad(x);
            let scale = m.norm().max(1.0);
            crate::linalg::eigenvalues(&m).iter().all(|l| l.im.abs() <= im_tol * scale)
        })
    }

    /// Antisymmetry, Jacobi, solvability and split-solvability checks.
    pub fn validate(&self, tol: f64) -> AlgebraReport {
        let jacobi = self.jacobi_defect();
        let series = self.derived_series();
        let solvable = *series.last().unwrap_or(&0) == 0;
        let split = self.is_split(tol);
        AlgebraReport {
            antisymmetry_defect: self.load_asymmetry,
            jacobi_defect: jacobi,
            derived_series: series,
            solvable,
            split,
            passed: self.load_asymmetry < tol && jacobi < tol && solvable && split,
        }
    }

    /// Structure constants in a new basis given by the columns of `q` (invertible).
    pub fn change_basis(&self, q: &DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let n = self.dim();
        if q.shape() != (n, n) || labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.ncols(),
            });
        }
        let qinv = q
            .clone()
            .try_inverse()
            .ok_or(Error::NotInvertible { det: q.determinant() })?;
        let mut t = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                let br = self.br(&q.column(a).into_owned(), &q.column(b).into_owned());
                let coords = &qinv * br;
                for k in 0..n {
                    t[(a * n + b) * n + k] = coords[k];
                }
            }
        }
        Self::new(labels, t)
    }

    /// Restriction of the bracket to a subalgebra, in the subspace's basis.
    /// Returns the algebra and the worst closure residual.
    pub fn restrict(&self, v: &Subspace, labels: Vec<String>) -> Result<(Self, f64)> {
        self.check_dim(v)?;
        let k = v.dim();
        let basis = v.basis_vectors();
        let coord = v.coordinate_map();
        let mut t = vec![0.0; k * k * k];
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                let br = self.br(&basis[a], &basis[b]);
                worst = worst.max(v.residual(&br));
                let coords = &coord * br;
                for m in 0..k {
                    t[(a * k + b) * k + m] = coords[m];
                }
            }
        }
        Ok((Self::new(labels, t)?, worst))
    }

    /// Block direct sum; labels are taken as given.
    pub fn direct_sum(&self, other: &Self, labels: Vec<String>) -> Result<Self> {
        let (n1, n2) = (self.dim(), other.dim());
        let n = n1 + n2;
        let mut t = vec![0.0; n * n * n];
        for i in 0..n1 {
            for j in 0..n1 {
                for k in 0..n1 {
                    t[(i * n + j) * n + k] = self.constant(i, j, k);
                }
            }
        }
        for i in 0..n2 {
            for j in 0..n2 {
                for k in 0..n2 {
                    t[((i + n1) * n + j + n1) * n + k + n1] = other.constant(i, j, k);
                }
            }
        }
        Self::new(labels, t)
    }
}

/// Representation of a Lie algebra by real `(N+1) x (N+1)` matrices acting
/// affinely on `R^N` (last coordinate homogenizing).
///
/// `bracket_sign` records which bracket the matrices respect:
/// `rho(sign * [x, y]) = rho(x) rho(y) - rho(y) rho(x)`. Vector-field tables give
/// `sign = -1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineRep {
    pub algebra: LieAlgebra,
    pub bracket_sign: f64,
    matrices: Vec<DMatrix<f64>>,
}

impl AffineRep {
    pub fn new(algebra: LieAlgebra, matrices: Vec<DMatrix<f64>>, bracket_sign: f64) -> Result<Self> {
        if matrices.len() != algebra.dim() {
            return Err(Error::DimensionMismatch {
                expected: algebra.dim(),
                got: matrices.len(),
            });
        }
        let size = matrices.first().map(|m| m.nrows()).unwrap_or(1);
        for m in &matrices {
            if m.shape() != (size, size) {
                return Err(Error::input("representation matrices must share one square size"));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("representation matrix"));
            }
        }
        Ok(AffineRep {
            algebra,
            bracket_sign,
            matrices,
        })
    }

    /// Homogenized size `N + 1`.
    pub fn size(&self) -> usize {
        self.matrices.first().map(|m| m.nrows()).unwrap_or(1)
    }

    /// Dimension `N` of the affine space acted on.
    pub fn rep_dim(&self) -> usize {
        self.size() - 1
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `rho(x) = sum x_i rho(e_i)`.
    pub fn rho(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size(), self.size());
        for (xi, mi) in x.iter().zip(&self.matrices) {
            if *xi != 0.0 {
                m += mi * *xi;
            }
        }
        m
    }

    /// Largest residual of the bracket relation over basis pairs.
    pub fn homomorphism_defect(&self) -> f64 {
        let n = self.algebra.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let br = self.algebra.br(&self.algebra.basis_vector(i), &self.algebra.basis_vector(j));
                let lhs = self.rho(&(br * self.bracket_sign));
                let rhs = &self.matrices[i] * &self.matrices[j] - &self.matrices[j] * &self.matrices[i];
                worst = worst.max(linalg::max_abs(&(lhs - rhs)));
            }
        }
        worst
    }

    /// Matrix exponential of `rho(x)` by Pade scaling and squaring.
    pub fn exp_affine(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.algebra.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.algebra.dim(),
                got: x.len(),
            });
        }
        let e = self.rho(x).exp();
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix exponential"));
        }
        Ok(e)
    }

    /// Least-squares preimage `x` with `rho(x) ~ m`, and the fit residual.
    pub fn preimage(&self, m: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let n = self.algebra.dim();
        let s = self.size();
        if n == 0 {
            return (DVector::zeros(0), linalg::max_abs(m));
        }
        let mut a = DMatrix::zeros(s * s, n);
        for (i, mi) in self.matrices.iter().enumerate() {
            a.column_mut(i).copy_from_slice(mi.as_slice());
        }
        let b = DVector::from_column_slice(m.as_slice());
        let svd = a.clone().svd(true, true);
        let x = svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(n));
        let resid = (a * &x - b).amax();
        (x, resid)
    }
}
