//! Normal j-algebras: validation, root-space fine structure and the delta-grading.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::lie::{AlgebraReport, LieAlgebra};
use crate::linalg::{self, Subspace};
use crate::{Error, Result};

/// Default tolerance for j-algebra validation.
pub const JALG_TOL: f64 = 1e-9;
/// Absolute clustering tolerance for joint ad-eigenvalues.
pub const ROOT_TOL: f64 = 1e-7;

/// A split solvable Lie algebra with complex structure `j` and admissible form `omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalJAlgebra {
    pub algebra: LieAlgebra,
    pub j: DMatrix<f64>,
    pub omega: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JValidationReport {
    pub algebra: AlgebraReport,
    pub j_square_defect: f64,
    pub integrability_defect: f64,
    pub symmetry_defect: f64,
    pub j_invariance_defect: f64,
    /// Smallest eigenvalue of the omega-Gram matrix, relative to the largest.
    pub min_gram_eigenvalue: f64,
    pub positivity_defect: f64,
    pub passed: bool,
}

impl JValidationReport {
    /// Worst of all defects (positivity included).
    pub fn max_defect(&self) -> f64 {
        [
            self.algebra.antisymmetry_defect,
            self.algebra.jacobi_defect,
            self.j_square_defect,
            self.integrability_defect,
            self.symmetry_defect,
            self.j_invariance_defect,
            self.positivity_defect,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let mut chk = |name: &str, v: f64| {
            if !(v < tol) {
                out.push(format!("{name} = {v:.3e}"));
            }
        };
        chk("antisymmetry", self.algebra.antisymmetry_defect);
        chk("jacobi", self.algebra.jacobi_defect);
        chk("j^2+1", self.j_square_defect);
        chk("integrability", self.integrability_defect);
        chk("gram symmetry", self.symmetry_defect);
        chk("j-invariance", self.j_invariance_defect);
        chk("positivity", self.positivity_defect);
        if !self.algebra.solvable {
            out.push("not solvable".into());
        }
        if !self.algebra.split {
            out.push("not split".into());
        }
        out
    }
}

impl NormalJAlgebra {
    pub fn new(algebra: LieAlgebra, j: DMatrix<f64>, omega: DVector<f64>) -> Result<Self> {
        let n = algebra.dim();
        if j.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: j.nrows() });
        }
        if omega.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: omega.len() });
        }
        if j.iter().chain(omega.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("j or omega"));
        }
        Ok(NormalJAlgebra { algebra, j, omega })
    }

    /// The zero-dimensional j-algebra (rank 0).
    pub fn empty() -> Self {
        NormalJAlgebra {
            algebra: LieAlgebra::empty(),
            j: DMatrix::zeros(0, 0),
            omega: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn labels(&self) -> &[String] {
        self.algebra.labels()
    }

    /// Raw Gram matrix `G[a][b] = omega([j e_a, e_b])`.
    pub fn raw_gram(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| {
            let ja = self.j.column(a).into_owned();
            self.omega.dot(&self.algebra.br(&ja, &self.algebra.basis_vector(b)))
        })
    }

    /// Symmetrized Gram matrix of `<x, y>_omega`.
    pub fn gram(&self) -> DMatrix<f64> {
        let g = self.raw_gram();
        (&g + g.transpose()) * 0.5
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.omega.dot(&self.algebra.br(&(&self.j * x), y))
    }

    pub fn validate(&self, tol: f64) -> JValidationReport {
        let n = self.dim();
        let alg = self.algebra.validate(tol);
        let id = DMatrix::<f64>::identity(n, n);
        let j_square_defect = linalg::max_abs(&(&self.j * &self.j + &id));

        let mut integ: f64 = 0.0;
        for a in 0..n {
            let x = self.algebra.basis_vector(a);
            let jx = self.j.column(a).into_owned();
            for b in 0..n {
                let y = self.algebra.basis_vector(b);
                let jy = self.j.column(b).into_owned();
                let r = self.algebra.br(&x, &y)
                    + &self.j * self.algebra.br(&jx, &y)
                    + &self.j * self.algebra.br(&x, &jy)
                    - self.algebra.br(&jx, &jy);
                integ = integ.max(r.amax());
            }
        }

        let g = self.raw_gram();
        let symmetry_defect = linalg::max_abs(&(&g - g.transpose()));
        let gs = (&g + g.transpose()) * 0.5;
        let j_invariance_defect = linalg::max_abs(&(self.j.transpose() * &gs * &self.j - &gs));
        let (min_eig, positivity_defect) = if n == 0 {
            (1.0, 0.0)
        } else {
            let eig = SymmetricEigen::new(gs.clone()).eigenvalues;
            let lmax = eig.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
            let lmin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            let rel = lmin / lmax;
            // A zero eigenvalue is as bad as a negative one.
            (rel, if rel > tol { 0.0 } else { tol - rel + (-rel).max(0.0) })
        };
        let mut rep = JValidationReport {
            algebra: alg,
            j_square_defect,
            integrability_defect: integ,
            symmetry_defect,
            j_invariance_defect,
            min_gram_eigenvalue: min_eig,
            positivity_defect,
            passed: false,
        };
        rep.passed = rep.failures(tol).is_empty();
        rep
    }

    /// Returns `self` if validation passes at `tol`.
    pub fn validated(self, tol: f64) -> Result<Self> {
        let rep = self.validate(tol);
        if rep.passed {
            Ok(self)
        } else {
            Err(Error::InvalidJAlgebra(rep.failures(tol).join(", ")))
        }
    }

    /// Expresses the j-algebra in the basis given by the columns of `q`.
    pub fn change_basis(&self, q: &DMatrix<f64>) -> Result<Self> {
        let algebra = self.algebra.change_basis(q, self.labels().to_vec())?;
        let qinv = q.clone().try_inverse().ok_or(Error::NotInvertible { det: 0.0 })?;
        let j = &qinv * &self.j * q;
        let omega = q.transpose() * &self.omega;
        Self::new(algebra, j, omega)
    }

    /// Restriction to a j-invariant subalgebra, expressed in the subspace basis.
    pub fn restrict(&self, v: &Subspace, labels: Vec<String>) -> Result<Self> {
        let (algebra, closure) = self.algebra.restrict(v, labels)?;
        if closure > 1e-8 {
            return Err(Error::input(format!("restriction: not a subalgebra (residual {closure:.2e})")));
        }
        let basis = v.basis();
        let coord = v.coordinate_map();
        let jb = &self.j * basis;
        let inv_resid = (0..v.dim()).fold(0.0_f64, |m, c| m.max(v.residual(&jb.column(c).into_owned())));
        if inv_resid > 1e-8 {
            return Err(Error::input(format!("restriction: subspace not j-invariant (residual {inv_resid:.2e})")));
        }
        let j = &coord * jb;
        let omega = basis.transpose() * &self.omega;
        Self::new(algebra, j, omega)
    }
}

/// Block direct sum of several j-algebras. Empty factors are dropped; a single
/// remaining factor is returned unchanged, otherwise labels get a `_k` suffix
/// with `k` the 1-based factor position.
pub fn product_all(factors: &[NormalJAlgebra]) -> Result<NormalJAlgebra> {
    let nonempty: Vec<(usize, &NormalJAlgebra)> = factors.iter().enumerate().filter(|(_, f)| f.dim() > 0).collect();
    match nonempty.len() {
        0 => return Ok(NormalJAlgebra::empty()),
        1 => return Ok(nonempty[0].1.clone()),
        _ => {}
    }
    let mut algebra = LieAlgebra::empty();
    let mut labels: Vec<String> = Vec::new();
    let n: usize = nonempty.iter().map(|(_, f)| f.dim()).sum();
    let mut j = DMatrix::zeros(n, n);
    let mut omega = DVector::zeros(n);
    let mut off = 0;
    for (pos, f) in &nonempty {
        labels.extend(f.labels().iter().map(|l| format!("{l}_{}", pos + 1)));
        algebra = algebra.direct_sum(&f.algebra, labels.clone())?;
        let d = f.dim();
        j.view_mut((off, off), (d, d)).copy_from(&f.j);
        omega.rows_mut(off, d).copy_from(&f.omega);
        off += d;
    }
    NormalJAlgebra::new(algebra, j, omega)
}

/// Direct sum of two normal j-algebras; the result is validated.
pub fn product(a: &NormalJAlgebra, b: &NormalJAlgebra) -> Result<NormalJAlgebra> {
    product_all(&[a.clone(), b.clone()])?.validated(JALG_TOL)
}

/// Position of a root relative to the ordered fundamental roots (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootKind {
    /// `alpha_k`
    Fundamental(usize),
    /// `alpha_k / 2`
    Half(usize),
    /// `(alpha_l + alpha_k) / 2` with `k < l`
    Sum(usize, usize),
    /// `(alpha_l - alpha_k) / 2` with `k < l`
    Diff(usize, usize),
}

impl RootKind {
    /// Eigenvalue of `ad(delta)` on the root space.
    pub fn grade(&self) -> f64 {
        match self {
            RootKind::Fundamental(_) | RootKind::Sum(..) => -1.0,
            RootKind::Half(_) => -0.5,
            RootKind::Diff(..) => 0.0,
        }
    }

    /// Whether the fundamental index `k` occurs in the root.
    pub fn involves(&self, k: usize) -> bool {
        match *self {
            RootKind::Fundamental(a) | RootKind::Half(a) => a == k,
            RootKind::Sum(a, b) | RootKind::Diff(a, b) => a == k || b == k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub kind: RootKind,
    /// Coefficients with respect to the ordered fundamental roots.
    pub coefficients: DVector<f64>,
    pub space: Subspace,
}

/// Root-space decomposition relative to the abelian part `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineStructure {
    pub a: Subspace,
    pub rank: usize,
    pub roots: Vec<Root>,
    /// Labels identifying the ordered fundamental roots (dominant basis label of xi_k).
    pub fundamental_labels: Vec<String>,
    /// `eta_k`, the basis of `a` dual to `(-alpha_1, ..., -alpha_r)`.
    pub eta: Vec<DVector<f64>>,
    /// `xi_k = -j eta_k`.
    pub xi: Vec<DVector<f64>>,
    pub delta: DVector<f64>,
    pub minus_one: Subspace,
    pub minus_half: Subspace,
    pub zero: Subspace,
    /// Worst residual among the structural invariants checked during construction.
    pub defect: f64,
}

impl FineStructure {
    pub fn grading_dims(&self) -> (usize, usize, usize) {
        (self.minus_one.dim(), self.minus_half.dim(), self.zero.dim())
    }

    /// Root-space dimensions in the stored root order.
    pub fn multiplicities(&self) -> Vec<usize> {
        self.roots.iter().map(|r| r.space.dim()).collect()
    }

    pub fn root(&self, kind: RootKind) -> Option<&Root> {
        self.roots.iter().find(|r| r.kind == kind)
    }

    /// `alpha_k(h)` for the `k`-th ordered fundamental root and `h` in `a`.
    pub fn alpha(&self, k: usize, h: &DVector<f64>, algebra: &LieAlgebra) -> f64 {
        let x = &self.xi[k];
        algebra.br(h, x).dot(x) / x.norm_squared()
    }
}

fn cluster_sorted(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if (values[i] - values[*g.last().unwrap()]).abs() <= tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn classify_root(c: &DVector<f64>) -> Option<RootKind> {
    const T: f64 = 1e-6;
    let nz: Vec<(usize, f64)> = c.iter().enumerate().filter(|(_, v)| v.abs() > T).map(|(i, v)| (i, *v)).collect();
    match nz.as_slice() {
        [(k, v)] if (v - 1.0).abs() < T => Some(RootKind::Fundamental(*k)),
        [(k, v)] if (v - 0.5).abs() < T => Some(RootKind::Half(*k)),
        [(a, va), (b, vb)] => {
            let (k, l) = (*a.min(b), *a.max(b));
            let (vk, vl) = if a < b { (*va, *vb) } else { (*vb, *va) };
            if (vk - 0.5).abs() < T && (vl - 0.5).abs() < T {
                Some(RootKind::Sum(k, l))
            } else if (vk + 0.5).abs() < T && (vl - 0.5).abs() < T {
                Some(RootKind::Diff(k, l))
            } else if (vk - 0.5).abs() < T && (vl + 0.5).abs() < T {
                // (alpha_k - alpha_l)/2: admissible only with the order reversed.
                Some(RootKind::Diff(l, k))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Computes the root-space decomposition, the canonical frame and the grading.
pub fn fine_structure(jalg: &NormalJAlgebra) -> Result<FineStructure> {
    let l = &jalg.algebra;
    let n = l.dim();
    if n == 0 {
        let z = Subspace::zero(0);
        return Ok(FineStructure {
            a: z.clone(),
            rank: 0,
            roots: vec![],
            fundamental_labels: vec![],
            eta: vec![],
            xi: vec![],
            delta: DVector::zeros(0),
            minus_one: z.clone(),
            minus_half: z.clone(),
            zero: z,
            defect: 0.0,
        });
    }
    let series = l.derived_series();
    if *series.last().unwrap() != 0 {
        return Err(Error::NotSplitSolvable("derived series does not terminate".into()));
    }
    if !l.is_split(JALG_TOL) {
        return Err(Error::NotSplitSolvable("ad has non-real eigenvalues".into()));
    }
    let g = jalg.gram();
    let chol = g.clone().cholesky().ok_or_else(|| Error::InvalidJAlgebra("omega-Gram matrix is not positive definite".into()))?;
    let derived = l.derived_algebra();
    let a = derived.orthogonal_complement(&g);
    let r = a.dim();
    let a_basis = a.basis_vectors();
    let mut defect: f64 = 0.0;
    for x in &a_basis {
        for y in &a_basis {
            defect = defect.max(l.br(x, y).amax());
        }
    }
    if defect > 1e-8 {
        return Err(Error::RootPatternViolation(format!("[a,a] != 0 (residual {defect:.2e})")));
    }

    // Simultaneous diagonalization of ad(a), which is self-adjoint for <.,.>_omega.
    // Blocks are kept G-orthonormal: Q^T G Q = I.
    let q0 = chol.l().transpose().try_inverse().ok_or(Error::DegenerateDual)?;
    let mut blocks: Vec<(DMatrix<f64>, Vec<f64>)> = vec![(q0, vec![])];
    for h in &a_basis {
        let adh = l.ad(h);
        let scale = adh.norm().max(1.0);
        let mut next = Vec::new();
        for (q, vals) in blocks {
            let m = q.transpose() * &g * &adh * &q;
            let ms = (&m + m.transpose()) * 0.5;
            let eig = SymmetricEigen::new(ms);
            let ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            for grp in cluster_sorted(&ev, ROOT_TOL * scale) {
                let cols: Vec<DVector<f64>> = grp.iter().map(|&i| &q * eig.eigenvectors.column(i)).collect();
                let mean = grp.iter().map(|&i| ev[i]).sum::<f64>() / grp.len() as f64;
                let mut v = vals.clone();
                v.push(mean);
                next.push((DMatrix::from_columns(&cols), v));
            }
        }
        blocks = next;
    }

    // Check each block really is a joint eigenspace.
    for (q, vals) in &blocks {
        for (h, lam) in a_basis.iter().zip(vals) {
            let adh = l.ad(h);
            let resid = (&adh * q - q * *lam).amax() / adh.norm().max(1.0);
            defect = defect.max(resid);
            if resid > 1e-6 {
                return Err(Error::RootPatternViolation(format!(
                    "ad(a) is not diagonalized by an orthogonal root decomposition (residual {resid:.2e})"
                )));
            }
        }
    }

    let zero_tol = ROOT_TOL * 10.0;
    let mut weight_zero = None;
    let mut raw_roots: Vec<(DVector<f64>, Subspace)> = Vec::new();
    for (q, vals) in &blocks {
        let v = DVector::from_vec(vals.clone());
        let sp = Subspace::span_matrix(n, q);
        if v.amax() <= zero_tol {
            weight_zero = Some(sp);
        } else {
            raw_roots.push((v, sp));
        }
    }
    let weight_zero = weight_zero.unwrap_or_else(|| Subspace::zero(n));
    if weight_zero.dim() != r || !weight_zero.contains_subspace(&a, 1e-8) {
        return Err(Error::RootPatternViolation(format!(
            "zero weight space has dimension {} but rank is {r}",
            weight_zero.dim()
        )));
    }

    // Fundamental roots: root spaces containing xi with -j xi in a.
    let mut fund: Vec<usize> = Vec::new();
    for (i, (_, sp)) in raw_roots.iter().enumerate() {
        if sp.image(&jalg.j).intersection(&a).dim() > 0 {
            fund.push(i);
        }
    }
    if fund.len() != r {
        return Err(Error::RootPatternViolation(format!(
            "found {} fundamental roots for rank {r}",
            fund.len()
        )));
    }
    for &i in &fund {
        if raw_roots[i].1.dim() != 1 {
            return Err(Error::RootPatternViolation("fundamental root space is not one-dimensional".into()));
        }
    }
    let f = DMatrix::from_fn(r, r, |k, i| raw_roots[fund[k]].0[i]);
    let ft_inv = f.transpose().try_inverse().ok_or(Error::DegenerateDual)?;

    // Difference roots force an order on the fundamentals.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (v, _) in &raw_roots {
        let c = &ft_inv * v;
        match classify_root(&c) {
            Some(RootKind::Diff(k, lidx)) => edges.push((k, lidx)),
            Some(_) => {}
            None => {
                return Err(Error::RootPatternViolation(format!(
                    "root with coefficients {:?} is not of the form a_k, a_k/2, (a_l +- a_k)/2",
                    c.as_slice()
                )))
            }
        }
    }
    let key: Vec<String> = fund
        .iter()
        .map(|&i| {
            let x = &raw_roots[i].1.basis_vectors()[0];
            let imax = x.iamax();
            l.labels()[imax].clone()
        })
        .collect();
    let mut indeg = vec![0usize; r];
    for &(_, b) in &edges {
        indeg[b] += 1;
    }
    let mut order: Vec<usize> = Vec::with_capacity(r);
    let mut done = vec![false; r];
    while order.len() < r {
        let next = (0..r)
            .filter(|&k| !done[k] && indeg[k] == 0)
            .min_by(|&a, &b| key[a].cmp(&key[b]).then(a.cmp(&b)));
        let Some(k) = next else {
            return Err(Error::RootPatternViolation("difference roots admit no consistent order".into()));
        };
        done[k] = true;
        order.push(k);
        for &(a, b) in &edges {
            if a == k {
                indeg[b] -= 1;
            }
        }
    }

    // Reorder and classify with final indices.
    let fo = DMatrix::from_fn(r, r, |k, i| f[(order[k], i)]);
    let fo_t_inv = fo.transpose().try_inverse().ok_or(Error::DegenerateDual)?;
    let mut roots: Vec<Root> = Vec::new();
    for (v, sp) in raw_roots {
        let c = &fo_t_inv * &v;
        let kind = classify_root(&c).ok_or_else(|| Error::RootPatternViolation("unclassifiable root".into()))?;
        if let RootKind::Diff(k, lidx) = kind {
            if k >= lidx {
                return Err(Error::RootPatternViolation("difference root against fundamental order".into()));
            }
        }
        roots.push(Root { kind, coefficients: c, space: sp });
    }
    roots.sort_by(|a, b| root_sort_key(&a.kind).cmp(&root_sort_key(&b.kind)));

    // eta_l with alpha_k(eta_l) = -delta_kl.
    let fo_inv = fo.clone().try_inverse().ok_or(Error::DegenerateDual)?;
    let a_mat = DMatrix::from_columns(&a_basis);
    let eta: Vec<DVector<f64>> = (0..r).map(|lidx| &a_mat * (-fo_inv.column(lidx))).collect();
    let xi: Vec<DVector<f64>> = eta.iter().map(|e| -(&jalg.j * e)).collect();
    for (k, x) in xi.iter().enumerate() {
        let sp = &roots.iter().find(|rt| rt.kind == RootKind::Fundamental(k)).expect("fundamental root").space;
        let resid = sp.relative_residual(x);
        defect = defect.max(resid);
        if resid > 1e-6 {
            return Err(Error::RootPatternViolation(format!("xi_{} = -j eta_{} is not in its root space", k + 1, k + 1)));
        }
    }
    let delta = eta.iter().fold(DVector::zeros(n), |acc, e| acc + e);

    let pick = |grade: f64| -> Subspace {
        let parts: Vec<&Subspace> = roots.iter().filter(|rt| rt.kind.grade() == grade).map(|rt| &rt.space).collect();
        Subspace::sum_all(n, &parts)
    };
    let minus_one = pick(-1.0);
    let minus_half = pick(-0.5);
    let zero = a.sum(&pick(0.0));

    // Grading check against ad(delta) directly.
    let add = l.ad(&delta);
    for (sp, lam) in [(&minus_one, -1.0), (&minus_half, -0.5), (&zero, 0.0)] {
        for x in sp.basis_vectors() {
            defect = defect.max((&add * &x - &x * lam).amax() / x.norm());
        }
    }
    if defect > 1e-6 {
        return Err(Error::RootPatternViolation(format!("grading residual {defect:.2e}")));
    }

    let fundamental_labels = order.iter().map(|&k| key[k].clone()).collect();
    Ok(FineStructure {
        a,
        rank: r,
        roots,
        fundamental_labels,
        eta,
        xi,
        delta,
        minus_one,
        minus_half,
        zero,
        defect,
    })
}

fn root_sort_key(k: &RootKind) -> (u8, usize, usize) {
    match *k {
        RootKind::Fundamental(a) => (0, a, 0),
        RootKind::Half(a) => (1, a, 0),
        RootKind::Sum(a, b) => (2, b, a),
        RootKind::Diff(a, b) => (3, b, a),
    }
}

/// Worst-case residuals of the structural statements about a fine structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FineStructureChecks {
    pub dual_basis: f64,
    pub orthogonality: f64,
    pub j_pairing: f64,
    pub grading: f64,
}

/// Re-checks duality, orthogonality, the j-relations between root spaces and
/// the grading property of the bracket.
pub fn check_fine_structure(jalg: &NormalJAlgebra, fs: &FineStructure) -> FineStructureChecks {
    let l = &jalg.algebra;
    let r = fs.rank;
    let mut dual: f64 = 0.0;
    for k in 0..r {
        for m in 0..r {
            let want = if k == m { -1.0 } else { 0.0 };
            dual = dual.max((fs.alpha(k, &fs.eta[m], l) - want).abs());
        }
    }
    let mut spaces: Vec<&Subspace> = fs.roots.iter().map(|rt| &rt.space).collect();
    spaces.push(&fs.a);
    let mut orth: f64 = 0.0;
    for (i, s) in spaces.iter().enumerate() {
        for t in spaces.iter().skip(i + 1) {
            for x in s.basis_vectors() {
                for y in t.basis_vectors() {
                    orth = orth.max((jalg.inner(&x, &y)).abs() / (x.norm() * y.norm()));
                }
            }
        }
    }
    let mut jp: f64 = 0.0;
    for rt in &fs.roots {
        let target = match rt.kind {
            RootKind::Half(_) => Some(&rt.space),
            RootKind::Diff(k, m) => fs.root(RootKind::Sum(k, m)).map(|s| &s.space),
            _ => None,
        };
        if let Some(t) = target {
            for x in rt.space.basis_vectors() {
                jp = jp.max(t.relative_residual(&(&jalg.j * x)));
            }
        } else if let RootKind::Diff(..) = rt.kind {
            jp = jp.max(1.0);
        }
    }
    let grades = [(-1.0, &fs.minus_one), (-0.5, &fs.minus_half), (0.0, &fs.zero)];
    let mut grading: f64 = 0.0;
    for (la, sa) in grades {
        for (lb, sb) in grades {
            let sum = la + lb;
            let target = grades.iter().find(|(g, _)| *g == sum).map(|(_, s)| *s);
            for x in sa.basis_vectors() {
                for y in sb.basis_vectors() {
                    let b = l.br(&x, &y);
                    let res = match target {
                        Some(t) => t.residual(&b),
                        None => b.norm(),
                    };
                    grading = grading.max(res / (x.norm() * y.norm()));
                }
            }
        }
    }
    FineStructureChecks {
        dual_basis: dual,
        orthogonality: orth,
        j_pairing: jp,
        grading,
    }
}

/// Preset normal j-algebras.
pub mod presets {
    use super::*;

    /// Normal j-algebra `b_n` of the unit ball in C^n, basis
    /// `(delta, zeta, xi_1..xi_{n-1}, eta_1..eta_{n-1})`.
    pub fn ball(n: usize) -> Result<NormalJAlgebra> {
        if n == 0 {
            return Err(Error::input("ball dimension must be at least 1"));
        }
        let m = n - 1;
        let dim = 2 * n;
        let mut labels = vec!["delta".to_string(), "zeta".to_string()];
        labels.extend((1..=m).map(|k| format!("xi{k}")));
        labels.extend((1..=m).map(|k| format!("eta{k}")));
        let (d, z) = (0, 1);
        let xi = |k: usize| 2 + k;
        let eta = |k: usize| 2 + m + k;
        let mut br = vec![(d, z, vec![(z, -1.0)])];
        for k in 0..m {
            br.push((d, xi(k), vec![(xi(k), -0.5)]));
            br.push((d, eta(k), vec![(eta(k), -0.5)]));
            br.push((xi(k), eta(k), vec![(z, 4.0)]));
        }
        let algebra = LieAlgebra::from_brackets(labels, &br)?;
        let mut j = DMatrix::zeros(dim, dim);
        // j zeta = delta, j delta = -zeta, j xi_k = eta_k, j eta_k = -xi_k
        j[(d, z)] = 1.0;
        j[(z, d)] = -1.0;
        for k in 0..m {
            j[(eta(k), xi(k))] = 1.0;
            j[(xi(k), eta(k))] = -1.0;
        }
        let mut omega = DVector::zeros(dim);
        omega[z] = -1.0;
        NormalJAlgebra::new(algebra, j, omega)
    }

    /// `b_1`, the upper half-plane.
    pub fn disc() -> NormalJAlgebra {
        ball(1).expect("b_1")
    }

    pub fn polydisc(r: usize) -> Result<NormalJAlgebra> {
        if r == 0 {
            return Err(Error::input("polydisc rank must be at least 1"));
        }
        product_all(&vec![disc(); r])
    }

    fn split_top_level(s: &str) -> Result<Vec<&str>> {
        let mut out = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        for (i, ch) in s.char_indices() {
            match ch {
                '[' => depth += 1,
                ']' => depth -= 1,
                ',' if depth == 0 => {
                    out.push(s[start..i].trim());
                    start = i + 1;
                }
                _ => {}
            }
            if depth < 0 {
                return Err(Error::input(format!("unbalanced brackets in `{s}`")));
            }
        }
        if depth != 0 {
            return Err(Error::input(format!("unbalanced brackets in `{s}`")));
        }
        out.push(s[start..].trim());
        Ok(out)
    }

    fn parse_count(s: &str, what: &str) -> Result<usize> {
        s.trim().parse::<usize>().map_err(|_| Error::input(format!("bad {what} count `{s}`")))
    }

    /// Parses `disc`, `ball:n`, `polydisc:r`, `product:[spec,spec,...]` and `empty`.
    pub fn parse(spec: &str) -> Result<NormalJAlgebra> {
        let s = spec.trim();
        if s == "disc" {
            return Ok(disc());
        }
        if s == "empty" {
            return Ok(NormalJAlgebra::empty());
        }
        if let Some(rest) = s.strip_prefix("ball:") {
            return ball(parse_count(rest, "ball")?);
        }
        if let Some(rest) = s.strip_prefix("polydisc:") {
            return polydisc(parse_count(rest, "polydisc")?);
        }
        if let Some(rest) = s.strip_prefix("product:") {
            let inner = rest
                .trim()
                .strip_prefix('[')
                .and_then(|x| x.strip_suffix(']'))
                .ok_or_else(|| Error::input(format!("product needs [..]: `{s}`")))?;
            let parts = split_top_level(inner)?;
            let factors = parts.iter().map(|p| parse(p)).collect::<Result<Vec<_>>>()?;
            return product_all(&factors);
        }
        Err(Error::input(format!("unknown preset `{s}`")))
    }

    /// Whether `spec` names a unit-ball preset (`disc` or `ball:n`).
    pub fn ball_dimension(spec: &str) -> Option<usize> {
        let s = spec.trim();
        if s == "disc" {
            return Some(1);
        }
        s.strip_prefix("ball:").and_then(|r| r.trim().parse().ok())
    }

    pub fn labels_map(j: &NormalJAlgebra) -> BTreeMap<String, usize> {
        j.labels().iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()
    }
}
