//! Siegel-domain realization of a normal j-algebra and the simply transitive
//! affine action of its split solvable group.
//!
//! Points are `(z, w)` with `z` complex over the canonical basis of `s_{-1}` and
//! `w` real over the basis of `s_{-1/2}`; multiplication by `i` on `w` is `j`.
//! Affine maps act on the real coordinates `(Re z, Im z, w, 1)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::jalgebra::{fine_structure, FineStructure, NormalJAlgebra};
use crate::lie::AffineRep;
use crate::linalg::Subspace;
use crate::{Error, Result};

/// Convergence tolerance of the cone solver.
pub const CONE_TOL: f64 = 1e-9;
const CONE_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PointRepr", try_from = "PointRepr")]
pub struct DomainPoint {
    pub z: DVector<Complex64>,
    pub w: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PointRepr {
    z: Vec<[f64; 2]>,
    w: Vec<f64>,
}

impl From<DomainPoint> for PointRepr {
    fn from(p: DomainPoint) -> Self {
        PointRepr {
            z: p.z.iter().map(|c| [c.re, c.im]).collect(),
            w: p.w.iter().cloned().collect(),
        }
    }
}

impl TryFrom<PointRepr> for DomainPoint {
    type Error = String;
    fn try_from(r: PointRepr) -> std::result::Result<Self, String> {
        if r.z.iter().flatten().chain(r.w.iter()).any(|x| !x.is_finite()) {
            return Err("non-finite point coordinate".into());
        }
        Ok(DomainPoint {
            z: DVector::from_iterator(r.z.len(), r.z.iter().map(|c| Complex64::new(c[0], c[1]))),
            w: DVector::from_vec(r.w),
        })
    }
}

impl DomainPoint {
    pub fn new(z: Vec<Complex64>, w: Vec<f64>) -> Self {
        DomainPoint {
            z: DVector::from_vec(z),
            w: DVector::from_vec(w),
        }
    }

    /// Real coordinates `(Re z, Im z, w, 1)`.
    pub fn to_real(&self) -> DVector<f64> {
        let d1 = self.z.len();
        let dh = self.w.len();
        let mut v = DVector::zeros(2 * d1 + dh + 1);
        for k in 0..d1 {
            v[k] = self.z[k].re;
            v[d1 + k] = self.z[k].im;
        }
        v.rows_mut(2 * d1, dh).copy_from(&self.w);
        v[2 * d1 + dh] = 1.0;
        v
    }

    pub fn from_real(v: &DVector<f64>, d1: usize, dh: usize) -> Self {
        DomainPoint {
            z: DVector::from_fn(d1, |k, _| Complex64::new(v[k], v[d1 + k])),
            w: v.rows(2 * d1, dh).into_owned(),
        }
    }

    /// Euclidean distance in real coordinates.
    pub fn distance(&self, other: &DomainPoint) -> f64 {
        let dz: f64 = self.z.iter().zip(other.z.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        (dz + (&self.w - &other.w).norm_squared()).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (self.z.iter().map(|c| c.norm_sqr()).sum::<f64>() + self.w.norm_squared()).sqrt()
    }
}

/// Element `exp(x_minus) * exp(x_zero)` of `S = S_- x S_0`, with its affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub x_minus: DVector<f64>,
    pub x_zero: DVector<f64>,
    #[serde(skip)]
    affine: DMatrix<f64>,
}

impl GroupElement {
    pub fn affine(&self) -> &DMatrix<f64> {
        &self.affine
    }
}

/// Outcome of a cone-membership solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub inside: bool,
    /// Relative residual of `Ad(exp g) xi0 = x` at the returned witness.
    pub residual: f64,
    /// `g` in `s_0` (ambient coordinates); meaningful only when `inside`.
    pub witness: DVector<f64>,
    pub iterations: usize,
}

impl ConeMembership {
    pub fn require(self) -> Result<Self> {
        if self.inside {
            Ok(self)
        } else {
            Err(Error::SolverDiverged { residual: self.residual })
        }
    }
}

#[derive(Debug, Clone)]
pub struct SiegelModel {
    pub jalg: NormalJAlgebra,
    pub fs: FineStructure,
    /// Orientation of the acting bracket: `Ad = exp(sigma ad)`, `Phi = sigma/4 (...)`.
    pub sigma: f64,
    /// `xi_1 + ... + xi_r` (ambient).
    pub xi0: DVector<f64>,
    pub z0: DomainPoint,
    v: Subspace,
    w: Subspace,
    s0: Subspace,
    cv: DMatrix<f64>,
    cw: DMatrix<f64>,
    split: DMatrix<f64>,
    jw: DMatrix<f64>,
    xi0_v: DVector<f64>,
    phi_re: Vec<DMatrix<f64>>,
    phi_im: Vec<DMatrix<f64>>,
    s0_abelian: bool,
    rep: AffineRep,
    /// Worst residual of the Hermitian axioms on basis pairs.
    pub hermitian_defect: f64,
    /// Worst residual of `d(jx) = i d(x)` for the orbit map at `z0`.
    pub holomorphy_defect: f64,
}

/// Builds the Siegel model, computing the fine structure first.
pub fn build_model(jalg: &NormalJAlgebra) -> Result<SiegelModel> {
    let fs = fine_structure(jalg)?;
    build_model_with(jalg, fs)
}

/// Builds the Siegel model, choosing the orientation sigma that makes `Phi`
/// positive and the orbit map at the base point holomorphic.
pub fn build_model_with(jalg: &NormalJAlgebra, fs: FineStructure) -> Result<SiegelModel> {
    let mut reasons = Vec::new();
    for sigma in [1.0, -1.0] {
        let m = SiegelModel::assemble(jalg, fs.clone(), sigma)?;
        match m.orientation_failure() {
            None => return Ok(m),
            Some(r) => reasons.push(format!("sigma={sigma:+}: {r}")),
        }
    }
    Err(Error::PositivityUnfixable(reasons.join("; ")))
}

/// Largest modulus of a complex vector.
pub fn cmax(v: &DVector<Complex64>) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.norm()))
}

impl SiegelModel {
    fn assemble(jalg: &NormalJAlgebra, fs: FineStructure, sigma: f64) -> Result<Self> {
        let n = jalg.dim();
        let l = &jalg.algebra;
        let v = fs.minus_one.clone();
        let w = fs.minus_half.clone();
        let s0 = fs.zero.clone();
        let (d1, dh, d0) = (v.dim(), w.dim(), s0.dim());
        if d1 + dh + d0 != n {
            return Err(Error::RootPatternViolation("grading does not span the algebra".into()));
        }
        let cv = v.coordinate_map();
        let cw = w.coordinate_map();
        let mut all = DMatrix::zeros(n, n);
        all.view_mut((0, 0), (n, d1)).copy_from(v.basis());
        all.view_mut((0, d1), (n, dh)).copy_from(w.basis());
        all.view_mut((0, d1 + dh), (n, d0)).copy_from(s0.basis());
        let split = if n == 0 {
            DMatrix::zeros(0, 0)
        } else {
            all.try_inverse().ok_or(Error::DegenerateDual)?
        };
        let jw = &cw * &jalg.j * w.basis();
        let xi0 = fs.xi.iter().fold(DVector::zeros(n), |a, x| a + x);
        let xi0_v = &cv * &xi0;

        let wb = w.basis_vectors();
        let mut phi_re = vec![DMatrix::zeros(dh, dh); d1];
        let mut phi_im = vec![DMatrix::zeros(dh, dh); d1];
        for a in 0..dh {
            let ja = &jalg.j * &wb[a];
            for b in 0..dh {
                let re = &cv * l.br(&ja, &wb[b]) * (sigma / 4.0);
                let im = &cv * l.br(&wb[a], &wb[b]) * (sigma / 4.0);
                for k in 0..d1 {
                    phi_re[k][(a, b)] = re[k];
                    phi_im[k][(a, b)] = im[k];
                }
            }
        }
        let s0b = s0.basis_vectors();
        let mut ab: f64 = 0.0;
        for x in &s0b {
            for y in &s0b {
                ab = ab.max(l.br(x, y).amax());
            }
        }
        let scale = l.tensor().iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let z0 = DomainPoint {
            z: xi0_v.map(|x| Complex64::new(0.0, x)),
            w: DVector::zeros(dh),
        };
        let placeholder = AffineRep::new(l.clone(), vec![DMatrix::identity(1, 1) * 0.0; n], sigma)?;
        let mut m = SiegelModel {
            jalg: jalg.clone(),
            fs,
            sigma,
            xi0,
            z0,
            v,
            w,
            s0,
            cv,
            cw,
            split,
            jw,
            xi0_v,
            phi_re,
            phi_im,
            s0_abelian: ab <= 1e-12 * scale,
            rep: placeholder,
            hermitian_defect: 0.0,
            holomorphy_defect: 0.0,
        };
        let mats = (0..n).map(|i| m.generator(&l.basis_vector(i))).collect();
        m.rep = AffineRep::new(l.clone(), mats, sigma)?;
        m.hermitian_defect = m.hermitian_axioms_defect();
        m.holomorphy_defect = m.orbit_map_holomorphy_defect();
        Ok(m)
    }

    fn orientation_failure(&self) -> Option<String> {
        let dh = self.dim_w();
        if dh > 0 {
            // <Re Phi(w_a, w_b), xi0>_omega must be positive definite.
            let xi0 = &self.xi0;
            let g = DMatrix::from_fn(dh, dh, |a, b| {
                let mut s = 0.0;
                for k in 0..self.dim_v() {
                    s += self.phi_re[k][(a, b)] * self.jalg.inner(&self.v.basis().column(k).into_owned(), xi0);
                }
                s
            });
            let gs = (&g + g.transpose()) * 0.5;
            if gs.cholesky().is_none() {
                return Some("Phi(w,w) is not positive".into());
            }
            for a in 0..dh {
                let e =DVector::from_fn(dh, |i, _| if i == a { 1.0 } else { 0.0 });
                let q = self.phi_sq(&e);
                let probe = &q + &self.xi0_v * (1e-3 * q.norm() / self.xi0_v.norm());
                if !self.cone_contains(&probe).inside {
                    return Some(format!("Phi(w_{a}, w_{a}) is outside the closed cone"));
                }
            }
        }
        if !self.cone_contains(&self.xi0_v.clone()).inside {
            return Some("xi0 is not in the cone".into());
        }
        if self.holomorphy_defect > 1e-8 {
            return Some(format!("orbit map is not holomorphic (defect {:.2e})", self.holomorphy_defect));
        }
        if self.hermitian_defect > 1e-10 {
            return Some(format!("Phi is not Hermitian (defect {:.2e})", self.hermitian_defect));
        }
        None
    }

    pub fn dim_v(&self) -> usize {
        self.v.dim()
    }

    pub fn dim_w(&self) -> usize {
        self.w.dim()
    }

    /// Real dimension of the affine coordinates including the homogenizing 1.
    pub fn real_dim(&self) -> usize {
        2 * self.dim_v() + self.dim_w() + 1
    }

    pub fn v_space(&self) -> &Subspace {
        &self.v
    }

    pub fn w_space(&self) -> &Subspace {
        &self.w
    }

    pub fn s0_space(&self) -> &Subspace {
        &self.s0
    }

    pub fn s0_is_abelian(&self) -> bool {
        self.s0_abelian
    }

    /// Complex structure on `w`-coordinates.
    pub fn jw(&self) -> &DMatrix<f64> {
        &self.jw
    }

    pub fn xi0_v(&self) -> &DVector<f64> {
        &self.xi0_v
    }

    /// Coordinates of `x` along `(s_{-1}, s_{-1/2}, s_0)`.
    pub fn split_coords(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (d1, dh) = (self.dim_v(), self.dim_w());
        let c = &self.split * x;
        let d0 = c.len() - d1 - dh;
        (c.rows(0, d1).into_owned(), c.rows(d1, dh).into_owned(), c.rows(d1 + dh, d0).into_owned())
    }

    /// `(s_{-1} + s_{-1/2})`-component and `s_0`-component of `x`, ambient.
    pub fn split_minus_zero(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (a, b, c) = self.split_coords(x);
        (self.v.basis() * a + self.w.basis() * b, self.s0.basis() * c)
    }

    /// `Phi(u, v)` for `u, v` in `w`-coordinates, as a complex `z`-vector.
    pub fn phi(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<Complex64> {
        DVector::from_fn(self.dim_v(), |k, _| {
            Complex64::new(u.dot(&(&self.phi_re[k] * v)), u.dot(&(&self.phi_im[k] * v)))
        })
    }

    /// `Phi(w, w)`, which is real.
    pub fn phi_sq(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim_v(), |k, _| w.dot(&(&self.phi_re[k] * w)))
    }

    fn phi_columns(&self, xp: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (d1, dh) = (self.dim_v(), self.dim_w());
        let mut pr = DMatrix::zeros(d1, dh);
        let mut pi = DMatrix::zeros(d1, dh);
        for k in 0..d1 {
            pr.row_mut(k).copy_from(&(&self.phi_re[k] * xp).transpose());
            pi.row_mut(k).copy_from(&(&self.phi_im[k] * xp).transpose());
        }
        (pr, pi)
    }

    fn hermitian_axioms_defect(&self) -> f64 {
        let dh = self.dim_w();
        let mut d: f64 = 0.0;
        let e = |i: usize| DVector::from_fn(dh, |k, _| if k == i { 1.0 } else { 0.0 });
        for a in 0..dh {
            for b in 0..dh {
                let (ea, eb) = (e(a), e(b));
                let p = self.phi(&ea, &eb);
                let lin = self.phi(&(&self.jw * &ea), &eb) - p.map(|c| c * Complex64::i());
                let herm = self.phi(&eb, &ea) - p.map(|c| c.conj());
                d = d.max(cmax(&lin)).max(cmax(&herm));
            }
        }
        d
    }

    /// Sigma-scaled `ad(x0)` restricted to `s_{-1}`, in `z`-coordinates.
    pub fn ad_v(&self, x0: &DVector<f64>) -> DMatrix<f64> {
        &self.cv * self.jalg.algebra.ad(x0) * self.v.basis() * self.sigma
    }

    pub fn ad_w(&self, x0: &DVector<f64>) -> DMatrix<f64> {
        &self.cw * self.jalg.algebra.ad(x0) * self.w.basis() * self.sigma
    }

    /// `Ad(exp x0)` on the whole algebra, with the model's orientation.
    pub fn big_ad(&self, x0: &DVector<f64>) -> DMatrix<f64> {
        (self.jalg.algebra.ad(x0) * self.sigma).exp()
    }

    fn orbit_derivative(&self, x: &DVector<f64>) -> (DVector<Complex64>, DVector<f64>) {
        let (xv, xw, xz) = self.split_coords(x);
        let x0 = self.s0.basis() * xz;
        let dz = &self.ad_v(&x0) * &self.xi0_v;
        (DVector::from_fn(xv.len(), |k, _| Complex64::new(xv[k], dz[k])), xw)
    }

    fn orbit_map_holomorphy_defect(&self) -> f64 {
        let n = self.jalg.dim();
        let mut d: f64 = 0.0;
        for i in 0..n {
            let x = self.jalg.algebra.basis_vector(i);
            let (z1, w1) = self.orbit_derivative(&(&self.jalg.j * &x));
            let (z2, w2) = self.orbit_derivative(&x);
            let dz = z1 - z2.map(|c| c * Complex64::i());
            let dw = w1 - &self.jw * w2;
            d = d.max(cmax(&dz)).max(dw.amax());
        }
        d
    }

    /// Infinitesimal generator of the action, as an affine matrix.
    fn generator(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (d1, dh) = (self.dim_v(), self.dim_w());
        let nn = 2 * d1 + dh + 1;
        let (xv, xw, xz) = self.split_coords(x);
        let x0 = self.s0.basis() * xz;
        let av = self.ad_v(&x0);
        let aw = self.ad_w(&x0);
        let (pr, pi) = self.phi_columns(&xw);
        let mut m = DMatrix::zeros(nn, nn);
        m.view_mut((0, 0), (d1, d1)).copy_from(&av);
        m.view_mut((d1, d1), (d1, d1)).copy_from(&av);
        m.view_mut((0, 2 * d1), (d1, dh)).copy_from(&(pi * -2.0));
        m.view_mut((d1, 2 * d1), (d1, dh)).copy_from(&(pr * 2.0));
        m.view_mut((2 * d1, 2 * d1), (dh, dh)).copy_from(&aw);
        m.view_mut((0, nn - 1), (d1, 1)).copy_from(&xv);
        m.view_mut((2 * d1, nn - 1), (dh, 1)).copy_from(&xw);
        m
    }

    /// Faithful affine representation of the algebra on `(Re z, Im z, w, 1)`.
    pub fn affine_rep(&self) -> &AffineRep {
        &self.rep
    }

    fn affine_of(&self, x_minus: &DVector<f64>, x_zero: &DVector<f64>) -> DMatrix<f64> {
        let (d1, dh) = (self.dim_v(), self.dim_w());
        let nn = 2 * d1 + dh + 1;
        let av = self.ad_v(x_zero).exp();
        let aw = self.ad_w(x_zero).exp();
        let xi = &self.cv * x_minus;
        let xp = &self.cw * x_minus;
        let (pr, pi) = self.phi_columns(&xp);
        let pp = self.phi(&xp, &xp);
        let mut m = DMatrix::zeros(nn, nn);
        m.view_mut((0, 0), (d1, d1)).copy_from(&av);
        m.view_mut((d1, d1), (d1, d1)).copy_from(&av);
        m.view_mut((0, 2 * d1), (d1, dh)).copy_from(&(pi * &aw * -2.0));
        m.view_mut((d1, 2 * d1), (d1, dh)).copy_from(&(pr * &aw * 2.0));
        m.view_mut((2 * d1, 2 * d1), (dh, dh)).copy_from(&aw);
        for k in 0..d1 {
            m[(k, nn - 1)] = xi[k] - pp[k].im;
            m[(d1 + k, nn - 1)] = pp[k].re;
        }
        m.view_mut((2 * d1, nn - 1), (dh, 1)).copy_from(&xp);
        m[(nn - 1, nn - 1)] = 1.0;
        m
    }

    /// Group element `exp(x_minus) exp(x_zero)`; components are projected onto
    /// `s_{-1} + s_{-1/2}` and `s_0`.
    pub fn element(&self, x_minus: &DVector<f64>, x_zero: &DVector<f64>) -> Result<GroupElement> {
        let n = self.jalg.dim();
        for v in [x_minus, x_zero] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("group coordinates"));
            }
        }
        let (xm, _) = self.split_minus_zero(x_minus);
        let (_, xz) = self.split_minus_zero(x_zero);
        let affine = self.affine_of(&xm, &xz);
        Ok(GroupElement {
            x_minus: xm,
            x_zero: xz,
            affine,
        })
    }

    pub fn identity(&self) -> GroupElement {
        let n = self.jalg.dim();
        self.element(&DVector::zeros(n), &DVector::zeros(n)).expect("identity")
    }

    /// Restores the cached affine map after deserialization.
    pub fn rehydrate(&self, g: &GroupElement) -> Result<GroupElement> {
        self.element(&g.x_minus, &g.x_zero)
    }

    /// `exp(x)` for a general algebra element.
    pub fn exp(&self, x: &DVector<f64>) -> Result<GroupElement> {
        let m = self.rep.exp_affine(x)?;
        let (_, x0) = self.split_minus_zero(x);
        let nm = m * self.rep.exp_affine(&(-&x0))?;
        let (d1, dh) = (self.dim_v(), self.dim_w());
        let nn = self.real_dim();
        let xi = nm.view((0, nn - 1), (d1, 1)).into_owned();
        let xp = nm.view((2 * d1, nn - 1), (dh, 1)).into_owned();
        let xm = self.v.basis() * DVector::from_column_slice(xi.as_slice())
            + self.w.basis() * DVector::from_column_slice(xp.as_slice());
        self.element(&xm, &x0)
    }

    pub fn act(&self, g: &GroupElement, p: &DomainPoint) -> DomainPoint {
        DomainPoint::from_real(&(&g.affine * p.to_real()), self.dim_v(), self.dim_w())
    }

    /// Applies an arbitrary affine matrix on `(Re z, Im z, w, 1)`.
    pub fn apply_affine(&self, m: &DMatrix<f64>, p: &DomainPoint) -> DomainPoint {
        DomainPoint::from_real(&(m * p.to_real()), self.dim_v(), self.dim_w())
    }

    /// Group product `g h`.
    pub fn product(&self, g: &GroupElement, h: &GroupElement) -> Result<GroupElement> {
        let ad_s = self.big_ad(&g.x_zero);
        let y = &ad_s * &h.x_minus;
        let xm = &g.x_minus + &y + self.jalg.algebra.br(&g.x_minus, &y) * (0.5 * self.sigma);
        let x0 = if self.s0_abelian {
            &g.x_zero + &h.x_zero
        } else {
            let target = &self.ad_v(&g.x_zero).exp() * (&self.ad_v(&h.x_zero).exp() * &self.xi0_v);
            self.cone_contains(&target).require()?.witness
        };
        self.element(&xm, &x0)
    }

    pub fn inverse(&self, g: &GroupElement) -> Result<GroupElement> {
        // (n s)^{-1} = s^{-1} n^{-1} = exp(-Ad(s^{-1}) x_minus) s^{-1}
        let x0 = -&g.x_zero;
        let xm = -(self.big_ad(&x0) * &g.x_minus);
        self.element(&xm, &x0)
    }

    /// Membership of `x` (in `z`-coordinates of `s_{-1}`) in the open cone.
    pub fn cone_contains(&self, x: &DVector<f64>) -> ConeMembership {
        let n = self.jalg.dim();
        let d1 = self.dim_v();
        let zero = DVector::zeros(n);
        if d1 == 0 {
            return ConeMembership {
                inside: true,
                residual: 0.0,
                witness: zero,
                iterations: 0,
            };
        }
        let xn = x.norm();
        if x.len() != d1 || !(xn > 0.0) || !xn.is_finite() {
            return ConeMembership {
                inside: false,
                residual: f64::INFINITY,
                witness: zero,
                iterations: 0,
            };
        }
        let lambda = xn / self.xi0_v.norm();
        let target = x / lambda;
        let b0 = self.s0.basis();
        let d0 = b0.ncols();
        let gens: Vec<DMatrix<f64>> = (0..d0).map(|i| self.ad_v(&b0.column(i).into_owned())).collect();
        let field = |g: &DVector<f64>| -> DMatrix<f64> {
            gens.iter().zip(g.iter()).fold(DMatrix::zeros(d1, d1), |a, (m, c)| a + m * *c)
        };
        let eval = |g: &DVector<f64>| -> DVector<f64> { field(g).exp() * &self.xi0_v - &target };
        let mut g = DVector::zeros(d0);
        let mut f = eval(&g);
        let mut fnorm = f.norm();
        let mut last_step = f64::INFINITY;
        let mut iters = 0;
        let scale = self.xi0_v.norm();
        while iters < CONE_MAX_ITER {
            if fnorm / scale < CONE_TOL && last_step < 1e-6 * (1.0 + g.norm()) {
                break;
            }
            iters += 1;
            let xg = field(&g);
            let mut jac = DMatrix::zeros(d1, d0);
            for (i, e) in gens.iter().enumerate() {
                let mut blk = DMatrix::zeros(2 * d1, 2 * d1);
                blk.view_mut((0, 0), (d1, d1)).copy_from(&xg);
                blk.view_mut((d1, d1), (d1, d1)).copy_from(&xg);
                blk.view_mut((0, d1), (d1, d1)).copy_from(e);
                let ex = blk.exp();
                jac.set_column(i, &(ex.view((0, d1), (d1, d1)) * &self.xi0_v));
            }
            let svd = jac.svd(true, true);
            let step = match svd.solve(&(-&f), f64::MIN_POSITIVE) {
                Ok(s) => s,
                Err(_) => break,
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &g + &step * t;
                let fc = eval(&cand);
                if fc.iter().all(|v| v.is_finite()) && fc.norm() <= fnorm {
                    g = cand;
                    f = fc;
                    fnorm = f.norm();
                    last_step = step.norm() * t;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            if fnorm == 0.0 {
                last_step = 0.0;
            }
        }
        let converged = fnorm / scale < CONE_TOL && last_step < 1e-6 * (1.0 + g.norm());
        // Undo the normalization: Ad(exp(c delta)) = exp(-sigma c) on s_{-1}.
        let c = -self.sigma * lambda.ln();
        let witness = b0 * &g + &self.fs.delta * c;
        let residual = (self.ad_v(&witness).exp() * &self.xi0_v - x).norm() / xn;
        ConeMembership {
            inside: converged && residual < 1e3 * CONE_TOL,
            residual,
            witness,
            iterations: iters,
        }
    }

    /// Cone membership for an ambient vector of `s_{-1}`.
    pub fn cone_contains_ambient(&self, x: &DVector<f64>) -> ConeMembership {
        self.cone_contains(&(&self.cv * x))
    }

    /// `Im z - Phi(w, w)`.
    pub fn defect_vector(&self, p: &DomainPoint) -> DVector<f64> {
        p.z.map(|c| c.im) - self.phi_sq(&p.w)
    }

    pub fn contains(&self, p: &DomainPoint) -> Result<ConeMembership> {
        self.check_point(p)?;
        Ok(self.cone_contains(&self.defect_vector(p)))
    }

    fn check_point(&self, p: &DomainPoint) -> Result<()> {
        if p.z.len() != self.dim_v() {
            return Err(Error::DimensionMismatch { expected: self.dim_v(), got: p.z.len() });
        }
        if p.w.len() != self.dim_w() {
            return Err(Error::DimensionMismatch { expected: self.dim_w(), got: p.w.len() });
        }
        Ok(())
    }

    /// The unique `s` with `s . z0 = p`.
    pub fn solve_orbit(&self, p: &DomainPoint, tol: f64) -> Result<GroupElement> {
        let cm = self.contains(p)?;
        if !cm.inside {
            return Err(Error::NotInDomain { residual: cm.residual });
        }
        let xm = self.v.basis() * p.z.map(|c| c.re) + self.w.basis() * &p.w;
        let g = self.element(&xm, &cm.witness)?;
        let resid = self.act(&g, &self.z0).distance(p) / (1.0 + p.norm());
        if resid > tol {
            return Err(Error::SolverDiverged { residual: resid });
        }
        Ok(g)
    }

    /// Random element with coordinates uniform in `[-bound, bound]`.
    pub fn random_element<R: Rng>(&self, rng: &mut R, bound: f64) -> GroupElement {
        let n = self.jalg.dim();
        let xm = DVector::from_fn(n, |_, _| rng.gen_range(-bound..=bound));
        let xz = DVector::from_fn(n, |_, _| rng.gen_range(-bound..=bound));
        self.element(&xm, &xz).expect("finite coordinates")
    }

    /// Random interior point `s . z0`.
    pub fn random_point<R: Rng>(&self, rng: &mut R, bound: f64) -> DomainPoint {
        let g = self.random_element(rng, bound);
        self.act(&g, &self.z0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jalgebra::presets;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(m: &SiegelModel, s: &str) -> DVector<f64> {
        m.jalg.algebra.basis_vector(m.jalg.algebra.index_of(s).unwrap())
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ball_orientation_and_phi() {
        let m = build_model(&presets::ball(2).unwrap()).unwrap();
        assert_eq!(m.sigma, -1.0);
        assert_eq!((m.dim_v(), m.dim_w()), (1, 2));
        // Phi(w, w) = |w|^2 for w = a xi1 + b eta1
        let w = DVector::from_vec(vec![0.6, -0.8]);
        assert!((m.phi_sq(&w)[0] - 1.0).abs() < 1e-14);
        assert!(m.hermitian_defect < 1e-14);
        assert_eq!(m.z0, DomainPoint::new(vec![c(0.0, 1.0)], vec![0.0, 0.0]));
    }

    #[test]
    fn disc_and_polydisc_pick_the_same_orientation() {
        for j in [presets::disc(), presets::polydisc(2).unwrap()] {
            let m = build_model(&j).unwrap();
            assert_eq!(m.sigma, -1.0);
            assert_eq!(m.dim_w(), 0);
        }
    }

    #[test]
    fn cone_membership() {
        let b2 = build_model(&presets::ball(2).unwrap()).unwrap();
        let r = b2.cone_contains(&b2.xi0_v().clone());
        assert!(r.inside && r.witness.norm() < 1e-12);
        assert!(!b2.cone_contains(&DVector::from_vec(vec![-1.0])).inside);
        assert!(!b2.cone_contains(&DVector::from_vec(vec![0.0])).inside);

        let p = build_model(&presets::polydisc(2).unwrap()).unwrap();
        let r = p.cone_contains(&DVector::from_vec(vec![1.0, 3.0]));
        assert!(r.inside, "{r:?}");
        let want = e(&p, "delta_2") * 3f64.ln();
        assert!((&r.witness - want).amax() < 1e-9);
        // boundary and outside
        assert!(!p.cone_contains(&DVector::from_vec(vec![1.0, 0.0])).inside);
        assert!(!p.cone_contains(&DVector::from_vec(vec![1.0, -2.0])).inside);
    }

    #[test]
    fn membership_of_points() {
        let m = build_model(&presets::ball(2).unwrap()).unwrap();
        assert!(m.contains(&m.z0).unwrap().inside);
        assert!(!m.contains(&DomainPoint::new(vec![c(0.0, 0.0)], vec![0.0, 0.0])).unwrap().inside);
        let p = DomainPoint::new(vec![c(0.0, 2.0)], vec![0.6, 0.8]);
        assert!(m.contains(&p).unwrap().inside);
        let q = DomainPoint::new(vec![c(0.0, 0.9)], vec![0.6, 0.8]);
        assert!(!m.contains(&q).unwrap().inside);
    }

    #[test]
    fn action_reproduces_translation_rows() {
        let m = build_model(&presets::ball(2).unwrap()).unwrap();
        let t = 0.7;
        let p = DomainPoint::new(vec![c(0.3, 2.0)], vec![0.2, -0.4]);
        let wc = c(0.2, -0.4);
        let zeta = m.exp(&(e(&m, "zeta") * t)).unwrap();
        let q = m.act(&zeta, &p);
        assert!((q.z[0] - (p.z[0] + t)).norm() < 1e-12);
        let xi = m.exp(&(e(&m, "xi1") * t)).unwrap();
        let q = m.act(&xi, &p);
        let want = p.z[0] + c(0.0, 2.0 * t) * wc + c(0.0, t * t);
        assert!((q.z[0] - want).norm() < 1e-12);
        assert!((q.w[0] - (0.2 + t)).abs() < 1e-12);
        let id = m.identity();
        assert_eq!(m.act(&id, &p), p);
    }

    #[test]
    fn solve_orbit_on_half_plane() {
        let m = build_model(&presets::disc()).unwrap();
        let g = m.solve_orbit(&DomainPoint::new(vec![c(0.0, 2.0)], vec![]), 1e-9).unwrap();
        let want = m.exp(&(e(&m, "delta") * 2f64.ln())).unwrap();
        assert!((g.affine() - want.affine()).amax() < 1e-9);
        let g = m.solve_orbit(&DomainPoint::new(vec![c(1.0, 1.0)], vec![]), 1e-9).unwrap();
        let want = m.exp(&e(&m, "zeta")).unwrap();
        assert!((g.affine() - want.affine()).amax() < 1e-9);
        let g = m.solve_orbit(&m.z0.clone(), 1e-9).unwrap();
        assert!((g.affine() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        assert!(matches!(
            m.solve_orbit(&DomainPoint::new(vec![c(0.0, -1.0)], vec![]), 1e-9),
            Err(Error::NotInDomain { .. })
        ));
    }

    #[test]
    fn rep_is_a_homomorphism_and_matches_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for j in [presets::ball(3).unwrap(), presets::parse("product:[ball:2,disc]").unwrap()] {
            let m = build_model(&j).unwrap();
            assert!(m.affine_rep().homomorphism_defect() < 1e-10);
            for _ in 0..5 {
                let g = m.random_element(&mut rng, 1.0);
                let h = m.random_element(&mut rng, 1.0);
                let gh = m.product(&g, &h).unwrap();
                assert!((gh.affine() - g.affine() * h.affine()).amax() < 1e-9);
                let gi = m.inverse(&g).unwrap();
                let id = m.product(&g, &gi).unwrap();
                assert!((id.affine() - DMatrix::<f64>::identity(m.real_dim(), m.real_dim())).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn point_json_format() {
        let p = DomainPoint::new(vec![c(1.0, 2.0)], vec![0.5]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"z":[[1.0,2.0]],"w":[0.5]}"#);
        let back: DomainPoint = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
