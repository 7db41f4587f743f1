//! The unit ball in its Siegel realization `H_n = {Im z - |w|^2 > 0}`.
//!
//! `w` is stored as real coordinates `(a_1..a_{n-1}, b_1..b_{n-1})` with
//! `w_k = a_k + i b_k`, matching the `(xi, eta)` basis of `s_{-1/2}`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::jalgebra::{presets, NormalJAlgebra};
use crate::lie::AffineRep;
use crate::linalg::Subspace;
use crate::siegel::{build_model, DomainPoint, GroupElement, SiegelModel};
use crate::{Error, Result};

/// Relative size below which the `delta` component counts as zero.
pub const DELTA_TOL: f64 = 1e-12;
/// Points sampled by the totally-real check.
pub const TOTALLY_REAL_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Zeta,
    /// 1-based index
    Xi(usize),
    Eta(usize),
    Delta,
}

impl std::str::FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let idx = |rest: &str| rest.parse::<usize>().ok().filter(|&k| k > 0);
        match s {
            "zeta" => Ok(Generator::Zeta),
            "delta" => Ok(Generator::Delta),
            _ => {
                if let Some(k) = s.strip_prefix("xi").and_then(idx) {
                    Ok(Generator::Xi(k))
                } else if let Some(k) = s.strip_prefix("eta").and_then(idx) {
                    Ok(Generator::Eta(k))
                } else {
                    Err(Error::UnknownGenerator(s.to_string()))
                }
            }
        }
    }
}

/// `b_n` together with its Siegel model and its standard vector-field representation.
#[derive(Debug, Clone)]
pub struct BallAlgebra {
    pub n: usize,
    pub jalg: NormalJAlgebra,
    pub model: SiegelModel,
    pub rep: AffineRep,
}

/// Conjugating element `g = exp(y_k) ... exp(y_1)` with `Ad(g) = exp(ad y_k) ... exp(ad y_1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjugator {
    /// Factors in application order.
    pub factors: Vec<DVector<f64>>,
    pub ad: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjugation {
    pub conjugator: Conjugator,
    /// `Ad(g) x`
    pub image: DVector<f64>,
    /// `|(Ad(g) x)_n| / |x|`
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Conjugated,
    Abelian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotallyRealWitness {
    pub branch: Branch,
    pub subalgebra: Subspace,
    pub conjugator: Conjugator,
    pub containment_residual: f64,
    pub closure_residual: f64,
    /// Smallest `|det|` over the sampled points.
    pub min_abs_defect: f64,
}

impl BallAlgebra {
    pub fn new(n: usize) -> Result<Self> {
        let jalg = presets::ball(n)?;
        let model = build_model(&jalg)?;
        let rep = table1_rep(&jalg)?;
        Ok(BallAlgebra { n, jalg, model, rep })
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    fn m(&self) -> usize {
        self.n - 1
    }

    pub fn delta(&self) -> usize {
        0
    }

    pub fn zeta(&self) -> usize {
        1
    }

    /// 1-based
    pub fn xi(&self, k: usize) -> usize {
        1 + k
    }

    pub fn eta(&self, k: usize) -> usize {
        1 + self.m() + k
    }

    pub fn index(&self, g: Generator) -> Result<usize> {
        let ok = |k: usize| k >= 1 && k <= self.m();
        match g {
            Generator::Zeta => Ok(self.zeta()),
            Generator::Delta => Ok(self.delta()),
            Generator::Xi(k) if ok(k) => Ok(self.xi(k)),
            Generator::Eta(k) if ok(k) => Ok(self.eta(k)),
            _ => Err(Error::UnknownGenerator(format!("{g:?} in b_{}", self.n))),
        }
    }

    pub fn basis_vector(&self, g: Generator) -> Result<DVector<f64>> {
        Ok(self.jalg.algebra.basis_vector(self.index(g)?))
    }

    fn w_complex(&self, p: &DomainPoint) -> Vec<Complex64> {
        let m = self.m();
        (0..m).map(|k| Complex64::new(p.w[k], p.w[m + k])).collect()
    }

    fn point(&self, z: Complex64, w: &[Complex64]) -> DomainPoint {
        let mut wr: Vec<f64> = w.iter().map(|c| c.re).collect();
        wr.extend(w.iter().map(|c| c.im));
        DomainPoint::new(vec![z], wr)
    }

    /// Closed-form flows of the standard vector fields.
    pub fn table1_flow(&self, g: Generator, t: f64, p: &DomainPoint) -> Result<DomainPoint> {
        self.index(g)?;
        let z = p.z[0];
        let mut w = self.w_complex(p);
        let i = Complex64::i();
        let z1 = match g {
            Generator::Zeta => z + t,
            Generator::Xi(k) => {
                let old = w[k - 1];
                w[k - 1] += t;
                z + 2.0 * i * t * old + i * t * t
            }
            Generator::Eta(k) => {
                let old = w[k - 1];
                w[k - 1] += i * t;
                z + 2.0 * t * old + i * t * t
            }
            Generator::Delta => {
                for c in w.iter_mut() {
                    *c *= (t / 2.0).exp();
                }
                z * t.exp()
            }
        };
        Ok(self.point(z1, &w))
    }

    /// Holomorphic vector field of `v` at `p`, components `(z, w_1..w_{n-1})`.
    pub fn vector_field(&self, v: &DVector<f64>, p: &DomainPoint) -> DVector<Complex64> {
        let m = self.m();
        let i = Complex64::i();
        let w = self.w_complex(p);
        let mut out = DVector::from_element(self.n, Complex64::new(0.0, 0.0));
        out[0] += v[self.zeta()];
        out[0] += p.z[0] * v[self.delta()];
        for k in 0..m {
            out[1 + k] += w[k] * (v[self.delta()] / 2.0);
            let (a, b) = (v[self.xi(k + 1)], v[self.eta(k + 1)]);
            out[0] += 2.0 * i * w[k] * a + 2.0 * w[k] * b;
            out[1 + k] += Complex64::new(a, b);
        }
        out
    }

    /// Determinant of the vector fields of the basis of `v` evaluated at `p`.
    pub fn totally_real_defect(&self, p: &DomainPoint, v: &Subspace) -> Result<Complex64> {
        if v.dim() != self.n {
            return Err(Error::WrongSubspaceDimension { expected: self.n, got: v.dim() });
        }
        if v.ambient_dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.ambient_dim() });
        }
        let cols: Vec<DVector<Complex64>> = v.basis_vectors().iter().map(|b| self.vector_field(b, p)).collect();
        Ok(DMatrix::from_columns(&cols).determinant())
    }

    /// `(-1)^(n-1) (2z - 2i sum w_k^2)`.
    pub fn closed_form_defect(&self, p: &DomainPoint) -> Complex64 {
        let s: Complex64 = self.w_complex(p).iter().map(|w| w * w).sum();
        let sign = if self.n % 2 == 1 { 1.0 } else { -1.0 };
        (2.0 * p.z[0] - 2.0 * Complex64::i() * s) * sign
    }

    /// `span(delta, xi_1, ..., xi_{n-1})`.
    pub fn standard_subalgebra(&self) -> Subspace {
        let mut idx = vec![self.delta()];
        idx.extend((1..=self.m()).map(|k| self.xi(k)));
        Subspace::coordinate(self.dim(), &idx)
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("algebra element"));
        }
        Ok(())
    }

    /// An `n`-dimensional abelian subalgebra of `[b_n, b_n]` containing `x`.
    pub fn abelian_subalgebra_containing(&self, x: &DVector<f64>) -> Result<Subspace> {
        self.check_len(x)?;
        let xd = x[self.delta()];
        if xd.abs() > DELTA_TOL * x.norm() {
            return Err(Error::NotInNilradical(xd));
        }
        let mut vecs = vec![self.jalg.algebra.basis_vector(self.zeta())];
        for k in 1..=self.m() {
            let mut v = DVector::zeros(self.dim());
            v[self.xi(k)] = x[self.xi(k)];
            v[self.eta(k)] = x[self.eta(k)];
            if v.norm() == 0.0 {
                v[self.xi(k)] = 1.0;
            }
            vecs.push(v);
        }
        let sub = Subspace::span(self.dim(), &vecs);
        debug_assert_eq!(sub.dim(), self.n);
        Ok(sub)
    }

    /// `g` with `Ad(g) x` in `R delta`, built level by level.
    pub fn conjugate_into_a(&self, x: &DVector<f64>) -> Result<Conjugation> {
        self.check_len(x)?;
        let l = &self.jalg.algebra;
        let a = x[self.delta()];
        if !(a.abs() > DELTA_TOL * x.norm()) {
            return Err(Error::ZeroSemisimplePart);
        }
        let mut factors = Vec::new();
        // b_1: Ad(exp(c zeta))(a delta + b zeta) = a delta + (b + c a) zeta.
        let mut y = DVector::zeros(self.dim());
        y[self.zeta()] = -x[self.zeta()] / a;
        factors.push(y);
        // Level k: Ad(exp(c nu))(a delta + nu) = a delta + (1 + c a / 2) nu.
        for k in 1..=self.m() {
            let mut y = DVector::zeros(self.dim());
            y[self.xi(k)] = -2.0 * x[self.xi(k)] / a;
            y[self.eta(k)] = -2.0 * x[self.eta(k)] / a;
            if y.norm() > 0.0 {
                factors.push(y);
            }
        }
        factors.retain(|f| f.norm() > 0.0);
        let n = self.dim();
        let ad = factors.iter().fold(DMatrix::identity(n, n), |acc, f| l.big_ad(f) * acc);
        let image = &ad * x;
        let mut nil = image.clone();
        nil[self.delta()] = 0.0;
        let residual = nil.norm() / x.norm();
        if residual > 1e-8 {
            return Err(Error::UnsupportedConjugation(format!(
                "nilpotent part {residual:.2e} remains after conjugation"
            )));
        }
        Ok(Conjugation {
            conjugator: Conjugator { factors, ad },
            image,
            residual,
        })
    }

    /// The conjugator as an element of the acting group of the Siegel model.
    pub fn conjugator_element(&self, c: &Conjugator) -> Result<GroupElement> {
        let s = self.model.sigma;
        let mut g = self.model.identity();
        for f in &c.factors {
            let h = self.model.exp(&(f * s))?;
            g = self.model.product(&h, &g)?;
        }
        Ok(g)
    }

    /// Interior sample point: `z = x + i(1 + |w|^2)` with `x` in `[-2, 2]`, `|w| < 1`.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> DomainPoint {
        let d = 2 * self.m();
        let w = loop {
            let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            if v.norm_squared() < 1.0 {
                break v;
            }
        };
        let z = Complex64::new(rng.gen_range(-2.0..=2.0), 1.0 + w.norm_squared());
        DomainPoint {
            z: DVector::from_element(1, z),
            w,
        }
    }

    /// An `n`-dimensional subalgebra containing `x` whose orbits are totally real.
    pub fn totally_real_subalgebra_containing<R: Rng>(&self, x: &DVector<f64>, rng: &mut R) -> Result<TotallyRealWitness> {
        self.check_len(x)?;
        let n = self.dim();
        let (branch, sub, conj) = if x[self.delta()].abs() > DELTA_TOL * x.norm() {
            let c = self.conjugate_into_a(x)?.conjugator;
            let inv = c.ad.clone().try_inverse().ok_or(Error::NotInvertible { det: 0.0 })?;
            (Branch::Conjugated, self.standard_subalgebra().image(&inv), c)
        } else {
            let id = Conjugator {
                factors: vec![],
                ad: DMatrix::identity(n, n),
            };
            (Branch::Abelian, self.abelian_subalgebra_containing(x)?, id)
        };
        let closure = self.jalg.algebra.subalgebra_defect(&sub)?;
        let containment = sub.relative_residual(x);
        let mut min_abs: f64 = f64::INFINITY;
        for _ in 0..TOTALLY_REAL_SAMPLES {
            let p = self.sample_point(rng);
            min_abs = min_abs.min(self.totally_real_defect(&p, &sub)?.norm());
        }
        Ok(TotallyRealWitness {
            branch,
            subalgebra: sub,
            conjugator: conj,
            containment_residual: containment,
            closure_residual: closure,
            min_abs_defect: min_abs,
        })
    }
}

/// Standard vector fields as affine matrices on `(x, y, a_1.., b_1.., 1)`, `z = x + iy`.
pub fn table1_rep(jalg: &NormalJAlgebra) -> Result<AffineRep> {
    let n = jalg.dim() / 2;
    let m = n - 1;
    let nn = 2 + 2 * m + 1;
    let (x, y, one) = (0, 1, nn - 1);
    let a = |k: usize| 2 + k;
    let b = |k: usize| 2 + m + k;
    let mut mats = vec![DMatrix::zeros(nn, nn); 2 * n];
    // delta
    mats[0][(x, x)] = 1.0;
    mats[0][(y, y)] = 1.0;
    for k in 0..m {
        mats[0][(a(k), a(k))] = 0.5;
        mats[0][(b(k), b(k))] = 0.5;
    }
    // zeta
    mats[1][(x, one)] = 1.0;
    for k in 0..m {
        let xi = &mut mats[2 + k];
        xi[(x, b(k))] = -2.0;
        xi[(y, a(k))] = 2.0;
        xi[(a(k), one)] = 1.0;
        let eta = &mut mats[2 + m + k];
        eta[(x, a(k))] = 2.0;
        eta[(y, b(k))] = 2.0;
        eta[(b(k), one)] = 1.0;
    }
    AffineRep::new(jalg.algebra.clone(), mats, -1.0)
}

/// Cayley transform from the unit ball to `H_n`.
pub fn cayley_to_siegel(u: &[Complex64]) -> Result<DomainPoint> {
    let (u0, rest) = u.split_first().ok_or_else(|| Error::input("empty ball point"))?;
    let d = Complex64::new(1.0, 0.0) - u0;
    if d.norm() == 0.0 {
        return Err(Error::input("Cayley transform is singular at u_0 = 1"));
    }
    let z = Complex64::i() * (1.0 + u0) / d;
    let w: Vec<Complex64> = rest.iter().map(|c| c / d).collect();
    let mut wr: Vec<f64> = w.iter().map(|c| c.re).collect();
    wr.extend(w.iter().map(|c| c.im));
    Ok(DomainPoint::new(vec![z], wr))
}

/// Inverse Cayley transform from `H_n` to the unit ball.
pub fn cayley_to_ball(p: &DomainPoint) -> Result<Vec<Complex64>> {
    let i = Complex64::i();
    let z = p.z[0];
    let d = z + i;
    if d.norm() == 0.0 {
        return Err(Error::input("Cayley transform is singular at z = -i"));
    }
    let m = p.w.len() / 2;
    let mut out = vec![(z - i) / d];
    out.extend((0..m).map(|k| 2.0 * i * Complex64::new(p.w[k], p.w[m + k]) / d));
    Ok(out)
}
