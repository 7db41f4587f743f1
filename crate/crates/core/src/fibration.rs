//! The rank-one j-invariant ideal attached to the last fundamental root, the
//! quotient algebra, and the equivariant projection between Siegel domains.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jalgebra::{fine_structure, presets, NormalJAlgebra, RootKind, JALG_TOL};
use crate::linalg::Subspace;
use crate::siegel::{build_model, DomainPoint, GroupElement, SiegelModel};
use crate::{Error, Result};

/// Structural checks on the ideal `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealReport {
    pub rank: usize,
    pub ideal_defect: f64,
    pub j_invariance_defect: f64,
    /// Distance between the centre of `[b, b]` and the line of the last fundamental root.
    pub center_residual: f64,
    /// Normalized determinant of the bracket pairing on `b_{-1/2}`.
    pub symplectic_det: f64,
    /// Bracket and `j` mismatch between `b` in the constructed basis and `b_m`.
    pub iso_residual: f64,
}

#[derive(Debug, Clone)]
pub struct FibrationStep {
    pub domain: SiegelModel,
    pub quotient: SiegelModel,
    pub b_ideal: Subspace,
    pub s_prime_space: Subspace,
    /// Orthogonal projection onto `s'` along `b` (ambient matrix).
    pub proj: DMatrix<f64>,
    /// `s'`-coordinates of `pi(x)`.
    pub coord: DMatrix<f64>,
    /// Complex dimension of the fibre.
    pub fiber_dim: usize,
    /// Columns: images of `(delta, zeta, xi_k.., eta_k..)` of `b_m` in `b`.
    pub fiber_basis: DMatrix<f64>,
    pub report: IdealReport,
    /// `|pi [x,y] - [pi x, pi y]|` and `|pi j - j' pi|` on basis pairs.
    pub homomorphism_defect: f64,
    pub j_commutation_defect: f64,
    z_map: DMatrix<f64>,
    w_map: DMatrix<f64>,
}

fn pivot_labels(v: &Subspace, labels: &[String]) -> Vec<String> {
    v.basis_vectors()
        .iter()
        .map(|c| {
            let i = c.iter().position(|x| (x - 1.0).abs() < 1e-12).unwrap_or_else(|| c.iamax());
            labels[i].clone()
        })
        .collect()
}

/// Splits off the ideal of the last fundamental root.
pub fn split_last_root(model: &SiegelModel) -> Result<FibrationStep> {
    let jalg = &model.jalg;
    let fs = &model.fs;
    let l = &jalg.algebra;
    let n = jalg.dim();
    let r = fs.rank;
    if r == 0 {
        return Err(Error::RootPatternViolation("rank 0 algebra has no fibration".into()));
    }
    let last = r - 1;
    let mut b_parts: Vec<DVector<f64>> = vec![fs.eta[last].clone()];
    let mut s_parts: Vec<DVector<f64>> = fs.eta[..last].to_vec();
    for root in &fs.roots {
        if root.kind.involves(last) {
            b_parts.extend(root.space.basis_vectors());
        } else {
            s_parts.extend(root.space.basis_vectors());
        }
    }
    let b = Subspace::span(n, &b_parts);
    let sp = Subspace::span(n, &s_parts);
    if b.dim() + sp.dim() != n {
        return Err(Error::RootPatternViolation("ideal and quotient do not span the algebra".into()));
    }
    let ideal_defect = l.ideal_defect(&b)?;
    let jb = b.image(&jalg.j);
    let j_inv = b.basis_vectors().iter().map(|x| b.relative_residual(&(&jalg.j * x))).fold(0.0, f64::max);
    if ideal_defect > 1e-8 || j_inv > 1e-8 || jb.dim() != b.dim() {
        return Err(Error::HeisenbergCheckFailed(format!(
            "b is not a j-invariant ideal (ideal {ideal_defect:.2e}, j {j_inv:.2e})"
        )));
    }

    // pi = B (B^T G B)^{-1} B^T G projects onto s' with kernel b.
    let g = jalg.gram();
    let bm = sp.basis();
    let proj = if sp.dim() == 0 {
        DMatrix::zeros(n, n)
    } else {
        let inner = (bm.transpose() * &g * bm).try_inverse().ok_or(Error::DegenerateDual)?;
        bm * inner * bm.transpose() * &g
    };
    let coord = sp.coordinate_map() * &proj;
    let ortho = b.basis_vectors().iter().map(|x| (&proj * x).norm() / x.norm()).fold(0.0, f64::max);
    if ortho > 1e-8 {
        return Err(Error::RootPatternViolation(format!("b is not orthogonal to s' (residual {ortho:.2e})")));
    }

    let labels = pivot_labels(&sp, jalg.labels());
    let s_prime = if sp.dim() == 0 {
        NormalJAlgebra::empty()
    } else {
        jalg.restrict(&sp, labels)?.validated(JALG_TOL)?
    };
    let quotient = build_model(&s_prime)?;
    if sp.dim() > 0 && quotient.sigma != model.sigma {
        return Err(Error::RootPatternViolation("quotient picked a different orientation".into()));
    }

    let mut hom: f64 = 0.0;
    let mut jc: f64 = 0.0;
    for i in 0..n {
        let x = l.basis_vector(i);
        let px = &coord * &x;
        jc = jc.max((&coord * (&jalg.j * &x) - &s_prime.j * &px).amax());
        for k in 0..n {
            let y = l.basis_vector(k);
            let lhs = &coord * l.br(&x, &y);
            let rhs = s_prime.algebra.br(&px, &(&coord * &y));
            hom = hom.max((lhs - rhs).amax());
        }
    }

    let (fiber_basis, report) = fiber_isomorphism(model, &b, last)?;
    let z_map = quotient.v_space().coordinate_map() * &coord * model.v_space().basis();
    let w_map = quotient.w_space().coordinate_map() * &coord * model.w_space().basis();
    Ok(FibrationStep {
        domain: model.clone(),
        quotient,
        b_ideal: b,
        s_prime_space: sp,
        proj,
        coord,
        fiber_dim: fiber_basis.ncols() / 2,
        fiber_basis,
        report: IdealReport {
            ideal_defect,
            j_invariance_defect: j_inv,
            ..report
        },
        homomorphism_defect: hom,
        j_commutation_defect: jc,
        z_map,
        w_map,
    })
}

/// Builds a basis of `b` realizing the structure constants and `j` of `b_m`,
/// and checks rank, the Heisenberg centre and the symplectic pairing.
fn fiber_isomorphism(model: &SiegelModel, b: &Subspace, last: usize) -> Result<(DMatrix<f64>, IdealReport)> {
    let jalg = &model.jalg;
    let l = &jalg.algebra;
    let fs = &model.fs;
    let n = jalg.dim();
    let delta_b = fs.eta[last].clone();
    let zeta_b = fs.xi[last].clone();
    let zn2 = zeta_b.norm_squared();
    let coeff = |x: &DVector<f64>, y: &DVector<f64>| l.br(x, y).dot(&zeta_b) / zn2;

    // b_{-1/2}: half-weight space of ad(delta_b) inside b.
    let mut half_parts = Vec::new();
    for root in &fs.roots {
        match root.kind {
            RootKind::Half(k) if k == last => half_parts.extend(root.space.basis_vectors()),
            RootKind::Sum(_, k) | RootKind::Diff(_, k) if k == last => half_parts.extend(root.space.basis_vectors()),
            _ => {}
        }
    }
    let half = Subspace::span(n, &half_parts);
    if half.dim() % 2 != 0 {
        return Err(Error::HeisenbergCheckFailed("odd-dimensional half-weight space".into()));
    }
    let hb = half.basis_vectors();
    let hd = hb.len();
    let pairing = DMatrix::from_fn(hd, hd, |a, c| coeff(&hb[a], &hb[c]));
    let symplectic_det = if hd == 0 {
        1.0
    } else {
        let s = pairing.amax().max(f64::MIN_POSITIVE);
        (&pairing / s).determinant().abs()
    };

    // Centre of [b, b] must be the line through zeta_b.
    let derived = l.bracket_space(b, b);
    let db = derived.basis_vectors();
    let center = if db.is_empty() {
        Subspace::zero(n)
    } else {
        let rows = db.len() * n;
        let mut m = DMatrix::zeros(rows, db.len());
        for (c, x) in db.iter().enumerate() {
            for (k, y) in db.iter().enumerate() {
                m.view_mut((k * n, c), (n, 1)).copy_from(&l.br(x, y));
            }
        }
        let ker = crate::linalg::null_space(&m, 1e-10);
        let vecs: Vec<DVector<f64>> = ker.column_iter().map(|c| derived.basis() * c).collect();
        Subspace::span(n, &vecs)
    };
    let line = Subspace::span(n, &[zeta_b.clone()]);
    let center_residual = if center.dim() == 1 {
        center.relative_residual(&zeta_b)
    } else {
        1.0
    };
    if derived.dim() != hd + 1 || center_residual > 1e-8 || !derived.contains_subspace(&line, 1e-8) {
        return Err(Error::HeisenbergCheckFailed(format!(
            "[b,b] has dimension {} with centre of dimension {}",
            derived.dim(),
            center.dim()
        )));
    }
    if symplectic_det < 1e-8 {
        return Err(Error::HeisenbergCheckFailed(format!("degenerate pairing (det {symplectic_det:.2e})")));
    }

    // Complex Gram-Schmidt for g(u, v) = B(u, jv) / 4.
    let g = |u: &DVector<f64>, v: &DVector<f64>| coeff(u, &(&jalg.j * v)) / 4.0;
    let mut us: Vec<DVector<f64>> = Vec::new();
    for v in &hb {
        let mut x = v.clone();
        for _ in 0..2 {
            for u in &us {
                let ju = &jalg.j * u;
                x -= u * g(&x, u) + &ju * g(&x, &ju);
            }
        }
        let nx = g(&x, &x);
        if nx > 1e-10 * g(v, v).abs().max(1e-300) {
            us.push(x / nx.sqrt());
        }
        if us.len() * 2 == hd {
            break;
        }
    }
    if us.len() * 2 != hd {
        return Err(Error::HeisenbergCheckFailed("pairing is not positive on the half-weight space".into()));
    }
    let m = us.len() + 1;
    let mut cols = vec![delta_b, zeta_b];
    cols.extend(us.iter().cloned());
    cols.extend(us.iter().map(|u| &jalg.j * u));
    let q = DMatrix::from_columns(&cols);

    let ball = presets::ball(m)?;
    let mut iso: f64 = 0.0;
    let scale = q.amax().max(1.0);
    for a in 0..2 * m {
        let qa = q.column(a).into_owned();
        iso = iso.max((&jalg.j * &qa - &q * ball.j.column(a)).amax() / scale);
        for c in 0..2 * m {
            let lhs = l.br(&qa, &q.column(c).into_owned());
            let rhs = &q * ball.algebra.br(&ball.algebra.basis_vector(a), &ball.algebra.basis_vector(c));
            iso = iso.max((lhs - rhs).amax() / scale);
        }
    }
    if iso > 1e-8 {
        return Err(Error::HeisenbergCheckFailed(format!("no isomorphism onto b_{m} (residual {iso:.2e})")));
    }
    let sub = Subspace::from_basis(q.clone())?;
    let fiber = jalg.restrict(&sub, ball.labels().to_vec())?;
    let rank = fine_structure(&fiber)?.rank;
    if rank != 1 {
        return Err(Error::HeisenbergCheckFailed(format!("b has rank {rank}")));
    }
    Ok((
        q,
        IdealReport {
            rank,
            ideal_defect: 0.0,
            j_invariance_defect: 0.0,
            center_residual,
            symplectic_det,
            iso_residual: iso,
        },
    ))
}

impl FibrationStep {
    /// Projection of real point coordinates, without domain checks.
    pub fn project_unchecked(&self, p: &DomainPoint) -> DomainPoint {
        let zr = &self.z_map * p.z.map(|c| c.re);
        let zi = &self.z_map * p.z.map(|c| c.im);
        DomainPoint {
            z: DVector::from_fn(zr.len(), |k, _| num_complex::Complex64::new(zr[k], zi[k])),
            w: &self.w_map * &p.w,
        }
    }

    pub fn project_point(&self, p: &DomainPoint) -> Result<DomainPoint> {
        let cm = self.domain.contains(p)?;
        if !cm.inside {
            return Err(Error::NotInDomain { residual: cm.residual });
        }
        let q = self.project_unchecked(p);
        let cq = self.quotient.contains(&q)?;
        if !cq.inside {
            return Err(Error::ImageOutsideDomain { residual: cq.residual });
        }
        Ok(q)
    }

    /// Image of a group element in the quotient group.
    pub fn push_group(&self, g: &GroupElement) -> Result<GroupElement> {
        self.quotient.element(&(&self.coord * &g.x_minus), &(&self.coord * &g.x_zero))
    }

    /// `pi(x)` in `s'`-coordinates.
    pub fn push_algebra(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.coord * x
    }

    /// Distance from `x` to the ideal, relative to `|x|`.
    pub fn quotient_fraction(&self, x: &DVector<f64>) -> f64 {
        let nx = x.norm();
        if nx == 0.0 {
            0.0
        } else {
            (&self.proj * x).norm() / nx
        }
    }
}

/// Largest `|pi(s . z0) - pi(s) . z0'|` over `samples` random group elements.
pub fn check_equivariance(step: &FibrationStep, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs: Vec<GroupElement> = (0..samples).map(|_| step.domain.random_element(&mut rng, 1.0)).collect();
    gs.iter()
        .map(|g| {
            let p = step.domain.act(g, &step.domain.z0);
            let lhs = step.project_unchecked(&p);
            let rhs = match step.push_group(g) {
                Ok(h) => step.quotient.act(&h, &step.quotient.z0),
                Err(_) => return f64::INFINITY,
            };
            lhs.distance(&rhs) / (1.0 + lhs.norm())
        })
        .fold(0.0, f64::max)
}

/// Iterates `split_last_root` down to rank zero.
pub fn tower(jalg: &NormalJAlgebra) -> Result<Vec<FibrationStep>> {
    let mut model = build_model(jalg)?;
    let mut steps = Vec::new();
    while model.fs.rank > 0 {
        let step = split_last_root(&model)?;
        if step.quotient.fs.rank + 1 != model.fs.rank {
            return Err(Error::RootPatternViolation("rank did not drop by one".into()));
        }
        model = step.quotient.clone();
        steps.push(step);
    }
    Ok(steps)
}
