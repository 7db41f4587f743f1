//! Real multiplicative Jordan-Chevalley decomposition `A = e h u`.
//!
//! Eigenvalues are clustered, the semisimple part is obtained by Newton's
//! iteration on the square-free polynomial of the cluster centres, and the
//! elliptic and hyperbolic parts come from its spectral projectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clustering levels relative to the spectral radius, tried in order.
const CLUSTER_LEVELS: [f64; 4] = [1e-7, 1e-6, 1e-5, 1e-4];
/// Gaps inside `(level, GAP_CEILING * radius]` make a level unusable.
const GAP_CEILING: f64 = 1e-3;
/// Largest denominator accepted for rational rotation angles.
pub const MAX_DENOMINATOR: u64 = 97;
pub const ANGLE_TOL: f64 = 1e-9;
const ANGLE_IRRATIONAL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanParts {
    pub elliptic: DMatrix<f64>,
    pub hyperbolic: DMatrix<f64>,
    pub unipotent: DMatrix<f64>,
    pub semisimple: DMatrix<f64>,
    pub nilpotent: DMatrix<f64>,
    /// Cluster centres `(re, im)` of the spectrum.
    pub eigenvalues: Vec<[f64; 2]>,
    /// Real logarithm of the hyperbolic part.
    pub log_hyperbolic: DMatrix<f64>,
    /// `|e h u - A| / |A|`.
    pub residual: f64,
}

impl JordanParts {
    /// Largest pairwise commutator norm among `e`, `h`, `u`.
    pub fn commutator_defect(&self) -> f64 {
        let c = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a * b - b * a).norm();
        c(&self.elliptic, &self.hyperbolic)
            .max(c(&self.elliptic, &self.unipotent))
            .max(c(&self.hyperbolic, &self.unipotent))
    }

    /// `h u`, the automorphism with trivial elliptic part.
    pub fn hyperbolic_unipotent(&self) -> DMatrix<f64> {
        &self.hyperbolic * &self.unipotent
    }

    /// Real logarithm of `h u` (`log h + log u`, which commute).
    pub fn log_hyperbolic_unipotent(&self) -> DMatrix<f64> {
        &self.log_hyperbolic + log_unipotent(&self.unipotent)
    }

    fn cluster_centres(&self) -> Vec<Complex64> {
        self.eigenvalues.iter().map(|c| Complex64::new(c[0], c[1])).collect()
    }
}

/// `log u` by the terminating series for unipotent `u`.
pub fn log_unipotent(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let x = u - DMatrix::identity(n, n);
    let mut out = DMatrix::zeros(n, n);
    let mut pow = x.clone();
    for k in 1..=n {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        out += &pow * (sign / k as f64);
        pow = &pow * &x;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Identity,
    Elliptic,
    Hyperbolic,
    Unipotent,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Discreteness {
    InfiniteDiscrete,
    Finite { order: u64 },
    IndiscreteClosure,
    Undecided,
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn shifted(s: &DMatrix<Complex64>, mu: Complex64) -> DMatrix<Complex64> {
    let n = s.nrows();
    s - DMatrix::<Complex64>::identity(n, n) * mu
}

fn product_except(s: &DMatrix<Complex64>, mus: &[Complex64], skip: Option<usize>) -> DMatrix<Complex64> {
    let n = s.nrows();
    let mut p = DMatrix::<Complex64>::identity(n, n);
    for (l, &m) in mus.iter().enumerate() {
        if Some(l) != skip {
            p = p * shifted(s, m);
        }
    }
    p
}

/// Single-linkage clusters of the spectrum at the first admissible level.
fn cluster(eigs: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = eigs.len();
    let radius = eigs.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    // Minimum spanning tree by Prim's algorithm.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    if n > 0 {
        best[0] = 0.0;
    }
    for _ in 0..n {
        let u = (0..n).filter(|&i| !in_tree[i]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            edges.push((parent[u], u, best[u]));
        }
        for v in 0..n {
            let d = (eigs[u] - eigs[v]).norm();
            if !in_tree[v] && d < best[v] {
                best[v] = d;
                parent[v] = u;
            }
        }
    }
    let ceiling = GAP_CEILING * radius;
    let level = CLUSTER_LEVELS.iter().map(|l| l * radius).find(|&tau| !edges.iter().any(|e| e.2 > tau && e.2 <= ceiling));
    let Some(tau) = level else {
        let gap = edges.iter().map(|e| e.2).filter(|&d| d > CLUSTER_LEVELS[3] * radius && d <= ceiling).fold(f64::INFINITY, f64::min);
        return Err(Error::ClusterAmbiguous { gap: gap / radius });
    };
    // Union-find over edges within the level.
    let mut root: Vec<usize> = (0..n).collect();
    fn find(r: &mut Vec<usize>, i: usize) -> usize {
        let mut i = i;
        while r[i] != i {
            r[i] = r[r[i]];
            i = r[i];
        }
        i
    }
    for &(a, b, d) in &edges {
        if d <= tau {
            let (ra, rb) = (find(&mut root, a), find(&mut root, b));
            root[ra] = rb;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Complex64>> = Default::default();
    for i in 0..n {
        let r = find(&mut root, i);
        groups.entry(r).or_default().push(eigs[i]);
    }
    let mut centres: Vec<Complex64> = groups
        .values()
        .map(|g| g.iter().sum::<Complex64>() / g.len() as f64)
        .map(|c| if c.im.abs() <= tau { Complex64::new(c.re, 0.0) } else { c })
        .collect();
    // Conjugate clusters get exactly conjugate centres.
    for i in 0..centres.len() {
        if centres[i].im < 0.0 {
            if let Some(k) = (0..centres.len())
                .filter(|&k| centres[k].im > 0.0)
                .min_by(|&a, &b| (centres[a] - centres[i].conj()).norm().total_cmp(&(centres[b] - centres[i].conj()).norm()))
            {
                centres[i] = centres[k].conj();
            }
        }
    }
    centres.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(centres)
}

/// Multiplicative Jordan-Chevalley decomposition of an invertible real matrix.
pub fn jordan_decompose(a: &DMatrix<f64>, tol: f64) -> Result<JordanParts> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let det = a.determinant();
    if !(det.abs() > tol) {
        return Err(Error::NotInvertible { det: det.abs() });
    }
    let eigs: Vec<Complex64> = crate::linalg::eigenvalues(a).iter().cloned().collect();
    let mus = cluster(&eigs)?;

    // Newton iteration S <- S - p(S) p'(S)^{-1} converges to the semisimple part.
    let anorm = a.norm();
    let mut s = a.clone();
    for _ in 0..64 {
        let sc = to_complex(&s);
        let p = product_except(&sc, &mus, None);
        let mut dp = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..mus.len() {
            dp += product_except(&sc, &mus, Some(j));
        }
        let Some(dpi) = dp.try_inverse() else {
            return Err(Error::ClusterAmbiguous { gap: 0.0 });
        };
        let step = (p * dpi).map(|c| c.re);
        s -= &step;
        if step.norm() <= 1e-15 * anorm {
            break;
        }
    }

    let sc = to_complex(&s);
    let mut hc = DMatrix::<Complex64>::zeros(n, n);
    let mut ec = DMatrix::<Complex64>::zeros(n, n);
    let mut lc = DMatrix::<Complex64>::zeros(n, n);
    for (j, &mu) in mus.iter().enumerate() {
        let mut pj = product_except(&sc, &mus, Some(j));
        for (l, &ml) in mus.iter().enumerate() {
            if l != j {
                pj /= mu - ml;
            }
        }
        hc += &pj * Complex64::new(mu.norm(), 0.0);
        ec += &pj * (mu / mu.norm());
        lc += &pj * Complex64::new(mu.norm().ln(), 0.0);
    }
    let hyperbolic = hc.map(|c| c.re);
    let elliptic = ec.map(|c| c.re);
    let log_hyperbolic = lc.map(|c| c.re);
    let nilpotent = a - &s;
    let sinv = s.clone().try_inverse().ok_or(Error::NotInvertible { det: 0.0 })?;
    let unipotent = DMatrix::identity(n, n) + sinv * &nilpotent;
    let residual = (&elliptic * &hyperbolic * &unipotent - a).norm() / anorm;
    Ok(JordanParts {
        elliptic,
        hyperbolic,
        unipotent,
        semisimple: s,
        nilpotent,
        eigenvalues: mus.iter().map(|c| [c.re, c.im]).collect(),
        log_hyperbolic,
        residual,
    })
}

fn nontrivial(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    (m - DMatrix::<f64>::identity(n, n)).amax() > tol
}

pub fn classify(a: &DMatrix<f64>, tol: f64) -> Result<(Kind, JordanParts)> {
    let parts = jordan_decompose(a, tol)?;
    let flags = (
        nontrivial(&parts.elliptic, tol),
        nontrivial(&parts.hyperbolic, tol),
        nontrivial(&parts.unipotent, tol),
    );
    let kind = match flags {
        (false, false, false) => Kind::Identity,
        (true, false, false) => Kind::Elliptic,
        (false, true, false) => Kind::Hyperbolic,
        (false, false, true) => Kind::Unipotent,
        _ => Kind::Mixed,
    };
    Ok((kind, parts))
}

/// Best approximation `p/q` with `q <= MAX_DENOMINATOR`; returns `(q, |x - p/q|)`.
fn best_rational(x: f64) -> (u64, f64) {
    (1..=MAX_DENOMINATOR)
        .map(|q| {
            let p = (x * q as f64).round();
            (q, (x - p / q as f64).abs())
        })
        .fold((1, f64::INFINITY), |best, c| if c.1 < best.1 - 1e-15 { c } else { best })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Whether `<A>` is discrete, finite, or has non-discrete closure.
pub fn cyclic_discreteness(parts: &JordanParts, tol: f64) -> Discreteness {
    if nontrivial(&parts.hyperbolic_unipotent(), tol) {
        return Discreteness::InfiniteDiscrete;
    }
    let mut order = 1u64;
    let mut undecided = false;
    for mu in parts.cluster_centres() {
        let frac = mu.arg() / std::f64::consts::TAU;
        let (q, err) = best_rational(frac);
        if err < ANGLE_TOL {
            order = order / gcd(order, q) * q;
        } else if err > ANGLE_IRRATIONAL {
            return Discreteness::IndiscreteClosure;
        } else {
            undecided = true;
        }
    }
    if undecided {
        Discreteness::Undecided
    } else {
        Discreteness::Finite { order }
    }
}

/// Rotation by `theta` in the plane.
pub fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

/// Eigenvalues of a real matrix as complex numbers.
pub fn spectrum(m: &DMatrix<f64>) -> DVector<Complex64> {
    crate::linalg::eigenvalues(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TOL: f64 = 1e-8;

    fn m(rows: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, v.len() / rows, v)
    }

    #[test]
    fn identity_splits_trivially() {
        let i = DMatrix::<f64>::identity(3, 3);
        let p = jordan_decompose(&i, TOL).unwrap();
        assert_relative_eq!(p.elliptic, i, epsilon = 1e-12);
        assert_relative_eq!(p.hyperbolic, i, epsilon = 1e-12);
        assert_relative_eq!(p.unipotent, i, epsilon = 1e-12);
        assert_eq!(classify(&i, TOL).unwrap().0, Kind::Identity);
    }

    #[test]
    fn jordan_block() {
        let p = jordan_decompose(&m(2, &[2.0, 1.0, 0.0, 2.0]), TOL).unwrap();
        assert_relative_eq!(p.elliptic, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(p.hyperbolic, DMatrix::identity(2, 2) * 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.unipotent, m(2, &[1.0, 0.5, 0.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn scaled_rotation() {
        let p = jordan_decompose(&m(2, &[0.0, -2.0, 2.0, 0.0]), TOL).unwrap();
        assert_relative_eq!(p.elliptic, m(2, &[0.0, -1.0, 1.0, 0.0]), epsilon = 1e-12);
        assert_relative_eq!(p.hyperbolic, DMatrix::identity(2, 2) * 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.unipotent, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn classification_labels() {
        assert_eq!(classify(&m(2, &[2.0, 0.0, 0.0, 0.5]), TOL).unwrap().0, Kind::Hyperbolic);
        assert_eq!(classify(&m(2, &[1.0, 1.0, 0.0, 1.0]), TOL).unwrap().0, Kind::Unipotent);
        assert_eq!(classify(&rotation(1.0), TOL).unwrap().0, Kind::Elliptic);
        assert_eq!(classify(&m(2, &[2.0, 1.0, 0.0, 2.0]), TOL).unwrap().0, Kind::Mixed);
        assert!(matches!(classify(&m(2, &[1.0, 2.0, 2.0, 4.0]), TOL), Err(Error::NotInvertible { .. })));
    }

    #[test]
    fn discreteness() {
        let (_, p) = classify(&rotation(std::f64::consts::TAU / 3.0), TOL).unwrap();
        assert_eq!(cyclic_discreteness(&p, TOL), Discreteness::Finite { order: 3 });
        let (_, p) = classify(&rotation(1.0), TOL).unwrap();
        assert_eq!(cyclic_discreteness(&p, TOL), Discreteness::IndiscreteClosure);
        let e = std::f64::consts::E;
        let (_, p) = classify(&m(2, &[e, 0.0, 0.0, e.sqrt()]), TOL).unwrap();
        assert_eq!(cyclic_discreteness(&p, TOL), Discreteness::InfiniteDiscrete);
        let (_, p) = classify(&rotation(std::f64::consts::TAU / 3.0 + 1e-7), TOL).unwrap();
        assert_eq!(cyclic_discreteness(&p, TOL), Discreteness::Undecided);
    }

    #[test]
    fn log_of_hyperbolic_unipotent_part() {
        let a = m(3, &[2.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.5]);
        let p = jordan_decompose(&a, TOL).unwrap();
        let back = p.log_hyperbolic_unipotent().exp();
        assert_relative_eq!(back, a, epsilon = 1e-10);
    }

    #[test]
    fn nearly_merged_clusters_are_ambiguous() {
        let a = m(2, &[1.0, 0.0, 0.0, 1.0 + 5e-4]);
        assert!(matches!(jordan_decompose(&a, TOL), Err(Error::ClusterAmbiguous { .. })));
    }
}
