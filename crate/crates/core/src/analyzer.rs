//! Replays the proof that `D / <phi>` is Stein for one automorphism `phi` and
//! records every step with its numeric witness.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ball::{BallAlgebra, Branch, TOTALLY_REAL_SAMPLES};
use crate::fibration::{check_equivariance, split_last_root, FibrationStep};
use crate::io::{load_domain, matrix_from_rows, matrix_to_rows, read_json, AffineFile};
use crate::jalgebra::{NormalJAlgebra, JALG_TOL};
use crate::jordan::{classify, cyclic_discreteness, Discreteness, JordanParts};
use crate::linalg::Subspace;
use crate::siegel::{build_model, SiegelModel};
use crate::{Error, Result};

pub const CERT_VERSION: u32 = 1;
/// `log phi'` lies in the fibre ideal when its quotient part is below this fraction.
pub const FIBER_TOL: f64 = 1e-8;
/// Quotient fractions in `[FIBER_TOL, UNDECIDED_TOL]` are not classified.
pub const UNDECIDED_TOL: f64 = 1e-5;
pub const JORDAN_TOL: f64 = 1e-8;
pub const CONJUGATION_TOL: f64 = 1e-8;
pub const EQUIVARIANCE_TOL: f64 = 1e-8;
pub const WITNESS_TOL: f64 = 1e-9;
/// Smallest admissible `|det|` of the totally-real test.
pub const MIN_TOTALLY_REAL_DET: f64 = 1e-6;
pub const VERIFY_FACTOR: f64 = 10.0;
const AFFINE_SCREEN_SAMPLES: usize = 20;

/// `phi` as exponential coordinates in `s` or as an affine map of the Siegel domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSpec {
    Exp(BTreeMap<String, f64>),
    Affine(AffineFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomorphismInput {
    pub domain: String,
    pub phi: PhiSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyzeConfig {
    pub seed: u64,
    pub samples: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { seed: 42, samples: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    JordanSplit,
    Discreteness,
    EllipticReduction,
    #[serde(rename = "conjugation_into_S")]
    ConjugationIntoS,
    TowerDescend,
    FiberCase,
    BaseCase,
    Citation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub citation: String,
    pub payload: Value,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    SteinCertified,
    SteinByCitation,
    NotApplicable,
    Undecided,
}

impl Conclusion {
    pub fn exit_code(self) -> i32 {
        match self {
            Conclusion::SteinCertified | Conclusion::SteinByCitation => 0,
            Conclusion::NotApplicable => 2,
            Conclusion::Undecided => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinCertificate {
    pub version: u32,
    pub domain: String,
    pub phi: PhiSpec,
    pub steps: Vec<Step>,
    pub conclusion: Conclusion,
    pub assumptions: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

mod cite {
    pub const JORDAN: &str = "Jordan-Chevalley decomposition phi = phi_e phi_h phi_u into commuting elliptic, hyperbolic and unipotent parts";
    pub const FINITE: &str = "classical: the quotient of a Stein space by a finite group is Stein";
    pub const DISCRETE: &str = "<phi> is discrete iff phi_h phi_u != id or phi_e has finite order";
    pub const REDUCTION: &str = "Reduction: D/<phi> is Stein if D/<phi_h phi_u> is (trivial elliptic part)";
    pub const CONJUGACY: &str = "Conjugacy: an automorphism with trivial elliptic part is conjugate into the split solvable group S";
    pub const DESCEND: &str = "Geometric realization: pi: D -> D' is S-equivariant with ball fibres; Matsushima-Morimoto (Theorem 6): a holomorphic fibre bundle with Stein base and Stein fibre is Stein";
    pub const FIBER: &str = "Gamma lies in the normal subgroup B_m; a subgroup of B_m containing Gamma with totally real orbits makes the fibre quotient Stein (principal bundle corollary, embedding of ball quotients)";
    pub const BASE: &str = "unit disc: every quotient of the disc by a discrete cyclic group is an open Riemann surface, hence Stein";
    pub const TRIVIAL_BASE: &str = "zero-dimensional domain: the claim is trivial";
}

const ASSUMPTIONS: [&str; 3] = [
    "phi lies in the identity component of Aut(D) and acts affinely on the Siegel realization",
    "the Oka principle and the Matsushima-Morimoto theorem are cited, not computed",
    "Stein conclusions certify the hypotheses of the structure theorem numerically; no exhaustion function is constructed",
];

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

fn rel(num: f64, den: f64) -> f64 {
    num / den.max(1.0)
}

/// Parses `exp:<linear combination>` or `affine:<path>`.
pub fn parse_phi(arg: &str) -> Result<PhiSpec> {
    if let Some(expr) = arg.strip_prefix("exp:") {
        Ok(PhiSpec::Exp(parse_combination(expr)?))
    } else if let Some(path) = arg.strip_prefix("affine:") {
        Ok(PhiSpec::Affine(read_json(path)?))
    } else {
        Err(Error::input(format!("phi must start with `exp:` or `affine:`, got `{arg}`")))
    }
}

/// Parses `0.7*delta - zeta + 2*xi1` into coefficients by label.
pub fn parse_combination(expr: &str) -> Result<BTreeMap<String, f64>> {
    let s: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(Error::input("empty linear combination"));
    }
    let mut terms: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        let exponent_sign = {
            let b = cur.as_bytes();
            b.len() >= 2
                && matches!(b[b.len() - 1], b'e' | b'E')
                && cur[..cur.len() - 1].trim_start_matches(['+', '-']).chars().all(|d| d.is_ascii_digit() || d == '.')
        };
        if (c == '+' || c == '-') && !cur.is_empty() && !exponent_sign {
            terms.push(std::mem::take(&mut cur));
        }
        cur.push(c);
    }
    terms.push(cur);
    let mut out = BTreeMap::new();
    for t in terms {
        let (sign, body) = match t.as_bytes()[0] {
            b'-' => (-1.0, &t[1..]),
            b'+' => (1.0, &t[1..]),
            _ => (1.0, &t[..]),
        };
        let (coef, label) = match body.split_once('*') {
            Some((c, l)) => (c.parse::<f64>().map_err(|_| Error::input(format!("bad coefficient `{c}`")))?, l),
            None => (1.0, body),
        };
        if label.is_empty() || !coef.is_finite() {
            return Err(Error::input(format!("bad term `{t}`")));
        }
        *out.entry(label.to_string()).or_insert(0.0) += sign * coef;
    }
    Ok(out)
}

fn coords_from_map(jalg: &NormalJAlgebra, map: &BTreeMap<String, f64>) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(jalg.dim());
    for (label, v) in map {
        let i = jalg
            .algebra
            .index_of(label)
            .ok_or_else(|| Error::input(format!("unknown basis label `{label}`; known: {}", jalg.labels().join(", "))))?;
        x[i] += v;
    }
    Ok(x)
}

/// Homogeneous affine matrix of `phi` on `(Re z, Im z, w, 1)`.
pub fn phi_matrix(model: &SiegelModel, phi: &PhiSpec) -> Result<DMatrix<f64>> {
    match phi {
        PhiSpec::Exp(map) => Ok(model.exp(&coords_from_map(&model.jalg, map)?)?.affine().clone()),
        PhiSpec::Affine(f) => {
            let m = f.to_homogeneous()?;
            if m.nrows() != model.real_dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.real_dim() - 1,
                    got: m.nrows() - 1,
                });
            }
            Ok(m)
        }
    }
}

/// Checks that the affine map keeps sampled interior points inside.
fn screen_affine(model: &SiegelModel, m: &DMatrix<f64>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..AFFINE_SCREEN_SAMPLES {
        let p = model.random_point(&mut rng, 1.0);
        let q = model.apply_affine(m, &p);
        if !model.contains(&q)?.inside {
            return Err(Error::input("affine map sends a sampled domain point outside the domain"));
        }
    }
    Ok(())
}

fn step(kind: StepKind, citation: &str, payload: Value, residual: f64, tolerance: f64) -> Step {
    Step {
        kind,
        citation: citation.to_string(),
        payload,
        residual,
        tolerance,
    }
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    json!(matrix_to_rows(m))
}

fn spectrum_residuals(parts: &JordanParts) -> f64 {
    let ev = |m: &DMatrix<f64>| crate::linalg::eigenvalues(m);
    let e = ev(&parts.elliptic).iter().map(|l| (l.norm() - 1.0).abs()).fold(0.0, f64::max);
    let h = ev(&parts.hyperbolic)
        .iter()
        .map(|l| if l.re > 0.0 { l.im.abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let u = ev(&parts.unipotent).iter().map(|l| (l - 1.0).norm()).fold(0.0, f64::max);
    e.max(h).max(u)
}

fn jordan_residual(a: &DMatrix<f64>, e: &DMatrix<f64>, h: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let c = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x * y - y * x).norm();
    let recon = (e * h * u - a).norm() / a.norm();
    recon.max(c(e, h).max(c(e, u)).max(c(h, u)) / a.norm())
}

/// Largest relative deviation from `pi(phi p) = pi_hat(phi) pi(p)` on sampled points,
/// combined with the generic equivariance check.
fn descend_residual(step: &FibrationStep, x: &DVector<f64>, xq: &DVector<f64>, samples: usize, seed: u64) -> Result<f64> {
    let g = step.domain.exp(x)?;
    let h = step.quotient.exp(xq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = step.domain.random_point(&mut rng, 1.0);
        let lhs = step.project_unchecked(&step.domain.act(&g, &p));
        let rhs = step.quotient.act(&h, &step.project_unchecked(&p));
        worst = worst.max(lhs.distance(&rhs) / (1.0 + lhs.norm()));
    }
    Ok(worst.max(check_equivariance(step, samples, seed)).max(step.homomorphism_defect))
}

fn fiber_coordinates(step: &FibrationStep, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let f = &step.fiber_basis;
    let y = f
        .clone()
        .svd(true, true)
        .solve(x, 1e-12)
        .map_err(|e| Error::input(format!("fibre coordinates: {e}")))?;
    let resid = (f * &y - x).norm() / x.norm().max(f64::MIN_POSITIVE);
    Ok((y, resid))
}

struct Run {
    steps: Vec<Step>,
}

impl Run {
    /// Pushes a step; a residual over tolerance stops the pipeline as undecided.
    fn push(&mut self, s: Step) -> std::result::Result<(), String> {
        let bad = !(s.residual <= s.tolerance);
        let msg = format!("{:?} residual {:.3e} exceeds tolerance {:.1e}", s.kind, s.residual, s.tolerance);
        self.steps.push(s);
        if bad {
            Err(msg)
        } else {
            Ok(())
        }
    }
}

/// Runs the pipeline and returns the certificate.
pub fn analyze(input: &AutomorphismInput, config: &AnalyzeConfig) -> Result<SteinCertificate> {
    let jalg = load_domain(&input.domain)?.validated(JALG_TOL)?;
    let model = build_model(&jalg)?;
    let a = phi_matrix(&model, &input.phi)?;
    if matches!(input.phi, PhiSpec::Affine(_)) {
        screen_affine(&model, &a, config.seed)?;
    }
    let mut run = Run { steps: Vec::new() };
    let (conclusion, explanation) = match pipeline(&model, &a, config, &mut run)? {
        Ok(c) => (c, None),
        Err((c, why)) => (c, Some(why)),
    };
    Ok(SteinCertificate {
        version: CERT_VERSION,
        domain: input.domain.clone(),
        phi: input.phi.clone(),
        steps: run.steps,
        conclusion,
        assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
        seed: config.seed,
        explanation,
    })
}

type Outcome = std::result::Result<Conclusion, (Conclusion, String)>;

fn undecided(msg: String) -> Outcome {
    Err((Conclusion::Undecided, msg))
}

fn pipeline(model: &SiegelModel, a: &DMatrix<f64>, config: &AnalyzeConfig, run: &mut Run) -> Result<Outcome> {
    // Jordan split of the homogeneous matrix.
    let (kind, parts) = classify(a, JORDAN_TOL)?;
    let resid = jordan_residual(a, &parts.elliptic, &parts.hyperbolic, &parts.unipotent).max(spectrum_residuals(&parts));
    let payload = json!({
        "kind": kind,
        "elliptic": mat_json(&parts.elliptic),
        "hyperbolic": mat_json(&parts.hyperbolic),
        "unipotent": mat_json(&parts.unipotent),
        "eigenvalues": parts.eigenvalues,
    });
    if let Err(m) = run.push(step(StepKind::JordanSplit, cite::JORDAN, payload, resid, JORDAN_TOL)) {
        return Ok(undecided(m));
    }

    let disc = cyclic_discreteness(&parts, JORDAN_TOL);
    let hu = parts.hyperbolic_unipotent();
    let n = hu.nrows();
    let hu_dist = max_abs(&(&hu - DMatrix::identity(n, n)));
    let (resid, extra) = match disc {
        Discreteness::Finite { order } => (max_abs(&(parts.elliptic.pow(order as u32) - DMatrix::identity(n, n))), json!(order)),
        _ => (0.0, Value::Null),
    };
    let payload = json!({ "result": disc, "hu_distance": hu_dist, "order": extra });
    let pushed = run.push(step(StepKind::Discreteness, cite::DISCRETE, payload, resid, JORDAN_TOL));
    match disc {
        Discreteness::Finite { .. } => {
            if let Err(m) = pushed {
                return Ok(undecided(m));
            }
            run.steps.push(step(StepKind::Citation, cite::FINITE, json!({"citation_only": true}), 0.0, 0.0));
            return Ok(Ok(Conclusion::SteinByCitation));
        }
        Discreteness::IndiscreteClosure => {
            return Ok(Err((Conclusion::NotApplicable, "Gamma = <phi> is not discrete".into())));
        }
        Discreteness::Undecided => {
            return Ok(undecided("rotation angles are too close to rationals to classify".into()));
        }
        Discreteness::InfiniteDiscrete => {}
    }

    let resid = rel((&parts.elliptic * &hu - a).norm(), a.norm());
    let payload = json!({ "phi_prime": mat_json(&hu) });
    if let Err(m) = run.push(step(StepKind::EllipticReduction, cite::REDUCTION, payload, resid, JORDAN_TOL)) {
        return Ok(undecided(m));
    }

    // log(phi') as an element of s, cross-checked against the orbit of the base point.
    let log = parts.log_hyperbolic_unipotent();
    let (x, fit) = model.affine_rep().preimage(&log);
    let fit = rel(fit, max_abs(&log));
    if fit > CONJUGATION_TOL {
        let e = Error::UnsupportedConjugation(format!(
            "phi' is not in the split solvable group S (log fit {fit:.2e}); conjugation into S is only implemented inside the ball algebra"
        ));
        return Ok(undecided(e.to_string()));
    }
    let exp_resid = rel(max_abs(&(model.exp(&x)?.affine() - &hu)), max_abs(&hu));
    let orbit_resid = match model.solve_orbit(&model.apply_affine(&hu, &model.z0), 1e-7) {
        Ok(g) => rel(max_abs(&(g.affine() - &hu)), max_abs(&hu)),
        Err(e) => return Ok(undecided(format!("orbit cross-check failed: {e}"))),
    };
    let payload = json!({
        "x": vec_json(&x),
        "labels": model.jalg.labels(),
        "log_fit": fit,
        "exp_residual": exp_resid,
        "orbit_residual": orbit_resid,
    });
    let resid = fit.max(exp_resid).max(orbit_resid);
    if let Err(m) = run.push(step(StepKind::ConjugationIntoS, cite::CONJUGACY, payload, resid, CONJUGATION_TOL)) {
        return Ok(undecided(m));
    }

    let mut current = model.clone();
    let mut x = x;
    let mut level = 0usize;
    loop {
        if current.fs.rank == 0 {
            run.steps.push(step(StepKind::BaseCase, cite::TRIVIAL_BASE, json!({"level": level, "dim": 0}), 0.0, 0.0));
            return Ok(Ok(Conclusion::SteinCertified));
        }
        let st = split_last_root(&current)?;
        let frac = st.quotient_fraction(&x);
        if frac < FIBER_TOL {
            let (y, emb) = fiber_coordinates(&st, &x)?;
            let ball = BallAlgebra::new(st.fiber_dim)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let w = match ball.totally_real_subalgebra_containing(&y, &mut rng) {
                Ok(w) => w,
                Err(e) => return Ok(undecided(format!("no totally real witness in the fibre: {e}"))),
            };
            let resid = emb
                .max(w.containment_residual)
                .max(w.closure_residual)
                .max(st.report.iso_residual);
            let payload = json!({
                "level": level,
                "quotient_fraction": frac,
                "fiber_dim": st.fiber_dim,
                "y": vec_json(&y),
                "fiber_basis": mat_json(&st.fiber_basis),
                "branch": w.branch,
                "subalgebra": mat_json(w.subalgebra.basis()),
                "conjugator": w.conjugator.factors.iter().map(vec_json).collect::<Vec<_>>(),
                "min_abs_defect": w.min_abs_defect,
                "samples": TOTALLY_REAL_SAMPLES,
            });
            if let Err(m) = run.push(step(StepKind::FiberCase, cite::FIBER, payload, resid, WITNESS_TOL)) {
                return Ok(undecided(m));
            }
            if !(w.min_abs_defect > MIN_TOTALLY_REAL_DET) {
                return Ok(undecided(format!("totally real determinant {:.2e} too small", w.min_abs_defect)));
            }
            if st.fiber_dim == 1 {
                run.steps.push(step(StepKind::BaseCase, cite::BASE, json!({"level": level, "dim": 1}), 0.0, 0.0));
            }
            return Ok(Ok(Conclusion::SteinCertified));
        }
        if frac <= UNDECIDED_TOL {
            return Ok(undecided(format!(
                "log phi' is {frac:.2e} away from the fibre ideal, inside the ambiguous band"
            )));
        }
        let xq = st.push_algebra(&x);
        let resid = descend_residual(&st, &x, &xq, config.samples, config.seed)?;
        let payload = json!({
            "level": level,
            "quotient_fraction": frac,
            "x": vec_json(&x),
            "x_quotient": vec_json(&xq),
            "b_dim": st.b_ideal.dim(),
            "s_prime_dim": st.s_prime_space.dim(),
            "fiber_dim": st.fiber_dim,
            "samples": config.samples,
        });
        if let Err(m) = run.push(step(StepKind::TowerDescend, cite::DESCEND, payload, resid, EQUIVARIANCE_TOL)) {
            return Ok(undecided(m));
        }
        current = st.quotient.clone();
        x = xq;
        level += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub kind: StepKind,
    pub residual: f64,
    pub tolerance: f64,
    pub ok: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub checks: Vec<CheckLine>,
    pub failures: Vec<String>,
}

fn field<'a>(payload: &'a Value, key: &str) -> Result<&'a Value> {
    payload
        .get(key)
        .ok_or_else(|| Error::MalformedCertificate(format!("payload is missing `{key}`")))
}

fn get_matrix(payload: &Value, key: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> =
        serde_json::from_value(field(payload, key)?.clone()).map_err(|e| Error::MalformedCertificate(format!("`{key}`: {e}")))?;
    matrix_from_rows(&rows).map_err(|e| Error::MalformedCertificate(format!("`{key}`: {e}")))
}

fn get_vector(payload: &Value, key: &str) -> Result<DVector<f64>> {
    let v: Vec<f64> =
        serde_json::from_value(field(payload, key)?.clone()).map_err(|e| Error::MalformedCertificate(format!("`{key}`: {e}")))?;
    Ok(DVector::from_vec(v))
}

fn get_f64(payload: &Value, key: &str) -> Result<f64> {
    field(payload, key)?
        .as_f64()
        .ok_or_else(|| Error::MalformedCertificate(format!("`{key}` is not a number")))
}

struct Replay {
    model: SiegelModel,
    a: DMatrix<f64>,
    parts: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    phi_prime: Option<DMatrix<f64>>,
    x: Option<DVector<f64>>,
    finite: bool,
    reached_end: bool,
    fiber_dim: Option<usize>,
}

/// Re-executes each stored check; every residual must stay within ten times its tolerance.
pub fn verify(cert: &SteinCertificate) -> Result<VerifyReport> {
    if cert.version != CERT_VERSION {
        return Err(Error::MalformedCertificate(format!("unsupported version {}", cert.version)));
    }
    let mut report = VerifyReport {
        ok: true,
        checks: Vec::new(),
        failures: Vec::new(),
    };
    if cert.steps.is_empty() {
        if matches!(cert.conclusion, Conclusion::SteinCertified | Conclusion::SteinByCitation) {
            report.ok = false;
            report.failures.push("a Stein conclusion needs at least one step".into());
        }
        return Ok(report);
    }
    let jalg = load_domain(&cert.domain).map_err(|e| Error::MalformedCertificate(format!("domain: {e}")))?;
    let model = build_model(&jalg)?;
    let a = phi_matrix(&model, &cert.phi).map_err(|e| Error::MalformedCertificate(format!("phi: {e}")))?;
    let mut st = Replay {
        model,
        a,
        parts: None,
        phi_prime: None,
        x: None,
        finite: false,
        reached_end: false,
        fiber_dim: None,
    };
    for s in &cert.steps {
        let (residual, message) = match replay_step(&mut st, s, cert.seed) {
            Ok(r) => r,
            Err(Error::MalformedCertificate(m)) => return Err(Error::MalformedCertificate(m)),
            Err(e) => (f64::INFINITY, format!("check could not be executed: {e}")),
        };
        let ok = residual <= VERIFY_FACTOR * s.tolerance;
        if !ok {
            report.ok = false;
            report.failures.push(format!("{:?}: {message}", s.kind));
        }
        report.checks.push(CheckLine {
            kind: s.kind,
            residual,
            tolerance: s.tolerance,
            ok,
            message,
        });
    }
    let consistent = match cert.conclusion {
        Conclusion::SteinCertified => st.reached_end,
        Conclusion::SteinByCitation => st.finite,
        Conclusion::NotApplicable | Conclusion::Undecided => true,
    };
    if !consistent {
        report.ok = false;
        report.failures.push(format!("conclusion {:?} is not supported by the steps", cert.conclusion));
    }
    Ok(report)
}

fn need<T: Clone>(v: &Option<T>, what: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::MalformedCertificate(format!("step order: {what} is not available yet")))
}

fn replay_step(st: &mut Replay, s: &Step, seed: u64) -> Result<(f64, String)> {
    let p = &s.payload;
    match s.kind {
        StepKind::JordanSplit => {
            let (e, h, u) = (get_matrix(p, "elliptic")?, get_matrix(p, "hyperbolic")?, get_matrix(p, "unipotent")?);
            if e.shape() != st.a.shape() || h.shape() != st.a.shape() || u.shape() != st.a.shape() {
                return Err(Error::MalformedCertificate("Jordan parts have the wrong size".into()));
            }
            let parts = JordanParts {
                elliptic: e.clone(),
                hyperbolic: h.clone(),
                unipotent: u.clone(),
                semisimple: DMatrix::zeros(0, 0),
                nilpotent: DMatrix::zeros(0, 0),
                eigenvalues: vec![],
                log_hyperbolic: DMatrix::zeros(0, 0),
                residual: 0.0,
            };
            let r = jordan_residual(&st.a, &e, &h, &u).max(spectrum_residuals(&parts));
            st.parts = Some((e, h, u));
            Ok((r, "reconstruction, commutators and spectra of e, h, u".into()))
        }
        StepKind::Discreteness => {
            let (e, h, u) = need(&st.parts, "Jordan parts")?;
            let disc: Discreteness =
                serde_json::from_value(field(p, "result")?.clone()).map_err(|e| Error::MalformedCertificate(e.to_string()))?;
            let n = e.nrows();
            let hu_dist = max_abs(&(&h * &u - DMatrix::identity(n, n)));
            match disc {
                Discreteness::InfiniteDiscrete => {
                    let r = if hu_dist > s.tolerance { 0.0 } else { f64::INFINITY };
                    Ok((r, format!("|h u - I| = {hu_dist:.3e} must be nonzero")))
                }
                Discreteness::Finite { order } => {
                    st.finite = true;
                    let r = max_abs(&(e.pow(order as u32) - DMatrix::identity(n, n))).max(hu_dist);
                    Ok((r, format!("e^{order} = I and h u = I")))
                }
                _ => Ok((hu_dist, "h u = I for a non-discrete or undecided group".into())),
            }
        }
        StepKind::EllipticReduction => {
            let (e, h, u) = need(&st.parts, "Jordan parts")?;
            let pp = get_matrix(p, "phi_prime")?;
            let r = rel((&pp - &h * &u).norm(), pp.norm()).max(rel((&e * &pp - &st.a).norm(), st.a.norm()));
            st.phi_prime = Some(pp);
            Ok((r, "phi' = h u and e phi' = phi".into()))
        }
        StepKind::ConjugationIntoS => {
            let pp = need(&st.phi_prime, "phi'")?;
            let x = get_vector(p, "x")?;
            if x.len() != st.model.jalg.dim() {
                return Err(Error::MalformedCertificate("x has the wrong length".into()));
            }
            let r = rel(max_abs(&(st.model.exp(&x)?.affine() - &pp)), max_abs(&pp));
            st.x = Some(x);
            Ok((r, "exp(x) = phi' in the affine representation".into()))
        }
        StepKind::TowerDescend => {
            let x = need(&st.x, "log phi'")?;
            let step = split_last_root(&st.model)?;
            let xs = get_vector(p, "x")?;
            let xq = get_vector(p, "x_quotient")?;
            let samples = field(p, "samples")?.as_u64().unwrap_or(100) as usize;
            if xs.len() != x.len() || xq.len() != step.quotient.jalg.dim() {
                return Err(Error::MalformedCertificate("descend vectors have the wrong length".into()));
            }
            let frac = step.quotient_fraction(&x);
            let mut r = rel((&xs - &x).amax(), x.amax()).max(rel((step.push_algebra(&x) - &xq).amax(), xq.amax()));
            r = r.max(descend_residual(&step, &x, &xq, samples, seed)?);
            if frac <= UNDECIDED_TOL {
                r = f64::INFINITY;
            }
            st.model = step.quotient.clone();
            st.x = Some(xq);
            Ok((r, format!("projection and equivariance (quotient fraction {frac:.3e})")))
        }
        StepKind::FiberCase => {
            let x = need(&st.x, "log phi'")?;
            let step = split_last_root(&st.model)?;
            let m = step.fiber_dim;
            let y = get_vector(p, "y")?;
            let basis = get_matrix(p, "subalgebra")?;
            if y.len() != 2 * m || basis.nrows() != 2 * m {
                return Err(Error::MalformedCertificate("fibre witness has the wrong size".into()));
            }
            let frac = step.quotient_fraction(&x);
            if frac >= FIBER_TOL {
                return Ok((f64::INFINITY, format!("log phi' is not in the fibre ideal (fraction {frac:.3e})")));
            }
            let emb = (&step.fiber_basis * &y - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
            let ball = BallAlgebra::new(m)?;
            let v = Subspace::span(2 * m, &basis.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>());
            if v.dim() != m {
                return Ok((
                    f64::INFINITY,
                    format!("totally real check failed: witness subalgebra has dimension {}, expected {m}", v.dim()),
                ));
            }
            let closure = ball.jalg.algebra.subalgebra_defect(&v)?;
            let contain = v.relative_residual(&y);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut min_det = f64::INFINITY;
            for _ in 0..TOTALLY_REAL_SAMPLES {
                let q = ball.sample_point(&mut rng);
                min_det = min_det.min(ball.totally_real_defect(&q, &v)?.norm());
            }
            if !(min_det > MIN_TOTALLY_REAL_DET) {
                return Ok((f64::INFINITY, format!("totally real check failed: determinant {min_det:.3e} vanishes")));
            }
            serde_json::from_value::<Branch>(field(p, "branch")?.clone())
                .map_err(|e| Error::MalformedCertificate(e.to_string()))?;
            st.reached_end = true;
            st.fiber_dim = Some(m);
            let r = emb.max(closure).max(contain);
            Ok((r, format!("fibre embedding, subalgebra closure, containment; min |det| = {min_det:.3e}")))
        }
        StepKind::BaseCase => {
            let dim = get_f64(p, "dim")? as usize;
            let ok = match dim {
                0 => st.model.fs.rank == 0,
                1 => st.fiber_dim == Some(1),
                _ => false,
            };
            st.reached_end |= dim == 0 && ok;
            Ok((if ok { 0.0 } else { f64::INFINITY }, format!("base case of complex dimension {dim}")))
        }
        StepKind::Citation => Ok((0.0, "citation only".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_combinations() {
        let m = parse_combination("0.7*delta - zeta + 2e-3*xi1+eta_2").unwrap();
        assert_eq!(m["delta"], 0.7);
        assert_eq!(m["zeta"], -1.0);
        assert_eq!(m["xi1"], 2e-3);
        assert_eq!(m["eta_2"], 1.0);
        assert!(parse_combination("").is_err());
        assert!(parse_combination("x*delta").is_err());
        assert!(matches!(parse_phi("log:delta"), Err(Error::Input(_))));
    }

    fn exp_input(domain: &str, expr: &str) -> AutomorphismInput {
        AutomorphismInput {
            domain: domain.into(),
            phi: PhiSpec::Exp(parse_combination(expr).unwrap()),
        }
    }

    #[test]
    fn ball_dilation_is_a_fibre_case() {
        let cert = analyze(&exp_input("ball:2", "0.7*delta"), &AnalyzeConfig::default()).unwrap();
        assert_eq!(cert.conclusion, Conclusion::SteinCertified);
        let kinds: Vec<StepKind> = cert.steps.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                StepKind::JordanSplit,
                StepKind::Discreteness,
                StepKind::EllipticReduction,
                StepKind::ConjugationIntoS,
                StepKind::FiberCase
            ]
        );
        let fib = &cert.steps[4].payload;
        assert_eq!(fib["branch"], json!("conjugated"));
        assert!(verify(&cert).unwrap().ok);
    }

    #[test]
    fn polydisc_descends_once() {
        let cert = analyze(&exp_input("polydisc:2", "delta_1 + zeta_2"), &AnalyzeConfig::default()).unwrap();
        assert_eq!(cert.conclusion, Conclusion::SteinCertified);
        let kinds: Vec<StepKind> = cert.steps.iter().map(|s| s.kind).collect();
        assert_eq!(&kinds[4..], &[StepKind::TowerDescend, StepKind::FiberCase, StepKind::BaseCase]);
        assert!(verify(&cert).unwrap().ok);
    }

    #[test]
    fn identity_is_finite() {
        let cert = analyze(&exp_input("disc", "0*delta"), &AnalyzeConfig::default()).unwrap();
        assert_eq!(cert.conclusion, Conclusion::SteinByCitation);
        assert!(verify(&cert).unwrap().ok);
    }

    #[test]
    fn unknown_label_is_an_input_error() {
        assert!(matches!(
            analyze(&exp_input("ball:2", "rho"), &AnalyzeConfig::default()),
            Err(Error::Input(_))
        ));
    }
}
