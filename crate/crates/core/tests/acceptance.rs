//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{jordan_sample, random_orthogonal, random_vector, rel_err, PRESETS};
use hdq::analyzer::{analyze, parse_combination, verify, AnalyzeConfig, AutomorphismInput, Conclusion, PhiSpec, StepKind};
use hdq::ball::{BallAlgebra, Branch, Generator};
use hdq::fibration::{check_equivariance, tower};
use hdq::io::{matrix_to_rows, AffineFile};
use hdq::jalgebra::{fine_structure, presets, NormalJAlgebra};
use hdq::jordan::{jordan_decompose, spectrum};
use hdq::lie::LieAlgebra;
use hdq::siegel::build_model;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Outcome {
    let mut specs: Vec<&str> = PRESETS.to_vec();
    specs.push("product:[ball:2,ball:1]");
    let mut worst: f64 = 0.0;
    for s in &specs {
        let r = presets::parse(s).map_err(|e| e.to_string())?.validate(1e-9);
        ensure(r.passed && r.max_defect() < 1e-9, || format!("{s} fails validation: {:?}", r.failures(1e-9)))?;
        worst = worst.max(r.max_defect());
    }

    let b = presets::ball(2).map_err(|e| e.to_string())?;
    let n = b.dim();
    let (xi, eta, zeta) = (b.algebra.index_of("xi1").unwrap(), b.algebra.index_of("eta1").unwrap(), b.algebra.index_of("zeta").unwrap());
    let perturbed = |i: usize, j: usize, k: usize, eps: f64| {
        let mut t = b.algebra.tensor().to_vec();
        t[(i * n + j) * n + k] += eps;
        t[(j * n + i) * n + k] -= eps;
        let alg = LieAlgebra::new(b.labels().to_vec(), t).unwrap();
        NormalJAlgebra::new(alg, b.j.clone(), b.omega.clone()).unwrap().validate(1e-9)
    };
    // Changing [xi1, eta1] = 4 zeta by 0.1 only rescales the Heisenberg part and
    // yields another normal j-algebra, so it must be accepted.
    let rescale = perturbed(xi, eta, zeta, 0.1);
    ensure(rescale.passed, || "rescaled Heisenberg bracket rejected".into())?;

    let mut entries = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in 0..n {
                if (i, j, k) != (xi.min(eta), xi.max(eta), zeta) {
                    entries.push((i, j, k));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut weakest = f64::INFINITY;
    for _ in 0..20 {
        let (i, j, k) = entries[rng.gen_range(0..entries.len())];
        let eps = if rng.gen_bool(0.5) { 0.1 } else { -0.1 };
        let r = perturbed(i, j, k, eps);
        let d = r.algebra.jacobi_defect.max(r.positivity_defect).max(r.integrability_defect);
        ensure(!r.passed && d > 1e-3, || {
            format!("perturbation of [{}, {}] -> {} by {eps} accepted", b.labels()[i], b.labels()[j], b.labels()[k])
        })?;
        weakest = weakest.min(d);
    }
    Ok(format!("{} presets, max defect {worst:.1e}; 20 perturbations rejected, smallest defect {weakest:.2}", specs.len()))
}

fn criterion_2() -> Outcome {
    for n in 1..=4 {
        let fs = fine_structure(&presets::ball(n).unwrap()).map_err(|e| e.to_string())?;
        let mult = if n == 1 { vec![1] } else { vec![1, 2 * n - 2] };
        ensure(fs.rank == 1, || format!("ball:{n} rank {}", fs.rank))?;
        ensure(fs.multiplicities() == mult, || format!("ball:{n} multiplicities {:?}", fs.multiplicities()))?;
        ensure(fs.grading_dims() == (1, 2 * n - 2, 1), || format!("ball:{n} grading {:?}", fs.grading_dims()))?;
    }
    for r in 1..=3 {
        let fs = fine_structure(&presets::polydisc(r).unwrap()).map_err(|e| e.to_string())?;
        ensure(fs.rank == r && fs.minus_half.dim() == 0, || format!("polydisc:{r} rank {} half {}", fs.rank, fs.minus_half.dim()))?;
    }
    let specs = ["ball:2", "ball:3", "polydisc:2", "product:[ball:2,disc]"];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for t in 0..20 {
        let spec = specs[t % specs.len()];
        let j = presets::parse(spec).unwrap();
        let fs = fine_structure(&j).unwrap();
        let q = random_orthogonal(&mut rng, j.dim());
        let jq = j.change_basis(&q).map_err(|e| e.to_string())?;
        let fq = fine_structure(&jq).map_err(|e| format!("{spec} after basis change: {e}"))?;
        ensure(fq.rank == fs.rank, || format!("{spec}: rank changed"))?;
        let (mut m1, mut m2) = (fs.multiplicities(), fq.multiplicities());
        m1.sort();
        m2.sort();
        ensure(m1 == m2 && fq.grading_dims() == fs.grading_dims(), || format!("{spec}: root data changed"))?;
        // The grading element is canonical: it must be carried to itself.
        let d = (&q * &fq.delta - &fs.delta).amax();
        worst = worst.max(d);
        ensure(d < 1e-8, || format!("{spec}: delta moved by {d:.2e}"))?;
    }
    Ok(format!("ball:1..4, polydisc:1..3 root data; 20 basis changes, delta drift {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0_f64; 5];
    for t in 0..500 {
        let n = 2 + t % 7;
        let s = jordan_sample(&mut rng, n);
        let p = jordan_decompose(&s.a, 1e-12).map_err(|e| format!("sample {t}: {e}"))?;
        let recon = (&p.elliptic * &p.hyperbolic * &p.unipotent - &s.a).norm() / s.a.norm();
        let comm = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x * y - y * x).norm() / (x.norm() * y.norm());
        let c = comm(&p.elliptic, &p.hyperbolic).max(comm(&p.elliptic, &p.unipotent)).max(comm(&p.hyperbolic, &p.unipotent));
        let se = spectrum(&p.elliptic).iter().map(|l| (l.norm() - 1.0).abs()).fold(0.0, f64::max);
        let sh = spectrum(&p.hyperbolic)
            .iter()
            .map(|l| if l.re > 0.0 { l.im.abs() / l.re } else { f64::INFINITY })
            .fold(0.0, f64::max);
        // Eigenvalues of a unipotent Jordan block are ill-conditioned, so test nilpotency of U - I.
        let nil = &p.unipotent - DMatrix::<f64>::identity(n, n);
        let su = nil.pow(n as u32).norm() / (1.0 + nil.norm()).powi(n as i32);
        // Equivariance, against the parts known from the block construction.
        let q = random_orthogonal(&mut rng, n);
        let qa = &q * &s.a * q.transpose();
        let pq = jordan_decompose(&qa, 1e-12).map_err(|e| format!("sample {t} conjugated: {e}"))?;
        let eq = rel_err(&pq.elliptic, &(&q * &p.elliptic * q.transpose()))
            .max(rel_err(&pq.hyperbolic, &(&q * &p.hyperbolic * q.transpose())))
            .max(rel_err(&pq.unipotent, &(&q * &p.unipotent * q.transpose())))
            .max(rel_err(&p.elliptic, &s.e))
            .max(rel_err(&p.hyperbolic, &s.h))
            .max(rel_err(&p.unipotent, &s.u));
        for (w, v) in worst.iter_mut().zip([recon, c, se.max(su), sh, eq]) {
            *w = w.max(v);
        }
        ensure(recon < 1e-8 && c < 1e-8, || format!("sample {t} (n={n}): recon {recon:.2e}, commutators {c:.2e}"))?;
        ensure(se < 1e-8 && su < 1e-8 && sh < 1e-8, || format!("sample {t} (n={n}): spectra {se:.2e} {su:.2e} {sh:.2e}"))?;
        ensure(eq < 1e-7, || format!("sample {t} (n={n}): equivariance {eq:.2e}"))?;
    }
    Ok(format!(
        "500 matrices: recon {:.1e}, commutators {:.1e}, spectra {:.1e}/{:.1e}, equivariance {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut orbit, mut law): (f64, f64) = (0.0, 0.0);
    for spec in PRESETS {
        let m = build_model(&presets::parse(spec).unwrap()).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let s = m.random_element(&mut rng, 1.0);
            let p = m.act(&s, &m.z0);
            let g = m.solve_orbit(&p, 1e-7).map_err(|e| format!("{spec}: {e}"))?;
            let r = (m.act(&g, &m.z0).distance(&p) / (1.0 + p.norm())).max(rel_err(g.affine(), s.affine()));
            orbit = orbit.max(r);
            ensure(r < 1e-7, || format!("{spec}: orbit round trip {r:.2e}"))?;
        }
        for _ in 0..100 {
            let g = m.random_element(&mut rng, 2.0);
            let h = m.random_element(&mut rng, 2.0);
            let p = m.random_point(&mut rng, 1.0);
            let gh = m.product(&g, &h).map_err(|e| format!("{spec}: {e}"))?;
            let lhs = m.act(&gh, &p);
            let rhs = m.act(&g, &m.act(&h, &p));
            let r = lhs.distance(&rhs) / (1.0 + rhs.norm());
            law = law.max(r);
            ensure(r < 1e-8, || format!("{spec}: group law {r:.2e}"))?;
        }
    }
    Ok(format!("{} presets: orbit round trip {orbit:.1e}, group law {law:.1e}", PRESETS.len()))
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for spec in ["polydisc:2", "polydisc:3", "product:[ball:2,ball:1]"] {
        let steps = tower(&presets::parse(spec).unwrap()).map_err(|e| format!("{spec}: {e}"))?;
        if spec == "polydisc:3" {
            ensure(steps.len() == 3, || format!("polydisc:3 tower depth {}", steps.len()))?;
        }
        for (k, s) in steps.iter().enumerate() {
            let r = check_equivariance(s, 100, 5);
            worst = worst.max(r);
            ensure(r < 1e-8, || format!("{spec} level {k}: equivariance {r:.2e}"))?;
            let rep = &s.report;
            ensure(
                rep.rank == 1 && rep.center_residual < 1e-8 && rep.symplectic_det > 1e-8 && rep.iso_residual < 1e-9,
                || format!("{spec} level {k}: ideal checks {rep:?}"),
            )?;
        }
    }
    Ok(format!("3 domains: equivariance {worst:.1e}; polydisc:3 depth 3; rank-1, Heisenberg and symplectic checks pass"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut contain, mut closure, mut min_det, mut conj, mut flow): (f64, f64, f64, f64, f64) = (0.0, 0.0, f64::INFINITY, 0.0, 0.0);
    let mut branches = [0usize; 2];
    for n in [2usize, 3, 5] {
        let ball = BallAlgebra::new(n).map_err(|e| e.to_string())?;
        for t in 0..200 {
            let mut x = random_vector(&mut rng, 2 * n, 1.0);
            match t % 4 {
                0 => x[0] = 0.0,
                1 => x[0] *= 10f64.powf(-rng.gen_range(0.0..3.0)),
                _ => {}
            }
            let w = ball.totally_real_subalgebra_containing(&x, &mut rng).map_err(|e| format!("b_{n}: {e}"))?;
            branches[(w.branch == Branch::Abelian) as usize] += 1;
            ensure(w.subalgebra.dim() == n, || format!("b_{n}: witness dimension {}", w.subalgebra.dim()))?;
            contain = contain.max(w.containment_residual);
            closure = closure.max(w.closure_residual);
            min_det = min_det.min(w.min_abs_defect);
            ensure(w.containment_residual < 1e-9 && w.closure_residual < 1e-9, || format!("b_{n}: witness residuals {w:?}"))?;
            ensure(w.min_abs_defect > 1e-6, || format!("b_{n}: determinant {:.2e}", w.min_abs_defect))?;
            if x[0].abs() / x.norm() > 1e-3 {
                let c = ball.conjugate_into_a(&x).map_err(|e| format!("b_{n}: {e}"))?;
                conj = conj.max(c.residual);
                ensure(c.residual < 1e-8, || format!("b_{n}: conjugation residual {:.2e}", c.residual))?;
            }
        }
        let m = &ball.model;
        let mut gens = vec![Generator::Zeta, Generator::Delta];
        for k in 1..n {
            gens.push(Generator::Xi(k));
            gens.push(Generator::Eta(k));
        }
        for g in gens {
            for _ in 0..10 {
                let t = rng.gen_range(-1.5..1.5);
                let p = ball.sample_point(&mut rng);
                let a = ball.table1_flow(g, t, &p).unwrap();
                let e = ball.basis_vector(g).unwrap() * t;
                let b = m.act(&m.exp(&e).unwrap(), &p);
                let r = a.distance(&b) / (1.0 + a.norm());
                flow = flow.max(r);
                ensure(r < 1e-9, || format!("b_{n} {g:?}: flow vs action {r:.2e}"))?;
            }
        }
    }
    Ok(format!(
        "600 elements ({} conjugated, {} abelian): containment {contain:.1e}, closure {closure:.1e}, min |det| {min_det:.2}; conjugation {conj:.1e}; closed-form flow vs action {flow:.1e}",
        branches[0], branches[1]
    ))
}

fn ball2_rotation(theta: f64) -> AffineFile {
    let mut lin = DMatrix::<f64>::identity(4, 4);
    lin.view_mut((2, 2), (2, 2)).copy_from(&hdq::jordan::rotation(theta));
    AffineFile {
        linear: matrix_to_rows(&lin),
        translation: vec![0.0; 4],
    }
}

fn hdq_exit(args: &[&str], dir: &std::path::Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hdq"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run hdq")
        .status
        .code()
        .unwrap_or(-1)
}

fn criterion_7() -> Outcome {
    let cfg = AnalyzeConfig::default();
    let exp = |domain: &str, e: &str| AutomorphismInput {
        domain: domain.into(),
        phi: PhiSpec::Exp(parse_combination(e).unwrap()),
    };
    let kinds = |c: &hdq::analyzer::SteinCertificate| c.steps.iter().map(|s| s.kind).collect::<Vec<_>>();

    let c1 = analyze(&exp("ball:2", "0.7*delta"), &cfg).map_err(|e| e.to_string())?;
    ensure(c1.conclusion == Conclusion::SteinCertified, || format!("ball:2 conclusion {:?}", c1.conclusion))?;
    let fib = c1.steps.iter().find(|s| s.kind == StepKind::FiberCase).ok_or("ball:2 has no fibre case")?;
    let sub: Vec<Vec<f64>> = serde_json::from_value(fib.payload["subalgebra"].clone()).unwrap();
    let want = hdq::linalg::Subspace::coordinate(4, &[0, 2]);
    let got = hdq::linalg::Subspace::span_matrix(4, &hdq::io::matrix_from_rows(&sub).unwrap());
    ensure(got == want, || "ball:2 witness is not span(delta, xi1)".into())?;
    ensure(verify(&c1).map_err(|e| e.to_string())?.ok, || "ball:2 certificate does not verify".into())?;

    let c2 = analyze(&exp("polydisc:2", "delta_1 + zeta_2"), &cfg).map_err(|e| e.to_string())?;
    let k2 = kinds(&c2);
    ensure(
        c2.conclusion == Conclusion::SteinCertified
            && k2.iter().filter(|k| **k == StepKind::TowerDescend).count() == 1
            && k2.contains(&StepKind::FiberCase),
        || format!("polydisc:2 gave {:?} with steps {k2:?}", c2.conclusion),
    )?;
    ensure(verify(&c2).map_err(|e| e.to_string())?.ok, || "polydisc:2 certificate does not verify".into())?;

    let rot = AutomorphismInput {
        domain: "ball:2".into(),
        phi: PhiSpec::Affine(ball2_rotation(1.0)),
    };
    let c3 = analyze(&rot, &cfg).map_err(|e| e.to_string())?;
    ensure(c3.conclusion == Conclusion::NotApplicable, || format!("rotation gave {:?}", c3.conclusion))?;
    ensure(verify(&c3).map_err(|e| e.to_string())?.ok, || "rotation certificate does not verify".into())?;
    let empty = hdq::analyzer::SteinCertificate {
        steps: vec![],
        ..c3.clone()
    };
    ensure(verify(&empty).map_err(|e| e.to_string())?.ok, || "empty not_applicable certificate rejected".into())?;

    // Tampering: drop xi1 from the witness, and perturb a Jordan part.
    let mut t1 = c1.clone();
    let idx = t1.steps.iter().position(|s| s.kind == StepKind::FiberCase).unwrap();
    let rows: Vec<Vec<f64>> = sub.iter().map(|r| r[..1].to_vec()).collect();
    t1.steps[idx].payload["subalgebra"] = serde_json::json!(rows);
    let r1 = verify(&t1).map_err(|e| e.to_string())?;
    ensure(!r1.ok && r1.failures.iter().any(|f| f.contains("totally real")), || format!("tampered witness accepted: {:?}", r1.failures))?;
    let mut t2 = c1.clone();
    t2.steps[0].payload["hyperbolic"][0][0] = serde_json::json!(3.0);
    ensure(!verify(&t2).map_err(|e| e.to_string())?.ok, || "tampered Jordan part accepted".into())?;

    // Byte stability.
    let s1 = serde_json::to_string_pretty(&c1).unwrap();
    let s1b = serde_json::to_string_pretty(&analyze(&exp("ball:2", "0.7*delta"), &cfg).unwrap()).unwrap();
    ensure(s1 == s1b, || "certificate bytes differ between runs".into())?;

    // Exit codes through the binary.
    let dir = std::env::temp_dir().join(format!("hdq-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    hdq::io::write_json(dir.join("rot.json"), &ball2_rotation(1.0)).unwrap();
    let near = 2.0 * std::f64::consts::PI * (1.0 / 3.0 + 1e-7);
    hdq::io::write_json(dir.join("near.json"), &ball2_rotation(near)).unwrap();
    hdq::io::write_json(dir.join("tampered.json"), &t1).unwrap();
    let codes = [
        (hdq_exit(&["analyze", "--domain", "ball:2", "--phi", "exp:0.7*delta", "--out", "a.json"], &dir), 0),
        (hdq_exit(&["analyze", "--domain", "ball:2", "--phi", "exp:0.7*delta", "--out", "b.json"], &dir), 0),
        (hdq_exit(&["verify", "a.json"], &dir), 0),
        (hdq_exit(&["analyze", "--domain", "ball:2", "--phi", "affine:rot.json"], &dir), 2),
        (hdq_exit(&["analyze", "--domain", "ball:2", "--phi", "affine:near.json"], &dir), 3),
        (hdq_exit(&["analyze", "--domain", "ball:9x", "--phi", "exp:delta"], &dir), 4),
        (hdq_exit(&["analyze", "--domain", "ball:2", "--phi", "exp:rho"], &dir), 4),
        (hdq_exit(&["verify", "tampered.json"], &dir), 1),
    ];
    let a = std::fs::read(dir.join("a.json")).unwrap_or_default();
    let b = std::fs::read(dir.join("b.json")).unwrap_or_default();
    let _ = std::fs::remove_dir_all(&dir);
    for (i, (got, want)) in codes.iter().enumerate() {
        ensure(got == want, || format!("CLI case {i}: exit {got}, expected {want}"))?;
    }
    ensure(!a.is_empty() && a == b, || "CLI certificates differ between runs".into())?;
    Ok("three examples, verify, tampering, byte stability and exit codes 0/1/2/3/4 as specified".into())
}

fn main() {
    let start = Instant::now();
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("j-algebra validation", criterion_1),
        ("fine structure", criterion_2),
        ("Jordan decomposition", criterion_3),
        ("action and transitivity", criterion_4),
        ("fibration equivariance", criterion_5),
        ("ball subalgebras", criterion_6),
        ("analyzer end-to-end", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {why}", i + 1)
            }
        }
    }
    let total = start.elapsed().as_secs_f64();
    println!("acceptance: {} of 7 passed in {total:.1}s", 7 - failed);
    if total > 60.0 {
        println!("acceptance: FAIL runtime {total:.1}s exceeds 60s");
        failed += 1;
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
