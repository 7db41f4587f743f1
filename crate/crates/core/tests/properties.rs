mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_orthogonal, random_vector, rel_err, PRESETS};
use hdq::analyzer::{analyze, parse_combination, AnalyzeConfig, AutomorphismInput, PhiSpec};
use hdq::ball::{BallAlgebra, Generator};
use hdq::fibration::{check_equivariance, tower};
use hdq::jalgebra::{fine_structure, presets, NormalJAlgebra};
use hdq::jordan::jordan_decompose;
use hdq::siegel::{build_model, SiegelModel};

fn jalg(i: usize) -> NormalJAlgebra {
    presets::parse(PRESETS[i % PRESETS.len()]).unwrap()
}

fn model(i: usize) -> SiegelModel {
    build_model(&jalg(i)).unwrap()
}

fn br(j: &NormalJAlgebra, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    j.algebra.bracket(a, b).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn jacobi_identity_holds_on_random_vectors(i in 0usize..8, seed in any::<u64>()) {
        let j = jalg(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = j.dim();
        let (x, y, z) = (random_vector(&mut rng, n, 1.0), random_vector(&mut rng, n, 1.0), random_vector(&mut rng, n, 1.0));
        let r = br(&j, &x, &br(&j, &y, &z)) + br(&j, &y, &br(&j, &z, &x)) + br(&j, &z, &br(&j, &x, &y));
        prop_assert!(r.amax() < 1e-12);
    }

    #[test]
    fn exp_of_negative_is_inverse(i in 0usize..8, seed in any::<u64>(), radius in 0.0f64..5.0) {
        let m = model(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vector(&mut rng, m.jalg.dim(), 1.0);
        let x = if x.norm() > 0.0 { x.normalize() * radius } else { x };
        let rep = m.affine_rep();
        let p = rep.exp_affine(&x).unwrap() * rep.exp_affine(&-&x).unwrap();
        let id = DMatrix::identity(p.nrows(), p.ncols());
        prop_assert!((p - id).amax() < 1e-9 * (1.0 + radius.exp()));
    }

    #[test]
    fn representation_respects_brackets(i in 0usize..8, seed in any::<u64>()) {
        let m = model(i);
        let rep = m.affine_rep();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m.jalg.dim();
        let (x, y) = (random_vector(&mut rng, n, 1.0), random_vector(&mut rng, n, 1.0));
        let lhs = rep.rho(&(br(&m.jalg, &x, &y) * rep.bracket_sign));
        let rhs = rep.rho(&x) * rep.rho(&y) - rep.rho(&y) * rep.rho(&x);
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn fine_structure_is_basis_independent(i in 0usize..8, seed in any::<u64>()) {
        let j = jalg(i);
        let fs = fine_structure(&j).unwrap();
        let q = random_orthogonal(&mut ChaCha8Rng::seed_from_u64(seed), j.dim());
        let fq = fine_structure(&j.change_basis(&q).unwrap()).unwrap();
        prop_assert_eq!(fq.rank, fs.rank);
        prop_assert_eq!(fq.grading_dims(), fs.grading_dims());
        let (mut a, mut b) = (fs.multiplicities(), fq.multiplicities());
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert!((&q * &fq.delta - &fs.delta).amax() < 1e-8);
    }

    #[test]
    fn grading_is_compatible_with_brackets(i in 0usize..8, seed in any::<u64>()) {
        let j = jalg(i);
        let fs = fine_structure(&j).unwrap();
        prop_assert_eq!(fs.minus_half.dim() % 2, 0);
        for (k, eta) in fs.eta.iter().enumerate() {
            for l in 0..fs.rank {
                let want = if k == l { -1.0 } else { 0.0 };
                prop_assert!((fs.alpha(l, eta, &j.algebra) - want).abs() < 1e-9);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = |rng: &mut ChaCha8Rng, s: &hdq::linalg::Subspace| s.basis() * random_vector(rng, s.dim(), 1.0);
        let graded = [(&fs.minus_one, -1.0), (&fs.minus_half, -0.5), (&fs.zero, 0.0)];
        for (a, ga) in graded {
            for (b, gb) in graded {
                let (x, y) = (pick(&mut rng, a), pick(&mut rng, b));
                let z = br(&j, &x, &y);
                let target = match ga + gb {
                    g if g == -1.0 => Some(&fs.minus_one),
                    g if g == -0.5 => Some(&fs.minus_half),
                    g if g == 0.0 => Some(&fs.zero),
                    _ => None,
                };
                let resid = match target {
                    Some(t) => t.residual(&z),
                    None => z.norm(),
                };
                prop_assert!(resid < 1e-9 * (1.0 + x.norm() * y.norm()), "grades {ga} + {gb}: {resid}");
            }
        }
    }

    #[test]
    fn action_is_a_simply_transitive_group_action(i in 0usize..8, seed in any::<u64>()) {
        let m = model(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = m.random_element(&mut rng, 1.5);
        let h = m.random_element(&mut rng, 1.5);
        let p = m.random_point(&mut rng, 1.0);
        let gh = m.product(&g, &h).unwrap();
        let q = m.act(&gh, &p);
        prop_assert!(q.distance(&m.act(&g, &m.act(&h, &p))) < 1e-8 * (1.0 + q.norm()));
        prop_assert!(m.contains(&q).unwrap().inside);
        let back = m.solve_orbit(&m.act(&g, &m.z0), 1e-7).unwrap();
        prop_assert!(rel_err(back.affine(), g.affine()) < 1e-7);
        let e = m.act(&m.identity(), &p);
        prop_assert!(e.distance(&p) < 1e-14 * (1.0 + p.norm()));
    }

    #[test]
    fn jordan_parts_are_conjugation_equivariant(n in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::jordan_sample(&mut rng, n);
        let q = random_orthogonal(&mut rng, n);
        let p = jordan_decompose(&s.a, 1e-12).unwrap();
        let pq = jordan_decompose(&(&q * &s.a * q.transpose()), 1e-12).unwrap();
        let conj = |m: &DMatrix<f64>| &q * m * q.transpose();
        prop_assert!(rel_err(&pq.elliptic, &conj(&p.elliptic)) < 1e-7);
        prop_assert!(rel_err(&pq.hyperbolic, &conj(&p.hyperbolic)) < 1e-7);
        prop_assert!(rel_err(&pq.unipotent, &conj(&p.unipotent)) < 1e-7);
    }

    #[test]
    fn jordan_parts_vary_continuously(n in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::jordan_sample(&mut rng, n);
        // Rescaling the hyperbolic part keeps the parts commuting.
        let eps = 1e-6;
        let a2 = &s.e * (&s.h * (1.0 + eps)) * &s.u;
        let p1 = jordan_decompose(&s.a, 1e-12).unwrap();
        let p2 = jordan_decompose(&a2, 1e-12).unwrap();
        prop_assert!(rel_err(&p1.elliptic, &p2.elliptic) < 1e-5);
        prop_assert!(rel_err(&p1.unipotent, &p2.unipotent) < 1e-5);
        prop_assert!(rel_err(&p2.hyperbolic, &(&p1.hyperbolic * (1.0 + eps))) < 1e-5);
    }

    #[test]
    fn projections_intertwine_structure(i in 0usize..8, seed in any::<u64>()) {
        let j = jalg(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for step in tower(&j).unwrap() {
            prop_assert!(step.homomorphism_defect < 1e-9);
            prop_assert!(step.j_commutation_defect < 1e-9);
            let n = step.domain.jalg.dim();
            let (x, y) = (random_vector(&mut rng, n, 1.0), random_vector(&mut rng, n, 1.0));
            let lhs = step.push_algebra(&br(&step.domain.jalg, &x, &y));
            let rhs = br(&step.quotient.jalg, &step.push_algebra(&x), &step.push_algebra(&y));
            prop_assert!((lhs - rhs).amax() < 1e-9);
            let jx = step.push_algebra(&(&step.domain.jalg.j * &x));
            let jpx = &step.quotient.jalg.j * step.push_algebra(&x);
            prop_assert!((jx - jpx).amax() < 1e-9);
            prop_assert!(check_equivariance(&step, 10, seed) < 1e-8);
        }
    }

    #[test]
    fn tower_terminates_at_rank(i in 0usize..8) {
        let j = jalg(i);
        let fs = fine_structure(&j).unwrap();
        let steps = tower(&j).unwrap();
        prop_assert_eq!(steps.len(), fs.rank);
        let fibres: usize = steps.iter().map(|s| s.fiber_dim).sum();
        prop_assert_eq!(2 * fibres, j.dim());
        prop_assert_eq!(steps.last().unwrap().quotient.fs.rank, 0);
    }

    #[test]
    fn table1_flow_is_a_one_parameter_group(n in 1usize..5, g in 0usize..4, s in -1.0f64..1.0, t in -1.0f64..1.0, seed in any::<u64>()) {
        let ball = BallAlgebra::new(n).unwrap();
        let gen = match (g, n) {
            (0, _) | (2, 1) | (3, 1) => Generator::Zeta,
            (1, _) => Generator::Delta,
            (2, _) => Generator::Xi(1 + (seed as usize) % (n - 1)),
            _ => Generator::Eta(1 + (seed as usize) % (n - 1)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ball.sample_point(&mut rng);
        let two = ball.table1_flow(gen, s, &ball.table1_flow(gen, t, &p).unwrap()).unwrap();
        let one = ball.table1_flow(gen, s + t, &p).unwrap();
        prop_assert!(two.distance(&one) < 1e-10 * (1.0 + one.norm()));
        let m = &ball.model;
        let via = m.act(&m.exp(&(ball.basis_vector(gen).unwrap() * t)).unwrap(), &p);
        let flow = ball.table1_flow(gen, t, &p).unwrap();
        prop_assert!(via.distance(&flow) < 1e-9 * (1.0 + flow.norm()));
    }

    #[test]
    fn totally_real_witness_contains_its_element(n in 2usize..5, seed in any::<u64>()) {
        let ball = BallAlgebra::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vector(&mut rng, 2 * n, 1.0);
        let w = ball.totally_real_subalgebra_containing(&x, &mut rng).unwrap();
        prop_assert_eq!(w.subalgebra.dim(), n);
        prop_assert!(w.subalgebra.relative_residual(&x) < 1e-9);
        prop_assert!(w.closure_residual < 1e-9);
        prop_assert!(w.min_abs_defect > 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn analysis_is_deterministic(c in -1.0f64..1.0, seed in 0u64..1000) {
        let input = AutomorphismInput {
            domain: "ball:2".into(),
            phi: PhiSpec::Exp(parse_combination(&format!("0.5*delta {} {}*xi1", if c < 0.0 { '-' } else { '+' }, c.abs())).unwrap()),
        };
        let cfg = AnalyzeConfig { seed, ..AnalyzeConfig::default() };
        let a = serde_json::to_string(&analyze(&input, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&analyze(&input, &cfg).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
