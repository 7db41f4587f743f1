#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use hdq::jalgebra::NormalJAlgebra;

pub const PRESETS: [&str; 8] = [
    "ball:1",
    "ball:2",
    "ball:3",
    "ball:4",
    "polydisc:1",
    "polydisc:2",
    "polydisc:3",
    "product:[ball:2,disc]",
];

pub fn basis(j: &NormalJAlgebra, label: &str) -> DVector<f64> {
    j.algebra.basis_vector(j.algebra.index_of(label).unwrap_or_else(|| panic!("no label {label}")))
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, bound: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-bound..=bound))
}

fn blockdiag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for b in blocks {
        let s = b.nrows();
        m.view_mut((k, k), (s, s)).copy_from(b);
        k += s;
    }
    m
}

/// A matrix `P B P^-1` with known multiplicative Jordan parts.
pub struct JordanSample {
    pub a: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

/// Blocks: scaled rotations, positive scalars away from 1, unipotent blocks of size <= 3.
/// `P` has singular values in `[0.5, 2]`.
pub fn jordan_sample<R: Rng>(rng: &mut R, n: usize) -> JordanSample {
    let mut e_blocks = Vec::new();
    let mut h_blocks = Vec::new();
    let mut u_blocks = Vec::new();
    let mut angles: Vec<f64> = Vec::new();
    let mut scalars: Vec<f64> = Vec::new();
    let mut left = n;
    while left > 0 {
        let choice = rng.gen_range(0..3);
        if choice == 0 && left >= 2 {
            let theta = loop {
                let t: f64 = rng.gen_range(0.2..std::f64::consts::PI - 0.2);
                if angles.iter().all(|a| (a - t).abs() > 0.1) {
                    break t;
                }
            };
            angles.push(theta);
            let r = rng.gen_range(0.5..2.0);
            e_blocks.push(DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]));
            h_blocks.push(DMatrix::identity(2, 2) * r);
            u_blocks.push(DMatrix::identity(2, 2));
            left -= 2;
        } else if choice == 1 {
            let d = loop {
                let d: f64 = rng.gen_range(0.2..5.0);
                if (d - 1.0).abs() > 0.1 && scalars.iter().all(|s| (s - d).abs() > 0.1) {
                    break d;
                }
            };
            scalars.push(d);
            e_blocks.push(DMatrix::identity(1, 1));
            h_blocks.push(DMatrix::from_element(1, 1, d));
            u_blocks.push(DMatrix::identity(1, 1));
            left -= 1;
        } else {
            let s = rng.gen_range(1..=3.min(left));
            let mut u = DMatrix::identity(s, s);
            for i in 0..s {
                for j in i + 1..s {
                    u[(i, j)] = if j == i + 1 { rng.gen_range(0.5..1.5) } else { rng.gen_range(-1.0..1.0) };
                }
            }
            e_blocks.push(DMatrix::identity(s, s));
            h_blocks.push(DMatrix::identity(s, s));
            u_blocks.push(u);
            left -= s;
        }
    }
    let q1 = random_orthogonal(rng, n);
    let q2 = random_orthogonal(rng, n);
    let s = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0)));
    let p = q1 * s * q2;
    let pinv = p.clone().try_inverse().expect("well conditioned");
    let conj = |b: DMatrix<f64>| &p * b * &pinv;
    let (eb, hb, ub) = (blockdiag(&e_blocks), blockdiag(&h_blocks), blockdiag(&u_blocks));
    let a = conj(&eb * &hb * &ub);
    JordanSample {
        a,
        e: conj(eb),
        h: conj(hb),
        u: conj(ub),
        p,
    }
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}
