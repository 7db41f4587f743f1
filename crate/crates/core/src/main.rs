use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hdq::analyzer::{self, AnalyzeConfig, AutomorphismInput, SteinCertificate};
use hdq::ball::BallAlgebra;
use hdq::fibration::{check_equivariance, tower};
use hdq::io::{load_domain, matrix_to_rows, read_json, read_matrix, write_json};
use hdq::jalgebra::{fine_structure, JALG_TOL};
use hdq::jordan::{classify, cyclic_discreteness};
use hdq::{Error, Result};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "hdq", version, about = "Quotients of bounded homogeneous domains by cyclic groups")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the Stein analysis for one automorphism and emit a certificate.
    Analyze {
        /// Preset (`ball:2`, `polydisc:3`, `product:[ball:2,disc]`) or j-algebra file.
        #[arg(long)]
        domain: String,
        /// `exp:<combination>` such as `exp:0.7*delta`, or `affine:<file>`.
        #[arg(long)]
        phi: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Replay the numeric checks stored in a certificate.
    Verify { cert: PathBuf },
    /// Print the fibration tower of a domain.
    Fibration {
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Jordan-Chevalley decomposition of a matrix given as JSON rows.
    Jordan {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Validate a j-algebra file or preset and print its fine structure.
    Validate { domain: String },
    /// Unit-ball utilities.
    Ball {
        #[command(subcommand)]
        cmd: BallCmd,
    },
}

#[derive(Subcommand)]
enum BallCmd {
    /// Find a subalgebra with totally real orbits containing `xi`.
    CheckTotallyReal {
        #[arg(long)]
        n: usize,
        /// Coefficients in the basis (delta, zeta, xi_1.., eta_1..), comma separated.
        #[arg(long, allow_hyphen_values = true)]
        xi: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Analyze {
            domain,
            phi,
            out,
            seed,
            samples,
        } => {
            let input = AutomorphismInput {
                domain,
                phi: analyzer::parse_phi(&phi)?,
            };
            let cert = analyzer::analyze(&input, &AnalyzeConfig { seed, samples })?;
            match out {
                Some(path) => {
                    write_json(&path, &cert)?;
                    eprintln!("{:?}: certificate written to {}", cert.conclusion, path.display());
                }
                None => print_json(&cert)?,
            }
            if let Some(why) = &cert.explanation {
                eprintln!("{why}");
            }
            Ok(cert.conclusion.exit_code() as u8)
        }
        Cmd::Verify { cert } => {
            let cert: SteinCertificate = read_json(&cert).map_err(|e| Error::MalformedCertificate(e.to_string()))?;
            let report = analyzer::verify(&cert)?;
            for c in &report.checks {
                println!(
                    "{} {:?}: residual {:.3e} (tolerance {:.1e}) {}",
                    if c.ok { "ok  " } else { "FAIL" },
                    c.kind,
                    c.residual,
                    c.tolerance,
                    c.message
                );
            }
            for f in &report.failures {
                println!("failure: {f}");
            }
            println!("{}", if report.ok { "verified" } else { "verification failed" });
            Ok(if report.ok { 0 } else { EXIT_VERIFY_FAILED })
        }
        Cmd::Fibration { domain, samples, seed } => {
            let jalg = load_domain(&domain)?.validated(JALG_TOL)?;
            for (k, s) in tower(&jalg)?.iter().enumerate() {
                println!(
                    "step {}: dim b = {}, dim s' = {}, fibre b_{}, equivariance {:.3e}, iso {:.3e}",
                    k + 1,
                    s.b_ideal.dim(),
                    s.s_prime_space.dim(),
                    s.fiber_dim,
                    check_equivariance(s, samples, seed),
                    s.report.iso_residual
                );
            }
            Ok(0)
        }
        Cmd::Jordan { matrix, tol } => {
            let a = read_matrix(&matrix)?;
            let (kind, parts) = classify(&a, tol)?;
            print_json(&json!({
                "kind": kind,
                "discreteness": cyclic_discreteness(&parts, tol),
                "elliptic": matrix_to_rows(&parts.elliptic),
                "hyperbolic": matrix_to_rows(&parts.hyperbolic),
                "unipotent": matrix_to_rows(&parts.unipotent),
                "eigenvalues": parts.eigenvalues,
                "residual": parts.residual,
                "commutator_defect": parts.commutator_defect(),
            }))?;
            Ok(0)
        }
        Cmd::Validate { domain } => {
            let jalg = load_domain(&domain)?;
            let report = jalg.validate(JALG_TOL);
            let fs = if report.passed { fine_structure(&jalg).ok() } else { None };
            print_json(&json!({
                "report": report,
                "max_defect": report.max_defect(),
                "rank": fs.as_ref().map(|f| f.rank),
                "grading_dims": fs.as_ref().map(|f| f.grading_dims()),
                "multiplicities": fs.as_ref().map(|f| f.multiplicities()),
            }))?;
            Ok(if report.passed && fs.is_some() { 0 } else { EXIT_INPUT })
        }
        Cmd::Ball {
            cmd: BallCmd::CheckTotallyReal { n, xi, seed },
        } => {
            let ball = BallAlgebra::new(n)?;
            let coeffs = xi
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad coefficient `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            let x = DVector::from_vec(coeffs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = ball.totally_real_subalgebra_containing(&x, &mut rng)?;
            let ok = w.min_abs_defect > analyzer::MIN_TOTALLY_REAL_DET;
            print_json(&json!({
                "branch": w.branch,
                "subalgebra": matrix_to_rows(w.subalgebra.basis()),
                "conjugator": w.conjugator.factors.iter().map(|f| f.as_slice().to_vec()).collect::<Vec<_>>(),
                "containment_residual": w.containment_residual,
                "closure_residual": w.closure_residual,
                "min_abs_defect": w.min_abs_defect,
                "totally_real": ok,
            }))?;
            Ok(if ok { 0 } else { EXIT_VERIFY_FAILED })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
