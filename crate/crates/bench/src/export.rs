//! Writes generated instances to disk as a JSON manifest plus Matrix Market files.

use std::fs;
use std::path::Path;

use iapda::io::{write_matrix_file, write_vector_file, MatrixMarketFormat, ProblemManifest, SmoothSpec};
use iapda::{DVector, ProxFunction, Result, SaddlePointCertificate};
use serde_json::json;

use crate::generate::{L1L2Instance, NnlsConstraint, NnlsInstance, QpInstance, RidgePlacement};

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_saddle(dir: &Path, saddle: &SaddlePointCertificate, manifest: &mut ProblemManifest) -> Result<()> {
    write_vector_file(&dir.join("x_star.mtx"), &saddle.x_star)?;
    write_vector_file(&dir.join("lambda_star.mtx"), &saddle.lambda_star)?;
    manifest.x_star = Some("x_star.mtx".into());
    manifest.lambda_star = Some("lambda_star.mtx".into());
    Ok(())
}

fn finish(dir: &Path, manifest: ProblemManifest) -> Result<ProblemManifest> {
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn save_l1l2(inst: &L1L2Instance, dir: &Path) -> Result<ProblemManifest> {
    fs::create_dir_all(dir)?;
    let p = &inst.params;
    write_matrix_file(&dir.join("a.mtx"), &inst.a, MatrixMarketFormat::Array)?;
    write_vector_file(&dir.join("b.mtx"), &inst.b)?;
    write_vector_file(&dir.join("ground_truth.mtx"), &inst.ground_truth)?;
    let (f, g) = match p.ridge {
        RidgePlacement::Smooth => (SmoothSpec::SqNorm { mu: p.mu }, ProxFunction::L1 { weight: 1.0 }),
        RidgePlacement::Prox => (SmoothSpec::Zero, ProxFunction::L1PlusSqL2 { l1: 1.0, sq: p.mu }),
    };
    let mut manifest = ProblemManifest {
        name: format!("l1l2-{}x{}-seed{}", p.m, p.n, p.seed),
        n: p.n,
        f,
        g,
        a: Some("a.mtx".into()),
        b: Some("b.mtx".into()),
        x_star: None,
        lambda_star: None,
        ground_truth: Some("ground_truth.mtx".into()),
        seed: Some(p.seed),
        generator: Some(serde_json::to_value(p)?),
    };
    write_saddle(dir, &inst.saddle()?, &mut manifest)?;
    finish(dir, manifest)
}

pub fn save_nnls(inst: &NnlsInstance, dir: &Path) -> Result<ProblemManifest> {
    fs::create_dir_all(dir)?;
    let p = &inst.params;
    write_matrix_file(&dir.join("matrix.mtx"), &inst.matrix, MatrixMarketFormat::Coordinate)?;
    write_vector_file(&dir.join("target.mtx"), &inst.target)?;
    let manifest = ProblemManifest {
        name: format!("nnls-{}x{}-seed{}", p.m, p.n, p.seed),
        n: p.n,
        f: SmoothSpec::LeastSquares {
            matrix: "matrix.mtx".into(),
            target: "target.mtx".into(),
            ridge: 0.0,
        },
        g: match p.constraint {
            NnlsConstraint::NonNeg => ProxFunction::NonNegIndicator,
            NnlsConstraint::Free => ProxFunction::Zero,
        },
        a: None,
        b: None,
        x_star: None,
        lambda_star: None,
        ground_truth: None,
        seed: Some(p.seed),
        generator: Some(serde_json::to_value(p)?),
    };
    finish(dir, manifest)
}

pub fn save_qp(inst: &QpInstance, seed: u64, dir: &Path) -> Result<ProblemManifest> {
    fs::create_dir_all(dir)?;
    let a = inst.problem.operator();
    let b: &DVector<f64> = inst.problem.rhs();
    write_matrix_file(&dir.join("hessian.mtx"), &inst.hessian, MatrixMarketFormat::Array)?;
    write_vector_file(&dir.join("linear.mtx"), &inst.linear)?;
    write_matrix_file(&dir.join("a.mtx"), a, MatrixMarketFormat::Array)?;
    write_vector_file(&dir.join("b.mtx"), b)?;
    let mut manifest = ProblemManifest {
        name: format!("qp-{}x{}-seed{}", a.nrows(), a.ncols(), seed),
        n: a.ncols(),
        f: SmoothSpec::Quadratic {
            hessian: "hessian.mtx".into(),
            linear: "linear.mtx".into(),
        },
        g: ProxFunction::Zero,
        a: Some("a.mtx".into()),
        b: Some("b.mtx".into()),
        x_star: None,
        lambda_star: None,
        ground_truth: None,
        seed: Some(seed),
        generator: Some(json!({ "kind": "qp", "n": a.ncols(), "m": a.nrows() })),
    };
    write_saddle(dir, &inst.saddle, &mut manifest)?;
    finish(dir, manifest)
}
