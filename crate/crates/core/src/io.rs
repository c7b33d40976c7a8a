//! Matrix Market files for data and a JSON manifest tying a problem together.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{CompositeProblem, SaddlePointCertificate, SmoothTerm};
use crate::prox::ProxFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMarketFormat {
    /// Dense, column-major.
    Array,
    /// Nonzero triplets.
    Coordinate,
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a real Matrix Market matrix (array or coordinate, general or symmetric) into a dense matrix.
pub fn read_matrix_market<R: Read>(reader: R, source: &str) -> Result<DMatrix<f64>> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(source, 1, "empty file"))?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(source, 1, format!("bad header: {header}")));
    }
    let format = match tokens[2].as_str() {
        "array" => MatrixMarketFormat::Array,
        "coordinate" => MatrixMarketFormat::Coordinate,
        other => return Err(parse_err(source, 1, format!("unsupported format {other}"))),
    };
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse_err(source, 1, format!("unsupported field {}", tokens[3])));
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(source, 1, format!("unsupported symmetry {other}"))),
    };

    let mut data = lines.filter_map(|(i, l)| match l {
        Ok(l) => {
            let trimmed = l.trim().to_string();
            (!trimmed.is_empty() && !trimmed.starts_with('%')).then_some(Ok((i + 1, trimmed)))
        }
        Err(e) => Some(Err(e)),
    });
    let (size_line, size) = data.next().ok_or_else(|| parse_err(source, 2, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(source, size_line, format!("bad size line: {e}")))?;

    let parse_value = |line: usize, tok: &str| {
        tok.parse::<f64>()
            .map_err(|e| parse_err(source, line, format!("bad value {tok:?}: {e}")))
    };

    match format {
        MatrixMarketFormat::Array => {
            if dims.len() != 2 {
                return Err(parse_err(source, size_line, "array size line needs 2 entries"));
            }
            let (rows, cols) = (dims[0], dims[1]);
            let mut m = DMatrix::zeros(rows, cols);
            let positions: Vec<(usize, usize)> = if symmetric {
                (0..cols).flat_map(|j| (j..rows).map(move |i| (i, j))).collect()
            } else {
                (0..cols).flat_map(|j| (0..rows).map(move |i| (i, j))).collect()
            };
            let mut count = 0;
            for entry in data {
                let (line, text) = entry?;
                for tok in text.split_whitespace() {
                    let &(i, j) = positions
                        .get(count)
                        .ok_or_else(|| parse_err(source, line, "too many entries"))?;
                    let v = parse_value(line, tok)?;
                    m[(i, j)] = v;
                    if symmetric {
                        m[(j, i)] = v;
                    }
                    count += 1;
                }
            }
            if count != positions.len() {
                return Err(parse_err(
                    source,
                    size_line,
                    format!("expected {} entries, found {count}", positions.len()),
                ));
            }
            Ok(m)
        }
        MatrixMarketFormat::Coordinate => {
            if dims.len() != 3 {
                return Err(parse_err(source, size_line, "coordinate size line needs 3 entries"));
            }
            let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
            let mut m = DMatrix::zeros(rows, cols);
            let mut count = 0;
            for entry in data {
                let (line, text) = entry?;
                let toks: Vec<&str> = text.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(parse_err(source, line, "coordinate entry needs 3 fields"));
                }
                let index = |tok: &str, bound: usize| -> Result<usize> {
                    let i: usize = tok
                        .parse()
                        .map_err(|e| parse_err(source, line, format!("bad index {tok:?}: {e}")))?;
                    if i == 0 || i > bound {
                        return Err(parse_err(source, line, format!("index {i} out of range 1..={bound}")));
                    }
                    Ok(i - 1)
                };
                let (i, j) = (index(toks[0], rows)?, index(toks[1], cols)?);
                let v = parse_value(line, toks[2])?;
                m[(i, j)] += v;
                if symmetric && i != j {
                    m[(j, i)] += v;
                }
                count += 1;
            }
            if count != nnz {
                return Err(parse_err(
                    source,
                    size_line,
                    format!("expected {nnz} entries, found {count}"),
                ));
            }
            Ok(m)
        }
    }
}

/// Writes a general real matrix. Values use the shortest round-trip representation.
pub fn write_matrix_market<W: Write>(m: &DMatrix<f64>, format: MatrixMarketFormat, mut out: W) -> Result<()> {
    match format {
        MatrixMarketFormat::Array => {
            writeln!(out, "%%MatrixMarket matrix array real general")?;
            writeln!(out, "{} {}", m.nrows(), m.ncols())?;
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    writeln!(out, "{}", m[(i, j)])?;
                }
            }
        }
        MatrixMarketFormat::Coordinate => {
            let nnz = m.iter().filter(|v| **v != 0.0).count();
            writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
            writeln!(out, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        writeln!(out, "{} {} {}", i + 1, j + 1, v)?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_market(fs::File::open(path)?, &path.display().to_string())
}

/// Reads an `n × 1` matrix as a vector.
pub fn read_vector_file(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_file(path)?;
    if m.ncols() != 1 {
        return Err(parse_err(
            &path.display().to_string(),
            2,
            format!("expected one column, found {}", m.ncols()),
        ));
    }
    Ok(m.column(0).into_owned())
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>, format: MatrixMarketFormat) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_matrix_market(m, format, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_vector_file(path: &Path, v: &DVector<f64>) -> Result<()> {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_matrix_file(path, &m, MatrixMarketFormat::Array)
}

/// Description of `f`; matrix data lives in sibling Matrix Market files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothSpec {
    Zero,
    /// `(μ/2)‖x‖²`
    SqNorm {
        mu: f64,
    },
    /// `½‖Mx − d‖² + (ridge/2)‖x‖²`
    LeastSquares {
        matrix: String,
        target: String,
        #[serde(default)]
        ridge: f64,
    },
    /// `½xᵀQx + ⟨c, x⟩`
    Quadratic {
        hessian: String,
        linear: String,
    },
}

/// JSON manifest of a problem `min f + g s.t. Ax = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemManifest {
    pub name: String,
    /// Primal dimension.
    pub n: usize,
    pub f: SmoothSpec,
    pub g: ProxFunction,
    /// Equality operator and right-hand side; absent means `m = 0`.
    #[serde(default)]
    pub a: Option<String>,
    #[serde(default)]
    pub b: Option<String>,
    #[serde(default)]
    pub x_star: Option<String>,
    #[serde(default)]
    pub lambda_star: Option<String>,
    /// Planted signal, when the generator had one.
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Free-form generator parameters.
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
}

/// A problem read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub manifest: ProblemManifest,
    pub problem: CompositeProblem,
    pub saddle: Option<SaddlePointCertificate>,
    pub ground_truth: Option<DVector<f64>>,
}

impl ProblemManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LoadedProblem> {
        let manifest: ProblemManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        manifest.resolve(&dir)
    }

    /// Builds the problem, resolving file names relative to `dir`.
    pub fn resolve(self, dir: &Path) -> Result<LoadedProblem> {
        let file = |name: &str| dir.join(name);
        let f: SmoothTerm = match &self.f {
            SmoothSpec::Zero => SmoothTerm::Zero,
            SmoothSpec::SqNorm { mu } => SmoothTerm::SqNorm { mu: *mu },
            SmoothSpec::LeastSquares { matrix, target, ridge } => SmoothTerm::least_squares(
                read_matrix_file(&file(matrix))?,
                read_vector_file(&file(target))?,
                *ridge,
            )?,
            SmoothSpec::Quadratic { hessian, linear } => {
                SmoothTerm::quadratic(read_matrix_file(&file(hessian))?, read_vector_file(&file(linear))?)?
            }
        };
        let (a, b) = match (&self.a, &self.b) {
            (Some(a), Some(b)) => (read_matrix_file(&file(a))?, read_vector_file(&file(b))?),
            (None, None) => (DMatrix::zeros(0, self.n), DVector::zeros(0)),
            _ => return Err(Error::Config("manifest must give both a and b or neither".into())),
        };
        if a.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                context: "manifest n vs operator columns",
                expected: self.n,
                actual: a.ncols(),
            });
        }
        let problem = CompositeProblem::new(Arc::new(f), self.g, a, b)?;
        let saddle = match (&self.x_star, &self.lambda_star) {
            (Some(x), Some(l)) => Some(SaddlePointCertificate::new(
                &problem,
                read_vector_file(&file(x))?,
                if problem.dim_dual() == 0 {
                    DVector::zeros(0)
                } else {
                    read_vector_file(&file(l))?
                },
            )?),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "manifest must give both x_star and lambda_star or neither".into(),
                ))
            }
        };
        let ground_truth = self
            .ground_truth
            .as_deref()
            .map(|g| read_vector_file(&file(g)))
            .transpose()?;
        Ok(LoadedProblem {
            manifest: self,
            problem,
            saddle,
            ground_truth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip_is_exact() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) - 0.1);
        let mut buf = Vec::new();
        write_matrix_market(&m, MatrixMarketFormat::Array, &mut buf).unwrap();
        let back = read_matrix_market(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn coordinate_round_trip_is_exact() {
        let mut m = DMatrix::zeros(4, 5);
        m[(0, 0)] = 0.3;
        m[(3, 4)] = -1e-17;
        m[(2, 1)] = 7.0;
        let mut buf = Vec::new();
        write_matrix_market(&m, MatrixMarketFormat::Coordinate, &mut buf).unwrap();
        let back = read_matrix_market(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn symmetric_and_comments() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% a comment\n\n2 2 2\n1 1 4\n2 1 -1\n";
        let m = read_matrix_market(text.as_bytes(), "mem").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 0.0]));
        let text = "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n";
        let m = read_matrix_market(text.as_bytes(), "mem").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
    }

    #[test]
    fn malformed_inputs_report_lines() {
        let bad = [
            "",
            "%%MatrixMarket matrix array complex general\n1 1\n1\n",
            "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n",
        ];
        for text in bad {
            assert!(read_matrix_market(text.as_bytes(), "mem").is_err(), "{text:?}");
        }
        match read_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n".as_bytes(),
            "mem",
        ) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        write_matrix_file(&dir.path().join("A.mtx"), &a, MatrixMarketFormat::Array).unwrap();
        write_vector_file(&dir.path().join("b.mtx"), &b).unwrap();
        write_vector_file(&dir.path().join("x.mtx"), &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        write_vector_file(&dir.path().join("l.mtx"), &DVector::from_vec(vec![-1.0])).unwrap();
        let manifest = ProblemManifest {
            name: "tiny".into(),
            n: 2,
            f: SmoothSpec::SqNorm { mu: 1.0 },
            g: ProxFunction::Zero,
            a: Some("A.mtx".into()),
            b: Some("b.mtx".into()),
            x_star: Some("x.mtx".into()),
            lambda_star: Some("l.mtx".into()),
            ground_truth: None,
            seed: Some(3),
            generator: None,
        };
        let path = dir.path().join("problem.json");
        manifest.save(&path).unwrap();
        let loaded = ProblemManifest::load(&path).unwrap();
        assert_eq!(loaded.manifest, manifest);
        let saddle = loaded.saddle.unwrap();
        let res = saddle.verify(&loaded.problem, 1e-12).unwrap();
        assert_eq!(res.feasibility, 0.0);
    }
}
