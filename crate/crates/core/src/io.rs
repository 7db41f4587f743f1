//! JSON formats for algebras, j-algebras, matrices and affine maps.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::jalgebra::{presets, NormalJAlgebra};
use crate::lie::LieAlgebra;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketEntry {
    pub i: String,
    pub j: String,
    pub coeffs: BTreeMap<String, f64>,
}

/// Structure constants by label; omitted pairs bracket to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraFile {
    pub dim: usize,
    pub basis: Vec<String>,
    #[serde(default)]
    pub brackets: Vec<BracketEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JAlgebraFile {
    #[serde(flatten)]
    pub algebra: AlgebraFile,
    pub j: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

/// Affine map on real coordinates `(Re z, Im z, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFile {
    pub linear: Vec<Vec<f64>>,
    pub translation: Vec<f64>,
}

impl AlgebraFile {
    pub fn from_algebra(l: &LieAlgebra) -> Self {
        let n = l.dim();
        let labels = l.labels();
        let mut brackets = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let coeffs: BTreeMap<String, f64> = (0..n)
                    .filter(|&k| l.constant(i, j, k) != 0.0)
                    .map(|k| (labels[k].clone(), l.constant(i, j, k)))
                    .collect();
                if !coeffs.is_empty() {
                    brackets.push(BracketEntry {
                        i: labels[i].clone(),
                        j: labels[j].clone(),
                        coeffs,
                    });
                }
            }
        }
        AlgebraFile {
            dim: n,
            basis: labels.to_vec(),
            brackets,
        }
    }

    pub fn to_algebra(&self) -> Result<LieAlgebra> {
        if self.basis.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.basis.len(),
            });
        }
        let index: BTreeMap<&str, usize> = self.basis.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        if index.len() != self.dim {
            return Err(Error::input("duplicate basis labels"));
        }
        let look = |l: &str| index.get(l).copied().ok_or_else(|| Error::input(format!("unknown basis label `{l}`")));
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.brackets.len());
        for b in &self.brackets {
            let (i, j) = (look(&b.i)?, look(&b.j)?);
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::input(format!("bracket [{}, {}] given twice", b.i, b.j)));
            }
            let coeffs = b.coeffs.iter().map(|(k, v)| Ok((look(k)?, *v))).collect::<Result<Vec<_>>>()?;
            out.push((i, j, coeffs));
        }
        LieAlgebra::from_brackets(self.basis.clone(), &out)
    }
}

impl JAlgebraFile {
    pub fn from_jalgebra(j: &NormalJAlgebra) -> Self {
        JAlgebraFile {
            algebra: AlgebraFile::from_algebra(&j.algebra),
            j: matrix_to_rows(&j.j),
            omega: j.omega.iter().copied().collect(),
        }
    }

    pub fn to_jalgebra(&self) -> Result<NormalJAlgebra> {
        let algebra = self.algebra.to_algebra()?;
        let j = matrix_from_rows(&self.j)?;
        NormalJAlgebra::new(algebra, j, DVector::from_vec(self.omega.clone()))
    }
}

impl AffineFile {
    /// Homogeneous `(N+1) x (N+1)` matrix.
    pub fn to_homogeneous(&self) -> Result<DMatrix<f64>> {
        let a = matrix_from_rows(&self.linear)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if self.translation.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.translation.len(),
            });
        }
        let mut m = DMatrix::identity(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&a);
        for (i, t) in self.translation.iter().enumerate() {
            m[(i, n)] = *t;
        }
        Ok(m)
    }

    pub fn from_homogeneous(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() - 1;
        AffineFile {
            linear: matrix_to_rows(&m.view((0, 0), (n, n)).into_owned()),
            translation: (0..n).map(|i| m[(i, n)]).collect(),
        }
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::DimensionMismatch { expected: c, got: bad.len() });
    }
    let m = DMatrix::from_fn(r, c, |i, j| rows[i][j]);
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(m)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = read_json(path)?;
    matrix_from_rows(&rows)
}

pub fn read_jalgebra(path: impl AsRef<Path>) -> Result<NormalJAlgebra> {
    read_json::<JAlgebraFile>(path)?.to_jalgebra()
}

/// A preset name, or else a path to a j-algebra file.
pub fn load_domain(spec: &str) -> Result<NormalJAlgebra> {
    let p = Path::new(spec);
    if p.is_file() {
        read_jalgebra(p)
    } else {
        presets::parse(spec)
    }
}
