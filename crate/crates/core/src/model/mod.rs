//! System definitions: the drift `f`, Hamiltonian `H`, input matrix `B` and
//! optional output map `h`, together with the symbolically derived
//! `η = ∇H`, `Df` and `Dη`.

mod audit;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Binding, DiffError, EvalError, Expr, ParseError, Var};
use crate::linalg::min_singular_value;

pub use audit::{
    audit, sample_points, AuditConfig, AuditFlags, AuditReport, EtaRootCheck, PointRecord,
};

/// JSON document describing a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "H")]
    pub hamiltonian: String,
    pub f: Vec<String>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl SystemDocument {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serialises")
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cannot parse `{field}`: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("cannot differentiate `{field}`: {source}")]
    Differentiate {
        field: String,
        #[source]
        source: DiffError,
    },
    #[error("evaluating `{field}`: {source}")]
    Eval {
        field: String,
        #[source]
        source: EvalError,
    },
    #[error("Newton iteration for η(z) = v did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Dη is singular at an iterate (smallest singular value {sigma_min:e})")]
    SingularJacobian { sigma_min: f64 },
}

/// Row-major matrix of expressions; constant-zero entries are skipped during
/// evaluation.
#[derive(Debug, Clone)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
    active: Vec<usize>,
}

impl ExprMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Expr>) -> Self {
        assert_eq!(entries.len(), rows * cols);
        let active = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_zero())
            .map(|(k, _)| k)
            .collect();
        Self {
            rows,
            cols,
            entries,
            active,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    /// True when every off-diagonal entry is the constant zero.
    pub fn is_structurally_diagonal(&self) -> bool {
        self.active
            .iter()
            .all(|k| k / self.cols == k % self.cols)
    }

    pub fn eval(&self, b: &Binding<'_>, field: &str) -> Result<DMatrix<f64>, ModelError> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for &k in &self.active {
            let (i, j) = (k / self.cols, k % self.cols);
            out[(i, j)] = self.entries[k].eval(b).map_err(|source| ModelError::Eval {
                field: format!("{field}[{i}][{j}]"),
                source,
            })?;
        }
        Ok(out)
    }
}

/// Numeric values of every field at one point.
#[derive(Debug, Clone)]
pub struct FieldValues {
    pub f: DVector<f64>,
    pub eta: DVector<f64>,
    pub hamiltonian: f64,
    pub b: DMatrix<f64>,
    pub df: DMatrix<f64>,
    pub deta: DMatrix<f64>,
    /// `y = B(z)ᵀ η(z)`.
    pub y: DVector<f64>,
}

/// Settings for Newton solves of `η(z) = v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            initial: None,
        }
    }
}

/// A parsed system with derived `η`, `Df` and `Dη`. Immutable after loading.
#[derive(Debug, Clone)]
pub struct SystemDefinition {
    pub name: String,
    pub description: Option<String>,
    pub n: usize,
    pub m: usize,
    pub f: Vec<Expr>,
    pub hamiltonian: Expr,
    pub b: ExprMatrix,
    pub h: Option<Vec<Expr>>,
    pub eta: Vec<Expr>,
    pub df: ExprMatrix,
    pub deta: ExprMatrix,
    pub document: SystemDocument,
}

/// Parses a JSON system document.
pub fn load_system(json: &str) -> Result<SystemDefinition, ModelError> {
    let doc: SystemDocument =
        serde_json::from_str(json).map_err(|e| ModelError::Schema(e.to_string()))?;
    SystemDefinition::from_document(doc)
}

impl SystemDefinition {
    pub fn from_document(doc: SystemDocument) -> Result<Self, ModelError> {
        let (n, m) = (doc.n, doc.m);
        let parse = |field: String, text: &str| {
            expr::parse_with_params(text, n, 0, &doc.params)
                .map_err(|source| ModelError::Parse { field, source })
        };
        if doc.f.len() != n {
            return Err(ModelError::Dimension(format!(
                "f has {} entries, expected n = {n}",
                doc.f.len()
            )));
        }
        let f = doc
            .f
            .iter()
            .enumerate()
            .map(|(i, t)| parse(format!("f[{i}]"), t))
            .collect::<Result<Vec<_>, _>>()?;
        let hamiltonian = parse("H".into(), &doc.hamiltonian)?;

        let b_entries = match &doc.b {
            None if m == 0 => Vec::new(),
            None => {
                return Err(ModelError::Schema(format!(
                    "missing field `B` for m = {m} inputs"
                )))
            }
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != m) {
                    return Err(ModelError::Dimension(format!("B must be {n}×{m}")));
                }
                let mut out = Vec::with_capacity(n * m);
                for (i, row) in rows.iter().enumerate() {
                    for (j, t) in row.iter().enumerate() {
                        out.push(parse(format!("B[{i}][{j}]"), t)?);
                    }
                }
                out
            }
        };
        let h = match &doc.h {
            None => None,
            Some(hs) => {
                if hs.len() != m {
                    return Err(ModelError::Dimension(format!(
                        "h has {} entries, expected m = {m}",
                        hs.len()
                    )));
                }
                Some(
                    hs.iter()
                        .enumerate()
                        .map(|(i, t)| parse(format!("h[{i}]"), t))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
        };

        let diff = |e: &Expr, k: usize, field: String| {
            e.differentiate(Var::state(k))
                .map_err(|source| ModelError::Differentiate { field, source })
        };
        let eta = (0..n)
            .map(|k| diff(&hamiltonian, k, "H".into()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut df = Vec::with_capacity(n * n);
        let mut deta = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                df.push(diff(&f[i], k, format!("f[{i}]"))?);
                deta.push(diff(&eta[i], k, format!("eta[{i}]"))?);
            }
        }

        Ok(Self {
            name: doc.name.clone(),
            description: doc.description.clone(),
            n,
            m,
            f,
            hamiltonian,
            b: ExprMatrix::new(n, m, b_entries),
            h,
            eta,
            df: ExprMatrix::new(n, n, df),
            deta: ExprMatrix::new(n, n, deta),
            document: doc,
        })
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), ModelError> {
        if z.len() != self.n {
            return Err(ModelError::Dimension(format!(
                "point has {} entries, expected n = {}",
                z.len(),
                self.n
            )));
        }
        Ok(())
    }

    fn eval_vec(&self, exprs: &[Expr], z: &[f64], field: &str) -> Result<DVector<f64>, ModelError> {
        self.check_dim(z)?;
        let b = Binding::state(z);
        let mut out = DVector::zeros(exprs.len());
        for (i, e) in exprs.iter().enumerate() {
            out[i] = e.eval(&b).map_err(|source| ModelError::Eval {
                field: format!("{field}[{i}]"),
                source,
            })?;
        }
        Ok(out)
    }

    pub fn eval_f(&self, z: &[f64]) -> Result<DVector<f64>, ModelError> {
        self.eval_vec(&self.f, z, "f")
    }

    pub fn eval_eta(&self, z: &[f64]) -> Result<DVector<f64>, ModelError> {
        self.eval_vec(&self.eta, z, "eta")
    }

    pub fn eval_h_output(&self, z: &[f64]) -> Result<Option<DVector<f64>>, ModelError> {
        self.h
            .as_ref()
            .map(|h| self.eval_vec(h, z, "h"))
            .transpose()
    }

    pub fn eval_hamiltonian(&self, z: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(z)?;
        self.hamiltonian
            .eval(&Binding::state(z))
            .map_err(|source| ModelError::Eval {
                field: "H".into(),
                source,
            })
    }

    pub fn eval_b(&self, z: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_dim(z)?;
        self.b.eval(&Binding::state(z), "B")
    }

    pub fn eval_df(&self, z: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_dim(z)?;
        self.df.eval(&Binding::state(z), "Df")
    }

    pub fn eval_deta(&self, z: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_dim(z)?;
        self.deta.eval(&Binding::state(z), "Deta")
    }

    /// All fields at `z`. The output is computed as `B(z)ᵀη(z)`, never from `h`.
    pub fn eval_fields(&self, z: &[f64]) -> Result<FieldValues, ModelError> {
        let f = self.eval_f(z)?;
        let eta = self.eval_eta(z)?;
        let b = self.eval_b(z)?;
        let y = b.transpose() * &eta;
        Ok(FieldValues {
            f,
            hamiltonian: self.eval_hamiltonian(z)?,
            df: self.eval_df(z)?,
            deta: self.eval_deta(z)?,
            eta,
            b,
            y,
        })
    }

    /// Solves `η(z) = v` by Newton's method on `Dη`.
    pub fn invert_eta(&self, v: &[f64], cfg: &NewtonConfig) -> Result<DVector<f64>, ModelError> {
        if v.len() != self.n {
            return Err(ModelError::Dimension(format!(
                "target has {} entries, expected n = {}",
                v.len(),
                self.n
            )));
        }
        let target = DVector::from_column_slice(v);
        let mut z = match &cfg.initial {
            Some(z0) => {
                self.check_dim(z0)?;
                DVector::from_column_slice(z0)
            }
            None => DVector::zeros(self.n),
        };
        let mut residual = f64::INFINITY;
        for _ in 0..=cfg.max_iter {
            let r = match self.eval_eta(z.as_slice()) {
                Ok(eta) => eta - &target,
                Err(ModelError::Eval { .. }) => {
                    return Err(ModelError::NonConvergence {
                        iterations: cfg.max_iter,
                        residual,
                    })
                }
                Err(e) => return Err(e),
            };
            residual = r.norm();
            if residual <= cfg.tol {
                return Ok(z);
            }
            let jac = self.eval_deta(z.as_slice())?;
            let sigma_min = min_singular_value(&jac);
            if sigma_min <= 1e-12 {
                return Err(ModelError::SingularJacobian { sigma_min });
            }
            let step = jac.lu().solve(&r).ok_or(ModelError::SingularJacobian { sigma_min })?;
            z -= step;
            if !z.iter().all(|x| x.is_finite()) {
                break;
            }
        }
        Err(ModelError::NonConvergence {
            iterations: cfg.max_iter,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rigid_body_json() -> &'static str {
        r#"{
            "name": "rigid-body",
            "n": 3, "m": 0,
            "H": "z1^2/(2*I1) + z2^2/(2*I2) + z3^2/(2*I3)",
            "f": ["z2*z3*(1/I3 - 1/I2)", "z1*z3*(1/I1 - 1/I3)", "z1*z2*(1/I2 - 1/I1)"],
            "params": {"I1": 1, "I2": 2, "I3": 3}
        }"#
    }

    fn linear_json() -> &'static str {
        r#"{
            "name": "linear",
            "n": 2, "m": 1,
            "H": "0.5*z1^2 + 0.5*z2^2",
            "f": ["z2", "-z1 - z2"],
            "B": [["0"], ["1"]],
            "h": ["z2"]
        }"#
    }

    #[test]
    fn loads_rigid_body() {
        let s = load_system(rigid_body_json()).unwrap();
        assert_eq!((s.n, s.m), (3, 0));
        let eta = s.eval_eta(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(eta.as_slice(), &[2.0, 2.0, 2.0]);
        assert!(s.deta.is_structurally_diagonal());
    }

    #[test]
    fn missing_hamiltonian_is_schema_violation() {
        let err = load_system(r#"{"name":"x","n":1,"m":0,"f":["z1"]}"#).unwrap_err();
        assert!(matches!(err, ModelError::Schema(ref msg) if msg.contains("`H`")), "{err}");
    }

    #[test]
    fn dimension_and_parse_errors_carry_field_paths() {
        let err = load_system(r#"{"name":"x","n":2,"m":0,"H":"z1","f":["z1"]}"#).unwrap_err();
        assert!(matches!(err, ModelError::Dimension(_)));
        let err =
            load_system(r#"{"name":"x","n":1,"m":0,"H":"z1^2","f":["z1 + u1"]}"#).unwrap_err();
        match err {
            ModelError::Parse { field, .. } => assert_eq!(field, "f[0]"),
            other => panic!("unexpected {other}"),
        }
        let err =
            load_system(r#"{"name":"x","n":1,"m":0,"H":"abs(z1)","f":["-z1"]}"#).unwrap_err();
        assert!(matches!(err, ModelError::Differentiate { .. }));
    }

    #[test]
    fn linear_system_fields() {
        let s = load_system(linear_json()).unwrap();
        let v = s.eval_fields(&[1.0, 0.0]).unwrap();
        assert_eq!(v.f.as_slice(), &[0.0, -1.0]);
        assert_eq!(v.eta.as_slice(), &[1.0, 0.0]);
        assert_eq!(v.df, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]));
        assert_eq!(v.deta, DMatrix::identity(2, 2));
        assert_eq!(v.y.as_slice(), &[0.0]);
    }

    #[test]
    fn rigid_body_fields_at_ones() {
        let s = load_system(rigid_body_json()).unwrap();
        let v = s.eval_fields(&[1.0, 1.0, 1.0]).unwrap();
        let expected_eta = [1.0, 0.5, 1.0 / 3.0];
        let expected_f = [-1.0 / 6.0, 2.0 / 3.0, -0.5];
        for i in 0..3 {
            assert!((v.eta[i] - expected_eta[i]).abs() < 1e-15);
            assert!((v.f[i] - expected_f[i]).abs() < 1e-15);
        }
        assert_eq!(v.y.len(), 0);
    }

    #[test]
    fn output_vanishes_where_eta_vanishes() {
        let s = load_system(linear_json()).unwrap();
        let v = s.eval_fields(&[0.0, 0.0]).unwrap();
        assert_eq!(v.y.as_slice(), &[0.0]);
    }

    #[test]
    fn invert_eta_linear_and_diagonal() {
        let s = load_system(
            r#"{"name":"q","n":2,"m":0,"H":"0.5*z1^2 + z2^2","f":["-z1","-z2"]}"#,
        )
        .unwrap();
        let z = s.invert_eta(&[3.0, 4.0], &NewtonConfig::default()).unwrap();
        assert_eq!(z.as_slice(), &[3.0, 2.0]);

        let rb = load_system(rigid_body_json()).unwrap();
        let z = rb.invert_eta(&[0.5, -1.0, 0.25], &NewtonConfig::default()).unwrap();
        for (got, want) in z.iter().zip([0.5, -2.0, 0.75]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn invert_eta_outside_range_fails() {
        // η = tanh(z1) has range (-1, 1)
        let s = load_system(
            r#"{"name":"t","n":1,"m":0,"H":"ln(exp(z1) + exp(0 - z1))","f":["-z1"]}"#,
        )
        .unwrap();
        let err = s.invert_eta(&[2.0], &NewtonConfig::default()).unwrap_err();
        assert!(
            matches!(
                err,
                ModelError::NonConvergence { .. } | ModelError::SingularJacobian { .. }
            ),
            "{err}"
        );
    }
}
