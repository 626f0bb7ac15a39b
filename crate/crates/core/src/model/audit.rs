//! Sample-based checks of the standing assumptions: `H ≥ 0`, `ηᵀf ≤ 0`,
//! invertible and symmetric `Dη`, `Bᵀη = h`, and `f(z*) = 0` at the root
//! `η(z*) = 0`.
//!
//! Injectivity of `η` cannot be decided from samples. The report substitutes
//! two proxy checks: `Dη` invertible at every sample and, when `Dη ≻ 0` is
//! detected everywhere, monotonicity of `η` on consecutive sample pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelError, NewtonConfig, SystemDefinition};
use crate::linalg::{max_abs, min_singular_value};

pub const PROXY_CHECKS: [&str; 2] = ["deta_invertible_sample", "monotone_proxy"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditConfig {
    pub tol: f64,
    /// Bound on `‖Dη − Dηᵀ‖_max`.
    pub symmetry_tol: f64,
    pub newton: NewtonConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            tol: crate::DEFAULT_TOL,
            symmetry_tol: 1e-10,
            newton: NewtonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub z: Vec<f64>,
    pub hamiltonian: f64,
    /// `η(z)ᵀ f(z)`.
    pub eta_dot_f: f64,
    /// `d(z) = −η(z)ᵀ f(z)`.
    pub dissipation: f64,
    /// Smallest singular value of `Dη(z)`.
    pub deta_sigma_min: f64,
    pub deta_asymmetry: f64,
    /// `‖B(z)ᵀη(z) − h(z)‖`, when `h` is given.
    pub output_mismatch: Option<f64>,
    #[serde(skip)]
    pub deta_positive_definite: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum EtaRootCheck {
    Passed { z: Vec<f64>, f_norm: f64 },
    Failed { z: Vec<f64>, f_norm: f64 },
    Indeterminate { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFlags {
    pub h_nonneg: bool,
    pub passivity_sample: bool,
    pub deta_invertible_sample: bool,
    pub deta_symmetric_sample: bool,
    pub output_consistent: Option<bool>,
    pub monotone_proxy: Option<bool>,
    pub f_at_eta_root: EtaRootCheck,
    pub evaluation_ok: bool,
}

impl AuditFlags {
    /// Conjunction of all decided flags; an indeterminate root check does not
    /// fail the audit.
    pub fn all_pass(&self) -> bool {
        self.h_nonneg
            && self.passivity_sample
            && self.deta_invertible_sample
            && self.deta_symmetric_sample
            && self.output_consistent.unwrap_or(true)
            && self.monotone_proxy.unwrap_or(true)
            && self.evaluation_ok
            && !matches!(self.f_at_eta_root, EtaRootCheck::Failed { .. })
    }

    /// Names of the flags that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.h_nonneg {
            out.push("h_nonneg");
        }
        if !self.passivity_sample {
            out.push("passivity_sample");
        }
        if !self.deta_invertible_sample {
            out.push("deta_invertible_sample");
        }
        if !self.deta_symmetric_sample {
            out.push("deta_symmetric_sample");
        }
        if self.output_consistent == Some(false) {
            out.push("output_consistent");
        }
        if self.monotone_proxy == Some(false) {
            out.push("monotone_proxy");
        }
        if !self.evaluation_ok {
            out.push("evaluation_ok");
        }
        if matches!(self.f_at_eta_root, EtaRootCheck::Failed { .. }) {
            out.push("f_at_eta_root");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub system: String,
    pub tol: f64,
    pub records: Vec<PointRecord>,
    pub flags: AuditFlags,
    pub proxy_checks: Vec<String>,
    pub passed: bool,
    pub failed_flags: Vec<String>,
}

/// Uniform samples in the axis-aligned box `bounds` (one `(lo, hi)` per
/// dimension), reproducible from `seed`.
pub fn sample_points(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                .collect()
        })
        .collect()
}

fn record(s: &SystemDefinition, z: &[f64]) -> Result<PointRecord, ModelError> {
    let v = s.eval_fields(z)?;
    let eta_dot_f = v.eta.dot(&v.f);
    let asym = max_abs(&(&v.deta - v.deta.transpose()));
    let output_mismatch = s
        .eval_h_output(z)?
        .map(|h| (&v.y - h).norm());
    Ok(PointRecord {
        z: z.to_vec(),
        hamiltonian: v.hamiltonian,
        eta_dot_f,
        dissipation: -eta_dot_f,
        deta_sigma_min: min_singular_value(&v.deta),
        deta_asymmetry: asym,
        output_mismatch,
        deta_positive_definite: crate::linalg::sym_part(&v.deta).cholesky().is_some(),
        error: None,
    })
}

fn failed_record(z: &[f64], err: ModelError) -> PointRecord {
    PointRecord {
        z: z.to_vec(),
        hamiltonian: f64::NAN,
        eta_dot_f: f64::NAN,
        dissipation: f64::NAN,
        deta_sigma_min: f64::NAN,
        deta_asymmetry: f64::NAN,
        output_mismatch: None,
        deta_positive_definite: false,
        error: Some(err.to_string()),
    }
}

/// Audits `s` at `samples`. Records are returned in sample order.
pub fn audit(
    s: &SystemDefinition,
    samples: &[Vec<f64>],
    cfg: &AuditConfig,
) -> Result<AuditReport, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Dimension("audit needs at least one sample".into()));
    }
    if let Some(bad) = samples.iter().find(|z| z.len() != s.n) {
        return Err(ModelError::Dimension(format!(
            "sample has {} entries, expected n = {}",
            bad.len(),
            s.n
        )));
    }
    let tol = cfg.tol;
    let records: Vec<PointRecord> = samples
        .par_iter()
        .map(|z| record(s, z).unwrap_or_else(|e| failed_record(z, e)))
        .collect();
    let ok: Vec<&PointRecord> = records.iter().filter(|r| r.error.is_none()).collect();

    let h_nonneg = ok.iter().all(|r| r.hamiltonian >= -tol);
    let passivity_sample = ok.iter().all(|r| r.eta_dot_f <= tol);
    let deta_invertible_sample = ok.iter().all(|r| r.deta_sigma_min > tol);
    let deta_symmetric_sample = ok.iter().all(|r| r.deta_asymmetry <= cfg.symmetry_tol);
    let output_consistent = s
        .h
        .as_ref()
        .map(|_| ok.iter().all(|r| r.output_mismatch.is_some_and(|e| e <= tol)));

    let monotone_proxy = if ok.len() == records.len() && ok.iter().all(|r| r.deta_positive_definite)
    {
        let mut monotone = true;
        for pair in samples.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let ea = s.eval_eta(a)?;
            let eb = s.eval_eta(b)?;
            let dz: f64 = a.iter().zip(b).map(|(x, y)| x - y).zip(ea.iter().zip(eb.iter())).map(|(d, (p, q))| d * (p - q)).sum();
            let same = a == b;
            if !same && dz <= 0.0 {
                monotone = false;
                break;
            }
        }
        Some(monotone)
    } else {
        None
    };

    let zeros = vec![0.0; s.n];
    let f_at_eta_root = match s.invert_eta(&zeros, &cfg.newton) {
        Ok(root) => match s.eval_f(root.as_slice()) {
            Ok(f) => {
                let f_norm = f.norm();
                let z = root.as_slice().to_vec();
                if f_norm <= tol {
                    EtaRootCheck::Passed { z, f_norm }
                } else {
                    EtaRootCheck::Failed { z, f_norm }
                }
            }
            Err(e) => EtaRootCheck::Indeterminate {
                reason: e.to_string(),
            },
        },
        Err(e) => EtaRootCheck::Indeterminate {
            reason: e.to_string(),
        },
    };

    let flags = AuditFlags {
        h_nonneg,
        passivity_sample,
        deta_invertible_sample,
        deta_symmetric_sample,
        output_consistent,
        monotone_proxy,
        f_at_eta_root,
        evaluation_ok: ok.len() == records.len(),
    };
    Ok(AuditReport {
        system: s.name.clone(),
        tol,
        passed: flags.all_pass(),
        failed_flags: flags.failures().into_iter().map(String::from).collect(),
        records,
        flags,
        proxy_checks: PROXY_CHECKS.iter().map(|s| s.to_string()).collect(),
    })
}
