use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use phforge::corpus;
use phforge::decomp::{Policy, Ray};
use phforge::dynamics::IntegratorConfig;
use phforge::model::{load_system, SystemDefinition};
use phforge::quadrature::QuadratureConfig;

/// Where the system came from.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSource {
    File { path: PathBuf },
    Corpus { id: String, params: BTreeMap<String, String> },
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSpec {
    pub count: usize,
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub system: SystemSource,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ray: Option<Ray>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleSpec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
    /// Points per coordinate of a `--grid` over the sample box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSpec {
    pub z0: Vec<f64>,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub u: Option<Vec<f64>>,
    pub residual_bound: f64,
}

impl RunManifest {
    pub fn new(command: &'static str, system: SystemSource, tol: f64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            system,
            tol,
            policy: None,
            ray: None,
            quadrature: None,
            integrator: None,
            samples: None,
            points: Vec::new(),
            grid: None,
            simulation: None,
            outputs: Vec::new(),
        }
    }
}

/// A loaded system plus the default sampling box, if the source has one.
pub struct Loaded {
    pub system: SystemDefinition,
    pub sample_box: Option<Vec<(f64, f64)>>,
}

/// Errors while loading are usage/IO failures.
pub fn load(source: &SystemSource) -> Result<Loaded> {
    match source {
        SystemSource::File { path } => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let system =
                load_system(&text).with_context(|| format!("loading {}", path.display()))?;
            Ok(Loaded { system, sample_box: None })
        }
        SystemSource::Corpus { id, params } => {
            let entry = corpus::build(id, params)?;
            let system = entry.system()?;
            Ok(Loaded {
                system,
                sample_box: Some(entry.sample_box),
            })
        }
    }
}

pub fn parse_params(raw: &[String]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for kv in raw {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--param expects KEY=VALUE, got `{kv}`");
        };
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            bail!("parameter `{}` given twice", k.trim());
        }
    }
    Ok(out)
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            let x: f64 = t.parse().with_context(|| format!("`{t}` is not a number"))?;
            if !x.is_finite() {
                bail!("`{t}` is not finite");
            }
            Ok(x)
        })
        .collect()
}

pub fn parse_box(text: &str) -> Result<(f64, f64)> {
    match parse_vector(text)?.as_slice() {
        [lo, hi] if lo < hi => Ok((*lo, *hi)),
        _ => bail!("--box expects LO,HI with LO < HI, got `{text}`"),
    }
}

/// Master tolerance, overridable via `PHFORGE_TOL`.
pub fn master_tol() -> Result<f64> {
    match std::env::var("PHFORGE_TOL") {
        Ok(v) => {
            let tol: f64 = v
                .trim()
                .parse()
                .with_context(|| format!("PHFORGE_TOL=`{v}` is not a number"))?;
            if !(tol > 0.0 && tol.is_finite()) {
                bail!("PHFORGE_TOL must be positive, got {v}");
            }
            Ok(tol)
        }
        Err(std::env::VarError::NotPresent) => Ok(phforge::DEFAULT_TOL),
        Err(e) => bail!("PHFORGE_TOL: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_and_boxes() {
        assert_eq!(parse_vector("1, -2.5,3e-1").unwrap(), vec![1.0, -2.5, 0.3]);
        assert!(parse_vector("1,,2").is_err());
        assert!(parse_vector("nan").is_err());
        assert_eq!(parse_box("-1,2").unwrap(), (-1.0, 2.0));
        assert!(parse_box("2,1").is_err());
    }

    #[test]
    fn params() {
        let p = parse_params(&["I1=1".into(), "law = gamma".into()]).unwrap();
        assert_eq!(p["law"], "gamma");
        assert!(parse_params(&["I1".into()]).is_err());
        assert!(parse_params(&["a=1".into(), "a=2".into()]).is_err());
    }
}
