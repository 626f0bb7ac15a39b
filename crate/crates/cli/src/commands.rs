use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use phforge::decomp::{decompose_batch, DecomposeOptions, DecompositionRecord};
use phforge::dynamics::{simulate as run, DynamicsError, InputSignal, IntegratorConfig};
use phforge::model::{audit as run_audit, sample_points, AuditConfig, SystemDefinition};
use phforge::quadrature::QuadratureConfig;

use crate::manifest::{
    load, master_tol, parse_box, parse_params, parse_vector, RunManifest, SampleSpec,
    SimulationSpec, SystemSource,
};
use crate::output::{fmt_f64, json_line, json_pretty, write_file, write_stdout, Csv};
use crate::{AuditArgs, DecompArgs, DecomposeArgs, ExportArgs, SampleArgs, SimulateArgs, SystemArgs};

/// Outcome of a command that ran to completion. Usage and IO problems are
/// reported as `Err` instead.
pub enum Status {
    Ok,
    Failed,
}

const MAX_GRID_POINTS: usize = 1_000_000;

fn source(a: &SystemArgs) -> Result<SystemSource> {
    Ok(match (&a.system, &a.corpus) {
        (Some(path), None) => SystemSource::File { path: path.clone() },
        (None, Some(id)) => SystemSource::Corpus {
            id: id.clone(),
            params: parse_params(&a.params)?,
        },
        _ => bail!("exactly one of --system and --corpus is required"),
    })
}

fn sample_box(a: &SampleArgs, n: usize, default: Option<Vec<(f64, f64)>>) -> Result<Vec<(f64, f64)>> {
    Ok(match &a.bounds {
        Some(text) => vec![parse_box(text)?; n],
        None => default.unwrap_or_else(|| vec![(-1.0, 1.0); n]),
    })
}

fn decompose_options(a: &DecompArgs, tol: f64) -> DecomposeOptions {
    DecomposeOptions {
        policy: a.policy,
        quadrature: QuadratureConfig {
            nodes: a.quad_nodes as usize,
            refinement: None,
        },
        ray: a.ray,
        tol,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_point(s: &SystemDefinition, z: &[f64], what: &str) -> Result<()> {
    if z.len() != s.n {
        bail!("{what} has {} entries, but the system has n = {}", z.len(), s.n);
    }
    Ok(())
}

pub fn audit(a: AuditArgs) -> Result<Status> {
    let tol = master_tol()?;
    let src = source(&a.source)?;
    let loaded = load(&src)?;
    let s = &loaded.system;
    if a.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let bounds = sample_box(&a.sampling, s.n, loaded.sample_box)?;
    let samples = sample_points(&bounds, a.samples, a.sampling.seed);
    let cfg = AuditConfig { tol, ..AuditConfig::default() };
    let report = run_audit(s, &samples, &cfg)?;

    let bytes = json_pretty(&report)?;
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("audit.json");
            write_file(&path, &bytes)?;
            let mut m = RunManifest::new("audit", src, tol);
            m.samples = Some(SampleSpec {
                count: a.samples,
                bounds,
                seed: a.sampling.seed,
            });
            m.outputs = vec![path];
            write_manifest(dir, m)?;
        }
        None => write_stdout(&bytes)?,
    }
    if report.passed {
        eprintln!("audit passed ({} samples)", a.samples);
        Ok(Status::Ok)
    } else {
        eprintln!("audit failed: {}", report.failed_flags.join(", "));
        Ok(Status::Failed)
    }
}

fn grid(bounds: &[(f64, f64)], per_axis: usize) -> Result<Vec<Vec<f64>>> {
    if per_axis == 0 {
        bail!("--grid must be at least 1");
    }
    let total = u32::try_from(bounds.len())
        .ok()
        .and_then(|n| per_axis.checked_pow(n))
        .filter(|&t| t <= MAX_GRID_POINTS)
        .with_context(|| format!("--grid {per_axis} in {} dimensions exceeds {MAX_GRID_POINTS} points", bounds.len()))?;
    let coord = |(lo, hi): (f64, f64), k: usize| {
        if per_axis == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (per_axis - 1) as f64
        }
    };
    // last coordinate varies fastest
    Ok((0..total)
        .map(|mut idx| {
            let mut z = vec![0.0; bounds.len()];
            for (d, b) in bounds.iter().enumerate().rev() {
                z[d] = coord(*b, idx % per_axis);
                idx /= per_axis;
            }
            z
        })
        .collect())
}

#[derive(Serialize)]
struct RecordLine {
    index: usize,
    #[serde(flatten)]
    record: DecompositionRecord,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    index: usize,
    z: &'a [f64],
    error: ErrorBody,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
}

pub fn decompose(a: DecomposeArgs) -> Result<Status> {
    let tol = master_tol()?;
    let src = source(&a.source)?;
    let loaded = load(&src)?;
    let s = &loaded.system;
    let opts = decompose_options(&a.decomp, tol);

    let mut points = Vec::new();
    for text in &a.at {
        let z = parse_vector(text)?;
        check_point(s, &z, "--at point")?;
        points.push(z);
    }
    let explicit = points.clone();
    let needs_box = a.grid.is_some() || a.random.is_some();
    let bounds = if needs_box {
        Some(sample_box(&a.sampling, s.n, loaded.sample_box)?)
    } else {
        None
    };
    if let (Some(per_axis), Some(b)) = (a.grid, &bounds) {
        points.extend(grid(b, per_axis)?);
    }
    if let (Some(count), Some(b)) = (a.random, &bounds) {
        points.extend(sample_points(b, count, a.sampling.seed));
    }
    if points.is_empty() {
        bail!("no points: give --at, --grid or --random");
    }

    let results = decompose_batch(s, &points, &opts);
    let mut lines = Vec::new();
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((1..=s.n).map(|i| format!("z{i}")));
    header.extend(["strategy", "ray", "recon", "lambda_min_R", "error"].map(String::from));
    let mut summary = Csv::new(&header);
    let mut failures = 0usize;
    for (index, (z, r)) in points.iter().zip(&results).enumerate() {
        let mut row: Vec<String> = vec![index.to_string()];
        row.extend(z.iter().map(|x| fmt_f64(*x)));
        match r {
            Ok(d) => {
                let record = DecompositionRecord::from(d);
                lines.extend(json_line(&RecordLine { index, record })?);
                row.extend([
                    d.strategy.as_str().to_string(),
                    d.ray.as_str().to_string(),
                    fmt_f64(d.residuals.recon),
                    fmt_f64(d.residuals.psd),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                lines.extend(json_line(&ErrorLine {
                    index,
                    z,
                    error: ErrorBody {
                        kind: e.tag(),
                        message: e.to_string(),
                    },
                })?);
                row.extend([String::new(), String::new(), String::new(), String::new(), e.tag().to_string()]);
            }
        }
        summary.row(row);
    }

    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            let records = dir.join("decompositions.jsonl");
            let csv = dir.join("summary.csv");
            write_file(&records, &lines)?;
            write_file(&csv, &summary.into_bytes())?;
            let mut m = RunManifest::new("decompose", src, tol);
            m.policy = Some(opts.policy);
            m.ray = Some(opts.ray);
            m.quadrature = Some(opts.quadrature);
            m.points = explicit;
            m.grid = a.grid;
            if let Some(b) = bounds {
                m.samples = Some(SampleSpec {
                    count: a.random.unwrap_or(0),
                    bounds: b,
                    seed: a.sampling.seed,
                });
            }
            m.outputs = vec![records, csv];
            write_manifest(dir, m)?;
        }
        None => write_stdout(&lines)?,
    }
    if failures > 0 {
        eprintln!("{failures} of {} points failed", points.len());
        Ok(Status::Failed)
    } else {
        Ok(Status::Ok)
    }
}

pub fn simulate(a: SimulateArgs) -> Result<Status> {
    let tol = master_tol()?;
    let src = source(&a.source)?;
    let cfg = IntegratorConfig::new(a.dt, a.scheme);
    cfg.validate()?;
    if !(a.t_end > 0.0 && a.t_end.is_finite()) {
        bail!("--T must be positive, got {}", a.t_end);
    }
    let bound = a.residual_bound.unwrap_or(tol);
    if !(bound >= 0.0) {
        bail!("--residual-bound must be non-negative");
    }
    let loaded = load(&src)?;
    let s = &loaded.system;
    let z0 = parse_vector(&a.z0)?;
    check_point(s, &z0, "--z0")?;
    let u = a.u.as_deref().map(parse_vector).transpose()?;
    let input = match &u {
        Some(u) if u.len() != s.m => bail!("--u has {} entries, but the system has m = {}", u.len(), s.m),
        Some(u) => InputSignal::Constant(u.clone()),
        None => InputSignal::Zero,
    };
    let opts = decompose_options(&a.decomp, tol);

    let traj = match run(s, &z0, &input, a.t_end, &cfg, &opts) {
        Ok(t) => t,
        Err(DynamicsError::InvalidConfig(msg)) => bail!("{msg}"),
        Err(DynamicsError::StepFailed { index, source }) => {
            eprintln!(
                "simulation failed in step {index} (t = {}): {source}; last good state index {index}",
                index as f64 * a.dt
            );
            return Ok(Status::Failed);
        }
        Err(e) => {
            eprintln!("simulation failed: {e}");
            return Ok(Status::Failed);
        }
    };

    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=s.n).map(|i| format!("z{i}")));
    header.extend((1..=s.m).map(|i| format!("y{i}")));
    header.push("H".into());
    let mut tcsv = Csv::new(&header);
    for i in 0..traj.times.len() {
        let mut row = vec![fmt_f64(traj.times[i])];
        row.extend(traj.states[i].iter().map(|x| fmt_f64(*x)));
        row.extend(traj.outputs[i].iter().map(|x| fmt_f64(*x)));
        row.push(fmt_f64(traj.hamiltonian[i]));
        tcsv.row(row);
    }
    let mut lcsv = Csv::new(&["step", "dH", "dissipation", "supply", "residual"].map(String::from));
    for (i, e) in traj.ledger.iter().enumerate() {
        lcsv.row([
            i.to_string(),
            fmt_f64(e.dh),
            fmt_f64(e.dissipation),
            fmt_f64(e.supply),
            fmt_f64(e.residual),
        ]);
    }

    create_dir(&a.out)?;
    let tpath = a.out.join("trajectory.csv");
    let lpath = a.out.join("ledger.csv");
    write_file(&tpath, &tcsv.into_bytes())?;
    write_file(&lpath, &lcsv.into_bytes())?;
    let mut m = RunManifest::new("simulate", src, tol);
    m.policy = Some(opts.policy);
    m.ray = Some(opts.ray);
    m.quadrature = Some(opts.quadrature);
    m.integrator = Some(cfg);
    m.simulation = Some(SimulationSpec {
        z0,
        t_end: a.t_end,
        u,
        residual_bound: bound,
    });
    m.outputs = vec![tpath, lpath];
    write_manifest(&a.out, m)?;

    let worst = traj.max_abs_residual();
    eprintln!(
        "{} steps, max |H − H0| = {:e}, max |ledger residual| = {:e}",
        traj.ledger.len(),
        traj.max_energy_drift(),
        worst
    );
    if worst <= bound {
        Ok(Status::Ok)
    } else {
        eprintln!("ledger residual exceeds bound {bound:e}");
        Ok(Status::Failed)
    }
}

#[derive(Serialize)]
struct Derived {
    name: String,
    n: usize,
    m: usize,
    eta: Vec<String>,
    #[serde(rename = "Df")]
    df: Vec<Vec<String>>,
    #[serde(rename = "Deta")]
    deta: Vec<Vec<String>>,
}

pub fn export(a: ExportArgs) -> Result<Status> {
    let tol = master_tol()?;
    let src = source(&a.source)?;
    let loaded = load(&src)?;
    let s = &loaded.system;
    let table = |m: &phforge::model::ExprMatrix| -> Vec<Vec<String>> {
        (0..m.rows())
            .map(|i| (0..m.cols()).map(|j| m.get(i, j).to_string()).collect())
            .collect()
    };
    let derived = Derived {
        name: s.name.clone(),
        n: s.n,
        m: s.m,
        eta: s.eta.iter().map(|e| e.to_string()).collect(),
        df: table(&s.df),
        deta: table(&s.deta),
    };
    create_dir(&a.out)?;
    let doc = a.out.join("system.json");
    let der = a.out.join("derived.json");
    write_file(&doc, &json_pretty(&s.document)?)?;
    write_file(&der, &json_pretty(&derived)?)?;
    let mut m = RunManifest::new("export", src, tol);
    m.outputs = vec![doc, der];
    write_manifest(&a.out, m)?;
    Ok(Status::Ok)
}

fn write_manifest(dir: &Path, m: RunManifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    write_file(&path, &json_pretty(&m)?)?;
    Ok(path)
}
