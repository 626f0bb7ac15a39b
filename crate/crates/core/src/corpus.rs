//! Built-in reference systems with closed-form facts to check against.
//!
//! * `linear-kq`: `ż = K Q z`, `H = ½ zᵀQz`. Here `M = K`, `J = K_skew`,
//!   `R = −K_H`.
//! * `rigid-body`: Euler's equations for a free rigid body.
//! * `wave`: staggered-grid semi-discretisation of the damped quasilinear
//!   wave equation `ρ_t = −v_x`, `v_t = −p(ρ)_x − γF(v) + νv_xx`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{self, Binding, Expr, Var};
use crate::linalg::{skew_part, sym_part};
use crate::model::{ModelError, SystemDefinition, SystemDocument};

pub const IDS: [&str; 3] = ["linear-kq", "rigid-body", "wave"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown corpus id `{0}` (known: linear-kq, rigid-body, wave)")]
    UnknownId(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Q must be symmetric positive definite: {0}")]
    NotSpd(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: &'static str,
    pub document: SystemDocument,
    /// Sampling box on which the standing assumptions are documented to hold.
    pub sample_box: Vec<(f64, f64)>,
    pub facts: ReferenceFacts,
}

impl CorpusEntry {
    pub fn system(&self) -> Result<SystemDefinition, ModelError> {
        SystemDefinition::from_document(self.document.clone())
    }
}

/// Closed forms known for a corpus system.
#[derive(Debug, Clone)]
pub enum ReferenceFacts {
    LinearKq { k: DMatrix<f64>, q: DMatrix<f64> },
    RigidBody(RigidBodyFacts),
    Wave(WaveFacts),
}

impl ReferenceFacts {
    /// `M(z)`.
    pub fn m(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            Self::LinearKq { k, .. } => Some(k.clone()),
            Self::RigidBody(f) => Some(f.eval("M", z)),
            Self::Wave(w) => Some(w.j(z) - w.r(z)),
        }
    }

    /// Skew part of the correction, when one is documented.
    pub fn p_skew(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            Self::RigidBody(f) => Some(f.eval("P_skew", z)),
            _ => None,
        }
    }

    /// `M(z) + P(z)`, the repaired structure matrix `J − R`.
    pub fn m_plus_p(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            Self::RigidBody(f) => Some(f.eval("M_plus_P", z)),
            other => other.m(z),
        }
    }

    pub fn j(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            Self::LinearKq { k, .. } => Some(skew_part(k)),
            Self::RigidBody(f) => Some(f.eval("M_plus_P", z)),
            Self::Wave(w) => Some(w.j(z)),
        }
    }

    pub fn r(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            Self::LinearKq { k, .. } => Some(-sym_part(k)),
            Self::RigidBody(_) => Some(DMatrix::zeros(3, 3)),
            Self::Wave(w) => Some(w.r(z)),
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn check_finite(name: &str, x: f64) -> Result<f64, CorpusError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CorpusError::InvalidParameter(format!("{name} must be finite")))
    }
}

fn linear_form(coeffs: impl Iterator<Item = (usize, f64)>) -> String {
    let terms: Vec<String> = coeffs
        .filter(|(_, c)| *c != 0.0)
        .map(|(j, c)| format!("{}*z{}", fmt_num(c), j + 1))
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}

/// `ż = K Q z` with `H(z) = ½ zᵀQz`.
pub fn build_linear_kq(k: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<CorpusEntry, CorpusError> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n || q.shape() != (n, n) {
        return Err(CorpusError::InvalidParameter(format!(
            "K and Q must be square of the same size, got {:?} and {:?}",
            k.shape(),
            q.shape()
        )));
    }
    for x in k.iter().chain(q.iter()) {
        check_finite("K/Q entries", *x)?;
    }
    if q != &q.transpose() {
        return Err(CorpusError::NotSpd("not symmetric".into()));
    }
    if q.clone().cholesky().is_none() {
        return Err(CorpusError::NotSpd("not positive definite".into()));
    }
    let kq = k * q;
    let f = (0..n)
        .map(|i| linear_form((0..n).map(|j| (j, kq[(i, j)]))))
        .collect();
    let mut h_terms = Vec::new();
    for i in 0..n {
        for j in i..n {
            let c = if i == j { 0.5 * q[(i, i)] } else { q[(i, j)] };
            if c == 0.0 {
                continue;
            }
            h_terms.push(if i == j {
                format!("{}*z{}^2", fmt_num(c), i + 1)
            } else {
                format!("{}*z{}*z{}", fmt_num(c), i + 1, j + 1)
            });
        }
    }
    let document = SystemDocument {
        name: "linear-kq".into(),
        description: Some("linear system ż = K Q z with H = ½ zᵀQz".into()),
        n,
        m: 0,
        hamiltonian: h_terms.join(" + "),
        f,
        b: None,
        h: None,
        params: BTreeMap::new(),
    };
    Ok(CorpusEntry {
        id: "linear-kq",
        document,
        sample_box: vec![(-2.0, 2.0); n],
        facts: ReferenceFacts::LinearKq {
            k: k.clone(),
            q: q.clone(),
        },
    })
}

/// Closed forms for the rigid body as expression templates in `z` and the
/// moments of inertia `I1, I2, I3`.
#[derive(Debug, Clone)]
pub struct RigidBodyFacts {
    pub inertia: [f64; 3],
    pub templates: BTreeMap<&'static str, [[&'static str; 3]; 3]>,
}

impl RigidBodyFacts {
    fn new(inertia: [f64; 3]) -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            "S",
            [
                ["0", "-z3*(1 - I2/I3)", "z2*(1 - I3/I2)"],
                ["z3*(1 - I1/I3)", "0", "-z1*(1 - I3/I1)"],
                ["-z2*(1 - I1/I2)", "z1*(1 - I2/I1)", "0"],
            ],
        );
        templates.insert(
            "M",
            [
                ["0", "-z3*(1 - I2/I3)/2", "z2*(1 - I3/I2)/2"],
                ["z3*(1 - I1/I3)/2", "0", "-z1*(1 - I3/I1)/2"],
                ["-z2*(1 - I1/I2)/2", "z1*(1 - I2/I1)/2", "0"],
            ],
        );
        templates.insert(
            "P_skew",
            [
                ["0", "z3*(I2 - I3)/I3/4", "0"],
                ["-z3*(I2 - I3)/I3/4", "0", "z1*(I2 - I1)/I1/4"],
                ["0", "-z1*(I2 - I1)/I1/4", "0"],
            ],
        );
        templates.insert(
            "M_plus_P",
            [
                ["0", "z3*(I1 + 2*I2 - 3*I3)/I3/4", "-z2*(I1 - 2*I2 + I3)/I2/4"],
                ["-z3*(I1 + 2*I2 - 3*I3)/I3/4", "0", "-z1*(3*I1 - 2*I2 - I3)/I1/4"],
                ["z2*(I1 - 2*I2 + I3)/I2/4", "z1*(3*I1 - 2*I2 - I3)/I1/4", "0"],
            ],
        );
        Self { inertia, templates }
    }

    fn params(&self) -> BTreeMap<String, f64> {
        (1..=3)
            .map(|i| (format!("I{i}"), self.inertia[i - 1]))
            .collect()
    }

    /// Evaluates the named template at `z`.
    ///
    /// # Panics
    /// On an unknown template name; the templates are fixed and parse.
    pub fn eval(&self, name: &str, z: &[f64]) -> DMatrix<f64> {
        let t = &self.templates[name];
        let params = self.params();
        let b = Binding::state(z);
        DMatrix::from_fn(3, 3, |i, j| {
            expr::parse_with_params(t[i][j], 3, 0, &params)
                .expect("template parses")
                .eval(&b)
                .expect("template evaluates")
        })
    }
}

/// Euler's equations `ż = z × (I⁻¹z)` with `H = ½ Σ zᵢ²/Iᵢ`.
pub fn build_rigid_body(i1: f64, i2: f64, i3: f64) -> Result<CorpusEntry, CorpusError> {
    for (name, x) in [("I1", i1), ("I2", i2), ("I3", i3)] {
        if !(check_finite(name, x)? > 0.0) {
            return Err(CorpusError::InvalidParameter(format!("{name} must be positive, got {x}")));
        }
    }
    let params = BTreeMap::from([("I1".into(), i1), ("I2".into(), i2), ("I3".into(), i3)]);
    let document = SystemDocument {
        name: "rigid-body".into(),
        description: Some("free rigid body, angular momenta z".into()),
        n: 3,
        m: 0,
        hamiltonian: "z1^2/(2*I1) + z2^2/(2*I2) + z3^2/(2*I3)".into(),
        f: vec![
            "z2*z3*(1/I3 - 1/I2)".into(),
            "z1*z3*(1/I1 - 1/I3)".into(),
            "z1*z2*(1/I2 - 1/I1)".into(),
        ],
        b: None,
        h: None,
        params,
    };
    Ok(CorpusEntry {
        id: "rigid-body",
        document,
        sample_box: vec![(-2.0, 2.0); 3],
        facts: ReferenceFacts::RigidBody(RigidBodyFacts::new([i1, i2, i3])),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PressureLaw {
    /// `p(ρ) = cρ`.
    Linear { c: f64 },
    /// `p(ρ) = κ ρ^γ`, for `ρ > 0`.
    GammaLaw { kappa: f64, exponent: f64 },
}

impl PressureLaw {
    fn validate(&self) -> Result<(), CorpusError> {
        let ok = match *self {
            Self::Linear { c } => c.is_finite() && c > 0.0,
            Self::GammaLaw { kappa, exponent } => {
                kappa.is_finite() && kappa > 0.0 && exponent.is_finite() && exponent > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidParameter(format!(
                "pressure law {self:?} is not strictly increasing"
            )))
        }
    }

    fn pressure(&self, rho: &str) -> String {
        match self {
            Self::Linear { .. } => format!("c*{rho}"),
            Self::GammaLaw { .. } => format!("kappa*{rho}^gexp"),
        }
    }

    /// Potential `P` with `P' = p`, `P(0) = 0`.
    fn potential(&self, rho: &str) -> String {
        match self {
            Self::Linear { .. } => format!("c*{rho}^2/2"),
            Self::GammaLaw { .. } => format!("kappa*{rho}^(gexp + 1)/(gexp + 1)"),
        }
    }
}

/// Closed-form `J` and `R` of the wave semi-discretisation, with
/// `Δx·J = [[0, −D], [Dᵀ, 0]]` and
/// `Δx·R = diag(0, γ diag(F(v)/v) + ν GᵀG)`.
#[derive(Debug, Clone)]
pub struct WaveFacts {
    pub ncells: usize,
    pub dx: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Friction law in `z1`.
    pub friction: Expr,
    /// `F′(0)`, used for `F(v)/v` when `|v| < 1e−8`.
    pub friction_slope_at_zero: f64,
}

impl WaveFacts {
    fn nv(&self) -> usize {
        self.ncells - 1
    }

    pub fn j(&self, _z: &[f64]) -> DMatrix<f64> {
        let n = self.ncells;
        let dim = n + self.nv();
        let mut j = DMatrix::zeros(dim, dim);
        // (D v)_i = (v_i − v_{i−1})/Δx
        for i in 0..n {
            for (k, sign) in [(i, 1.0), (i.wrapping_sub(1), -1.0)] {
                if k < self.nv() {
                    j[(i, n + k)] = -sign / (self.dx * self.dx);
                    j[(n + k, i)] = sign / (self.dx * self.dx);
                }
            }
        }
        j
    }

    /// `F(v)/v` with the series switch at the origin.
    pub fn friction_quotient(&self, v: f64) -> f64 {
        if v.abs() < 1e-8 {
            self.friction_slope_at_zero
        } else {
            let fv = self
                .friction
                .eval(&Binding::state(&[v]))
                .unwrap_or(f64::NAN);
            fv / v
        }
    }

    pub fn r(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.ncells;
        let nv = self.nv();
        let dim = n + nv;
        let mut r = DMatrix::zeros(dim, dim);
        let dx = self.dx;
        for k in 0..nv {
            r[(n + k, n + k)] += self.gamma * self.friction_quotient(z[n + k]) / dx;
        }
        // GᵀG with (G v)_j = (v_{j+1} − v_j)/Δx
        let w = self.nu / (dx * dx * dx);
        for j in 0..nv.saturating_sub(1) {
            let (a, b) = (n + j, n + j + 1);
            r[(a, a)] += w;
            r[(b, b)] += w;
            r[(a, b)] -= w;
            r[(b, a)] -= w;
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct WaveParams {
    pub ncells: usize,
    pub law: PressureLaw,
    pub gamma: f64,
    pub nu: f64,
    pub length: f64,
    /// Friction law `F` as an expression in `z1`.
    pub friction: String,
}

impl Default for WaveParams {
    fn default() -> Self {
        Self {
            ncells: 20,
            law: PressureLaw::Linear { c: 1.0 },
            gamma: 0.1,
            nu: 0.01,
            length: 1.0,
            friction: "z1".into(),
        }
    }
}

/// Staggered-grid semi-discretisation with densities `ρ_1..ρ_N` on cells and
/// velocities `v_1..v_{N−1}` on interior faces, `Δx = ℓ/N`:
///
/// ```text
/// ρ̇ = −D v + B_ρ u,   v̇ = Dᵀ p(ρ) − γ F(v) − ν GᵀG v
/// H = Δx Σ P(ρ_i) + Δx Σ ½ v_k²
/// ```
///
/// The port carries the boundary velocities `u = (v_0, v_N)` into the
/// first and last cell; the conjugate output is `y = (p(ρ_1), −p(ρ_N))`, so
/// `yᵀu` is the power delivered through the two ends.
pub fn build_wave_fd(p: &WaveParams) -> Result<CorpusEntry, CorpusError> {
    let n = p.ncells;
    if n < 2 {
        return Err(CorpusError::InvalidParameter(format!("ncells must be ≥ 2, got {n}")));
    }
    p.law.validate()?;
    for (name, x) in [("gamma", p.gamma), ("nu", p.nu)] {
        if !(check_finite(name, x)? >= 0.0) {
            return Err(CorpusError::InvalidParameter(format!("{name} must be ≥ 0, got {x}")));
        }
    }
    if !(check_finite("length", p.length)? > 0.0) {
        return Err(CorpusError::InvalidParameter(format!(
            "length must be positive, got {}",
            p.length
        )));
    }
    let friction = expr::parse(&p.friction, 1, 0).map_err(|e| {
        CorpusError::InvalidParameter(format!("friction `{}`: {e}", p.friction))
    })?;
    let slope = friction
        .differentiate(Var::state(0))
        .map_err(|e| CorpusError::InvalidParameter(format!("friction: {e}")))?
        .eval(&Binding::state(&[0.0]))
        .map_err(|e| CorpusError::InvalidParameter(format!("friction: F'(0): {e}")))?;

    let nv = n - 1;
    let dx = p.length / n as f64;
    let rho = |i: usize| format!("z{}", i + 1);
    let vel = |k: usize| format!("z{}", n + k + 1);

    let mut f = Vec::with_capacity(n + nv);
    for i in 0..n {
        // −(v_i − v_{i−1})/Δx with v_0 = v_N = 0 (those enter through B)
        let mut terms = Vec::new();
        if i < nv {
            terms.push(format!("-{}", vel(i)));
        }
        if i >= 1 {
            terms.push(format!("+ {}", vel(i - 1)));
        }
        let body = terms.join(" ");
        f.push(format!("({})/dx", body.trim_start_matches("+ ")));
    }
    for k in 0..nv {
        let friction_k = friction
            .map_vars(&|_| Var::state(n + k))
            .to_string();
        // Δx² (GᵀG v)_k
        let mut lap = Vec::new();
        if k >= 1 {
            lap.push(format!("({} - {})", vel(k), vel(k - 1)));
        }
        if k + 1 < nv {
            lap.push(format!("({} - {})", vel(k), vel(k + 1)));
        }
        let mut rhs = format!(
            "({} - {})/dx",
            p.law.pressure(&rho(k)),
            p.law.pressure(&rho(k + 1))
        );
        if p.gamma != 0.0 {
            rhs.push_str(&format!(" - gamma*({friction_k})"));
        }
        if p.nu != 0.0 && !lap.is_empty() {
            rhs.push_str(&format!(" - nu*({})/dx^2", lap.join(" + ")));
        }
        f.push(rhs);
    }
    let potential: Vec<String> = (0..n).map(|i| p.law.potential(&rho(i))).collect();
    let kinetic: Vec<String> = (0..nv).map(|k| format!("{}^2/2", vel(k))).collect();
    let hamiltonian = format!("dx*({}) + dx*({})", potential.join(" + "), kinetic.join(" + "));

    let mut b = vec![vec!["0".to_string(); 2]; n + nv];
    b[0][0] = "1/dx".into();
    b[n - 1][1] = "-1/dx".into();
    let h = vec![p.law.pressure(&rho(0)), format!("-{}", p.law.pressure(&rho(n - 1)))];

    let mut params = BTreeMap::from([("dx".to_string(), dx)]);
    match p.law {
        PressureLaw::Linear { c } => {
            params.insert("c".into(), c);
        }
        PressureLaw::GammaLaw { kappa, exponent } => {
            params.insert("kappa".into(), kappa);
            params.insert("gexp".into(), exponent);
        }
    }
    if p.gamma != 0.0 {
        params.insert("gamma".into(), p.gamma);
    }
    if p.nu != 0.0 {
        params.insert("nu".into(), p.nu);
    }
    let document = SystemDocument {
        name: "wave".into(),
        description: Some(format!(
            "damped quasilinear wave, {n} cells on [0, {}]; state (rho_1..rho_{n}, v_1..v_{nv}); \
             u = boundary velocities, y = (p(rho_1), -p(rho_{n}))",
            p.length
        )),
        n: n + nv,
        m: 2,
        hamiltonian,
        f,
        b: Some(b),
        h: Some(h),
        params,
    };
    let mut sample_box = vec![(0.5, 2.0); n];
    sample_box.extend(std::iter::repeat_n((-2.0, 2.0), nv));
    Ok(CorpusEntry {
        id: "wave",
        document,
        sample_box,
        facts: ReferenceFacts::Wave(WaveFacts {
            ncells: n,
            dx,
            gamma: p.gamma,
            nu: p.nu,
            friction,
            friction_slope_at_zero: slope,
        }),
    })
}

/// Parses `a,b;c,d` as a row-major matrix.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, CorpusError> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| {
                    x.trim().parse::<f64>().map_err(|_| {
                        CorpusError::InvalidParameter(format!("bad matrix entry `{x}`"))
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CorpusError::InvalidParameter(format!("ragged matrix `{text}`")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn take_f64(params: &mut BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, CorpusError> {
    match params.remove(key) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CorpusError::InvalidParameter(format!("{key}={v} is not a number"))),
    }
}

/// Builds a corpus entry by id. Unspecified parameters take their defaults:
///
/// * `linear-kq`: `K = 0,1;-1,-1`, `Q = I`.
/// * `rigid-body`: `I1 = 1`, `I2 = 2`, `I3 = 3`.
/// * `wave`: `N = 20`, `law = linear` (`c = 1`) or `gamma` (`kappa = 1`,
///   `gexp = 1.4`), `gamma = 0.1`, `nu = 0.01`, `length = 1`, `friction = z1`.
pub fn build(id: &str, params: &BTreeMap<String, String>) -> Result<CorpusEntry, CorpusError> {
    let mut p = params.clone();
    let entry = match id {
        "linear-kq" => {
            let k = match p.remove("K") {
                Some(t) => parse_matrix(&t)?,
                None => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
            };
            let q = match p.remove("Q") {
                Some(t) => parse_matrix(&t)?,
                None => DMatrix::identity(k.nrows(), k.nrows()),
            };
            build_linear_kq(&k, &q)?
        }
        "rigid-body" => {
            let i1 = take_f64(&mut p, "I1", 1.0)?;
            let i2 = take_f64(&mut p, "I2", 2.0)?;
            let i3 = take_f64(&mut p, "I3", 3.0)?;
            build_rigid_body(i1, i2, i3)?
        }
        "wave" => {
            let d = WaveParams::default();
            let ncells = take_f64(&mut p, "N", d.ncells as f64)?;
            if ncells.fract() != 0.0 || ncells < 0.0 {
                return Err(CorpusError::InvalidParameter(format!("N={ncells} is not a count")));
            }
            let law = match p.remove("law").as_deref() {
                None | Some("linear") => PressureLaw::Linear {
                    c: take_f64(&mut p, "c", 1.0)?,
                },
                Some("gamma") => PressureLaw::GammaLaw {
                    kappa: take_f64(&mut p, "kappa", 1.0)?,
                    exponent: take_f64(&mut p, "gexp", 1.4)?,
                },
                Some(other) => {
                    return Err(CorpusError::InvalidParameter(format!("unknown law `{other}`")))
                }
            };
            let wp = WaveParams {
                ncells: ncells as usize,
                law,
                gamma: take_f64(&mut p, "gamma", d.gamma)?,
                nu: take_f64(&mut p, "nu", d.nu)?,
                length: take_f64(&mut p, "length", d.length)?,
                friction: p.remove("friction").unwrap_or(d.friction),
            };
            build_wave_fd(&wp)?
        }
        other => return Err(CorpusError::UnknownId(other.into())),
    };
    if let Some(key) = p.keys().next() {
        return Err(CorpusError::InvalidParameter(format!("`{key}` is not a parameter of {id}")));
    }
    Ok(entry)
}
