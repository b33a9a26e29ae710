//! MPC problem data: plant, costs, box constraints, references and solver
//! settings.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Relative singular-value cutoff for the controllability rank test.
pub const CONTROLLABILITY_RTOL: f64 = 1e-8;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = -1e-10;

/// Fixed discrete-time linearization `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    pub a: Mat,
    pub b: Mat,
    pub dt: f64,
}

impl LtiModel {
    pub fn new(a: Mat, b: Mat, dt: f64) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { a, b, dt })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn controllability_rank(&self) -> usize {
        linalg::rank(
            &linalg::controllability_matrix(&self.a, &self.b),
            CONTROLLABILITY_RTOL,
        )
    }

    pub fn is_controllable(&self) -> bool {
        self.controllability_rank() == self.n()
    }

    /// `A x + B u`
    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: Mat,
    pub r: Mat,
    pub qf: Mat,
}

impl CostSpec {
    pub fn new(q: Mat, r: Mat, qf: Mat) -> Self {
        Self { q, r, qf }
    }

    /// Block-diagonal weights from per-state and per-input diagonals, with the
    /// terminal weight equal to the stage weight.
    pub fn diagonal(q: &[f64], r: &[f64]) -> Self {
        let q = Mat::from_diagonal(&Vector::from_column_slice(q));
        let r = Mat::from_diagonal(&Vector::from_column_slice(r));
        Self {
            qf: q.clone(),
            q,
            r,
        }
    }
}

/// Elementwise state and input bounds; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    pub x_min: Vector,
    pub x_max: Vector,
    pub u_min: Vector,
    pub u_max: Vector,
}

impl BoxConstraints {
    pub fn unbounded(n: usize, m: usize) -> Self {
        Self {
            x_min: Vector::from_element(n, f64::NEG_INFINITY),
            x_max: Vector::from_element(n, f64::INFINITY),
            u_min: Vector::from_element(m, f64::NEG_INFINITY),
            u_max: Vector::from_element(m, f64::INFINITY),
        }
    }

    pub fn symmetric_inputs(n: usize, u_bound: &[f64]) -> Self {
        let u_max = Vector::from_column_slice(u_bound);
        Self {
            x_min: Vector::from_element(n, f64::NEG_INFINITY),
            x_max: Vector::from_element(n, f64::INFINITY),
            u_min: -&u_max,
            u_max,
        }
    }

    pub fn contains_state(&self, x: &Vector) -> bool {
        x.iter()
            .zip(self.x_min.iter().zip(self.x_max.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn contains_input(&self, u: &Vector) -> bool {
        u.iter()
            .zip(self.u_min.iter().zip(self.u_max.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Clamp `v` into `[lo, hi]` elementwise, in place. Infinite bounds are no-ops.
pub fn clip_into(v: &mut Vector, lo: &Vector, hi: &Vector) {
    for ((x, l), h) in v.iter_mut().zip(lo.iter()).zip(hi.iter()) {
        *x = x.max(*l).min(*h);
    }
}

/// State references for `N` knots and input references for `N − 1` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x_ref: Vec<Vector>,
    pub u_ref: Vec<Vector>,
}

impl Reference {
    pub fn zeros(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            x_ref: vec![Vector::zeros(n); horizon],
            u_ref: vec![Vector::zeros(m); horizon - 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.x_ref.len()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            x_ref: self.x_ref.iter().map(|x| x * alpha).collect(),
            u_ref: self.u_ref.iter().map(|u| u * alpha).collect(),
        }
    }
}

/// How the penalty parameter is handled during a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// ρ stays at its initial value.
    Fixed,
    /// Residual-balanced ρ with first-order Taylor cache refresh.
    Adaptive,
    /// Residual-balanced ρ with an exact cache rebuild on every change.
    FullRecompute,
}

impl fmt::Display for RhoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RhoMode::Fixed => "fixed",
            RhoMode::Adaptive => "adaptive",
            RhoMode::FullRecompute => "full_recompute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub rho0: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// ρ-update period in iterations.
    pub tau: usize,
    pub eps_prim: f64,
    pub eps_dual: f64,
    pub max_iters: usize,
    /// Floor on the residual-scaling denominators.
    pub phi: f64,
    pub mode: RhoMode,
    /// Re-derive the Taylor cache from the offline cache every this many
    /// refreshes instead of chaining. `None` chains indefinitely.
    pub rebase_every: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rho0: 85.0,
            rho_min: 1e-2,
            rho_max: 1e3,
            tau: 5,
            eps_prim: 1e-3,
            eps_dual: 1e-3,
            max_iters: 500,
            phi: 1e-8,
            mode: RhoMode::Adaptive,
            rebase_every: None,
        }
    }
}

impl SolverSettings {
    pub fn with_mode(mut self, mode: RhoMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0 < self.rho_min && self.rho_min <= self.rho0 && self.rho0 <= self.rho_max) {
            v.push(format!(
                "rho bounds must satisfy 0 < rho_min <= rho0 <= rho_max (got {} <= {} <= {})",
                self.rho_min, self.rho0, self.rho_max
            ));
        }
        if self.tau < 1 {
            v.push("tau must be >= 1".into());
        }
        if !(self.eps_prim > 0.0 && self.eps_dual > 0.0) {
            v.push("stopping tolerances must be positive".into());
        }
        if self.max_iters < 1 {
            v.push("max_iters must be >= 1".into());
        }
        if !(self.phi > 0.0) {
            v.push("phi must be positive".into());
        }
        if self.rebase_every == Some(0) {
            v.push("rebase_every must be >= 1 when set".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v.join("; ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub model: LtiModel,
    pub cost: CostSpec,
    pub bounds: BoxConstraints,
    pub horizon: usize,
}

impl MpcProblem {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }
}

/// One violated problem invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { what: &'static str, expected: String, found: String },
    NotSymmetric(&'static str),
    NotPsd { what: &'static str, min_eigenvalue: f64 },
    RNotPositiveDefinite { min_eigenvalue: f64 },
    Uncontrollable { rank: usize, n: usize },
    BoundsInverted { what: &'static str, index: usize },
    NonPositive { what: &'static str, value: f64 },
    HorizonTooShort(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { what, expected, found } => {
                write!(f, "{what} has shape {found}, expected {expected}")
            }
            Violation::NotSymmetric(what) => write!(f, "{what} not symmetric"),
            Violation::NotPsd { what, min_eigenvalue } => write!(
                f,
                "{what} not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
            Violation::RNotPositiveDefinite { min_eigenvalue } => write!(
                f,
                "R not positive definite (min eigenvalue {min_eigenvalue:e})"
            ),
            Violation::Uncontrollable { rank, n } => {
                write!(f, "controllability rank {rank} < {n}")
            }
            Violation::BoundsInverted { what, index } => {
                write!(f, "{what} lower bound exceeds upper bound at index {index}")
            }
            Violation::NonPositive { what, value } => {
                write!(f, "{what} must be positive, got {value}")
            }
            Violation::HorizonTooShort(n) => write!(f, "horizon N = {n} < 2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_pass() {
            Ok(())
        } else {
            Err(Error::Invalid(self.messages().join("; ")))
        }
    }
}

fn shape(m: &Mat) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn check_shape(out: &mut Vec<Violation>, what: &'static str, m: &Mat, r: usize, c: usize) -> bool {
    if m.nrows() == r && m.ncols() == c {
        true
    } else {
        out.push(Violation::Shape {
            what,
            expected: format!("{r}x{c}"),
            found: shape(m),
        });
        false
    }
}

fn check_psd(out: &mut Vec<Violation>, what: &'static str, m: &Mat) {
    if !linalg::is_symmetric(m, 1e-12) {
        out.push(Violation::NotSymmetric(what));
        return;
    }
    let min = linalg::min_sym_eigenvalue(m);
    if min < PSD_TOL {
        out.push(Violation::NotPsd {
            what,
            min_eigenvalue: min,
        });
    }
}

fn check_bounds(out: &mut Vec<Violation>, what: &'static str, lo: &Vector, hi: &Vector, len: usize) {
    if lo.len() != len || hi.len() != len {
        out.push(Violation::Shape {
            what,
            expected: format!("{len}"),
            found: format!("{}/{}", lo.len(), hi.len()),
        });
        return;
    }
    if let Some(index) = lo.iter().zip(hi.iter()).position(|(l, h)| !(l <= h)) {
        out.push(Violation::BoundsInverted { what, index });
    }
}

/// Checks every problem invariant and reports all violations found.
pub fn validate(problem: &MpcProblem) -> ValidationReport {
    let mut v = Vec::new();
    let model = &problem.model;
    let (n, m) = (model.a.nrows(), model.b.ncols());

    let a_ok = n >= 1 && check_shape(&mut v, "A", &model.a, n, n);
    let b_ok = m >= 1 && check_shape(&mut v, "B", &model.b, n, m);
    if !(model.dt > 0.0) {
        v.push(Violation::NonPositive {
            what: "dt",
            value: model.dt,
        });
    }
    if a_ok && b_ok {
        let rank = model.controllability_rank();
        if rank < n {
            v.push(Violation::Uncontrollable { rank, n });
        }
    }

    let cost = &problem.cost;
    if check_shape(&mut v, "Q", &cost.q, n, n) {
        check_psd(&mut v, "Q", &cost.q);
    }
    if check_shape(&mut v, "Qf", &cost.qf, n, n) {
        check_psd(&mut v, "Qf", &cost.qf);
    }
    if check_shape(&mut v, "R", &cost.r, m, m) {
        if !linalg::is_symmetric(&cost.r, 1e-12) {
            v.push(Violation::NotSymmetric("R"));
        } else {
            let min = linalg::min_sym_eigenvalue(&cost.r);
            if !(min > 0.0) {
                v.push(Violation::RNotPositiveDefinite { min_eigenvalue: min });
            }
        }
    }

    let b = &problem.bounds;
    check_bounds(&mut v, "state bounds", &b.x_min, &b.x_max, n);
    check_bounds(&mut v, "input bounds", &b.u_min, &b.u_max, m);

    if problem.horizon < 2 {
        v.push(Violation::HorizonTooShort(problem.horizon));
    }
    ValidationReport { violations: v }
}

/// Tracking cost vectors derived from a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCosts {
    /// `q_k`, one per non-terminal knot.
    pub q: Vec<Vector>,
    /// `r_k`, one per input knot.
    pub r: Vec<Vector>,
    pub q_f: Vector,
}

/// `q_k = −Q x_ref,k`, `r_k = −R u_ref,k`, `q_f = −Qf x_ref,N`.
pub fn reference_to_linear_costs(cost: &CostSpec, reference: &Reference, horizon: usize) -> Result<LinearCosts> {
    let n = cost.q.nrows();
    let m = cost.r.nrows();
    if reference.x_ref.len() != horizon || reference.u_ref.len() + 1 != horizon {
        return Err(Error::Dimension(format!(
            "reference has {} states and {} inputs, horizon {horizon} needs {horizon} and {}",
            reference.x_ref.len(),
            reference.u_ref.len(),
            horizon.saturating_sub(1)
        )));
    }
    if let Some(k) = reference.x_ref.iter().position(|x| x.len() != n) {
        return Err(Error::Dimension(format!("x_ref[{k}] has length {}, expected {n}", reference.x_ref[k].len())));
    }
    if let Some(k) = reference.u_ref.iter().position(|u| u.len() != m) {
        return Err(Error::Dimension(format!("u_ref[{k}] has length {}, expected {m}", reference.u_ref[k].len())));
    }
    let q = reference.x_ref[..horizon - 1].iter().map(|x| -(&cost.q * x)).collect();
    let r = reference.u_ref.iter().map(|u| -(&cost.r * u)).collect();
    let q_f = -(&cost.qf * &reference.x_ref[horizon - 1]);
    Ok(LinearCosts { q, r, q_f })
}

// ---------------------------------------------------------------------------
// Problem files

/// A bound entry in a problem file: a number, `null`, or one of the strings
/// `"inf"` / `"-inf"`. `null` means unbounded in the direction of the field.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BoundEntry(Option<f64>);

impl Serialize for BoundEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) if v.is_finite() => s.serialize_f64(v),
            _ => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for BoundEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
            Null(()),
        }
        match Option::<Raw>::deserialize(d)? {
            None | Some(Raw::Null(())) => Ok(BoundEntry(None)),
            Some(Raw::Num(v)) => Ok(BoundEntry(Some(v))),
            Some(Raw::Text(t)) => match t.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(BoundEntry(Some(f64::INFINITY))),
                "-inf" | "-Infinity" => Ok(BoundEntry(Some(f64::NEG_INFINITY))),
                other => Err(serde::de::Error::custom(format!("invalid bound {other:?}"))),
            },
        }
    }
}

/// On-disk problem description (JSON, row-major nested arrays).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ProblemFile {
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub Q: Vec<Vec<f64>>,
    pub R: Vec<Vec<f64>>,
    pub Qf: Vec<Vec<f64>>,
    #[serde(default)]
    x_min: Option<Vec<BoundEntry>>,
    #[serde(default)]
    x_max: Option<Vec<BoundEntry>>,
    #[serde(default)]
    u_min: Option<Vec<BoundEntry>>,
    #[serde(default)]
    u_max: Option<Vec<BoundEntry>>,
    pub N: usize,
    pub dt: f64,
}

fn mat_from_rows(what: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{what}: row {i} has {} entries, expected {c}", rows[i].len())));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn bounds_from(entries: &Option<Vec<BoundEntry>>, len: usize, default: f64, what: &str) -> Result<Vector> {
    match entries {
        None => Ok(Vector::from_element(len, default)),
        Some(e) if e.len() == len => Ok(Vector::from_iterator(len, e.iter().map(|b| b.0.unwrap_or(default)))),
        Some(e) => Err(Error::Dimension(format!("{what} has {} entries, expected {len}", e.len()))),
    }
}

fn bounds_to(v: &Vector) -> Option<Vec<BoundEntry>> {
    Some(v.iter().map(|x| BoundEntry(Some(*x))).collect())
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<MpcProblem> {
        let a = mat_from_rows("A", &self.A)?;
        let b = mat_from_rows("B", &self.B)?;
        let model = LtiModel::new(a, b, self.dt)?;
        let (n, m) = (model.n(), model.m());
        let cost = CostSpec::new(
            mat_from_rows("Q", &self.Q)?,
            mat_from_rows("R", &self.R)?,
            mat_from_rows("Qf", &self.Qf)?,
        );
        let bounds = BoxConstraints {
            x_min: bounds_from(&self.x_min, n, f64::NEG_INFINITY, "x_min")?,
            x_max: bounds_from(&self.x_max, n, f64::INFINITY, "x_max")?,
            u_min: bounds_from(&self.u_min, m, f64::NEG_INFINITY, "u_min")?,
            u_max: bounds_from(&self.u_max, m, f64::INFINITY, "u_max")?,
        };
        Ok(MpcProblem {
            model,
            cost,
            bounds,
            horizon: self.N,
        })
    }

    pub fn from_problem(p: &MpcProblem) -> Self {
        Self {
            A: mat_to_rows(&p.model.a),
            B: mat_to_rows(&p.model.b),
            Q: mat_to_rows(&p.cost.q),
            R: mat_to_rows(&p.cost.r),
            Qf: mat_to_rows(&p.cost.qf),
            x_min: bounds_to(&p.bounds.x_min),
            x_max: bounds_to(&p.bounds.x_max),
            u_min: bounds_to(&p.bounds.u_min),
            u_max: bounds_to(&p.bounds.u_max),
            N: p.horizon,
            dt: p.model.dt,
        }
    }
}

impl MpcProblem {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ProblemFile>(text)?.into_problem()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProblemFile::from_problem(self)).expect("problem serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
