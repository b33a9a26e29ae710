//! Linearized quadrotor plant and closed-loop MPC scenarios.
//!
//! State layout: position (3), roll/pitch/yaw (3), linear velocity (3),
//! body rates (3). Inputs: collective thrust and three body torques, all as
//! deviations from hover and scaled by [`QuadrotorParams`].

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{self, SolveStatus, SolverState};
use crate::cache::{CacheSensitivity, LqrCache};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{BoxConstraints, CostSpec, LtiModel, MpcProblem, Reference, SolverSettings};

pub const NX: usize = 12;
pub const NU: usize = 4;

const POS: usize = 0;
const ATT: usize = 3;
const VEL: usize = 6;
const RATE: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// m/s²
    pub gravity: f64,
    /// s
    pub dt: f64,
    /// Diagonal inertia, kg·m².
    pub inertia: [f64; 3],
    /// Newtons of collective thrust per unit of the first input.
    pub thrust_scale: f64,
    /// Newton-metres of body torque per unit of the torque inputs.
    pub torque_scale: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.035,
            gravity: 9.81,
            dt: 0.02,
            inertia: [1.66e-5, 1.66e-5, 2.93e-5],
            thrust_scale: 0.035 * 9.81,
            torque_scale: 1e-4,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let mut all = vec![
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("thrust_scale", self.thrust_scale),
            ("torque_scale", self.torque_scale),
        ];
        all.extend(self.inertia.iter().map(|i| ("inertia", *i)));
        match all.iter().find(|(_, v)| !(*v > 0.0)) {
            Some((name, v)) => Err(Error::Invalid(format!("{name} must be positive, got {v}"))),
            None => Ok(()),
        }
    }
}

/// Near-hover small-angle linearization discretized with a zero-order hold.
pub fn build_quadrotor_model(params: &QuadrotorParams) -> Result<LtiModel> {
    params.validate()?;
    let mut ac = Mat::zeros(NX, NX);
    let mut bc = Mat::zeros(NX, NU);
    for i in 0..3 {
        ac[(POS + i, VEL + i)] = 1.0;
        ac[(ATT + i, RATE + i)] = 1.0;
        bc[(RATE + i, 1 + i)] = params.torque_scale / params.inertia[i];
    }
    // small tilt redirects thrust: pitch accelerates +x, roll accelerates −y
    ac[(VEL, ATT + 1)] = params.gravity;
    ac[(VEL + 1, ATT)] = -params.gravity;
    bc[(VEL + 2, 0)] = params.thrust_scale / params.mass;

    let mut aug = DMatrix::zeros(NX + NU, NX + NU);
    aug.view_mut((0, 0), (NX, NX)).copy_from(&(ac * params.dt));
    aug.view_mut((0, NX), (NX, NU)).copy_from(&(bc * params.dt));
    let phi = aug.exp();
    let a = phi.view((0, 0), (NX, NX)).into_owned();
    let b = phi.view((0, NX), (NX, NU)).into_owned();
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::Invalid("discretization produced non-finite entries".into()));
    }
    LtiModel::new(a, b, params.dt)
}

/// Diagonal tracking weights per state group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub position: f64,
    pub attitude: f64,
    pub velocity: f64,
    pub rate: f64,
    pub input: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            position: 100.0,
            attitude: 10.0,
            velocity: 1.0,
            rate: 1.0,
            input: 1.0,
        }
    }
}

impl CostWeights {
    pub fn cost(&self) -> CostSpec {
        let mut q = [0.0; NX];
        for i in 0..3 {
            q[POS + i] = self.position;
            q[ATT + i] = self.attitude;
            q[VEL + i] = self.velocity;
            q[RATE + i] = self.rate;
        }
        CostSpec::diagonal(&q, &[self.input; NU])
    }
}

/// Symmetric box limits per state group and per input. Use `f64::INFINITY`
/// (or `null` in files) for unbounded groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    #[serde(with = "inf_as_null")]
    pub position: f64,
    #[serde(with = "inf_as_null")]
    pub attitude: f64,
    #[serde(with = "inf_as_null")]
    pub velocity: f64,
    #[serde(with = "inf_as_null")]
    pub rate: f64,
    #[serde(with = "inf_as_null")]
    pub thrust: f64,
    #[serde(with = "inf_as_null")]
    pub torque: f64,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            position: 5.0,
            attitude: 0.5,
            velocity: 5.0,
            rate: 10.0,
            thrust: 0.5,
            torque: 1.0,
        }
    }
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl BoundSpec {
    /// Bounds centred on `centre` (the altitude offset of the reference).
    pub fn constraints(&self, altitude: f64) -> BoxConstraints {
        let mut hi = [0.0; NX];
        for i in 0..3 {
            hi[POS + i] = self.position;
            hi[ATT + i] = self.attitude;
            hi[VEL + i] = self.velocity;
            hi[RATE + i] = self.rate;
        }
        let x_max = Vector::from_column_slice(&hi);
        let mut x_min = -&x_max;
        let mut x_max = x_max;
        x_min[POS + 2] += altitude;
        x_max[POS + 2] += altitude;
        let u_max = Vector::from_column_slice(&[self.thrust, self.torque, self.torque, self.torque]);
        BoxConstraints {
            x_min,
            u_min: -&u_max,
            x_max,
            u_max,
        }
    }
}

/// Parameters of the Lissajous figure-eight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig8Params {
    /// s
    pub period: f64,
    /// m
    pub amp_x: f64,
    /// m
    pub amp_y: f64,
    /// Height above the linearization point, m. Positions are deviations
    /// from the hover point, so 0 keeps the reference at the origin.
    pub altitude: f64,
}

impl Default for Fig8Params {
    fn default() -> Self {
        Self {
            period: 6.0,
            amp_x: 0.5,
            amp_y: 0.5,
            altitude: 0.0,
        }
    }
}

/// State and input reference at time `t`.
pub fn fig8_reference(t: f64, cfg: &Fig8Params) -> (Vector, Vector) {
    let w = 2.0 * PI / cfg.period;
    let mut x = Vector::zeros(NX);
    x[POS] = cfg.amp_x * (w * t).sin();
    x[POS + 1] = cfg.amp_y * (2.0 * w * t).sin();
    x[POS + 2] = cfg.altitude;
    x[VEL] = cfg.amp_x * w * (w * t).cos();
    x[VEL + 1] = cfg.amp_y * 2.0 * w * (2.0 * w * t).cos();
    (x, Vector::zeros(NU))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindModel {
    /// Acceleration magnitude, m/s².
    pub magnitude: f64,
    pub seed: u64,
    pub enabled: bool,
}

impl Default for WindModel {
    fn default() -> Self {
        Self {
            magnitude: 25.5,
            seed: 0,
            enabled: false,
        }
    }
}

/// `m·(cos θ, sin θ, η)` with `θ ~ U(0, 2π)`, `η ~ U(−0.3, 0.3)`.
pub fn sample_wind<R: Rng + ?Sized>(wind: &WindModel, rng: &mut R) -> [f64; 3] {
    let theta: f64 = rng.random_range(0.0..2.0 * PI);
    let eta: f64 = rng.random_range(-0.3..0.3);
    let m = wind.magnitude;
    [m * theta.cos(), m * theta.sin(), m * eta]
}

/// Wind at a given plant step: a pure function of the seed and the step.
pub fn wind_at(wind: &WindModel, step: usize) -> [f64; 3] {
    if !wind.enabled {
        return [0.0; 3];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(wind.seed);
    rng.set_stream(step as u64);
    sample_wind(wind, &mut rng)
}

/// `A x + B u + E w`, with `E` adding `dt·w` to the linear velocities.
pub fn step_plant(model: &LtiModel, x: &Vector, u: &Vector, wind_accel: &[f64; 3]) -> Vector {
    let mut next = model.step(x, u);
    for i in 0..3 {
        next[VEL + i] += model.dt * wind_accel[i];
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Hover,
    FigureEight,
}

/// Initial deviation from the reference for hover runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialOffset {
    /// m, applied to each position axis.
    pub position: f64,
    /// degrees, applied to roll and pitch.
    pub tilt_deg: f64,
}

impl Default for InitialOffset {
    fn default() -> Self {
        Self {
            position: 0.2,
            tilt_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub horizon: usize,
    pub steps: usize,
    pub solver: SolverSettings,
    pub wind: WindModel,
    pub fig8: Fig8Params,
    pub initial_offset: InitialOffset,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::hover()
    }
}

impl ScenarioConfig {
    /// The upper penalty bound of both presets is twice the initial value:
    /// beyond that the first-order refresh of `C1` loses definiteness on
    /// the default quadrotor.
    pub fn hover() -> Self {
        Self {
            kind: ScenarioKind::Hover,
            horizon: 10,
            steps: 100,
            solver: SolverSettings {
                rho0: 85.0,
                rho_max: 170.0,
                eps_prim: 1e-2,
                eps_dual: 1e-2,
                max_iters: 500,
                ..Default::default()
            },
            wind: WindModel::default(),
            fig8: Fig8Params::default(),
            initial_offset: InitialOffset::default(),
        }
    }

    pub fn figure_eight() -> Self {
        Self {
            kind: ScenarioKind::FigureEight,
            horizon: 15,
            steps: 600,
            solver: SolverSettings {
                rho0: 5.0,
                rho_max: 10.0,
                eps_prim: 1e-3,
                eps_dual: 1e-3,
                max_iters: 10,
                tau: 5,
                ..Default::default()
            },
            wind: WindModel::default(),
            fig8: Fig8Params::default(),
            initial_offset: InitialOffset::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.horizon < 2 {
            return Err(Error::Invalid(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if !(self.wind.magnitude >= 0.0) {
            return Err(Error::Invalid("wind magnitude must be >= 0".into()));
        }
        if self.kind == ScenarioKind::FigureEight && !(self.fig8.period > 0.0) {
            return Err(Error::Invalid("figure-eight period must be positive".into()));
        }
        Ok(())
    }

    /// Reference state at absolute time `t`.
    pub fn reference_state(&self, t: f64) -> Vector {
        match self.kind {
            ScenarioKind::Hover => {
                let mut x = Vector::zeros(NX);
                x[POS + 2] = self.fig8.altitude;
                x
            }
            ScenarioKind::FigureEight => fig8_reference(t, &self.fig8).0,
        }
    }

    pub fn horizon_reference(&self, t0: f64, dt: f64) -> Reference {
        Reference {
            x_ref: (0..self.horizon).map(|k| self.reference_state(t0 + k as f64 * dt)).collect(),
            u_ref: vec![Vector::zeros(NU); self.horizon - 1],
        }
    }

    pub fn initial_state(&self) -> Vector {
        let mut x = self.reference_state(0.0);
        if self.kind == ScenarioKind::Hover {
            for i in 0..3 {
                x[POS + i] += self.initial_offset.position;
            }
            let tilt = self.initial_offset.tilt_deg.to_radians();
            x[ATT] += tilt;
            x[ATT + 1] += tilt;
        }
        x
    }
}

/// One MPC step of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub reference: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rho: f64,
    pub prim_residual: f64,
    pub dual_residual: f64,
    pub position_error: f64,
    /// Disturbance acceleration applied during this step, m/s².
    pub wind: [f64; 3],
    /// Seconds; not part of the deterministic record.
    #[serde(skip)]
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceAggregates {
    pub avg_l2_error: f64,
    pub max_l2_error: f64,
    pub avg_iterations: f64,
    pub total_iterations: usize,
}

impl TraceAggregates {
    pub fn from_rows(rows: &[TraceRow]) -> Self {
        if rows.is_empty() {
            return Self::default();
        }
        let total_iterations: usize = rows.iter().map(|r| r.iterations).sum();
        let err_sum: f64 = rows.iter().map(|r| r.position_error).sum();
        Self {
            avg_l2_error: err_sum / rows.len() as f64,
            max_l2_error: rows.iter().map(|r| r.position_error).fold(0.0, f64::max),
            avg_iterations: total_iterations as f64 / rows.len() as f64,
            total_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub rows: Vec<TraceRow>,
    pub aggregates: TraceAggregates,
}

impl ScenarioTrace {
    /// Per-step cumulative iteration counts.
    pub fn cumulative_iterations(&self) -> Vec<usize> {
        self.rows
            .iter()
            .scan(0, |acc, r| {
                *acc += r.iterations;
                Some(*acc)
            })
            .collect()
    }
}

fn position_error(x: &Vector, r: &Vector) -> f64 {
    (0..3).map(|i| (x[POS + i] - r[POS + i]).powi(2)).sum::<f64>().sqrt()
}

/// Runs `cfg.steps` receding-horizon MPC steps against the linear plant.
pub fn run_closed_loop(
    problem: &MpcProblem,
    cfg: &ScenarioConfig,
    cache: &LqrCache,
    sens: Option<&CacheSensitivity>,
) -> Result<ScenarioTrace> {
    cfg.validate()?;
    if problem.horizon != cfg.horizon {
        return Err(Error::Dimension(format!(
            "problem horizon {} differs from scenario horizon {}",
            problem.horizon, cfg.horizon
        )));
    }
    let model = &problem.model;
    let dt = model.dt;
    let mut x = cfg.initial_state();
    let mut warm: Option<SolverState> = None;
    let mut rows = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let t = step as f64 * dt;
        let reference = cfg.horizon_reference(t, dt);
        let started = Instant::now();
        let (result, mut state) = admm::solve(problem, cache, sens, &cfg.solver, &reference, &x, warm.take())?;
        let solve_seconds = started.elapsed().as_secs_f64();

        let r0 = &reference.x_ref[0];
        let wind = wind_at(&cfg.wind, step);
        rows.push(TraceRow {
            step,
            state: x.iter().copied().collect(),
            input: result.u0.iter().copied().collect(),
            reference: r0.iter().copied().collect(),
            iterations: result.iterations,
            converged: result.status == SolveStatus::Converged,
            rho: result.rho_final,
            prim_residual: result.residuals.prim_norm,
            dual_residual: result.residuals.dual_norm,
            position_error: position_error(&x, r0),
            wind,
            solve_seconds,
        });

        x = step_plant(model, &x, &result.u0, &wind);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("plant state diverged at step {step}")));
        }
        state.shift();
        warm = Some(state);
    }

    let aggregates = TraceAggregates::from_rows(&rows);
    Ok(ScenarioTrace { rows, aggregates })
}

/// Quadrotor MPC problem for a scenario, built from `params`.
pub fn quadrotor_problem(
    params: &QuadrotorParams,
    weights: &CostWeights,
    bounds: &BoundSpec,
    cfg: &ScenarioConfig,
) -> Result<MpcProblem> {
    scenario_problem(build_quadrotor_model(params)?, weights, bounds, cfg)
}

/// Scenario problem around an arbitrary 12-state, 4-input hover model, with
/// the terminal weight the cached solver implements at the initial penalty.
pub fn scenario_problem(model: LtiModel, weights: &CostWeights, bounds: &BoundSpec, cfg: &ScenarioConfig) -> Result<MpcProblem> {
    if model.n() != NX || model.m() != NU {
        return Err(Error::Dimension(format!(
            "quadrotor scenarios need a {NX}-state, {NU}-input model, got n={}, m={}",
            model.n(),
            model.m()
        )));
    }
    let mut cost = weights.cost();
    cost.qf = crate::cache::implied_terminal_weight(&model, &cost, cfg.solver.rho0)?;
    Ok(MpcProblem {
        model,
        cost,
        bounds: bounds.constraints(cfg.fig8.altitude),
        horizon: cfg.horizon,
    })
}
