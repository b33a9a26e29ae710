//! Random-system benchmark: single cold-start solves of random tracking
//! problems on random controllable systems, fixed penalty against adaptive.

use std::path::Path;
use std::time::Instant;

use foac_core::linalg::{self, Mat, Vector};
use foac_core::{
    build_with_sensitivities, solve, BoxConstraints, CostSpec, LtiModel, MpcProblem, Reference, RhoMode,
    SolveStatus, SolverSettings,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::report::{self, fmt_f64, input_digest, BenchReport, OutputPaths, Stats, TimingReport};
use crate::setup::invalid;

pub const MAX_GENERATION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSystemSpec {
    pub n: usize,
    pub m: usize,
    pub systems: usize,
    pub problems_per_system: usize,
    pub seed: u64,
    /// Spectral radius `A` is rescaled to.
    pub spectral_radius: f64,
}

impl Default for RandomSystemSpec {
    fn default() -> Self {
        Self {
            n: 12,
            m: 4,
            systems: 20,
            problems_per_system: 100,
            seed: 0,
            spectral_radius: 0.95,
        }
    }
}

impl RandomSystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(invalid("n and m must be >= 1"));
        }
        if self.systems == 0 {
            return Err(invalid("systems must be >= 1"));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius <= 1.05) {
            return Err(invalid(format!(
                "spectral_radius must lie in (0, 1.05], got {}",
                self.spectral_radius
            )));
        }
        Ok(())
    }
}

/// Per-system problem shape. Box sizes are multiples of the system's
/// envelope: the per-state reach of unit-bounded inputs over the horizon,
/// `u_bound · sqrt(diag Σ_k A^k B Bᵀ A^kᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemShape {
    pub horizon: usize,
    pub state_weight: f64,
    pub input_weight: f64,
    pub input_bound: f64,
    /// State bounds as a multiple of the envelope.
    pub state_bound_scale: f64,
    /// Reference box as a multiple of the envelope.
    pub reference_scale: f64,
    /// Initial-state box as a multiple of the envelope.
    pub initial_scale: f64,
}

impl Default for ProblemShape {
    fn default() -> Self {
        Self {
            horizon: 10,
            state_weight: 1.0,
            input_weight: 1.0,
            input_bound: 1.0,
            state_bound_scale: 1.0,
            reference_scale: 1.0,
            initial_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomBenchConfig {
    pub spec: RandomSystemSpec,
    pub shape: ProblemShape,
    /// Shared by both arms; `mode` is overridden per arm.
    pub solver: SolverSettings,
    /// Histogram resolution of the iteration CDF table.
    pub cdf_step: usize,
}

impl Default for RandomBenchConfig {
    fn default() -> Self {
        Self {
            spec: RandomSystemSpec::default(),
            shape: ProblemShape::default(),
            solver: SolverSettings {
                rho0: 85.0,
                rho_max: 170.0,
                max_iters: 500,
                ..Default::default()
            },
            cdf_step: 10,
        }
    }
}

impl RandomBenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.solver.validate()?;
        let s = &self.shape;
        if s.horizon < 2 {
            return Err(invalid("horizon must be >= 2"));
        }
        for (name, v) in [
            ("state_weight", s.state_weight),
            ("input_weight", s.input_weight),
            ("input_bound", s.input_bound),
            ("state_bound_scale", s.state_bound_scale),
        ] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("reference_scale", s.reference_scale), ("initial_scale", s.initial_scale)] {
            if !(v >= 0.0) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.cdf_step == 0 {
            return Err(invalid("cdf_step must be >= 1"));
        }
        Ok(())
    }
}

/// Stream reserved for system generation; trial streams use the low 32 bits
/// below it.
const SYSTEM_STREAM: u64 = u32::MAX as u64;

/// Independent stream for `(system, slot)` under the master seed.
pub fn stream(seed: u64, system: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((system as u64) << 32) | slot);
    rng
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Standard-normal `A` rescaled to the target spectral radius and
/// standard-normal `B`, resampled until `(A, B)` is controllable.
pub fn generate_random_system<R: Rng + ?Sized>(rng: &mut R, spec: &RandomSystemSpec) -> Result<LtiModel> {
    spec.validate()?;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let a = normal_matrix(rng, spec.n, spec.n);
        let b = normal_matrix(rng, spec.n, spec.m);
        let sr = linalg::spectral_radius(&a);
        if !(sr > 0.0) {
            continue;
        }
        let model = LtiModel::new(a * (spec.spectral_radius / sr), b, 1.0)?;
        if model.is_controllable() {
            return Ok(model);
        }
    }
    Err(invalid(format!(
        "no controllable system after {MAX_GENERATION_ATTEMPTS} attempts"
    )))
}

/// Per-state reach of inputs bounded by `u_bound` over `horizon` steps.
pub fn envelope(model: &LtiModel, horizon: usize, u_bound: f64) -> Vector {
    let n = model.n();
    let mut gram = Mat::zeros(n, n);
    let mut akb = model.b.clone();
    for _ in 0..horizon {
        gram += &akb * akb.transpose();
        akb = &model.a * akb;
    }
    Vector::from_iterator(n, (0..n).map(|i| u_bound * gram[(i, i)].sqrt()))
}

/// Tracking problem for one random system. Boxes are scaled from the reachable
/// envelope, returned alongside; `Qf` is the terminal weight implied at `rho0`.
pub fn system_problem(model: LtiModel, shape: &ProblemShape, rho0: f64) -> Result<(MpcProblem, Vector)> {
    let (n, m) = (model.n(), model.m());
    let env = envelope(&model, shape.horizon, shape.input_bound);
    let mut cost = CostSpec::new(
        Mat::identity(n, n) * shape.state_weight,
        Mat::identity(m, m) * shape.input_weight,
        Mat::zeros(n, n),
    );
    cost.qf = foac_core::cache::implied_terminal_weight(&model, &cost, rho0)?;
    let x_max = &env * shape.state_bound_scale;
    let u_max = Vector::from_element(m, shape.input_bound);
    let bounds = BoxConstraints {
        x_min: -&x_max,
        x_max,
        u_min: -&u_max,
        u_max,
    };
    Ok((
        MpcProblem {
            model,
            cost,
            bounds,
            horizon: shape.horizon,
        },
        env,
    ))
}

fn uniform_box<R: Rng + ?Sized>(rng: &mut R, half: &Vector) -> Vector {
    Vector::from_iterator(half.len(), half.iter().map(|h| h * rng.random_range(-1.0..=1.0)))
}

/// Random initial state and reference for one trial.
pub fn sample_trial<R: Rng + ?Sized>(rng: &mut R, env: &Vector, m: usize, shape: &ProblemShape) -> (Vector, Reference) {
    let x0 = uniform_box(rng, &(env * shape.initial_scale));
    let x_half = env * shape.reference_scale;
    let u_half = Vector::from_element(m, shape.input_bound * shape.reference_scale);
    let x_ref = (0..shape.horizon).map(|_| uniform_box(rng, &x_half)).collect();
    let u_ref = (0..shape.horizon - 1).map(|_| uniform_box(rng, &u_half)).collect();
    (x0, Reference { x_ref, u_ref })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub system: usize,
    pub trial: usize,
    pub input_digest: String,
    pub fixed_iterations: usize,
    pub fixed_converged: bool,
    pub adaptive_iterations: usize,
    pub adaptive_converged: bool,
    pub adaptive_final_rho: f64,
    #[serde(skip)]
    pub fixed_seconds: f64,
    #[serde(skip)]
    pub adaptive_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub iterations: Stats,
    /// Fraction of trials that met the stopping criteria before the cap.
    pub under_cap_fraction: f64,
    pub capped_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSystem {
    pub system: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBenchSummary {
    pub trials: usize,
    pub fixed: ModeSummary,
    pub adaptive: ModeSummary,
    /// Mean-iteration reduction of adaptive relative to fixed, percent.
    pub mean_reduction_pct: Option<f64>,
    /// `(threshold, fixed fraction ≤ threshold, adaptive fraction ≤ threshold)`
    pub cdf: Vec<(usize, f64, f64)>,
    pub skipped_systems: Vec<SkippedSystem>,
}

pub struct RandomBenchOutcome {
    pub report: BenchReport<RandomBenchConfig, RandomBenchSummary>,
    pub trials: Vec<TrialRecord>,
}

fn mode_summary(iters: &[usize], converged: &[bool]) -> ModeSummary {
    let samples: Vec<f64> = iters.iter().map(|&i| i as f64).collect();
    let n_ok = converged.iter().filter(|c| **c).count();
    ModeSummary {
        iterations: Stats::from_samples(&samples),
        under_cap_fraction: if converged.is_empty() {
            0.0
        } else {
            n_ok as f64 / converged.len() as f64
        },
        capped_trials: converged.len() - n_ok,
    }
}

fn cdf_table(fixed: &[usize], adaptive: &[usize], step: usize, cap: usize) -> Vec<(usize, f64, f64)> {
    let frac = |v: &[usize], t: usize| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().filter(|&&i| i <= t).count() as f64 / v.len() as f64
        }
    };
    (step..=cap)
        .step_by(step)
        .chain((cap % step != 0).then_some(cap))
        .map(|t| (t, frac(fixed, t), frac(adaptive, t)))
        .collect()
}

struct SystemData {
    index: usize,
    problem: MpcProblem,
    envelope: Vector,
    cache: foac_core::LqrCache,
    sens: foac_core::CacheSensitivity,
}

pub fn run(cfg: &RandomBenchConfig) -> Result<RandomBenchOutcome> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let built: Vec<std::result::Result<SystemData, SkippedSystem>> = (0..spec.systems)
        .into_par_iter()
        .map(|index| {
            let skip = |reason: String| SkippedSystem { system: index, reason };
            let mut rng = stream(spec.seed, index, SYSTEM_STREAM);
            let model = generate_random_system(&mut rng, spec).map_err(|e| skip(e.to_string()))?;
            let (problem, envelope) = system_problem(model, &cfg.shape, cfg.solver.rho0).map_err(|e| skip(e.to_string()))?;
            let (cache, sens) = build_with_sensitivities(&problem.model, &problem.cost, cfg.solver.rho0)
                .map_err(|e| skip(e.to_string()))?;
            Ok(SystemData {
                index,
                problem,
                envelope,
                cache,
                sens,
            })
        })
        .collect();
    let mut systems = vec![];
    let mut skipped = vec![];
    for b in built {
        match b {
            Ok(s) => systems.push(s),
            Err(s) => skipped.push(s),
        }
    }

    let jobs: Vec<(&SystemData, usize)> = systems
        .iter()
        .flat_map(|s| (0..spec.problems_per_system).map(move |t| (s, t)))
        .collect();
    let fixed_settings = cfg.solver.clone().with_mode(RhoMode::Fixed);
    let adaptive_settings = cfg.solver.clone().with_mode(RhoMode::Adaptive);
    let trials: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(sys, trial)| {
            let mut rng = stream(spec.seed, sys.index, trial as u64);
            let (x0, reference) = sample_trial(&mut rng, &sys.envelope, sys.problem.m(), &cfg.shape);
            let digest = input_digest(
                x0.iter()
                    .chain(reference.x_ref.iter().flat_map(|v| v.iter()))
                    .chain(reference.u_ref.iter().flat_map(|v| v.iter()))
                    .copied(),
            );
            let t = Instant::now();
            let (fixed, _) = solve(&sys.problem, &sys.cache, None, &fixed_settings, &reference, &x0, None)?;
            let fixed_seconds = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let (adaptive, _) = solve(
                &sys.problem,
                &sys.cache,
                Some(&sys.sens),
                &adaptive_settings,
                &reference,
                &x0,
                None,
            )?;
            let adaptive_seconds = t.elapsed().as_secs_f64();
            Ok(TrialRecord {
                system: sys.index,
                trial,
                input_digest: digest,
                fixed_iterations: fixed.iterations,
                fixed_converged: fixed.status == SolveStatus::Converged,
                adaptive_iterations: adaptive.iterations,
                adaptive_converged: adaptive.status == SolveStatus::Converged,
                adaptive_final_rho: adaptive.rho_final,
                fixed_seconds,
                adaptive_seconds,
            })
        })
        .collect::<Result<_>>()?;

    let fi: Vec<usize> = trials.iter().map(|t| t.fixed_iterations).collect();
    let ai: Vec<usize> = trials.iter().map(|t| t.adaptive_iterations).collect();
    let fixed = mode_summary(&fi, &trials.iter().map(|t| t.fixed_converged).collect::<Vec<_>>());
    let adaptive = mode_summary(&ai, &trials.iter().map(|t| t.adaptive_converged).collect::<Vec<_>>());
    let summary = RandomBenchSummary {
        trials: trials.len(),
        mean_reduction_pct: report::reduction_pct(fixed.iterations.mean, adaptive.iterations.mean),
        cdf: cdf_table(&fi, &ai, cfg.cdf_step, cfg.solver.max_iters),
        fixed,
        adaptive,
        skipped_systems: skipped,
    };
    Ok(RandomBenchOutcome {
        report: BenchReport::new("random_bench", cfg.clone(), summary)?,
        trials,
    })
}

pub const CSV_HEADER: [&str; 8] = [
    "system",
    "trial",
    "input_digest",
    "fixed_iterations",
    "fixed_converged",
    "adaptive_iterations",
    "adaptive_converged",
    "adaptive_final_rho",
];

pub fn csv_rows(trials: &[TrialRecord]) -> Vec<Vec<String>> {
    trials
        .iter()
        .map(|t| {
            vec![
                t.system.to_string(),
                t.trial.to_string(),
                t.input_digest.clone(),
                t.fixed_iterations.to_string(),
                t.fixed_converged.to_string(),
                t.adaptive_iterations.to_string(),
                t.adaptive_converged.to_string(),
                fmt_f64(t.adaptive_final_rho),
            ]
        })
        .collect()
}

pub fn write(outcome: &RandomBenchOutcome, dir: &Path) -> Result<OutputPaths> {
    let paths = OutputPaths::new(dir, "random_bench");
    report::create_dir(dir)?;
    report::write_json(&paths.summary, &outcome.report)?;
    report::write_csv(&paths.csv, &CSV_HEADER, &csv_rows(&outcome.trials))?;
    let secs = |f: fn(&TrialRecord) -> f64| Stats::from_samples(&outcome.trials.iter().map(f).collect::<Vec<_>>());
    let timing = TimingReport {
        experiment: "random_bench".into(),
        solve_seconds: vec![
            ("fixed".into(), secs(|t| t.fixed_seconds)),
            ("adaptive".into(), secs(|t| t.adaptive_seconds)),
        ],
    };
    report::write_json(&paths.timing, &timing)?;
    Ok(paths)
}
