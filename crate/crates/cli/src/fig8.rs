//! Figure-eight tracking with and without wind, fixed penalty against
//! adaptive refresh, paired over wind seeds.

use std::path::Path;

use foac_core::quadrotor::{self, ScenarioConfig, ScenarioTrace};
use foac_core::{build_with_sensitivities, CacheSensitivity, LqrCache, MpcProblem, RhoMode};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::random_bench::stream;
use crate::report::{self, fmt_f64, BenchReport, OutputPaths, Stats, TimingReport};
use crate::setup::{invalid, QuadrotorSetup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig8Config {
    pub seed: u64,
    pub plant: QuadrotorSetup,
    pub scenario: ScenarioConfig,
    pub wind: bool,
    /// Number of paired wind seeds.
    pub seeds: usize,
    /// Wind acceleration magnitude, m/s². Ignored when `stability_sweep`
    /// is non-empty.
    pub wind_magnitude: f64,
    /// Candidate magnitudes; the largest one at which every run of both
    /// modes stays within `stable_error_bound` is used.
    pub stability_sweep: Vec<f64>,
    /// m
    pub stable_error_bound: f64,
}

impl Default for Fig8Config {
    fn default() -> Self {
        Self {
            seed: 0,
            plant: QuadrotorSetup::default(),
            scenario: ScenarioConfig::figure_eight(),
            wind: true,
            seeds: 20,
            wind_magnitude: 25.5,
            stability_sweep: vec![],
            stable_error_bound: 1.0,
        }
    }
}

impl Fig8Config {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.wind && self.seeds == 0 {
            return Err(invalid("seeds must be >= 1 when wind is on"));
        }
        if !(self.wind_magnitude >= 0.0) || self.stability_sweep.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("wind magnitudes must be non-negative"));
        }
        if !(self.stable_error_bound > 0.0) {
            return Err(invalid("stable_error_bound must be positive"));
        }
        Ok(())
    }
}

/// Table-style metrics of one mode, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Fig8Metrics {
    pub avg_l2_error: f64,
    pub max_l2_error: f64,
    pub avg_iterations: f64,
    pub total_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed_index: usize,
    pub wind_seed: u64,
    pub fixed_avg_l2_error: f64,
    pub adaptive_avg_l2_error: f64,
    pub fixed_total_iterations: usize,
    pub adaptive_total_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub magnitude: f64,
    pub stable: bool,
    pub worst_max_l2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig8Summary {
    pub wind: bool,
    pub wind_magnitude: f64,
    pub fixed: Fig8Metrics,
    pub adaptive: Fig8Metrics,
    pub error_reduction_pct: Option<f64>,
    pub iteration_reduction_pct: Option<f64>,
    pub per_seed: Vec<SeedResult>,
    pub sweep: Vec<SweepPoint>,
}

pub struct Fig8Outcome {
    pub report: BenchReport<Fig8Config, Fig8Summary>,
    /// `(mode label, seed index, trace)`
    pub traces: Vec<(String, usize, ScenarioTrace)>,
}

fn wind_seed(master: u64, index: usize) -> u64 {
    stream(master, index, 0).random()
}

struct Ctx<'a> {
    problem: &'a MpcProblem,
    cache: &'a LqrCache,
    sens: &'a CacheSensitivity,
}

/// Both modes on the same wind sequence.
fn paired(ctx: &Ctx, base: &ScenarioConfig, wind: Option<(f64, u64)>) -> Result<(ScenarioTrace, ScenarioTrace)> {
    let mut sc = base.clone();
    match wind {
        Some((magnitude, seed)) => {
            sc.wind.enabled = true;
            sc.wind.magnitude = magnitude;
            sc.wind.seed = seed;
        }
        None => sc.wind.enabled = false,
    }
    let mut fixed = sc.clone();
    fixed.solver.mode = RhoMode::Fixed;
    let mut adaptive = sc;
    adaptive.solver.mode = RhoMode::Adaptive;
    Ok((
        quadrotor::run_closed_loop(ctx.problem, &fixed, ctx.cache, None)?,
        quadrotor::run_closed_loop(ctx.problem, &adaptive, ctx.cache, Some(ctx.sens))?,
    ))
}

fn run_seeds(ctx: &Ctx, cfg: &Fig8Config, magnitude: f64) -> Result<Vec<(u64, ScenarioTrace, ScenarioTrace)>> {
    (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = wind_seed(cfg.seed, i);
            let (f, a) = paired(ctx, &cfg.scenario, Some((magnitude, seed)))?;
            Ok((seed, f, a))
        })
        .collect()
}

fn worst_error(runs: &[(u64, ScenarioTrace, ScenarioTrace)]) -> f64 {
    runs.iter()
        .flat_map(|(_, f, a)| [f.aggregates.max_l2_error, a.aggregates.max_l2_error])
        .fold(0.0, f64::max)
}

fn mean_metrics<'a>(traces: impl Iterator<Item = &'a ScenarioTrace>) -> Fig8Metrics {
    let mut out = Fig8Metrics::default();
    let mut count = 0.0;
    for t in traces {
        out.avg_l2_error += t.aggregates.avg_l2_error;
        out.max_l2_error += t.aggregates.max_l2_error;
        out.avg_iterations += t.aggregates.avg_iterations;
        out.total_iterations += t.aggregates.total_iterations as f64;
        count += 1.0;
    }
    if count > 0.0 {
        out.avg_l2_error /= count;
        out.max_l2_error /= count;
        out.avg_iterations /= count;
        out.total_iterations /= count;
    }
    out
}

pub fn run(cfg: &Fig8Config) -> Result<Fig8Outcome> {
    cfg.validate()?;
    let problem = cfg.plant.problem(&cfg.scenario)?;
    let (cache, sens) = build_with_sensitivities(&problem.model, &problem.cost, cfg.scenario.solver.rho0)?;
    let ctx = Ctx {
        problem: &problem,
        cache: &cache,
        sens: &sens,
    };

    let mut sweep = vec![];
    let (magnitude, runs) = if !cfg.wind {
        let (f, a) = paired(&ctx, &cfg.scenario, None)?;
        (0.0, vec![(0, f, a)])
    } else if cfg.stability_sweep.is_empty() {
        (cfg.wind_magnitude, run_seeds(&ctx, cfg, cfg.wind_magnitude)?)
    } else {
        let mut candidates = cfg.stability_sweep.clone();
        candidates.sort_by(|a, b| b.total_cmp(a));
        let mut chosen = None;
        for m in candidates {
            // a diverging plant counts as unstable rather than as an error
            let (stable, worst, runs) = match run_seeds(&ctx, cfg, m) {
                Ok(runs) => {
                    let worst = worst_error(&runs);
                    (worst <= cfg.stable_error_bound, worst, Some(runs))
                }
                Err(_) => (false, f64::INFINITY, None),
            };
            sweep.push(SweepPoint {
                magnitude: m,
                stable,
                worst_max_l2_error: worst,
            });
            if stable {
                chosen = runs.map(|r| (m, r));
                break;
            }
        }
        chosen.ok_or_else(|| invalid("no candidate wind magnitude keeps both modes stable"))?
    };

    let fixed = mean_metrics(runs.iter().map(|(_, f, _)| f));
    let adaptive = mean_metrics(runs.iter().map(|(_, _, a)| a));
    let per_seed = runs
        .iter()
        .enumerate()
        .map(|(i, (seed, f, a))| SeedResult {
            seed_index: i,
            wind_seed: *seed,
            fixed_avg_l2_error: f.aggregates.avg_l2_error,
            adaptive_avg_l2_error: a.aggregates.avg_l2_error,
            fixed_total_iterations: f.aggregates.total_iterations,
            adaptive_total_iterations: a.aggregates.total_iterations,
        })
        .collect();
    let summary = Fig8Summary {
        wind: cfg.wind,
        wind_magnitude: magnitude,
        error_reduction_pct: report::reduction_pct(fixed.avg_l2_error, adaptive.avg_l2_error),
        iteration_reduction_pct: report::reduction_pct(fixed.total_iterations, adaptive.total_iterations),
        fixed,
        adaptive,
        per_seed,
        sweep,
    };
    let traces = runs
        .into_iter()
        .enumerate()
        .flat_map(|(i, (_, f, a))| [("fixed".to_string(), i, f), ("adaptive".to_string(), i, a)])
        .collect();
    Ok(Fig8Outcome {
        report: BenchReport::new("fig8", cfg.clone(), summary)?,
        traces,
    })
}

pub const CSV_HEADER: [&str; 16] = [
    "mode",
    "seed_index",
    "step",
    "x",
    "y",
    "z",
    "x_ref",
    "y_ref",
    "z_ref",
    "iterations",
    "converged",
    "rho",
    "position_error",
    "wind_x",
    "wind_y",
    "wind_z",
];

pub fn csv_rows(traces: &[(String, usize, ScenarioTrace)]) -> Vec<Vec<String>> {
    let mut rows = vec![];
    for (mode, seed, t) in traces {
        for r in &t.rows {
            let mut row = vec![mode.clone(), seed.to_string(), r.step.to_string()];
            row.extend(r.state[..3].iter().map(|v| fmt_f64(*v)));
            row.extend(r.reference[..3].iter().map(|v| fmt_f64(*v)));
            row.extend([
                r.iterations.to_string(),
                r.converged.to_string(),
                fmt_f64(r.rho),
                fmt_f64(r.position_error),
            ]);
            row.extend(r.wind.iter().map(|v| fmt_f64(*v)));
            rows.push(row);
        }
    }
    rows
}

pub fn write(outcome: &Fig8Outcome, dir: &Path) -> Result<OutputPaths> {
    let paths = OutputPaths::new(dir, "fig8");
    report::create_dir(dir)?;
    report::write_json(&paths.summary, &outcome.report)?;
    report::write_csv(&paths.csv, &CSV_HEADER, &csv_rows(&outcome.traces))?;
    let secs = |label: &str| {
        let s: Vec<f64> = outcome
            .traces
            .iter()
            .filter(|(m, _, _)| m == label)
            .flat_map(|(_, _, t)| t.rows.iter().map(|r| r.solve_seconds))
            .collect();
        Stats::from_samples(&s)
    };
    let timing = TimingReport {
        experiment: "fig8".into(),
        solve_seconds: vec![("fixed".into(), secs("fixed")), ("adaptive".into(), secs("adaptive"))],
    };
    report::write_json(&paths.timing, &timing)?;
    Ok(paths)
}
