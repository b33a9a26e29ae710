//! Hover sweep: grid-searched fixed penalty against adaptive refresh at
//! several update periods and against exact recomputation.

use std::path::Path;

use foac_core::quadrotor::{self, ScenarioConfig, ScenarioTrace};
use foac_core::{build_cache, build_with_sensitivities, RhoMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::report::{self, fmt_f64, BenchReport, OutputPaths, Stats, TimingReport};
use crate::setup::{invalid, QuadrotorSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveStart {
    /// Start the adaptive arms from the best grid value.
    BestFixed,
    /// Start from `scenario.solver.rho0`.
    Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoverConfig {
    pub seed: u64,
    pub plant: QuadrotorSetup,
    pub scenario: ScenarioConfig,
    pub rho_grid: Vec<f64>,
    pub taus: Vec<usize>,
    /// Update period of the exact-recompute arm.
    pub full_recompute_tau: usize,
    pub adaptive_start: AdaptiveStart,
}

impl Default for HoverConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            plant: QuadrotorSetup::default(),
            scenario: ScenarioConfig::hover(),
            rho_grid: vec![5.0, 10.0, 20.0, 40.0, 60.0, 85.0, 100.0],
            taus: vec![1, 5, 10, 25],
            full_recompute_tau: 1,
            adaptive_start: AdaptiveStart::Scenario,
        }
    }
}

impl HoverConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|r| !(*r > 0.0)) {
            return Err(invalid("rho_grid must be a non-empty list of positive values"));
        }
        if self.taus.iter().any(|t| *t == 0) || self.full_recompute_tau == 0 {
            return Err(invalid("update periods must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverArm {
    pub label: String,
    pub mode: RhoMode,
    pub tau: Option<usize>,
    pub rho0: f64,
    pub total_iterations: usize,
    pub avg_iterations: f64,
    pub avg_l2_error: f64,
    pub max_l2_error: f64,
    pub capped_steps: usize,
    pub final_rho: f64,
    /// Relative to the best fixed arm, percent.
    pub reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverSummary {
    pub baseline: String,
    pub best_fixed_rho: f64,
    pub baseline_total_iterations: usize,
    pub fixed_grid: Vec<HoverArm>,
    pub arms: Vec<HoverArm>,
}

pub struct HoverOutcome {
    pub report: BenchReport<HoverConfig, HoverSummary>,
    /// `(label, trace)` for the best fixed arm followed by every comparison arm.
    pub traces: Vec<(String, ScenarioTrace)>,
}

struct Arm {
    label: String,
    mode: RhoMode,
    tau: Option<usize>,
    rho0: f64,
}

fn summarize(arm: &Arm, t: &ScenarioTrace, baseline: Option<usize>) -> HoverArm {
    HoverArm {
        label: arm.label.clone(),
        mode: arm.mode,
        tau: arm.tau,
        rho0: arm.rho0,
        total_iterations: t.aggregates.total_iterations,
        avg_iterations: t.aggregates.avg_iterations,
        avg_l2_error: t.aggregates.avg_l2_error,
        max_l2_error: t.aggregates.max_l2_error,
        capped_steps: t.rows.iter().filter(|r| !r.converged).count(),
        final_rho: t.rows.last().map_or(arm.rho0, |r| r.rho),
        reduction_pct: baseline.and_then(|b| report::reduction_pct(b as f64, t.aggregates.total_iterations as f64)),
    }
}

fn fixed_label(rho: f64) -> String {
    format!("fixed_rho_{}", fmt_f64(rho))
}

pub fn run(cfg: &HoverConfig) -> Result<HoverOutcome> {
    cfg.validate()?;
    let mut scenario = cfg.scenario.clone();
    scenario.wind.seed = cfg.seed;
    let problem = cfg.plant.problem(&scenario)?;

    let fixed: Vec<(Arm, ScenarioTrace)> = cfg
        .rho_grid
        .par_iter()
        .map(|&rho| {
            let mut sc = scenario.clone();
            sc.solver.rho0 = rho;
            sc.solver.mode = RhoMode::Fixed;
            let cache = build_cache(&problem.model, &problem.cost, rho)?;
            let trace = quadrotor::run_closed_loop(&problem, &sc, &cache, None)?;
            let arm = Arm {
                label: fixed_label(rho),
                mode: RhoMode::Fixed,
                tau: None,
                rho0: rho,
            };
            Ok((arm, trace))
        })
        .collect::<Result<_>>()?;
    // first minimum wins ties, so the choice is independent of scheduling
    let best = fixed
        .iter()
        .enumerate()
        .min_by_key(|(i, (_, t))| (t.aggregates.total_iterations, *i))
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    let best_rho = fixed[best].0.rho0;
    let baseline_total = fixed[best].1.aggregates.total_iterations;

    let start = match cfg.adaptive_start {
        AdaptiveStart::BestFixed => best_rho,
        AdaptiveStart::Scenario => scenario.solver.rho0,
    };
    let (cache, sens) = build_with_sensitivities(&problem.model, &problem.cost, start)?;
    let mut arms: Vec<Arm> = cfg
        .taus
        .iter()
        .map(|&tau| Arm {
            label: format!("adaptive_tau_{tau}"),
            mode: RhoMode::Adaptive,
            tau: Some(tau),
            rho0: start,
        })
        .collect();
    arms.push(Arm {
        label: "full_recompute".into(),
        mode: RhoMode::FullRecompute,
        tau: Some(cfg.full_recompute_tau),
        rho0: start,
    });
    let adaptive: Vec<ScenarioTrace> = arms
        .par_iter()
        .map(|arm| {
            let mut sc = scenario.clone();
            sc.solver.rho0 = arm.rho0;
            sc.solver.mode = arm.mode;
            sc.solver.tau = arm.tau.unwrap_or(sc.solver.tau);
            Ok(quadrotor::run_closed_loop(&problem, &sc, &cache, Some(&sens))?)
        })
        .collect::<Result<_>>()?;

    let summary = HoverSummary {
        baseline: fixed[best].0.label.clone(),
        best_fixed_rho: best_rho,
        baseline_total_iterations: baseline_total,
        fixed_grid: fixed.iter().map(|(a, t)| summarize(a, t, None)).collect(),
        arms: arms
            .iter()
            .zip(&adaptive)
            .map(|(a, t)| summarize(a, t, Some(baseline_total)))
            .collect(),
    };

    let mut traces = vec![(fixed[best].0.label.clone(), fixed[best].1.clone())];
    traces.extend(arms.into_iter().map(|a| a.label).zip(adaptive));
    Ok(HoverOutcome {
        report: BenchReport::new("hover", cfg.clone(), summary)?,
        traces,
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "method",
    "step",
    "iterations",
    "cumulative_iterations",
    "rho",
    "converged",
    "position_error",
];

pub fn csv_rows(traces: &[(String, ScenarioTrace)]) -> Vec<Vec<String>> {
    let mut rows = vec![];
    for (label, t) in traces {
        for (r, cum) in t.rows.iter().zip(t.cumulative_iterations()) {
            rows.push(vec![
                label.clone(),
                r.step.to_string(),
                r.iterations.to_string(),
                cum.to_string(),
                fmt_f64(r.rho),
                r.converged.to_string(),
                fmt_f64(r.position_error),
            ]);
        }
    }
    rows
}

pub fn timing(traces: &[(String, ScenarioTrace)]) -> TimingReport {
    TimingReport {
        experiment: "hover".into(),
        solve_seconds: traces
            .iter()
            .map(|(label, t)| {
                let s: Vec<f64> = t.rows.iter().map(|r| r.solve_seconds).collect();
                (label.clone(), Stats::from_samples(&s))
            })
            .collect(),
    }
}

pub fn write(outcome: &HoverOutcome, dir: &Path) -> Result<OutputPaths> {
    let paths = OutputPaths::new(dir, "hover");
    report::create_dir(dir)?;
    report::write_json(&paths.summary, &outcome.report)?;
    report::write_csv(&paths.csv, &CSV_HEADER, &csv_rows(&outcome.traces))?;
    report::write_json(&paths.timing, &timing(&outcome.traces))?;
    Ok(paths)
}
