use foac_core::quadrotor::{quadrotor_problem, run_closed_loop, wind_at, ScenarioConfig, ScenarioTrace, NU, NX};
use foac_core::{build_with_sensitivities, solve, MpcProblem, Reference, RhoMode, SolverState, Vector};

fn problem(cfg: &ScenarioConfig) -> MpcProblem {
    quadrotor_problem(&Default::default(), &Default::default(), &Default::default(), cfg).unwrap()
}

fn run(cfg: &ScenarioConfig) -> ScenarioTrace {
    let p = problem(cfg);
    let (cache, sens) = build_with_sensitivities(&p.model, &p.cost, cfg.solver.rho0).unwrap();
    run_closed_loop(&p, cfg, &cache, Some(&sens)).unwrap()
}

fn without_timing(mut t: ScenarioTrace) -> ScenarioTrace {
    t.rows.iter_mut().for_each(|r| r.solve_seconds = 0.0);
    t
}

#[test]
fn pinned_rho_adaptive_is_bit_identical_to_fixed() {
    let mut cfg = ScenarioConfig::hover();
    assert_eq!(cfg.steps, 100);
    for rho in [5.0, 85.0] {
        cfg.solver.rho0 = rho;
        cfg.solver.rho_min = rho;
        cfg.solver.rho_max = rho;
        cfg.solver.tau = 1;
        cfg.solver.mode = RhoMode::Fixed;
        let fixed = without_timing(run(&cfg));
        for mode in [RhoMode::Adaptive, RhoMode::FullRecompute] {
            cfg.solver.mode = mode;
            assert_eq!(without_timing(run(&cfg)), fixed, "{mode} at rho {rho}");
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = ScenarioConfig::figure_eight();
    cfg.steps = 150;
    cfg.wind.enabled = true;
    cfg.wind.magnitude = 5.0;
    cfg.wind.seed = 11;
    assert_eq!(without_timing(run(&cfg)), without_timing(run(&cfg)));
}

#[test]
fn hover_from_equilibrium_stays_put() {
    let mut cfg = ScenarioConfig::hover();
    cfg.initial_offset.position = 0.0;
    cfg.initial_offset.tilt_deg = 0.0;
    cfg.solver.mode = RhoMode::Fixed;
    let t = run(&cfg);
    assert!(t.aggregates.avg_l2_error <= 1e-6);
    assert!(t.rows.iter().all(|r| r.iterations == 1));
}

#[test]
fn warm_start_at_a_stationary_point_takes_one_iteration() {
    let cfg = ScenarioConfig::hover();
    let p = problem(&cfg);
    let mut settings = cfg.solver.clone();
    settings.mode = RhoMode::Fixed;
    let (cache, sens) = build_with_sensitivities(&p.model, &p.cost, settings.rho0).unwrap();
    let reference = Reference::zeros(NX, NU, cfg.horizon);
    let x0 = Vector::zeros(NX);
    let warm = SolverState::zeros(NX, NU, cfg.horizon, settings.rho0);
    let (res, _) = solve(&p, &cache, Some(&sens), &settings, &reference, &x0, Some(warm)).unwrap();
    assert!(res.converged());
    assert_eq!(res.iterations, 1);
}

#[test]
fn adaptive_hover_uses_fewer_iterations_than_fixed() {
    let mut cfg = ScenarioConfig::hover();
    cfg.solver.tau = 1;
    cfg.solver.mode = RhoMode::Fixed;
    let fixed = run(&cfg);
    cfg.solver.mode = RhoMode::Adaptive;
    let adaptive = run(&cfg);
    assert!(
        adaptive.aggregates.total_iterations < fixed.aggregates.total_iterations,
        "adaptive {} vs fixed {}",
        adaptive.aggregates.total_iterations,
        fixed.aggregates.total_iterations
    );
}

#[test]
fn both_modes_see_the_same_wind() {
    let mut cfg = ScenarioConfig::figure_eight();
    cfg.wind.enabled = true;
    cfg.wind.seed = 3;
    let a: Vec<_> = (0..cfg.steps).map(|k| wind_at(&cfg.wind, k)).collect();
    cfg.solver.mode = RhoMode::Fixed;
    let b: Vec<_> = (0..cfg.steps).map(|k| wind_at(&cfg.wind, k)).collect();
    assert_eq!(a, b);
}

#[test]
fn trace_aggregates_recompute_from_rows() {
    let t = run(&ScenarioConfig::hover());
    let total: usize = t.rows.iter().map(|r| r.iterations).sum();
    assert_eq!(total, t.aggregates.total_iterations);
    assert_eq!(*t.cumulative_iterations().last().unwrap(), total);
    let mean = t.rows.iter().map(|r| r.position_error).sum::<f64>() / t.rows.len() as f64;
    assert_eq!(mean, t.aggregates.avg_l2_error);
}

/// Average tracking error without wind, with a cap loose enough that every
/// step converges.
fn untruncated_fig8_error(mode: RhoMode) -> f64 {
    let mut cfg = ScenarioConfig::figure_eight();
    cfg.solver.max_iters = 500;
    cfg.solver.mode = mode;
    let t = run(&cfg);
    assert!(t.rows.iter().all(|r| r.converged), "{mode} hit the cap");
    t.aggregates.avg_l2_error
}

#[test]
fn figure_eight_without_wind_tracks_alike_in_every_mode() {
    let fixed = untruncated_fig8_error(RhoMode::Fixed);
    assert!(fixed < 0.2, "fixed {fixed}");
    for mode in [RhoMode::Adaptive, RhoMode::FullRecompute] {
        let e = untruncated_fig8_error(mode);
        assert!((e - fixed).abs() <= 0.15 * fixed, "fixed {fixed}, {mode} {e}");
    }
}
