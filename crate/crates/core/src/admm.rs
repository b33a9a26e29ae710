//! Online phase: cached-Riccati ADMM with residual-balanced penalty updates.
//!
//! One iteration is a linear backward pass over the cached matrices, a
//! forward rollout of the affine policy, projection of the slacks onto the
//! bounds, and a scaled dual ascent step. Every `tau` iterations the penalty
//! is rebalanced and the cache refreshed, either by a first-order Taylor step
//! or by rebuilding it.

use crate::cache::{self, CacheSensitivity, LqrCache};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::problem::{
    clip_into, reference_to_linear_costs, BoxConstraints, LinearCosts, LtiModel, MpcProblem, Reference,
    RhoMode, SolverSettings,
};

/// Full ADMM iterate.
///
/// `y` and `g` are scaled duals: the Lagrange multipliers of the consensus
/// constraints are `ρ·y` and `ρ·g`, and are never stored directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub z: Vec<Vector>,
    pub w: Vec<Vector>,
    pub y: Vec<Vector>,
    pub g: Vec<Vector>,
    pub z_prev: Vec<Vector>,
    pub w_prev: Vec<Vector>,
    /// Linear cost-to-go, one per state knot.
    pub p: Vec<Vector>,
    /// Feedforward terms, one per input knot.
    pub d: Vec<Vector>,
    /// Tracking cost vectors `q_1 … q_{N−1}, q_f`.
    pub q_lin: Vec<Vector>,
    pub r_lin: Vec<Vector>,
    pub rho: f64,
    pub iter: usize,
    /// Cache active when the last solve returned; carried into warm starts.
    pub cache: Option<LqrCache>,
}

impl SolverState {
    pub fn zeros(n: usize, m: usize, horizon: usize, rho: f64) -> Self {
        let xs = || vec![Vector::zeros(n); horizon];
        let us = || vec![Vector::zeros(m); horizon - 1];
        Self {
            x: xs(),
            u: us(),
            z: xs(),
            w: us(),
            y: xs(),
            g: us(),
            z_prev: xs(),
            w_prev: us(),
            p: xs(),
            d: us(),
            q_lin: xs(),
            r_lin: us(),
            rho,
            iter: 0,
            cache: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    pub fn set_linear_costs(&mut self, lc: &LinearCosts) {
        let h = self.horizon();
        self.q_lin[..h - 1].clone_from_slice(&lc.q);
        self.q_lin[h - 1].copy_from(&lc.q_f);
        self.r_lin.clone_from_slice(&lc.r);
    }

    /// Receding-horizon shift: drop the first knot and repeat the last one.
    pub fn shift(&mut self) {
        for seq in [
            &mut self.x,
            &mut self.u,
            &mut self.z,
            &mut self.w,
            &mut self.y,
            &mut self.g,
        ] {
            if seq.len() > 1 {
                seq.rotate_left(1);
                let last = seq.len() - 1;
                let repeat = seq[last - 1].clone();
                seq[last] = repeat;
            }
        }
    }

    fn check_dims(&self, n: usize, m: usize, horizon: usize) -> Result<()> {
        let ok = self.x.len() == horizon
            && self.u.len() + 1 == horizon
            && self.x.iter().all(|v| v.len() == n)
            && self.u.iter().all(|v| v.len() == m);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "warm-start state does not match n={n}, m={m}, N={horizon}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualRecord {
    pub prim_norm: f64,
    pub dual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: ResidualRecord,
    pub u0: Vector,
    pub rho_final: f64,
    /// Number of cache refreshes (iterations where ρ actually changed).
    pub rho_updates: usize,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Per-iteration record handed to trace sinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub prim_norm: f64,
    pub dual_norm: f64,
    pub rho: f64,
}

/// Cached backward pass over the linear terms.
///
/// The augmented-Lagrangian consensus terms enter as `ρ(y − z)` on the state
/// cost vectors and `ρ(g − w)` on the input cost vectors. The terminal
/// cost-to-go is `q_f + ρ(y_N − z_N)`.
pub fn backward_pass(state: &mut SolverState, cache: &LqrCache, model: &LtiModel) {
    let h = state.horizon();
    let rho = state.rho;
    let last = h - 1;
    state.p[last].copy_from(&state.q_lin[last]);
    linalg::axpy(&mut state.p[last], rho, &state.y[last]);
    linalg::axpy(&mut state.p[last], -rho, &state.z[last]);

    let mut r_tilde = Vector::zeros(model.m());
    let mut rhs = Vector::zeros(model.m());
    for k in (0..last).rev() {
        r_tilde.copy_from(&state.r_lin[k]);
        linalg::axpy(&mut r_tilde, rho, &state.g[k]);
        linalg::axpy(&mut r_tilde, -rho, &state.w[k]);

        // d_k = C1 (Bᵀ p_{k+1} + r̃_k)
        rhs.copy_from(&r_tilde);
        linalg::gemv_tr(&mut rhs, 1.0, &model.b, &state.p[k + 1], 1.0);
        linalg::gemv(&mut state.d[k], 1.0, &cache.c1, &rhs, 0.0);

        // p_k = q̃_k + C2 p_{k+1} − Kᵀ r̃_k
        let (head, tail) = state.p.split_at_mut(k + 1);
        let p_k = &mut head[k];
        p_k.copy_from(&state.q_lin[k]);
        linalg::axpy(p_k, rho, &state.y[k]);
        linalg::axpy(p_k, -rho, &state.z[k]);
        linalg::gemv(p_k, 1.0, &cache.c2, &tail[0], 1.0);
        linalg::gemv_tr(p_k, -1.0, &cache.kinf, &r_tilde, 1.0);
    }
}

/// Rolls the affine policy `u_k = −K x_k − d_k` forward from `x0`.
pub fn forward_rollout(state: &mut SolverState, cache: &LqrCache, model: &LtiModel, x0: &Vector) {
    state.x[0].copy_from(x0);
    for k in 0..state.u.len() {
        let (head, tail) = state.x.split_at_mut(k + 1);
        let x_k = &head[k];
        let u_k = &mut state.u[k];
        u_k.copy_from(&state.d[k]);
        linalg::gemv(u_k, -1.0, &cache.kinf, x_k, -1.0);
        linalg::gemv(&mut tail[0], 1.0, &model.a, x_k, 0.0);
        linalg::gemv(&mut tail[0], 1.0, &model.b, u_k, 1.0);
    }
}

/// `z ← clip(x + y)`, `w ← clip(u + g)`.
pub fn project_slacks(state: &mut SolverState, bounds: &BoxConstraints) {
    for ((z, x), y) in state.z.iter_mut().zip(&state.x).zip(&state.y) {
        z.copy_from(x);
        *z += y;
        clip_into(z, &bounds.x_min, &bounds.x_max);
    }
    for ((w, u), g) in state.w.iter_mut().zip(&state.u).zip(&state.g) {
        w.copy_from(u);
        *w += g;
        clip_into(w, &bounds.u_min, &bounds.u_max);
    }
}

/// `y ← y + (x − z)`, `g ← g + (u − w)`.
pub fn update_duals(state: &mut SolverState) {
    for ((y, x), z) in state.y.iter_mut().zip(&state.x).zip(&state.z) {
        *y += x;
        *y -= z;
    }
    for ((g, u), w) in state.g.iter_mut().zip(&state.u).zip(&state.w) {
        *g += u;
        *g -= w;
    }
}

fn max_gap(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn max_abs(seqs: &[&[Vector]]) -> f64 {
    seqs.iter()
        .flat_map(|s| s.iter())
        .map(linalg::vec_norm_inf)
        .fold(0.0, f64::max)
}

pub fn compute_residuals(state: &SolverState) -> ResidualRecord {
    let prim = max_gap(&state.x, &state.z).max(max_gap(&state.u, &state.w));
    let slack_change = max_gap(&state.z, &state.z_prev).max(max_gap(&state.w, &state.w_prev));
    ResidualRecord {
        prim_norm: prim,
        dual_norm: state.rho * slack_change,
    }
}

/// Residuals normalized by the magnitude of the iterate and the problem data,
/// with the constraint matrix of the consensus form taken as the identity.
pub fn compute_scalings(state: &SolverState, problem: &MpcProblem, res: &ResidualRecord, phi: f64) -> (f64, f64) {
    let prim_den = max_abs(&[&state.x, &state.u])
        .max(max_abs(&[&state.z, &state.w]))
        .max(phi);

    let h = state.horizon();
    let cost = &problem.cost;
    let mut hess = 0.0_f64;
    for (k, x) in state.x.iter().enumerate() {
        let w = if k + 1 == h { &cost.qf } else { &cost.q };
        hess = hess.max(linalg::vec_norm_inf(&(w * x)));
    }
    for u in &state.u {
        hess = hess.max(linalg::vec_norm_inf(&(&cost.r * u)));
    }
    let dual_den = hess
        .max(state.rho * max_abs(&[&state.y, &state.g]))
        .max(max_abs(&[&state.q_lin, &state.r_lin]))
        .max(phi);

    (res.prim_norm / prim_den, res.dual_norm / dual_den)
}

/// Square-root residual balancing, clipped to `[rho_min, rho_max]`. A zero
/// scaling leaves ρ unchanged.
pub fn update_rho(rho: f64, prim_scaling: f64, dual_scaling: f64, settings: &SolverSettings) -> f64 {
    if prim_scaling == 0.0 || dual_scaling == 0.0 {
        return rho;
    }
    (rho * (prim_scaling / dual_scaling).sqrt()).clamp(settings.rho_min, settings.rho_max)
}

/// Source of cache refreshes during a solve.
struct Refresher<'a> {
    problem: &'a MpcProblem,
    base: &'a LqrCache,
    sens: Option<&'a CacheSensitivity>,
    mode: RhoMode,
    rebase_every: Option<usize>,
    chained: usize,
}

impl Refresher<'_> {
    fn refresh(&mut self, active: &mut LqrCache, new_rho: f64) -> Result<()> {
        match self.mode {
            RhoMode::Fixed => unreachable!("fixed mode never refreshes"),
            RhoMode::FullRecompute => {
                *active = cache::build_cache(&self.problem.model, &self.problem.cost, new_rho)?;
            }
            RhoMode::Adaptive => {
                let sens = self
                    .sens
                    .ok_or_else(|| Error::Invalid("adaptive mode requires cache sensitivities".into()))?;
                self.chained += 1;
                if self.rebase_every.is_some_and(|r| self.chained >= r) {
                    self.chained = 0;
                    *active = self.base.clone();
                }
                let delta = new_rho - active.rho_base;
                cache::taylor_update_in_place(active, sens, delta);
                // keep the recorded penalty exact instead of accumulating rounding
                active.rho_base = new_rho;
            }
        }
        Ok(())
    }
}

/// Runs the adaptive-caching ADMM loop. See [`solve_with_trace`].
pub fn solve(
    problem: &MpcProblem,
    cache: &LqrCache,
    sens: Option<&CacheSensitivity>,
    settings: &SolverSettings,
    reference: &Reference,
    x0: &Vector,
    warm: Option<SolverState>,
) -> Result<(SolveResult, SolverState)> {
    solve_with_trace(problem, cache, sens, settings, reference, x0, warm, &mut |_| {})
}

/// Solves one MPC problem from the measured state `x0`.
///
/// A cold start begins at `settings.rho0`; if that differs from the cache's
/// base penalty the cache is refreshed first (fixed mode rejects the
/// mismatch). A warm start continues from the supplied iterate, and in the
/// adaptive modes also from its penalty and cache.
#[allow(clippy::too_many_arguments)]
pub fn solve_with_trace(
    problem: &MpcProblem,
    cache: &LqrCache,
    sens: Option<&CacheSensitivity>,
    settings: &SolverSettings,
    reference: &Reference,
    x0: &Vector,
    warm: Option<SolverState>,
    sink: &mut dyn FnMut(&IterationTrace),
) -> Result<(SolveResult, SolverState)> {
    settings.validate()?;
    let (n, m, horizon) = (problem.n(), problem.m(), problem.horizon);
    if cache.n() != n || cache.m() != m {
        return Err(Error::Dimension(format!(
            "cache is {}x{}, problem is n={n}, m={m}",
            cache.n(),
            cache.m()
        )));
    }
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if settings.mode == RhoMode::Adaptive && sens.is_none() {
        return Err(Error::Invalid("adaptive mode requires cache sensitivities".into()));
    }
    if settings.mode == RhoMode::Fixed && cache.rho_base != settings.rho0 {
        return Err(Error::Invalid(format!(
            "fixed mode needs a cache built at rho0 = {}, got {}",
            settings.rho0, cache.rho_base
        )));
    }
    let linear = reference_to_linear_costs(&problem.cost, reference, horizon)?;

    let mut refresher = Refresher {
        problem,
        base: cache,
        sens,
        mode: settings.mode,
        rebase_every: settings.rebase_every,
        chained: 0,
    };

    let (mut state, mut active) = match warm {
        Some(mut w) => {
            w.check_dims(n, m, horizon)?;
            let carried = w.cache.take();
            match (settings.mode, carried) {
                (RhoMode::Fixed, _) | (_, None) => {
                    w.rho = settings.rho0;
                    (w, cache.clone())
                }
                (_, Some(c)) => {
                    w.rho = c.rho_base;
                    (w, c)
                }
            }
        }
        None => (SolverState::zeros(n, m, horizon, settings.rho0), cache.clone()),
    };
    if settings.mode != RhoMode::Fixed && active.rho_base != state.rho {
        refresher.refresh(&mut active, state.rho)?;
    }
    state.set_linear_costs(&linear);

    let mut status = SolveStatus::MaxIters;
    let mut residuals = ResidualRecord::default();
    let mut rho_updates = 0;
    let mut iterations = 0;

    for k in 0..settings.max_iters {
        state.iter = k;
        iterations = k + 1;

        state.z_prev.clone_from(&state.z);
        state.w_prev.clone_from(&state.w);
        backward_pass(&mut state, &active, &problem.model);
        forward_rollout(&mut state, &active, &problem.model, x0);
        project_slacks(&mut state, &problem.bounds);
        update_duals(&mut state);

        residuals = compute_residuals(&state);
        sink(&IterationTrace {
            iteration: k,
            prim_norm: residuals.prim_norm,
            dual_norm: residuals.dual_norm,
            rho: state.rho,
        });
        if residuals.prim_norm <= settings.eps_prim && residuals.dual_norm <= settings.eps_dual {
            status = SolveStatus::Converged;
            break;
        }

        if settings.mode != RhoMode::Fixed && k % settings.tau == 0 {
            let (ps, ds) = compute_scalings(&state, problem, &residuals, settings.phi);
            let new_rho = update_rho(state.rho, ps, ds, settings);
            if new_rho != state.rho {
                refresher.refresh(&mut active, new_rho)?;
                let ratio = state.rho / new_rho;
                for v in state.y.iter_mut().chain(state.g.iter_mut()) {
                    *v *= ratio;
                }
                state.rho = new_rho;
                rho_updates += 1;
            }
        }
    }
    state.iter = iterations;

    let result = SolveResult {
        status,
        iterations,
        residuals,
        u0: state.u[0].clone(),
        rho_final: state.rho,
        rho_updates,
    };
    state.cache = Some(active);
    Ok((result, state))
}

/// Quadratic tracking objective with linear terms from the reference.
pub fn compute_objective(problem: &MpcProblem, x: &[Vector], u: &[Vector], reference: &Reference) -> Result<f64> {
    let horizon = problem.horizon;
    if x.len() != horizon || u.len() + 1 != horizon {
        return Err(Error::Dimension(format!(
            "trajectory has {} states and {} inputs for horizon {horizon}",
            x.len(),
            u.len()
        )));
    }
    let lc = reference_to_linear_costs(&problem.cost, reference, horizon)?;
    let cost = &problem.cost;
    let mut j = 0.0;
    for k in 0..horizon - 1 {
        j += 0.5 * x[k].dot(&(&cost.q * &x[k])) + lc.q[k].dot(&x[k]);
        j += 0.5 * u[k].dot(&(&cost.r * &u[k])) + lc.r[k].dot(&u[k]);
    }
    let xn = &x[horizon - 1];
    j += 0.5 * xn.dot(&(&cost.qf * xn)) + lc.q_f.dot(xn);
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::problem::CostSpec;
    use approx::assert_abs_diff_eq;

    fn scalar_problem(horizon: usize) -> (MpcProblem, LqrCache) {
        let model = LtiModel::new(Mat::from_element(1, 1, 1.0), Mat::from_element(1, 1, 1.0), 0.1).unwrap();
        let cost = CostSpec::diagonal(&[1.0], &[1.0]);
        let cache = cache::build_cache(&model, &cost, 0.0).unwrap();
        (
            MpcProblem {
                model,
                cost,
                bounds: BoxConstraints::unbounded(1, 1),
                horizon,
            },
            cache,
        )
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn backward_pass_zero_terms() {
        let (p, c) = scalar_problem(4);
        let mut s = SolverState::zeros(1, 1, 4, 1.0);
        backward_pass(&mut s, &c, &p.model);
        assert!(s.p.iter().chain(s.d.iter()).all(|v| v[0] == 0.0));
    }

    #[test]
    fn backward_pass_one_step_hand_values() {
        let (p, c) = scalar_problem(2);
        let mut s = SolverState::zeros(1, 1, 2, 0.0);
        s.q_lin[1] = v(&[1.0]);
        backward_pass(&mut s, &c, &p.model);
        assert_abs_diff_eq!(s.d[0][0], 0.381966, epsilon = 1e-6);
        assert_abs_diff_eq!(s.p[0][0], 0.381966, epsilon = 1e-6);

        s.r_lin[0] = v(&[1.0]);
        backward_pass(&mut s, &c, &p.model);
        assert_abs_diff_eq!(s.d[0][0], 0.763932, epsilon = 1e-6);
        assert_abs_diff_eq!(s.p[0][0], -0.236068, epsilon = 1e-6);
    }

    #[test]
    fn augmented_terms_fold_into_cost_vectors() {
        let (p, c) = scalar_problem(2);
        let mut a = SolverState::zeros(1, 1, 2, 2.0);
        a.g[0] = v(&[0.75]);
        a.w[0] = v(&[0.25]);
        a.y[1] = v(&[0.5]);
        backward_pass(&mut a, &c, &p.model);
        // same as r̃ = ρ(g − w) = 1, terminal q̃ = ρ y = 1 with no duals
        let mut b = SolverState::zeros(1, 1, 2, 0.0);
        b.r_lin[0] = v(&[1.0]);
        b.q_lin[1] = v(&[1.0]);
        backward_pass(&mut b, &c, &p.model);
        assert_abs_diff_eq!(a.d[0][0], b.d[0][0], epsilon = 1e-15);
        assert_abs_diff_eq!(a.p[0][0], b.p[0][0], epsilon = 1e-15);
    }

    #[test]
    fn forward_rollout_examples() {
        let (p, c) = scalar_problem(3);
        let mut s = SolverState::zeros(1, 1, 3, 0.0);
        forward_rollout(&mut s, &c, &p.model, &v(&[0.0]));
        assert!(s.x.iter().chain(s.u.iter()).all(|v| v[0] == 0.0));

        forward_rollout(&mut s, &c, &p.model, &v(&[1.0]));
        assert_abs_diff_eq!(s.u[0][0], -0.618034, epsilon = 1e-6);
        assert_abs_diff_eq!(s.x[1][0], 0.381966, epsilon = 1e-6);
        let acl = p.model.a[(0, 0)] - c.kinf[(0, 0)];
        assert_abs_diff_eq!(s.x[2][0], acl * acl, epsilon = 1e-14);
    }

    #[test]
    fn projection_examples() {
        let mut s = SolverState::zeros(2, 1, 2, 1.0);
        let bounds = BoxConstraints {
            x_min: v(&[-1.0, -1.0]),
            x_max: v(&[1.0, 1.0]),
            u_min: v(&[-1.0]),
            u_max: v(&[1.0]),
        };
        s.x[0] = v(&[0.2, -0.1]);
        s.y[0] = v(&[0.1, 0.1]);
        s.x[1] = v(&[4.0, -4.0]);
        s.y[1] = v(&[1.0, -1.0]);
        project_slacks(&mut s, &bounds);
        assert_abs_diff_eq!(s.z[0][0], 0.3, epsilon = 1e-15);
        assert_eq!(s.z[1], v(&[1.0, -1.0]));
        let once = s.z.clone();
        for (x, z) in s.x.iter_mut().zip(&once) {
            x.copy_from(z);
        }
        s.y.iter_mut().for_each(|y| y.fill(0.0));
        project_slacks(&mut s, &bounds);
        assert_eq!(s.z, once);
    }

    #[test]
    fn dual_update_examples() {
        let mut s = SolverState::zeros(1, 1, 2, 1.0);
        update_duals(&mut s);
        assert!(s.y.iter().all(|y| y[0] == 0.0));
        s.x[0] = v(&[0.5]);
        update_duals(&mut s);
        assert_eq!(s.y[0][0], 0.5);
        update_duals(&mut s);
        assert_eq!(s.y[0][0], 1.0);
    }

    #[test]
    fn residual_examples() {
        let mut s = SolverState::zeros(2, 1, 3, 1.0);
        assert_eq!(compute_residuals(&s).dual_norm, 0.0);
        s.x[1] = v(&[0.3, -0.7]);
        s.u[0] = v(&[0.1]);
        assert_abs_diff_eq!(compute_residuals(&s).prim_norm, 0.7, epsilon = 1e-15);

        s.z[2] = v(&[0.25, 0.0]);
        let d1 = compute_residuals(&s).dual_norm;
        s.rho = 2.0;
        let d2 = compute_residuals(&s).dual_norm;
        assert_eq!(d2, 2.0 * d1);
        assert_eq!(compute_residuals(&s).prim_norm, 0.7);
    }

    #[test]
    fn scaling_examples() {
        let (p, _) = scalar_problem(2);
        let s = SolverState::zeros(1, 1, 2, 1.0);
        let zero = compute_scalings(&s, &p, &ResidualRecord::default(), 1e-8);
        assert_eq!(zero, (0.0, 0.0));

        let mut s = SolverState::zeros(1, 1, 2, 1.0);
        s.x[1] = v(&[2.0]);
        s.z[1] = v(&[1.0]);
        let res = ResidualRecord {
            prim_norm: 0.5,
            dual_norm: 0.0,
        };
        let (ps, _) = compute_scalings(&s, &p, &res, 1e-8);
        assert_abs_diff_eq!(ps, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn scalings_symmetric_when_denominators_match() {
        let (p, _) = scalar_problem(2);
        let mut s = SolverState::zeros(1, 1, 2, 1.0);
        // ‖x‖ = 1 and ‖Q x‖ = 1 with Q = 1
        s.x[0] = v(&[1.0]);
        let res = ResidualRecord {
            prim_norm: 0.1,
            dual_norm: 0.1,
        };
        let (ps, ds) = compute_scalings(&s, &p, &res, 1e-8);
        assert_eq!(ps, ds);
    }

    #[test]
    fn rho_update_examples() {
        let settings = SolverSettings {
            rho0: 4.0,
            rho_min: 1.0,
            rho_max: 6.0,
            ..Default::default()
        };
        assert_eq!(update_rho(4.0, 0.3, 0.3, &settings), 4.0);
        assert_eq!(update_rho(4.0, 4.0, 1.0, &settings), 6.0);
        let wide = SolverSettings { rho_max: 100.0, ..settings.clone() };
        assert_eq!(update_rho(4.0, 4.0, 1.0, &wide), 8.0);
        assert_eq!(update_rho(4.0, 0.0, 1.0, &settings), 4.0);
        assert_eq!(update_rho(4.0, 1.0, 0.0, &settings), 4.0);
    }

    #[test]
    fn objective_examples() {
        let model = LtiModel::new(Mat::identity(2, 2), Mat::from_row_slice(2, 1, &[0.0, 1.0]), 0.1).unwrap();
        let mut cost = CostSpec::diagonal(&[1.0, 1.0], &[1.0]);
        cost.qf = Mat::from_diagonal(&v(&[2.0, 1.0]));
        let p = MpcProblem {
            model,
            cost,
            bounds: BoxConstraints::unbounded(2, 1),
            horizon: 3,
        };
        let reference = Reference::zeros(2, 1, 3);
        let mut x = vec![Vector::zeros(2); 3];
        let u = vec![Vector::zeros(1); 2];
        assert_eq!(compute_objective(&p, &x, &u, &reference).unwrap(), 0.0);
        x[2] = v(&[1.0, 0.0]);
        assert_eq!(compute_objective(&p, &x, &u, &reference).unwrap(), 1.0);
        assert!(compute_objective(&p, &x[..2], &u, &reference).is_err());
    }

    #[test]
    fn unconstrained_solve_has_zero_primal_residual() {
        let (p, _) = scalar_problem(5);
        let c = cache::build_cache(&p.model, &p.cost, 1.0).unwrap();
        let settings = SolverSettings {
            rho0: 1.0,
            rho_min: 1.0,
            mode: RhoMode::Fixed,
            eps_prim: 1e-9,
            eps_dual: 1e-9,
            max_iters: 1000,
            ..Default::default()
        };
        let reference = Reference::zeros(1, 1, 5);
        let mut first = None;
        let (res, _) = solve_with_trace(&p, &c, None, &settings, &reference, &v(&[1.0]), None, &mut |t| {
            first.get_or_insert(*t);
        })
        .unwrap();
        assert_eq!(first.unwrap().prim_norm, 0.0);
        assert!(res.converged());
        assert_eq!(res.residuals.prim_norm, 0.0);
    }

    #[test]
    fn fixed_mode_rejects_mismatched_cache() {
        let (p, c) = scalar_problem(3);
        let settings = SolverSettings {
            mode: RhoMode::Fixed,
            rho0: 1.0,
            ..Default::default()
        };
        let reference = Reference::zeros(1, 1, 3);
        assert!(matches!(
            solve(&p, &c, None, &settings, &reference, &v(&[0.0]), None),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn shift_repeats_last_knot() {
        let mut s = SolverState::zeros(1, 1, 3, 1.0);
        for (k, x) in s.x.iter_mut().enumerate() {
            x[0] = k as f64;
        }
        s.shift();
        assert_eq!(s.x.iter().map(|x| x[0]).collect::<Vec<_>>(), vec![1.0, 2.0, 2.0]);
    }
}
