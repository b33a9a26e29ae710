//! Dense reference solver for the box-constrained tracking QP.
//!
//! The horizon problem is condensed onto the inputs and solved by
//! accelerated projected gradient on the dual, followed by an exact
//! active-set polish. It shares no code with the ADMM loop and is meant for
//! validating it on small instances only: the condensed Hessian is formed
//! densely and the dual iteration is slow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{reference_to_linear_costs, BoxConstraints, CostSpec, LtiModel, MpcProblem, Reference};

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Inputs `u_0 … u_{N−2}`.
    pub u: Vec<Vector>,
    /// States `x_0 … x_{N−1}`.
    pub x: Vec<Vector>,
    /// Largest violation of the KKT conditions at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Affine map from the input stack to each state, `x_k = Φ_k x0 + Γ_k U`.
struct Condensed {
    phi: Vec<Mat>,
    gamma: Vec<Mat>,
}

fn condense(model: &LtiModel, horizon: usize) -> Condensed {
    let (n, m) = (model.n(), model.m());
    let nu = m * (horizon - 1);
    let mut phi = vec![Mat::identity(n, n)];
    let mut gamma = vec![Mat::zeros(n, nu)];
    for k in 1..horizon {
        phi.push(&model.a * &phi[k - 1]);
        let mut g = &model.a * &gamma[k - 1];
        let mut block = g.view_mut((0, (k - 1) * m), (n, m));
        block += &model.b;
        gamma.push(g);
    }
    Condensed { phi, gamma }
}

/// Inequalities `G U ≤ h` from the box constraints on `u_0 … u_{N−2}` and
/// `x_1 … x_{N−1}`. Infinite bounds are dropped.
fn inequalities(c: &Condensed, bounds: &BoxConstraints, x0: &Vector, m: usize) -> (Mat, Vector) {
    let horizon = c.phi.len();
    let nu = m * (horizon - 1);
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..horizon - 1 {
        for i in 0..m {
            let mut e = vec![0.0; nu];
            e[k * m + i] = 1.0;
            if bounds.u_max[i].is_finite() {
                rows.push((e.clone(), bounds.u_max[i]));
            }
            if bounds.u_min[i].is_finite() {
                rows.push((e.iter().map(|v| -v).collect(), -bounds.u_min[i]));
            }
        }
    }
    for k in 1..horizon {
        let free = &c.phi[k] * x0;
        for i in 0..free.len() {
            let g: Vec<f64> = c.gamma[k].row(i).iter().copied().collect();
            if bounds.x_max[i].is_finite() {
                rows.push((g.clone(), bounds.x_max[i] - free[i]));
            }
            if bounds.x_min[i].is_finite() {
                rows.push((g.iter().map(|v| -v).collect(), free[i] - bounds.x_min[i]));
            }
        }
    }
    let mut gm = Mat::zeros(rows.len(), nu);
    let mut h = Vector::zeros(rows.len());
    for (r, (g, b)) in rows.into_iter().enumerate() {
        gm.row_mut(r).copy_from_slice(&g);
        h[r] = b;
    }
    (gm, h)
}

/// Solves the horizon QP of `problem` from `x0`, with `terminal` as the
/// quadratic weight on the last state instead of `Qf`.
///
/// Passing the Hessian implied by a cache (`Pinf(ρ) − ρI`) reproduces the
/// problem whose minimizer the cached ADMM iteration converges to.
pub fn solve_qp(problem: &MpcProblem, terminal: &Mat, reference: &Reference, x0: &Vector) -> Result<OracleSolution> {
    let (n, m, horizon) = (problem.n(), problem.m(), problem.horizon);
    if terminal.shape() != (n, n) || x0.len() != n {
        return Err(Error::Dimension("oracle terminal weight or x0 has the wrong size".into()));
    }
    let lc = reference_to_linear_costs(&problem.cost, reference, horizon)?;
    let c = condense(&problem.model, horizon);
    let nu = m * (horizon - 1);

    let mut hess = Mat::zeros(nu, nu);
    let mut lin = Vector::zeros(nu);
    for k in 0..horizon - 1 {
        let mut block = hess.view_mut((k * m, k * m), (m, m));
        block += &problem.cost.r;
        lin.rows_mut(k * m, m).copy_from(&lc.r[k]);
    }
    for k in 1..horizon {
        let (w, q) = if k == horizon - 1 {
            (terminal, &lc.q_f)
        } else {
            (&problem.cost.q, &lc.q[k])
        };
        let g = &c.gamma[k];
        hess += g.transpose() * w * g;
        lin += g.transpose() * (w * (&c.phi[k] * x0) + q);
    }
    hess = (&hess + hess.transpose()) * 0.5;
    let hinv = hess
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invalid("condensed Hessian is not positive definite".into()))?
        .inverse();

    let (gm, h) = inequalities(&c, &problem.bounds, x0, m);
    let primal = |lambda: &Vector| -(&hinv * (&lin + gm.transpose() * lambda));

    // FISTA on the dual  min_{λ≥0} ½(f+Gᵀλ)ᵀH⁻¹(f+Gᵀλ) + hᵀλ
    let dual_h = &gm * &hinv * gm.transpose();
    let lip = if h.is_empty() {
        1.0
    } else {
        dual_h.clone().symmetric_eigen().eigenvalues.max().max(1e-12)
    };
    let mut lambda = Vector::zeros(h.len());
    let mut prev = lambda.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let max_iters = 200_000;
    for it in 0..if h.is_empty() { 0 } else { max_iters } {
        iterations = it + 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = &lambda + (&lambda - &prev) * ((t - 1.0) / t_next);
        let u = primal(&mom);
        let grad = &h - &gm * &u;
        let next = (&mom - &grad / lip).map(|v| v.max(0.0));
        // gradient restart keeps the momentum from overshooting near the optimum
        if (&next - &lambda).dot(&grad) > 0.0 {
            t = 1.0;
            prev = next.clone();
        } else {
            prev = std::mem::replace(&mut lambda, next.clone());
            t = t_next;
        }
        lambda = next;
        if it % 50 == 0 && kkt_residual(&hess, &lin, &gm, &h, &primal(&lambda), &lambda) < 1e-10 {
            break;
        }
    }

    let mut u = primal(&lambda);
    let mut residual = kkt_residual(&hess, &lin, &gm, &h, &u, &lambda);
    if let Some((pu, pl)) = polish(&hess, &lin, &gm, &h, &u, &lambda) {
        let pr = kkt_residual(&hess, &lin, &gm, &h, &pu, &pl);
        if pr <= residual {
            u = pu;
            residual = pr;
        }
    }

    let inputs: Vec<Vector> = (0..horizon - 1).map(|k| u.rows(k * m, m).into_owned()).collect();
    let states = (0..horizon).map(|k| &c.phi[k] * x0 + &c.gamma[k] * &u).collect();
    Ok(OracleSolution {
        u: inputs,
        x: states,
        kkt_residual: residual,
        iterations,
    })
}

/// Stationarity, primal feasibility, dual feasibility and complementarity,
/// as one infinity norm.
fn kkt_residual(hess: &Mat, lin: &Vector, gm: &Mat, h: &Vector, u: &Vector, lambda: &Vector) -> f64 {
    let stat = hess * u + lin + gm.transpose() * lambda;
    let slack = h - gm * u;
    let mut r = stat.amax();
    for i in 0..h.len() {
        r = r.max((-slack[i]).max(0.0));
        r = r.max((-lambda[i]).max(0.0));
        r = r.max((lambda[i] * slack[i]).abs());
    }
    r
}

/// Equality-constrained solve on the constraints that look active.
fn polish(hess: &Mat, lin: &Vector, gm: &Mat, h: &Vector, u: &Vector, lambda: &Vector) -> Option<(Vector, Vector)> {
    let slack = h - gm * u;
    let active: Vec<usize> = (0..h.len()).filter(|&i| lambda[i] > 1e-9 || slack[i] < 1e-9).collect();
    let nu = hess.nrows();
    let na = active.len();
    let mut kkt = Mat::zeros(nu + na, nu + na);
    kkt.view_mut((0, 0), (nu, nu)).copy_from(hess);
    let mut rhs = Vector::zeros(nu + na);
    rhs.rows_mut(0, nu).copy_from(&(-lin));
    for (j, &i) in active.iter().enumerate() {
        for c in 0..nu {
            kkt[(nu + j, c)] = gm[(i, c)];
            kkt[(c, nu + j)] = gm[(i, c)];
        }
        rhs[nu + j] = h[i];
    }
    let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let pu = sol.rows(0, nu).into_owned();
    let mut pl = Vector::zeros(h.len());
    for (j, &i) in active.iter().enumerate() {
        pl[i] = sol[nu + j];
    }
    Some((pu, pl))
}

/// One instance of the validation suite.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub problem: MpcProblem,
    pub reference: Reference,
    pub x0: Vector,
}

/// Deterministic suite of small box-constrained tracking problems.
///
/// Sizes range over n ∈ {2, 3, 4}, m ∈ {1, 2} and N ∈ {4 … 8}. Dynamics are
/// random and marginally unstable, input bounds are tight enough that most
/// instances saturate, and `x0` lies strictly inside the state box.
pub fn validation_suite(count: usize, seed: u64) -> Result<Vec<OracleInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.random_range(2..=4usize);
        let m = rng.random_range(1..=2usize).min(n);
        let horizon = rng.random_range(4..=8usize);
        let a = Mat::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 } else if j == i + 1 { 0.1 } else { 0.0 };
            base + rng.random_range(-0.15..0.15)
        });
        let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let model = match LtiModel::new(a, b, 0.1) {
            Ok(model) if model.is_controllable() => model,
            _ => continue,
        };
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let r: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let cost = CostSpec::diagonal(&q, &r);
        let u_bound: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..0.5)).collect();
        let mut bounds = BoxConstraints::symmetric_inputs(n, &u_bound);
        let x_bound = rng.random_range(1.5..3.0);
        bounds.x_min = Vector::from_element(n, -x_bound);
        bounds.x_max = Vector::from_element(n, x_bound);
        let x0 = Vector::from_fn(n, |_, _| rng.random_range(-0.6..0.6) * x_bound);
        let target = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let reference = Reference {
            x_ref: vec![target; horizon],
            u_ref: vec![Vector::zeros(m); horizon - 1],
        };
        out.push(OracleInstance {
            problem: MpcProblem {
                model,
                cost,
                bounds,
                horizon,
            },
            reference,
            x0,
        });
    }
    Ok(out)
}
