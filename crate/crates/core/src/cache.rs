//! Offline phase: ρ-augmented infinite-horizon LQR, the four cached matrices,
//! their ρ-sensitivities, and the first-order refresh used online.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::problem::{CostSpec, LtiModel};

/// Relative fixed-point tolerance of the Riccati iteration.
pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITERS: usize = 10_000;
/// Default relative finite-difference step for the sensitivities.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Precomputed matrices for one value of ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrCache {
    pub rho_base: f64,
    /// Infinite-horizon feedback gain (m×n).
    pub kinf: Mat,
    /// Infinite-horizon cost-to-go (n×n).
    pub pinf: Mat,
    /// `(R_ρ + Bᵀ P B)⁻¹` (m×m).
    pub c1: Mat,
    /// `(A − B K)ᵀ` (n×n).
    pub c2: Mat,
}

/// Derivatives of each cached matrix with respect to ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSensitivity {
    pub dkinf: Mat,
    pub dpinf: Mat,
    pub dc1: Mat,
    pub dc2: Mat,
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub kinf: Mat,
    pub pinf: Mat,
    pub iterations: usize,
    /// `‖P_{j+1} − P_j‖∞` for every iteration performed.
    pub residuals: Vec<f64>,
}

/// `(Q + ρI, R + ρI)`
pub fn augmented_costs(cost: &CostSpec, rho: f64) -> (Mat, Mat) {
    let n = cost.q.nrows();
    let m = cost.r.nrows();
    (
        &cost.q + Mat::identity(n, n) * rho,
        &cost.r + Mat::identity(m, m) * rho,
    )
}

/// Output of one Riccati map evaluation.
pub struct RiccatiStep {
    pub kinf: Mat,
    pub p_next: Mat,
    pub c1: Mat,
}

/// One application of the Riccati map to `p`:
/// `K = (R_ρ + BᵀPB)⁻¹BᵀPA`, `P' = Q_ρ + KᵀR_ρK + (A − BK)ᵀP(A − BK)`.
pub fn riccati_step(model: &LtiModel, q_rho: &Mat, r_rho: &Mat, p: &Mat) -> Result<RiccatiStep> {
    let (a, b) = (&model.a, &model.b);
    let bt_p = linalg::tr_mul(b, p);
    let gram = linalg::add(r_rho, &linalg::mul(&bt_p, b));
    let c1 = linalg::spd_inverse(&gram).ok_or(Error::SingularGain)?;
    let kinf = linalg::mul(&c1, &linalg::mul(&bt_p, a));
    let acl = linalg::sub(a, &linalg::mul(b, &kinf));
    let mut p_next = linalg::add(
        &linalg::add(q_rho, &linalg::tr_mul(&kinf, &linalg::mul(r_rho, &kinf))),
        &linalg::tr_mul(&acl, &linalg::mul(p, &acl)),
    );
    // the map is symmetric in exact arithmetic; keep it symmetric in floating point
    p_next = (&p_next + p_next.transpose()) * 0.5;
    Ok(RiccatiStep { kinf, p_next, c1 })
}

/// Fixed-point iteration of the Riccati map started from `P = Q_ρ`.
pub fn solve_infinite_lqr(model: &LtiModel, cost: &CostSpec, rho: f64) -> Result<RiccatiSolution> {
    if !(rho >= 0.0) {
        return Err(Error::Invalid(format!("rho must be non-negative, got {rho}")));
    }
    let (q_rho, r_rho) = augmented_costs(cost, rho);
    let mut p = q_rho.clone();
    let mut residuals = Vec::new();
    for it in 1..=RICCATI_MAX_ITERS {
        let step = riccati_step(model, &q_rho, &r_rho, &p)?;
        let res = linalg::norm_inf(&(&step.p_next - &p));
        let scale = linalg::norm_inf(&p).max(1.0);
        residuals.push(res);
        if !res.is_finite() {
            return Err(Error::RiccatiDivergence {
                iterations: it,
                residual: res,
            });
        }
        p = step.p_next;
        if res <= RICCATI_TOL * scale {
            let kinf = gain_from(model, &r_rho, &p)?.0;
            return Ok(RiccatiSolution {
                kinf,
                pinf: p,
                iterations: it,
                residuals,
            });
        }
    }
    Err(Error::RiccatiDivergence {
        iterations: RICCATI_MAX_ITERS,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// `(K, C1)` consistent with a given `P`.
fn gain_from(model: &LtiModel, r_rho: &Mat, p: &Mat) -> Result<(Mat, Mat)> {
    let bt_p = linalg::tr_mul(&model.b, p);
    let gram = linalg::add(r_rho, &linalg::mul(&bt_p, &model.b));
    let c1 = linalg::spd_inverse(&gram).ok_or(Error::SingularGain)?;
    let k = linalg::mul(&c1, &linalg::mul(&bt_p, &model.a));
    Ok((k, c1))
}

/// Builds the exact cache at `rho`.
pub fn build_cache(model: &LtiModel, cost: &CostSpec, rho: f64) -> Result<LqrCache> {
    let sol = solve_infinite_lqr(model, cost, rho)?;
    let (_, r_rho) = augmented_costs(cost, rho);
    let (kinf, c1) = gain_from(model, &r_rho, &sol.pinf)?;
    let c2 = linalg::sub(&model.a, &linalg::mul(&model.b, &kinf)).transpose();
    Ok(LqrCache {
        rho_base: rho,
        kinf,
        pinf: sol.pinf,
        c1,
        c2,
    })
}

/// Terminal weight the cached recursion implements at `rho`.
///
/// The backward pass starts from `Pinf(ρ)`, which already contains the
/// consensus penalty on the last state, so the terminal cost it minimizes has
/// Hessian `Pinf(ρ) − ρI`. Using this as `Qf` keeps the terminal linear term
/// aimed at the reference instead of a ρ-dependent point short of it.
pub fn implied_terminal_weight(model: &LtiModel, cost: &CostSpec, rho: f64) -> Result<Mat> {
    let pinf = solve_infinite_lqr(model, cost, rho)?.pinf;
    let n = pinf.nrows();
    Ok(pinf - Mat::identity(n, n) * rho)
}

/// Central differences of the exact builder, with absolute step
/// `step · max(1, ρ)`.
pub fn compute_sensitivities(model: &LtiModel, cost: &CostSpec, rho: f64, step: f64) -> Result<CacheSensitivity> {
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let h = step * rho.max(1.0);
    let hi = build_cache(model, cost, rho + h)?;
    let lo = build_cache(model, cost, rho - h)?;
    let diff = |a: &Mat, b: &Mat| (a - b) / (2.0 * h);
    Ok(CacheSensitivity {
        dkinf: diff(&hi.kinf, &lo.kinf),
        dpinf: diff(&hi.pinf, &lo.pinf),
        dc1: diff(&hi.c1, &lo.c1),
        dc2: diff(&hi.c2, &lo.c2),
    })
}

/// Exact cache and its sensitivities at `rho` with the default step.
pub fn build_with_sensitivities(model: &LtiModel, cost: &CostSpec, rho: f64) -> Result<(LqrCache, CacheSensitivity)> {
    Ok((
        build_cache(model, cost, rho)?,
        compute_sensitivities(model, cost, rho, DEFAULT_FD_STEP)?,
    ))
}

/// In-place first-order refresh `F ← F + dF·Δρ`. Touches each entry once.
pub fn taylor_update_in_place(cache: &mut LqrCache, sens: &CacheSensitivity, delta_rho: f64) {
    if delta_rho == 0.0 {
        return;
    }
    linalg::axpy_mat(&mut cache.kinf, delta_rho, &sens.dkinf);
    linalg::axpy_mat(&mut cache.pinf, delta_rho, &sens.dpinf);
    linalg::axpy_mat(&mut cache.c1, delta_rho, &sens.dc1);
    linalg::axpy_mat(&mut cache.c2, delta_rho, &sens.dc2);
    cache.rho_base += delta_rho;
}

pub fn apply_taylor_update(cache: &LqrCache, sens: &CacheSensitivity, delta_rho: f64) -> LqrCache {
    let mut out = cache.clone();
    taylor_update_in_place(&mut out, sens, delta_rho);
    out
}

impl LqrCache {
    pub fn n(&self) -> usize {
        self.pinf.nrows()
    }

    pub fn m(&self) -> usize {
        self.c1.nrows()
    }

    /// `‖P − (Q_ρ + KᵀR_ρK + (A−BK)ᵀP(A−BK))‖∞`
    pub fn dare_residual(&self, model: &LtiModel, cost: &CostSpec) -> f64 {
        let (q_rho, r_rho) = augmented_costs(cost, self.rho_base);
        let acl = &model.a - &model.b * &self.kinf;
        let rhs = q_rho + self.kinf.transpose() * r_rho * &self.kinf + acl.transpose() * &self.pinf * &acl;
        linalg::norm_inf(&(&self.pinf - rhs))
    }

    /// Largest element-wise difference over all four matrices.
    pub fn max_abs_diff(&self, other: &LqrCache) -> f64 {
        [
            (&self.kinf, &other.kinf),
            (&self.pinf, &other.pinf),
            (&self.c1, &other.c1),
            (&self.c2, &other.c2),
        ]
        .iter()
        .map(|(a, b)| (*a - *b).amax())
        .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Binary cache files
//
//   magic    8 bytes  "FOAC0001"
//   n        u32 LE
//   m        u32 LE
//   flags    u32 LE   bit 0 set when the four sensitivity matrices follow
//   rho_base f64 LE
//   Kinf, Pinf, C1, C2 [, dKinf, dPinf, dC1, dC2]  row-major f64 LE

pub const CACHE_MAGIC: &[u8; 8] = b"FOAC0001";
pub const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8;
const FLAG_SENSITIVITIES: u32 = 1;

const FIELD_NAMES: [&str; 8] = ["Kinf", "Pinf", "C1", "C2", "dKinf", "dPinf", "dC1", "dC2"];

/// Bytes after the header for a cache (and optionally its sensitivities).
pub fn payload_len(n: usize, m: usize, with_sensitivities: bool) -> usize {
    let one = (m * n + n * n + m * m + n * n) * 8;
    if with_sensitivities {
        2 * one
    } else {
        one
    }
}

fn field_shapes(n: usize, m: usize) -> [(usize, usize); 8] {
    [(m, n), (n, n), (m, m), (n, n), (m, n), (n, n), (m, m), (n, n)]
}

fn put_matrix(out: &mut Vec<u8>, mat: &Mat) {
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            out.extend_from_slice(&mat[(i, j)].to_le_bytes());
        }
    }
}

pub fn encode_cache(cache: &LqrCache, sens: Option<&CacheSensitivity>) -> Vec<u8> {
    let (n, m) = (cache.n(), cache.m());
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len(n, m, sens.is_some()));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    let flags = if sens.is_some() { FLAG_SENSITIVITIES } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&cache.rho_base.to_le_bytes());
    for mat in [&cache.kinf, &cache.pinf, &cache.c1, &cache.c2] {
        put_matrix(&mut out, mat);
    }
    if let Some(s) = sens {
        for mat in [&s.dkinf, &s.dpinf, &s.dc1, &s.dc2] {
            put_matrix(&mut out, mat);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize, field: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::CacheFormat(format!("truncated while reading {field}")));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize, field: &str) -> Result<Mat> {
        let raw = self.take(rows * cols * 8, field)?;
        Ok(Mat::from_row_iterator(
            rows,
            cols,
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        ))
    }
}

/// Decodes a cache file; sensitivities are `None` for the cache-only variant.
pub fn decode_cache(bytes: &[u8]) -> Result<(LqrCache, Option<CacheSensitivity>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != CACHE_MAGIC {
        return Err(Error::CacheFormat("bad magic".into()));
    }
    let n = r.u32("n")? as usize;
    let m = r.u32("m")? as usize;
    let flags = r.u32("flags")?;
    if n == 0 || m == 0 {
        return Err(Error::CacheFormat(format!("invalid dimensions n={n}, m={m}")));
    }
    if flags & !FLAG_SENSITIVITIES != 0 {
        return Err(Error::CacheFormat(format!("unknown flags {flags:#x}")));
    }
    let rho_base = r.f64("rho_base")?;
    let with_sens = flags & FLAG_SENSITIVITIES != 0;
    let count = if with_sens { 8 } else { 4 };
    let shapes = field_shapes(n, m);
    let mut mats = Vec::with_capacity(count);
    for (name, (rows, cols)) in FIELD_NAMES.iter().zip(shapes).take(count) {
        mats.push(r.matrix(rows, cols, name)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::CacheFormat(format!(
            "{} trailing bytes after {}",
            bytes.len() - r.pos,
            FIELD_NAMES[count - 1]
        )));
    }
    let mut it = mats.into_iter();
    let mut next = || it.next().unwrap();
    let cache = LqrCache {
        rho_base,
        kinf: next(),
        pinf: next(),
        c1: next(),
        c2: next(),
    };
    let sens = with_sens.then(|| CacheSensitivity {
        dkinf: next(),
        dpinf: next(),
        dc1: next(),
        dc2: next(),
    });
    Ok((cache, sens))
}

pub fn save_cache(cache: &LqrCache, sens: Option<&CacheSensitivity>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_cache(cache, sens)).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: &Path) -> Result<(LqrCache, Option<CacheSensitivity>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}
