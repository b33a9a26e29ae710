//! `cache build` and `cache inspect`.

use std::fs;
use std::path::Path;

use foac_core::cache::{self, CACHE_MAGIC, HEADER_LEN};
use foac_core::{linalg, LqrCache, MpcProblem};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::setup::invalid;

/// Human-readable description of a cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheInfo {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub has_sensitivities: bool,
    /// Bytes of matrix data with and without sensitivities, and their ratio.
    pub payload_bytes_with_sensitivities: usize,
    pub payload_bytes_cache_only: usize,
    pub size_ratio: f64,
    /// Size of the file as stored (or as it would be stored by `build`).
    pub file_bytes: usize,
    pub closed_loop_spectral_radius: f64,
    /// Present when the cache was built from a model in this invocation.
    pub riccati_iterations: Option<usize>,
    pub dare_residual: Option<f64>,
}

fn describe(c: &LqrCache, has_sens: bool) -> CacheInfo {
    let (n, m) = (c.n(), c.m());
    CacheInfo {
        n,
        m,
        rho: c.rho_base,
        has_sensitivities: has_sens,
        payload_bytes_with_sensitivities: cache::payload_len(n, m, true),
        payload_bytes_cache_only: cache::payload_len(n, m, false),
        size_ratio: cache::payload_len(n, m, true) as f64 / cache::payload_len(n, m, false) as f64,
        file_bytes: HEADER_LEN + cache::payload_len(n, m, has_sens),
        closed_loop_spectral_radius: linalg::spectral_radius(&c.c2),
        riccati_iterations: None,
        dare_residual: None,
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho >= 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("--rho must be a finite non-negative number, got {rho}")))
    }
}

/// Builds the cache and sensitivities for the problem in `model_file` and
/// writes them to `out`.
pub fn build(model_file: &Path, rho: f64, out: &Path) -> Result<CacheInfo> {
    check_rho(rho)?;
    let problem = MpcProblem::load(model_file)?;
    let sol = cache::solve_infinite_lqr(&problem.model, &problem.cost, rho)?;
    let (c, sens) = cache::build_with_sensitivities(&problem.model, &problem.cost, rho)?;
    cache::save_cache(&c, Some(&sens), out)?;
    let mut info = describe(&c, true);
    info.riccati_iterations = Some(sol.iterations);
    info.dare_residual = Some(c.dare_residual(&problem.model, &problem.cost));
    Ok(info)
}

/// Describes `file`: a cache file is decoded as is; a problem file is built
/// at `rho` without writing anything.
pub fn inspect(file: &Path, rho: Option<f64>) -> Result<CacheInfo> {
    let bytes = fs::read(file).map_err(|e| CliError::io(file, e))?;
    if bytes.starts_with(CACHE_MAGIC) {
        let (c, sens) = cache::decode_cache(&bytes)?;
        return Ok(describe(&c, sens.is_some()));
    }
    let rho = rho.ok_or_else(|| invalid("--rho is required when inspecting a problem file"))?;
    check_rho(rho)?;
    let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{}: neither a cache nor a problem file", file.display())))?;
    let problem = MpcProblem::from_json(&text)?;
    let sol = cache::solve_infinite_lqr(&problem.model, &problem.cost, rho)?;
    let c = cache::build_cache(&problem.model, &problem.cost, rho)?;
    let mut info = describe(&c, true);
    info.riccati_iterations = Some(sol.iterations);
    info.dare_residual = Some(c.dare_residual(&problem.model, &problem.cost));
    Ok(info)
}
