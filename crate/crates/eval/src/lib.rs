//! Fixtures shared by the acceptance checks and the benchmarks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use foac_core::quadrotor::{build_quadrotor_model, CostWeights, QuadrotorParams};
use foac_core::{CostSpec, LtiModel, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default 12-state quadrotor with the default tracking weights.
pub fn quadrotor() -> (LtiModel, CostSpec) {
    (
        build_quadrotor_model(&QuadrotorParams::default()).expect("default quadrotor is valid"),
        CostWeights::default().cost(),
    )
}

/// Controllable random system with spectral radius around one and unequal diagonal
/// weights. Q = R = I would make the gain independent of ρ.
pub fn random_system(n: usize, m: usize, seed: u64) -> (LtiModel, CostSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) * (1.0 / (n as f64).sqrt());
        let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let model = LtiModel::new(a, b, 0.1).expect("shapes agree");
        if model.is_controllable() {
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
            let r: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            return (model, CostSpec::diagonal(&q, &r));
        }
    }
}

/// Directory holding the shipped experiment configs.
pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn config(name: &str) -> String {
    configs_dir().join(name).display().to_string()
}

/// Every file in `dir` except the wall-clock report, by name.
pub fn deterministic_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir exists") {
        let path = entry.expect("readable entry").path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "timing.json" {
            out.insert(name, fs::read(&path).expect("readable output"));
        }
    }
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).expect("readable json")).expect("valid json")
}

/// Header and rows of a CSV whose fields never contain commas.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).expect("readable csv");
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap_or_default();
    (header, lines.collect())
}
