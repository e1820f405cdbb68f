//! Shared fixtures for the integration suites.
#![allow(dead_code)] // each test binary uses its own subset

use chainopt::ipm::IpmIterate;
use chainopt::problem::{msd_chain, MsdConfig, ProblemInstance, SplitMix};

pub fn msd(n: usize, t: usize, seed: u64) -> ProblemInstance {
    msd_chain(n, t, seed, &MsdConfig::default()).expect("valid generator arguments")
}

/// A strictly interior iterate with nontrivial primal content, deterministic
/// in `seed`.
pub fn random_interior(inst: &ProblemInstance, seed: u64) -> IpmIterate {
    let mut rng = SplitMix::new(seed);
    let mut it = IpmIterate::zeros(inst);
    for j in 0..inst.n_subsystems() {
        for v in it.x[j].iter_mut().chain(&mut it.u[j]).chain(&mut it.p[j]) {
            *v = rng.uniform(-1.0, 1.0);
        }
        for v in it.lam[j].iter_mut().chain(&mut it.theta[j]) {
            *v = rng.uniform(0.2, 2.0);
        }
    }
    it
}

pub fn rel_diff_inf(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-30);
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
