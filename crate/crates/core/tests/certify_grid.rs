//! Dense spectral certification across a grid of generator instances: every
//! property the pair-sweep preconditioner relies on, checked at desk scale.

mod common;

use chainopt::kkt::{assemble_full, reduce};
use chainopt::oracle;
use common::{msd, random_interior};

#[test]
fn certification_grid() {
    let mut worst_rho: f64 = 0.0;
    let mut worst_margin: f64 = f64::INFINITY;
    for n in 1..=6usize {
        for t in 1..=5usize {
            for seed in 0..3u64 {
                let inst = msd(n, t, seed);
                let it = random_interior(&inst, 1000 + seed);
                let sys = assemble_full(&inst, &it, 0.1).unwrap();
                let red = reduce(&sys).unwrap();
                for l in 1..=4usize {
                    let diag = oracle::certify(&red, l).unwrap_or_else(|e| {
                        panic!("certification failed at n={n}, t={t}, seed={seed}, l={l}: {e}")
                    });
                    assert!(diag.rho < 1.0);
                    assert!(diag.psi_eig_min > 0.0);
                    assert!(diag.kappa_precond <= diag.kappa_bound + 1e-8);
                    worst_rho = worst_rho.max(diag.rho);
                    worst_margin = worst_margin.min(diag.kappa_bound + 1e-8 - diag.kappa_precond);
                }
            }
        }
    }
    println!("certification grid done: max rho {worst_rho:.6}, min bound margin {worst_margin:.3e}");
}
