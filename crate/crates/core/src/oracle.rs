//! Dense, trust-the-math reference computations for tests and diagnostics.
//!
//! Everything here favours transparency over speed: dense LU with partial
//! pivoting, a cyclic Jacobi eigensolver, an independent entry-by-entry
//! assembly of the linearized KKT system written straight from the
//! optimality conditions, and the spectral certification of the pair-sweep
//! preconditioner. None of it shares code with the structured solver paths
//! it is used to check, beyond the vector layout bookkeeping.

use crate::dense::{sym_eig, Mat};
use crate::ipm::IpmIterate;
use crate::kkt::{full_layout, ReducedSystem};
use crate::krylov::Preconditioner;
use crate::precond::PairSplit;
use crate::problem::ProblemInstance;
use crate::{Error, Result};

/// Size guard for the dense certification path.
pub const CERTIFY_GUARD: usize = 4000;

/// Solve `a x = b` densely by partial-pivot LU.
pub fn dense_lu_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "dense solve: {}x{} matrix against rhs of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    Ok(a.lu()?.solve(b))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    Ok(sym_eig(a)?.values)
}

/// Spectral radius of a square matrix.
///
/// Symmetric inputs go through the eigensolver. General inputs use power
/// iteration on the norm growth rate; if that fails to settle (for example a
/// complex-conjugate dominant pair), the iteration is retried on the squared
/// matrix, whose dominant eigenvalue is the radius squared.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("spectral radius of a non-square matrix".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(0.0);
    }
    if a.is_symmetric(1e-12 * a.norm_inf().max(1.0)) {
        let vals = sym_eigenvalues(a)?;
        return Ok(vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    if let Some(r) = power_radius(a, 4000) {
        return Ok(r);
    }
    let sq = a.matmul(a);
    if let Some(r) = power_radius(&sq, 4000) {
        return Ok(r.sqrt());
    }
    Err(Error::PowerIterationDiverged)
}

fn power_radius(a: &Mat, iter_max: usize) -> Option<f64> {
    let n = a.rows();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect();
    let mut prev = 0.0_f64;
    let mut stable = 0usize;
    for _ in 0..iter_max {
        let w = a.matvec(&v);
        let norm = crate::dense::norm2(&w);
        if norm <= 1e-300 {
            return Some(0.0);
        }
        let est = norm / crate::dense::norm2(&v);
        for (vv, &wv) in v.iter_mut().zip(&w) {
            *vv = wv / norm;
        }
        if (est - prev).abs() <= 1e-12 * est.max(1e-30) {
            stable += 1;
            if stable >= 5 {
                return Some(est);
            }
        } else {
            stable = 0;
        }
        prev = est;
    }
    None
}

/// Independent dense assembly of the linearized KKT system, written directly
/// from the optimality conditions rather than from the per-subsystem block
/// exports. Returns the matrix and the Newton right-hand side
/// `target - J s`, where `target` stacks the prescribed data and the
/// complementarity goal.
pub fn dense_full_kkt(
    inst: &ProblemInstance,
    iterate: &IpmIterate,
    sigma_mu: f64,
) -> Result<(Mat, Vec<f64>)> {
    iterate.check_dims(inst)?;
    let lay = full_layout(inst);
    if lay.total > crate::blocktri::DENSE_GUARD {
        return Err(Error::SizeGuard { dim: lay.total, guard: crate::blocktri::DENSE_GUARD });
    }
    let n = inst.n_subsystems();
    let t_max = inst.horizon();
    let mut jmat = Mat::zeros(lay.total, lay.total);
    let mut target = vec![0.0; lay.total];

    let put = |m: &mut Mat, r0: usize, c0: usize, blk: &Mat| {
        for r in 0..blk.rows() {
            for c in 0..blk.cols() {
                m[(r0 + r, c0 + c)] += blk[(r, c)];
            }
        }
    };

    for j in 0..n {
        let nj = inst.state_dim(j);
        let mj = inst.input_dim(j);
        let nuj = inst.constraint_dim(j);
        for t in 0..=t_max {
            let stage = inst.stage(j, t);
            // Stationarity in x[j][t].
            let rx = lay.x[j] + t * nj;
            put(&mut jmat, rx, lay.x[j] + t * nj, &stage.cost.q);
            for i in 0..nj {
                jmat[(rx + i, lay.p[j] + t * nj + i)] += -1.0;
            }
            put(&mut jmat, rx, lay.lam[j] + t * nuj, &stage.constraint.c.transpose());
            if t < t_max {
                put(&mut jmat, rx, lay.u[j] + t * mj, &stage.cost.s.transpose());
                put(&mut jmat, rx, lay.p[j] + (t + 1) * nj, &inst.dynamics(j, t).a.transpose());
                if j > 0 {
                    let nprev = inst.state_dim(j - 1);
                    put(
                        &mut jmat,
                        rx,
                        lay.p[j - 1] + (t + 1) * nprev,
                        &inst.dynamics(j - 1, t).f.transpose(),
                    );
                }
                if j + 1 < n {
                    let nnext = inst.state_dim(j + 1);
                    put(
                        &mut jmat,
                        rx,
                        lay.p[j + 1] + (t + 1) * nnext,
                        &inst.dynamics(j + 1, t).e.transpose(),
                    );
                }
            }
            // Stationarity in u[j][t].
            if t < t_max {
                let ru = lay.u[j] + t * mj;
                put(&mut jmat, ru, lay.x[j] + t * nj, &stage.cost.s);
                put(&mut jmat, ru, lay.u[j] + t * mj, &stage.cost.r);
                put(&mut jmat, ru, lay.p[j] + (t + 1) * nj, &inst.dynamics(j, t).b.transpose());
                put(&mut jmat, ru, lay.lam[j] + t * nuj, &stage.constraint.d.transpose());
            }
            // Dynamics defining x[j][t].
            let rp = lay.p[j] + t * nj;
            for i in 0..nj {
                jmat[(rp + i, lay.x[j] + t * nj + i)] += -1.0;
            }
            if t == 0 {
                for i in 0..nj {
                    target[rp + i] = -inst.boundary.xi[j][i];
                }
            } else {
                let dyn_ = inst.dynamics(j, t - 1);
                put(&mut jmat, rp, lay.x[j] + (t - 1) * nj, &dyn_.a);
                put(&mut jmat, rp, lay.u[j] + (t - 1) * mj, &dyn_.b);
                if j > 0 {
                    let nprev = inst.state_dim(j - 1);
                    put(&mut jmat, rp, lay.x[j - 1] + (t - 1) * nprev, &dyn_.e);
                } else {
                    let chi = &inst.boundary.chi[t - 1];
                    let contribution = dyn_.e.matvec(chi);
                    for i in 0..nj {
                        target[rp + i] -= contribution[i];
                    }
                }
                if j + 1 < n {
                    let nnext = inst.state_dim(j + 1);
                    put(&mut jmat, rp, lay.x[j + 1] + (t - 1) * nnext, &dyn_.f);
                } else {
                    let zeta = &inst.boundary.zeta[t - 1];
                    let contribution = dyn_.f.matvec(zeta);
                    for i in 0..nj {
                        target[rp + i] -= contribution[i];
                    }
                }
            }
            // Inequality rows with slack.
            let rl = lay.lam[j] + t * nuj;
            put(&mut jmat, rl, lay.x[j] + t * nj, &stage.constraint.c);
            if t < t_max {
                put(&mut jmat, rl, lay.u[j] + t * mj, &stage.constraint.d);
            }
            for i in 0..nuj {
                jmat[(rl + i, lay.theta[j] + t * nuj + i)] += 1.0;
                target[rl + i] = stage.constraint.kappa[i];
            }
            // Complementarity rows.
            let rt = lay.theta[j] + t * nuj;
            for i in 0..nuj {
                let k = t * nuj + i;
                jmat[(rt + i, lay.lam[j] + k)] += iterate.theta[j][k];
                jmat[(rt + i, lay.theta[j] + k)] += iterate.lam[j][k];
                // theta.lam + lam.theta - lam.theta + sigma mu = lam.theta + sigma mu
                target[rt + i] = iterate.lam[j][k] * iterate.theta[j][k] + sigma_mu;
            }
        }
    }

    let s = crate::kkt::iterate_to_vec(inst, iterate);
    let mut rhs = target;
    jmat.matvec_acc(&s, &mut rhs, -1.0);
    Ok((jmat, rhs))
}

/// Schur-eliminate the complement of `keep` from `a x = b`, returning the
/// reduced matrix and right-hand side over the kept indices (in the order
/// given).
pub fn schur_eliminate(a: &Mat, b: &[f64], keep: &[usize]) -> Result<(Mat, Vec<f64>)> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(Error::DimensionMismatch("schur elimination shapes".into()));
    }
    let n = a.rows();
    let mut is_kept = vec![false; n];
    for &i in keep {
        is_kept[i] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        Mat::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])])
    };
    let a_kk = pick(keep, keep);
    let a_ke = pick(keep, &elim);
    let a_ek = pick(&elim, keep);
    let a_ee = pick(&elim, &elim);
    let b_k: Vec<f64> = keep.iter().map(|&i| b[i]).collect();
    let b_e: Vec<f64> = elim.iter().map(|&i| b[i]).collect();
    let ee = a_ee.lu()?;
    let ee_inv_ek = ee.solve_mat(&a_ek);
    let ee_inv_be = ee.solve(&b_e);
    let reduced = a_kk.sub(&a_ke.matmul(&ee_inv_ek));
    let mut rhs = b_k;
    a_ke.matvec_acc(&ee_inv_be, &mut rhs, -1.0);
    Ok((reduced, rhs))
}

/// Spectral certification of the pair-sweep preconditioner at sweep count `l`.
#[derive(Clone, Debug)]
pub struct SpectralDiagnostics {
    /// Spectral radius of the sweep iteration map.
    pub rho: f64,
    /// Condition number of the preconditioned operator.
    pub kappa_precond: f64,
    /// Analytic bound `(1 + rho^l) / (1 - rho^l)`.
    pub kappa_bound: f64,
    /// Extreme eigenvalues of the squared reduced matrix.
    pub psi_eig_min: f64,
    pub psi_eig_max: f64,
}

/// Certify, densely, every spectral property the pair-sweep preconditioner
/// relies on:
///
/// - the sweep operator after `l` sweeps is symmetric positive definite;
/// - the alternating-sign similarity maps the squared matrix onto
///   `2 D - M^2`, which is positive definite;
/// - the preconditioned operator equals `I - (D^{-1} C)^l` with
///   `C = D - M^2`;
/// - the iteration map's spectral radius is below one; and
/// - the preconditioned condition number respects its analytic bound.
///
/// Violations come back as [`Error::InvalidConfig`]-style certification
/// failures naming the property.
pub fn certify(red: &ReducedSystem, l: usize) -> Result<SpectralDiagnostics> {
    if l == 0 {
        return Err(Error::InvalidConfig("sweep count must be at least 1".into()));
    }
    let total = red.total_dim();
    if total > CERTIFY_GUARD {
        return Err(Error::SizeGuard { dim: total, guard: CERTIFY_GUARD });
    }
    let fail = |what: &str, detail: String| {
        Err(Error::InvalidConfig(format!("certification failed: {what}: {detail}")))
    };

    let m = red.to_blocktri()?.to_dense()?;
    let psi = m.matmul(&m);
    let split = PairSplit::new(red);
    let mut dmat = Mat::zeros(total, total);
    for k in 0..split.pair_count() {
        let range = split.range(k);
        dmat.set_block(range.start, range.start, &split.dense_pair_diag(k));
    }
    let coupling = dmat.sub(&psi); // C = D - M^2
    let scale = psi.norm_inf().max(1.0);

    // Alternating-sign similarity: U' M^2 U = 2D - M^2, positive definite.
    let mut u_sign = vec![0.0; total];
    for k in 0..split.pair_count() {
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        for i in split.range(k) {
            u_sign[i] = s;
        }
    }
    let mut u_psi_u = psi.clone();
    for r in 0..total {
        for c in 0..total {
            u_psi_u[(r, c)] *= u_sign[r] * u_sign[c];
        }
    }
    let two_d_minus_psi = dmat.scale(2.0).sub(&psi);
    if u_psi_u.sub(&two_d_minus_psi).norm_inf() > 1e-10 * scale {
        return fail(
            "similarity identity",
            format!("defect {:.3e}", u_psi_u.sub(&two_d_minus_psi).norm_inf()),
        );
    }
    let reflected_min = sym_eigenvalues(&symmetrized(&two_d_minus_psi))?[0];
    if reflected_min <= 0.0 {
        return fail("reflected matrix definiteness", format!("min eigenvalue {reflected_min:.3e}"));
    }

    // Spectral radius of D^{-1} C through the SPD similarity
    // D^{-1/2} C D^{-1/2}.
    let d_eig = sym_eig(&symmetrized(&dmat))?;
    let dmin = d_eig.values[0];
    if dmin <= 0.0 {
        return fail("pair-diagonal definiteness", format!("min eigenvalue {dmin:.3e}"));
    }
    let d_inv_half = scaled_vectors(&d_eig.vectors, &d_eig.values, |v| 1.0 / v.sqrt());
    let sim = d_inv_half.matmul(&coupling).matmul(&d_inv_half);
    let mu = sym_eigenvalues(&symmetrized(&sim))?;
    let rho = mu.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(rho < 1.0) {
        return fail("sweep contraction", format!("spectral radius {rho:.6}"));
    }

    // Dense sweep operator W_l = sum_{i<l} (D^{-1} C)^i D^{-1}: SPD.
    let dlu = dmat.lu()?;
    let d_inv = dlu.solve_mat(&Mat::identity(total));
    let d_inv_c = dlu.solve_mat(&coupling);
    let mut w = d_inv.clone();
    let mut power = Mat::identity(total);
    for _ in 1..l {
        power = d_inv_c.matmul(&power);
        w = w.add(&power.matmul(&d_inv));
    }
    let w_min = sym_eigenvalues(&symmetrized(&w))?[0];
    if w_min <= 0.0 {
        return fail("sweep operator definiteness", format!("min eigenvalue {w_min:.3e}"));
    }

    // Preconditioned operator identity: W_l M^2 = I - (D^{-1} C)^l.
    let w_psi = w.matmul(&psi);
    let mut dc_pow = Mat::identity(total);
    for _ in 0..l {
        dc_pow = d_inv_c.matmul(&dc_pow);
    }
    let identity_gap = w_psi.add(&dc_pow).sub(&Mat::identity(total)).norm_inf();
    if identity_gap > 1e-10 * scale.max(1.0) {
        return fail("sweep power-series identity", format!("defect {identity_gap:.3e}"));
    }

    // Condition number of the preconditioned operator from the eigenvalues
    // 1 - mu^l of I - (D^{-1} C)^l.
    let mut lam_min = f64::INFINITY;
    let mut lam_max = f64::NEG_INFINITY;
    for &m_i in &mu {
        let lam = 1.0 - m_i.powi(l as i32);
        lam_min = lam_min.min(lam);
        lam_max = lam_max.max(lam);
    }
    if lam_min <= 0.0 {
        return fail("preconditioned spectrum positivity", format!("min eigenvalue {lam_min:.3e}"));
    }
    let kappa_precond = lam_max / lam_min;
    let kappa_bound = (1.0 + rho.powi(l as i32)) / (1.0 - rho.powi(l as i32));
    if kappa_precond > kappa_bound + 1e-8 {
        return fail(
            "conditioning bound",
            format!("kappa {kappa_precond:.9} exceeds bound {kappa_bound:.9}"),
        );
    }

    let psi_eigs = sym_eigenvalues(&symmetrized(&psi))?;
    Ok(SpectralDiagnostics {
        rho,
        kappa_precond,
        kappa_bound,
        psi_eig_min: psi_eigs[0],
        psi_eig_max: *psi_eigs.last().unwrap(),
    })
}

fn symmetrized(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            out[(r, c)] = 0.5 * (m[(r, c)] + m[(c, r)]);
        }
    }
    out
}

/// `vectors * diag(f(values)) * vectors'`.
fn scaled_vectors(vectors: &Mat, values: &[f64], f: impl Fn(f64) -> f64) -> Mat {
    let n = vectors.rows();
    let mut scaled = Mat::zeros(n, n);
    for (i, &v) in values.iter().enumerate() {
        let fv = f(v);
        for r in 0..n {
            scaled[(r, i)] = vectors[(r, i)] * fv;
        }
    }
    scaled.matmul_nt(vectors)
}

/// Exact dense preconditioner: factors the squared reduced matrix once and
/// applies its inverse. Test and diagnostic use only.
pub struct ExactDensePreconditioner {
    lu: crate::dense::LuFactor,
}

impl ExactDensePreconditioner {
    pub fn new(red: &ReducedSystem) -> Result<Self> {
        let m = red.to_blocktri()?.to_dense()?;
        let psi = m.matmul(&m);
        Ok(ExactDensePreconditioner { lu: psi.lu()? })
    }
}

impl Preconditioner for ExactDensePreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.lu.solve(r)
    }
}
