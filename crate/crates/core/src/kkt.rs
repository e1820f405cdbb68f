//! Linearized KKT assembly, structure-preserving elimination, and recovery.
//!
//! For an interior iterate, the Newton direction solves a block tri-diagonal
//! system across subsystems whose per-subsystem diagonal block stacks the
//! five variable groups `(x, u, p, lambda, theta)`. [`assemble_full`] builds
//! that system's right-hand side (the matrix itself is implied by the
//! instance plus the iterate's `lambda`/`theta` diagonals and never
//! materialized outside of the dense exports below).
//!
//! [`reduce`] eliminates `theta`, then `lambda`, then `u`, in that order,
//! leaving a symmetric block tri-diagonal system in `(dx, dp)` per subsystem
//! whose inner blocks are block diagonal or block bi-diagonal in time. All of
//! the elimination arithmetic touches only stage-sized matrices, so its cost
//! is linear in both the subsystem count and the horizon. [`recover`] walks
//! the eliminations backwards to restore `(du, dlambda, dtheta)`.

use rayon::prelude::*;

use crate::blocktri::BlockTriDiag;
use crate::dense::{CholFactor, Mat};
use crate::ipm::IpmIterate;
use crate::problem::ProblemInstance;
use crate::{Error, Result};

/// Entry floor below which a multiplier or slack is treated as leaving the
/// interior (its reciprocal would overflow).
pub const INTERIOR_FLOOR: f64 = 1e-300;

/// Offsets into the stacked full-KKT vector, ordered per subsystem as
/// `(x, u, p, lambda, theta)`.
#[derive(Clone, Debug)]
pub struct FullLayout {
    pub x: Vec<usize>,
    pub u: Vec<usize>,
    pub p: Vec<usize>,
    pub lam: Vec<usize>,
    pub theta: Vec<usize>,
    pub block: Vec<usize>,
    pub total: usize,
}

pub fn full_layout(inst: &ProblemInstance) -> FullLayout {
    let n = inst.n_subsystems();
    let mut layout = FullLayout {
        x: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        lam: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        block: Vec::with_capacity(n + 1),
        total: 0,
    };
    let mut off = 0;
    for j in 0..n {
        layout.block.push(off);
        layout.x.push(off);
        off += inst.x_len(j);
        layout.u.push(off);
        off += inst.u_len(j);
        layout.p.push(off);
        off += inst.x_len(j);
        layout.lam.push(off);
        off += inst.con_len(j);
        layout.theta.push(off);
        off += inst.con_len(j);
    }
    layout.block.push(off);
    layout.total = off;
    layout
}

/// Offsets into the stacked reduced vector, ordered per subsystem as `(x, p)`.
#[derive(Clone, Debug)]
pub struct ReducedLayout {
    pub x: Vec<usize>,
    pub p: Vec<usize>,
    pub block: Vec<usize>,
    pub total: usize,
}

pub fn reduced_layout(inst: &ProblemInstance) -> ReducedLayout {
    let n = inst.n_subsystems();
    let mut layout = ReducedLayout {
        x: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        block: Vec::with_capacity(n + 1),
        total: 0,
    };
    let mut off = 0;
    for j in 0..n {
        layout.block.push(off);
        layout.x.push(off);
        off += inst.x_len(j);
        layout.p.push(off);
        off += inst.x_len(j);
    }
    layout.block.push(off);
    layout.total = off;
    layout
}

/// The linearized KKT system at one interior iterate: the multiplier/slack
/// diagonals that parameterize the matrix, and the per-subsystem right-hand
/// side partitions.
pub struct FullKktSystem<'a> {
    inst: &'a ProblemInstance,
    theta: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    pub bx: Vec<Vec<f64>>,
    pub bu: Vec<Vec<f64>>,
    pub bp: Vec<Vec<f64>>,
    pub blam: Vec<Vec<f64>>,
    pub btheta: Vec<Vec<f64>>,
}

/// Assemble the Newton right-hand side at `iterate`, with complementarity
/// target `sigma_mu` (centering parameter times duality gap).
pub fn assemble_full<'a>(
    inst: &'a ProblemInstance,
    iterate: &IpmIterate,
    sigma_mu: f64,
) -> Result<FullKktSystem<'a>> {
    let n = inst.n_subsystems();
    iterate.check_dims(inst)?;
    for j in 0..n {
        for (idx, (&l, &t)) in iterate.lam[j].iter().zip(&iterate.theta[j]).enumerate() {
            if !(l >= INTERIOR_FLOOR) || !(t >= INTERIOR_FLOOR) {
                return Err(Error::NonInterior(format!(
                    "lambda or theta entry {idx} of subsystem {} is {l:.3e}/{t:.3e}",
                    j + 1
                )));
            }
        }
    }
    let t_max = inst.horizon();
    let parts: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| {
            let nj = inst.state_dim(j);
            let mj = inst.input_dim(j);
            let nuj = inst.constraint_dim(j);
            let x = &iterate.x[j];
            let u = &iterate.u[j];
            let p = &iterate.p[j];
            let lam = &iterate.lam[j];
            let th = &iterate.theta[j];

            let mut bx = vec![0.0; inst.x_len(j)];
            let mut bu = vec![0.0; inst.u_len(j)];
            let mut bp = vec![0.0; inst.x_len(j)];
            let mut blam = vec![0.0; inst.con_len(j)];
            let mut btheta = vec![0.0; inst.con_len(j)];

            for t in 0..=t_max {
                let stage = inst.stage(j, t);
                let xr = &mut bx[t * nj..(t + 1) * nj];
                // Stationarity in x: Qx + S'u + (A'p) + C'lam + neighbour costate terms.
                stage.cost.q.matvec_acc(&x[t * nj..(t + 1) * nj], xr, -1.0);
                stage.constraint.c.matvec_t_acc(&lam[t * nuj..(t + 1) * nuj], xr, -1.0);
                crate::dense::axpy(1.0, &p[t * nj..(t + 1) * nj], xr); // -(-I p_t)
                if t < t_max {
                    stage.cost.s.matvec_t_acc(&u[t * mj..(t + 1) * mj], xr, -1.0);
                    let dyn_ = inst.dynamics(j, t);
                    dyn_.a.matvec_t_acc(&p[(t + 1) * nj..(t + 2) * nj], xr, -1.0);
                    if j > 0 {
                        let fprev = &inst.dynamics(j - 1, t).f; // n_{j-1} x n_j
                        let p_prev = &iterate.p[j - 1];
                        let nprev = inst.state_dim(j - 1);
                        fprev.matvec_t_acc(&p_prev[(t + 1) * nprev..(t + 2) * nprev], xr, -1.0);
                    }
                    if j + 1 < n {
                        let enext = &inst.dynamics(j + 1, t).e; // n_{j+1} x n_j
                        let p_next = &iterate.p[j + 1];
                        let nnext = inst.state_dim(j + 1);
                        enext.matvec_t_acc(&p_next[(t + 1) * nnext..(t + 2) * nnext], xr, -1.0);
                    }
                }

                if t < t_max {
                    // Stationarity in u: Sx + Ru + B'p_{t+1} + D'lam.
                    let stage_u = &mut bu[t * mj..(t + 1) * mj];
                    stage.cost.s.matvec_acc(&x[t * nj..(t + 1) * nj], stage_u, -1.0);
                    stage.cost.r.matvec_acc(&u[t * mj..(t + 1) * mj], stage_u, -1.0);
                    let dyn_ = inst.dynamics(j, t);
                    dyn_.b.matvec_t_acc(&p[(t + 1) * nj..(t + 2) * nj], stage_u, -1.0);
                    stage.constraint.d.matvec_t_acc(&lam[t * nuj..(t + 1) * nuj], stage_u, -1.0);
                }

                // Dynamics rows: prescribed data minus current defect.
                let pr = &mut bp[t * nj..(t + 1) * nj];
                crate::dense::axpy(1.0, &x[t * nj..(t + 1) * nj], pr); // -(-I x_t)
                if t == 0 {
                    crate::dense::axpy(-1.0, &inst.boundary.xi[j], pr);
                } else {
                    let dyn_ = inst.dynamics(j, t - 1);
                    dyn_.a.matvec_acc(&x[(t - 1) * nj..t * nj], pr, -1.0);
                    dyn_.b.matvec_acc(&u[(t - 1) * mj..t * mj], pr, -1.0);
                    if j == 0 {
                        dyn_.e.matvec_acc(&inst.boundary.chi[t - 1], pr, -1.0);
                    } else {
                        let nprev = inst.state_dim(j - 1);
                        dyn_.e.matvec_acc(&iterate.x[j - 1][(t - 1) * nprev..t * nprev], pr, -1.0);
                    }
                    if j + 1 == n {
                        dyn_.f.matvec_acc(&inst.boundary.zeta[t - 1], pr, -1.0);
                    } else {
                        let nnext = inst.state_dim(j + 1);
                        dyn_.f.matvec_acc(&iterate.x[j + 1][(t - 1) * nnext..t * nnext], pr, -1.0);
                    }
                }

                // Inequality rows: kappa - (Cx + Du + theta).
                let lr = &mut blam[t * nuj..(t + 1) * nuj];
                crate::dense::axpy(1.0, &stage.constraint.kappa, lr);
                stage.constraint.c.matvec_acc(&x[t * nj..(t + 1) * nj], lr, -1.0);
                if t < t_max {
                    stage.constraint.d.matvec_acc(&u[t * mj..(t + 1) * mj], lr, -1.0);
                }
                crate::dense::axpy(-1.0, &th[t * nuj..(t + 1) * nuj], lr);

                // Complementarity rows: sigma*mu - lambda.theta.
                let tr = &mut btheta[t * nuj..(t + 1) * nuj];
                for (i, r) in tr.iter_mut().enumerate() {
                    let k = t * nuj + i;
                    *r = sigma_mu - lam[k] * th[k];
                }
            }
            (bx, bu, bp, blam, btheta)
        })
        .collect();

    let mut sys = FullKktSystem {
        inst,
        theta: iterate.theta.clone(),
        lambda: iterate.lam.clone(),
        bx: Vec::with_capacity(n),
        bu: Vec::with_capacity(n),
        bp: Vec::with_capacity(n),
        blam: Vec::with_capacity(n),
        btheta: Vec::with_capacity(n),
    };
    for (bx, bu, bp, blam, btheta) in parts {
        sys.bx.push(bx);
        sys.bu.push(bu);
        sys.bp.push(bp);
        sys.blam.push(blam);
        sys.btheta.push(btheta);
    }
    Ok(sys)
}

impl<'a> FullKktSystem<'a> {
    pub fn instance(&self) -> &'a ProblemInstance {
        self.inst
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    /// Stack the right-hand side in full-layout order.
    pub fn rhs_vec(&self) -> Vec<f64> {
        let layout = full_layout(self.inst);
        let mut b = vec![0.0; layout.total];
        for j in 0..self.inst.n_subsystems() {
            b[layout.x[j]..layout.x[j] + self.bx[j].len()].copy_from_slice(&self.bx[j]);
            b[layout.u[j]..layout.u[j] + self.bu[j].len()].copy_from_slice(&self.bu[j]);
            b[layout.p[j]..layout.p[j] + self.bp[j].len()].copy_from_slice(&self.bp[j]);
            b[layout.lam[j]..layout.lam[j] + self.blam[j].len()].copy_from_slice(&self.blam[j]);
            b[layout.theta[j]..layout.theta[j] + self.btheta[j].len()]
                .copy_from_slice(&self.btheta[j]);
        }
        b
    }

    /// Dense diagonal block of subsystem `j` over the stacked grid
    /// `(x, u, p, lambda, theta)`.
    pub fn phi_dense(&self, j: usize) -> Mat {
        let inst = self.inst;
        let t_max = inst.horizon();
        let (nj, mj, nuj) = (inst.state_dim(j), inst.input_dim(j), inst.constraint_dim(j));
        let (xl, ul, cl) = (inst.x_len(j), inst.u_len(j), inst.con_len(j));
        let (gx, gu, gp, gl, gt) = (0, xl, xl + ul, 2 * xl + ul, 2 * xl + ul + cl);
        let dim = 2 * xl + ul + 2 * cl;
        let mut m = Mat::zeros(dim, dim);
        for t in 0..=t_max {
            let stage = inst.stage(j, t);
            m.set_block(gx + t * nj, gx + t * nj, &stage.cost.q);
            m.set_block(gx + t * nj, gl + t * nuj, &stage.constraint.c.transpose());
            m.set_block(gl + t * nuj, gx + t * nj, &stage.constraint.c);
            for i in 0..nj {
                m[(gx + t * nj + i, gp + t * nj + i)] = -1.0;
                m[(gp + t * nj + i, gx + t * nj + i)] = -1.0;
            }
            for i in 0..nuj {
                m[(gl + t * nuj + i, gt + t * nuj + i)] = 1.0;
                m[(gt + t * nuj + i, gl + t * nuj + i)] = self.theta[j][t * nuj + i];
                m[(gt + t * nuj + i, gt + t * nuj + i)] = self.lambda[j][t * nuj + i];
            }
            if t < t_max {
                let dyn_ = inst.dynamics(j, t);
                m.set_block(gx + t * nj, gu + t * mj, &stage.cost.s.transpose());
                m.set_block(gu + t * mj, gx + t * nj, &stage.cost.s);
                m.set_block(gu + t * mj, gu + t * mj, &stage.cost.r);
                m.set_block(gx + t * nj, gp + (t + 1) * nj, &dyn_.a.transpose());
                m.set_block(gp + (t + 1) * nj, gx + t * nj, &dyn_.a);
                m.set_block(gu + t * mj, gp + (t + 1) * nj, &dyn_.b.transpose());
                m.set_block(gp + (t + 1) * nj, gu + t * mj, &dyn_.b);
                m.set_block(gu + t * mj, gl + t * nuj, &stage.constraint.d.transpose());
                m.set_block(gl + t * nuj, gu + t * mj, &stage.constraint.d);
            }
        }
        m
    }

    /// Dense coupling block from subsystem `j - 1` into subsystem `j`
    /// (`1 <= j < N`, zero-based).
    pub fn omega_dense(&self, j: usize) -> Mat {
        assert!(j >= 1, "coupling blocks start at the second subsystem");
        let inst = self.inst;
        let t_max = inst.horizon();
        let nj = inst.state_dim(j);
        let nprev = inst.state_dim(j - 1);
        let (xl, ul, cl) = (inst.x_len(j), inst.u_len(j), inst.con_len(j));
        let dim_j = 2 * xl + ul + 2 * cl;
        let (xlp, ulp, clp) = (inst.x_len(j - 1), inst.u_len(j - 1), inst.con_len(j - 1));
        let dim_prev = 2 * xlp + ulp + 2 * clp;
        let gp_prev = xlp + ulp;
        let gp_j = xl + ul;
        let mut m = Mat::zeros(dim_j, dim_prev);
        for t in 0..t_max {
            // x-row of j couples to the previous costate through F_{j-1}'.
            let fprev = &inst.dynamics(j - 1, t).f;
            m.set_block(t * nj, gp_prev + (t + 1) * nprev, &fprev.transpose());
            // Dynamics row of j couples to the previous state through E_j.
            let e = &inst.dynamics(j, t).e;
            m.set_block(gp_j + (t + 1) * nj, t * nprev, e);
        }
        m
    }

    /// Whole system as a generic block tri-diagonal container (dense blocks).
    pub fn to_blocktri(&self) -> Result<BlockTriDiag> {
        let n = self.inst.n_subsystems();
        let diag: Vec<Mat> = (0..n).map(|j| self.phi_dense(j)).collect();
        let sub: Vec<Mat> = (1..n).map(|j| self.omega_dense(j)).collect();
        BlockTriDiag::new(diag, sub)
    }
}

/// Per-stage elimination cache: everything [`recover`] needs to walk the
/// reductions backwards.
struct SubsystemCache {
    /// `lambda / theta`, stacked over time.
    w: Vec<f64>,
    /// `btheta / lambda`, stacked over time.
    lam_inv_btheta: Vec<f64>,
    blam: Vec<f64>,
    /// Cholesky factors of the input-block Schur complements, one per `t < T`.
    rhat: Vec<CholFactor>,
    /// Reduced cross blocks, one per `t < T`.
    shat: Vec<Mat>,
    buhat: Vec<f64>,
}

/// The reduced symmetric block tri-diagonal system in `(dx, dp)`, stored as
/// stage-sized blocks only. `q[j][t]` is the reduced state cost, `a[j][t]`
/// the sub-diagonal blocks of the reduced dynamics map (its time-diagonal is
/// `-I`), and `r[j][t]` the costate diagonal at stacked position `t` (zero at
/// `t = 0`). Couplings between subsystems reuse the instance's `E`/`F` data.
pub struct ReducedSystem<'a> {
    inst: &'a ProblemInstance,
    q: Vec<Vec<Mat>>,
    a: Vec<Vec<Mat>>,
    r: Vec<Vec<Mat>>,
    pub bx: Vec<Vec<f64>>,
    pub bp: Vec<Vec<f64>>,
    cache: Vec<SubsystemCache>,
    layout: ReducedLayout,
}

/// Eliminate `(theta, lambda, u)` from the full system.
pub fn reduce<'a>(sys: &FullKktSystem<'a>) -> Result<ReducedSystem<'a>> {
    let inst = sys.inst;
    let n = inst.n_subsystems();
    let t_max = inst.horizon();
    let per_j: Vec<Result<_>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let nj = inst.state_dim(j);
            let mj = inst.input_dim(j);
            let nuj = inst.constraint_dim(j);
            let lam = &sys.lambda[j];
            let th = &sys.theta[j];
            let mut w = vec![0.0; inst.con_len(j)];
            let mut lam_inv_btheta = vec![0.0; inst.con_len(j)];
            for i in 0..w.len() {
                w[i] = lam[i] / th[i];
                lam_inv_btheta[i] = sys.btheta[j][i] / lam[i];
            }

            let mut q_blocks = Vec::with_capacity(t_max + 1);
            let mut a_blocks = Vec::with_capacity(t_max);
            let mut r_blocks = Vec::with_capacity(t_max + 1);
            r_blocks.push(Mat::zeros(nj, nj));
            let mut bx = sys.bx[j].clone();
            let mut bp = sys.bp[j].clone();
            let mut rhat = Vec::with_capacity(t_max);
            let mut shat = Vec::with_capacity(t_max);
            let mut buhat = vec![0.0; inst.u_len(j)];

            for t in 0..=t_max {
                let stage = inst.stage(j, t);
                let c = &stage.constraint.c;
                let d = &stage.constraint.d;
                let wt = &w[t * nuj..(t + 1) * nuj];

                // v = W blam - Theta^{-1} btheta carries the eliminated rows
                // into the (x, u) right-hand sides.
                let mut v = vec![0.0; nuj];
                for i in 0..nuj {
                    let k = t * nuj + i;
                    v[i] = wt[i] * sys.blam[j][k] - sys.btheta[j][k] / th[k];
                }
                c.matvec_t_acc(&v, &mut bx[t * nj..(t + 1) * nj], 1.0);

                let qhat = stage.cost.q.add(&at_diag_b(c, wt, c));
                if t == t_max {
                    q_blocks.push(symmetrize(qhat));
                    continue;
                }

                let dyn_ = inst.dynamics(j, t);
                {
                    let bu_slice = &mut buhat[t * mj..(t + 1) * mj];
                    d.matvec_t_acc(&v, bu_slice, 1.0);
                    crate::dense::axpy(1.0, &sys.bu[j][t * mj..(t + 1) * mj], bu_slice);
                }

                let rhat_t = stage.cost.r.add(&at_diag_b(d, wt, d));
                let shat_t = stage.cost.s.add(&at_diag_b(d, wt, c));
                let chol = rhat_t
                    .cholesky()
                    .map_err(|_| Error::SingularInputBlock { j: j + 1, t })?;

                // One backsolve each for S, B', and the u right-hand side.
                let rinv_shat = chol.solve_mat(&shat_t); // m x n
                let rinv_bt = chol.solve_mat(&dyn_.b.transpose()); // m x n
                let rinv_bu = chol.solve(&buhat[t * mj..(t + 1) * mj]);

                q_blocks.push(symmetrize(qhat.sub(&shat_t.matmul_tn(&rinv_shat))));
                a_blocks.push(dyn_.a.sub(&shat_t.matmul_tn(&rinv_bt).transpose()));
                r_blocks.push(symmetrize(dyn_.b.matmul(&rinv_bt).scale(-1.0)));

                shat_t.matvec_t_acc(&rinv_bu, &mut bx[t * nj..(t + 1) * nj], -1.0);
                dyn_.b.matvec_acc(&rinv_bu, &mut bp[(t + 1) * nj..(t + 2) * nj], -1.0);

                rhat.push(chol);
                shat.push(shat_t);
            }

            Ok((
                q_blocks,
                a_blocks,
                r_blocks,
                bx,
                bp,
                SubsystemCache { w, lam_inv_btheta, blam: sys.blam[j].clone(), rhat, shat, buhat },
            ))
        })
        .collect();

    let mut red = ReducedSystem {
        inst,
        q: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        bx: Vec::with_capacity(n),
        bp: Vec::with_capacity(n),
        cache: Vec::with_capacity(n),
        layout: reduced_layout(inst),
    };
    for item in per_j {
        let (q, a, r, bx, bp, cache) = item?;
        red.q.push(q);
        red.a.push(a);
        red.r.push(r);
        red.bx.push(bx);
        red.bp.push(bp);
        red.cache.push(cache);
    }
    Ok(red)
}

fn symmetrize(m: Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            out[(r, c)] = 0.5 * (m[(r, c)] + m[(c, r)]);
        }
    }
    out
}

/// `a^T diag(w) b` for stage-sized blocks.
fn at_diag_b(a: &Mat, w: &[f64], b: &Mat) -> Mat {
    debug_assert_eq!(a.rows(), w.len());
    let mut out = Mat::zeros(a.cols(), b.cols());
    for k in 0..a.rows() {
        let wk = w[k];
        if wk == 0.0 {
            continue;
        }
        for r in 0..a.cols() {
            let av = a[(k, r)];
            if av == 0.0 {
                continue;
            }
            for c in 0..b.cols() {
                out[(r, c)] += wk * av * b[(k, c)];
            }
        }
    }
    out
}

impl<'a> ReducedSystem<'a> {
    pub fn instance(&self) -> &'a ProblemInstance {
        self.inst
    }

    pub fn layout(&self) -> &ReducedLayout {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.layout.total
    }

    /// Reduced state-cost block at `(j, t)`, `t = 0..=T`.
    pub fn q_blk(&self, j: usize, t: usize) -> &Mat {
        &self.q[j][t]
    }

    /// Sub-diagonal block of the reduced dynamics map at `(j, t)`, `t < T`.
    pub fn a_blk(&self, j: usize, t: usize) -> &Mat {
        &self.a[j][t]
    }

    /// Costate diagonal block at stacked position `t` (zero at `t = 0`).
    pub fn r_blk(&self, j: usize, t: usize) -> &Mat {
        &self.r[j][t]
    }

    /// Coupling from the left neighbour's state (`None` for the first
    /// subsystem or at the terminal stage).
    pub fn coupling_e(&self, j: usize, t: usize) -> Option<&Mat> {
        (j > 0 && t < self.inst.horizon()).then(|| &self.inst.dynamics(j, t).e)
    }

    /// Coupling to the right neighbour's state (`None` for the last
    /// subsystem or at the terminal stage).
    pub fn coupling_f(&self, j: usize, t: usize) -> Option<&Mat> {
        (j + 1 < self.inst.n_subsystems() && t < self.inst.horizon())
            .then(|| &self.inst.dynamics(j, t).f)
    }

    /// Stack the reduced right-hand side in reduced-layout order.
    pub fn rhs_vec(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.layout.total];
        for j in 0..self.inst.n_subsystems() {
            b[self.layout.x[j]..self.layout.x[j] + self.bx[j].len()].copy_from_slice(&self.bx[j]);
            b[self.layout.p[j]..self.layout.p[j] + self.bp[j].len()].copy_from_slice(&self.bp[j]);
        }
        b
    }

    /// Product with the reduced block tri-diagonal matrix, stage by stage.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.layout.total {
            return Err(Error::DimensionMismatch(format!(
                "reduced matvec: vector length {} does not match dimension {}",
                v.len(),
                self.layout.total
            )));
        }
        let inst = self.inst;
        let n = inst.n_subsystems();
        let t_max = inst.horizon();
        let per_j: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let nj = inst.state_dim(j);
                let xl = inst.x_len(j);
                let vx = &v[self.layout.x[j]..self.layout.x[j] + xl];
                let vp = &v[self.layout.p[j]..self.layout.p[j] + xl];
                let mut out = vec![0.0; 2 * xl];
                let (yx, yp) = out.split_at_mut(xl);
                for t in 0..=t_max {
                    let xr = &mut yx[t * nj..(t + 1) * nj];
                    self.q[j][t].matvec_acc(&vx[t * nj..(t + 1) * nj], xr, 1.0);
                    // Bi-diagonal reduced dynamics map, transposed side.
                    crate::dense::axpy(-1.0, &vp[t * nj..(t + 1) * nj], xr);
                    if t < t_max {
                        self.a[j][t].matvec_t_acc(&vp[(t + 1) * nj..(t + 2) * nj], xr, 1.0);
                        if j > 0 {
                            let f_prev = &inst.dynamics(j - 1, t).f;
                            let nprev = inst.state_dim(j - 1);
                            let vp_prev =
                                &v[self.layout.p[j - 1]..self.layout.p[j - 1] + inst.x_len(j - 1)];
                            f_prev.matvec_t_acc(&vp_prev[(t + 1) * nprev..(t + 2) * nprev], xr, 1.0);
                        }
                        if j + 1 < n {
                            let e_next = &inst.dynamics(j + 1, t).e;
                            let nnext = inst.state_dim(j + 1);
                            let vp_next =
                                &v[self.layout.p[j + 1]..self.layout.p[j + 1] + inst.x_len(j + 1)];
                            e_next.matvec_t_acc(&vp_next[(t + 1) * nnext..(t + 2) * nnext], xr, 1.0);
                        }
                    }

                    let pr = &mut yp[t * nj..(t + 1) * nj];
                    self.r[j][t].matvec_acc(&vp[t * nj..(t + 1) * nj], pr, 1.0);
                    crate::dense::axpy(-1.0, &vx[t * nj..(t + 1) * nj], pr);
                    if t > 0 {
                        self.a[j][t - 1].matvec_acc(&vx[(t - 1) * nj..t * nj], pr, 1.0);
                        if j > 0 {
                            let e = &inst.dynamics(j, t - 1).e;
                            let nprev = inst.state_dim(j - 1);
                            let vx_prev =
                                &v[self.layout.x[j - 1]..self.layout.x[j - 1] + inst.x_len(j - 1)];
                            e.matvec_acc(&vx_prev[(t - 1) * nprev..t * nprev], pr, 1.0);
                        }
                        if j + 1 < n {
                            let f = &inst.dynamics(j, t - 1).f;
                            let nnext = inst.state_dim(j + 1);
                            let vx_next =
                                &v[self.layout.x[j + 1]..self.layout.x[j + 1] + inst.x_len(j + 1)];
                            f.matvec_acc(&vx_next[(t - 1) * nnext..t * nnext], pr, 1.0);
                        }
                    }
                }
                out
            })
            .collect();
        let mut y = vec![0.0; self.layout.total];
        for (j, part) in per_j.into_iter().enumerate() {
            y[self.layout.block[j]..self.layout.block[j + 1]].copy_from_slice(&part);
        }
        Ok(y)
    }

    /// Apply subsystem `j`'s diagonal block `[[Q~, A~'], [A~, R~]]` to a
    /// `(vx, vp)` slice pair, structurally.
    pub fn phi_apply(&self, j: usize, v: &[f64]) -> Vec<f64> {
        let inst = self.inst;
        let nj = inst.state_dim(j);
        let xl = inst.x_len(j);
        let t_max = inst.horizon();
        debug_assert_eq!(v.len(), 2 * xl);
        let (vx, vp) = v.split_at(xl);
        let mut out = vec![0.0; 2 * xl];
        let (yx, yp) = out.split_at_mut(xl);
        for t in 0..=t_max {
            let xr = &mut yx[t * nj..(t + 1) * nj];
            self.q[j][t].matvec_acc(&vx[t * nj..(t + 1) * nj], xr, 1.0);
            crate::dense::axpy(-1.0, &vp[t * nj..(t + 1) * nj], xr);
            if t < t_max {
                self.a[j][t].matvec_t_acc(&vp[(t + 1) * nj..(t + 2) * nj], xr, 1.0);
            }
            let pr = &mut yp[t * nj..(t + 1) * nj];
            self.r[j][t].matvec_acc(&vp[t * nj..(t + 1) * nj], pr, 1.0);
            crate::dense::axpy(-1.0, &vx[t * nj..(t + 1) * nj], pr);
            if t > 0 {
                self.a[j][t - 1].matvec_acc(&vx[(t - 1) * nj..t * nj], pr, 1.0);
            }
        }
        out
    }

    /// Apply the coupling block from subsystem `j - 1` into `j` (`j >= 1`):
    /// `[[0, F_{j-1}'], [E_j, 0]]` acting on the neighbour's `(vx, vp)`.
    pub fn omega_apply(&self, j: usize, v_prev: &[f64]) -> Vec<f64> {
        let inst = self.inst;
        debug_assert!(j >= 1);
        let nj = inst.state_dim(j);
        let nprev = inst.state_dim(j - 1);
        let xl = inst.x_len(j);
        let xlp = inst.x_len(j - 1);
        let t_max = inst.horizon();
        debug_assert_eq!(v_prev.len(), 2 * xlp);
        let (vx, vp) = v_prev.split_at(xlp);
        let mut out = vec![0.0; 2 * xl];
        let (yx, yp) = out.split_at_mut(xl);
        for t in 0..t_max {
            let fprev = &inst.dynamics(j - 1, t).f;
            fprev.matvec_t_acc(
                &vp[(t + 1) * nprev..(t + 2) * nprev],
                &mut yx[t * nj..(t + 1) * nj],
                1.0,
            );
            let e = &inst.dynamics(j, t).e;
            e.matvec_acc(&vx[t * nprev..(t + 1) * nprev], &mut yp[(t + 1) * nj..(t + 2) * nj], 1.0);
        }
        out
    }

    /// Transpose of [`Self::omega_apply`]: maps subsystem `j`'s `(vx, vp)`
    /// into subsystem `j - 1` slots.
    pub fn omega_t_apply(&self, j: usize, v_j: &[f64]) -> Vec<f64> {
        let inst = self.inst;
        debug_assert!(j >= 1);
        let nj = inst.state_dim(j);
        let nprev = inst.state_dim(j - 1);
        let xl = inst.x_len(j);
        let xlp = inst.x_len(j - 1);
        let t_max = inst.horizon();
        debug_assert_eq!(v_j.len(), 2 * xl);
        let (vx, vp) = v_j.split_at(xl);
        let mut out = vec![0.0; 2 * xlp];
        let (yx, yp) = out.split_at_mut(xlp);
        for t in 0..t_max {
            let e = &inst.dynamics(j, t).e;
            e.matvec_t_acc(
                &vp[(t + 1) * nj..(t + 2) * nj],
                &mut yx[t * nprev..(t + 1) * nprev],
                1.0,
            );
            let fprev = &inst.dynamics(j - 1, t).f;
            fprev.matvec_acc(&vx[t * nj..(t + 1) * nj], &mut yp[(t + 1) * nprev..(t + 2) * nprev], 1.0);
        }
        out
    }

    /// Dense diagonal block `[[Q~, A~'], [A~, R~]]` of subsystem `j`.
    pub fn phi_dense(&self, j: usize) -> Mat {
        let inst = self.inst;
        let nj = inst.state_dim(j);
        let xl = inst.x_len(j);
        let t_max = inst.horizon();
        let mut m = Mat::zeros(2 * xl, 2 * xl);
        for t in 0..=t_max {
            m.set_block(t * nj, t * nj, &self.q[j][t]);
            m.set_block(xl + t * nj, xl + t * nj, &self.r[j][t]);
            for i in 0..nj {
                m[(t * nj + i, xl + t * nj + i)] = -1.0;
                m[(xl + t * nj + i, t * nj + i)] = -1.0;
            }
            if t < t_max {
                m.set_block(xl + (t + 1) * nj, t * nj, &self.a[j][t]);
                m.set_block(t * nj, xl + (t + 1) * nj, &self.a[j][t].transpose());
            }
        }
        m
    }

    /// Dense coupling block from subsystem `j - 1` into `j` (`j >= 1`).
    pub fn omega_dense(&self, j: usize) -> Mat {
        assert!(j >= 1);
        let inst = self.inst;
        let nj = inst.state_dim(j);
        let nprev = inst.state_dim(j - 1);
        let (xl, xlp) = (inst.x_len(j), inst.x_len(j - 1));
        let t_max = inst.horizon();
        let mut m = Mat::zeros(2 * xl, 2 * xlp);
        for t in 0..t_max {
            let fprev = &inst.dynamics(j - 1, t).f;
            m.set_block(t * nj, xlp + (t + 1) * nprev, &fprev.transpose());
            let e = &inst.dynamics(j, t).e;
            m.set_block(xl + (t + 1) * nj, t * nprev, e);
        }
        m
    }

    /// Whole reduced matrix as a generic block tri-diagonal container.
    pub fn to_blocktri(&self) -> Result<BlockTriDiag> {
        let n = self.inst.n_subsystems();
        let diag: Vec<Mat> = (0..n).map(|j| self.phi_dense(j)).collect();
        let sub: Vec<Mat> = (1..n).map(|j| self.omega_dense(j)).collect();
        BlockTriDiag::new(diag, sub)
    }
}

/// Restore the eliminated direction components from a reduced solution.
/// Output order matches [`IpmIterate`].
pub fn recover(red: &ReducedSystem, delta_xp: &[f64]) -> Result<IpmIterate> {
    if delta_xp.len() != red.layout.total {
        return Err(Error::DimensionMismatch(format!(
            "recover: solution length {} does not match reduced dimension {}",
            delta_xp.len(),
            red.layout.total
        )));
    }
    let inst = red.inst;
    let n = inst.n_subsystems();
    let t_max = inst.horizon();
    let mut delta = IpmIterate::zeros(inst);
    for j in 0..n {
        let nj = inst.state_dim(j);
        let mj = inst.input_dim(j);
        let nuj = inst.constraint_dim(j);
        let cache = &red.cache[j];
        let dx = &delta_xp[red.layout.x[j]..red.layout.x[j] + inst.x_len(j)];
        let dp = &delta_xp[red.layout.p[j]..red.layout.p[j] + inst.x_len(j)];
        delta.x[j].copy_from_slice(dx);
        delta.p[j].copy_from_slice(dp);
        for t in 0..t_max {
            // du = Rhat^{-1}(buhat - Shat dx - B' dp_next)
            let mut rhs = cache.buhat[t * mj..(t + 1) * mj].to_vec();
            cache.shat[t].matvec_acc(&dx[t * nj..(t + 1) * nj], &mut rhs, -1.0);
            inst.dynamics(j, t).b.matvec_t_acc(&dp[(t + 1) * nj..(t + 2) * nj], &mut rhs, -1.0);
            cache.rhat[t].solve_into(&mut rhs);
            delta.u[j][t * mj..(t + 1) * mj].copy_from_slice(&rhs);
        }
        for t in 0..=t_max {
            let stage = inst.stage(j, t);
            // dlambda = -W (blam - C dx - D du - Lambda^{-1} btheta)
            let mut v = cache.blam[t * nuj..(t + 1) * nuj].to_vec();
            stage.constraint.c.matvec_acc(&dx[t * nj..(t + 1) * nj], &mut v, -1.0);
            if t < t_max {
                stage
                    .constraint
                    .d
                    .matvec_acc(&delta.u[j][t * mj..(t + 1) * mj], &mut v, -1.0);
            }
            for i in 0..nuj {
                let k = t * nuj + i;
                let dl = -cache.w[k] * (v[i] - cache.lam_inv_btheta[k]);
                delta.lam[j][k] = dl;
                // dtheta = Lambda^{-1} btheta - dlambda / W
                delta.theta[j][k] = cache.lam_inv_btheta[k] - dl / cache.w[k];
            }
        }
    }
    Ok(delta)
}

/// Flatten an iterate (or direction) into full-layout order.
pub fn iterate_to_vec(inst: &ProblemInstance, it: &IpmIterate) -> Vec<f64> {
    let layout = full_layout(inst);
    let mut v = vec![0.0; layout.total];
    for j in 0..inst.n_subsystems() {
        v[layout.x[j]..layout.x[j] + it.x[j].len()].copy_from_slice(&it.x[j]);
        v[layout.u[j]..layout.u[j] + it.u[j].len()].copy_from_slice(&it.u[j]);
        v[layout.p[j]..layout.p[j] + it.p[j].len()].copy_from_slice(&it.p[j]);
        v[layout.lam[j]..layout.lam[j] + it.lam[j].len()].copy_from_slice(&it.lam[j]);
        v[layout.theta[j]..layout.theta[j] + it.theta[j].len()].copy_from_slice(&it.theta[j]);
    }
    v
}

/// Split a full-layout vector back into per-subsystem groups.
pub fn vec_to_iterate(inst: &ProblemInstance, v: &[f64]) -> Result<IpmIterate> {
    let layout = full_layout(inst);
    if v.len() != layout.total {
        return Err(Error::DimensionMismatch(format!(
            "full vector length {} does not match layout total {}",
            v.len(),
            layout.total
        )));
    }
    let mut it = IpmIterate::zeros(inst);
    for j in 0..inst.n_subsystems() {
        let xl = it.x[j].len();
        let ul = it.u[j].len();
        let cl = it.lam[j].len();
        it.x[j].copy_from_slice(&v[layout.x[j]..layout.x[j] + xl]);
        it.u[j].copy_from_slice(&v[layout.u[j]..layout.u[j] + ul]);
        it.p[j].copy_from_slice(&v[layout.p[j]..layout.p[j] + xl]);
        it.lam[j].copy_from_slice(&v[layout.lam[j]..layout.lam[j] + cl]);
        it.theta[j].copy_from_slice(&v[layout.theta[j]..layout.theta[j] + cl]);
    }
    Ok(it)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dense::norm_inf;
    use crate::problem::{msd_chain, MsdConfig, SplitMix};

    fn ones_iterate(inst: &ProblemInstance) -> IpmIterate {
        let mut it = IpmIterate::zeros(inst);
        for j in 0..inst.n_subsystems() {
            it.lam[j].iter_mut().for_each(|v| *v = 1.0);
            it.theta[j].iter_mut().for_each(|v| *v = 1.0);
        }
        it
    }

    pub(crate) fn random_interior_iterate(inst: &ProblemInstance, seed: u64) -> IpmIterate {
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

    #[test]
    fn scalar_complementarity_rhs() {
        // At the all-zero primal point with unit multipliers, the
        // complementarity rows must equal sigma*mu - 1.
        let inst = crate::problem::tests::scalar_instance(4.0);
        let it = ones_iterate(&inst);
        let sigma_mu = 0.1;
        let sys = assemble_full(&inst, &it, sigma_mu).unwrap();
        for row in sys.btheta.iter().flatten() {
            assert!((row - (sigma_mu - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_centering_gives_pure_complementarity_rhs() {
        let inst = msd_chain(3, 3, 1, &MsdConfig::default()).unwrap();
        let it = random_interior_iterate(&inst, 5);
        let sys = assemble_full(&inst, &it, 0.0).unwrap();
        for j in 0..3 {
            for (i, row) in sys.btheta[j].iter().enumerate() {
                assert!((row + it.lam[j][i] * it.theta[j][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn phi_dense_symmetric_except_complementarity_rows() {
        let inst = msd_chain(2, 2, 3, &MsdConfig::default()).unwrap();
        let it = random_interior_iterate(&inst, 7);
        let sys = assemble_full(&inst, &it, 0.05).unwrap();
        let phi = sys.phi_dense(0);
        assert!(!phi.is_symmetric(1e-12));
        // Zero the complementarity block rows and columns; what is left must
        // be symmetric.
        let cl = inst.con_len(0);
        let dim = phi.rows();
        let mut trimmed = phi.clone();
        for r in dim - cl..dim {
            for c in 0..dim {
                trimmed[(r, c)] = 0.0;
                trimmed[(c, r)] = 0.0;
            }
        }
        assert!(trimmed.is_symmetric(1e-12));
    }

    #[test]
    fn non_interior_iterate_is_rejected() {
        let inst = msd_chain(1, 1, 0, &MsdConfig::default()).unwrap();
        let mut it = ones_iterate(&inst);
        it.lam[0][2] = 0.0;
        assert!(matches!(assemble_full(&inst, &it, 0.1), Err(Error::NonInterior(_))));
    }

    #[test]
    fn reduction_collapses_without_constraint_coupling() {
        // With C = D = 0 and S = 0 the reduced blocks are plain transforms of
        // the instance data: Q~ = Q, A~ = A, R~ = -B R^{-1} B'.
        let mut inst = msd_chain(2, 3, 9, &MsdConfig::default()).unwrap();
        for sub in &mut inst.subsystems {
            for stage in &mut sub.stages {
                stage.constraint.c = Mat::zeros(4, 2);
                stage.constraint.d = Mat::zeros(4, 1);
            }
        }
        let it = random_interior_iterate(&inst, 11);
        let sys = assemble_full(&inst, &it, 0.1).unwrap();
        let red = reduce(&sys).unwrap();
        for j in 0..2 {
            for t in 0..=3 {
                assert!(red.q_blk(j, t).sub(&inst.stage(j, t).cost.q).norm_inf() < 1e-13);
            }
            for t in 0..3 {
                let dyn_ = inst.dynamics(j, t);
                assert!(red.a_blk(j, t).sub(&dyn_.a).norm_inf() < 1e-13);
                let r = inst.stage(j, t).cost.r.cholesky().unwrap();
                let want = dyn_.b.matmul(&r.solve_mat(&dyn_.b.transpose())).scale(-1.0);
                assert!(red.r_blk(j, t + 1).sub(&want).norm_inf() < 1e-13);
                // b~p = bp - B R^{-1} bu
                let mj = inst.input_dim(j);
                let nj = inst.state_dim(j);
                let rb = r.solve(&sys.bu[j][t * mj..(t + 1) * mj]);
                let mut want_bp = sys.bp[j][(t + 1) * nj..(t + 2) * nj].to_vec();
                dyn_.b.matvec_acc(&rb, &mut want_bp, -1.0);
                let got = &red.bp[j][(t + 1) * nj..(t + 2) * nj];
                for (g, w) in got.iter().zip(&want_bp) {
                    assert!((g - w).abs() < 1e-13);
                }
            }
            // bx passes through untouched.
            for (g, w) in red.bx[j].iter().zip(&sys.bx[j]) {
                assert!((g - w).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn reduced_matvec_matches_dense_and_zero_maps_to_zero() {
        let inst = msd_chain(4, 3, 13, &MsdConfig::default()).unwrap();
        let it = random_interior_iterate(&inst, 17);
        let sys = assemble_full(&inst, &it, 0.1).unwrap();
        let red = reduce(&sys).unwrap();
        assert_eq!(red.matvec(&vec![0.0; red.total_dim()]).unwrap(), vec![0.0; red.total_dim()]);
        let dense = red.to_blocktri().unwrap().to_dense().unwrap();
        let mut rng = SplitMix::new(19);
        for _ in 0..5 {
            let v: Vec<f64> = (0..red.total_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let fast = red.matvec(&v).unwrap();
            let slow = dense.matvec(&v);
            let scale = norm_inf(&slow).max(1.0);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn reduced_matvec_commutes_with_reflection() {
        // A chain with identical subsystems is its own mirror image, so the
        // reduced product must commute with the end-for-end permutation.
        let cfg = MsdConfig {
            param_min: 1.0,
            param_max: 1.0,
            init_min: 0.3,
            init_max: 0.3,
            ..MsdConfig::default()
        };
        let inst = msd_chain(5, 3, 0, &cfg).unwrap();
        let it = ones_iterate(&inst);
        let sys = assemble_full(&inst, &it, 0.1).unwrap();
        let red = reduce(&sys).unwrap();
        let layout = red.layout().clone();
        let n = inst.n_subsystems();
        let perm = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            for j in 0..n {
                let jr = n - 1 - j;
                let xl = inst.x_len(j);
                out[layout.x[jr]..layout.x[jr] + xl]
                    .copy_from_slice(&v[layout.x[j]..layout.x[j] + xl]);
                out[layout.p[jr]..layout.p[jr] + xl]
                    .copy_from_slice(&v[layout.p[j]..layout.p[j] + xl]);
            }
            out
        };
        let mut rng = SplitMix::new(23);
        let v: Vec<f64> = (0..red.total_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let lhs = perm(&red.matvec(&v).unwrap());
        let rhs = red.matvec(&perm(&v)).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn coupling_block_touches_only_cross_groups() {
        // The reduced coupling lives purely in the state-to-costate and
        // costate-to-state corners; its within-group blocks are zero.
        let inst = msd_chain(3, 3, 15, &MsdConfig::default()).unwrap();
        let it = random_interior_iterate(&inst, 16);
        let sys = assemble_full(&inst, &it, 0.1).unwrap();
        let red = reduce(&sys).unwrap();
        for j in 1..3 {
            let om = red.omega_dense(j);
            let (xl, xlp) = (inst.x_len(j), inst.x_len(j - 1));
            assert!(om.block(0, 0, xl, xlp).norm_inf() == 0.0, "state-state block not zero");
            assert!(om.block(xl, xlp, xl, xlp).norm_inf() == 0.0, "costate-costate block not zero");
            assert!(om.block(0, xlp, xl, xlp).norm_inf() > 0.0);
            assert!(om.block(xl, 0, xl, xlp).norm_inf() > 0.0);
        }
    }

    #[test]
    fn recover_zero_rhs_is_zero() {
        let inst = msd_chain(2, 2, 21, &MsdConfig::default()).unwrap();
        let it = ones_iterate(&inst);
        // A zero right-hand side system: zero the assembled rhs by hand.
        let mut sys = assemble_full(&inst, &it, 0.0).unwrap();
        for part in [&mut sys.bx, &mut sys.bu, &mut sys.bp, &mut sys.blam, &mut sys.btheta] {
            for v in part.iter_mut().flatten() {
                *v = 0.0;
            }
        }
        let red = reduce(&sys).unwrap();
        let delta = recover(&red, &vec![0.0; red.total_dim()]).unwrap();
        let flat = iterate_to_vec(&inst, &delta);
        assert_eq!(norm_inf(&flat), 0.0);
    }

    #[test]
    fn recover_collapsed_multiplier_formula() {
        // With C = D = 0, dlambda = -W(blam - Lambda^{-1} btheta) exactly.
        let mut inst = msd_chain(2, 2, 25, &MsdConfig::default()).unwrap();
        for sub in &mut inst.subsystems {
            for stage in &mut sub.stages {
                stage.constraint.c = Mat::zeros(4, 2);
                stage.constraint.d = Mat::zeros(4, 1);
            }
        }
        let it = random_interior_iterate(&inst, 29);
        let sys = assemble_full(&inst, &it, 0.2).unwrap();
        let blam = sys.blam.clone();
        let btheta = sys.btheta.clone();
        let red = reduce(&sys).unwrap();
        let mut rng = SplitMix::new(31);
        let dxp: Vec<f64> = (0..red.total_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let delta = recover(&red, &dxp).unwrap();
        for j in 0..2 {
            for i in 0..inst.con_len(j) {
                let w = it.lam[j][i] / it.theta[j][i];
                let want = -w * (blam[j][i] - btheta[j][i] / it.lam[j][i]);
                assert!((delta.lam[j][i] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn reduce_touches_only_stage_sized_matrices() {
        // Large instance, small stage blocks: the elimination must never
        // allocate a matrix with both dimensions of horizon scale. The guard
        // is thread-local, so arm it on the worker threads too.
        let inst = msd_chain(8, 8, 33, &MsdConfig::default()).unwrap();
        let it = ones_iterate(&inst);
        let sys = assemble_full(&inst, &it, 0.1).unwrap();
        rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build_scoped(
                |worker| {
                    let _g = crate::dense::arm_alloc_guard(8);
                    worker.run()
                },
                |pool| {
                    pool.install(|| {
                        let _guard = crate::dense::arm_alloc_guard(8);
                        let red = reduce(&sys).unwrap();
                        let v: Vec<f64> =
                            (0..red.total_dim()).map(|i| (i % 7) as f64 - 3.0).collect();
                        let _ = red.matvec(&v).unwrap();
                        let _ = recover(&red, &v).unwrap();
                    })
                },
            )
            .unwrap();
    }

    #[test]
    fn iterate_vec_roundtrip() {
        let inst = msd_chain(3, 2, 35, &MsdConfig::default()).unwrap();
        let it = random_interior_iterate(&inst, 37);
        let v = iterate_to_vec(&inst, &it);
        let back = vec_to_iterate(&inst, &v).unwrap();
        assert_eq!(back.x, it.x);
        assert_eq!(back.u, it.u);
        assert_eq!(back.p, it.p);
        assert_eq!(back.lam, it.lam);
        assert_eq!(back.theta, it.theta);
    }
}
