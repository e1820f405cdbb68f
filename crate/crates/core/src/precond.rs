//! Pair repartition of the squared reduced system and the block Jacobi
//! preconditioner built on it.
//!
//! Squaring the reduced block tri-diagonal matrix `M` produces a block
//! penta-diagonal operator. Grouping subsystems into `K = ceil(N/2)` pairs
//! `{2k, 2k+1}` restores a block tri-diagonal partition of `M^2` whose
//! diagonal pair blocks are positive definite. Splitting off the
//! between-pair coupling gives the classical iteration
//!
//! ```text
//! D z[l+1] = rhs + (D - M^2) z[l],      D = blkdiag of the pair blocks,
//! ```
//!
//! and running a fixed number of these sweeps from zero is itself a linear,
//! symmetric positive-definite operator, which is what the conjugate
//! gradient solver uses as its preconditioner.
//!
//! Each pair block, reordered stage by stage in time, is again block
//! tri-diagonal with stage blocks of size `2(n_a + n_b)`, so one sweep costs
//! `K` independent backward-forward solves of horizon length. The stage
//! blocks are assembled directly from the reduced system's per-stage data;
//! debug builds verify the arrangement densely against the permuted pair
//! block on short horizons.

use rayon::prelude::*;

use crate::blocktri::{BlockLdlFactor, BlockTriDiag};
use crate::dense::Mat;
use crate::kkt::ReducedSystem;
use crate::krylov::Preconditioner;
use crate::{Error, Result};

/// The `ceil(N/2)` pair grouping of a reduced system, with the structured
/// between-pair coupling operator.
pub struct PairSplit<'a, 'b> {
    red: &'a ReducedSystem<'b>,
    /// Subsystems of each pair; the second is absent for the odd tail.
    members: Vec<(usize, Option<usize>)>,
    /// Offset of each pair in the reduced vector, plus a trailing total.
    offsets: Vec<usize>,
}

impl<'a, 'b> PairSplit<'a, 'b> {
    pub fn new(red: &'a ReducedSystem<'b>) -> Self {
        let inst = red.instance();
        let n = inst.n_subsystems();
        let mut members = Vec::with_capacity(n.div_ceil(2));
        let mut offsets = Vec::with_capacity(members.capacity() + 1);
        let layout = red.layout();
        let mut j = 0;
        while j < n {
            offsets.push(layout.block[j]);
            if j + 1 < n {
                members.push((j, Some(j + 1)));
                j += 2;
            } else {
                members.push((j, None));
                j += 1;
            }
        }
        offsets.push(layout.total);
        PairSplit { red, members, offsets }
    }

    pub fn reduced(&self) -> &'a ReducedSystem<'b> {
        self.red
    }

    /// `K = ceil(N/2)`.
    pub fn pair_count(&self) -> usize {
        self.members.len()
    }

    /// Subsystems of pair `k`; the second is `None` for the odd tail.
    pub fn subsystems(&self, k: usize) -> (usize, Option<usize>) {
        self.members[k]
    }

    /// Range of pair `k` inside a reduced vector.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Locate the pair containing subsystem `j`.
    pub fn pair_of(&self, j: usize) -> usize {
        j / 2
    }

    /// Apply the split's coupling part `D - M^2` (nonzero only between
    /// neighbouring pairs). Built from compositions of the reduced
    /// single-subsystem operators, so zero blocks stay exactly zero.
    pub fn coupling_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let red = self.red;
        let layout = red.layout();
        if v.len() != layout.total {
            return Err(Error::DimensionMismatch(format!(
                "coupling matvec: vector length {} does not match dimension {}",
                v.len(),
                layout.total
            )));
        }
        let n = red.instance().n_subsystems();
        let mut out = vec![0.0; layout.total];
        let slice = |j: usize| &v[layout.block[j]..layout.block[j + 1]];
        // Between-pair neighbour coupling of M^2: for even j, the band block
        // Omega_j Phi_{j-1} + Phi_j Omega_j crosses the pair boundary.
        for j in (2..n).step_by(2) {
            let y_fwd = {
                let mut a = red.omega_apply(j, &red.phi_apply(j - 1, slice(j - 1)));
                let b = red.phi_apply(j, &red.omega_apply(j, slice(j - 1)));
                crate::dense::axpy(1.0, &b, &mut a);
                a
            };
            crate::dense::axpy(-1.0, &y_fwd, &mut out[layout.block[j]..layout.block[j + 1]]);
            let y_back = {
                let mut a = red.phi_apply(j - 1, &red.omega_t_apply(j, slice(j)));
                let b = red.omega_t_apply(j, &red.phi_apply(j, slice(j)));
                crate::dense::axpy(1.0, &b, &mut a);
                a
            };
            crate::dense::axpy(-1.0, &y_back, &mut out[layout.block[j - 1]..layout.block[j]]);
        }
        // Distance-two coupling Omega_j Omega_{j-1} always crosses pairs.
        for j in 2..n {
            let fwd = red.omega_apply(j, &red.omega_apply(j - 1, slice(j - 2)));
            crate::dense::axpy(-1.0, &fwd, &mut out[layout.block[j]..layout.block[j + 1]]);
            let back = red.omega_t_apply(j - 1, &red.omega_t_apply(j, slice(j)));
            crate::dense::axpy(-1.0, &back, &mut out[layout.block[j - 2]..layout.block[j - 1]]);
        }
        Ok(out)
    }

    /// Dense squared-diagonal block of subsystem `j` (test support).
    pub fn dense_z(&self, j: usize) -> Mat {
        let red = self.red;
        let n = red.instance().n_subsystems();
        let phi = red.phi_dense(j);
        let mut z = phi.matmul(&phi);
        if j >= 1 {
            let om = red.omega_dense(j);
            z = z.add(&om.matmul_nt(&om));
        }
        if j + 1 < n {
            let om = red.omega_dense(j + 1);
            z = z.add(&om.matmul_tn(&om));
        }
        z
    }

    /// Dense one-step band block of the squared matrix, from `j - 1` into `j`.
    pub fn dense_y(&self, j: usize) -> Mat {
        let red = self.red;
        let om = red.omega_dense(j);
        om.matmul(&red.phi_dense(j - 1)).add(&red.phi_dense(j).matmul(&om))
    }

    /// Dense two-step band block of the squared matrix, from `j - 2` into `j`.
    pub fn dense_v(&self, j: usize) -> Mat {
        self.red.omega_dense(j).matmul(&self.red.omega_dense(j - 1))
    }

    /// Dense diagonal pair block (test support).
    pub fn dense_pair_diag(&self, k: usize) -> Mat {
        let (a, b) = self.members[k];
        match b {
            None => self.dense_z(a),
            Some(b) => {
                let za = self.dense_z(a);
                let zb = self.dense_z(b);
                let y = self.dense_y(b);
                let dim = za.rows() + zb.rows();
                let mut m = Mat::zeros(dim, dim);
                m.set_block(0, 0, &za);
                m.set_block(za.rows(), za.rows(), &zb);
                m.set_block(za.rows(), 0, &y);
                m.set_block(0, za.rows(), &y.transpose());
                m
            }
        }
    }

    /// Dense coupling block from pair `k - 1` into pair `k` (test support).
    pub fn dense_pair_coupling(&self, k: usize) -> Mat {
        assert!(k >= 1);
        let (a, b) = self.members[k];
        let (pa, pb) = self.members[k - 1];
        let pb = pb.expect("predecessor pairs are always complete");
        let red = self.red;
        let inst = red.instance();
        let rows = 2 * inst.x_len(a) + b.map_or(0, |b| 2 * inst.x_len(b));
        let cols = 2 * inst.x_len(pa) + 2 * inst.x_len(pb);
        let mut m = Mat::zeros(rows, cols);
        // Row block a: distance-two into column pa, one-step into column pb.
        m.set_block(0, 0, &self.dense_v(a));
        m.set_block(0, 2 * inst.x_len(pa), &self.dense_y(a));
        if let Some(b) = b {
            m.set_block(2 * inst.x_len(a), 2 * inst.x_len(pa), &self.dense_v(b));
        }
        m
    }
}

/// One pair's diagonal block, rearranged into a time-ordered block
/// tri-diagonal matrix and factored for repeated solves.
pub struct PairTridiag {
    /// Stage-major index -> pair-local index.
    perm: Vec<usize>,
    tri: BlockTriDiag,
    factor: BlockLdlFactor,
}

/// Assemble and factor the time-ordered form of pair `k`'s diagonal block.
///
/// Stage `t` carries the variables `(x_a[t], p_a[t], x_b[t], p_b[t])`; the
/// stage blocks below are the squared system's entries under exactly that
/// rearrangement (verified densely in debug builds on short horizons).
pub fn build_pair_tridiag(split: &PairSplit, k: usize) -> Result<PairTridiag> {
    let red = split.reduced();
    let inst = red.instance();
    let t_max = inst.horizon();
    let (a, b) = split.subsystems(k);
    let na = inst.state_dim(a);
    let nb = b.map_or(0, |b| inst.state_dim(b));
    let nhat = 2 * (na + nb);
    // Grid offsets inside one stage block.
    let (ga_x, ga_p, gb_x, gb_p) = (0, na, 2 * na, 2 * na + nb);

    let eye = |n: usize| Mat::identity(n);
    let mut diag = Vec::with_capacity(t_max + 1);
    let mut sub = Vec::with_capacity(t_max);

    // Squared diagonal entry for the state rows of subsystem j at time t.
    let xx_diag = |j: usize, t: usize| -> Mat {
        let q = red.q_blk(j, t);
        let mut m = q.matmul(q).add(&eye(q.rows()));
        if t < t_max {
            let at = red.a_blk(j, t);
            m = m.add(&at.matmul_tn(at));
            if j >= 1 {
                if let Some(f) = red.coupling_f(j - 1, t) {
                    m = m.add(&f.matmul_tn(f));
                }
            }
            if let Some(e) = (j + 1 < inst.n_subsystems()).then(|| red.coupling_e(j + 1, t)).flatten() {
                m = m.add(&e.matmul_tn(e));
            }
        }
        m
    };
    // Squared diagonal entry for the costate rows of subsystem j at time t.
    let pp_diag = |j: usize, t: usize| -> Mat {
        let r = red.r_blk(j, t);
        let mut m = r.matmul(r).add(&eye(r.rows()));
        if t >= 1 {
            let at = red.a_blk(j, t - 1);
            m = m.add(&at.matmul_nt(at));
            if let Some(e) = red.coupling_e(j, t - 1) {
                m = m.add(&e.matmul_nt(e));
            }
            if let Some(f) = red.coupling_f(j, t - 1) {
                m = m.add(&f.matmul_nt(f));
            }
        }
        m
    };
    // State-costate cross entry of subsystem j at time t.
    let xp_diag = |j: usize, t: usize| -> Mat { red.q_blk(j, t).add(red.r_blk(j, t)).scale(-1.0) };
    // Sub-diagonal (time t -> t+1) costate-state entry of subsystem j.
    let px_sub = |j: usize, t: usize| -> Mat {
        let at = red.a_blk(j, t);
        at.matmul(red.q_blk(j, t)).add(&red.r_blk(j, t + 1).matmul(at))
    };

    for t in 0..=t_max {
        let mut m = Mat::zeros(nhat, nhat);
        m.set_block(ga_x, ga_x, &xx_diag(a, t));
        m.set_block(ga_p, ga_p, &pp_diag(a, t));
        let xp_a = xp_diag(a, t);
        m.set_block(ga_x, ga_p, &xp_a);
        m.set_block(ga_p, ga_x, &xp_a.transpose());
        if let Some(b) = b {
            m.set_block(gb_x, gb_x, &xx_diag(b, t));
            m.set_block(gb_p, gb_p, &pp_diag(b, t));
            let xp_b = xp_diag(b, t);
            m.set_block(gb_x, gb_p, &xp_b);
            m.set_block(gb_p, gb_x, &xp_b.transpose());
            if t < t_max {
                // Within-pair state coupling A_b' E_b + F_a' A_a.
                let e_b = red.coupling_e(b, t).expect("within-pair coupling");
                let f_a = red.coupling_f(a, t).expect("within-pair coupling");
                let cross = red
                    .a_blk(b, t)
                    .matmul_tn(e_b)
                    .add(&f_a.transpose().matmul(red.a_blk(a, t)));
                m.set_block(gb_x, ga_x, &cross);
                m.set_block(ga_x, gb_x, &cross.transpose());
            }
            if t >= 1 {
                // Within-pair costate coupling E_b A_a' + A_b F_a'.
                let e_b = red.coupling_e(b, t - 1).expect("within-pair coupling");
                let f_a = red.coupling_f(a, t - 1).expect("within-pair coupling");
                let cross = e_b
                    .matmul_nt(red.a_blk(a, t - 1))
                    .add(&red.a_blk(b, t - 1).matmul_nt(f_a));
                m.set_block(gb_p, ga_p, &cross);
                m.set_block(ga_p, gb_p, &cross.transpose());
            }
        }
        diag.push(m);

        if t < t_max {
            let mut s = Mat::zeros(nhat, nhat);
            let at_a = red.a_blk(a, t);
            s.add_block(ga_x, ga_x, -1.0, at_a);
            s.add_block(ga_p, ga_p, -1.0, at_a);
            s.set_block(ga_p, ga_x, &px_sub(a, t));
            if let Some(b) = b {
                let at_b = red.a_blk(b, t);
                s.add_block(gb_x, gb_x, -1.0, at_b);
                s.add_block(gb_p, gb_p, -1.0, at_b);
                s.set_block(gb_p, gb_x, &px_sub(b, t));
                let e_b = red.coupling_e(b, t).expect("within-pair coupling");
                let f_a = red.coupling_f(a, t).expect("within-pair coupling");
                s.add_block(gb_x, ga_x, -1.0, e_b);
                s.add_block(gb_p, ga_p, -1.0, e_b);
                s.set_block(gb_p, ga_x, &e_b.matmul(red.q_blk(a, t)).add(&red.r_blk(b, t + 1).matmul(e_b)));
                s.add_block(ga_x, gb_x, -1.0, f_a);
                s.add_block(ga_p, gb_p, -1.0, f_a);
                // Transposed one-step band entry between the costate of a and
                // the state of b.
                s.set_block(
                    ga_p,
                    gb_x,
                    &red.r_blk(a, t + 1).matmul(f_a).add(&f_a.matmul(red.q_blk(b, t))),
                );
            }
            sub.push(s);
        }
    }

    let tri = BlockTriDiag::new(diag, sub)?;
    let perm = stage_permutation(red, a, b);

    #[cfg(debug_assertions)]
    if t_max <= 4 && tri.total_dim() <= 600 {
        let dense_direct = split.dense_pair_diag(k);
        let dense_tri = tri.to_dense()?;
        let scale = dense_direct.norm_inf().max(1.0);
        for (si, &pi) in perm.iter().enumerate() {
            for (sj, &pj) in perm.iter().enumerate() {
                let diff = (dense_tri[(si, sj)] - dense_direct[(pi, pj)]).abs();
                debug_assert!(
                    diff <= 1e-10 * scale,
                    "stage rearrangement mismatch at pair {k}, ({si},{sj}): {diff:.3e}"
                );
            }
        }
    }

    let factor = tri.ldl_factor().map_err(|e| match e {
        Error::SingularPivot { rcond, .. } => Error::SingularPivot { block: k, rcond },
        other => other,
    })?;
    Ok(PairTridiag { perm, tri, factor })
}

/// Stage-major gather map: entry `i` of the stage-ordered vector reads
/// pair-local index `perm[i]`.
fn stage_permutation(red: &ReducedSystem, a: usize, b: Option<usize>) -> Vec<usize> {
    let inst = red.instance();
    let t_max = inst.horizon();
    let na = inst.state_dim(a);
    let xla = inst.x_len(a);
    let mut perm = Vec::new();
    for t in 0..=t_max {
        for i in 0..na {
            perm.push(t * na + i); // x_a[t]
        }
        for i in 0..na {
            perm.push(xla + t * na + i); // p_a[t]
        }
        if let Some(b) = b {
            let nb = inst.state_dim(b);
            let xlb = inst.x_len(b);
            for i in 0..nb {
                perm.push(2 * xla + t * nb + i); // x_b[t]
            }
            for i in 0..nb {
                perm.push(2 * xla + xlb + t * nb + i); // p_b[t]
            }
        }
    }
    perm
}

impl PairTridiag {
    pub fn total_dim(&self) -> usize {
        self.tri.total_dim()
    }

    pub fn tridiag(&self) -> &BlockTriDiag {
        &self.tri
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Solve the pair's diagonal block against a pair-local right-hand side.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut staged = vec![0.0; rhs.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            staged[i] = rhs[p];
        }
        let sol = self.factor.solve(&staged)?;
        let mut out = vec![0.0; rhs.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = sol[i];
        }
        Ok(out)
    }

    /// Apply the pair's diagonal block to a pair-local vector.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut staged = vec![0.0; v.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            staged[i] = v[p];
        }
        let y = self.tri.matvec(&staged)?;
        let mut out = vec![0.0; v.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = y[i];
        }
        Ok(out)
    }
}

/// A fixed number of block Jacobi sweeps from zero, exposed as the linear
/// SPD operator the conjugate gradient solver preconditions with.
pub struct JacobiPreconditioner<'a, 'b> {
    split: PairSplit<'a, 'b>,
    pairs: Vec<PairTridiag>,
    sweeps: usize,
}

impl<'a, 'b> JacobiPreconditioner<'a, 'b> {
    /// Factor every pair block once; sweeps reuse the factors.
    pub fn new(red: &'a ReducedSystem<'b>, sweeps: usize) -> Result<Self> {
        if sweeps == 0 {
            return Err(Error::InvalidConfig("sweep count must be at least 1".into()));
        }
        let split = PairSplit::new(red);
        let pairs: Vec<PairTridiag> = (0..split.pair_count())
            .into_par_iter()
            .map(|k| build_pair_tridiag(&split, k))
            .collect::<Result<_>>()?;
        Ok(JacobiPreconditioner { split, pairs, sweeps })
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn split(&self) -> &PairSplit<'a, 'b> {
        &self.split
    }

    fn pair_solve_all(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let parts: Vec<Vec<f64>> = (0..self.pairs.len())
            .into_par_iter()
            .map(|k| self.pairs[k].solve(&rhs[self.split.range(k)]))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; rhs.len()];
        for (k, part) in parts.into_iter().enumerate() {
            out[self.split.range(k)].copy_from_slice(&part);
        }
        Ok(out)
    }

    /// One sweep `z -> D^{-1}(rhs + (D - M^2) z)`.
    pub fn sweep(&self, z: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let mut work = self.split.coupling_matvec(z)?;
        crate::dense::axpy(1.0, rhs, &mut work);
        self.pair_solve_all(&work)
    }

    /// Run the configured number of sweeps from zero.
    pub fn apply_sweeps(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.pair_solve_all(rhs)?;
        for _ in 1..self.sweeps {
            z = self.sweep(&z, rhs)?;
        }
        Ok(z)
    }
}

impl Preconditioner for JacobiPreconditioner<'_, '_> {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        // Pair factors are SPD, so the sweeps cannot fail after construction.
        self.apply_sweeps(r).expect("jacobi sweep on factored pairs")
    }
}
