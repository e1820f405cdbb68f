//! Problem instances: chain-coupled LQ optimal control data, validation,
//! generators, and evaluation helpers.
//!
//! An instance couples `N` subsystems along a path: subsystem `j` evolves as
//!
//! ```text
//! x[j][t+1] = A[j][t] x[j][t] + B[j][t] u[j][t] + E[j][t] x[j-1][t] + F[j][t] x[j+1][t]
//! ```
//!
//! with prescribed initial states `xi[j]`, prescribed boundary trajectories
//! `chi[t] = x[0][t]` and `zeta[t] = x[N+1][t]`, per-stage quadratic cost
//! `x'Qx + 2x'S'u + u'Ru`, and per-stage inequalities `Cx + Du <= kappa`. The
//! terminal stage `t = T` has no input: `S`, `R`, and `D` are zero there.
//!
//! Instances are immutable once built; everything downstream reads them
//! through shared references.

use std::fmt;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{norm_inf, sym_eig, Mat};
use crate::{Error, Result};

/// Quadratic stage cost `x'Qx + 2x'S'u + u'Ru` (the one-half factor is
/// applied once, in [`evaluate_cost`]).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StageCost {
    pub q: Mat,
    /// Input-state cross term, `m x n`; all zero at the terminal stage.
    pub s: Mat,
    /// Input cost, `m x m`; all zero at the terminal stage.
    pub r: Mat,
}

/// One stage of subsystem dynamics (defined for `t < T`).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubsystemDynamics {
    pub a: Mat,
    pub b: Mat,
    /// Coupling from the left neighbour's state, `n_j x n_{j-1}`.
    pub e: Mat,
    /// Coupling from the right neighbour's state, `n_j x n_{j+1}`.
    pub f: Mat,
}

/// One stage of inequality data `C x + D u <= kappa`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConstraintData {
    pub c: Mat,
    /// `nu x m`; all zero at the terminal stage.
    pub d: Mat,
    pub kappa: Vec<f64>,
}

/// Per-`(j, t)` bundle.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Stage {
    pub cost: StageCost,
    /// `None` exactly at the terminal stage `t = T`.
    pub dynamics: Option<SubsystemDynamics>,
    pub constraint: ConstraintData,
}

/// All stages of one subsystem.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubsystemData {
    #[serde(rename = "n")]
    pub state_dim: usize,
    #[serde(rename = "m")]
    pub input_dim: usize,
    #[serde(rename = "nu")]
    pub constraint_dim: usize,
    /// Length `T + 1`.
    pub stages: Vec<Stage>,
}

/// Initial states and the two prescribed boundary-state trajectories.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundaryData {
    /// Dimension of the prescribed left boundary state `x[0][t]`.
    pub n_left: usize,
    /// Dimension of the prescribed right boundary state `x[N+1][t]`.
    pub n_right: usize,
    /// `xi[j]`, one initial state per subsystem.
    pub xi: Vec<Vec<f64>>,
    /// `chi[t]`, `T + 1` left boundary states.
    pub chi: Vec<Vec<f64>>,
    /// `zeta[t]`, `T + 1` right boundary states.
    pub zeta: Vec<Vec<f64>>,
}

/// A complete chain-coupled LQ optimal control instance.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProblemInstance {
    #[serde(rename = "N")]
    pub subsystem_count: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub subsystems: Vec<SubsystemData>,
    pub boundary: BoundaryData,
}

impl ProblemInstance {
    /// Number of subsystems `N`.
    pub fn n_subsystems(&self) -> usize {
        self.subsystem_count
    }

    /// Horizon length `T` (stages run `t = 0..=T`).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self, j: usize) -> usize {
        self.subsystems[j].state_dim
    }

    pub fn input_dim(&self, j: usize) -> usize {
        self.subsystems[j].input_dim
    }

    pub fn constraint_dim(&self, j: usize) -> usize {
        self.subsystems[j].constraint_dim
    }

    pub fn stage(&self, j: usize, t: usize) -> &Stage {
        &self.subsystems[j].stages[t]
    }

    /// Dynamics at `(j, t)`; panics at the terminal stage.
    pub fn dynamics(&self, j: usize, t: usize) -> &SubsystemDynamics {
        self.subsystems[j].stages[t].dynamics.as_ref().expect("dynamics exist for t < T")
    }

    /// Stacked state length `n_j (T + 1)`.
    pub fn x_len(&self, j: usize) -> usize {
        self.state_dim(j) * (self.horizon + 1)
    }

    /// Stacked input length `m_j T`.
    pub fn u_len(&self, j: usize) -> usize {
        self.input_dim(j) * self.horizon
    }

    /// Stacked multiplier/slack length `nu_j (T + 1)`.
    pub fn con_len(&self, j: usize) -> usize {
        self.constraint_dim(j) * (self.horizon + 1)
    }

    /// Primal decision-variable count, `sum_j n_j(T+1) + m_j T`.
    pub fn primal_var_count(&self) -> usize {
        (0..self.n_subsystems()).map(|j| self.x_len(j) + self.u_len(j)).sum()
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A single validation finding. `j` is the 1-based subsystem id to match the
/// usual numbering of chain problems; `t` is absent for per-subsystem checks.
#[derive(Clone, Debug)]
pub struct Violation {
    pub j: usize,
    pub t: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.t {
            Some(t) => write!(f, "(j={}, t={}): {}", self.j, t, self.message),
            None => write!(f, "(j={}): {}", self.j, self.message),
        }
    }
}

/// Relative tolerance for the semidefiniteness checks below.
pub const TOL_PSD: f64 = 1e-9;

fn eig_range(m: &Mat) -> Option<(f64, f64)> {
    let eig = sym_eig(m).ok()?;
    let lo = *eig.values.first()?;
    let hi = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    Some((lo, hi))
}

fn is_psd(m: &Mat) -> bool {
    match eig_range(m) {
        Some((lo, hi)) => lo >= -TOL_PSD * hi.max(1.0),
        None => false,
    }
}

fn is_pd(m: &Mat) -> bool {
    match eig_range(m) {
        Some((lo, _)) => lo > 0.0,
        None => false,
    }
}

/// Check every structural and definiteness requirement of an instance.
/// Violations are data, not failures: an empty report means the instance is
/// well posed.
pub fn validate(inst: &ProblemInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = inst.subsystem_count;
    let t_max = inst.horizon;
    let mut push = |j: usize, t: Option<usize>, message: String| {
        out.push(Violation { j, t, message });
    };

    if n < 1 {
        push(0, None, "instance must have at least one subsystem".into());
    }
    if t_max < 1 {
        push(0, None, "horizon must be at least 1".into());
    }
    if inst.subsystems.len() != n {
        push(0, None, format!("N={} but {} subsystems present", n, inst.subsystems.len()));
        return out;
    }
    if inst.boundary.xi.len() != n {
        push(0, None, format!("expected {} initial states, got {}", n, inst.boundary.xi.len()));
    }
    for (name, list) in [("chi", &inst.boundary.chi), ("zeta", &inst.boundary.zeta)] {
        if list.len() != t_max + 1 {
            push(0, None, format!("expected {} {name} entries, got {}", t_max + 1, list.len()));
        }
    }

    for (j0, sub) in inst.subsystems.iter().enumerate() {
        let j = j0 + 1;
        let (nj, mj, nuj) = (sub.state_dim, sub.input_dim, sub.constraint_dim);
        if nj < 1 || mj < 1 || nuj < 1 {
            push(j, None, "state, input, and constraint dimensions must be at least 1".into());
            continue;
        }
        if sub.stages.len() != t_max + 1 {
            push(j, None, format!("expected {} stages, got {}", t_max + 1, sub.stages.len()));
            continue;
        }
        if let Some(xi) = inst.boundary.xi.get(j0) {
            if xi.len() != nj {
                push(j, None, format!("initial state length {} != n={}", xi.len(), nj));
            }
        }
        let left_dim = if j0 == 0 { inst.boundary.n_left } else { inst.subsystems[j0 - 1].state_dim };
        let right_dim = if j0 + 1 == n {
            inst.boundary.n_right
        } else {
            inst.subsystems[j0 + 1].state_dim
        };

        for (t, stage) in sub.stages.iter().enumerate() {
            let terminal = t == t_max;
            let cost = &stage.cost;
            if cost.q.rows() != nj || cost.q.cols() != nj {
                push(j, Some(t), format!("Q is {}x{}, expected {nj}x{nj}", cost.q.rows(), cost.q.cols()));
                continue;
            }
            if cost.s.rows() != mj || cost.s.cols() != nj || cost.r.rows() != mj || cost.r.cols() != mj {
                push(j, Some(t), "S or R has inconsistent dimensions".into());
                continue;
            }
            if !cost.q.is_symmetric(1e-12 * cost.q.norm_inf().max(1.0)) {
                push(j, Some(t), "Q not symmetric".into());
            } else if !is_psd(&cost.q) {
                push(j, Some(t), "Q not PSD".into());
            }
            if terminal {
                if cost.s.norm_inf() != 0.0 || cost.r.norm_inf() != 0.0 {
                    push(j, Some(t), "terminal stage must have S = 0 and R = 0".into());
                }
            } else {
                if !cost.r.is_symmetric(1e-12 * cost.r.norm_inf().max(1.0)) {
                    push(j, Some(t), "R not symmetric".into());
                } else if !is_pd(&cost.r) {
                    push(j, Some(t), "R not positive definite".into());
                } else {
                    // Schur complement Q - S' R^{-1} S must stay PSD.
                    if let Ok(chol) = cost.r.cholesky() {
                        let rinv_s = chol.solve_mat(&cost.s);
                        let schur = cost.q.sub(&cost.s.matmul_tn(&rinv_s));
                        if !is_psd(&schur) {
                            push(j, Some(t), "Q - S' R^{-1} S not PSD".into());
                        }
                    }
                }
            }

            match (&stage.dynamics, terminal) {
                (Some(_), true) => push(j, Some(t), "terminal stage must not carry dynamics".into()),
                (None, false) => push(j, Some(t), "missing dynamics".into()),
                (Some(dyn_), false) => {
                    if dyn_.a.rows() != nj || dyn_.a.cols() != nj {
                        push(j, Some(t), "A has inconsistent dimensions".into());
                    }
                    if dyn_.b.rows() != nj || dyn_.b.cols() != mj {
                        push(j, Some(t), "B has inconsistent dimensions".into());
                    }
                    if dyn_.e.rows() != nj || dyn_.e.cols() != left_dim {
                        push(
                            j,
                            Some(t),
                            format!("E is {}x{}, expected {nj}x{left_dim}", dyn_.e.rows(), dyn_.e.cols()),
                        );
                    }
                    if dyn_.f.rows() != nj || dyn_.f.cols() != right_dim {
                        push(
                            j,
                            Some(t),
                            format!("F is {}x{}, expected {nj}x{right_dim}", dyn_.f.rows(), dyn_.f.cols()),
                        );
                    }
                }
                (None, true) => {}
            }

            let con = &stage.constraint;
            if con.c.rows() != nuj || con.c.cols() != nj || con.d.rows() != nuj || con.d.cols() != mj {
                push(j, Some(t), "C or D has inconsistent dimensions".into());
            }
            if con.kappa.len() != nuj {
                push(j, Some(t), format!("kappa length {} != nu={}", con.kappa.len(), nuj));
            }
            if terminal && con.d.norm_inf() != 0.0 {
                push(j, Some(t), "terminal stage must have D = 0".into());
            }
        }
    }
    for (t, (chi, zeta)) in inst.boundary.chi.iter().zip(&inst.boundary.zeta).enumerate() {
        if chi.len() != inst.boundary.n_left {
            push(0, Some(t), format!("chi length {} != n_left={}", chi.len(), inst.boundary.n_left));
        }
        if zeta.len() != inst.boundary.n_right {
            push(0, Some(t), format!("zeta length {} != n_right={}", zeta.len(), inst.boundary.n_right));
        }
    }
    out
}

/// State and input trajectories, stacked per subsystem over time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `x[j]` has length `n_j (T + 1)`.
    pub x: Vec<Vec<f64>>,
    /// `u[j]` has length `m_j T`.
    pub u: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn zeros(inst: &ProblemInstance) -> Self {
        Trajectory {
            x: (0..inst.n_subsystems()).map(|j| vec![0.0; inst.x_len(j)]).collect(),
            u: (0..inst.n_subsystems()).map(|j| vec![0.0; inst.u_len(j)]).collect(),
        }
    }

    pub fn x_at<'a>(&'a self, inst: &ProblemInstance, j: usize, t: usize) -> &'a [f64] {
        let n = inst.state_dim(j);
        &self.x[j][t * n..(t + 1) * n]
    }

    pub fn u_at<'a>(&'a self, inst: &ProblemInstance, j: usize, t: usize) -> &'a [f64] {
        let m = inst.input_dim(j);
        &self.u[j][t * m..(t + 1) * m]
    }

    fn check_dims(&self, inst: &ProblemInstance) -> Result<()> {
        if self.x.len() != inst.n_subsystems() || self.u.len() != inst.n_subsystems() {
            return Err(Error::DimensionMismatch("trajectory subsystem count".into()));
        }
        for j in 0..inst.n_subsystems() {
            if self.x[j].len() != inst.x_len(j) || self.u[j].len() != inst.u_len(j) {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory lengths at subsystem {j}: x {} (want {}), u {} (want {})",
                    self.x[j].len(),
                    inst.x_len(j),
                    self.u[j].len(),
                    inst.u_len(j)
                )));
            }
        }
        Ok(())
    }
}

/// Total objective `1/2 sum_{j,t} (x'Qx + 2x'S'u + u'Ru)`; the terminal stage
/// contributes only its state term.
pub fn evaluate_cost(inst: &ProblemInstance, traj: &Trajectory) -> Result<f64> {
    traj.check_dims(inst)?;
    let t_max = inst.horizon;
    let mut total = 0.0;
    for j in 0..inst.n_subsystems() {
        for t in 0..=t_max {
            let x = traj.x_at(inst, j, t);
            let cost = &inst.stage(j, t).cost;
            let qx = cost.q.matvec(x);
            total += crate::dense::dot(x, &qx);
            if t < t_max {
                let u = traj.u_at(inst, j, t);
                let sx = cost.s.matvec(x);
                total += 2.0 * crate::dense::dot(u, &sx);
                let ru = cost.r.matvec(u);
                total += crate::dense::dot(u, &ru);
            }
        }
    }
    Ok(0.5 * total)
}

/// Per-`(j, t)` feasibility residuals.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// `dynamics[j][t]`: infinity norm of the equality defect. Entry `t = 0`
    /// is the initial-condition defect `x[j][0] - xi[j]`; entry `t >= 1` is
    /// the dynamics defect of the transition into time `t`.
    pub dynamics: Vec<Vec<f64>>,
    /// `constraint[j][t]`: largest inequality violation, `max(0, Cx+Du-kappa)`
    /// elementwise; with slacks supplied, the equation defect `|Cx+Du+theta-kappa|`.
    pub constraint: Vec<Vec<f64>>,
}

impl ResidualReport {
    pub fn max_dynamics(&self) -> f64 {
        self.dynamics.iter().flatten().fold(0.0_f64, |a, &v| a.max(v))
    }

    pub fn max_constraint(&self) -> f64 {
        self.constraint.iter().flatten().fold(0.0_f64, |a, &v| a.max(v))
    }
}

/// Evaluate equality and inequality residuals of a trajectory; `slacks`, when
/// given, turns the inequality check into the slack equation defect.
pub fn residuals(
    inst: &ProblemInstance,
    traj: &Trajectory,
    slacks: Option<&[Vec<f64>]>,
) -> Result<ResidualReport> {
    traj.check_dims(inst)?;
    let n = inst.n_subsystems();
    let t_max = inst.horizon;
    if let Some(s) = slacks {
        if s.len() != n || (0..n).any(|j| s[j].len() != inst.con_len(j)) {
            return Err(Error::DimensionMismatch("slack lengths".into()));
        }
    }
    let mut dynamics = Vec::with_capacity(n);
    let mut constraint = Vec::with_capacity(n);
    for j in 0..n {
        let nj = inst.state_dim(j);
        let mut dyn_res = Vec::with_capacity(t_max + 1);
        let mut init = traj.x_at(inst, j, 0).to_vec();
        for (v, xi) in init.iter_mut().zip(&inst.boundary.xi[j]) {
            *v -= xi;
        }
        dyn_res.push(norm_inf(&init));
        for t in 1..=t_max {
            let dyn_ = inst.dynamics(j, t - 1);
            let mut r = traj.x_at(inst, j, t).to_vec();
            dyn_.a.matvec_acc(traj.x_at(inst, j, t - 1), &mut r, -1.0);
            dyn_.b.matvec_acc(traj.u_at(inst, j, t - 1), &mut r, -1.0);
            let left: &[f64] =
                if j == 0 { &inst.boundary.chi[t - 1] } else { traj.x_at(inst, j - 1, t - 1) };
            dyn_.e.matvec_acc(left, &mut r, -1.0);
            let right: &[f64] =
                if j + 1 == n { &inst.boundary.zeta[t - 1] } else { traj.x_at(inst, j + 1, t - 1) };
            dyn_.f.matvec_acc(right, &mut r, -1.0);
            debug_assert_eq!(r.len(), nj);
            dyn_res.push(norm_inf(&r));
        }
        dynamics.push(dyn_res);

        let nu = inst.constraint_dim(j);
        let mut con_res = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            let con = &inst.stage(j, t).constraint;
            let mut v = con.c.matvec(traj.x_at(inst, j, t));
            if t < t_max {
                con.d.matvec_acc(traj.u_at(inst, j, t), &mut v, 1.0);
            }
            let worst = match slacks {
                None => v
                    .iter()
                    .zip(&con.kappa)
                    .fold(0.0_f64, |a, (lhs, k)| a.max((lhs - k).max(0.0))),
                Some(s) => {
                    let th = &s[j][t * nu..(t + 1) * nu];
                    v.iter()
                        .zip(&con.kappa)
                        .zip(th)
                        .fold(0.0_f64, |a, ((lhs, k), sv)| a.max((lhs + sv - k).abs()))
                }
            };
            con_res.push(worst);
        }
        constraint.push(con_res);
    }
    Ok(ResidualReport { dynamics, constraint })
}

/// Roll the dynamics forward from the prescribed initial states under the
/// given inputs. The result has zero dynamics residual by construction.
pub fn simulate(inst: &ProblemInstance, inputs: &[Vec<f64>]) -> Result<Trajectory> {
    let n = inst.n_subsystems();
    let t_max = inst.horizon;
    if inputs.len() != n || (0..n).any(|j| inputs[j].len() != inst.u_len(j)) {
        return Err(Error::DimensionMismatch("input lengths".into()));
    }
    let mut traj = Trajectory { x: Vec::with_capacity(n), u: inputs.to_vec() };
    for j in 0..n {
        let mut x = vec![0.0; inst.x_len(j)];
        x[..inst.state_dim(j)].copy_from_slice(&inst.boundary.xi[j]);
        traj.x.push(x);
    }
    for t in 0..t_max {
        for j in 0..n {
            let nj = inst.state_dim(j);
            let dyn_ = inst.dynamics(j, t);
            let mut next = dyn_.a.matvec(traj.x_at(inst, j, t));
            dyn_.b.matvec_acc(traj.u_at(inst, j, t), &mut next, 1.0);
            let left: &[f64] =
                if j == 0 { &inst.boundary.chi[t] } else { traj.x_at(inst, j - 1, t) };
            dyn_.e.matvec_acc(left, &mut next, 1.0);
            let right: &[f64] =
                if j + 1 == n { &inst.boundary.zeta[t] } else { traj.x_at(inst, j + 1, t) };
            dyn_.f.matvec_acc(right, &mut next, 1.0);
            traj.x[j][(t + 1) * nj..(t + 2) * nj].copy_from_slice(&next);
        }
    }
    Ok(traj)
}

/// Mirror an instance end for end: subsystem `j` swaps with `N+1-j`, left and
/// right couplings trade places, and the boundary trajectories swap sides.
pub fn reflect(inst: &ProblemInstance) -> ProblemInstance {
    let mut subsystems: Vec<SubsystemData> = inst
        .subsystems
        .iter()
        .rev()
        .map(|sub| {
            let mut sub = sub.clone();
            for stage in &mut sub.stages {
                if let Some(d) = &mut stage.dynamics {
                    std::mem::swap(&mut d.e, &mut d.f);
                }
            }
            sub
        })
        .collect();
    let boundary = BoundaryData {
        n_left: inst.boundary.n_right,
        n_right: inst.boundary.n_left,
        xi: inst.boundary.xi.iter().rev().cloned().collect(),
        chi: inst.boundary.zeta.clone(),
        zeta: inst.boundary.chi.clone(),
    };
    ProblemInstance {
        subsystem_count: inst.subsystem_count,
        horizon: inst.horizon,
        subsystems: std::mem::take(&mut subsystems),
        boundary,
    }
}

/// Mirror a trajectory the same way [`reflect`] mirrors an instance.
pub fn reflect_trajectory(traj: &Trajectory) -> Trajectory {
    Trajectory {
        x: traj.x.iter().rev().cloned().collect(),
        u: traj.u.iter().rev().cloned().collect(),
    }
}

/// SplitMix64: the seed-derivation and test-helper generator. One step per
/// `next_u64`, fully portable.
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * u64_to_unit(self.next_u64())
    }
}

#[inline]
fn u64_to_unit(v: u64) -> f64 {
    // Top 53 bits give an exact dyadic rational in [0, 1).
    (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Independent substream for one `(subsystem, parameter)` slot: a ChaCha8
/// stream cipher seeded by a SplitMix64 hash of `(seed, j, param)`. Draws are
/// bit-identical on every platform.
fn stream(seed: u64, j: usize, param: u64) -> ChaCha8Rng {
    let mut mix = SplitMix::new(seed);
    let base = mix.next_u64();
    let mut mix2 = SplitMix::new(
        base ^ (j as u64).wrapping_mul(0xA076_1D64_78BD_642F) ^ param.wrapping_mul(0xE703_7ED1_A0B4_28DB),
    );
    ChaCha8Rng::seed_from_u64(mix2.next_u64())
}

fn draw_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * u64_to_unit(rng.next_u64())
}

/// Generator knobs for [`msd_chain`].
#[derive(Clone, Debug)]
pub struct MsdConfig {
    /// Forward-Euler step for the continuous-time chain.
    pub step: f64,
    /// Physical parameters (mass, spring, damping) are i.i.d. uniform in
    /// `[param_min, param_max]`.
    pub param_min: f64,
    pub param_max: f64,
    /// Position box `|position| <= position_bound`.
    pub position_bound: f64,
    /// Input box `|u| <= input_bound`.
    pub input_bound: f64,
    /// Initial states are i.i.d. uniform in `[init_min, init_max]`.
    pub init_min: f64,
    pub init_max: f64,
}

impl Default for MsdConfig {
    fn default() -> Self {
        MsdConfig {
            step: 0.1,
            param_min: 0.8,
            param_max: 1.5,
            position_bound: 4.0,
            input_bound: 2.0,
            init_min: -1.0,
            init_max: 1.0,
        }
    }
}

// Parameter-stream tags for the generator.
const PAR_MASS: u64 = 0;
const PAR_SPRING: u64 = 1;
const PAR_DAMPING: u64 = 2;
const PAR_INIT: u64 = 3;

/// Benchmark generator: a chain of `n` unit point masses with springs and
/// dampers to both neighbours (walls at the ends), forced directly, with
/// position and input box constraints. State is `(position, velocity)`, so
/// `n_j = 2`, `m_j = 1`, `nu_j = 4`. The continuous-time model is discretized
/// by forward Euler with `config.step`.
pub fn msd_chain(n: usize, t: usize, seed: u64, config: &MsdConfig) -> Result<ProblemInstance> {
    if n < 1 || t < 1 {
        return Err(Error::InvalidConfig(format!(
            "msd_chain needs n >= 1 and t >= 1, got n={n}, t={t}"
        )));
    }
    let h = config.step;
    let mut subsystems = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for j in 0..n {
        let mass = draw_uniform(&mut stream(seed, j, PAR_MASS), config.param_min, config.param_max);
        let spring =
            draw_uniform(&mut stream(seed, j, PAR_SPRING), config.param_min, config.param_max);
        let damping =
            draw_uniform(&mut stream(seed, j, PAR_DAMPING), config.param_min, config.param_max);
        let mut init_rng = stream(seed, j, PAR_INIT);
        xi.push(vec![
            draw_uniform(&mut init_rng, config.init_min, config.init_max),
            draw_uniform(&mut init_rng, config.init_min, config.init_max),
        ]);

        // Both neighbour links of mass j use its own spring and damper.
        let a = Mat::from_rows(&[
            vec![1.0, h],
            vec![-2.0 * h * spring / mass, 1.0 - 2.0 * h * damping / mass],
        ])?;
        let b = Mat::from_rows(&[vec![0.0], vec![h / mass]])?;
        let coupling = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![h * spring / mass, h * damping / mass],
        ])?;

        let q = Mat::diag(&[1.0, 0.0]);
        let s = Mat::zeros(1, 2);
        let r = Mat::from_rows(&[vec![1.0]])?;
        let c = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])?;
        let d = Mat::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![-1.0]])?;
        let kappa = vec![
            config.position_bound,
            config.position_bound,
            config.input_bound,
            config.input_bound,
        ];

        let mut stages = Vec::with_capacity(t + 1);
        for stage_t in 0..=t {
            let terminal = stage_t == t;
            stages.push(Stage {
                cost: StageCost {
                    q: q.clone(),
                    s: if terminal { Mat::zeros(1, 2) } else { s.clone() },
                    r: if terminal { Mat::zeros(1, 1) } else { r.clone() },
                },
                dynamics: (!terminal).then(|| SubsystemDynamics {
                    a: a.clone(),
                    b: b.clone(),
                    e: coupling.clone(),
                    f: coupling.clone(),
                }),
                constraint: ConstraintData {
                    c: c.clone(),
                    d: if terminal { Mat::zeros(4, 1) } else { d.clone() },
                    kappa: kappa.clone(),
                },
            });
        }
        subsystems.push(SubsystemData { state_dim: 2, input_dim: 1, constraint_dim: 4, stages });
    }

    Ok(ProblemInstance {
        subsystem_count: n,
        horizon: t,
        subsystems,
        boundary: BoundaryData {
            n_left: 2,
            n_right: 2,
            xi,
            chi: vec![vec![0.0; 2]; t + 1],
            zeta: vec![vec![0.0; 2]; t + 1],
        },
    })
}
