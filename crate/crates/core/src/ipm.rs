//! Primal-dual interior-point outer loop: assemble, reduce, solve, recover,
//! step, and stop on the duality gap.
//!
//! The loop itself is standard fixed-centering path following. What varies is
//! the inner linear solver for each Newton direction: the structured
//! conjugate-gradient path (reduce, squared-system CG with pair-sweep
//! preconditioning, recover), the pure block Jacobi comparator, a direct
//! blockwise factorization of the reduced system, or a dense factorization of
//! the whole linearized KKT system kept around as an oracle.

use std::time::{Duration, Instant};

use crate::kkt;
use crate::krylov::{self, PcgConfig, PrecondKind, SolveReport, SquaredOperator};
use crate::precond::JacobiPreconditioner;
use crate::problem::{self, ProblemInstance, Trajectory};
use crate::{Error, Result};

/// One primal-dual point (or search direction): per subsystem, the stacked
/// state `x`, input `u`, costate `p`, inequality multiplier `lam`, and slack
/// `theta` vectors. Accepted iterates keep `lam` and `theta` strictly
/// positive.
#[derive(Clone, Debug)]
pub struct IpmIterate {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub lam: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl IpmIterate {
    pub fn zeros(inst: &ProblemInstance) -> Self {
        let n = inst.n_subsystems();
        IpmIterate {
            x: (0..n).map(|j| vec![0.0; inst.x_len(j)]).collect(),
            u: (0..n).map(|j| vec![0.0; inst.u_len(j)]).collect(),
            p: (0..n).map(|j| vec![0.0; inst.x_len(j)]).collect(),
            lam: (0..n).map(|j| vec![0.0; inst.con_len(j)]).collect(),
            theta: (0..n).map(|j| vec![0.0; inst.con_len(j)]).collect(),
        }
    }

    pub fn check_dims(&self, inst: &ProblemInstance) -> Result<()> {
        let n = inst.n_subsystems();
        let ok = self.x.len() == n
            && self.u.len() == n
            && self.p.len() == n
            && self.lam.len() == n
            && self.theta.len() == n
            && (0..n).all(|j| {
                self.x[j].len() == inst.x_len(j)
                    && self.u[j].len() == inst.u_len(j)
                    && self.p[j].len() == inst.x_len(j)
                    && self.lam[j].len() == inst.con_len(j)
                    && self.theta[j].len() == inst.con_len(j)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("iterate does not match instance".into()))
        }
    }

    /// True when every multiplier and slack entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.lam.iter().flatten().chain(self.theta.iter().flatten()).all(|&v| v > 0.0)
    }

    /// `self += alpha * delta` across all five groups.
    pub fn step_in_place(&mut self, alpha: f64, delta: &IpmIterate) {
        let groups = [
            (&mut self.x, &delta.x),
            (&mut self.u, &delta.u),
            (&mut self.p, &delta.p),
            (&mut self.lam, &delta.lam),
            (&mut self.theta, &delta.theta),
        ];
        for (dst, src) in groups {
            for (d, s) in dst.iter_mut().zip(src) {
                crate::dense::axpy(alpha, s, d);
            }
        }
    }

    /// View the primal part as a trajectory.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory { x: self.x.clone(), u: self.u.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.u)
            .chain(&self.p)
            .chain(&self.lam)
            .chain(&self.theta)
            .flatten()
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Standard cold start: zero primal and costate, unit multipliers and slacks.
pub fn initialize(inst: &ProblemInstance) -> IpmIterate {
    let mut it = IpmIterate::zeros(inst);
    for j in 0..inst.n_subsystems() {
        it.lam[j].iter_mut().for_each(|v| *v = 1.0);
        it.theta[j].iter_mut().for_each(|v| *v = 1.0);
    }
    it
}

/// Normalized complementarity `sum_j lam_j . theta_j / sum_j nu_j (T+1)`.
pub fn duality_gap(it: &IpmIterate) -> f64 {
    let mut num = 0.0;
    let mut den = 0usize;
    for (lam, theta) in it.lam.iter().zip(&it.theta) {
        num += crate::dense::dot(lam, theta);
        den += lam.len();
    }
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Fraction-to-boundary step:
/// `min(1, gamma * sup{a : lam + a dlam > 0 and theta + a dtheta > 0})`.
pub fn step_size(it: &IpmIterate, delta: &IpmIterate, gamma: f64) -> f64 {
    let mut alpha_max = f64::INFINITY;
    for (cur, dir) in it.lam.iter().zip(&delta.lam).chain(it.theta.iter().zip(&delta.theta)) {
        for (&v, &d) in cur.iter().zip(dir) {
            if d < 0.0 {
                alpha_max = alpha_max.min(-v / d);
            }
        }
    }
    (gamma * alpha_max).min(1.0)
}

/// Inner linear solver for the Newton directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerSolver {
    /// Conjugate gradients on the squared reduced system with the given
    /// number of block Jacobi pair sweeps as preconditioner.
    Pcg { sweeps: usize },
    /// Pure block Jacobi iteration on the squared reduced system.
    Jacobi,
    /// Blockwise backward-forward factorization of the reduced system.
    DirectLdl,
    /// Dense factorization of the full linearized KKT system (oracle path;
    /// guarded by the dense-export size limit).
    Dense,
}

impl std::fmt::Display for InnerSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InnerSolver::Pcg { sweeps } => write!(f, "pcg(L={sweeps})"),
            InnerSolver::Jacobi => write!(f, "jacobi"),
            InnerSolver::DirectLdl => write!(f, "direct"),
            InnerSolver::Dense => write!(f, "dense"),
        }
    }
}

/// Outer-loop controls.
#[derive(Clone, Debug)]
pub struct IpmConfig {
    /// Duality-gap stopping tolerance.
    pub eps_ipm: f64,
    /// Fixed centering parameter in (0, 1).
    pub sigma: f64,
    /// Fraction-to-boundary factor in (0, 1).
    pub gamma_ftb: f64,
    /// Newton-step cap.
    pub max_newton: usize,
    pub inner: InnerSolver,
    /// Residual tolerance for the iterative inner solvers.
    pub eps_inner: f64,
    /// Iteration cap for the iterative inner solvers; `None` means ten times
    /// the number of subsystem-stage blocks.
    pub inner_iter_max: Option<usize>,
    /// Emit one tab-separated progress line per Newton step on stderr.
    pub log_progress: bool,
}

impl Default for IpmConfig {
    fn default() -> Self {
        IpmConfig {
            eps_ipm: 1e-6,
            sigma: 0.1,
            gamma_ftb: 0.995,
            max_newton: 50,
            inner: InnerSolver::Pcg { sweeps: 2 },
            eps_inner: 1e-9,
            inner_iter_max: None,
            log_progress: false,
        }
    }
}

impl IpmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidConfig(format!("sigma must be in (0,1), got {}", self.sigma)));
        }
        if !(self.gamma_ftb > 0.0 && self.gamma_ftb < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fraction-to-boundary factor must be in (0,1), got {}",
                self.gamma_ftb
            )));
        }
        if self.eps_ipm <= 0.0 || self.eps_inner <= 0.0 || self.max_newton == 0 {
            return Err(Error::InvalidConfig("tolerances and caps must be positive".into()));
        }
        Ok(())
    }

    fn inner_cap(&self, inst: &ProblemInstance) -> usize {
        self.inner_iter_max.unwrap_or_else(|| 10 * inst.n_subsystems() * inst.horizon().max(1))
    }
}

/// Compute one Newton direction at `iterate` with the configured inner
/// solver. Also returns the inner solve's iteration report.
pub fn newton_step(
    inst: &ProblemInstance,
    iterate: &IpmIterate,
    cfg: &IpmConfig,
) -> Result<(IpmIterate, SolveReport)> {
    cfg.validate()?;
    let mu = duality_gap(iterate);
    let sys = kkt::assemble_full(inst, iterate, cfg.sigma * mu)?;

    if let InnerSolver::Dense = cfg.inner {
        let total = kkt::full_layout(inst).total;
        if total > crate::blocktri::DENSE_GUARD {
            return Err(Error::SizeGuard { dim: total, guard: crate::blocktri::DENSE_GUARD });
        }
        let dense = sys.to_blocktri()?.to_dense()?;
        let rhs = sys.rhs_vec();
        let sol = dense.lu()?.solve(&rhs);
        let mut resid = rhs.clone();
        dense.matvec_acc(&sol, &mut resid, -1.0);
        let report = SolveReport {
            iterations: 1,
            converged: true,
            residual_history: vec![crate::dense::norm_inf(&rhs), crate::dense::norm_inf(&resid)],
            ..SolveReport::default()
        };
        return Ok((kkt::vec_to_iterate(inst, &sol)?, report));
    }

    let red = kkt::reduce(&sys)?;
    let rhs = red.rhs_vec();
    let (delta_xp, report) = match cfg.inner {
        InnerSolver::Pcg { sweeps } => {
            let op = SquaredOperator::new(&red);
            let pre = JacobiPreconditioner::new(&red, sweeps)?;
            let pcg_cfg = PcgConfig {
                eps: cfg.eps_inner,
                iter_max: cfg.inner_cap(inst),
                kind: PrecondKind::Jacobi(sweeps),
                trace: false,
            };
            krylov::pcg_solve(&op, &pre, &rhs, &pcg_cfg)?
        }
        InnerSolver::Jacobi => {
            let op = SquaredOperator::new(&red);
            krylov::jacobi_solve(&op, &rhs, cfg.eps_inner, cfg.inner_cap(inst))?
        }
        InnerSolver::DirectLdl => {
            let start = Instant::now();
            let factor = red.to_blocktri()?.ldl_factor()?;
            let sol = factor.solve(&rhs)?;
            let mut resid = rhs.clone();
            let msol = red.matvec(&sol)?;
            for (rv, mv) in resid.iter_mut().zip(&msol) {
                *rv -= mv;
            }
            let report = SolveReport {
                iterations: 1,
                converged: true,
                residual_history: vec![
                    crate::dense::norm_inf(&rhs),
                    crate::dense::norm_inf(&resid),
                ],
                total_time: start.elapsed(),
                ..SolveReport::default()
            };
            (sol, report)
        }
        InnerSolver::Dense => unreachable!("handled above"),
    };
    let delta = kkt::recover(&red, &delta_xp)?;
    Ok((delta, report))
}

/// Per-step log entry.
#[derive(Clone, Debug)]
pub struct NewtonStepStats {
    pub index: usize,
    /// Duality gap before the step.
    pub mu: f64,
    pub alpha: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    /// Final inner residual (infinity norm).
    pub inner_residual: f64,
    pub wall: Duration,
}

/// Aggregate solve statistics.
#[derive(Clone, Debug)]
pub struct IpmStats {
    pub converged: bool,
    pub newton_steps: usize,
    pub steps: Vec<NewtonStepStats>,
    pub final_mu: f64,
    pub final_cost: f64,
    pub final_dynamics_residual: f64,
    pub final_constraint_residual: f64,
    pub total_time: Duration,
}

impl IpmStats {
    pub fn max_inner_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.inner_iterations).max().unwrap_or(0)
    }

    pub fn avg_inner_iterations(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.steps.iter().map(|s| s.inner_iterations).sum::<usize>() as f64
                / self.steps.len() as f64
        }
    }

    /// Mean wall time per Newton step, skipping the first `skip` steps to
    /// leave out warm-up effects.
    pub fn avg_step_time(&self, skip: usize) -> Duration {
        let tail: Vec<_> = self.steps.iter().skip(skip).collect();
        if tail.is_empty() {
            return Duration::ZERO;
        }
        tail.iter().map(|s| s.wall).sum::<Duration>() / tail.len() as u32
    }
}

/// Full solve result.
pub struct SolveOutcome {
    pub trajectory: Trajectory,
    pub iterate: IpmIterate,
    pub stats: IpmStats,
}

/// Run the interior-point method to the duality-gap tolerance. Stops early
/// if `max_newton` steps is reached (`stats.converged` is then false).
/// Convergence additionally requires the primal equality and slack defects to
/// be below the same tolerance, so a converged run's trajectory is feasible
/// to `eps_ipm`.
pub fn solve(inst: &ProblemInstance, cfg: &IpmConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut it = initialize(inst);
    let mut steps: Vec<NewtonStepStats> = Vec::new();
    let mut converged = false;
    for n in 0..cfg.max_newton {
        let mu = duality_gap(&it);
        let feas = residual_pair(inst, &it)?;
        if mu <= cfg.eps_ipm && feas.0 <= cfg.eps_ipm && feas.1 <= cfg.eps_ipm {
            converged = true;
            break;
        }
        let step_start = Instant::now();
        let (delta, inner) = newton_step(inst, &it, cfg)?;
        let alpha = step_size(&it, &delta, cfg.gamma_ftb);
        it.step_in_place(alpha, &delta);
        debug_assert!(it.is_interior(), "fraction-to-boundary step left the interior");
        let wall = step_start.elapsed();
        let inner_residual = inner.residual_history.last().copied().unwrap_or(0.0);
        if cfg.log_progress {
            eprintln!(
                "newton\t{n}\t{mu:.6e}\t{alpha:.6}\t{}\t{inner_residual:.3e}",
                inner.iterations
            );
        }
        steps.push(NewtonStepStats {
            index: n,
            mu,
            alpha,
            inner_iterations: inner.iterations,
            inner_converged: inner.converged,
            inner_residual,
            wall,
        });
    }
    if !converged {
        // One more chance: the loop may have stepped to tolerance on its
        // last allowed iteration.
        let mu = duality_gap(&it);
        let feas = residual_pair(inst, &it)?;
        converged = mu <= cfg.eps_ipm && feas.0 <= cfg.eps_ipm && feas.1 <= cfg.eps_ipm;
    }
    let trajectory = it.trajectory();
    let final_cost = problem::evaluate_cost(inst, &trajectory)?;
    let report = problem::residuals(inst, &trajectory, Some(&it.theta))?;
    let stats = IpmStats {
        converged,
        newton_steps: steps.len(),
        final_mu: duality_gap(&it),
        final_cost,
        final_dynamics_residual: report.max_dynamics(),
        final_constraint_residual: report.max_constraint(),
        total_time: start.elapsed(),
        steps,
    };
    Ok(SolveOutcome { trajectory, iterate: it, stats })
}

/// Max dynamics defect and max slack-equation defect at an iterate.
fn residual_pair(inst: &ProblemInstance, it: &IpmIterate) -> Result<(f64, f64)> {
    let traj = Trajectory { x: it.x.clone(), u: it.u.clone() };
    let report = problem::residuals(inst, &traj, Some(&it.theta))?;
    Ok((report.max_dynamics(), report.max_constraint()))
}
