//! Hamiltonian kernels and the extremal solver.
//!
//! The Hamiltonian is `H(k, x, u, psi0, psi) = psi0·L(k,x,u) + psi·phi(k,x,u)`
//! with `psi0 <= 0`. An extremal satisfies, for every stage `k`,
//!
//! - the dynamics `x(k+1) = phi(k, x(k), u(k))`,
//! - the adjoint recursion `psi(k) = dH/dx(k, x(k), u(k), psi0, psi(k+1))`
//!   on interior indices, and
//! - the maximality condition `H(k, x(k), u(k), psi0, psi(k+1)) =
//!   max_{u in Omega} H(k, x(k), u, psi0, psi(k+1))`, enforced here through
//!   its stationarity form (projected onto the box for bounded controls).
//!
//! [`solve_extremal`] stacks all three equation families over the horizon
//! into one square nonlinear system — unknowns are the interior states, the
//! controls, and the co-states — and runs damped Newton on it. `psi0` is
//! pinned to -1 (multipliers are scale-invariant); if that branch fails to
//! converge an abnormal retry pins `psi0 = 0` and normalizes
//! `||psi(M+1)||² = 1` in place of one stationarity component. The returned
//! report always re-evaluates the *full* optimality system, so an abnormal
//! "solution" that violates the replaced equation is flagged rather than
//! accepted.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::diff::{self, Dual, Scalar};
use crate::exec;
use crate::model::{ControlSet, Extremal, ModelError, ProblemSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("terminal state component {index} is free; the solver requires every component fixed")]
    FreeTerminalComponent { index: usize },
    #[error("invalid solver options: {0}")]
    BadOptions(String),
}

/// Residual magnitudes of the optimality system on a candidate extremal,
/// all as infinity norms over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Recurrence violation, including boundary mismatch.
    pub dynamics_res: f64,
    /// Adjoint recursion violation on interior indices.
    pub adjoint_res: f64,
    /// Stationarity (projected for box sets) violation.
    pub stationarity_res: f64,
    /// Whether the stationarity residual is within the tolerance the report
    /// was computed at.
    pub maximality_ok: bool,
    /// Stage index attaining the largest residual.
    pub worst_k: i64,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.dynamics_res
            .max(self.adjoint_res)
            .max(self.stationarity_res)
    }
}

/// Newton solver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_newton_iters: usize,
    /// Convergence threshold on the stacked residual infinity norm.
    pub newton_tol: f64,
    /// Backtracking factor for the damped step.
    pub damping: f64,
    /// Smallest accepted step fraction before the line search gives up.
    pub min_step: f64,
    /// Retry with `psi0 = 0` when the normal branch fails.
    pub abnormal_fallback: bool,
    /// Grid points per control dimension for the optional global maximality
    /// certification over box sets; 0 keeps the check stationarity-only.
    pub maximality_grid_points: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_newton_iters: 100,
            newton_tol: 1e-10,
            damping: 0.5,
            min_step: (2.0f64).powi(-30),
            abnormal_fallback: true,
            maximality_grid_points: 0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<(), PmpError> {
        if self.max_newton_iters == 0 {
            return Err(PmpError::BadOptions("max_newton_iters must be >= 1".into()));
        }
        if self.newton_tol.is_nan() || self.newton_tol <= 0.0 {
            return Err(PmpError::BadOptions("newton_tol must be positive".into()));
        }
        if self.damping.is_nan() || self.damping <= 0.0 || self.damping >= 1.0 {
            return Err(PmpError::BadOptions("damping must lie in (0, 1)".into()));
        }
        if self.min_step.is_nan() || self.min_step <= 0.0 {
            return Err(PmpError::BadOptions("min_step must be positive".into()));
        }
        Ok(())
    }
}

/// Which multiplier normalization produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `psi0 = -1`.
    Normal,
    /// `psi0 = 0` with `||psi(M+1)||² = 1`.
    Abnormal,
}

/// Why a solve stopped short of convergence.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveFailure {
    MaxIterations {
        residual: f64,
    },
    LineSearchStalled {
        residual: f64,
    },
    SingularJacobian {
        iteration: usize,
        cond_estimate: f64,
    },
    /// The abnormal branch solved its reduced system but the replaced
    /// stationarity component is violated on the result.
    ReducedSystemMismatch {
        residual: f64,
    },
}

/// Result of [`solve_extremal`]; inspect `converged` before trusting the
/// extremal.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub extremal: Extremal,
    pub report: ResidualReport,
    pub converged: bool,
    pub branch: Branch,
    /// True when the abnormal retry ran (whether or not it succeeded).
    pub fallback_engaged: bool,
    pub iterations: usize,
    pub failure: Option<SolveFailure>,
}

/// `psi0·L + psi·phi` at one stage.
pub fn hamiltonian(
    p: &ProblemSpec,
    k: i64,
    x: &[f64],
    u: &[f64],
    psi0: f64,
    psi: &[f64],
) -> Result<f64, PmpError> {
    Ok(hamiltonian_at(p, k, x, u, psi0, psi)?)
}

pub(crate) fn hamiltonian_at<T: Scalar>(
    p: &ProblemSpec,
    k: i64,
    x: &[T],
    u: &[T],
    psi0: T,
    psi: &[T],
) -> Result<T, ModelError> {
    let l = p.eval_lagrangian(k, x, u)?;
    let phi = p.eval_dynamics(k, x, u)?;
    let mut h = psi0 * l;
    for (&pi, fi) in psi.iter().zip(phi) {
        h = h + pi * fi;
    }
    Ok(h)
}

/// Backward co-state update: the gradient of `H` in the state slot,
/// `psi(k) = dH/dx(k, x, u, psi0, psi_next)`.
pub fn adjoint_step(
    p: &ProblemSpec,
    k: i64,
    x: &[f64],
    u: &[f64],
    psi0: f64,
    psi_next: &[f64],
) -> Result<Vec<f64>, PmpError> {
    Ok(grad_h_x(p, k, x, u, psi0, psi_next)?)
}

pub(crate) fn grad_h_x<T: Scalar>(
    p: &ProblemSpec,
    k: i64,
    x: &[T],
    u: &[T],
    psi0: T,
    psi_next: &[T],
) -> Result<Vec<T>, ModelError> {
    let ud: Vec<Dual<T>> = u.iter().map(|&v| Dual::constant(v)).collect();
    let pd: Vec<Dual<T>> = psi_next.iter().map(|&v| Dual::constant(v)).collect();
    let p0 = Dual::constant(psi0);
    diff::gradient(|xd| hamiltonian_at(p, k, xd, &ud, p0, &pd), x)
}

pub(crate) fn grad_h_u<T: Scalar>(
    p: &ProblemSpec,
    k: i64,
    x: &[T],
    u: &[T],
    psi0: T,
    psi_next: &[T],
) -> Result<Vec<T>, ModelError> {
    let xd: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let pd: Vec<Dual<T>> = psi_next.iter().map(|&v| Dual::constant(v)).collect();
    let p0 = Dual::constant(psi0);
    diff::gradient(|ud| hamiltonian_at(p, k, &xd, ud, p0, &pd), u)
}

fn clamp_scalar<T: Scalar>(v: T, lo: f64, hi: f64) -> T {
    if v.value() < lo {
        T::from_f64(lo)
    } else if v.value() > hi {
        T::from_f64(hi)
    } else {
        v
    }
}

/// First-order maximality residual at one stage: `dH/du` on free control
/// sets, or the projected residual `u - clamp(u + dH/du)` on boxes. Zero at
/// a stationary (respectively, box-KKT) point.
pub fn stationarity_residual(
    p: &ProblemSpec,
    k: i64,
    x: &[f64],
    u: &[f64],
    psi0: f64,
    psi_next: &[f64],
) -> Result<Vec<f64>, PmpError> {
    Ok(stationarity_at(p, k, x, u, psi0, psi_next)?)
}

pub(crate) fn stationarity_at<T: Scalar>(
    p: &ProblemSpec,
    k: i64,
    x: &[T],
    u: &[T],
    psi0: T,
    psi_next: &[T],
) -> Result<Vec<T>, ModelError> {
    let grad = grad_h_u(p, k, x, u, psi0, psi_next)?;
    match &p.control_set {
        ControlSet::Free => Ok(grad),
        ControlSet::Box { lower, upper } => Ok(u
            .iter()
            .zip(grad)
            .zip(lower.iter().zip(upper))
            .map(|((&ui, gi), (&lo, &hi))| ui - clamp_scalar(ui + gi, lo, hi))
            .collect()),
    }
}

/// Unknown vector layout for the stacked system:
/// interior states `x(M+1..M+N-1)`, then controls `u(M..M+N-1)`, then
/// co-states `psi(M+1..M+N)`. Boundary states are substituted constants.
struct StackedSystem<'a> {
    p: &'a ProblemSpec,
    x_end: Vec<f64>,
    psi0: f64,
    /// Abnormal mode: replace the first stationarity component by the
    /// co-state normalization `sum_k ||psi(k)||² - 1`. Normalizing the
    /// whole sequence matters: abnormal extremals routinely carry all
    /// their multiplier weight at the terminal index, with `psi(M+1) = 0`.
    normalized: bool,
}

impl<'a> StackedSystem<'a> {
    fn new(p: &'a ProblemSpec, psi0: f64, normalized: bool) -> Result<Self, PmpError> {
        let x_end = p
            .x_end
            .iter()
            .enumerate()
            .map(|(index, v)| v.ok_or(PmpError::FreeTerminalComponent { index }))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(StackedSystem {
            p,
            x_end,
            psi0,
            normalized,
        })
    }

    fn n(&self) -> usize {
        self.p.state_dim
    }

    fn r(&self) -> usize {
        self.p.control_dim
    }

    fn periods(&self) -> usize {
        self.p.horizon.periods
    }

    fn dim(&self) -> usize {
        let (n, r, nn) = (self.n(), self.r(), self.periods());
        (nn - 1) * n + nn * r + nn * n
    }

    fn controls_base(&self) -> usize {
        (self.periods() - 1) * self.n()
    }

    fn costates_base(&self) -> usize {
        self.controls_base() + self.periods() * self.r()
    }

    fn stationarity_row_base(&self) -> usize {
        // after dynamics (N·n) and adjoint ((N-1)·n) rows
        self.periods() * self.n() + (self.periods() - 1) * self.n()
    }

    fn control_slice<'z, T>(&self, z: &'z [T], k: i64) -> &'z [T] {
        let off = self.controls_base() + (k - self.p.horizon.first) as usize * self.r();
        &z[off..off + self.r()]
    }

    fn costate_slice<'z, T>(&self, z: &'z [T], k: i64) -> &'z [T] {
        let off = self.costates_base() + (k - self.p.horizon.first - 1) as usize * self.n();
        &z[off..off + self.n()]
    }

    /// Residual of the full stacked system, generic so the Newton matrix
    /// can be produced by dual passes over this same code path.
    fn residual<T: Scalar>(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        let p = self.p;
        let (n, first, last) = (self.n(), p.horizon.first, p.horizon.last());
        let start: Vec<T> = p.x_start.iter().map(|&v| T::from_f64(v)).collect();
        let end: Vec<T> = self.x_end.iter().map(|&v| T::from_f64(v)).collect();
        let state = |z: &'_ [T], k: i64| -> Vec<T> {
            if k == first {
                start.clone()
            } else if k == last {
                end.clone()
            } else {
                let off = (k - first - 1) as usize * n;
                z[off..off + n].to_vec()
            }
        };
        let psi0 = T::from_f64(self.psi0);

        let mut out: Vec<T> = Vec::with_capacity(self.dim());
        // dynamics, k = M .. M+N-1
        for k in p.horizon.stages() {
            let xk = state(z, k);
            let xnext = state(z, k + 1);
            let phi = p.eval_dynamics(k, &xk, self.control_slice(z, k))?;
            for (a, b) in xnext.into_iter().zip(phi) {
                out.push(a - b);
            }
        }
        // adjoint, k = M+1 .. M+N-1
        for k in (first + 1)..last {
            let xk = state(z, k);
            let grad = grad_h_x(
                p,
                k,
                &xk,
                self.control_slice(z, k),
                psi0,
                self.costate_slice(z, k + 1),
            )?;
            let psi_k = self.costate_slice(z, k);
            for (a, b) in psi_k.iter().zip(grad) {
                out.push(*a - b);
            }
        }
        // stationarity, k = M .. M+N-1
        for k in p.horizon.stages() {
            let xk = state(z, k);
            let res = stationarity_at(
                p,
                k,
                &xk,
                self.control_slice(z, k),
                psi0,
                self.costate_slice(z, k + 1),
            )?;
            out.extend(res);
        }
        if self.normalized {
            let mut norm2 = T::from_f64(-1.0);
            for k in (first + 1)..=last {
                for &v in self.costate_slice(z, k) {
                    norm2 = norm2 + v * v;
                }
            }
            out[self.stationarity_row_base()] = norm2;
        }
        debug_assert_eq!(out.len(), self.dim());
        Ok(out)
    }

    fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let dim = self.dim();
        let columns: Vec<Vec<f64>> = exec::try_map_collect((0..dim).collect(), |j| {
            let mut zd: Vec<Dual<f64>> = z.iter().map(|&v| Dual::constant(v)).collect();
            zd[j].im = 1.0;
            Ok(self
                .residual::<Dual<f64>>(&zd)?
                .into_iter()
                .map(|d| d.im)
                .collect())
        })?;
        Ok(DMatrix::from_fn(dim, dim, |i, j| columns[j][i]))
    }

    fn unpack(&self, z: &[f64]) -> Result<Extremal, ModelError> {
        let p = self.p;
        let (n, first, last) = (self.n(), p.horizon.first, p.horizon.last());
        let mut x = Vec::with_capacity(self.periods() + 1);
        x.push(p.x_start.clone());
        for k in (first + 1)..last {
            let off = (k - first - 1) as usize * n;
            x.push(z[off..off + n].to_vec());
        }
        x.push(self.x_end.clone());
        let u: Vec<Vec<f64>> = p
            .horizon
            .stages()
            .map(|k| self.control_slice(z, k).to_vec())
            .collect();
        let psi: Vec<Vec<f64>> = ((first + 1)..=last)
            .map(|k| self.costate_slice(z, k).to_vec())
            .collect();
        Extremal::new(Trajectory::new(first, x, u)?, self.psi0, psi)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

struct NewtonRun {
    z: Vec<f64>,
    residual_norm: f64,
    iterations: usize,
    converged: bool,
    failure: Option<SolveFailure>,
}

fn newton(sys: &StackedSystem, z0: Vec<f64>, opts: &SolverOptions) -> Result<NewtonRun, PmpError> {
    let mut z = z0;
    let mut f = sys.residual::<f64>(&z)?;
    let mut fnorm = inf_norm(&f);
    let mut iterations = 0usize;
    let mut failure = None;

    while fnorm > opts.newton_tol {
        if iterations >= opts.max_newton_iters {
            failure = Some(SolveFailure::MaxIterations { residual: fnorm });
            break;
        }
        iterations += 1;
        let jac = sys.jacobian(&z)?;
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|&v| -v));
        // The linear solve goes through the SVD as a minimum-norm
        // least-squares step. On regular iterates this is the plain Newton
        // step; on rank-deficient ones (degenerate initial guesses,
        // solution manifolds of abnormal problems) it still makes progress
        // where an LU solve would abort.
        let svd = jac.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        let cond = if sigma_min > 0.0 {
            sigma_max / sigma_min
        } else {
            f64::INFINITY
        };
        let rank_deficient = cond.is_nan() || cond >= 1e14;
        if sigma_max == 0.0 {
            failure = Some(SolveFailure::SingularJacobian {
                iteration: iterations,
                cond_estimate: cond,
            });
            break;
        }
        let step = svd
            .solve(&rhs, sigma_max * 1e-13)
            .expect("non-negative singular value threshold");
        // Backtracking: halve until the residual norm actually drops. A
        // trial point may leave an expression's domain; that also shrinks
        // the step.
        let mut alpha = 1.0f64;
        let mut accepted = false;
        while alpha >= opts.min_step {
            let trial: Vec<f64> = z
                .iter()
                .zip(step.iter())
                .map(|(&zi, &di)| zi + alpha * di)
                .collect();
            if let Ok(ft) = sys.residual::<f64>(&trial) {
                let ftn = inf_norm(&ft);
                if ftn < fnorm {
                    z = trial;
                    f = ft;
                    fnorm = ftn;
                    accepted = true;
                    break;
                }
            }
            alpha *= opts.damping;
        }
        if !accepted {
            failure = Some(if rank_deficient {
                SolveFailure::SingularJacobian {
                    iteration: iterations,
                    cond_estimate: cond,
                }
            } else {
                SolveFailure::LineSearchStalled { residual: fnorm }
            });
            break;
        }
    }

    Ok(NewtonRun {
        z,
        residual_norm: fnorm,
        iterations,
        converged: fnorm <= opts.newton_tol,
        failure,
    })
}

fn initial_guess(
    sys: &StackedSystem,
    seed: Option<&Trajectory>,
    psi_init: &[f64],
) -> Result<Vec<f64>, PmpError> {
    let p = sys.p;
    let (n, r, nn) = (sys.n(), sys.r(), sys.periods());
    let mut z = vec![0.0f64; sys.dim()];
    match seed {
        Some(t) => {
            if t.first != p.horizon.first || t.periods() != nn {
                return Err(PmpError::Model(ModelError::WrongStart {
                    expected: p.horizon.first,
                    got: t.first,
                }));
            }
            if t.x.iter().any(|v| v.len() != n) || t.u.iter().any(|v| v.len() != r) {
                return Err(PmpError::Model(ModelError::Length {
                    what: "seed trajectory vectors".into(),
                    expected: n,
                    got: t.x.iter().map(Vec::len).find(|&l| l != n).unwrap_or(r),
                }));
            }
            for i in 0..nn - 1 {
                z[i * n..(i + 1) * n].copy_from_slice(&t.x[i + 1]);
            }
            for (i, u) in t.u.iter().enumerate() {
                let off = sys.controls_base() + i * r;
                z[off..off + r].copy_from_slice(u);
            }
        }
        None => {
            // states: straight-line interpolation between the endpoints
            for i in 0..nn - 1 {
                let w = (i + 1) as f64 / nn as f64;
                for j in 0..n {
                    z[i * n + j] = (1.0 - w) * p.x_start[j] + w * sys.x_end[j];
                }
            }
            // controls: box midpoint when finite, else zero clamped in
            let mut u0 = vec![0.0f64; r];
            if let ControlSet::Box { lower, upper } = &p.control_set {
                for j in 0..r {
                    u0[j] = if lower[j].is_finite() && upper[j].is_finite() {
                        0.5 * (lower[j] + upper[j])
                    } else {
                        0.0f64.clamp(lower[j], upper[j])
                    };
                }
            }
            for i in 0..nn {
                let off = sys.controls_base() + i * r;
                z[off..off + r].copy_from_slice(&u0);
            }
        }
    }
    for i in 0..nn {
        let off = sys.costates_base() + i * n;
        z[off..off + n].copy_from_slice(psi_init);
    }
    Ok(z)
}

/// Solve the stacked optimality system for problem `p`.
///
/// The normal branch pins `psi0 = -1`; multipliers are defined up to a
/// positive scale, so any normal extremal can be represented this way. When
/// it fails and `opts.abnormal_fallback` is set, an abnormal retry pins
/// `psi0 = 0` and replaces one stationarity component with the co-state
/// normalization `sum_k ||psi(k)||² = 1`. Non-convergence is not an `Err`:
/// the best iterate comes back with `converged = false` and a
/// [`SolveFailure`] describing why.
pub fn solve_extremal(
    p: &ProblemSpec,
    opts: &SolverOptions,
    seed: Option<&Trajectory>,
) -> Result<SolveOutcome, PmpError> {
    opts.validate()?;

    let normal_sys = StackedSystem::new(p, -1.0, false)?;
    let z0 = initial_guess(&normal_sys, seed, &vec![0.0; p.state_dim])?;
    let normal = newton(&normal_sys, z0, opts)?;
    if normal.converged {
        return finish(p, &normal_sys, normal, Branch::Normal, false, opts);
    }
    if !opts.abnormal_fallback {
        return finish(p, &normal_sys, normal, Branch::Normal, false, opts);
    }

    let abnormal_sys = StackedSystem::new(p, 0.0, true)?;
    // normalization gradient must not vanish at the guess
    let mut psi_init = vec![0.0; p.state_dim];
    psi_init[0] = 1.0 / (p.horizon.periods as f64).sqrt();
    let z0 = initial_guess(&abnormal_sys, seed, &psi_init)?;
    let abnormal = newton(&abnormal_sys, z0, opts)?;
    if abnormal.converged || abnormal.residual_norm < normal.residual_norm {
        finish(p, &abnormal_sys, abnormal, Branch::Abnormal, true, opts)
    } else {
        let mut out = finish(p, &normal_sys, normal, Branch::Normal, true, opts)?;
        out.fallback_engaged = true;
        Ok(out)
    }
}

fn finish(
    p: &ProblemSpec,
    sys: &StackedSystem,
    run: NewtonRun,
    branch: Branch,
    fallback_engaged: bool,
    opts: &SolverOptions,
) -> Result<SolveOutcome, PmpError> {
    let extremal = sys.unpack(&run.z)?;
    let report = extremal_residuals(p, &extremal, opts.newton_tol)?;
    let mut failure = run.failure;
    let mut converged = run.converged;
    // The abnormal branch solves a reduced system; accept only if the full
    // optimality system checks out too.
    if converged && report.max_residual() > opts.newton_tol {
        converged = false;
        failure = Some(SolveFailure::ReducedSystemMismatch {
            residual: report.max_residual(),
        });
    }
    Ok(SolveOutcome {
        extremal,
        report,
        converged,
        branch,
        fallback_engaged,
        iterations: run.iterations,
        failure,
    })
}

/// Re-evaluate all three residual families on a candidate extremal without
/// solving anything. `stationarity_tol` only feeds the `maximality_ok`
/// flag.
pub fn extremal_residuals(
    p: &ProblemSpec,
    e: &Extremal,
    stationarity_tol: f64,
) -> Result<ResidualReport, PmpError> {
    let t = &e.trajectory;
    let first = p.horizon.first;
    let last = p.horizon.last();

    struct StageRes {
        k: i64,
        dynamics: f64,
        adjoint: f64,
        stationarity: f64,
    }

    let stages: Vec<i64> = p.horizon.stages().collect();
    let per_stage: Vec<StageRes> = exec::try_map_collect(stages, |k| {
        let x = t.state(k);
        let u = t.control(k);
        let psi_next = e.costate(k + 1);
        let phi = p.eval_dynamics(k, x, u)?;
        let dynamics = phi
            .iter()
            .zip(t.state(k + 1))
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let adjoint = if k > first {
            let grad = grad_h_x(p, k, x, u, e.psi0, psi_next)?;
            e.costate(k)
                .iter()
                .zip(grad)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
        } else {
            0.0
        };
        let stat = stationarity_at(p, k, x, u, e.psi0, psi_next)?;
        let stationarity = inf_norm(&stat);
        Ok::<_, ModelError>(StageRes {
            k,
            dynamics,
            adjoint,
            stationarity,
        })
    })?;

    let mut report = ResidualReport {
        dynamics_res: 0.0,
        adjoint_res: 0.0,
        stationarity_res: 0.0,
        maximality_ok: false,
        worst_k: first,
    };
    let mut worst = -1.0f64;
    for s in &per_stage {
        report.dynamics_res = report.dynamics_res.max(s.dynamics);
        report.adjoint_res = report.adjoint_res.max(s.adjoint);
        report.stationarity_res = report.stationarity_res.max(s.stationarity);
        let local = s.dynamics.max(s.adjoint).max(s.stationarity);
        if local > worst {
            worst = local;
            report.worst_k = s.k;
        }
    }
    // boundary mismatch counts against the dynamics family
    let mut boundary = 0.0f64;
    for (a, b) in t.state(first).iter().zip(&p.x_start) {
        boundary = boundary.max((a - b).abs());
    }
    for (a, b) in t.state(last).iter().zip(&p.x_end) {
        if let Some(b) = b {
            boundary = boundary.max((a - b).abs());
        }
    }
    if boundary > worst {
        report.worst_k = first;
    }
    report.dynamics_res = report.dynamics_res.max(boundary);
    report.maximality_ok = report.stationarity_res <= stationarity_tol;
    Ok(report)
}

/// Maximality verdict for a candidate extremal.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximalityReport {
    pub ok: bool,
    pub stationarity_max: f64,
    pub worst_k: i64,
    /// Whether the global grid certification ran (box sets with finite
    /// bounds and `maximality_grid_points > 0` only).
    pub grid_checked: bool,
    /// Largest `H(k, x(k), u_grid) - H(k, x(k), u(k))` observed; positive
    /// values beyond tolerance refute maximality.
    pub grid_max_gap: f64,
}

/// Check the maximality condition along an extremal: stationarity residuals
/// at `opts.newton_tol`, plus an optional uniform-grid sweep over box
/// control sets certifying `H(k, x(k), u_grid) <= H(k, x(k), u(k)) + tol`.
pub fn maximality_check(
    p: &ProblemSpec,
    e: &Extremal,
    opts: &SolverOptions,
) -> Result<MaximalityReport, PmpError> {
    let tol = opts.newton_tol;
    let base = extremal_residuals(p, e, tol)?;

    let mut grid_checked = false;
    let mut grid_max_gap = f64::NEG_INFINITY;
    if opts.maximality_grid_points > 0 {
        if let ControlSet::Box { lower, upper } = &p.control_set {
            let finite = lower.iter().chain(upper).all(|b| b.is_finite());
            if finite {
                grid_checked = true;
                let g = opts.maximality_grid_points;
                let stages: Vec<i64> = p.horizon.stages().collect();
                let gaps: Vec<f64> = exec::try_map_collect(stages, |k| {
                    let x = e.trajectory.state(k);
                    let psi_next = e.costate(k + 1);
                    let h_star =
                        hamiltonian_at(p, k, x, e.trajectory.control(k), e.psi0, psi_next)?;
                    let mut worst = f64::NEG_INFINITY;
                    let r = p.control_dim;
                    let mut idx = vec![0usize; r];
                    loop {
                        let u_grid: Vec<f64> = (0..r)
                            .map(|j| {
                                if g == 1 {
                                    0.5 * (lower[j] + upper[j])
                                } else {
                                    lower[j]
                                        + (upper[j] - lower[j]) * idx[j] as f64 / (g - 1) as f64
                                }
                            })
                            .collect();
                        let h = hamiltonian_at(p, k, x, &u_grid, e.psi0, psi_next)?;
                        worst = worst.max(h - h_star);
                        // odometer over the grid
                        let mut carry = 0;
                        while carry < r {
                            idx[carry] += 1;
                            if idx[carry] < g {
                                break;
                            }
                            idx[carry] = 0;
                            carry += 1;
                        }
                        if carry == r {
                            break;
                        }
                    }
                    Ok::<_, ModelError>(worst)
                })?;
                grid_max_gap = gaps.into_iter().fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }

    let ok = base.stationarity_res <= tol && (!grid_checked || grid_max_gap <= tol);
    Ok(MaximalityReport {
        ok,
        stationarity_max: base.stationarity_res,
        worst_k: base.worst_k,
        grid_checked,
        grid_max_gap: if grid_checked { grid_max_gap } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::fixtures;
    use crate::model::{cost, Horizon};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hamiltonian_direct_arithmetic() {
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 2).unwrap(), [1.0, 2.0, 3.0], None);
        let h = hamiltonian(&p, 0, &[1.0, 2.0, 3.0], &[1.0, 1.0], -0.5, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(h, 3.0); // -0.5·0 + (2+1)
    }

    #[test]
    fn hamiltonian_zero_multipliers() {
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 2).unwrap(), [1.0, 2.0, 3.0], None);
        let h = hamiltonian(&p, 1, &[0.3, -0.7, 2.0], &[0.4, 0.9], 0.0, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn hamiltonian_pure_integrator() {
        // phi = u, L = 0: H = psi·u
        let p = ProblemSpec::new(
            Horizon::new(0, 1).unwrap(),
            1,
            1,
            parse("0").unwrap(),
            vec![parse("u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(0.0)],
        )
        .unwrap();
        let h = hamiltonian(&p, 0, &[0.0], &[2.5], -1.0, &[3.0]).unwrap();
        assert_eq!(h, 7.5);
    }

    #[test]
    fn adjoint_step_swap_bilinear() {
        // dH/dx = (psi2, psi1 + psi3·u1, 0)
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 2).unwrap(), [1.0, 2.0, 3.0], None);
        let psi_next = [0.7, -1.3, 0.4];
        let u = [2.0, -0.5];
        let got = adjoint_step(&p, 0, &[1.0, 2.0, 3.0], &u, -1.0, &psi_next).unwrap();
        assert_eq!(got, vec![-1.3, 0.7 + 0.4 * 2.0, 0.0]);
    }

    #[test]
    fn adjoint_step_state_independent_problem() {
        let p = ProblemSpec::new(
            Horizon::new(0, 1).unwrap(),
            2,
            1,
            parse("u1^2").unwrap(),
            vec![parse("u1").unwrap(), parse("2*u1").unwrap()],
            ControlSet::Free,
            vec![0.0, 0.0],
            vec![Some(0.0), Some(0.0)],
        )
        .unwrap();
        let got = adjoint_step(&p, 0, &[1.0, 2.0], &[3.0], -1.0, &[0.5, 0.5]).unwrap();
        assert_eq!(got, vec![0.0, 0.0]);
    }

    #[test]
    fn adjoint_step_cv_reduction_gives_scaled_state_gradient() {
        // phi = u: dH/dx = psi0·dL/dx
        let p = ProblemSpec::new(
            Horizon::new(0, 1).unwrap(),
            1,
            1,
            parse("(u1 - x1)^2").unwrap(),
            vec![parse("u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(0.0)],
        )
        .unwrap();
        let got = adjoint_step(&p, 0, &[1.0], &[4.0], -1.0, &[9.0]).unwrap();
        // psi0·dL/dx = -1·(-2)(u-x) = 2·3
        assert_eq!(got, vec![6.0]);
    }

    #[test]
    fn stationarity_swap_bilinear() {
        // (2·psi0·u1 + psi1' + psi3'·x2, -2·psi0·u2 + psi2')
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 2).unwrap(), [1.0, 2.0, 3.0], None);
        let x = [1.0, 2.0, 3.0];
        let u = [0.3, -0.8];
        let psi_next = [0.7, -1.3, 0.4];
        let psi0 = -0.5;
        let got = stationarity_residual(&p, 0, &x, &u, psi0, &psi_next).unwrap();
        let expect = vec![
            2.0 * psi0 * u[0] + psi_next[0] + psi_next[2] * x[1],
            -2.0 * psi0 * u[1] + psi_next[1],
        ];
        assert_eq!(got, expect);
    }

    #[test]
    fn stationarity_of_pure_control_dynamics() {
        // phi = u: the residual is psi0·dL/du + psi(k+1), zero exactly when
        // the co-state matches the marginal cost.
        let p = ProblemSpec::new(
            Horizon::new(0, 1).unwrap(),
            1,
            1,
            parse("(u1 - x1)^2").unwrap(),
            vec![parse("u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(0.0)],
        )
        .unwrap();
        let (x, u, psi0) = ([0.5], [2.0], -1.0);
        let marginal = 2.0 * (u[0] - x[0]); // dL/du
        let got = stationarity_residual(&p, 0, &x, &u, psi0, &[7.0]).unwrap();
        assert_eq!(got, vec![psi0 * marginal + 7.0]);
        let zeroing = [-psi0 * marginal];
        let got = stationarity_residual(&p, 0, &x, &u, psi0, &zeroing).unwrap();
        assert_eq!(got, vec![0.0]);
    }

    #[test]
    fn nonzero_third_costate_shows_as_adjoint_residual() {
        // The swap-bilinear adjoint forces psi3(k) = 0 on interior
        // indices; planting 0.1 there must surface in the report.
        let (p, mut e) = fixtures::swap_bilinear_normal_extremal();
        e.psi[1][2] = 0.1; // psi3(2)
        let rep = extremal_residuals(&p, &e, 1e-10).unwrap();
        assert!(rep.adjoint_res >= 0.1);
    }

    #[test]
    fn stationarity_zero_when_control_absent() {
        let p = ProblemSpec::new(
            Horizon::new(0, 1).unwrap(),
            1,
            1,
            parse("x1^2").unwrap(),
            vec![parse("x1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(0.0)],
        )
        .unwrap();
        let got = stationarity_residual(&p, 0, &[1.5], &[2.0], -1.0, &[3.0]).unwrap();
        assert_eq!(got, vec![0.0]);
    }

    #[test]
    fn lq_scalar_solution_matches_hand_computation() {
        // minimize u0² + u1², x(k+1) = x + u, x(0)=0, x(2)=1:
        // u = (1/2, 1/2), x(1) = 1/2, psi(1) = psi(2) = 1 with psi0 = -1.
        let p = fixtures::lq_scalar_problem();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.converged, "{:?}", out.failure);
        assert_eq!(out.branch, Branch::Normal);
        assert!(!out.fallback_engaged);
        let e = &out.extremal;
        assert!((e.trajectory.control(0)[0] - 0.5).abs() < 1e-10);
        assert!((e.trajectory.control(1)[0] - 0.5).abs() < 1e-10);
        assert!((e.trajectory.state(1)[0] - 0.5).abs() < 1e-10);
        assert!((e.costate(1)[0] - 1.0).abs() < 1e-10);
        assert!((e.costate(2)[0] - 1.0).abs() < 1e-10);
        let c = cost(&p, &e.trajectory).unwrap();
        assert!((c - 0.5).abs() < 1e-10);
    }

    #[test]
    fn lq_scalar_matches_brute_force_grid() {
        // 201-point grid per period on [-1, 1]; feasible pairs have
        // i + j = 300 so the constraint x(2) = 1 holds exactly.
        let p = fixtures::lq_scalar_problem();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        let solver_cost = cost(&p, &out.extremal.trajectory).unwrap();

        let grid = |i: usize| (i as f64 - 100.0) / 100.0;
        let mut best = f64::INFINITY;
        for i in 0..=200usize {
            let j = 300usize.checked_sub(i);
            let Some(j) = j else { continue };
            if j > 200 {
                continue;
            }
            let (u0, u1) = (grid(i), grid(j));
            best = best.min(u0 * u0 + u1 * u1);
        }
        assert!((best - solver_cost).abs() <= 1e-3);
        assert!(solver_cost <= best + 1e-12);
    }

    #[test]
    fn all_zero_costates_leave_stationarity_residual() {
        let p = fixtures::lq_scalar_problem();
        let t = crate::model::rollout(&p, &[vec![0.5], vec![0.5]], &[0.0]).unwrap();
        let u_max = 0.5;
        let e = Extremal::new(t, -1.0, vec![vec![0.0], vec![0.0]]).unwrap();
        let rep = extremal_residuals(&p, &e, 1e-10).unwrap();
        // dH/du = 2·psi0·u = -2u
        assert!((rep.stationarity_res - 2.0 * u_max).abs() < 1e-14);
        assert!(!rep.maximality_ok);
    }

    #[test]
    fn converged_outcome_passes_residual_and_maximality_checks() {
        let p = fixtures::lq_scalar_problem();
        let opts = SolverOptions::default();
        let out = solve_extremal(&p, &opts, None).unwrap();
        let rep = extremal_residuals(&p, &out.extremal, opts.newton_tol).unwrap();
        assert!(rep.max_residual() <= opts.newton_tol);
        assert!(maximality_check(&p, &out.extremal, &opts).unwrap().ok);
        assert!(out.extremal.multiplier_magnitude() > 0.0);
    }

    #[test]
    fn perturbed_control_fails_maximality() {
        let p = fixtures::lq_scalar_problem();
        let opts = SolverOptions::default();
        let mut out = solve_extremal(&p, &opts, None).unwrap();
        out.extremal.trajectory.u[0][0] += 0.1;
        let rep = maximality_check(&p, &out.extremal, &opts).unwrap();
        assert!(!rep.ok);
        assert!(rep.stationarity_max >= 0.19);
    }

    #[test]
    fn trivial_problem_every_control_is_maximal() {
        // L = 0 and phi = 0: H ≡ 0, so the grid sweep finds no improvement.
        let p = ProblemSpec::new(
            Horizon::new(0, 2).unwrap(),
            1,
            1,
            parse("0").unwrap(),
            vec![parse("0").unwrap()],
            ControlSet::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
            vec![0.0],
            vec![Some(0.0)],
        )
        .unwrap();
        let t = Trajectory::new(0, vec![vec![0.0]; 3], vec![vec![0.3], vec![-0.9]]).unwrap();
        let e = Extremal::new(t, -1.0, vec![vec![0.4], vec![-0.2]]).unwrap();
        let opts = SolverOptions {
            maximality_grid_points: 11,
            ..Default::default()
        };
        let rep = maximality_check(&p, &e, &opts).unwrap();
        assert!(rep.grid_checked);
        assert!(rep.ok, "{rep:?}");
    }

    #[test]
    fn grid_check_refutes_non_maximal_control() {
        // H strictly concave in u; nudging the control off the stationary
        // point must be caught by the grid sweep as well.
        let p = ProblemSpec::new(
            Horizon::new(0, 2).unwrap(),
            1,
            1,
            parse("u1^2").unwrap(),
            vec![parse("x1 + u1").unwrap()],
            ControlSet::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
            vec![0.0],
            vec![Some(1.0)],
        )
        .unwrap();
        let opts = SolverOptions {
            maximality_grid_points: 201,
            ..Default::default()
        };
        let out = solve_extremal(&p, &opts, None).unwrap();
        assert!(out.converged);
        assert!(maximality_check(&p, &out.extremal, &opts).unwrap().ok);

        let mut bad = out.extremal.clone();
        bad.trajectory.u[1][0] += 0.25;
        let rep = maximality_check(&p, &bad, &opts).unwrap();
        assert!(rep.grid_checked);
        assert!(!rep.ok);
        assert!(rep.grid_max_gap > 1e-3);
    }

    #[test]
    fn converges_to_constructed_normal_extremal() {
        let (p, known) = fixtures::swap_bilinear_normal_extremal();
        let rep = extremal_residuals(&p, &known, 1e-10).unwrap();
        assert_eq!(rep.max_residual(), 0.0); // fixture is exact

        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.converged, "{:?}", out.failure);
        assert_eq!(out.branch, Branch::Normal);
    }

    #[test]
    fn abnormal_fallback_finds_end_loaded_multipliers() {
        // The boundary admits no normal extremal (x2(4) differs from
        // x2(0)); the abnormal one has psi(1..3) = 0 and all weight on
        // psi(4), which the whole-sequence normalization can represent.
        let p = fixtures::swap_bilinear_abnormal_problem();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.fallback_engaged);
        assert!(out.converged, "{:?}", out.failure);
        assert_eq!(out.branch, Branch::Abnormal);
        let e = &out.extremal;
        assert_eq!(e.psi0, 0.0);
        for k in 1..=3i64 {
            for v in e.costate(k) {
                assert!(v.abs() <= 1e-9, "psi({k}) = {:?}", e.costate(k));
            }
        }
        assert!(e.multiplier_magnitude() > 0.5);
        // abnormal stationarity ties the last control to the state:
        // u1(3) = x2(3)
        let diff = e.trajectory.control(3)[0] - e.trajectory.state(3)[1];
        assert!(diff.abs() <= 1e-9);
    }

    #[test]
    fn feedback_rollout_boundary_admits_no_extremal() {
        // Rolling out u1 = x1, u2 = -x2/2 produces a boundary with
        // x2(M+N) != x2(M) (no normal extremal, since the adjoint
        // alternation pins x2 on even offsets) and
        // x3(M+N) != (x1(M+N)/2)² (no abnormal one); the solver must come
        // back flagged rather than pretend otherwise.
        for periods in [2usize, 4] {
            let t = fixtures::swap_bilinear_feedback(periods, [1.0, 1.0, 0.0]);
            let end = t.state(periods as i64);
            let p = fixtures::swap_bilinear_problem(
                Horizon::new(0, periods).unwrap(),
                [1.0, 1.0, 0.0],
                Some([end[0], end[1], end[2]]),
            );
            let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
            assert!(!out.converged, "N = {periods}");
            assert!(out.fallback_engaged, "N = {periods}");
            assert!(out.failure.is_some(), "N = {periods}");
        }
    }

    #[test]
    fn costless_transport_yields_vanishing_costates() {
        // L = 0, phi = u: every admissible trajectory is an extremal, with
        // psi ≡ 0 and the nonzero-pair condition carried by psi0 = -1
        // alone. The stacked system is rank-deficient (the trajectory is
        // undetermined), so this also exercises the least-squares Newton
        // step. A pure-abnormal representation does not exist: psi0 = 0
        // would force psi ≡ 0 entirely, violating nontriviality.
        let p = ProblemSpec::new(
            Horizon::new(0, 3).unwrap(),
            1,
            1,
            parse("0").unwrap(),
            vec![parse("u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(2.0)],
        )
        .unwrap();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.converged, "{:?}", out.failure);
        assert_eq!(out.branch, Branch::Normal);
        assert!(!out.fallback_engaged);
        assert_eq!(out.extremal.psi0, -1.0);
        for psi in &out.extremal.psi {
            assert!(psi[0].abs() <= 1e-10);
        }
        assert!(out.extremal.multiplier_magnitude() > 0.0);
        // and the trajectory it picked is admissible
        assert!(
            crate::model::admissibility_residual(&p, &out.extremal.trajectory).unwrap() <= 1e-10
        );
    }

    #[test]
    fn free_terminal_component_is_rejected() {
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 2).unwrap(), [1.0, 0.0, 0.0], None);
        let err = solve_extremal(&p, &SolverOptions::default(), None).unwrap_err();
        assert!(matches!(err, PmpError::FreeTerminalComponent { index: 0 }));
    }

    #[test]
    fn newton_matrix_matches_central_differences() {
        // Columns of the dual-assembled Jacobian against central FD of the
        // stacked residual, on random iterates of two small problems.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let problems = vec![
            fixtures::swap_bilinear_problem(
                Horizon::new(0, 3).unwrap(),
                [1.0, 1.0, 0.0],
                Some([2.0, 1.5, 1.0]),
            ),
            fixtures::lq_scalar_problem(),
        ];
        for p in &problems {
            let sys = StackedSystem::new(p, -1.0, false).unwrap();
            let dim = sys.dim();
            for _ in 0..3 {
                let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let jac = sys.jacobian(&z).unwrap();
                let h = 1e-6;
                for j in 0..dim {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[j] += h;
                    zm[j] -= h;
                    let fp = sys.residual::<f64>(&zp).unwrap();
                    let fm = sys.residual::<f64>(&zm).unwrap();
                    for i in 0..dim {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        let a = jac[(i, j)];
                        assert!(
                            (a - fd).abs() <= 1e-5 * (1.0 + a.abs()),
                            "J[{i},{j}] = {a} vs fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn solves_from_seed_trajectory() {
        let p = fixtures::lq_scalar_problem();
        let seed = crate::model::rollout(&p, &[vec![0.9], vec![0.1]], &[0.0]).unwrap();
        let out = solve_extremal(&p, &SolverOptions::default(), Some(&seed)).unwrap();
        assert!(out.converged);
        assert!((out.extremal.trajectory.control(0)[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn negative_first_period_solves() {
        // index arithmetic must hold for horizons not anchored at zero
        let p = ProblemSpec::new(
            Horizon::new(-3, 2).unwrap(),
            1,
            1,
            parse("u1^2").unwrap(),
            vec![parse("x1 + u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(1.0)],
        )
        .unwrap();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.converged);
        assert!((out.extremal.trajectory.control(-3)[0] - 0.5).abs() < 1e-10);
        assert!((out.extremal.costate(-1)[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_period_horizon_solves() {
        // N = 1: no interior states, no adjoint rows.
        let p = ProblemSpec::new(
            Horizon::new(0, 1).unwrap(),
            1,
            1,
            parse("u1^2").unwrap(),
            vec![parse("x1 + u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![Some(1.0)],
        )
        .unwrap();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.converged);
        assert!((out.extremal.trajectory.control(0)[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn box_constrained_interior_solution() {
        // Bounds wide enough that the optimum u = (0.15, 0.15) is interior;
        // the projected stationarity residual must behave like the free one.
        let p = ProblemSpec::new(
            Horizon::new(0, 2).unwrap(),
            1,
            1,
            parse("u1^2").unwrap(),
            vec![parse("x1 + u1").unwrap()],
            ControlSet::Box {
                lower: vec![-0.2],
                upper: vec![0.2],
            },
            vec![0.0],
            vec![Some(0.3)],
        )
        .unwrap();
        let out = solve_extremal(&p, &SolverOptions::default(), None).unwrap();
        assert!(out.converged, "{:?}", out.failure);
        assert!((out.extremal.trajectory.control(0)[0] - 0.15).abs() < 1e-8);
        assert!((out.extremal.trajectory.control(1)[0] - 0.15).abs() < 1e-8);
    }
}
