//! Problem data: horizon, control sets, problem definitions, trajectories,
//! extremals, and parametric symmetry families.
//!
//! A problem couples a stage cost `L(k, x, u)` with dynamics
//! `x(k+1) = phi(k, x(k), u(k))` over `k = M .. M+N-1`, fixed (or
//! componentwise fixed) endpoint states, and a convex control set. State
//! variables are named `x1..xn`, controls `u1..ur`, and the time index is
//! available as `k` inside every expression.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diff::Scalar;
use crate::expr::{Env, EvalError, Expr};

/// Seed for the structural identity spot-check of symmetry families.
const IDENTITY_CHECK_SEED: u64 = 0x1DE7;
/// Sample count for that check.
const IDENTITY_CHECK_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("horizon must contain at least one period")]
    EmptyHorizon,
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("variable `{var}` is not available in {context} (allowed: {allowed})")]
    UnknownVariable {
        var: String,
        context: String,
        allowed: String,
    },
    #[error("box bounds: lower > upper in component {index} ({lower} > {upper})")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("parameter count must be at least 1")]
    NoParameters,
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error(
        "{what} must reduce to the identity at s = 0; \
         sample point deviates by {deviation:e} in component {component}"
    )]
    NotIdentityAtZero {
        what: String,
        component: usize,
        deviation: f64,
    },
    #[error("psi0 must be <= 0, got {0}")]
    PositivePsi0(f64),
    #[error("the multiplier pair (psi0, psi) may not vanish identically")]
    TrivialMultipliers,
    #[error("evaluating {what} at k = {k}: {source}")]
    StageEval {
        what: String,
        k: i64,
        source: EvalError,
    },
    #[error("trajectory starts at k = {got}, problem starts at k = {expected}")]
    WrongStart { expected: i64, got: i64 },
}

/// Discrete horizon: `periods` stages starting at time index `first`.
///
/// Controls live on `first .. first+periods-1`, states on
/// `first ..= first+periods`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    pub first: i64,
    pub periods: usize,
}

impl Horizon {
    pub fn new(first: i64, periods: usize) -> Result<Self, ModelError> {
        if periods == 0 {
            return Err(ModelError::EmptyHorizon);
        }
        Ok(Horizon { first, periods })
    }

    /// Last state index `M + N`.
    pub fn last(&self) -> i64 {
        self.first + self.periods as i64
    }

    /// Stage indices `M ..= M+N-1`.
    pub fn stages(&self) -> impl Iterator<Item = i64> {
        self.first..self.last()
    }
}

/// Admissible control region. Box bounds may be infinite componentwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Free,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ControlSet {
    fn validate(&self, control_dim: usize) -> Result<(), ModelError> {
        if let ControlSet::Box { lower, upper } = self {
            check_len("box lower bounds", lower.len(), control_dim)?;
            check_len("box upper bounds", upper.len(), control_dim)?;
            for (index, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
                if lo > hi {
                    return Err(ModelError::InvalidBounds {
                        index,
                        lower: lo,
                        upper: hi,
                    });
                }
            }
        }
        Ok(())
    }

    /// Clamp a vector into the set (identity for `Free`).
    pub fn project(&self, u: &mut [f64]) {
        if let ControlSet::Box { lower, upper } = self {
            for ((v, &lo), &hi) in u.iter_mut().zip(lower).zip(upper) {
                *v = v.clamp(lo, hi);
            }
        }
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got != expected {
        Err(ModelError::Length {
            what: what.to_owned(),
            expected,
            got,
        })
    } else {
        Ok(())
    }
}

pub(crate) fn indexed_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

pub(crate) fn check_vocabulary(
    expr: &Expr,
    context: &str,
    allowed: &BTreeSet<String>,
) -> Result<(), ModelError> {
    for var in expr.free_vars() {
        if !allowed.contains(&var) {
            return Err(ModelError::UnknownVariable {
                var,
                context: context.to_owned(),
                allowed: allowed
                    .iter()
                    .map(String::as_str)
                    .collect::<Vec<_>>()
                    .join(", "),
            });
        }
    }
    Ok(())
}

pub(crate) fn stage_vocabulary(state_dim: usize, control_dim: usize) -> BTreeSet<String> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    vocab.insert("k".to_owned());
    vocab.extend(indexed_names("x", state_dim));
    vocab.extend(indexed_names("u", control_dim));
    vocab
}

/// A fixed-endpoint discrete-time optimal control problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub horizon: Horizon,
    pub state_dim: usize,
    pub control_dim: usize,
    pub lagrangian: Expr,
    pub dynamics: Vec<Expr>,
    pub control_set: ControlSet,
    pub x_start: Vec<f64>,
    /// Terminal state, componentwise optional. The extremal solver requires
    /// every component fixed; the model keeps the general shape.
    pub x_end: Vec<Option<f64>>,
    state_names: Vec<String>,
    control_names: Vec<String>,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: Horizon,
        state_dim: usize,
        control_dim: usize,
        lagrangian: Expr,
        dynamics: Vec<Expr>,
        control_set: ControlSet,
        x_start: Vec<f64>,
        x_end: Vec<Option<f64>>,
    ) -> Result<Self, ModelError> {
        if state_dim == 0 {
            return Err(ModelError::Length {
                what: "state dimension".into(),
                expected: 1,
                got: 0,
            });
        }
        if control_dim == 0 {
            return Err(ModelError::Length {
                what: "control dimension".into(),
                expected: 1,
                got: 0,
            });
        }
        check_len("dynamics", dynamics.len(), state_dim)?;
        check_len("x_start", x_start.len(), state_dim)?;
        check_len("x_end", x_end.len(), state_dim)?;
        control_set.validate(control_dim)?;
        let vocab = stage_vocabulary(state_dim, control_dim);
        check_vocabulary(&lagrangian, "the Lagrangian", &vocab)?;
        for (i, phi) in dynamics.iter().enumerate() {
            check_vocabulary(phi, &format!("dynamics component {}", i + 1), &vocab)?;
        }
        Ok(ProblemSpec {
            horizon,
            state_dim,
            control_dim,
            lagrangian,
            dynamics,
            control_set,
            x_start,
            x_end,
            state_names: indexed_names("x", state_dim),
            control_names: indexed_names("u", control_dim),
        })
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn control_names(&self) -> &[String] {
        &self.control_names
    }

    /// True when every terminal component is pinned.
    pub fn fully_fixed_end(&self) -> bool {
        self.x_end.iter().all(Option::is_some)
    }

    /// Environment binding `k`, the states, and the controls.
    pub(crate) fn stage_env<T: Scalar>(&self, k: i64, x: &[T], u: &[T]) -> Env<T> {
        let mut env = Env::with_capacity(1 + x.len() + u.len());
        env.bind("k", T::from_f64(k as f64));
        for (name, &v) in self.state_names.iter().zip(x) {
            env.bind(name.clone(), v);
        }
        for (name, &v) in self.control_names.iter().zip(u) {
            env.bind(name.clone(), v);
        }
        env
    }

    pub(crate) fn eval_lagrangian<T: Scalar>(
        &self,
        k: i64,
        x: &[T],
        u: &[T],
    ) -> Result<T, ModelError> {
        self.lagrangian
            .eval(&self.stage_env(k, x, u))
            .map_err(|source| ModelError::StageEval {
                what: "the Lagrangian".into(),
                k,
                source,
            })
    }

    pub(crate) fn eval_dynamics<T: Scalar>(
        &self,
        k: i64,
        x: &[T],
        u: &[T],
    ) -> Result<Vec<T>, ModelError> {
        let env = self.stage_env(k, x, u);
        self.dynamics
            .iter()
            .enumerate()
            .map(|(i, phi)| {
                phi.eval(&env).map_err(|source| ModelError::StageEval {
                    what: format!("dynamics component {}", i + 1),
                    k,
                    source,
                })
            })
            .collect()
    }
}

/// State and control sequences over one horizon. States are indexed
/// `first ..= first+N`, controls `first ..= first+N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub first: i64,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(first: i64, x: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if u.is_empty() {
            return Err(ModelError::EmptyHorizon);
        }
        check_len("state sequence", x.len(), u.len() + 1)?;
        Ok(Trajectory { first, x, u })
    }

    pub fn periods(&self) -> usize {
        self.u.len()
    }

    pub fn last(&self) -> i64 {
        self.first + self.periods() as i64
    }

    pub fn state(&self, k: i64) -> &[f64] {
        &self.x[usize::try_from(k - self.first).expect("state index below horizon")]
    }

    pub fn control(&self, k: i64) -> &[f64] {
        &self.u[usize::try_from(k - self.first).expect("control index below horizon")]
    }

    fn check_shape(&self, p: &ProblemSpec) -> Result<(), ModelError> {
        if self.first != p.horizon.first {
            return Err(ModelError::WrongStart {
                expected: p.horizon.first,
                got: self.first,
            });
        }
        check_len("trajectory states", self.x.len(), p.horizon.periods + 1)?;
        for xs in &self.x {
            check_len("state vector", xs.len(), p.state_dim)?;
        }
        for us in &self.u {
            check_len("control vector", us.len(), p.control_dim)?;
        }
        Ok(())
    }
}

/// Extremal data: a trajectory plus the abnormality multiplier and the
/// co-state sequence `psi(M+1) ..= psi(M+N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremal {
    pub trajectory: Trajectory,
    /// Constant multiplier on the stage cost, `psi0 <= 0`. Zero marks an
    /// abnormal extremal.
    pub psi0: f64,
    pub psi: Vec<Vec<f64>>,
}

impl Extremal {
    pub fn new(trajectory: Trajectory, psi0: f64, psi: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        check_len("co-state sequence", psi.len(), trajectory.periods())?;
        if psi0 > 0.0 || psi0.is_nan() {
            return Err(ModelError::PositivePsi0(psi0));
        }
        let e = Extremal {
            trajectory,
            psi0,
            psi,
        };
        if e.multiplier_magnitude() == 0.0 {
            return Err(ModelError::TrivialMultipliers);
        }
        Ok(e)
    }

    /// Co-state at `k`, valid for `M+1 ..= M+N`.
    pub fn costate(&self, k: i64) -> &[f64] {
        let idx =
            usize::try_from(k - self.trajectory.first - 1).expect("co-state index below horizon");
        &self.psi[idx]
    }

    /// `|psi0| + max_k ||psi(k)||_inf`: must be positive for a genuine
    /// extremal (the multiplier pair may not vanish identically).
    pub fn multiplier_magnitude(&self) -> f64 {
        let psi_max = self
            .psi
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        self.psi0.abs() + psi_max
    }

    pub fn is_abnormal(&self) -> bool {
        self.psi0 == 0.0
    }
}

/// A rho-parameter transformation family: state transformation `X`, control
/// deformation `u(k, s)`, and difference gauge term `Phi`, all expressions
/// over `(k, x*, u*, s*)`. At `s = 0` the family must reduce to the
/// identity, which is spot-checked exactly on random sample points at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryFamily {
    pub param_count: usize,
    pub x_map: Vec<Expr>,
    pub u_map: Vec<Expr>,
    pub gauge: Expr,
    /// Validity radius of the parameter ball; metadata only.
    pub epsilon: Option<f64>,
}

impl SymmetryFamily {
    pub fn new(
        param_count: usize,
        x_map: Vec<Expr>,
        u_map: Vec<Expr>,
        gauge: Expr,
        epsilon: Option<f64>,
    ) -> Result<Self, ModelError> {
        if param_count == 0 {
            return Err(ModelError::NoParameters);
        }
        if let Some(eps) = epsilon {
            if eps.is_nan() || eps <= 0.0 {
                return Err(ModelError::InvalidEpsilon(eps));
            }
        }
        let state_dim = x_map.len();
        let control_dim = u_map.len();
        if state_dim == 0 || control_dim == 0 {
            return Err(ModelError::Length {
                what: "transformation maps".into(),
                expected: 1,
                got: 0,
            });
        }
        let mut vocab = stage_vocabulary(state_dim, control_dim);
        vocab.extend(indexed_names("s", param_count));
        for (i, e) in x_map.iter().enumerate() {
            check_vocabulary(e, &format!("state transformation X{}", i + 1), &vocab)?;
        }
        for (i, e) in u_map.iter().enumerate() {
            check_vocabulary(e, &format!("control deformation u{}", i + 1), &vocab)?;
        }
        check_vocabulary(&gauge, "the gauge term", &vocab)?;

        let family = SymmetryFamily {
            param_count,
            x_map,
            u_map,
            gauge,
            epsilon,
        };
        family.check_identity_at_zero()?;
        Ok(family)
    }

    pub fn state_dim(&self) -> usize {
        self.x_map.len()
    }

    pub fn control_dim(&self) -> usize {
        self.u_map.len()
    }

    /// Environment over `(k, x, u, s)`.
    pub(crate) fn env_at<T: Scalar>(&self, k: i64, x: &[T], u: &[T], s: &[T]) -> Env<T> {
        let mut env = Env::with_capacity(1 + x.len() + u.len() + s.len());
        env.bind("k", T::from_f64(k as f64));
        for (i, &v) in x.iter().enumerate() {
            env.bind(format!("x{}", i + 1), v);
        }
        for (i, &v) in u.iter().enumerate() {
            env.bind(format!("u{}", i + 1), v);
        }
        for (i, &v) in s.iter().enumerate() {
            env.bind(format!("s{}", i + 1), v);
        }
        env
    }

    /// Whether the state transformation or the gauge reads any control
    /// variable. Controls are undefined at the final state index, so this
    /// decides whether the conserved quantity extends to `k = M+N`.
    pub fn references_controls(&self) -> bool {
        let control_names: BTreeSet<String> =
            indexed_names("u", self.control_dim()).into_iter().collect();
        self.x_map
            .iter()
            .chain(std::iter::once(&self.gauge))
            .any(|e| e.free_vars().iter().any(|v| control_names.contains(v)))
    }

    /// The identity requirement is structural, so exact equality is
    /// demanded at every sample point.
    fn check_identity_at_zero(&self) -> Result<(), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(IDENTITY_CHECK_SEED);
        let n = self.state_dim();
        let r = self.control_dim();
        let zeros = vec![0.0f64; self.param_count];
        for _ in 0..IDENTITY_CHECK_POINTS {
            let k = rng.random_range(-4..8);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u: Vec<f64> = (0..r).map(|_| rng.random_range(-2.0..2.0)).collect();
            let env = self.env_at(k, &x, &u, &zeros);
            for (i, e) in self.x_map.iter().enumerate() {
                let v = e.eval(&env).map_err(|source| ModelError::StageEval {
                    what: format!("X{}", i + 1),
                    k,
                    source,
                })?;
                if v != x[i] {
                    return Err(ModelError::NotIdentityAtZero {
                        what: format!("state transformation X{}", i + 1),
                        component: i + 1,
                        deviation: (v - x[i]).abs(),
                    });
                }
            }
            for (j, e) in self.u_map.iter().enumerate() {
                let v = e.eval(&env).map_err(|source| ModelError::StageEval {
                    what: format!("u{}(k, s)", j + 1),
                    k,
                    source,
                })?;
                if v != u[j] {
                    return Err(ModelError::NotIdentityAtZero {
                        what: format!("control deformation u{}", j + 1),
                        component: j + 1,
                        deviation: (v - u[j]).abs(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Total cost `sum_k L(k, x(k), u(k))` over the horizon.
pub fn cost(p: &ProblemSpec, t: &Trajectory) -> Result<f64, ModelError> {
    t.check_shape(p)?;
    let mut total = 0.0;
    for k in p.horizon.stages() {
        total += p.eval_lagrangian(k, t.state(k), t.control(k))?;
    }
    Ok(total)
}

/// Forward recursion of the dynamics from `x_start` under `controls`.
/// The terminal boundary condition is not enforced here.
pub fn rollout(
    p: &ProblemSpec,
    controls: &[Vec<f64>],
    x_start: &[f64],
) -> Result<Trajectory, ModelError> {
    check_len("control sequence", controls.len(), p.horizon.periods)?;
    check_len("start state", x_start.len(), p.state_dim)?;
    for u in controls {
        check_len("control vector", u.len(), p.control_dim)?;
    }
    let mut x = Vec::with_capacity(controls.len() + 1);
    x.push(x_start.to_vec());
    for (i, k) in p.horizon.stages().enumerate() {
        let next = p.eval_dynamics(k, &x[i], &controls[i])?;
        x.push(next);
    }
    Trajectory::new(p.horizon.first, x, controls.to_vec())
}

/// Largest violation of the recurrence `x(k+1) = phi(k, x(k), u(k))` in the
/// infinity norm, boundary data ignored.
pub fn dynamics_gap(p: &ProblemSpec, t: &Trajectory) -> Result<f64, ModelError> {
    t.check_shape(p)?;
    let mut worst = 0.0f64;
    for k in p.horizon.stages() {
        let predicted = p.eval_dynamics(k, t.state(k), t.control(k))?;
        let actual = t.state(k + 1);
        for (a, b) in predicted.iter().zip(actual) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// [`dynamics_gap`] plus mismatch of the boundary data (free terminal
/// components are skipped).
pub fn admissibility_residual(p: &ProblemSpec, t: &Trajectory) -> Result<f64, ModelError> {
    let mut worst = dynamics_gap(p, t)?;
    for (a, b) in t.state(p.horizon.first).iter().zip(&p.x_start) {
        worst = worst.max((a - b).abs());
    }
    for (a, b) in t.state(p.horizon.last()).iter().zip(&p.x_end) {
        if let Some(b) = b {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Deterministic sample of dynamics-consistent trajectories: uniform random
/// controls in `[-1, 1]^r` (intersected with the control box) rolled out
/// from starts perturbed by `[-1, 1]^n` around `x_start`.
pub fn sample_trajectories(
    p: &ProblemSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let start: Vec<f64> = p
            .x_start
            .iter()
            .map(|&v| v + rng.random_range(-1.0..1.0))
            .collect();
        let controls: Vec<Vec<f64>> = (0..p.horizon.periods)
            .map(|_| {
                (0..p.control_dim)
                    .map(|dim| {
                        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
                        if let ControlSet::Box { lower, upper } = &p.control_set {
                            lo = lo.max(lower[dim]);
                            hi = hi.min(upper[dim]);
                            if lo > hi {
                                lo = lower[dim];
                                hi = upper[dim].min(lower[dim] + 2.0);
                            }
                        }
                        rng.random_range(lo..=hi)
                    })
                    .collect()
            })
            .collect();
        out.push(rollout(p, &controls, &start)?);
    }
    Ok(out)
}
