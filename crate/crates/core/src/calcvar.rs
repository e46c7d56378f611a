//! Discrete calculus of variations, first order and higher order.
//!
//! The first-order problem extremizes `sum_k L(k, x(k), x(k+1))` with fixed
//! endpoint states; written with `r = n`, free controls, and dynamics
//! `phi = u` it is an ordinary optimal control problem, and its extremals
//! are exactly the solutions of the discrete Euler–Lagrange equation
//!
//! ```text
//! dL/dx(k+1, x(k+1), x(k+2)) + dL/dxp(k, x(k), x(k+1)) = 0
//! ```
//!
//! where `xp` names the second state slot. An order-`m` stencil Lagrangian
//! `L(k, x(k), ..., x(k+m))` reduces the same way after augmenting the
//! state with the `m`-window and taking `u(k) = x(k+m)`; its extremals obey
//! the order-`2m` Euler–Poisson equation, and the conserved quantity of a
//! quasi-invariant stencil Lagrangian is the double-sum expression in
//! [`ho_noether_integral`]. No abnormal extremals exist for either class:
//! `psi0 = 0` forces the whole co-state sequence to vanish.
//!
//! Lagrangians here use the vocabulary `(k, x1..xn, xp1..xpn)` for first
//! order, and `(k, x0_1..x0_n, ..., xm_1..xm_n)` for order `m`.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diff::{self, Dual, Scalar};
use crate::expr::{Env, Expr};
use crate::model::{check_vocabulary, indexed_names, ControlSet, Horizon, ModelError, ProblemSpec};

const IDENTITY_CHECK_SEED: u64 = 0x1DE8;
const IDENTITY_CHECK_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalcVarError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("k = {k} outside the valid range {lo}..={hi}")]
    IndexOutOfRange { k: i64, lo: i64, hi: i64 },
    #[error("state sequence has {got} entries, expected {expected}")]
    SequenceLength { expected: usize, got: usize },
    #[error("parameter index {index} out of range for a {count}-parameter family")]
    BadParameter { index: usize, count: usize },
}

/// First-order discrete variational problem over
/// `L(k, x(k), x(k+1))`, endpoints fixed.
#[derive(Debug, Clone)]
pub struct CVProblem {
    pub horizon: Horizon,
    pub state_dim: usize,
    /// Expression over `(k, x1..xn, xp1..xpn)`; `xp` is the next state.
    pub lagrangian: Expr,
    pub x_start: Vec<f64>,
    pub x_end: Vec<f64>,
}

impl CVProblem {
    pub fn new(
        horizon: Horizon,
        state_dim: usize,
        lagrangian: Expr,
        x_start: Vec<f64>,
        x_end: Vec<f64>,
    ) -> Result<Self, CalcVarError> {
        let vocab = cv_vocabulary(state_dim, 0);
        check_vocabulary(&lagrangian, "a first-order variational Lagrangian", &vocab)?;
        if x_start.len() != state_dim || x_end.len() != state_dim {
            return Err(CalcVarError::Model(ModelError::Length {
                what: "boundary state".into(),
                expected: state_dim,
                got: x_start.len().min(x_end.len()),
            }));
        }
        Ok(CVProblem {
            horizon,
            state_dim,
            lagrangian,
            x_start,
            x_end,
        })
    }

    fn env<T: Scalar>(&self, k: i64, x: &[T], xp: &[T]) -> Env<T> {
        let mut env = Env::with_capacity(1 + 2 * self.state_dim);
        env.bind("k", T::from_f64(k as f64));
        for (i, &v) in x.iter().enumerate() {
            env.bind(format!("x{}", i + 1), v);
        }
        for (i, &v) in xp.iter().enumerate() {
            env.bind(format!("xp{}", i + 1), v);
        }
        env
    }

    fn eval<T: Scalar>(&self, k: i64, x: &[T], xp: &[T]) -> Result<T, ModelError> {
        self.lagrangian
            .eval(&self.env(k, x, xp))
            .map_err(|source| ModelError::StageEval {
                what: "the variational Lagrangian".into(),
                k,
                source,
            })
    }

    /// Gradient in the current-state slot.
    fn grad_x<T: Scalar>(&self, k: i64, x: &[T], xp: &[T]) -> Result<Vec<T>, ModelError> {
        let xpd: Vec<Dual<T>> = xp.iter().map(|&v| Dual::constant(v)).collect();
        diff::gradient(|xd| self.eval(k, xd, &xpd), x)
    }

    /// Gradient in the next-state slot (the "control" slot of the
    /// reduction).
    fn grad_xp<T: Scalar>(&self, k: i64, x: &[T], xp: &[T]) -> Result<Vec<T>, ModelError> {
        let xd: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
        diff::gradient(|xpd| self.eval(k, &xd, xpd), xp)
    }

    fn check_sequence(&self, states: &[Vec<f64>]) -> Result<(), CalcVarError> {
        if states.len() != self.horizon.periods + 1 {
            return Err(CalcVarError::SequenceLength {
                expected: self.horizon.periods + 1,
                got: states.len(),
            });
        }
        Ok(())
    }
}

fn cv_vocabulary(state_dim: usize, params: usize) -> BTreeSet<String> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    vocab.insert("k".to_owned());
    vocab.extend(indexed_names("x", state_dim));
    vocab.extend(indexed_names("xp", state_dim));
    vocab.extend(indexed_names("s", params));
    vocab
}

/// Rewrite the first-order problem as an optimal control problem:
/// `r = n`, free controls, `phi = u`, and `xp` renamed to `u` inside the
/// Lagrangian.
pub fn cv_to_oc(cv: &CVProblem) -> Result<ProblemSpec, CalcVarError> {
    let n = cv.state_dim;
    let lagrangian = cv
        .lagrangian
        .rename_vars(&|name| name.strip_prefix("xp").map(|idx| format!("u{idx}")));
    let dynamics: Vec<Expr> = indexed_names("u", n).into_iter().map(Expr::Var).collect();
    Ok(ProblemSpec::new(
        cv.horizon,
        n,
        n,
        lagrangian,
        dynamics,
        ControlSet::Free,
        cv.x_start.clone(),
        cv.x_end.iter().map(|&v| Some(v)).collect(),
    )?)
}

/// Cost of a state sequence under the first-order Lagrangian.
pub fn cv_cost(cv: &CVProblem, states: &[Vec<f64>]) -> Result<f64, CalcVarError> {
    cv.check_sequence(states)?;
    let mut total = 0.0;
    for (i, k) in cv.horizon.stages().enumerate() {
        total += cv.eval(k, &states[i], &states[i + 1])?;
    }
    Ok(total)
}

/// Euler–Lagrange residual
/// `dL/dx(k+1, x(k+1), x(k+2)) + dL/dxp(k, x(k), x(k+1))` at stage `k`,
/// valid for `k = M ..= M+N-2`. `states[0]` is `x(M)`.
pub fn el_residual(cv: &CVProblem, states: &[Vec<f64>], k: i64) -> Result<Vec<f64>, CalcVarError> {
    cv.check_sequence(states)?;
    let (lo, hi) = (cv.horizon.first, cv.horizon.last() - 2);
    if k < lo || k > hi {
        return Err(CalcVarError::IndexOutOfRange { k, lo, hi });
    }
    let at = |k: i64| &states[(k - cv.horizon.first) as usize];
    let a = cv.grad_x(k + 1, at(k + 1).as_slice(), at(k + 2))?;
    let b = cv.grad_xp(k, at(k).as_slice(), at(k + 1))?;
    Ok(a.into_iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Transformation family for first-order variational problems: `X` and the
/// gauge are expressions over `(k, x*, xp*, s*)`, and the induced
/// deformation of the next state is `X` read at `k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSymmetryFamily {
    pub param_count: usize,
    pub x_map: Vec<Expr>,
    pub gauge: Expr,
}

impl CvSymmetryFamily {
    pub fn new(param_count: usize, x_map: Vec<Expr>, gauge: Expr) -> Result<Self, CalcVarError> {
        if param_count == 0 {
            return Err(CalcVarError::Model(ModelError::NoParameters));
        }
        let n = x_map.len();
        let vocab = cv_vocabulary(n, param_count);
        for (i, e) in x_map.iter().enumerate() {
            check_vocabulary(e, &format!("state transformation X{}", i + 1), &vocab)?;
        }
        check_vocabulary(&gauge, "the gauge term", &vocab)?;
        let fam = CvSymmetryFamily {
            param_count,
            x_map,
            gauge,
        };
        fam.check_identity_at_zero()?;
        Ok(fam)
    }

    fn env<T: Scalar>(&self, k: i64, x: &[T], xp: &[T], s: &[T]) -> Env<T> {
        let mut env = Env::with_capacity(1 + x.len() + xp.len() + s.len());
        env.bind("k", T::from_f64(k as f64));
        for (i, &v) in x.iter().enumerate() {
            env.bind(format!("x{}", i + 1), v);
        }
        for (i, &v) in xp.iter().enumerate() {
            env.bind(format!("xp{}", i + 1), v);
        }
        for (i, &v) in s.iter().enumerate() {
            env.bind(format!("s{}", i + 1), v);
        }
        env
    }

    fn check_identity_at_zero(&self) -> Result<(), CalcVarError> {
        let mut rng = ChaCha8Rng::seed_from_u64(IDENTITY_CHECK_SEED);
        let n = self.x_map.len();
        let zeros = vec![0.0f64; self.param_count];
        for _ in 0..IDENTITY_CHECK_POINTS {
            let k = rng.random_range(-4..8);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let xp: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let env = self.env(k, &x, &xp, &zeros);
            for (i, e) in self.x_map.iter().enumerate() {
                let v = e.eval(&env).map_err(|source| ModelError::StageEval {
                    what: format!("X{}", i + 1),
                    k,
                    source,
                })?;
                if v != x[i] {
                    return Err(CalcVarError::Model(ModelError::NotIdentityAtZero {
                        what: format!("state transformation X{}", i + 1),
                        component: i + 1,
                        deviation: (v - x[i]).abs(),
                    }));
                }
            }
        }
        Ok(())
    }
}

/// Conserved quantity of a quasi-invariant first-order Lagrangian,
/// `dL/dxp(k-1, x(k-1), x(k)) · dX/ds_i - dPhi/ds_i` at `s = 0` with both
/// derivatives taken at `(k, x(k), x(k+1))`, constant along
/// Euler–Lagrange solutions. Valid for `k = M+1 ..= M+N-1`; no multipliers
/// appear because first-order problems admit only normal extremals.
pub fn cv_noether_integral(
    cv: &CVProblem,
    fam: &CvSymmetryFamily,
    states: &[Vec<f64>],
    k: i64,
    param: usize,
) -> Result<f64, CalcVarError> {
    cv.check_sequence(states)?;
    if param >= fam.param_count {
        return Err(CalcVarError::BadParameter {
            index: param,
            count: fam.param_count,
        });
    }
    let (lo, hi) = (cv.horizon.first + 1, cv.horizon.last() - 1);
    if k < lo || k > hi {
        return Err(CalcVarError::IndexOutOfRange { k, lo, hi });
    }
    let at = |k: i64| states[(k - cv.horizon.first) as usize].as_slice();
    let slope = cv.grad_xp(k - 1, at(k - 1), at(k))?;

    let mut s = vec![Dual::constant(0.0); fam.param_count];
    s[param].im = 1.0;
    let lift = |v: &[f64]| -> Vec<Dual<f64>> { v.iter().map(|&a| Dual::constant(a)).collect() };
    let env = fam.env(k, &lift(at(k)), &lift(at(k + 1)), &s);
    let mut total = 0.0;
    for (j, e) in fam.x_map.iter().enumerate() {
        let xs = e.eval(&env).map_err(|source| ModelError::StageEval {
            what: format!("state transformation X{}", j + 1),
            k,
            source,
        })?;
        total += slope[j] * xs.im;
    }
    let gauge = fam
        .gauge
        .eval(&env)
        .map_err(|source| ModelError::StageEval {
            what: "gauge term".into(),
            k,
            source,
        })?;
    Ok(total - gauge.im)
}

/// `d/ds_i` at `s = 0` of the first-order invariance identity residual
/// `L(k, X(k,·,s), X(k+1,·,s)) - L(k, x(k), x(k+1)) - ΔΦ(k,·,s)`.
/// Valid for `k = M ..= M+N-2`.
pub fn cv_lagrangian_residual_derivative(
    cv: &CVProblem,
    fam: &CvSymmetryFamily,
    states: &[Vec<f64>],
    k: i64,
    param: usize,
) -> Result<f64, CalcVarError> {
    cv.check_sequence(states)?;
    if param >= fam.param_count {
        return Err(CalcVarError::BadParameter {
            index: param,
            count: fam.param_count,
        });
    }
    let (lo, hi) = (cv.horizon.first, cv.horizon.last() - 2);
    if k < lo || k > hi {
        return Err(CalcVarError::IndexOutOfRange { k, lo, hi });
    }
    let at = |k: i64| states[(k - cv.horizon.first) as usize].as_slice();
    let mut s = vec![Dual::constant(0.0); fam.param_count];
    s[param].im = 1.0;
    let lift = |v: &[f64]| -> Vec<Dual<f64>> { v.iter().map(|&a| Dual::constant(a)).collect() };

    let eval_x = |env: &Env<Dual<f64>>, k: i64| -> Result<Vec<Dual<f64>>, CalcVarError> {
        fam.x_map
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.eval(env).map_err(|source| {
                    CalcVarError::Model(ModelError::StageEval {
                        what: format!("state transformation X{}", i + 1),
                        k,
                        source,
                    })
                })
            })
            .collect()
    };

    let env_k = fam.env(k, &lift(at(k)), &lift(at(k + 1)), &s);
    let env_k1 = fam.env(k + 1, &lift(at(k + 1)), &lift(at(k + 2)), &s);
    let x_def = eval_x(&env_k, k)?;
    let xp_def = eval_x(&env_k1, k + 1)?;
    let l_def = cv.eval(k, &x_def, &xp_def)?;
    let gauge_k = fam
        .gauge
        .eval(&env_k)
        .map_err(|source| ModelError::StageEval {
            what: "gauge term".into(),
            k,
            source,
        })?;
    let gauge_k1 = fam
        .gauge
        .eval(&env_k1)
        .map_err(|source| ModelError::StageEval {
            what: "gauge term".into(),
            k: k + 1,
            source,
        })?;
    Ok(l_def.im - (gauge_k1.im - gauge_k.im))
}

/// Order-`m` stencil variational problem over
/// `L(k, x(k), ..., x(k+m))` with the `m` leading and trailing windows
/// fixed. `horizon.periods` counts reduction stages; the underlying state
/// sequence spans `M ..= M+N+m-1`.
#[derive(Debug, Clone)]
pub struct HOProblem {
    pub horizon: Horizon,
    /// Stencil order `m >= 1`.
    pub order: usize,
    pub state_dim: usize,
    /// Expression over `(k, x0_1..x0_n, ..., xm_1..xm_n)`, `xj` meaning
    /// `x(k+j)`.
    pub lagrangian: Expr,
    /// `x(M) .. x(M+m-1)`.
    pub x_init: Vec<Vec<f64>>,
    /// `x(M+N) .. x(M+N+m-1)`.
    pub x_final: Vec<Vec<f64>>,
}

fn ho_vocabulary(state_dim: usize, order: usize, params: usize) -> BTreeSet<String> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    vocab.insert("k".to_owned());
    for j in 0..=order {
        for i in 1..=state_dim {
            vocab.insert(format!("x{j}_{i}"));
        }
    }
    vocab.extend(indexed_names("s", params));
    vocab
}

impl HOProblem {
    pub fn new(
        horizon: Horizon,
        order: usize,
        state_dim: usize,
        lagrangian: Expr,
        x_init: Vec<Vec<f64>>,
        x_final: Vec<Vec<f64>>,
    ) -> Result<Self, CalcVarError> {
        if order == 0 {
            return Err(CalcVarError::Model(ModelError::Length {
                what: "stencil order".into(),
                expected: 1,
                got: 0,
            }));
        }
        let vocab = ho_vocabulary(state_dim, order, 0);
        check_vocabulary(&lagrangian, "a stencil Lagrangian", &vocab)?;
        for (what, block) in [("initial window", &x_init), ("final window", &x_final)] {
            if block.len() != order {
                return Err(CalcVarError::Model(ModelError::Length {
                    what: what.into(),
                    expected: order,
                    got: block.len(),
                }));
            }
            for row in block.iter() {
                if row.len() != state_dim {
                    return Err(CalcVarError::Model(ModelError::Length {
                        what: format!("{what} row"),
                        expected: state_dim,
                        got: row.len(),
                    }));
                }
            }
        }
        Ok(HOProblem {
            horizon,
            order,
            state_dim,
            lagrangian,
            x_init,
            x_final,
        })
    }

    /// Length of the underlying state sequence, `N + m`.
    pub fn sequence_len(&self) -> usize {
        self.horizon.periods + self.order
    }

    fn env<T: Scalar>(&self, k: i64, window: &[Vec<T>], s: &[T]) -> Env<T> {
        let n = self.state_dim;
        let mut env = Env::with_capacity(1 + (self.order + 1) * n + s.len());
        env.bind("k", T::from_f64(k as f64));
        for (j, block) in window.iter().enumerate() {
            for (i, &v) in block.iter().enumerate() {
                env.bind(format!("x{j}_{}", i + 1), v);
            }
        }
        for (i, &v) in s.iter().enumerate() {
            env.bind(format!("s{}", i + 1), v);
        }
        env
    }

    fn eval<T: Scalar>(&self, k: i64, window: &[Vec<T>]) -> Result<T, ModelError> {
        self.lagrangian
            .eval(&self.env(k, window, &[]))
            .map_err(|source| ModelError::StageEval {
                what: "the stencil Lagrangian".into(),
                k,
                source,
            })
    }

    /// Gradient of `L` in stencil slot `block` at `(k, window)`.
    fn grad_block<T: Scalar>(
        &self,
        k: i64,
        window: &[Vec<T>],
        block: usize,
    ) -> Result<Vec<T>, ModelError> {
        let lifted: Vec<Vec<Dual<T>>> = window
            .iter()
            .map(|b| b.iter().map(|&v| Dual::constant(v)).collect())
            .collect();
        diff::gradient(
            |xd: &[Dual<T>]| {
                let mut w = lifted.clone();
                w[block] = xd.to_vec();
                self.eval(k, &w)
            },
            &window[block],
        )
    }

    fn check_sequence(&self, states: &[Vec<f64>]) -> Result<(), CalcVarError> {
        if states.len() != self.sequence_len() {
            return Err(CalcVarError::SequenceLength {
                expected: self.sequence_len(),
                got: states.len(),
            });
        }
        Ok(())
    }

    fn window(&self, states: &[Vec<f64>], k: i64) -> Vec<Vec<f64>> {
        let base = (k - self.horizon.first) as usize;
        states[base..=base + self.order].to_vec()
    }
}

/// Rewrite the order-`m` problem as an optimal control problem: the
/// augmented state stacks `(x(k), ..., x(k+m-1))`, the control is
/// `x(k+m)`, and the dynamics shift the window.
pub fn ho_to_oc(ho: &HOProblem) -> Result<ProblemSpec, CalcVarError> {
    let (n, m) = (ho.state_dim, ho.order);
    let lagrangian = ho.lagrangian.rename_vars(&|name| {
        let (j, i) = parse_stencil_var(name)?;
        Some(if j == m {
            format!("u{i}")
        } else {
            format!("x{}", j * n + i)
        })
    });
    let mut dynamics = Vec::with_capacity(n * m);
    for j in 0..m {
        for i in 1..=n {
            dynamics.push(Expr::Var(if j + 1 == m {
                format!("u{i}")
            } else {
                format!("x{}", (j + 1) * n + i)
            }));
        }
    }
    let x_start: Vec<f64> = ho.x_init.iter().flatten().copied().collect();
    let x_end: Vec<Option<f64>> = ho.x_final.iter().flatten().map(|&v| Some(v)).collect();
    Ok(ProblemSpec::new(
        ho.horizon,
        n * m,
        n,
        lagrangian,
        dynamics,
        ControlSet::Free,
        x_start,
        x_end,
    )?)
}

fn parse_stencil_var(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix('x')?;
    let (j, i) = rest.split_once('_')?;
    Some((j.parse().ok()?, i.parse().ok()?))
}

/// Recover the flat state sequence `x(M) ..= x(M+N+m-1)` from a trajectory
/// of the augmented reduction.
pub fn augmented_to_sequence(ho: &HOProblem, t: &crate::model::Trajectory) -> Vec<Vec<f64>> {
    let (n, m) = (ho.state_dim, ho.order);
    let mut out: Vec<Vec<f64>> = t.x.iter().map(|aug| aug[..n].to_vec()).collect();
    let last = t.x.last().expect("trajectory has states");
    for j in 1..m {
        out.push(last[j * n..(j + 1) * n].to_vec());
    }
    out
}

/// Cost of a state sequence under the stencil Lagrangian.
pub fn ho_cost(ho: &HOProblem, states: &[Vec<f64>]) -> Result<f64, CalcVarError> {
    ho.check_sequence(states)?;
    let mut total = 0.0;
    for k in ho.horizon.stages() {
        total += ho.eval(k, &ho.window(states, k))?;
    }
    Ok(total)
}

/// Euler–Poisson residual of order `2m`:
/// `sum_{j=0}^{m} dL/dx^j (k+m-j, x(k+m-j), ..., x(k+2m-j))` at stage `k`.
/// Valid while the full stencil `x(k) ..= x(k+2m)` stays inside the
/// sequence, i.e. `k = M ..= M+N-m-1`. At `m = 1` this is exactly the
/// Euler–Lagrange residual.
pub fn euler_poisson_residual(
    ho: &HOProblem,
    states: &[Vec<f64>],
    k: i64,
) -> Result<Vec<f64>, CalcVarError> {
    ho.check_sequence(states)?;
    let m = ho.order as i64;
    let (lo, hi) = (ho.horizon.first, ho.horizon.last() - m - 1);
    if k < lo || k > hi {
        return Err(CalcVarError::IndexOutOfRange { k, lo, hi });
    }
    let mut total = vec![0.0f64; ho.state_dim];
    for j in 0..=ho.order {
        let shift = k + m - j as i64;
        let grad = ho.grad_block(shift, &ho.window(states, shift), j)?;
        for (acc, v) in total.iter_mut().zip(grad) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Transformation family for order-`m` problems: `X` (an `n`-vector
/// transformation of `x(k)`) and the gauge are expressions over
/// `(k, x0_*, ..., xm_*, s*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoSymmetryFamily {
    pub param_count: usize,
    pub order: usize,
    pub x_map: Vec<Expr>,
    pub gauge: Expr,
}

impl HoSymmetryFamily {
    pub fn new(
        param_count: usize,
        order: usize,
        x_map: Vec<Expr>,
        gauge: Expr,
    ) -> Result<Self, CalcVarError> {
        if param_count == 0 {
            return Err(CalcVarError::Model(ModelError::NoParameters));
        }
        let n = x_map.len();
        let vocab = ho_vocabulary(n, order, param_count);
        for (i, e) in x_map.iter().enumerate() {
            check_vocabulary(e, &format!("state transformation X{}", i + 1), &vocab)?;
        }
        check_vocabulary(&gauge, "the gauge term", &vocab)?;
        let fam = HoSymmetryFamily {
            param_count,
            order,
            x_map,
            gauge,
        };
        fam.check_identity_at_zero()?;
        Ok(fam)
    }

    fn env<T: Scalar>(&self, k: i64, window: &[Vec<T>], s: &[T]) -> Env<T> {
        let n = self.x_map.len();
        let mut env = Env::with_capacity(1 + (self.order + 1) * n + s.len());
        env.bind("k", T::from_f64(k as f64));
        for (j, block) in window.iter().enumerate() {
            for (i, &v) in block.iter().enumerate() {
                env.bind(format!("x{j}_{}", i + 1), v);
            }
        }
        for (i, &v) in s.iter().enumerate() {
            env.bind(format!("s{}", i + 1), v);
        }
        env
    }

    /// At `s = 0` the transformation must return `x(k)`, the `x0` block.
    fn check_identity_at_zero(&self) -> Result<(), CalcVarError> {
        let mut rng = ChaCha8Rng::seed_from_u64(IDENTITY_CHECK_SEED ^ 0xFF);
        let n = self.x_map.len();
        let zeros = vec![0.0f64; self.param_count];
        for _ in 0..IDENTITY_CHECK_POINTS {
            let k = rng.random_range(-4..8);
            let window: Vec<Vec<f64>> = (0..=self.order)
                .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let env = self.env(k, &window, &zeros);
            for (i, e) in self.x_map.iter().enumerate() {
                let v = e.eval(&env).map_err(|source| ModelError::StageEval {
                    what: format!("X{}", i + 1),
                    k,
                    source,
                })?;
                if v != window[0][i] {
                    return Err(CalcVarError::Model(ModelError::NotIdentityAtZero {
                        what: format!("state transformation X{}", i + 1),
                        component: i + 1,
                        deviation: (v - window[0][i]).abs(),
                    }));
                }
            }
        }
        Ok(())
    }
}

/// Conserved quantity of a quasi-invariant order-`m` stencil Lagrangian:
///
/// ```text
/// dPhi/ds_i|_{s=0}(k, x(k..k+m))
///   + sum_{j=0}^{m-1} sum_{l=0}^{j}
///       dL/dx^l(k+j-l, x(k+j-l .. k+j-l+m)) · dX/ds_i|_{s=0}(k+j, x(k+j .. k+j+m))
/// ```
///
/// constant along Euler–Poisson solutions. Valid while every referenced
/// window fits, i.e. `k = M ..= M+N-m`. At `m = 1` this collapses to the
/// first-order conserved quantity up to overall sign.
pub fn ho_noether_integral(
    ho: &HOProblem,
    fam: &HoSymmetryFamily,
    states: &[Vec<f64>],
    k: i64,
    param: usize,
) -> Result<f64, CalcVarError> {
    ho.check_sequence(states)?;
    if param >= fam.param_count {
        return Err(CalcVarError::BadParameter {
            index: param,
            count: fam.param_count,
        });
    }
    let m = ho.order as i64;
    let (lo, hi) = (ho.horizon.first, ho.horizon.last() - m);
    if k < lo || k > hi {
        return Err(CalcVarError::IndexOutOfRange { k, lo, hi });
    }

    let mut s = vec![Dual::constant(0.0); fam.param_count];
    s[param].im = 1.0;
    let lift_window = |k: i64| -> Vec<Vec<Dual<f64>>> {
        ho.window(states, k)
            .iter()
            .map(|b| b.iter().map(|&v| Dual::constant(v)).collect())
            .collect()
    };
    let x_deriv = |k: i64| -> Result<Vec<f64>, CalcVarError> {
        let env = fam.env(k, &lift_window(k), &s);
        fam.x_map
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.eval(&env).map(|d| d.im).map_err(|source| {
                    CalcVarError::Model(ModelError::StageEval {
                        what: format!("state transformation X{}", i + 1),
                        k,
                        source,
                    })
                })
            })
            .collect()
    };

    let env_k = fam.env(k, &lift_window(k), &s);
    let gauge = fam
        .gauge
        .eval(&env_k)
        .map_err(|source| ModelError::StageEval {
            what: "gauge term".into(),
            k,
            source,
        })?;
    let mut total = gauge.im;
    for j in 0..ho.order {
        let xj = x_deriv(k + j as i64)?;
        for l in 0..=j {
            let shift = k + (j - l) as i64;
            let grad = ho.grad_block(shift, &ho.window(states, shift), l)?;
            for (g, xd) in grad.iter().zip(&xj) {
                total += g * xd;
            }
        }
    }
    Ok(total)
}

/// `d/ds_i` at `s = 0` of the order-`m` invariance identity residual
/// `L(k, X(k,·,s), ..., X(k+m,·,s)) - L(k, x(k..k+m)) - ΔΦ(k,·,s)`.
/// Valid for `k = M ..= M+N-m-1` (the same stencil reach as the
/// Euler–Poisson residual).
pub fn ho_lagrangian_residual_derivative(
    ho: &HOProblem,
    fam: &HoSymmetryFamily,
    states: &[Vec<f64>],
    k: i64,
    param: usize,
) -> Result<f64, CalcVarError> {
    ho.check_sequence(states)?;
    if param >= fam.param_count {
        return Err(CalcVarError::BadParameter {
            index: param,
            count: fam.param_count,
        });
    }
    let m = ho.order as i64;
    let (lo, hi) = (ho.horizon.first, ho.horizon.last() - m - 1);
    if k < lo || k > hi {
        return Err(CalcVarError::IndexOutOfRange { k, lo, hi });
    }
    let mut s = vec![Dual::constant(0.0); fam.param_count];
    s[param].im = 1.0;
    let lift_window = |k: i64| -> Vec<Vec<Dual<f64>>> {
        ho.window(states, k)
            .iter()
            .map(|b| b.iter().map(|&v| Dual::constant(v)).collect())
            .collect()
    };
    let transformed = |k: i64| -> Result<Vec<Dual<f64>>, CalcVarError> {
        let env = fam.env(k, &lift_window(k), &s);
        fam.x_map
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.eval(&env).map_err(|source| {
                    CalcVarError::Model(ModelError::StageEval {
                        what: format!("state transformation X{}", i + 1),
                        k,
                        source,
                    })
                })
            })
            .collect()
    };

    let window_def: Vec<Vec<Dual<f64>>> = (0..=ho.order)
        .map(|t| transformed(k + t as i64))
        .collect::<Result<_, _>>()?;
    let l_def = ho.eval(k, &window_def)?;
    let gauge_k = fam
        .gauge
        .eval(&fam.env(k, &lift_window(k), &s))
        .map_err(|source| ModelError::StageEval {
            what: "gauge term".into(),
            k,
            source,
        })?;
    let gauge_k1 = fam
        .gauge
        .eval(&fam.env(k + 1, &lift_window(k + 1), &s))
        .map_err(|source| ModelError::StageEval {
            what: "gauge term".into(),
            k: k + 1,
            source,
        })?;
    Ok(l_def.im - (gauge_k1.im - gauge_k.im))
}

/// Aggregate invariance verdict for variational problems (there is no
/// dynamics identity to check; only the Lagrangian one).
#[derive(Debug, Clone, PartialEq)]
pub struct StencilInvarianceReport {
    pub tolerance: f64,
    /// Per-parameter max |d residual / ds_i| over all samples and stages.
    pub params: Vec<f64>,
    pub max_abs: f64,
    pub pass: bool,
    pub points_checked: usize,
}

/// Check quasi-invariance of a first-order Lagrangian over sampled state
/// sequences (any sequence qualifies; the identities are pointwise).
pub fn cv_check_quasi_invariance(
    cv: &CVProblem,
    fam: &CvSymmetryFamily,
    sequences: &[Vec<Vec<f64>>],
    tolerance: f64,
) -> Result<StencilInvarianceReport, CalcVarError> {
    let mut params = vec![0.0f64; fam.param_count];
    let mut points = 0usize;
    for states in sequences {
        for k in cv.horizon.first..=cv.horizon.last() - 2 {
            points += 1;
            for (i, slot) in params.iter_mut().enumerate() {
                let d = cv_lagrangian_residual_derivative(cv, fam, states, k, i)?;
                *slot = slot.max(d.abs());
            }
        }
    }
    let max_abs = params.iter().cloned().fold(0.0f64, f64::max);
    Ok(StencilInvarianceReport {
        tolerance,
        params,
        max_abs,
        pass: max_abs <= tolerance,
        points_checked: points,
    })
}

/// Check quasi-invariance of an order-`m` stencil Lagrangian over sampled
/// state sequences.
pub fn ho_check_quasi_invariance(
    ho: &HOProblem,
    fam: &HoSymmetryFamily,
    sequences: &[Vec<Vec<f64>>],
    tolerance: f64,
) -> Result<StencilInvarianceReport, CalcVarError> {
    let m = ho.order as i64;
    let mut params = vec![0.0f64; fam.param_count];
    let mut points = 0usize;
    for states in sequences {
        for k in ho.horizon.first..=ho.horizon.last() - m - 1 {
            points += 1;
            for (i, slot) in params.iter_mut().enumerate() {
                let d = ho_lagrangian_residual_derivative(ho, fam, states, k, i)?;
                *slot = slot.max(d.abs());
            }
        }
    }
    let max_abs = params.iter().cloned().fold(0.0f64, f64::max);
    Ok(StencilInvarianceReport {
        tolerance,
        params,
        max_abs,
        pass: max_abs <= tolerance,
        points_checked: points,
    })
}

/// Deterministic random state sequences for invariance falsification,
/// entries uniform in `[-2, 2]`.
pub fn sample_state_sequences(
    len: usize,
    dim: usize,
    count: usize,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..len)
                .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect()
}

/// View a first-order problem as an order-1 stencil problem
/// (`x -> x0`, `xp -> x1`).
pub fn cv_to_ho(cv: &CVProblem) -> Result<HOProblem, CalcVarError> {
    let lagrangian = cv.lagrangian.rename_vars(&|name| {
        if let Some(idx) = name.strip_prefix("xp") {
            Some(format!("x1_{idx}"))
        } else {
            name.strip_prefix('x').map(|idx| format!("x0_{idx}"))
        }
    });
    HOProblem::new(
        cv.horizon,
        1,
        cv.state_dim,
        lagrangian,
        vec![cv.x_start.clone()],
        vec![cv.x_end.clone()],
    )
}

/// The order-1 view of a first-order transformation family.
pub fn cv_family_to_ho(fam: &CvSymmetryFamily) -> Result<HoSymmetryFamily, CalcVarError> {
    let rename = |e: &Expr| {
        e.rename_vars(&|name| {
            if let Some(idx) = name.strip_prefix("xp") {
                Some(format!("x1_{idx}"))
            } else if name.starts_with('s') || name == "k" {
                None
            } else {
                name.strip_prefix('x').map(|idx| format!("x0_{idx}"))
            }
        })
    };
    HoSymmetryFamily::new(
        fam.param_count,
        1,
        fam.x_map.iter().map(rename).collect(),
        rename(&fam.gauge),
    )
}
