//! Canonical small problems shared by tests, benchmarks, and examples.
//!
//! The "swap bilinear" system is the workhorse: three states, two controls,
//! stage cost `u1² - u2²`, dynamics that swap the first two states under
//! additive control and integrate the bilinear product `x2·u1` into the
//! third. It admits the one-parameter shift family
//! `X = (x1+2s, x2+s, x3+s·x1)`, `u(k,s) = (u1+s, u2-s)` with gauge
//! `2(x1+x2)s`, whose conserved quantity is
//! `2·psi0(x1+x2) + 2·psi1 + psi2 + psi3·x1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calcvar::CVProblem;
use crate::expr::parse;
use crate::model::{ControlSet, Extremal, Horizon, ProblemSpec, SymmetryFamily, Trajectory};

/// The swap-bilinear problem with a chosen horizon and boundary.
pub fn swap_bilinear_problem(
    horizon: Horizon,
    x_start: [f64; 3],
    x_end: Option<[f64; 3]>,
) -> ProblemSpec {
    ProblemSpec::new(
        horizon,
        3,
        2,
        parse("u1^2 - u2^2").expect("fixture Lagrangian parses"),
        vec![
            parse("x2 + u1").expect("fixture dynamics parse"),
            parse("x1 + u2").expect("fixture dynamics parse"),
            parse("x2*u1").expect("fixture dynamics parse"),
        ],
        ControlSet::Free,
        x_start.to_vec(),
        match x_end {
            Some(v) => v.iter().map(|&x| Some(x)).collect(),
            None => vec![None; 3],
        },
    )
    .expect("fixture problem is well formed")
}

/// The one-parameter shift family the swap-bilinear problem is
/// quasi-invariant under.
pub fn swap_bilinear_family() -> SymmetryFamily {
    SymmetryFamily::new(
        1,
        vec![
            parse("x1 + 2*s1").unwrap(),
            parse("x2 + s1").unwrap(),
            parse("x3 + s1*x1").unwrap(),
        ],
        vec![parse("u1 + s1").unwrap(), parse("u2 - s1").unwrap()],
        parse("2*(x1 + x2)*s1").unwrap(),
        None,
    )
    .expect("fixture family is well formed")
}

/// Roll the swap-bilinear dynamics out under the feedback law
/// `u1 = x1`, `u2 = -x2/2`, which zeroes the conserved combination
/// `(x1 + x2) + 2u2 - u1` identically.
pub fn swap_bilinear_feedback(periods: usize, x0: [f64; 3]) -> Trajectory {
    let mut x = vec![x0.to_vec()];
    let mut u = Vec::with_capacity(periods);
    for _ in 0..periods {
        let cur = x.last().unwrap();
        let (x1, x2) = (cur[0], cur[1]);
        let uk = vec![x1, -x2 / 2.0];
        x.push(vec![x2 + uk[0], x1 + uk[1], x2 * uk[0]]);
        u.push(uk);
    }
    Trajectory::new(0, x, u).expect("feedback rollout is well formed")
}

/// A hand-verified normal extremal of the swap-bilinear problem over four
/// periods, generated by running the extremal recursion forward: with
/// `psi0 = -1` and `psi3 = 0` the adjoint system swaps
/// `(psi1, psi2)` each step and the stationary controls are
/// `u = (psi1(k+1)/2, -psi2(k+1)/2)`. Returns the problem (boundary taken
/// from the generated trajectory) together with the extremal; every
/// optimality residual is exactly zero by construction.
///
/// Note the generic structural fact visible here: along any normal
/// extremal of this system, `x2(M + 2j) = x2(M)`. Boundaries violating
/// that (such as rollouts of the feedback law `u1 = x1, u2 = -x2/2`)
/// admit no normal extremal at all.
pub fn swap_bilinear_normal_extremal() -> (ProblemSpec, Extremal) {
    let x0 = [1.0, 1.0, 0.0];
    let mut psi: Vec<Vec<f64>> = vec![vec![0.6, 0.4, 0.0]]; // psi(1)
    for i in 0..3 {
        let prev = &psi[i];
        psi.push(vec![prev[1], prev[0], 0.0]);
    }
    let mut x = vec![x0.to_vec()];
    let mut u = Vec::with_capacity(4);
    for pn in &psi {
        let cur = x.last().unwrap();
        let (x1, x2) = (cur[0], cur[1]);
        let uk = vec![pn[0] / 2.0, -pn[1] / 2.0];
        x.push(vec![x2 + uk[0], x1 + uk[1], x2 * uk[0]]);
        u.push(uk);
    }
    let end = x.last().unwrap();
    let p = swap_bilinear_problem(
        Horizon::new(0, 4).expect("four periods"),
        x0,
        Some([end[0], end[1], end[2]]),
    );
    let e = Extremal::new(
        Trajectory::new(0, x, u).expect("generated trajectory is well formed"),
        -1.0,
        psi,
    )
    .expect("generated extremal is well formed");
    (p, e)
}

/// A swap-bilinear instance whose boundary is reachable only abnormally:
/// the boundary comes from a rollout with `u1(3) = x2(3)` (the abnormal
/// extremality condition) and `x2(4) != x2(0)`, which rules every normal
/// extremal out. The known abnormal extremal carries all multiplier weight
/// at the final index: `psi(1..3) = 0`,
/// `psi(4) ∝ (-x2(3), 0, 1)`.
pub fn swap_bilinear_abnormal_problem() -> ProblemSpec {
    let x0 = [1.0, 1.0, 0.0];
    let controls = [[0.5, 0.25], [-0.25, 0.5], [0.75, 0.5]];
    let mut x = vec![x0.to_vec()];
    for u in controls {
        let cur = x.last().unwrap();
        let (x1, x2) = (cur[0], cur[1]);
        x.push(vec![x2 + u[0], x1 + u[1], x2 * u[0]]);
    }
    let cur = x.last().unwrap();
    let (x1, x2) = (cur[0], cur[1]);
    let u_last = [x2, 0.375];
    let end = [x2 + u_last[0], x1 + u_last[1], x2 * u_last[0]];
    swap_bilinear_problem(Horizon::new(0, 4).expect("four periods"), x0, Some(end))
}

/// Scalar quadratic-cost integrator: `L = u²`, `x(k+1) = x + u`,
/// `x(0) = 0`, `x(2) = 1`. The optimum splits the move evenly,
/// `u = (1/2, 1/2)`, with cost `1/2` and `psi(1) = psi(2) = 1` at
/// `psi0 = -1`.
pub fn lq_scalar_problem() -> ProblemSpec {
    ProblemSpec::new(
        Horizon::new(0, 2).expect("two periods"),
        1,
        1,
        parse("u1^2").unwrap(),
        vec![parse("x1 + u1").unwrap()],
        ControlSet::Free,
        vec![0.0],
        vec![Some(1.0)],
    )
    .expect("fixture problem is well formed")
}

/// State translation `X = x + s` with unchanged controls and zero gauge.
/// The scalar integrator is strictly invariant under it, and the conserved
/// quantity is `psi(k)` itself.
pub fn lq_translation_family() -> SymmetryFamily {
    SymmetryFamily::new(
        1,
        vec![parse("x1 + s1").unwrap()],
        vec![parse("u1").unwrap()],
        parse("0").unwrap(),
        None,
    )
    .expect("fixture family is well formed")
}

/// Free-particle first-order problem `L = (x(k+1) - x(k))²`; its
/// Euler–Lagrange solutions are arithmetic sequences.
pub fn free_particle_cv(horizon: Horizon, x_start: f64, x_end: f64) -> CVProblem {
    CVProblem::new(
        horizon,
        1,
        parse("(xp1 - x1)^2").unwrap(),
        vec![x_start],
        vec![x_end],
    )
    .expect("fixture problem is well formed")
}

/// Random scalar quadratic first-order Lagrangian
/// `a·xp² + b·x·xp + c·x² + d·xp + e·x` with `a` bounded away from zero,
/// over six periods with random boundary. Deterministic in `seed`.
pub fn random_quadratic_cv(seed: u64) -> CVProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0.5..2.0);
    let b = rng.random_range(-1.0..1.0);
    let c = rng.random_range(-1.0..1.0);
    let d = rng.random_range(-1.0..1.0);
    let e = rng.random_range(-1.0..1.0);
    let x_start = rng.random_range(-1.0..1.0);
    let x_end = rng.random_range(-1.0..1.0);
    let text = format!("({a})*xp1^2 + ({b})*x1*xp1 + ({c})*x1^2 + ({d})*xp1 + ({e})*x1");
    CVProblem::new(
        Horizon::new(0, 6).unwrap(),
        1,
        parse(&text).expect("generated Lagrangian parses"),
        vec![x_start],
        vec![x_end],
    )
    .expect("generated problem is well formed")
}

/// Random linear-quadratic problem that is strictly invariant under an
/// affine family by construction.
///
/// Dynamics are `phi = F·x + G·u` with `G` near the identity; the stage
/// cost is `sum_i w_i (u_i - (K·x)_i)²`. The family shifts states along
/// `a`, controls along `b`, with `a = (I-F)⁻¹·G·b` (so the dynamics
/// identity holds exactly) and `K·a = b` (so the cost is untouched). The
/// gauge is zero and the conserved quantity is `psi(k)·a`. The boundary is
/// generated by a rollout, so an admissible trajectory exists.
pub fn random_invariant_lq(
    seed: u64,
    state_dim: usize,
    horizon: Horizon,
) -> (ProblemSpec, SymmetryFamily) {
    let n = state_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
    let g = DMatrix::<f64>::identity(n, n)
        + DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2));
    let mut b = DVector::<f64>::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    if b.norm() < 0.1 {
        b[0] = 1.0;
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let a = (eye.clone() - &f)
        .lu()
        .solve(&(&g * &b))
        .expect("I - F is invertible for these draws");
    // K = b·aᵀ/(aᵀa) + K0·(I - a·aᵀ/(aᵀa)): guarantees K·a = b
    let proj = &a * a.transpose() / a.norm_squared();
    let k0 = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
    let k_gain = &b * a.transpose() / a.norm_squared() + &k0 * (&eye - &proj);

    let xnames: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let linear = |row: &[f64], names: &[String]| -> String {
        let terms: Vec<String> = row
            .iter()
            .zip(names)
            .map(|(c, name)| format!("({c})*{name}"))
            .collect();
        terms.join(" + ")
    };

    let mut cost_terms = Vec::with_capacity(n);
    for i in 0..n {
        let w = rng.random_range(0.5..2.0);
        let row: Vec<f64> = (0..n).map(|j| k_gain[(i, j)]).collect();
        cost_terms.push(format!(
            "({w})*(u{} - ({}))^2",
            i + 1,
            linear(&row, &xnames)
        ));
    }
    let lagrangian = parse(&cost_terms.join(" + ")).expect("generated Lagrangian parses");

    let unames: Vec<String> = (1..=n).map(|i| format!("u{i}")).collect();
    let dynamics: Vec<_> = (0..n)
        .map(|i| {
            let frow: Vec<f64> = (0..n).map(|j| f[(i, j)]).collect();
            let grow: Vec<f64> = (0..n).map(|j| g[(i, j)]).collect();
            parse(&format!(
                "{} + {}",
                linear(&frow, &xnames),
                linear(&grow, &unames)
            ))
            .expect("generated dynamics parse")
        })
        .collect();

    let x_start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let controls: Vec<Vec<f64>> = (0..horizon.periods)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let open = ProblemSpec::new(
        horizon,
        n,
        n,
        lagrangian.clone(),
        dynamics.clone(),
        ControlSet::Free,
        x_start.clone(),
        vec![None; n],
    )
    .expect("generated problem is well formed");
    let t = crate::model::rollout(&open, &controls, &x_start).expect("rollout succeeds");
    let x_end: Vec<Option<f64>> = t.state(horizon.last()).iter().map(|&v| Some(v)).collect();

    let problem = ProblemSpec::new(
        horizon,
        n,
        n,
        lagrangian,
        dynamics,
        ControlSet::Free,
        x_start,
        x_end,
    )
    .expect("generated problem is well formed");

    let family = SymmetryFamily::new(
        1,
        (0..n)
            .map(|i| parse(&format!("x{} + ({})*s1", i + 1, a[i])).unwrap())
            .collect(),
        (0..n)
            .map(|i| parse(&format!("u{} + ({})*s1", i + 1, b[i])).unwrap())
            .collect(),
        parse("0").unwrap(),
        None,
    )
    .expect("generated family is well formed");

    (problem, family)
}
