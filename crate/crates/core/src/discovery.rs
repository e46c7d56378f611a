//! Least-squares search for affine symmetry generators.
//!
//! The ansatz is affine in a single parameter: `X = x + s·a(k,x,u)`,
//! `u(k,s) = u + s·b(k,x,u)`, `Phi = s·g(k,x,u)`, with each generator a
//! linear combination of dictionary functions. Differentiating the two
//! quasi-invariance identities at `s = 0` gives expressions *linear* in
//! the unknown coefficients, so every sampled `(trajectory, k)` point
//! contributes `1 + n` linear equations. The best symmetry candidate is
//! the smallest right-singular direction of the assembled matrix; its
//! singular value is the reported residual, and anything at rounding level
//! is a discovered symmetry.
//!
//! Constant dictionary entries are excluded from the gauge generator: a
//! constant gauge has zero forward difference, so it is a null direction
//! for every problem and would only pollute the extracted family.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::diff::{self, Dual};
use crate::exec;
use crate::expr::{BinOp, Expr};
use crate::model::{
    check_vocabulary, dynamics_gap, stage_vocabulary, ModelError, ProblemSpec, SymmetryFamily,
    Trajectory,
};

/// Residual at or below this level counts as a discovered symmetry.
pub const DISCOVERY_TOL: f64 = 1e-8;
/// Normalized singular values below this are treated as exact nulls.
pub const RANK_THRESHOLD: f64 = 1e-10;
/// Coefficients below this (directions are unit-norm) are dropped when the
/// recovered generators are rendered as expressions.
const COEFF_TRUNCATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscoveryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("dictionary has {got} entries, exceeding the cap of {cap}")]
    DictionaryTooLarge { got: usize, cap: usize },
    #[error("sample trajectory {index} violates the dynamics by {residual:e}")]
    InadmissibleSample { index: usize, residual: f64 },
    #[error(
        "not enough sample equations: {rows} rows for {cols} unknown coefficients; \
         supply more or longer trajectories"
    )]
    InsufficientSamples { rows: usize, cols: usize },
}

/// Dictionary of generator basis functions over `(k, x*, u*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorAnsatz {
    pub basis: Vec<Expr>,
}

impl GeneratorAnsatz {
    /// Use an explicit dictionary; entries must be expressions over the
    /// stage vocabulary of the problem they will be used with.
    pub fn new(basis: Vec<Expr>) -> Result<Self, DiscoveryError> {
        if basis.is_empty() {
            return Err(DiscoveryError::EmptyDictionary);
        }
        Ok(GeneratorAnsatz { basis })
    }

    /// Stock dictionary: the constant, all coordinates, and the pairwise
    /// products `x_i·x_j` and `x_i·u_j`, truncated at `cap` entries.
    pub fn default_dictionary(
        state_dim: usize,
        control_dim: usize,
        cap: usize,
    ) -> Result<Self, DiscoveryError> {
        let mut basis = vec![Expr::Num(1.0)];
        for i in 1..=state_dim {
            basis.push(Expr::Var(format!("x{i}")));
        }
        for j in 1..=control_dim {
            basis.push(Expr::Var(format!("u{j}")));
        }
        for i in 1..=state_dim {
            for j in i..=state_dim {
                basis.push(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Var(format!("x{i}"))),
                    Box::new(Expr::Var(format!("x{j}"))),
                ));
            }
        }
        for i in 1..=state_dim {
            for j in 1..=control_dim {
                basis.push(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Var(format!("x{i}"))),
                    Box::new(Expr::Var(format!("u{j}"))),
                ));
            }
        }
        if basis.len() > cap {
            return Err(DiscoveryError::DictionaryTooLarge {
                got: basis.len(),
                cap,
            });
        }
        Self::new(basis)
    }
}

/// Outcome of [`discover`].
#[derive(Debug, Clone)]
pub struct Discovery {
    /// The recovered one-parameter family (identity when `degenerate`).
    pub family: SymmetryFamily,
    /// Smallest singular value of the sampled identity system at the
    /// unit-norm coefficient direction.
    pub residual: f64,
    /// Number of singular values at rounding level relative to the
    /// largest; 1 means the symmetry direction is unique on this sample.
    pub null_space_dim: usize,
    /// Every coefficient direction annihilated the sample (e.g. a problem
    /// with trivial cost and dynamics): everything in the ansatz is a
    /// symmetry and the returned family is arbitrary.
    pub degenerate: bool,
    /// Generator coefficients over the dictionary, rows `x1..xn`.
    pub x_coefficients: Vec<Vec<f64>>,
    /// Generator coefficients over the dictionary, rows `u1..ur`.
    pub u_coefficients: Vec<Vec<f64>>,
    /// Gauge coefficients over the *non-constant* dictionary entries
    /// (see module docs), aligned with `gauge_basis_indices`.
    pub gauge_coefficients: Vec<f64>,
    pub gauge_basis_indices: Vec<usize>,
}

fn linear_combination(coeffs: &[f64], basis: &[Expr], indices: Option<&[usize]>) -> Expr {
    let mut acc: Option<Expr> = None;
    for (slot, &c) in coeffs.iter().enumerate() {
        if c.abs() <= COEFF_TRUNCATION {
            continue;
        }
        let idx = indices.map_or(slot, |map| map[slot]);
        let term = Expr::Bin(
            BinOp::Mul,
            Box::new(Expr::Num(c)),
            Box::new(basis[idx].clone()),
        );
        acc = Some(match acc {
            None => term,
            Some(prev) => Expr::Bin(BinOp::Add, Box::new(prev), Box::new(term)),
        });
    }
    acc.unwrap_or(Expr::Num(0.0))
}

/// Fit the affine ansatz to the sampled quasi-invariance identities and
/// return the best single-parameter family.
pub fn discover(
    p: &ProblemSpec,
    ansatz: &GeneratorAnsatz,
    samples: &[Trajectory],
) -> Result<Discovery, DiscoveryError> {
    let vocab = stage_vocabulary(p.state_dim, p.control_dim);
    for (i, e) in ansatz.basis.iter().enumerate() {
        check_vocabulary(e, &format!("dictionary entry {}", i + 1), &vocab)?;
    }
    for (index, t) in samples.iter().enumerate() {
        let residual = dynamics_gap(p, t)?;
        if residual > 1e-9 {
            return Err(DiscoveryError::InadmissibleSample { index, residual });
        }
    }

    let (n, r) = (p.state_dim, p.control_dim);
    let dict = &ansatz.basis;
    let d = dict.len();
    let gauge_idx: Vec<usize> = (0..d)
        .filter(|&t| !dict[t].free_vars().is_empty())
        .collect();
    let dg = gauge_idx.len();
    let cols = (n + r) * d + dg;

    let eval_dict = |k: i64, x: &[f64], u: &[f64]| -> Result<Vec<f64>, ModelError> {
        let env = p.stage_env(k, x, u);
        dict.iter()
            .map(|e| {
                e.eval(&env).map_err(|source| ModelError::StageEval {
                    what: "dictionary entry".into(),
                    k,
                    source,
                })
            })
            .collect()
    };

    // Rows are assembled per trajectory and concatenated in order.
    let blocks: Vec<Vec<Vec<f64>>> =
        exec::try_map_collect(samples.iter().collect::<Vec<_>>(), |t| {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for k in t.first..=t.last() - 2 {
                let x = t.state(k);
                let u = t.control(k);
                let lift = |v: &[f64]| -> Vec<Dual<f64>> {
                    v.iter().map(|&a| Dual::constant(a)).collect()
                };
                let (xl, ul) = (lift(x), lift(u));
                let grad_l_x = diff::gradient(|xd| p.eval_lagrangian(k, xd, &ul), x)?;
                let grad_l_u = diff::gradient(|ud| p.eval_lagrangian(k, &xl, ud), u)?;
                let jac_phi_x = diff::jacobian(|xd| p.eval_dynamics(k, xd, &ul), x, n)?;
                let jac_phi_u = diff::jacobian(|ud| p.eval_dynamics(k, &xl, ud), u, n)?;
                let dict_k = eval_dict(k, x, u)?;
                let dict_k1 = eval_dict(k + 1, t.state(k + 1), t.control(k + 1))?;

                // d/ds of the Lagrangian identity
                let mut row = vec![0.0; cols];
                for i in 0..n {
                    for t in 0..d {
                        row[i * d + t] = grad_l_x[i] * dict_k[t];
                    }
                }
                for j in 0..r {
                    for t in 0..d {
                        row[(n + j) * d + t] = grad_l_u[j] * dict_k[t];
                    }
                }
                for (slot, &t) in gauge_idx.iter().enumerate() {
                    row[(n + r) * d + slot] = -(dict_k1[t] - dict_k[t]);
                }
                rows.push(row);

                // d/ds of each dynamics identity component
                for c in 0..n {
                    let mut row = vec![0.0; cols];
                    for i in 0..n {
                        for t in 0..d {
                            row[i * d + t] = jac_phi_x[c][i] * dict_k[t];
                        }
                    }
                    for t in 0..d {
                        row[c * d + t] -= dict_k1[t];
                    }
                    for j in 0..r {
                        for t in 0..d {
                            row[(n + j) * d + t] = jac_phi_u[c][j] * dict_k[t];
                        }
                    }
                    rows.push(row);
                }
            }
            Ok::<_, ModelError>(rows)
        })?;
    let rows: Vec<Vec<f64>> = blocks.into_iter().flatten().collect();

    if rows.len() < cols {
        return Err(DiscoveryError::InsufficientSamples {
            rows: rows.len(),
            cols,
        });
    }
    let mat = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);

    let degenerate = mat.amax() == 0.0;
    let mut theta = vec![0.0; cols];
    let mut residual = 0.0;
    let mut null_space_dim = cols;
    if !degenerate {
        let svd = mat.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let sigma = &svd.singular_values;
        let smallest = sigma.len() - 1;
        residual = sigma[smallest];
        let sigma_max = sigma[0];
        null_space_dim = sigma
            .iter()
            .filter(|&&s| s <= RANK_THRESHOLD * sigma_max)
            .count();
        for j in 0..cols {
            theta[j] = v_t[(smallest, j)];
        }
        // deterministic sign: first significant coefficient positive
        if let Some(&lead) = theta.iter().find(|c| c.abs() > COEFF_TRUNCATION) {
            if lead < 0.0 {
                for c in theta.iter_mut() {
                    *c = -*c;
                }
            }
        }
    }

    let x_coefficients: Vec<Vec<f64>> =
        (0..n).map(|i| theta[i * d..(i + 1) * d].to_vec()).collect();
    let u_coefficients: Vec<Vec<f64>> = (0..r)
        .map(|j| theta[(n + j) * d..(n + j + 1) * d].to_vec())
        .collect();
    let gauge_coefficients: Vec<f64> = theta[(n + r) * d..].to_vec();

    let x_map: Vec<Expr> = (0..n)
        .map(|i| {
            Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Var(format!("x{}", i + 1))),
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Var("s1".into())),
                    Box::new(linear_combination(&x_coefficients[i], dict, None)),
                )),
            )
        })
        .collect();
    let u_map: Vec<Expr> = (0..r)
        .map(|j| {
            Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Var(format!("u{}", j + 1))),
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Var("s1".into())),
                    Box::new(linear_combination(&u_coefficients[j], dict, None)),
                )),
            )
        })
        .collect();
    let gauge = Expr::Bin(
        BinOp::Mul,
        Box::new(Expr::Var("s1".into())),
        Box::new(linear_combination(
            &gauge_coefficients,
            dict,
            Some(&gauge_idx),
        )),
    );

    let family = SymmetryFamily::new(1, x_map, u_map, gauge, None)?;
    Ok(Discovery {
        family,
        residual,
        null_space_dim,
        degenerate,
        x_coefficients,
        u_coefficients,
        gauge_coefficients,
        gauge_basis_indices: gauge_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::fixtures;
    use crate::model::{sample_trajectories, ControlSet, Horizon};
    use crate::noether::check_quasi_invariance;

    fn small_dictionary() -> GeneratorAnsatz {
        GeneratorAnsatz::new(vec![
            parse("1").unwrap(),
            parse("x1").unwrap(),
            parse("x2").unwrap(),
            parse("x3").unwrap(),
            parse("u1").unwrap(),
            parse("u2").unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn recovers_the_shift_family() {
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 8).unwrap(), [1.0, 1.0, 0.0], None);
        let samples = sample_trajectories(&p, 10, 0x5EED).unwrap();
        let found = discover(&p, &small_dictionary(), &samples).unwrap();
        assert!(
            found.residual <= DISCOVERY_TOL,
            "residual {:e}",
            found.residual
        );
        assert!(!found.degenerate);
        assert_eq!(found.null_space_dim, 1);

        // structure: a = (2c, c, c·x1), b = (c, -c), g = 2c(x1 + x2)
        let c = found.x_coefficients[1][0]; // X2 constant term
        assert!(c.abs() > 0.1);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-8;
        assert!(close(found.x_coefficients[0][0], 2.0 * c)); // X1: 2c·1
        assert!(close(found.x_coefficients[2][1], c)); // X3: c·x1
        assert!(close(found.u_coefficients[0][0], c));
        assert!(close(found.u_coefficients[1][0], -c));
        // gauge over non-constant dictionary: 2c·x1 + 2c·x2
        let gx1 = found
            .gauge_basis_indices
            .iter()
            .position(|&t| t == 1)
            .unwrap();
        let gx2 = found
            .gauge_basis_indices
            .iter()
            .position(|&t| t == 2)
            .unwrap();
        assert!(close(found.gauge_coefficients[gx1], 2.0 * c));
        assert!(close(found.gauge_coefficients[gx2], 2.0 * c));

        // the recovered family is a genuine symmetry on a fresh sample
        let fresh = sample_trajectories(&p, 10, 0xF8E5).unwrap();
        let report = check_quasi_invariance(&p, &found.family, &fresh, 1e-6).unwrap();
        assert!(report.pass, "max {:e}", report.max_abs);
    }

    #[test]
    fn finds_translation_for_scalar_integrator() {
        let p = crate::model::ProblemSpec::new(
            Horizon::new(0, 6).unwrap(),
            1,
            1,
            parse("u1^2").unwrap(),
            vec![parse("x1 + u1").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![None],
        )
        .unwrap();
        let samples = sample_trajectories(&p, 6, 0x5EED).unwrap();
        let ansatz = GeneratorAnsatz::new(vec![parse("1").unwrap()]).unwrap();
        let found = discover(&p, &ansatz, &samples).unwrap();
        assert!(found.residual <= DISCOVERY_TOL);
        // X = x + s, u untouched, gauge empty
        assert!((found.x_coefficients[0][0] - 1.0).abs() < 1e-10);
        assert!(found.u_coefficients[0][0].abs() < 1e-10);
        assert!(found.gauge_coefficients.is_empty());
    }

    #[test]
    fn generic_problem_has_no_constant_symmetry() {
        let p = crate::model::ProblemSpec::new(
            Horizon::new(0, 6).unwrap(),
            1,
            1,
            parse("x1^2 + u1^2").unwrap(),
            vec![parse("x1 + u1").unwrap()],
            ControlSet::Free,
            vec![0.5],
            vec![None],
        )
        .unwrap();
        let samples = sample_trajectories(&p, 6, 0x5EED).unwrap();
        let ansatz = GeneratorAnsatz::new(vec![parse("1").unwrap()]).unwrap();
        let found = discover(&p, &ansatz, &samples).unwrap();
        assert!(found.residual >= 0.1, "residual {:e}", found.residual);
    }

    #[test]
    fn degenerate_problem_is_reported() {
        // Zero cost, zero dynamics, and generators proportional to x on the
        // all-zero trajectory: every equation the sample produces is 0 = 0.
        let p = crate::model::ProblemSpec::new(
            Horizon::new(0, 4).unwrap(),
            1,
            1,
            parse("0").unwrap(),
            vec![parse("0").unwrap()],
            ControlSet::Free,
            vec![0.0],
            vec![None],
        )
        .unwrap();
        let zero = crate::model::Trajectory::new(
            0,
            vec![vec![0.0]; 5],
            vec![vec![0.3], vec![-0.1], vec![0.8], vec![0.0]],
        )
        .unwrap();
        let ansatz = GeneratorAnsatz::new(vec![parse("x1").unwrap()]).unwrap();
        let found = discover(&p, &ansatz, &[zero.clone(), zero]).unwrap();
        assert!(found.degenerate);
        assert_eq!(found.residual, 0.0);
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        let p = fixtures::swap_bilinear_problem(Horizon::new(0, 2).unwrap(), [1.0, 1.0, 0.0], None);
        let samples = sample_trajectories(&p, 1, 0x5EED).unwrap();
        let err = discover(&p, &small_dictionary(), &samples).unwrap_err();
        assert!(matches!(err, DiscoveryError::InsufficientSamples { .. }));
    }

    #[test]
    fn default_dictionary_respects_cap() {
        let ok = GeneratorAnsatz::default_dictionary(3, 2, 32).unwrap();
        assert_eq!(ok.basis.len(), 1 + 5 + 6 + 6);
        let err = GeneratorAnsatz::default_dictionary(3, 2, 10).unwrap_err();
        assert!(matches!(err, DiscoveryError::DictionaryTooLarge { .. }));
    }
}
