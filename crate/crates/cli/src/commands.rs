//! Command dispatch: load a config, run the requested analysis, assemble
//! the report, and map outcomes onto the exit-code contract
//! (0 success/pass, 1 usage or config error, 2 solver non-convergence,
//! 3 check failure).

use std::fs;
use std::path::{Path, PathBuf};

use noether_dt_core::calcvar::{
    augmented_to_sequence, cv_check_quasi_invariance, cv_noether_integral, cv_to_oc, el_residual,
    euler_poisson_residual, ho_check_quasi_invariance, ho_noether_integral, ho_to_oc,
    sample_state_sequences, CVProblem, HOProblem,
};
use noether_dt_core::discovery::{discover, GeneratorAnsatz, DISCOVERY_TOL};
use noether_dt_core::model::{cost, sample_trajectories, Extremal, ProblemSpec};
use noether_dt_core::noether::{
    check_quasi_invariance, conservation_report, CONSERVATION_REL_TOL, DEFAULT_INVARIANCE_TOL,
    SAMPLE_COUNT, SAMPLE_SEED,
};
use noether_dt_core::pmp::{solve_extremal, SolveOutcome, SolverOptions};

use crate::config::{ConfigDocument, ConfigError, LoadedProblem};
use crate::csvio;
use crate::report::{
    ConservationParamPayload, ConservationPayload, DiscoveryPayload, InvarianceParamPayload,
    InvariancePayload, ResidualSequencePayload, RunReport, SolvePayload,
};

pub struct CommonArgs {
    pub config: PathBuf,
    pub extremal: Option<PathBuf>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Errors that abort a run before a report exists; all exit with code 1.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io { path: PathBuf, message: String },
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn core_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(ConfigError {
        line: None,
        message: e.to_string(),
    })
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    args: CommonArgs,
    doc: ConfigDocument,
    loaded: LoadedProblem,
}

impl Run {
    fn solver_options(&self) -> SolverOptions {
        let mut opts = self.doc.solver.clone();
        if let Some(tol) = self.args.tol {
            opts.newton_tol = tol;
        }
        opts
    }

    fn seed(&self) -> u64 {
        self.args.seed.unwrap_or(SAMPLE_SEED)
    }

    fn report(&self, status: &str, exit_code: i32) -> RunReport {
        RunReport {
            command: self.command.to_owned(),
            argv: self.argv.clone(),
            config: self.args.config.display().to_string(),
            status: status.to_owned(),
            exit_code,
            solve: None,
            invariance: None,
            conservation: None,
            residuals: None,
            discovery: None,
        }
    }
}

/// Entry point used by `main`; returns the rendered report and exit code.
pub fn run(
    command: &'static str,
    args: CommonArgs,
    argv: Vec<String>,
) -> Result<RunReport, CliError> {
    let text = read_file(&args.config)?;
    let doc = ConfigDocument::parse(&text)?;
    let loaded = doc.build()?;
    let run = Run {
        command,
        argv,
        args,
        doc,
        loaded,
    };
    match command {
        "solve" => cmd_solve(run),
        "check" => cmd_check(run),
        "noether" => cmd_noether(run),
        "el" => cmd_el(run),
        "ep" => cmd_ep(run),
        "discover" => cmd_discover(run),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

/// Reduce (if needed) and solve; returns the reduced problem, the outcome,
/// and the flat state sequence for variational problems.
type SolvedProblem = (ProblemSpec, SolveOutcome, Option<Vec<Vec<f64>>>);

fn solve_current(run: &Run) -> Result<SolvedProblem, CliError> {
    let opts = run.solver_options();
    let reduced = match &run.loaded {
        LoadedProblem::Oc { problem, .. } => problem.clone(),
        LoadedProblem::Cv { problem, .. } => cv_to_oc(problem).map_err(core_err)?,
        LoadedProblem::Ho { problem, .. } => ho_to_oc(problem).map_err(core_err)?,
    };
    let outcome = solve_extremal(&reduced, &opts, None).map_err(core_err)?;
    let flat_states = match &run.loaded {
        LoadedProblem::Oc { .. } => None,
        LoadedProblem::Cv { .. } => Some(outcome.extremal.trajectory.x.clone()),
        LoadedProblem::Ho { problem, .. } => {
            Some(augmented_to_sequence(problem, &outcome.extremal.trajectory))
        }
    };
    Ok((reduced, outcome, flat_states))
}

fn solve_payload(run: &Run, reduced: &ProblemSpec, outcome: &SolveOutcome) -> SolvePayload {
    let total_cost = cost(reduced, &outcome.extremal.trajectory).unwrap_or(f64::NAN);
    SolvePayload::new(run.loaded.kind_name(), outcome, total_cost)
}

fn cmd_solve(run: Run) -> Result<RunReport, CliError> {
    let (reduced, outcome, flat_states) = solve_current(&run)?;
    let mut payload = solve_payload(&run, &reduced, &outcome);
    payload.flat_states = flat_states;
    if let Some(path) = &run.args.extremal {
        write_file(path, &csvio::write_extremal(&outcome.extremal))?;
    }
    let (status, code) = if outcome.converged {
        ("converged", 0)
    } else {
        ("not-converged", 2)
    };
    let mut report = run.report(status, code);
    report.solve = Some(payload);
    Ok(report)
}

fn cmd_check(run: Run) -> Result<RunReport, CliError> {
    let tolerance = run.args.tol.unwrap_or(DEFAULT_INVARIANCE_TOL);
    let seed = run.seed();
    let payload = match &run.loaded {
        LoadedProblem::Oc { problem, family } => {
            let family = family.as_ref().ok_or_else(|| {
                CliError::Usage("`check` needs a [symmetry] section in the config".into())
            })?;
            let sample = sample_trajectories(problem, SAMPLE_COUNT, seed).map_err(core_err)?;
            let rep =
                check_quasi_invariance(problem, family, &sample, tolerance).map_err(core_err)?;
            InvariancePayload {
                kind: run.loaded.kind_name().into(),
                tolerance,
                seed,
                sample_count: SAMPLE_COUNT,
                points_checked: rep.points_checked,
                parameters: rep
                    .params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| InvarianceParamPayload {
                        index: i + 1,
                        lagrangian: p.lagrangian_residual_deriv,
                        dynamics: Some(p.dynamics_residual_deriv.clone()),
                        max_abs: p.max_abs,
                    })
                    .collect(),
                max_abs: rep.max_abs,
                pass: rep.pass,
            }
        }
        LoadedProblem::Cv { problem, family } => {
            let family = family.as_ref().ok_or_else(|| {
                CliError::Usage("`check` needs a [symmetry] section in the config".into())
            })?;
            let sequences = sample_state_sequences(
                problem.horizon.periods + 1,
                problem.state_dim,
                SAMPLE_COUNT,
                seed,
            );
            let rep = cv_check_quasi_invariance(problem, family, &sequences, tolerance)
                .map_err(core_err)?;
            stencil_invariance_payload(&run, rep, seed, tolerance)
        }
        LoadedProblem::Ho { problem, family } => {
            let family = family.as_ref().ok_or_else(|| {
                CliError::Usage("`check` needs a [symmetry] section in the config".into())
            })?;
            let sequences = sample_state_sequences(
                problem.sequence_len(),
                problem.state_dim,
                SAMPLE_COUNT,
                seed,
            );
            let rep = ho_check_quasi_invariance(problem, family, &sequences, tolerance)
                .map_err(core_err)?;
            stencil_invariance_payload(&run, rep, seed, tolerance)
        }
    };
    let (status, code) = if payload.pass {
        ("pass", 0)
    } else {
        ("fail", 3)
    };
    let mut report = run.report(status, code);
    report.invariance = Some(payload);
    Ok(report)
}

fn stencil_invariance_payload(
    run: &Run,
    rep: noether_dt_core::calcvar::StencilInvarianceReport,
    seed: u64,
    tolerance: f64,
) -> InvariancePayload {
    InvariancePayload {
        kind: run.loaded.kind_name().into(),
        tolerance,
        seed,
        sample_count: SAMPLE_COUNT,
        points_checked: rep.points_checked,
        parameters: rep
            .params
            .iter()
            .enumerate()
            .map(|(i, &max)| InvarianceParamPayload {
                index: i + 1,
                lagrangian: max,
                dynamics: None,
                max_abs: max,
            })
            .collect(),
        max_abs: rep.max_abs,
        pass: rep.pass,
    }
}

fn load_extremal(run: &Run, reduced: &ProblemSpec) -> Result<Option<Extremal>, CliError> {
    match &run.args.extremal {
        None => Ok(None),
        Some(path) => {
            let text = read_file(path)?;
            let e = csvio::read_extremal(
                &text,
                reduced.state_dim,
                reduced.control_dim,
                reduced.horizon.first,
                reduced.horizon.periods,
            )?;
            Ok(Some(e))
        }
    }
}

fn drift_payload(ks: &[i64], series: Vec<Vec<f64>>) -> Vec<ConservationParamPayload> {
    series
        .into_iter()
        .enumerate()
        .map(|(i, values)| {
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let magnitude = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let drift = if ks.is_empty() { 0.0 } else { max - min };
            let tolerance = CONSERVATION_REL_TOL * (1.0 + magnitude);
            ConservationParamPayload {
                index: i + 1,
                values,
                drift,
                tolerance,
                pass: drift <= tolerance,
            }
        })
        .collect()
}

fn cmd_noether(run: Run) -> Result<RunReport, CliError> {
    match &run.loaded {
        LoadedProblem::Oc { problem, family } => {
            let family = family.as_ref().ok_or_else(|| {
                CliError::Usage("`noether` needs a [symmetry] section in the config".into())
            })?;
            let (extremal, solve) = match load_extremal(&run, problem)? {
                Some(e) => (e, None),
                None => {
                    let (reduced, outcome, _) = solve_current(&run)?;
                    let payload = solve_payload(&run, &reduced, &outcome);
                    if !outcome.converged {
                        let mut report = run.report("not-converged", 2);
                        report.solve = Some(payload);
                        return Ok(report);
                    }
                    (outcome.extremal, Some(payload))
                }
            };
            let rep = conservation_report(family, &extremal).map_err(core_err)?;
            let payload = ConservationPayload {
                kind: run.loaded.kind_name().into(),
                k: rep.ks.clone(),
                endpoint_included: rep.endpoint_included,
                parameters: rep
                    .params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ConservationParamPayload {
                        index: i + 1,
                        values: p.values.clone(),
                        drift: p.drift,
                        tolerance: p.tolerance,
                        pass: p.pass,
                    })
                    .collect(),
                pass: rep.pass,
                solve,
            };
            let (status, code) = if rep.pass { ("pass", 0) } else { ("fail", 3) };
            let mut report = run.report(status, code);
            report.conservation = Some(payload);
            Ok(report)
        }
        LoadedProblem::Cv { problem, family } => {
            let family = family.as_ref().ok_or_else(|| {
                CliError::Usage("`noether` needs a [symmetry] section in the config".into())
            })?;
            let (states, solve) = cv_states(&run, problem)?;
            let ks: Vec<i64> = (problem.horizon.first + 1..problem.horizon.last()).collect();
            let series: Vec<Vec<f64>> = (0..family.param_count)
                .map(|i| {
                    ks.iter()
                        .map(|&k| cv_noether_integral(problem, family, &states, k, i))
                        .collect::<Result<_, _>>()
                })
                .collect::<Result<_, _>>()
                .map_err(core_err)?;
            finish_conservation(run, ks, series, solve, false)
        }
        LoadedProblem::Ho { problem, family } => {
            let family = family.as_ref().ok_or_else(|| {
                CliError::Usage("`noether` needs a [symmetry] section in the config".into())
            })?;
            let (states, solve) = ho_states(&run, problem)?;
            let m = problem.order as i64;
            let ks: Vec<i64> = (problem.horizon.first..=problem.horizon.last() - m).collect();
            let series: Vec<Vec<f64>> = (0..family.param_count)
                .map(|i| {
                    ks.iter()
                        .map(|&k| ho_noether_integral(problem, family, &states, k, i))
                        .collect::<Result<_, _>>()
                })
                .collect::<Result<_, _>>()
                .map_err(core_err)?;
            finish_conservation(run, ks, series, solve, false)
        }
    }
}

fn finish_conservation(
    run: Run,
    ks: Vec<i64>,
    series: Vec<Vec<f64>>,
    solve: Option<SolvePayload>,
    endpoint_included: bool,
) -> Result<RunReport, CliError> {
    let parameters = drift_payload(&ks, series);
    let pass = parameters.iter().all(|p| p.pass);
    let payload = ConservationPayload {
        kind: run.loaded.kind_name().into(),
        k: ks,
        endpoint_included,
        parameters,
        pass,
        solve,
    };
    let (status, code) = if pass { ("pass", 0) } else { ("fail", 3) };
    let mut report = run.report(status, code);
    report.conservation = Some(payload);
    Ok(report)
}

fn cv_states(
    run: &Run,
    problem: &CVProblem,
) -> Result<(Vec<Vec<f64>>, Option<SolvePayload>), CliError> {
    match &run.args.extremal {
        Some(path) => {
            let text = read_file(path)?;
            let states = csvio::read_states(
                &text,
                problem.state_dim,
                problem.horizon.first,
                problem.horizon.periods + 1,
            )?;
            Ok((states, None))
        }
        None => {
            let (reduced, outcome, flat) = solve_current(run)?;
            let payload = solve_payload(run, &reduced, &outcome);
            if !outcome.converged {
                return Err(CliError::Usage(format!(
                    "the reduced solve did not converge ({}); supply --extremal",
                    payload.failure.unwrap_or_default()
                )));
            }
            Ok((
                flat.expect("variational solve yields flat states"),
                Some(payload),
            ))
        }
    }
}

fn ho_states(
    run: &Run,
    problem: &HOProblem,
) -> Result<(Vec<Vec<f64>>, Option<SolvePayload>), CliError> {
    match &run.args.extremal {
        Some(path) => {
            let text = read_file(path)?;
            // accept the flat sequence, or a reduced (augmented) extremal
            // as written by `solve --extremal`
            let flat = csvio::read_states(
                &text,
                problem.state_dim,
                problem.horizon.first,
                problem.sequence_len(),
            );
            match flat {
                Ok(states) => Ok((states, None)),
                Err(flat_err) => {
                    let aug = csvio::read_states(
                        &text,
                        problem.state_dim * problem.order,
                        problem.horizon.first,
                        problem.horizon.periods + 1,
                    )
                    .map_err(|_| flat_err)?;
                    let n = problem.state_dim;
                    let mut states: Vec<Vec<f64>> =
                        aug.iter().map(|row| row[..n].to_vec()).collect();
                    let last = aug.last().expect("nonempty sequence");
                    for j in 1..problem.order {
                        states.push(last[j * n..(j + 1) * n].to_vec());
                    }
                    Ok((states, None))
                }
            }
        }
        None => {
            let (reduced, outcome, flat) = solve_current(run)?;
            let payload = solve_payload(run, &reduced, &outcome);
            if !outcome.converged {
                return Err(CliError::Usage(format!(
                    "the reduced solve did not converge ({}); supply --extremal",
                    payload.failure.unwrap_or_default()
                )));
            }
            Ok((
                flat.expect("variational solve yields flat states"),
                Some(payload),
            ))
        }
    }
}

fn residual_report(run: Run, ks: Vec<i64>, values: Vec<Vec<f64>>) -> Result<RunReport, CliError> {
    let max_abs = values
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let threshold = run.args.tol;
    let pass = threshold.map(|t| max_abs <= t);
    let (status, code) = match pass {
        Some(true) | None => ("ok", 0),
        Some(false) => ("fail", 3),
    };
    let payload = ResidualSequencePayload {
        kind: run.loaded.kind_name().into(),
        k: ks,
        values,
        max_abs,
        threshold,
        pass,
    };
    let mut report = run.report(status, code);
    report.residuals = Some(payload);
    Ok(report)
}

fn cmd_el(run: Run) -> Result<RunReport, CliError> {
    let LoadedProblem::Cv { problem, .. } = &run.loaded else {
        return Err(CliError::Usage(
            "`el` needs a [cv] problem configuration".into(),
        ));
    };
    let (states, _) = cv_states(&run, problem)?;
    let ks: Vec<i64> = (problem.horizon.first..=problem.horizon.last() - 2).collect();
    let values: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| el_residual(problem, &states, k))
        .collect::<Result<_, _>>()
        .map_err(core_err)?;
    residual_report(run, ks, values)
}

fn cmd_ep(run: Run) -> Result<RunReport, CliError> {
    let LoadedProblem::Ho { problem, .. } = &run.loaded else {
        return Err(CliError::Usage(
            "`ep` needs an [ho] problem configuration".into(),
        ));
    };
    let (states, _) = ho_states(&run, problem)?;
    let m = problem.order as i64;
    let ks: Vec<i64> = (problem.horizon.first..=problem.horizon.last() - m - 1).collect();
    let values: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| euler_poisson_residual(problem, &states, k))
        .collect::<Result<_, _>>()
        .map_err(core_err)?;
    residual_report(run, ks, values)
}

fn cmd_discover(run: Run) -> Result<RunReport, CliError> {
    let LoadedProblem::Oc { problem, .. } = &run.loaded else {
        return Err(CliError::Usage(
            "`discover` works on optimal-control configurations".into(),
        ));
    };
    let tolerance = run.args.tol.unwrap_or(DISCOVERY_TOL);
    let ansatz = GeneratorAnsatz::default_dictionary(problem.state_dim, problem.control_dim, 64)
        .map_err(core_err)?;
    let samples = sample_trajectories(problem, SAMPLE_COUNT, run.seed()).map_err(core_err)?;
    let found = discover(problem, &ansatz, &samples).map_err(core_err)?;
    let pass = found.degenerate || found.residual <= tolerance;
    let payload = DiscoveryPayload {
        dictionary: ansatz.basis.iter().map(|e| e.to_string()).collect(),
        residual: found.residual,
        tolerance,
        null_space_dim: found.null_space_dim,
        degenerate: found.degenerate,
        x_generator: found.family.x_map.iter().map(|e| e.to_string()).collect(),
        u_generator: found.family.u_map.iter().map(|e| e.to_string()).collect(),
        gauge: found.family.gauge.to_string(),
        pass,
    };
    let (status, code) = if pass {
        ("found", 0)
    } else {
        ("no-symmetry", 3)
    };
    let mut report = run.report(status, code);
    report.discovery = Some(payload);
    Ok(report)
}
