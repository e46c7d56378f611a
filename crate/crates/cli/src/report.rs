//! Machine-readable run reports.
//!
//! One JSON document per invocation on standard output (or `--out`),
//! diagnostics on standard error. Floats are printed with 17 significant
//! digits so every value round-trips bit-exactly through the report.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use noether_dt_core::pmp::{Branch, ResidualReport, SolveFailure, SolveOutcome};

#[derive(Serialize)]
pub struct RunReport {
    pub command: String,
    pub argv: Vec<String>,
    pub config: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolvePayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariance: Option<InvariancePayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conservation: Option<ConservationPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualSequencePayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discovery: Option<DiscoveryPayload>,
}

#[derive(Serialize)]
pub struct ResidualReportPayload {
    pub dynamics: f64,
    pub adjoint: f64,
    pub stationarity: f64,
    pub maximality_ok: bool,
    pub worst_k: i64,
}

impl From<&ResidualReport> for ResidualReportPayload {
    fn from(r: &ResidualReport) -> Self {
        ResidualReportPayload {
            dynamics: r.dynamics_res,
            adjoint: r.adjoint_res,
            stationarity: r.stationarity_res,
            maximality_ok: r.maximality_ok,
            worst_k: r.worst_k,
        }
    }
}

#[derive(Serialize)]
pub struct SolvePayload {
    pub kind: String,
    pub branch: String,
    pub converged: bool,
    pub fallback_engaged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub psi0: f64,
    pub cost: f64,
    pub residuals: ResidualReportPayload,
    pub states_k: Vec<i64>,
    pub states: Vec<Vec<f64>>,
    pub controls_k: Vec<i64>,
    pub controls: Vec<Vec<f64>>,
    pub costates_k: Vec<i64>,
    pub costates: Vec<Vec<f64>>,
    /// Flat `x(k)` sequence in the original coordinates, present for
    /// reduced variational problems.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_states: Option<Vec<Vec<f64>>>,
}

impl SolvePayload {
    pub fn new(kind: &str, out: &SolveOutcome, cost: f64) -> Self {
        let t = &out.extremal.trajectory;
        SolvePayload {
            kind: kind.to_owned(),
            branch: match out.branch {
                Branch::Normal => "normal".into(),
                Branch::Abnormal => "abnormal".into(),
            },
            converged: out.converged,
            fallback_engaged: out.fallback_engaged,
            iterations: out.iterations,
            failure: out.failure.as_ref().map(describe_failure),
            psi0: out.extremal.psi0,
            cost,
            residuals: (&out.report).into(),
            states_k: (t.first..=t.last()).collect(),
            states: t.x.clone(),
            controls_k: (t.first..t.last()).collect(),
            controls: t.u.clone(),
            costates_k: (t.first + 1..=t.last()).collect(),
            costates: out.extremal.psi.clone(),
            flat_states: None,
        }
    }
}

pub fn describe_failure(f: &SolveFailure) -> String {
    match f {
        SolveFailure::MaxIterations { residual } => {
            format!("iteration limit reached with residual {residual:e}")
        }
        SolveFailure::LineSearchStalled { residual } => {
            format!("line search stalled at residual {residual:e}")
        }
        SolveFailure::SingularJacobian {
            iteration,
            cond_estimate,
        } => format!(
            "singular Jacobian at iteration {iteration} (condition estimate {cond_estimate:e})"
        ),
        SolveFailure::ReducedSystemMismatch { residual } => format!(
            "abnormal branch solved its reduced system but the full optimality \
             residual is {residual:e}"
        ),
    }
}

#[derive(Serialize)]
pub struct InvarianceParamPayload {
    pub index: usize,
    pub lagrangian: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<Vec<f64>>,
    pub max_abs: f64,
}

#[derive(Serialize)]
pub struct InvariancePayload {
    pub kind: String,
    pub tolerance: f64,
    pub seed: u64,
    pub sample_count: usize,
    pub points_checked: usize,
    pub parameters: Vec<InvarianceParamPayload>,
    pub max_abs: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct ConservationParamPayload {
    pub index: usize,
    pub values: Vec<f64>,
    pub drift: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct ConservationPayload {
    pub kind: String,
    pub k: Vec<i64>,
    pub endpoint_included: bool,
    pub parameters: Vec<ConservationParamPayload>,
    pub pass: bool,
    /// Present when this run solved for the extremal itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolvePayload>,
}

#[derive(Serialize)]
pub struct ResidualSequencePayload {
    pub kind: String,
    pub k: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    pub max_abs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

#[derive(Serialize)]
pub struct DiscoveryPayload {
    pub dictionary: Vec<String>,
    pub residual: f64,
    pub tolerance: f64,
    pub null_space_dim: usize,
    pub degenerate: bool,
    pub x_generator: Vec<String>,
    pub u_generator: Vec<String>,
    pub gauge: String,
    pub pass: bool,
}

/// Pretty printer that formats every float with 17 significant digits.
struct SciFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for SciFormatter<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object_value(writer)
    }
}

/// Render a report as pretty JSON with bit-exact floats.
pub fn render(report: &RunReport) -> String {
    let mut buf = Vec::new();
    let formatter = SciFormatter {
        inner: PrettyFormatter::new(),
    };
    let mut ser = Serializer::with_formatter(&mut buf, formatter);
    report
        .serialize(&mut ser)
        .expect("report serialization cannot fail");
    let mut text = String::from_utf8(buf).expect("serde_json emits UTF-8");
    text.push('\n');
    text
}
