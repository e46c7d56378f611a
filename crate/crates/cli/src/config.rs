//! Problem configuration files.
//!
//! The format is a line-oriented, INI-style sectioned key/value text.
//! Comments start with `#` or `;` and run to the end of the line. Values
//! are scalars, comma-separated lists, or expressions in the language of
//! the core crate. Exactly one problem section must be present:
//!
//! ```text
//! [horizon]       M = 0            first period
//!                 N = 4            number of periods
//! [dims]          n = 3            state dimension
//!                 r = 2            control dimension (defaults to n)
//! [lagrangian]    L = u1^2 - u2^2              # optimal-control problem
//! [dynamics]      phi1 = x2 + u1  ... phin
//! [cv]            L = (xp1 - x1)^2             # or: first-order problem
//! [ho]            m = 2                        # or: order-m stencil problem
//!                 L = (x0_1 - 2*x1_1 + x2_1)^2
//! [control_set]   kind = free | box, lower = ..., upper = ... (inf allowed)
//! [boundary]      x_start = 1, 1, 0
//!                 x_end = 1, 1, 0.16           # entries may be `free`
//! [symmetry]      rho = 1, X1..Xn, u1..ur (optimal control only), Phi,
//!                 epsilon (optional)
//! [solver]        max_newton_iters, newton_tol, damping, min_step,
//!                 abnormal_fallback, maximality_grid_points
//! ```

use std::collections::BTreeSet;
use std::fmt;

use noether_dt_core::calcvar::{CVProblem, CvSymmetryFamily, HOProblem, HoSymmetryFamily};
use noether_dt_core::expr::{parse as parse_expr, Expr};
use noether_dt_core::model::{ControlSet, Horizon, ProblemSpec, SymmetryFamily};
use noether_dt_core::pmp::SolverOptions;

/// Configuration problem with the line it was detected at (when known).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

/// Which kind of problem the file defines.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSection {
    OptimalControl {
        lagrangian: Expr,
        dynamics: Vec<Expr>,
    },
    FirstOrder {
        lagrangian: Expr,
    },
    Stencil {
        order: usize,
        lagrangian: Expr,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrySection {
    pub param_count: usize,
    pub x_map: Vec<Expr>,
    /// Control deformations; present only for optimal-control problems.
    pub u_map: Vec<Expr>,
    pub gauge: Expr,
    pub epsilon: Option<f64>,
}

/// Parsed and type-checked configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub first: i64,
    pub periods: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub problem: ProblemSection,
    pub control_set: ControlSet,
    pub x_start: Vec<f64>,
    pub x_end: Vec<Option<f64>>,
    pub symmetry: Option<SymmetrySection>,
    pub solver: SolverOptions,
}

/// Core-level objects built from a validated document.
pub enum LoadedProblem {
    Oc {
        problem: ProblemSpec,
        family: Option<SymmetryFamily>,
    },
    Cv {
        problem: CVProblem,
        family: Option<CvSymmetryFamily>,
    },
    Ho {
        problem: HOProblem,
        family: Option<HoSymmetryFamily>,
    },
}

impl LoadedProblem {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LoadedProblem::Oc { .. } => "optimal-control",
            LoadedProblem::Cv { .. } => "first-order",
            LoadedProblem::Ho { .. } => "stencil",
        }
    }
}

struct RawEntry {
    key: String,
    value: String,
    line: usize,
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

fn parse_raw(text: &str) -> Result<Vec<RawSection>, ConfigError> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let without_comment = match raw_line.find(['#', ';']) {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = without_comment.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(Some(line_no), "unterminated section header"))?
                .trim()
                .to_owned();
            if name.is_empty() {
                return Err(err(Some(line_no), "empty section name"));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(err(Some(line_no), format!("duplicate section [{name}]")));
            }
            sections.push(RawSection {
                name,
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            err(
                Some(line_no),
                "expected `key = value` or a `[section]` header",
            )
        })?;
        let section = sections
            .last_mut()
            .ok_or_else(|| err(Some(line_no), "key/value pair before any [section]"))?;
        let key = key.trim().to_owned();
        if section.entries.iter().any(|e| e.key == key) {
            return Err(err(
                Some(line_no),
                format!("duplicate key `{key}` in [{}]", section.name),
            ));
        }
        section.entries.push(RawEntry {
            key,
            value: value.trim().to_owned(),
            line: line_no,
        });
    }
    Ok(sections)
}

struct SectionView<'a> {
    raw: &'a RawSection,
    used: BTreeSet<String>,
}

impl<'a> SectionView<'a> {
    fn new(raw: &'a RawSection) -> Self {
        SectionView {
            raw,
            used: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a RawEntry> {
        let entry = self.raw.entries.iter().find(|e| e.key == key);
        if entry.is_some() {
            self.used.insert(key.to_owned());
        }
        entry
    }

    fn require(&mut self, key: &str) -> Result<&'a RawEntry, ConfigError> {
        self.get(key).ok_or_else(|| {
            err(
                Some(self.raw.line),
                format!("section [{}] is missing key `{key}`", self.raw.name),
            )
        })
    }

    fn finish(self) -> Result<(), ConfigError> {
        for entry in &self.raw.entries {
            if !self.used.contains(&entry.key) {
                return Err(err(
                    Some(entry.line),
                    format!("unknown key `{}` in section [{}]", entry.key, self.raw.name),
                ));
            }
        }
        Ok(())
    }
}

fn parse_scalar<T: std::str::FromStr>(entry: &RawEntry, what: &str) -> Result<T, ConfigError> {
    entry.value.parse().map_err(|_| {
        err(
            Some(entry.line),
            format!("`{}` is not a valid {what}", entry.value),
        )
    })
}

fn parse_float_token(token: &str, line: usize) -> Result<f64, ConfigError> {
    match token {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse()
            .map_err(|_| err(Some(line), format!("`{other}` is not a number"))),
    }
}

fn parse_float_list(entry: &RawEntry, expected: usize) -> Result<Vec<f64>, ConfigError> {
    let items: Vec<f64> = entry
        .value
        .split(',')
        .map(|t| parse_float_token(t.trim(), entry.line))
        .collect::<Result<_, _>>()?;
    if items.len() != expected {
        return Err(err(
            Some(entry.line),
            format!(
                "`{}` lists {} values, expected {expected}",
                entry.key,
                items.len()
            ),
        ));
    }
    Ok(items)
}

fn parse_optional_list(entry: &RawEntry, expected: usize) -> Result<Vec<Option<f64>>, ConfigError> {
    let items: Vec<Option<f64>> = entry
        .value
        .split(',')
        .map(|t| {
            let t = t.trim();
            if t == "free" {
                Ok(None)
            } else {
                parse_float_token(t, entry.line).map(Some)
            }
        })
        .collect::<Result<_, _>>()?;
    if items.len() != expected {
        return Err(err(
            Some(entry.line),
            format!(
                "`{}` lists {} values, expected {expected}",
                entry.key,
                items.len()
            ),
        ));
    }
    Ok(items)
}

fn parse_expression(entry: &RawEntry) -> Result<Expr, ConfigError> {
    parse_expr(&entry.value).map_err(|e| {
        err(
            Some(entry.line),
            format!("in expression for `{}`: {e}", entry.key),
        )
    })
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let sections = parse_raw(text)?;
        let find = |name: &str| sections.iter().find(|s| s.name == name);
        let known = [
            "horizon",
            "dims",
            "lagrangian",
            "dynamics",
            "cv",
            "ho",
            "control_set",
            "boundary",
            "symmetry",
            "solver",
        ];
        for s in &sections {
            if !known.contains(&s.name.as_str()) {
                return Err(err(Some(s.line), format!("unknown section [{}]", s.name)));
            }
        }

        let mut horizon = SectionView::new(
            find("horizon").ok_or_else(|| err(None, "missing required section [horizon]"))?,
        );
        let first: i64 = parse_scalar(horizon.require("M")?, "integer")?;
        let periods_entry = horizon.require("N")?;
        let periods: i64 = parse_scalar(periods_entry, "integer")?;
        if periods <= 0 {
            return Err(err(
                Some(periods_entry.line),
                "empty horizon (N must be >= 1)",
            ));
        }
        let periods = periods as usize;
        horizon.finish()?;

        let mut dims = SectionView::new(
            find("dims").ok_or_else(|| err(None, "missing required section [dims]"))?,
        );
        let n_entry = dims.require("n")?;
        let state_dim: usize = parse_scalar(n_entry, "positive integer")?;
        if state_dim == 0 {
            return Err(err(Some(n_entry.line), "state dimension n must be >= 1"));
        }
        let control_dim: Option<usize> = match dims.get("r") {
            Some(entry) => {
                let r: usize = parse_scalar(entry, "positive integer")?;
                if r == 0 {
                    return Err(err(Some(entry.line), "control dimension r must be >= 1"));
                }
                Some(r)
            }
            None => None,
        };
        dims.finish()?;

        // exactly one problem section
        let problem_sections: Vec<&str> = ["lagrangian", "cv", "ho"]
            .into_iter()
            .filter(|name| find(name).is_some())
            .collect();
        if problem_sections.len() != 1 {
            return Err(err(
                None,
                "exactly one of [lagrangian] (+[dynamics]), [cv], or [ho] must be present",
            ));
        }
        let problem = match problem_sections[0] {
            "lagrangian" => {
                let mut lag = SectionView::new(find("lagrangian").unwrap());
                let lagrangian = parse_expression(lag.require("L")?)?;
                lag.finish()?;
                let dynamics_raw = find("dynamics")
                    .ok_or_else(|| err(None, "[lagrangian] requires a [dynamics] section"))?;
                let mut dynamics_view = SectionView::new(dynamics_raw);
                let mut dynamics = Vec::with_capacity(state_dim);
                for i in 1..=state_dim {
                    dynamics.push(parse_expression(
                        dynamics_view.require(&format!("phi{i}"))?,
                    )?);
                }
                dynamics_view.finish()?;
                ProblemSection::OptimalControl {
                    lagrangian,
                    dynamics,
                }
            }
            "cv" => {
                let mut cv = SectionView::new(find("cv").unwrap());
                let lagrangian = parse_expression(cv.require("L")?)?;
                cv.finish()?;
                ProblemSection::FirstOrder { lagrangian }
            }
            "ho" => {
                let mut ho = SectionView::new(find("ho").unwrap());
                let order_entry = ho.require("m")?;
                let order: usize = parse_scalar(order_entry, "positive integer")?;
                if order == 0 {
                    return Err(err(Some(order_entry.line), "stencil order m must be >= 1"));
                }
                let lagrangian = parse_expression(ho.require("L")?)?;
                ho.finish()?;
                ProblemSection::Stencil { order, lagrangian }
            }
            _ => unreachable!(),
        };
        if matches!(
            problem,
            ProblemSection::FirstOrder { .. } | ProblemSection::Stencil { .. }
        ) && find("dynamics").is_some()
        {
            return Err(err(
                Some(find("dynamics").unwrap().line),
                "[dynamics] only applies to [lagrangian] problems",
            ));
        }

        // effective control dimension of the (possibly reduced) problem
        let effective_r = match &problem {
            ProblemSection::OptimalControl { .. } => control_dim
                .ok_or_else(|| err(None, "[dims] must set r for an optimal-control problem"))?,
            ProblemSection::FirstOrder { .. } | ProblemSection::Stencil { .. } => {
                if let Some(r) = control_dim {
                    if r != state_dim {
                        return Err(err(
                            None,
                            "variational problems reduce with r = n; omit r or set it to n",
                        ));
                    }
                }
                state_dim
            }
        };

        let control_set = match find("control_set") {
            None => ControlSet::Free,
            Some(raw) => {
                let mut view = SectionView::new(raw);
                let kind = view.require("kind")?;
                let set = match kind.value.as_str() {
                    "free" => ControlSet::Free,
                    "box" => {
                        let lower = parse_float_list(view.require("lower")?, effective_r)?;
                        let upper = parse_float_list(view.require("upper")?, effective_r)?;
                        ControlSet::Box { lower, upper }
                    }
                    other => {
                        return Err(err(
                            Some(kind.line),
                            format!("control set kind `{other}` is not `free` or `box`"),
                        ))
                    }
                };
                view.finish()?;
                set
            }
        };
        if matches!(
            problem,
            ProblemSection::FirstOrder { .. } | ProblemSection::Stencil { .. }
        ) && control_set != ControlSet::Free
        {
            return Err(err(
                None,
                "variational problems have unconstrained controls; use kind = free",
            ));
        }

        let boundary_len = match &problem {
            ProblemSection::Stencil { order, .. } => state_dim * order,
            _ => state_dim,
        };
        let mut boundary = SectionView::new(
            find("boundary").ok_or_else(|| err(None, "missing required section [boundary]"))?,
        );
        let x_start = parse_float_list(boundary.require("x_start")?, boundary_len)?;
        let x_end_entry = boundary.require("x_end")?;
        let x_end = parse_optional_list(x_end_entry, boundary_len)?;
        if !matches!(problem, ProblemSection::OptimalControl { .. })
            && x_end.iter().any(Option::is_none)
        {
            return Err(err(
                Some(x_end_entry.line),
                "variational problems need every terminal component fixed",
            ));
        }
        boundary.finish()?;

        let symmetry = match find("symmetry") {
            None => None,
            Some(raw) => {
                let mut view = SectionView::new(raw);
                let param_count: usize = parse_scalar(view.require("rho")?, "positive integer")?;
                if param_count == 0 {
                    return Err(err(Some(raw.line), "rho must be >= 1"));
                }
                let mut x_map = Vec::with_capacity(state_dim);
                for i in 1..=state_dim {
                    x_map.push(parse_expression(view.require(&format!("X{i}"))?)?);
                }
                let mut u_map = Vec::new();
                if matches!(problem, ProblemSection::OptimalControl { .. }) {
                    for i in 1..=effective_r {
                        u_map.push(parse_expression(view.require(&format!("u{i}"))?)?);
                    }
                }
                let gauge = parse_expression(view.require("Phi")?)?;
                let epsilon = match view.get("epsilon") {
                    Some(entry) => Some(parse_scalar::<f64>(entry, "number")?),
                    None => None,
                };
                view.finish()?;
                Some(SymmetrySection {
                    param_count,
                    x_map,
                    u_map,
                    gauge,
                    epsilon,
                })
            }
        };

        let mut solver = SolverOptions::default();
        if let Some(raw) = find("solver") {
            let mut view = SectionView::new(raw);
            if let Some(entry) = view.get("max_newton_iters") {
                solver.max_newton_iters = parse_scalar(entry, "positive integer")?;
            }
            if let Some(entry) = view.get("newton_tol") {
                solver.newton_tol = parse_scalar(entry, "number")?;
            }
            if let Some(entry) = view.get("damping") {
                solver.damping = parse_scalar(entry, "number")?;
            }
            if let Some(entry) = view.get("min_step") {
                solver.min_step = parse_scalar(entry, "number")?;
            }
            if let Some(entry) = view.get("abnormal_fallback") {
                solver.abnormal_fallback = parse_scalar(entry, "boolean (true/false)")?;
            }
            if let Some(entry) = view.get("maximality_grid_points") {
                solver.maximality_grid_points = parse_scalar(entry, "integer")?;
            }
            view.finish()?;
        }

        Ok(ConfigDocument {
            first,
            periods,
            state_dim,
            control_dim: effective_r,
            problem,
            control_set,
            x_start,
            x_end,
            symmetry,
            solver,
        })
    }

    /// Canonical re-serialization; parsing the output yields an equal
    /// document.
    pub fn to_ini_string(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let fl = |v: f64| -> String {
            if v == f64::INFINITY {
                "inf".into()
            } else if v == f64::NEG_INFINITY {
                "-inf".into()
            } else {
                format!("{v}")
            }
        };
        writeln!(out, "[horizon]").unwrap();
        writeln!(out, "M = {}", self.first).unwrap();
        writeln!(out, "N = {}", self.periods).unwrap();
        writeln!(out, "\n[dims]").unwrap();
        writeln!(out, "n = {}", self.state_dim).unwrap();
        writeln!(out, "r = {}", self.control_dim).unwrap();
        match &self.problem {
            ProblemSection::OptimalControl {
                lagrangian,
                dynamics,
            } => {
                writeln!(out, "\n[lagrangian]").unwrap();
                writeln!(out, "L = {lagrangian}").unwrap();
                writeln!(out, "\n[dynamics]").unwrap();
                for (i, phi) in dynamics.iter().enumerate() {
                    writeln!(out, "phi{} = {phi}", i + 1).unwrap();
                }
            }
            ProblemSection::FirstOrder { lagrangian } => {
                writeln!(out, "\n[cv]").unwrap();
                writeln!(out, "L = {lagrangian}").unwrap();
            }
            ProblemSection::Stencil { order, lagrangian } => {
                writeln!(out, "\n[ho]").unwrap();
                writeln!(out, "m = {order}").unwrap();
                writeln!(out, "L = {lagrangian}").unwrap();
            }
        }
        writeln!(out, "\n[control_set]").unwrap();
        match &self.control_set {
            ControlSet::Free => writeln!(out, "kind = free").unwrap(),
            ControlSet::Box { lower, upper } => {
                writeln!(out, "kind = box").unwrap();
                let join = |v: &[f64]| v.iter().map(|&x| fl(x)).collect::<Vec<_>>().join(", ");
                writeln!(out, "lower = {}", join(lower)).unwrap();
                writeln!(out, "upper = {}", join(upper)).unwrap();
            }
        }
        writeln!(out, "\n[boundary]").unwrap();
        writeln!(
            out,
            "x_start = {}",
            self.x_start
                .iter()
                .map(|&x| fl(x))
                .collect::<Vec<_>>()
                .join(", ")
        )
        .unwrap();
        writeln!(
            out,
            "x_end = {}",
            self.x_end
                .iter()
                .map(|x| match x {
                    Some(v) => fl(*v),
                    None => "free".into(),
                })
                .collect::<Vec<_>>()
                .join(", ")
        )
        .unwrap();
        if let Some(sym) = &self.symmetry {
            writeln!(out, "\n[symmetry]").unwrap();
            writeln!(out, "rho = {}", sym.param_count).unwrap();
            for (i, x) in sym.x_map.iter().enumerate() {
                writeln!(out, "X{} = {x}", i + 1).unwrap();
            }
            for (i, u) in sym.u_map.iter().enumerate() {
                writeln!(out, "u{} = {u}", i + 1).unwrap();
            }
            writeln!(out, "Phi = {}", sym.gauge).unwrap();
            if let Some(eps) = sym.epsilon {
                writeln!(out, "epsilon = {}", fl(eps)).unwrap();
            }
        }
        writeln!(out, "\n[solver]").unwrap();
        writeln!(out, "max_newton_iters = {}", self.solver.max_newton_iters).unwrap();
        writeln!(out, "newton_tol = {}", fl(self.solver.newton_tol)).unwrap();
        writeln!(out, "damping = {}", fl(self.solver.damping)).unwrap();
        writeln!(out, "min_step = {}", fl(self.solver.min_step)).unwrap();
        writeln!(out, "abnormal_fallback = {}", self.solver.abnormal_fallback).unwrap();
        writeln!(
            out,
            "maximality_grid_points = {}",
            self.solver.maximality_grid_points
        )
        .unwrap();
        out
    }

    /// Build the core-level problem and symmetry family, running the core
    /// validations (vocabulary, identity-at-zero checks, bounds).
    pub fn build(&self) -> Result<LoadedProblem, ConfigError> {
        let horizon =
            Horizon::new(self.first, self.periods).map_err(|e| err(None, e.to_string()))?;
        match &self.problem {
            ProblemSection::OptimalControl {
                lagrangian,
                dynamics,
            } => {
                let problem = ProblemSpec::new(
                    horizon,
                    self.state_dim,
                    self.control_dim,
                    lagrangian.clone(),
                    dynamics.clone(),
                    self.control_set.clone(),
                    self.x_start.clone(),
                    self.x_end.clone(),
                )
                .map_err(|e| err(None, e.to_string()))?;
                let family = match &self.symmetry {
                    None => None,
                    Some(sym) => Some(
                        SymmetryFamily::new(
                            sym.param_count,
                            sym.x_map.clone(),
                            sym.u_map.clone(),
                            sym.gauge.clone(),
                            sym.epsilon,
                        )
                        .map_err(|e| err(None, format!("[symmetry]: {e}")))?,
                    ),
                };
                Ok(LoadedProblem::Oc { problem, family })
            }
            ProblemSection::FirstOrder { lagrangian } => {
                let x_end: Vec<f64> = self.x_end.iter().map(|v| v.unwrap()).collect();
                let problem = CVProblem::new(
                    horizon,
                    self.state_dim,
                    lagrangian.clone(),
                    self.x_start.clone(),
                    x_end,
                )
                .map_err(|e| err(None, e.to_string()))?;
                let family = match &self.symmetry {
                    None => None,
                    Some(sym) => Some(
                        CvSymmetryFamily::new(
                            sym.param_count,
                            sym.x_map.clone(),
                            sym.gauge.clone(),
                        )
                        .map_err(|e| err(None, format!("[symmetry]: {e}")))?,
                    ),
                };
                Ok(LoadedProblem::Cv { problem, family })
            }
            ProblemSection::Stencil { order, lagrangian } => {
                let n = self.state_dim;
                let chunk =
                    |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(n).map(|c| c.to_vec()).collect() };
                let x_end: Vec<f64> = self.x_end.iter().map(|v| v.unwrap()).collect();
                let problem = HOProblem::new(
                    horizon,
                    *order,
                    n,
                    lagrangian.clone(),
                    chunk(&self.x_start),
                    chunk(&x_end),
                )
                .map_err(|e| err(None, e.to_string()))?;
                let family = match &self.symmetry {
                    None => None,
                    Some(sym) => Some(
                        HoSymmetryFamily::new(
                            sym.param_count,
                            *order,
                            sym.x_map.clone(),
                            sym.gauge.clone(),
                        )
                        .map_err(|e| err(None, format!("[symmetry]: {e}")))?,
                    ),
                };
                Ok(LoadedProblem::Ho { problem, family })
            }
        }
    }
}
