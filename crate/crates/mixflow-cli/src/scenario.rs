//! Scenario files: TOML with nested sections, schema-validated into solver
//! inputs. Initial data come either as arithmetic expressions of `x` (and the
//! sweep variable `amp`) or as tabulated node values.

use crate::expr::Expr;
use mixflow_core::diffusion::{CModel, CTable};
use mixflow_core::grid::Grid1d;
use mixflow_core::linalg::Mat;
use mixflow_core::linear::{BoundaryFluxForm, StepperConfig};
use mixflow_core::mixture::{PrimitiveState, SpeciesParams};
use mixflow_core::norms::NormIndices;
use mixflow_core::picard::PicardConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario field '{field}': {reason}")]
    Validation { field: String, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// --- raw file schema ---

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    params: RawParams,
    grid: RawGrid,
    time: RawTime,
    initial: RawInitial,
    #[serde(default)]
    matrix: RawMatrix,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    m: Vec<f64>,
    #[serde(default = "one")]
    mu: f64,
    #[serde(default)]
    nu: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_interior: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    t: f64,
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    n_steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    a1: f64,
    a2: f64,
    #[serde(default)]
    rho: Option<Vec<String>>,
    #[serde(default = "zero_expr")]
    u: String,
    #[serde(default)]
    rho_table: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    u_table: Option<Vec<f64>>,
    #[serde(default = "one")]
    amp: f64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    theta: f64,
    bc_form: String,
    delta: f64,
    abs_tol: f64,
    res_tol: f64,
    max_iter: usize,
    t_min: f64,
    ball_factor: f64,
    p: f64,
    q: f64,
}

impl Default for RawSolver {
    fn default() -> Self {
        Self {
            theta: 1.0,
            bc_form: "b-weighted".into(),
            delta: 0.1,
            abs_tol: 1e-9,
            res_tol: 0.5,
            max_iter: 50,
            t_min: 1e-4,
            ball_factor: 10.0,
            p: 2.0,
            q: 2.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    snapshot_stride: usize,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self { snapshot_stride: 1 }
    }
}

fn one() -> f64 {
    1.0
}

fn zero_expr() -> String {
    "0".to_string()
}

// --- validated scenario ---

/// Fully validated scenario, ready to drive the solvers.
pub struct Scenario {
    pub params: SpeciesParams<f64>,
    pub grid: Grid1d<f64>,
    pub t_horizon: f64,
    pub n_steps: usize,
    pub initial: PrimitiveState<f64>,
    pub bounds: (f64, f64),
    pub amp: f64,
    pub model: CModel<f64>,
    pub picard: PicardConfig<f64>,
    pub snapshot_stride: usize,
    /// Raw file bytes, hashed into the output manifest.
    pub raw_bytes: Vec<u8>,
}

impl Scenario {
    pub fn n_species(&self) -> usize {
        self.params.n_species()
    }
}

/// Sweep-time substitutions applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub amp: Option<f64>,
    pub t: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_interior: Option<usize>,
}

/// Load and validate a scenario file with optional sweep overrides.
pub fn load_scenario(path: &Path, over: &Overrides) -> Result<Scenario, ScenarioError> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut raw: RawScenario = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count())
            .unwrap_or(0);
        ScenarioError::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    if let Some(t) = over.t {
        raw.time.t = t;
    }
    if let Some(n) = over.n_steps {
        raw.time.n_steps = Some(n);
        raw.time.dt = None;
    }
    if let Some(n) = over.n_interior {
        raw.grid.n_interior = n;
    }
    build_scenario(raw, bytes, over.amp, path.parent())
}

fn build_scenario(
    raw: RawScenario,
    raw_bytes: Vec<u8>,
    amp_override: Option<f64>,
    base_dir: Option<&Path>,
) -> Result<Scenario, ScenarioError> {
    let n = raw.params.m.len();
    if n < 2 {
        return Err(invalid("params.m", "need at least 2 species"));
    }
    if raw.params.m.iter().any(|&m| m <= 0.0) {
        return Err(invalid("params.m", "must be positive"));
    }
    let params = SpeciesParams::new(raw.params.m.clone(), raw.params.mu, raw.params.nu)
        .map_err(|e| invalid("params", e.to_string()))?;

    if raw.grid.n_interior < 3 {
        return Err(invalid("grid.n_interior", "need at least 3 interior nodes"));
    }
    let grid = Grid1d::new(raw.grid.n_interior);
    let nn = grid.len();

    if raw.time.t <= 0.0 {
        return Err(invalid("time.t", "horizon must be positive"));
    }
    let n_steps = match (raw.time.n_steps, raw.time.dt) {
        (Some(n), None) => n,
        (None, Some(dt)) if dt > 0.0 => (raw.time.t / dt).round().max(1.0) as usize,
        (None, None) => 32,
        (Some(_), Some(_)) => {
            return Err(invalid("time", "give either dt or n_steps, not both"));
        }
        _ => return Err(invalid("time.dt", "must be positive")),
    };

    if raw.initial.a1 <= 0.0 || raw.initial.a2 < raw.initial.a1 {
        return Err(invalid("initial", "need 0 < a1 <= a2"));
    }
    let amp = amp_override.unwrap_or(raw.initial.amp);

    let rho_fields: Vec<Vec<f64>> = match (&raw.initial.rho, &raw.initial.rho_table) {
        (Some(exprs), None) => {
            if exprs.len() != n {
                return Err(invalid(
                    "initial.rho",
                    format!("expected {n} expressions, got {}", exprs.len()),
                ));
            }
            let mut out = Vec::with_capacity(n);
            for (k, src) in exprs.iter().enumerate() {
                let e = Expr::parse(src)
                    .map_err(|err| invalid(&format!("initial.rho[{k}]"), err.to_string()))?;
                out.push(grid.sample(|x| e.eval(x, amp)));
            }
            out
        }
        (None, Some(table)) => {
            if table.len() != n {
                return Err(invalid(
                    "initial.rho_table",
                    format!("expected {n} rows, got {}", table.len()),
                ));
            }
            for (k, row) in table.iter().enumerate() {
                if row.len() != nn {
                    return Err(invalid(
                        "initial.rho_table",
                        format!("row {k} length {} does not match the {nn}-node grid", row.len()),
                    ));
                }
            }
            table.clone()
        }
        (Some(_), Some(_)) => {
            return Err(invalid("initial", "give either rho or rho_table, not both"))
        }
        (None, None) => return Err(invalid("initial", "missing rho or rho_table")),
    };
    for (k, field) in rho_fields.iter().enumerate() {
        for (i, &v) in field.iter().enumerate() {
            if v < raw.initial.a1 || v > raw.initial.a2 {
                return Err(invalid(
                    &format!("initial.rho[{k}]"),
                    format!(
                        "value {v} at node {i} leaves [a1, a2] = [{}, {}]",
                        raw.initial.a1, raw.initial.a2
                    ),
                ));
            }
        }
    }

    let u = match &raw.initial.u_table {
        Some(table) => {
            if table.len() != nn {
                return Err(invalid("initial.u_table", "length"));
            }
            table.clone()
        }
        None => {
            let e = Expr::parse(&raw.initial.u)
                .map_err(|err| invalid("initial.u", err.to_string()))?;
            grid.sample(|x| e.eval(x, amp))
        }
    };
    let initial =
        PrimitiveState::new(rho_fields, u).map_err(|e| invalid("initial", e.to_string()))?;

    let model = match raw.matrix.kind.as_deref() {
        None | Some("exemplary") => CModel::Exemplary,
        Some("table") => {
            let rel = raw
                .matrix
                .path
                .as_ref()
                .ok_or_else(|| invalid("matrix.path", "required for kind = \"table\""))?;
            let full = match base_dir {
                Some(d) if rel.is_relative() => d.join(rel),
                _ => rel.clone(),
            };
            CModel::Table(load_c_table(&full, n)?)
        }
        Some(other) => {
            return Err(invalid(
                "matrix.kind",
                format!("unknown kind '{other}' (use exemplary or table)"),
            ))
        }
    };

    let bc_form = match raw.solver.bc_form.as_str() {
        "b-weighted" => BoundaryFluxForm::BWeighted,
        "reduced" => BoundaryFluxForm::Reduced,
        other => {
            return Err(invalid(
                "solver.bc_form",
                format!("unknown form '{other}' (use b-weighted or reduced)"),
            ))
        }
    };
    if !(raw.solver.theta > 0.0 && raw.solver.theta <= 1.0) {
        return Err(invalid("solver.theta", "must lie in (0, 1]"));
    }
    if raw.solver.p < 1.0 || raw.solver.q < 1.0 {
        return Err(invalid("solver", "norm indices p, q must be >= 1"));
    }
    let picard = PicardConfig {
        max_iter: raw.solver.max_iter,
        abs_tol: raw.solver.abs_tol,
        res_tol: raw.solver.res_tol,
        ball_factor: raw.solver.ball_factor,
        delta: raw.solver.delta,
        t_min: raw.solver.t_min,
        idx: NormIndices {
            p: raw.solver.p,
            q: raw.solver.q,
        },
        stepper: StepperConfig {
            theta: raw.solver.theta,
            bc_form,
        },
    };

    if raw.output.snapshot_stride == 0 {
        return Err(invalid("output.snapshot_stride", "must be at least 1"));
    }

    Ok(Scenario {
        params,
        grid,
        t_horizon: raw.time.t,
        n_steps,
        initial,
        bounds: (raw.initial.a1, raw.initial.a2),
        amp,
        model,
        picard,
        snapshot_stride: raw.output.snapshot_stride,
        raw_bytes,
    })
}

#[derive(Debug, Deserialize)]
struct RawCTable {
    sample: Vec<RawCSample>,
}

#[derive(Debug, Deserialize)]
struct RawCSample {
    y: Vec<f64>,
    c: Vec<f64>,
}

/// Load a tabulated flux matrix; each sample is validated against the
/// structural identities on construction and rejected on failure.
pub fn load_c_table(path: &Path, n: usize) -> Result<CTable<f64>, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let raw: RawCTable = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count())
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let mut samples = Vec::with_capacity(raw.sample.len());
    for (i, s) in raw.sample.iter().enumerate() {
        if s.y.len() != n || s.c.len() != n * n {
            return Err(invalid(
                &format!("sample[{i}]"),
                format!("expected y of length {n} and c of length {}", n * n),
            ));
        }
        let mat = Mat::from_fn(n, |r, c| s.c[r * n + c]);
        samples.push((s.y.clone(), mat));
    }
    CTable::new(samples).map_err(|e| invalid("matrix table", e.to_string()))
}
