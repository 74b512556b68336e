//! The JSON configuration document and its validation.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use hjh_core::cell::CellOptions;
use hjh_core::effective_solver::BoxOptions;
use hjh_core::geometry::{OscillationProfile, Vec2};
use hjh_core::harness::{ConvergenceOptions, PropertyOptions};
use hjh_core::model::{disc_controls, CostPreset, DynamicsPreset, ProblemInstance, Side, SideSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub instance: InstanceBlock,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub run: RunBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceBlock {
    pub left: SideBlock,
    pub right: SideBlock,
    /// The discount rate `lambda`.
    #[serde(default = "one")]
    pub discount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideBlock {
    pub controls: ControlSampling,
    #[serde(default = "eikonal")]
    pub dynamics: DynamicsPreset<f64>,
    pub cost: CostPreset<f64>,
}

/// How the control set of one side is sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSampling {
    /// `count` unit vectors at equal angles, plus the origin when `center`.
    Disc {
        count: usize,
        #[serde(default = "yes")]
        center: bool,
    },
    Explicit { points: Vec<[f64; 2]> },
}

/// Fourier coefficients of the interface profile `g`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryBlock {
    pub fourier_sin: Vec<f64>,
    pub fourier_cos: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub cell: CellOptions,
    #[serde(rename = "box")]
    pub box_solver: BoxOptions,
    pub table: TableBlock,
    /// Truncation level `K` of `E_K`; `2 M_l / delta0` when absent.
    pub truncation: Option<f64>,
    pub grid: GridBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableBlock {
    pub z2: Vec<f64>,
    pub p2: Vec<f64>,
}

impl Default for TableBlock {
    fn default() -> Self {
        Self {
            z2: vec![0.0],
            p2: (-10..=10).map(|k| 0.5 * f64::from(k)).collect(),
        }
    }
}

/// The box `[-z1_extent, z1_extent] x [-z2_extent, z2_extent]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub z1_extent: f64,
    pub z2_extent: f64,
    /// Spacing of the single-solve commands; `run.eps / 8` when absent.
    pub h: Option<f64>,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            z1_extent: 1.0,
            z2_extent: 0.5,
            h: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    /// Scale of `solve-eps` and of the property suite.
    pub eps: f64,
    pub eps_list: Vec<f64>,
    pub margin_fraction: f64,
    pub props: PropsBlock,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            eps: 0.2,
            eps_list: vec![0.4, 0.2, 0.1],
            margin_fraction: 0.2,
            props: PropsBlock::default(),
        }
    }
}

/// Sample densities of `props`; solver knobs come from the solver block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropsBlock {
    pub seed: u64,
    pub z2_samples: Vec<f64>,
    pub p2_grid: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub rho_p2: Vec<f64>,
    pub comparison_pairs: usize,
    pub hamiltonian_samples: usize,
    pub trajectories: usize,
    pub trajectory_dt: f64,
    pub truncation: f64,
    pub cost_shift: f64,
    pub slack_scale: f64,
}

impl Default for PropsBlock {
    fn default() -> Self {
        let d = PropertyOptions::default();
        Self {
            seed: d.seed,
            z2_samples: d.z2_samples,
            p2_grid: d.p2_grid,
            rho_values: d.rho_values,
            rho_p2: d.rho_p2,
            comparison_pairs: d.comparison_pairs,
            hamiltonian_samples: d.hamiltonian_samples,
            trajectories: d.trajectories,
            trajectory_dt: d.trajectory_dt,
            truncation: d.truncation,
            cost_shift: d.cost_shift,
            slack_scale: d.slack_scale,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn eikonal() -> DynamicsPreset<f64> {
    DynamicsPreset::Eikonal
}

/// Why a document could not be read.
#[derive(Debug)]
pub enum ParseFailure {
    Syntax { line: usize, column: usize, message: String },
    Override(String),
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseFailure::Syntax { line, column, message } => {
                write!(f, "config parse error at line {line}, column {column}: {message}")
            }
            ParseFailure::Override(m) => write!(f, "bad --tol-override: {m}"),
        }
    }
}

fn syntax(e: serde_json::Error) -> ParseFailure {
    ParseFailure::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Sets `path` (dot separated) to `raw`, read as JSON when it parses and
/// as a string otherwise. Missing intermediate objects are created.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<(), String> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("malformed key '{path}'"));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("'{path}' passes through a non-object at '{key}'"))?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| format!("'{path}' does not end in an object"))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the document and applies `KEY=VAL` overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ConfigDocument, ParseFailure> {
    let doc: ConfigDocument = serde_json::from_str(text).map_err(syntax)?;
    if overrides.is_empty() {
        return Ok(doc);
    }
    let mut value: Value = serde_json::from_str(text).map_err(syntax)?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ParseFailure::Override(format!("'{item}' is not KEY=VAL")))?;
        apply_override(&mut value, key.trim(), raw.trim()).map_err(ParseFailure::Override)?;
    }
    serde_json::from_value(value).map_err(|e| ParseFailure::Override(e.to_string()))
}

impl ConfigDocument {
    /// Every tolerance, spacing and rate must be strictly positive.
    pub fn validate(&self) -> Result<(), String> {
        let mut bad: Vec<String> = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} = {v}"));
            }
        };
        let s = &self.solver;
        positive("instance.discount", self.instance.discount);
        positive("solver.cell.h", s.cell.h);
        positive("solver.cell.eps_fix", s.cell.eps_fix);
        positive("solver.cell.ergodic_tol", s.cell.ergodic_tol);
        positive("solver.cell.rho_tol", s.cell.rho_tol);
        for e in &s.cell.eta_schedule {
            positive("solver.cell.eta_schedule[]", *e);
        }
        if let Some(r) = s.cell.rho0 {
            positive("solver.cell.rho0", r);
        }
        positive("solver.box.eps_fix", s.box_solver.eps_fix);
        if let Some(k) = s.truncation {
            positive("solver.truncation", k);
        }
        positive("solver.grid.z1_extent", s.grid.z1_extent);
        positive("solver.grid.z2_extent", s.grid.z2_extent);
        if let Some(h) = s.grid.h {
            positive("solver.grid.h", h);
        }
        positive("run.eps", self.run.eps);
        for e in &self.run.eps_list {
            positive("run.eps_list[]", *e);
        }
        positive("run.props.trajectory_dt", self.run.props.trajectory_dt);
        positive("run.props.truncation", self.run.props.truncation);
        if s.cell.eta_schedule.is_empty() {
            bad.push("solver.cell.eta_schedule is empty".into());
        }
        if self.run.eps_list.is_empty() {
            bad.push("run.eps_list is empty".into());
        }
        if s.table.z2.is_empty() || s.table.p2.is_empty() {
            bad.push("solver.table axes must be non-empty".into());
        }
        if !(0.0..0.5).contains(&self.run.margin_fraction) {
            bad.push(format!("run.margin_fraction = {} outside [0, 0.5)", self.run.margin_fraction));
        }
        if self.run.props.slack_scale.is_nan() || self.run.props.slack_scale < 0.0 {
            bad.push("run.props.slack_scale must be non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(format!("invalid configuration: {}", bad.join(", ")))
        }
    }

    pub fn profile(&self) -> hjh_core::Result<OscillationProfile<f64>> {
        OscillationProfile::new(self.geometry.fourier_sin.clone(), self.geometry.fourier_cos.clone())
    }

    pub fn instance(&self) -> hjh_core::Result<ProblemInstance<f64>> {
        let side = |side: Side, b: &SideBlock| {
            let controls = match &b.controls {
                ControlSampling::Disc { count, center } => disc_controls(*count, *center),
                ControlSampling::Explicit { points } => {
                    points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
                }
            };
            SideSpec::new(side, controls, b.dynamics.clone(), b.cost.clone())
        };
        ProblemInstance::new(
            side(Side::Left, &self.instance.left),
            side(Side::Right, &self.instance.right),
            self.profile()?,
            self.instance.discount,
        )
    }

    /// Spacing of `solve-eps` and `solve-limit`.
    pub fn spacing(&self) -> f64 {
        self.solver
            .grid
            .h
            .unwrap_or(self.run.eps / hjh_core::epsilon_solver::CELLS_PER_PERIOD)
    }

    pub fn convergence_options(&self) -> ConvergenceOptions {
        ConvergenceOptions {
            z1_extent: self.solver.grid.z1_extent,
            z2_extent: self.solver.grid.z2_extent,
            margin_fraction: self.run.margin_fraction,
            truncation: self.solver.truncation,
            solver: self.solver.box_solver.clone(),
        }
    }

    pub fn property_options(&self) -> PropertyOptions {
        let p = &self.run.props;
        PropertyOptions {
            seed: p.seed,
            z2_samples: p.z2_samples.clone(),
            p2_grid: p.p2_grid.clone(),
            rho_values: p.rho_values.clone(),
            rho_p2: p.rho_p2.clone(),
            comparison_pairs: p.comparison_pairs,
            hamiltonian_samples: p.hamiltonian_samples,
            trajectories: p.trajectories,
            trajectory_dt: p.trajectory_dt,
            eps: self.run.eps,
            truncation: p.truncation,
            cost_shift: p.cost_shift,
            slack_scale: p.slack_scale,
            z1_extent: self.solver.grid.z1_extent,
            z2_extent: self.solver.grid.z2_extent,
            cell: self.solver.cell.clone(),
            solver: self.solver.box_solver.clone(),
        }
    }
}
