//! Command dispatch, the run directory and its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use log::{error, info};
use serde::Serialize;
use sha2::{Digest, Sha256};

use hjh_core::cell::{build_effective_table, ek_modify, EffectiveTable};
use hjh_core::effective_solver::{required_truncation, solve_effective, BoxGrid, ValueField};
use hjh_core::epsilon_solver::{grid_tolerance, solve_epsilon};
use hjh_core::harness::{convergence_study, property_suite};
use hjh_core::io::to_json;
use hjh_core::model::ProblemInstance;

use crate::config::{parse_config, ConfigDocument};
use crate::Common;

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARSE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_PROPERTY: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Validate,
    Effective,
    SolveEps,
    SolveLimit,
    Converge,
    Props,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Effective => "effective",
            Kind::SolveEps => "solve-eps",
            Kind::SolveLimit => "solve-limit",
            Kind::Converge => "converge",
            Kind::Props => "props",
        }
    }
}

/// Files of one run, written in name order.
type Outputs = BTreeMap<String, String>;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn solver(e: hjh_core::Error) -> Self {
        Self::new(EXIT_SOLVER, format!("solver failure: {e}"))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config_path: String,
    config_sha256: String,
    resolved_config_sha256: String,
    overrides: &'a [String],
    jobs: usize,
    exit_code: u8,
    message: Option<String>,
    timings_seconds: BTreeMap<String, f64>,
    outputs: BTreeMap<String, String>,
}

/// Grid and solver statistics of a solved field.
#[derive(Serialize)]
struct FieldSummary {
    problem: &'static str,
    eps: Option<f64>,
    n1: usize,
    n2: usize,
    h1: f64,
    h2: f64,
    z1_extent: f64,
    z2_extent: f64,
    residual: f64,
    sweeps: usize,
    sup_norm: f64,
    grid_tolerance: f64,
}

fn summary(problem: &'static str, eps: Option<f64>, field: &ValueField<f64>, inst: &ProblemInstance<f64>) -> FieldSummary {
    let g = &field.grid;
    FieldSummary {
        problem,
        eps,
        n1: g.n1,
        n2: g.n2,
        h1: g.h1,
        h2: g.h2,
        z1_extent: g.z1_extent,
        z2_extent: g.z2_extent,
        residual: field.residual,
        sweeps: field.sweeps,
        sup_norm: field.sup_norm(),
        grid_tolerance: grid_tolerance(field, inst),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn table_files(out: &mut Outputs, table: &EffectiveTable<f64>) {
    out.insert("effective_table.csv".into(), table.to_csv());
    out.insert("effective_table.json".into(), table.sidecar_json());
}

fn build_table(doc: &ConfigDocument, inst: &ProblemInstance<f64>) -> Result<EffectiveTable<f64>, Failure> {
    let t = &doc.solver.table;
    build_effective_table(inst, &t.z2, &t.p2, &doc.solver.cell).map_err(Failure::solver)
}

fn dispatch(
    kind: Kind,
    doc: &ConfigDocument,
    inst: &ProblemInstance<f64>,
    out: &mut Outputs,
    timings: &mut BTreeMap<String, f64>,
) -> Result<u8, Failure> {
    let grid_block = &doc.solver.grid;
    let start = Instant::now();
    let code = match kind {
        Kind::Validate => unreachable!("handled before dispatch"),
        Kind::Effective => {
            let table = build_table(doc, inst)?;
            table_files(out, &table);
            EXIT_OK
        }
        Kind::SolveEps => {
            let grid = BoxGrid::new(grid_block.z1_extent, grid_block.z2_extent, doc.spacing())
                .map_err(|e| Failure::new(EXIT_VALIDATION, e.to_string()))?;
            let eps = doc.run.eps;
            let field = solve_epsilon(inst, eps, grid, &doc.solver.box_solver).map_err(|e| match e {
                hjh_core::Error::InvalidInput(m) => Failure::new(EXIT_VALIDATION, m),
                e => Failure::solver(e),
            })?;
            out.insert("value_eps.csv".into(), field.to_csv());
            out.insert("field_eps.json".into(), to_json(&summary("eps", Some(eps), &field, inst)));
            EXIT_OK
        }
        Kind::SolveLimit => {
            let grid = BoxGrid::new(grid_block.z1_extent, grid_block.z2_extent, doc.spacing())
                .map_err(|e| Failure::new(EXIT_VALIDATION, e.to_string()))?;
            let table = build_table(doc, inst)?;
            timings.insert("table".into(), start.elapsed().as_secs_f64());
            let k = doc.solver.truncation.unwrap_or_else(|| required_truncation(inst));
            let table = ek_modify(&table, k).map_err(Failure::solver)?;
            table_files(out, &table);
            let field = solve_effective(inst, &table, grid, &doc.solver.box_solver).map_err(Failure::solver)?;
            out.insert("value_limit.csv".into(), field.to_csv());
            out.insert("field_limit.json".into(), to_json(&summary("limit", None, &field, inst)));
            EXIT_OK
        }
        Kind::Converge => {
            let table = build_table(doc, inst)?;
            timings.insert("table".into(), start.elapsed().as_secs_f64());
            table_files(out, &table);
            let report = convergence_study(inst, &table, &doc.run.eps_list, &doc.convergence_options())
                .map_err(Failure::solver)?;
            out.insert("convergence.json".into(), report.to_json());
            out.insert("convergence.csv".into(), report.to_csv());
            if report.pass {
                EXIT_OK
            } else {
                error!("convergence trend not observed");
                EXIT_PROPERTY
            }
        }
        Kind::Props => unreachable!("handled before dispatch"),
    };
    timings.insert("solve".into(), start.elapsed().as_secs_f64());
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn write_run(
    kind: Kind,
    common: &Common,
    raw: &[u8],
    resolved: &str,
    outputs: &Outputs,
    jobs: usize,
    code: u8,
    message: Option<String>,
    timings: BTreeMap<String, f64>,
) -> std::io::Result<()> {
    let dir = &common.out;
    fs::create_dir_all(dir)?;
    let mut hashes = BTreeMap::new();
    for (name, content) in outputs {
        fs::write(dir.join(name), content)?;
        hashes.insert(name.clone(), sha256_hex(content.as_bytes()));
    }
    let manifest = Manifest {
        tool: "hjh",
        version: env!("CARGO_PKG_VERSION"),
        command: kind.name(),
        config_path: common.config.display().to_string(),
        config_sha256: sha256_hex(raw),
        resolved_config_sha256: sha256_hex(resolved.as_bytes()),
        overrides: &common.overrides,
        jobs,
        exit_code: code,
        message,
        timings_seconds: timings,
        outputs: hashes,
    };
    fs::write(dir.join("manifest.json"), to_json(&manifest))
}

fn report(code: u8, message: &Option<String>) {
    if let Some(m) = message {
        if code == EXIT_OK {
            println!("{m}");
        } else {
            eprintln!("{m}");
        }
    }
}

/// Runs one command and returns its exit code.
pub fn execute(kind: Kind, common: &Common) -> u8 {
    let begin = Instant::now();
    let raw = match fs::read(&common.config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot read {}: {e}", common.config.display());
            return EXIT_PARSE;
        }
    };
    let text = match String::from_utf8(raw.clone()) {
        Ok(t) => t,
        Err(_) => {
            eprintln!("{} is not UTF-8", common.config.display());
            return EXIT_PARSE;
        }
    };
    let doc = match parse_config(&text, &common.overrides) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_PARSE;
        }
    };
    let jobs = common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        info!("thread pool already configured: {e}");
    }
    let resolved = to_json(&doc);
    let mut outputs = Outputs::new();
    outputs.insert("resolved_config.json".into(), resolved.clone());
    let mut timings = BTreeMap::new();

    let (code, message) = run_checked(kind, &doc, &mut outputs, &mut timings);
    timings.insert("total".into(), begin.elapsed().as_secs_f64());
    report(code, &message);
    if let Err(e) = write_run(kind, common, &raw, &resolved, &outputs, jobs, code, message, timings) {
        eprintln!("cannot write run directory {}: {e}", common.out.display());
        return EXIT_SOLVER.max(code);
    }
    code
}

fn run_checked(
    kind: Kind,
    doc: &ConfigDocument,
    outputs: &mut Outputs,
    timings: &mut BTreeMap<String, f64>,
) -> (u8, Option<String>) {
    if let Err(m) = doc.validate() {
        return (EXIT_VALIDATION, Some(m));
    }
    let inst = match doc.instance() {
        Ok(i) => i,
        Err(e) => return (EXIT_VALIDATION, Some(format!("invalid instance: {e}"))),
    };
    let assumptions = inst.assess_assumptions();
    if kind == Kind::Props {
        let start = Instant::now();
        let report = property_suite(&inst, &doc.property_options());
        timings.insert("solve".into(), start.elapsed().as_secs_f64());
        outputs.insert("properties.json".into(), report.to_json());
        return match (&report.short_circuit, report.passed) {
            (Some(reason), _) => (EXIT_VALIDATION, Some(reason.clone())),
            (None, true) => (EXIT_OK, Some(format!("{} properties passed", report.checks.len()))),
            (None, false) => {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                (EXIT_PROPERTY, Some(format!("failed properties: {}", names.join(", "))))
            }
        };
    }
    outputs.insert("assumptions.json".into(), to_json(&assumptions));
    if let Err(e) = inst.validate_assumptions() {
        return (EXIT_VALIDATION, Some(e.to_string()));
    }
    if kind == Kind::Validate {
        return (
            EXIT_OK,
            Some(format!("assumptions hold: delta0 = {}", assumptions.delta0)),
        );
    }
    match dispatch(kind, doc, &inst, outputs, timings) {
        Ok(code) => (code, None),
        Err(f) => (f.code, Some(f.message)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn command_names_match_the_subcommands() {
        let names: Vec<&str> = [
            Kind::Validate,
            Kind::Effective,
            Kind::SolveEps,
            Kind::SolveLimit,
            Kind::Converge,
            Kind::Props,
        ]
        .iter()
        .map(|k| k.name())
        .collect();
        assert_eq!(names, ["validate", "effective", "solve-eps", "solve-limit", "converge", "props"]);
    }

    #[test]
    fn missing_config_is_a_parse_failure() {
        let common = Common {
            config: std::path::Path::new("/definitely/not/here.json").to_path_buf(),
            out: std::env::temp_dir().join("hjh-missing"),
            jobs: Some(1),
            overrides: vec![],
        };
        assert_eq!(execute(Kind::Validate, &common), EXIT_PARSE);
    }
}
