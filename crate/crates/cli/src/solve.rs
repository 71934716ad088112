//! `solve` and `verify`.
//!
//! `solve` writes into the output directory:
//! - `run.log`: one line per Newton iteration (also echoed to standard output);
//! - `field.json` and `field.csv`: the final or best iterate;
//! - `report.json`: diagnostics of that field;
//! - `summary.json`: outcome, final `c`, iterations per continuation step and
//!   the names of the other artifacts.
//!
//! `summary.json` and `run.log` are written even when the solve fails; the
//! field and report are written whenever an iterate on the final grid exists.

use serde::Serialize;
use std::fs::File;
use std::io::{LineWriter, Write};
use std::path::Path;
use std::sync::Arc;

use cmcgrad::diagnostics::DUAL_FAILURE;
use cmcgrad::{
    full_report, legendre_transform, newton_solve_with, quadratic_seed, run_homotopy, seed_field, DiagnosticsReport,
    HomotopyError, HomotopyProblem, IterationRecord, MappedGrid, NewtonWorkspace, OperatorKind, ProblemSpec,
    ReportTolerances, SolutionField, SolveError,
};

use crate::config::{RunConfig, SeedStrategy};
use crate::CliError;

const FIELD_JSON: &str = "field.json";
const FIELD_CSV: &str = "field.csv";
const REPORT_JSON: &str = "report.json";
const RUN_LOG: &str = "run.log";
const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Serialize)]
struct StepSummary {
    t: f64,
    iterations: usize,
    c: f64,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    converged: bool,
    all_pass: Option<bool>,
    exit_code: u8,
    model: String,
    n_rho: usize,
    n_phi: usize,
    c: Option<f64>,
    steps: Vec<StepSummary>,
    bisections: usize,
    error: Option<String>,
    field: Option<&'static str>,
    field_csv: Option<&'static str>,
    report: Option<&'static str>,
    log: &'static str,
}

struct RunLog {
    file: LineWriter<File>,
}

impl RunLog {
    fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(RunLog { file: LineWriter::new(file) })
    }

    fn line(&mut self, text: &str) {
        println!("{text}");
        // Progress output is best effort; artifacts report their own write errors.
        let _ = writeln!(self.file, "{text}");
    }
}

/// Report for `field`, with the dual equation checked on a transform onto the
/// target when `with_dual` is set. A failed transform is recorded as a failing
/// dual consistency.
pub fn build_report(
    spec: &ProblemSpec,
    field: &SolutionField,
    with_dual: bool,
    tol: &ReportTolerances,
) -> Result<DiagnosticsReport, CliError> {
    let diag = |e: cmcgrad::diagnostics::DiagnosticsError| CliError::Diagnostics(e.to_string());
    if !with_dual {
        return full_report(spec, field, None, tol).map_err(diag);
    }
    let grid = MappedGrid::new(&spec.omega_tilde, field.grid.n_rho(), field.grid.n_phi())
        .map_err(|e| CliError::Config(e.to_string()))?;
    match legendre_transform(field, Arc::new(grid)) {
        Ok(dual) => full_report(spec, field, Some(&dual), tol).map_err(diag),
        Err(_) => {
            let mut report = full_report(spec, field, None, tol).map_err(diag)?;
            report.dual_consistency = Some(DUAL_FAILURE);
            report.checks = report.evaluate_checks();
            report.all_pass = report.checks.all_pass();
            Ok(report)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_seed_file(cfg: &RunConfig, spec: &ProblemSpec) -> Result<SolutionField, CliError> {
    let path = cfg.seed_file().expect("validated");
    let stored = SolutionField::read_json(&path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if stored.dual || stored.model != spec.model || stored.domain() != &spec.omega {
        return Err(CliError::Schema(format!(
            "{}: seed field does not belong to the configured model and domain",
            path.display()
        )));
    }
    let mut u = spec
        .grid
        .resample_from(&stored.grid, &stored.u)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    spec.grid.project_mean_zero(&mut u);
    spec.field(u, stored.c).map_err(|e| CliError::Schema(e.to_string()))
}

/// Best iterate carried by a solver failure, when it lives on `spec`'s grid.
fn best_iterate(spec: &ProblemSpec, e: &SolveError) -> Option<SolutionField> {
    match e {
        SolveError::NonConvergence { best_u, best_c, .. } => spec.field(best_u.clone(), *best_c).ok(),
        _ => None,
    }
}

struct Solved {
    field: Result<SolutionField, (String, Option<SolutionField>)>,
    steps: Vec<StepSummary>,
    bisections: usize,
}

fn run(cfg: &RunConfig, spec: &ProblemSpec, log: &mut RunLog) -> Result<Solved, CliError> {
    let opts = cfg.solve_options();
    let mut observer = |r: &IterationRecord| log.line(&r.log_line());
    if cfg.homotopy {
        let problem = HomotopyProblem {
            model: cfg.model,
            omega: spec.omega.clone(),
            omega_tilde: spec.omega_tilde.clone(),
            operator: OperatorKind::Primal,
            n_rho: cfg.n_rho,
            n_phi: cfg.n_phi,
            schedule: cfg.schedule(),
            opts,
        };
        return Ok(match run_homotopy(&problem, &mut observer) {
            Ok(out) => Solved {
                steps: out.states.iter().map(|s| StepSummary { t: s.t, iterations: s.iterations, c: s.field.c }).collect(),
                bisections: out.bisections,
                field: Ok(out.field),
            },
            Err(HomotopyError::StepFailure { t, source }) => {
                let best = if t == 1.0 { best_iterate(spec, &source) } else { None };
                Solved { field: Err((format!("at t = {t}: {source}"), best)), steps: Vec::new(), bisections: 0 }
            }
            Err(HomotopyError::Schedule(m)) => return Err(CliError::Config(m)),
            Err(e) => Solved { field: Err((e.to_string(), None)), steps: Vec::new(), bisections: 0 },
        });
    }

    let seed = match cfg.seed {
        SeedStrategy::Radial => seed_field(spec),
        SeedStrategy::Quadratic => quadratic_seed(spec),
        SeedStrategy::File => Ok(load_seed_file(cfg, spec)?),
    };
    let seed = match seed {
        Ok(s) => s,
        Err(e) => return Ok(Solved { field: Err((e.to_string(), None)), steps: Vec::new(), bisections: 0 }),
    };
    let mut ws = NewtonWorkspace::new();
    Ok(match newton_solve_with(spec, seed.u.clone(), seed.c, &opts, &mut ws, 1.0, &mut observer) {
        Ok(out) => Solved {
            steps: vec![StepSummary { t: 1.0, iterations: out.iterations, c: out.field.c }],
            bisections: 0,
            field: Ok(out.field),
        },
        Err(e) => {
            let best = best_iterate(spec, &e).or(Some(seed));
            Solved { field: Err((e.to_string(), best)), steps: Vec::new(), bisections: 0 }
        }
    })
}

pub fn cmd_solve(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg.spec()?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut log = RunLog::create(&out.join(RUN_LOG))?;
    log.line(&format!(
        "model={} n_rho={} n_phi={} homotopy={} seed={:?}",
        cfg.model, cfg.n_rho, cfg.n_phi, cfg.homotopy, cfg.seed
    ));

    let solved = run(&cfg, &spec, &mut log)?;
    let (field, error) = match solved.field {
        Ok(f) => (Some(f), None),
        Err((msg, best)) => {
            log.line(&format!("failed: {msg}"));
            (best, Some(msg))
        }
    };
    let converged = error.is_none();

    let mut report = None;
    let mut report_error = None;
    if let Some(f) = &field {
        f.write_json(&out.join(FIELD_JSON)).map_err(|e| CliError::Io(e.to_string()))?;
        f.write_csv(&out.join(FIELD_CSV)).map_err(|e| CliError::Io(e.to_string()))?;
        match build_report(&spec, f, cfg.dual, &cfg.tolerances()) {
            Ok(r) => {
                write_json(&out.join(REPORT_JSON), &r)?;
                for line in r.to_table().lines() {
                    log.line(line);
                }
                report = Some(r);
            }
            Err(e) => {
                log.line(&format!("diagnostics unavailable: {e}"));
                report_error = Some(e);
            }
        }
    }

    let outcome = if let Some(msg) = &error {
        Err(CliError::NonConvergence(msg.clone()))
    } else if let Some(e) = report_error {
        Err(e)
    } else if report.as_ref().is_some_and(|r| !r.all_pass) {
        Err(CliError::Diagnostics(format!("see {}", out.join(REPORT_JSON).display())))
    } else {
        Ok(())
    };
    let exit_code = outcome.as_ref().err().map_or(0, CliError::exit_code);
    if let Some(f) = field.as_ref().filter(|_| converged) {
        log.line(&format!("c={:.8e} exit={exit_code}", f.c));
    }
    let summary = RunSummary {
        converged,
        all_pass: report.as_ref().map(|r| r.all_pass),
        exit_code,
        model: cfg.model.to_string(),
        n_rho: cfg.n_rho,
        n_phi: cfg.n_phi,
        c: field.as_ref().map(|f| f.c),
        steps: solved.steps,
        bisections: solved.bisections,
        error,
        field: field.as_ref().map(|_| FIELD_JSON),
        field_csv: field.as_ref().map(|_| FIELD_CSV),
        report: report.as_ref().map(|_| REPORT_JSON),
        log: RUN_LOG,
    };
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    outcome
}

pub fn cmd_verify(field_path: &Path, config: &Path, dual: bool, output: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let field = SolutionField::read_json(field_path).map_err(|e| CliError::Schema(e.to_string()))?;
    let omega = cfg.omega_domain()?;
    let omega_tilde = cfg.omega_tilde_domain()?;
    if field.dual {
        return Err(CliError::Schema("stored field is a dual potential".into()));
    }
    if field.model != cfg.model {
        return Err(CliError::Schema(format!("field model {} differs from configured {}", field.model, cfg.model)));
    }
    if field.domain() != &omega || field.image != omega_tilde {
        return Err(CliError::Schema("field domains differ from the configured domains".into()));
    }
    let spec = ProblemSpec::with_grid(
        cfg.model,
        omega,
        omega_tilde,
        field.grid.clone(),
        OperatorKind::Primal,
        cfg.solve_options().eps_space,
    )
    .map_err(|e| CliError::Schema(e.to_string()))?;
    let report = build_report(&spec, &field, dual, &cfg.tolerances())?;
    match output {
        Some(path) => {
            write_json(path, &report)?;
            print!("{}", report.to_table());
        }
        None => println!("{}", report.to_json()),
    }
    if report.all_pass {
        Ok(())
    } else {
        Err(CliError::Diagnostics("one or more checks failed".into()))
    }
}
