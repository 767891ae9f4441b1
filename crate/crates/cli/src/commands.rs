use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use berthplan_core::planner::{
    bundled_offline, offline_initial_state, plan, solve_offline, Guess, OfflineSolution, PlanEnvironment, PlanOutcome,
    PlanRequest, Scenario,
};
use berthplan_core::report::{
    emit_report, feasibility_report, plan_view_svg, verify_by_resimulation, ComparisonInput, ContinuousTrajectory,
    FeasibilityReport, RunSummary,
};
use berthplan_core::transcription::{build_nlp, ControlLimits, DecisionVector, DockingTarget};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GuessKind, RunConfig};
use crate::Failure;

/// Everything needed to rebuild and re-check a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRecord {
    pub scenario: Scenario,
    pub guess: String,
    pub segments: usize,
    pub limits: ControlLimits,
    pub target: DockingTarget,
    pub summary: RunSummary,
    pub solution: DecisionVector,
}

#[derive(Serialize)]
struct PlanReportFile<'a> {
    scenario: &'a str,
    guess: &'a str,
    summary: &'a RunSummary,
    feasibility: &'a FeasibilityReport,
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn core_error(e: berthplan_core::Error) -> Failure {
    use berthplan_core::Error as E;
    match e {
        E::SolverAborted(_) | E::Qp(_) | E::IntegrationDiverged { .. } | E::SingularMassMatrix { .. } => {
            Failure::Solver(e.into())
        }
        other => Failure::Config(other.into()),
    }
}

pub fn offline(cfg: &RunConfig, scenario: Option<&str>, out: &Path) -> Result<PathBuf, Failure> {
    let env = cfg.environment().map_err(config_error)?;
    let (x0, wind, key, name) = match scenario {
        Some(name) => {
            let s = cfg.scenario(name).map_err(config_error)?;
            (s.initial_state(&offline_initial_state()), s.wind().map_err(core_error)?, s.d, s.name)
        }
        None => (offline_initial_state(), berthplan_core::WindCondition::calm(), [1.0; 6], "M1".to_string()),
    };
    let target = DockingTarget::default_berth();
    let mut sol = solve_offline(&env, &x0, &target, wind, ControlLimits::default(), &cfg.offline_options())
        .map_err(core_error)?;
    sol.key = key;
    let path = out.join(format!("offline_{name}.json"));
    write_atomic(&path, sol.to_json().map_err(core_error)?.as_bytes()).map_err(config_error)?;
    println!(
        "offline {name}: tf {:.3} s, objective {:.3e}, collision free {}, {} evaluations -> {}",
        sol.tf,
        sol.objective,
        sol.collision_free,
        sol.evaluations,
        path.display()
    );
    if !sol.collision_free {
        return Err(Failure::Infeasible(format!("offline trajectory for {name} leaves the harbor")));
    }
    Ok(path)
}

fn warm_start(cfg: &RunConfig, path: Option<&Path>) -> anyhow::Result<OfflineSolution> {
    match path.or(cfg.warm_start.as_deref()) {
        Some(p) => Ok(OfflineSolution::load(p)?),
        None => Ok(bundled_offline()),
    }
}

fn request(cfg: &RunConfig, scenario: Scenario, guess: GuessKind, offline: &OfflineSolution) -> PlanRequest {
    let g = match guess {
        GuessKind::Warm => Guess::Offline(offline.clone()),
        GuessKind::Cold => Guess::Linear,
    };
    let mut req = PlanRequest::new(scenario, g);
    req.segments = cfg.segments;
    req
}

/// Writes trajectory, report, record and plot for one run.
fn write_artifacts(dir: &Path, outcome: &PlanOutcome, req: &PlanRequest) -> anyhow::Result<FeasibilityReport> {
    let report = outcome.verify()?;
    let summary = outcome.summary();
    let traj = outcome.trajectory()?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    write_atomic(&dir.join("trajectory.csv"), &csv)?;
    let mut text = format!(
        "scenario {} ({} start)\nstatus {}\niterations {}\nwall time {:.3} s\ntf {:.3} s\n",
        outcome.scenario, outcome.guess, summary.status, summary.iterations, summary.wall_time, summary.tf
    );
    text.push_str(&report.to_text());
    let violated = report.violated();
    if !violated.is_empty() {
        text.push_str(&format!("violated           {}\n", violated.join(", ")));
    }
    write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    let json = serde_json::to_string_pretty(&PlanReportFile {
        scenario: &outcome.scenario,
        guess: outcome.guess,
        summary: &summary,
        feasibility: &report,
    })?;
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    let record = PlanRecord {
        scenario: req.scenario.clone(),
        guess: outcome.guess.to_string(),
        segments: req.segments,
        limits: req.limits,
        target: req.target,
        summary,
        solution: outcome.solution.clone(),
    };
    write_atomic(&dir.join("solution.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    write_svg(dir, &outcome.problem, &traj)?;
    Ok(report)
}

fn write_svg<P: berthplan_core::transcription::Plant>(
    dir: &Path,
    problem: &berthplan_core::transcription::NlpProblem<P>,
    traj: &ContinuousTrajectory,
) -> anyhow::Result<()> {
    let svg = plan_view_svg(problem, traj, 10.0)?;
    write_atomic(&dir.join("plan.svg"), svg.as_bytes())
}

fn run_dir(out: &Path, scenario: &str, guess: GuessKind) -> PathBuf {
    let g = match guess {
        GuessKind::Warm => "warm",
        GuessKind::Cold => "cold",
    };
    out.join(format!("{scenario}_{g}"))
}

pub fn plan_one(
    cfg: &RunConfig,
    scenario: &str,
    guess: GuessKind,
    warm_path: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let env = cfg.environment().map_err(config_error)?;
    let s = cfg.scenario(scenario).map_err(config_error)?;
    let offline = warm_start(cfg, warm_path).map_err(config_error)?;
    let req = request(cfg, s, guess, &offline);
    let outcome = plan(&env, &req, &cfg.sqp).map_err(core_error)?;
    let dir = run_dir(out, scenario, guess);
    let report = write_artifacts(&dir, &outcome, &req).map_err(Failure::Solver)?;
    println!(
        "{} {}: {} after {} iterations in {:.3} s, tf {:.3} s, max violation {:.3e} -> {}",
        outcome.scenario,
        outcome.guess,
        if outcome.feasible { "feasible" } else { "infeasible" },
        outcome.sqp.iterations,
        outcome.wall_time,
        outcome.solution.tf,
        outcome.max_violation,
        dir.display()
    );
    if !report.feasible {
        return Err(Failure::Infeasible(format!(
            "{scenario}: violated {}",
            report.violated().join(", ")
        )));
    }
    Ok(())
}

fn batch_run(
    env: &PlanEnvironment,
    cfg: &RunConfig,
    scenario: &Scenario,
    guess: GuessKind,
    offline: &OfflineSolution,
    out: &Path,
) -> Result<RunSummary, String> {
    let req = request(cfg, scenario.clone(), guess, offline);
    let outcome = plan(env, &req, &cfg.sqp).map_err(|e| e.to_string())?;
    write_artifacts(&run_dir(out, &scenario.name, guess), &outcome, &req).map_err(|e| e.to_string())?;
    Ok(outcome.summary())
}

pub fn batch(cfg: &RunConfig, warm_path: Option<&Path>, jobs: Option<usize>, out: &Path) -> Result<(), Failure> {
    let env = cfg.environment().map_err(config_error)?;
    let scenarios = cfg.scenarios().map_err(config_error)?;
    if scenarios.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!("the scenario list is empty")));
    }
    let offline = warm_start(cfg, warm_path).map_err(config_error)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(config_error)?;
    let runs: Vec<(usize, GuessKind)> =
        (0..scenarios.len()).flat_map(|i| [(i, GuessKind::Warm), (i, GuessKind::Cold)]).collect();
    let results: Vec<Result<RunSummary, String>> = pool.install(|| {
        runs.par_iter().map(|&(i, g)| batch_run(&env, cfg, &scenarios[i], g, &offline, out)).collect()
    });
    let inputs: Vec<ComparisonInput> = scenarios
        .iter()
        .zip(results.chunks(2))
        .map(|(s, pair)| {
            let mut errors = Vec::new();
            let mut take = |r: &Result<RunSummary, String>, label: &str| match r {
                Ok(v) => Some(v.clone()),
                Err(e) => {
                    errors.push(format!("{label}: {e}"));
                    None
                }
            };
            let warm = take(&pair[0], "warm");
            let cold = take(&pair[1], "cold");
            ComparisonInput {
                scenario: s.name.clone(),
                norm_l: s.norm_l(),
                wind_speed_mps: s.wind_speed_mps,
                chi_deg: s.chi_deg,
                warm,
                cold,
                errors,
            }
        })
        .collect();
    let report = emit_report(&inputs).map_err(core_error)?;
    let text = report.to_text();
    write_atomic(&out.join("comparison.txt"), text.as_bytes()).map_err(config_error)?;
    write_atomic(&out.join("comparison.json"), report.to_json().map_err(core_error)?.as_bytes())
        .map_err(config_error)?;
    print!("{text}");
    Ok(())
}

pub fn check(cfg: &RunConfig, solution: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(solution)
        .with_context(|| format!("cannot read {}", solution.display()))
        .map_err(config_error)?;
    let record: PlanRecord = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", solution.display()))
        .map_err(config_error)?;
    let env = cfg.environment().map_err(config_error)?;
    let x_init = record.scenario.initial_state(&offline_initial_state());
    let problem = build_nlp(
        &env.params,
        record.scenario.wind().map_err(core_error)?,
        &env.polygon,
        &env.footprint,
        &x_init,
        &record.target,
        record.limits,
        record.segments,
    )
    .map_err(core_error)?;
    if record.solution.points() != problem.grid.points() {
        return Err(config_error(anyhow::anyhow!(
            "solution has {} points, expected {}",
            record.solution.points(),
            problem.grid.points()
        )));
    }
    let report = match verify_by_resimulation(&problem, &record.solution) {
        Ok(r) => r,
        Err(_) => feasibility_report(&problem, &record.solution.pack()).map_err(core_error)?,
    };
    print!("{}", report.to_text());
    let json = serde_json::to_string_pretty(&report).map_err(config_error)?;
    write_atomic(&out.join("check.json"), json.as_bytes()).map_err(config_error)?;
    if !report.feasible {
        let violated = report.violated();
        let msg = if violated.is_empty() {
            "solution is infeasible".to_string()
        } else {
            format!("violated {}", violated.join(", "))
        };
        return Err(Failure::Infeasible(msg));
    }
    Ok(())
}
