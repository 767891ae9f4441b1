//! Continuous interpolation of a solved plan, feasibility checks by
//! re-simulation, and warm-versus-cold comparison tables.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, CONTROL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::planner::{speedup, BOUND_TOLERANCE, FEASIBILITY_TOLERANCE};
use crate::sqp::Nlp;
use crate::transcription::{ConstraintFamily, DecisionVector, NlpProblem, Plant};

/// Trajectory CSV rows per solution.
pub const CSV_SAMPLES: usize = 400;
/// Dense collision sampling relative to the discretization points.
pub const DENSE_FACTOR: usize = 10;
/// Re-simulation RK4 steps per collocation segment.
pub const RESIM_STEPS_PER_SEGMENT: usize = 50;

/// Piecewise-linear control and per-segment cubic state over `[0, tf]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTrajectory {
    pub tf: f64,
    pub times: Vec<f64>,
    pub states: Vec<[f64; STATE_DIM]>,
    /// True dynamics at every discretization point.
    pub rates: Vec<[f64; STATE_DIM]>,
    pub controls: Vec<[f64; CONTROL_DIM]>,
}

impl ContinuousTrajectory {
    pub fn new<P: Plant>(problem: &NlpProblem<P>, d: &DecisionVector) -> Result<Self> {
        let rates = problem.rates(d)?;
        Ok(Self {
            tf: d.tf,
            times: problem.grid.times(d.tf),
            states: d.states.clone(),
            rates,
            controls: (0..d.points()).map(|k| d.control(k)).collect(),
        })
    }

    pub fn segments(&self) -> usize {
        (self.times.len() - 1) / 2
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.tf).contains(&t) {
            return Err(Error::TimeOutOfRange { t, tf: self.tf });
        }
        Ok(())
    }

    /// Linear between consecutive discretization points.
    pub fn control(&self, t: f64) -> Result<[f64; CONTROL_DIM]> {
        self.check_time(t)?;
        let last = self.times.len() - 1;
        let hd = self.tf / last as f64;
        let k = ((t / hd).floor() as usize).min(last - 1);
        let s = (t - self.times[k]) / hd;
        let (a, b) = (self.controls[k], self.controls[k + 1]);
        Ok(std::array::from_fn(|j| a[j] + (b[j] - a[j]) * s))
    }

    /// Segment cubic whose slope is the quadratic through the three rates.
    pub fn state(&self, t: f64) -> Result<[f64; STATE_DIM]> {
        self.check_time(t)?;
        let ns = self.segments();
        let hs = self.tf / ns as f64;
        let q = ((t / hs).floor() as usize).min(ns - 1);
        let k = 2 * q;
        let tau = t - self.times[k];
        let (x, fa, fm, fb) = (&self.states[k], &self.rates[k], &self.rates[k + 1], &self.rates[k + 2]);
        Ok(std::array::from_fn(|i| {
            x[i] + fa[i] * tau - (3.0 * fa[i] - 4.0 * fm[i] + fb[i]) * tau * tau / (2.0 * hs)
                + (2.0 * fa[i] - 4.0 * fm[i] + 2.0 * fb[i]) * tau.powi(3) / (3.0 * hs * hs)
        }))
    }

    /// Time derivative of [`Self::state`].
    pub fn state_rate(&self, t: f64) -> Result<[f64; STATE_DIM]> {
        self.check_time(t)?;
        let ns = self.segments();
        let hs = self.tf / ns as f64;
        let q = ((t / hs).floor() as usize).min(ns - 1);
        let k = 2 * q;
        let tau = t - self.times[k];
        let (fa, fm, fb) = (&self.rates[k], &self.rates[k + 1], &self.rates[k + 2]);
        Ok(std::array::from_fn(|i| {
            fa[i] - (3.0 * fa[i] - 4.0 * fm[i] + fb[i]) * tau / hs
                + (2.0 * fa[i] - 4.0 * fm[i] + 2.0 * fb[i]) * tau * tau / (hs * hs)
        }))
    }

    /// `n + 1` uniform sample times over `[0, tf]`.
    pub fn sample_times(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|i| if i == n { self.tf } else { i as f64 * self.tf / n as f64 }).collect()
    }

    /// CSV with columns `t, x0, u, y0, vm, psi, r, delta, n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("CSV write failed: {e}"));
        w.write_record(["t", "x0", "u", "y0", "vm", "psi", "r", "delta", "n"]).map_err(io)?;
        for t in self.sample_times(CSV_SAMPLES) {
            let x = self.state(t)?;
            let u = self.control(t)?;
            let mut row = vec![t];
            row.extend_from_slice(&x);
            row.extend_from_slice(&u);
            w.write_record(row.iter().map(|v| format!("{v:.9e}"))).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })
    }
}

/// Largest residual per constraint family plus re-simulation checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub initial: f64,
    pub terminal: f64,
    pub terminal_simpson: f64,
    pub interpolation: f64,
    pub quadrature: f64,
    pub collision: f64,
    pub bounds: f64,
    pub max_violation: f64,
    pub feasible: bool,
    pub resimulation: Option<Resimulation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resimulation {
    /// Re-simulated final state minus the docking target.
    pub terminal_gap: [f64; STATE_DIM],
    pub position_gap: f64,
    pub heading_gap: f64,
    /// Most negative collision residual over the dense samples (0 when inside).
    pub dense_collision: f64,
    pub dense_collision_ok: bool,
    pub diverged: bool,
}

impl FeasibilityReport {
    pub fn family(&self, family: ConstraintFamily) -> f64 {
        match family {
            ConstraintFamily::Initial => self.initial,
            ConstraintFamily::Terminal => self.terminal,
            ConstraintFamily::TerminalSimpson => self.terminal_simpson,
            ConstraintFamily::Interpolation => self.interpolation,
            ConstraintFamily::Quadrature => self.quadrature,
            ConstraintFamily::Collision => self.collision,
        }
    }

    /// Names of the families above tolerance, bounds included.
    pub fn violated(&self) -> Vec<&'static str> {
        let mut v: Vec<&'static str> = ConstraintFamily::ALL
            .iter()
            .filter(|f| self.family(**f) > FEASIBILITY_TOLERANCE)
            .map(|f| f.name())
            .collect();
        if self.bounds > BOUND_TOLERANCE {
            v.push("bounds");
        }
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in ConstraintFamily::ALL {
            let _ = writeln!(s, "{:<18} {:.3e}", f.name(), self.family(f));
        }
        let _ = writeln!(s, "{:<18} {:.3e}", "bounds", self.bounds);
        let _ = writeln!(s, "{:<18} {}", "feasible", self.feasible);
        if let Some(r) = &self.resimulation {
            let _ = writeln!(s, "{:<18} {:.4} m", "resim position", r.position_gap);
            let _ = writeln!(s, "{:<18} {:.4} rad", "resim heading", r.heading_gap);
            let _ = writeln!(s, "{:<18} {:.3e}", "dense collision", r.dense_collision);
            let _ = writeln!(s, "{:<18} {}", "resim diverged", r.diverged);
        }
        s
    }
}

/// Residual check of a flat decision vector against every family.
pub fn feasibility_report<P: Plant>(problem: &NlpProblem<P>, flat: &[f64]) -> Result<FeasibilityReport> {
    let c = problem.equalities(flat)?;
    let fam = |f: ConstraintFamily| c[problem.family_range(f)].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_violation = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bounds = problem.bound_violation(flat);
    Ok(FeasibilityReport {
        initial: fam(ConstraintFamily::Initial),
        terminal: fam(ConstraintFamily::Terminal),
        terminal_simpson: fam(ConstraintFamily::TerminalSimpson),
        interpolation: fam(ConstraintFamily::Interpolation),
        quadrature: fam(ConstraintFamily::Quadrature),
        collision: fam(ConstraintFamily::Collision),
        bounds,
        max_violation,
        feasible: max_violation <= FEASIBILITY_TOLERANCE && bounds <= BOUND_TOLERANCE,
        resimulation: None,
    })
}

fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    a - t * ((a + std::f64::consts::PI) / t).floor()
}

/// Residual report plus RK4 re-simulation (step `hs/50`) under the
/// interpolated control and dense collision sampling of the interpolant.
pub fn verify_by_resimulation<P: Plant>(problem: &NlpProblem<P>, d: &DecisionVector) -> Result<FeasibilityReport> {
    let mut report = feasibility_report(problem, &d.pack())?;
    let traj = ContinuousTrajectory::new(problem, d)?;
    let ns = problem.grid.segments();
    let steps = ns * RESIM_STEPS_PER_SEGMENT;
    let h = d.tf / steps as f64;
    let mut x = problem.x_init;
    let mut diverged = false;
    let mut rhs = |t: f64, s: &[f64; STATE_DIM]| {
        let u = traj.control(t.clamp(0.0, traj.tf))?;
        problem.plant.rate(s, &u)
    };
    for i in 0..steps {
        match rk4_step(&mut rhs, i as f64 * h, &x, h) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
            _ => {
                diverged = true;
                break;
            }
        }
    }
    let xf = problem.target.x_fin.to_array();
    let terminal_gap: [f64; STATE_DIM] = std::array::from_fn(|i| x[i] - xf[i]);
    let mut dense_collision = 0.0f64;
    if let Some(col) = &problem.collision {
        for t in traj.sample_times(DENSE_FACTOR * (traj.times.len() - 1)) {
            let s = traj.state(t)?;
            let pose = Pose::new(s[0], s[2], s[4]);
            for p in col.footprint.world_points(&pose) {
                let r = match col.polygon.angle_sum(&p) {
                    Ok(v) => v - std::f64::consts::TAU,
                    // a hull point exactly on a vertex counts as touching, not outside
                    Err(_) => 0.0,
                };
                dense_collision = dense_collision.min(r);
            }
        }
    }
    report.resimulation = Some(Resimulation {
        position_gap: if diverged { f64::INFINITY } else { terminal_gap[0].hypot(terminal_gap[2]) },
        heading_gap: if diverged { f64::INFINITY } else { wrap_angle(terminal_gap[4]).abs() },
        terminal_gap,
        dense_collision,
        dense_collision_ok: dense_collision >= -FEASIBILITY_TOLERANCE,
        diverged,
    });
    Ok(report)
}

/// Summary of one plan run, recomputed from stored results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tf: f64,
    pub wall_time: f64,
    pub iterations: usize,
    pub feasible: bool,
    pub max_violation: f64,
    pub status: String,
}

/// One scenario with both guesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonInput {
    pub scenario: String,
    pub norm_l: f64,
    pub wind_speed_mps: f64,
    pub chi_deg: f64,
    pub warm: Option<RunSummary>,
    pub cold: Option<RunSummary>,
    /// Failure messages for runs that did not produce a summary.
    #[serde(default)]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub norm_l: f64,
    pub wind_speed_mps: f64,
    pub chi_deg: f64,
    pub warm_tf: Option<f64>,
    pub warm_time: Option<f64>,
    pub warm_iterations: Option<f64>,
    pub warm_feasible: Option<bool>,
    pub warm_violation: Option<f64>,
    pub cold_tf: Option<f64>,
    pub cold_time: Option<f64>,
    pub cold_iterations: Option<f64>,
    pub cold_feasible: Option<bool>,
    pub cold_violation: Option<f64>,
    pub speedup_percent: Option<f64>,
    pub errors: Vec<String>,
}

/// Column means over the rows that have a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragesRow {
    pub norm_l: Option<f64>,
    pub warm_tf: Option<f64>,
    pub warm_time: Option<f64>,
    pub warm_iterations: Option<f64>,
    pub cold_tf: Option<f64>,
    pub cold_time: Option<f64>,
    pub cold_iterations: Option<f64>,
    pub speedup_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub averages: AveragesRow,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Builds the warm-versus-cold table; speedup uses the timing pair of each row.
pub fn emit_report(inputs: &[ComparisonInput]) -> Result<ComparisonReport> {
    if inputs.is_empty() {
        return Err(Error::Config("a report needs at least one scenario".into()));
    }
    let rows: Vec<ComparisonRow> = inputs
        .iter()
        .map(|r| {
            let speed = match (&r.warm, &r.cold) {
                (Some(w), Some(c)) => speedup(c.wall_time, w.wall_time).ok(),
                _ => None,
            };
            ComparisonRow {
                scenario: r.scenario.clone(),
                norm_l: r.norm_l,
                wind_speed_mps: r.wind_speed_mps,
                chi_deg: r.chi_deg,
                warm_tf: r.warm.as_ref().map(|s| s.tf),
                warm_time: r.warm.as_ref().map(|s| s.wall_time),
                warm_iterations: r.warm.as_ref().map(|s| s.iterations as f64),
                warm_feasible: r.warm.as_ref().map(|s| s.feasible),
                warm_violation: r.warm.as_ref().map(|s| s.max_violation),
                cold_tf: r.cold.as_ref().map(|s| s.tf),
                cold_time: r.cold.as_ref().map(|s| s.wall_time),
                cold_iterations: r.cold.as_ref().map(|s| s.iterations as f64),
                cold_feasible: r.cold.as_ref().map(|s| s.feasible),
                cold_violation: r.cold.as_ref().map(|s| s.max_violation),
                speedup_percent: speed,
                errors: r.errors.clone(),
            }
        })
        .collect();
    let averages = AveragesRow {
        norm_l: mean(rows.iter().map(|r| Some(r.norm_l))),
        warm_tf: mean(rows.iter().map(|r| r.warm_tf)),
        warm_time: mean(rows.iter().map(|r| r.warm_time)),
        warm_iterations: mean(rows.iter().map(|r| r.warm_iterations)),
        cold_tf: mean(rows.iter().map(|r| r.cold_tf)),
        cold_time: mean(rows.iter().map(|r| r.cold_time)),
        cold_iterations: mean(rows.iter().map(|r| r.cold_iterations)),
        speedup_percent: mean(rows.iter().map(|r| r.speedup_percent)),
    };
    Ok(ComparisonReport { rows, averages })
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "yes",
        Some(false) => "no",
        None => "-",
    }
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>5} {:>5} {:>6} | {:>7} {:>8} {:>5} {:>4} | {:>7} {:>8} {:>5} {:>4} | {:>8}",
            "case", "L", "V", "chi", "tf_w", "time_w", "it_w", "ok_w", "tf_c", "time_c", "it_c", "ok_c", "speedup"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:>5.2} {:>5.2} {:>6.1} | {:>7} {:>8} {:>5} {:>4} | {:>7} {:>8} {:>5} {:>4} | {:>7}%",
                r.scenario,
                r.norm_l,
                r.wind_speed_mps,
                r.chi_deg,
                cell(r.warm_tf, 1),
                cell(r.warm_time, 3),
                cell(r.warm_iterations, 0),
                flag(r.warm_feasible),
                cell(r.cold_tf, 1),
                cell(r.cold_time, 3),
                cell(r.cold_iterations, 0),
                flag(r.cold_feasible),
                cell(r.speedup_percent, 0),
            );
        }
        let a = &self.averages;
        let _ = writeln!(
            s,
            "{:<6} {:>5} {:>5} {:>6} | {:>7} {:>8} {:>5} {:>4} | {:>7} {:>8} {:>5} {:>4} | {:>7}%",
            "avg",
            cell(a.norm_l, 2),
            "",
            "",
            cell(a.warm_tf, 1),
            cell(a.warm_time, 3),
            cell(a.warm_iterations, 1),
            "",
            cell(a.cold_tf, 1),
            cell(a.cold_time, 3),
            cell(a.cold_iterations, 1),
            "",
            cell(a.speedup_percent, 0),
        );
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Plan view of harbor, trajectory and hull snapshots every `snapshot_every` seconds.
pub fn plan_view_svg<P: Plant>(problem: &NlpProblem<P>, traj: &ContinuousTrajectory, snapshot_every: f64) -> Result<String> {
    let col = problem
        .collision
        .as_ref()
        .ok_or_else(|| Error::Config("plan view needs a harbor polygon".into()))?;
    // east to the right, north up
    let verts = col.polygon.vertices();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for v in verts {
        xmin = xmin.min(v.y);
        xmax = xmax.max(v.y);
        ymin = ymin.min(v.x);
        ymax = ymax.max(v.x);
    }
    let scale = 20.0;
    let pad = 1.0;
    let px = |north: f64, east: f64| ((east - xmin + pad) * scale, (ymax - north + pad) * scale);
    let width = (xmax - xmin + 2.0 * pad) * scale;
    let height = (ymax - ymin + 2.0 * pad) * scale;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}">"#);
    let poly: Vec<String> = verts
        .iter()
        .map(|v| {
            let (a, b) = px(v.x, v.y);
            format!("{a:.2},{b:.2}")
        })
        .collect();
    let _ = writeln!(s, r##"<polygon points="{}" fill="#e8f1fa" stroke="#1f3a5f" stroke-width="2"/>"##, poly.join(" "));
    let path: Vec<String> = traj
        .sample_times(CSV_SAMPLES)
        .iter()
        .map(|&t| {
            let x = traj.state(t)?;
            let (a, b) = px(x[0], x[2]);
            Ok(format!("{a:.2},{b:.2}"))
        })
        .collect::<Result<_>>()?;
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##, path.join(" "));
    if snapshot_every > 0.0 {
        let mut t = 0.0;
        while t <= traj.tf {
            let x = traj.state(t)?;
            let hull: Vec<String> = col
                .footprint
                .world_points(&Pose::new(x[0], x[2], x[4]))
                .iter()
                .map(|p| {
                    let (a, b) = px(p.x, p.y);
                    format!("{a:.2},{b:.2}")
                })
                .collect();
            let _ = writeln!(s, r##"<polygon points="{}" fill="none" stroke="#555" stroke-width="1"/>"##, hull.join(" "));
            t += snapshot_every;
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
