//! Offline (shooting + CMA-ES) and semionline (collocation + SQP) planners.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cmaes::{self, CmaesResult, CmaesSettings};
use crate::dynamics::{rk4_step, ShipParams, ShipState, WindCondition, CONTROL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::geometry::{HarborPolygon, Pose, ShipFootprint};
use crate::report::{verify_by_resimulation, ContinuousTrajectory, FeasibilityReport, RunSummary};
use crate::sqp::{self, Nlp, SqpResult, SqpSettings};
use crate::transcription::{
    build_nlp, CollisionModel, CollocationGrid, ControlLimits, DecisionVector, DockingTarget, NlpProblem, Plant,
    ShipPlant, TF_BOUNDS,
};

/// Piecewise-constant control segments of the offline planner.
pub const OFFLINE_SEGMENTS: usize = 20;
/// RK4 steps per offline control segment.
pub const OFFLINE_SUBSTEPS: usize = 8;
/// Feasibility threshold on the largest equality residual.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;
/// Tolerance on box-bound violation.
pub const BOUND_TOLERANCE: f64 = 1e-9;

const SCENARIOS_TOML: &str = include_str!("../../../data/scenarios.toml");
const OFFLINE_M1_JSON: &str = include_str!("../../../data/offline_m1.json");

/// Initial state of the offline problem, `[x0, u, y0, vm, psi, r]`.
pub fn offline_initial_state() -> ShipState {
    ShipState::new(16.50, 0.12, -7.50, 0.0, 2.0 * std::f64::consts::PI / 3.0, 0.0)
}

/// `sqrt(sum (d_i - 1)^2)`.
pub fn norm_l(d: &[f64; STATE_DIM]) -> f64 {
    d.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().sqrt()
}

/// Percentage of the cold-start time saved by the warm start.
pub fn speedup(t_cold: f64, t_warm: f64) -> Result<f64> {
    if !(t_cold > 0.0) || !t_cold.is_finite() || !t_warm.is_finite() {
        return Err(Error::Config(format!("speedup needs a positive cold-start time, got {t_cold}")));
    }
    Ok((t_cold - t_warm) / t_cold * 100.0)
}

fn deviation(weights: &[f64; STATE_DIM], x: &[f64; STATE_DIM], xf: &[f64; STATE_DIM]) -> f64 {
    (0..STATE_DIM).map(|i| weights[i] * (x[i] - xf[i]).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Elementwise multipliers on the offline initial state.
    pub d: [f64; STATE_DIM],
    pub wind_speed_mps: f64,
    pub chi_deg: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<Scenario>,
}

impl Scenario {
    pub fn norm_l(&self) -> f64 {
        norm_l(&self.d)
    }

    pub fn wind(&self) -> Result<WindCondition> {
        WindCondition::from_degrees(self.wind_speed_mps, self.chi_deg)
    }

    /// `x_i = d_i * base_i`.
    pub fn initial_state(&self, base: &ShipState) -> ShipState {
        let b = base.to_array();
        ShipState::from_array(std::array::from_fn(|i| self.d[i] * b[i]))
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("scenario name must not be empty".into()));
        }
        if self.d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("scenario {}: non-finite multiplier", self.name)));
        }
        self.wind().map(|_| ())
    }
}

pub fn scenarios_from_toml_str(text: &str) -> Result<Vec<Scenario>> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Parse { path: "<scenarios>".into(), message: e.to_string() })?;
    for (i, s) in file.scenario.iter().enumerate() {
        s.validate()?;
        if file.scenario[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::Config(format!("duplicate scenario name {}", s.name)));
        }
    }
    Ok(file.scenario)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    scenarios_from_toml_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse { path: path.display().to_string(), message },
        other => other,
    })
}

/// The fourteen bundled docking scenarios.
pub fn bundled_scenarios() -> Vec<Scenario> {
    scenarios_from_toml_str(SCENARIOS_TOML).expect("bundled scenario table parses")
}

/// The shipped offline solution for scenario M1 (default options and seed).
pub fn bundled_offline() -> OfflineSolution {
    OfflineSolution::from_json(OFFLINE_M1_JSON).expect("bundled offline solution parses")
}

/// Offline planner configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineOptions {
    pub segments: usize,
    pub substeps: usize,
    pub tf_bounds: (f64, f64),
    pub weights: [f64; STATE_DIM],
    /// Multiplies the sum of squared collision residuals.
    pub collision_weight: f64,
    /// Initial CMA-ES mean as `(tf, delta, n)`.
    pub initial_guess: (f64, f64, f64),
    pub cmaes: CmaesSettings,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        Self {
            segments: OFFLINE_SEGMENTS,
            substeps: OFFLINE_SUBSTEPS,
            tf_bounds: TF_BOUNDS,
            weights: [1.0; STATE_DIM],
            collision_weight: 1e4,
            initial_guess: (160.0, 0.0, 5.0),
            cmaes: CmaesSettings { sigma0: 0.2, ..CmaesSettings::default() },
        }
    }
}

impl OfflineOptions {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.substeps == 0 {
            return Err(Error::Config("offline segments and substeps must be positive".into()));
        }
        let (lo, hi) = self.tf_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("offline tf bounds [{lo}, {hi}] must satisfy 0 < lo < hi")));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(self.collision_weight >= 0.0) {
            return Err(Error::Config("offline weights must be finite and non-negative".into()));
        }
        self.cmaes.validate()
    }
}

/// Result of the offline planner, reusable as a warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSolution {
    pub tf: f64,
    /// Rudder angle per segment (deg).
    pub delta: Vec<f64>,
    /// Propeller speed per segment (rps).
    pub n: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<[f64; STATE_DIM]>,
    pub final_state: [f64; STATE_DIM],
    pub target: [f64; STATE_DIM],
    pub objective: f64,
    /// Sampled hull points never left the harbor.
    pub collision_free: bool,
    pub evaluations: usize,
    /// Multipliers of the initial state relative to the offline base state.
    #[serde(default = "unit_multipliers")]
    pub key: [f64; STATE_DIM],
}

fn unit_multipliers() -> [f64; STATE_DIM] {
    [1.0; STATE_DIM]
}

impl OfflineSolution {
    pub fn segments(&self) -> usize {
        self.delta.len()
    }

    /// Zero-order-hold control, right-continuous at segment boundaries.
    pub fn control_at(&self, t: f64) -> [f64; CONTROL_DIM] {
        let ns = self.segments();
        let k = ((t / self.tf * ns as f64 + 1e-9).floor().max(0.0) as usize).min(ns - 1);
        [self.delta[k], self.n[k]]
    }

    /// Dense state, linear between stored RK4 samples.
    pub fn state_at(&self, t: f64) -> [f64; STATE_DIM] {
        let last = self.times.len() - 1;
        let h = self.tf / last as f64;
        let pos = (t / h).clamp(0.0, last as f64);
        let k = (pos.floor() as usize).min(last);
        let frac = pos - k as f64;
        if k == last || frac < 1e-9 {
            return self.states[k];
        }
        if frac > 1.0 - 1e-9 {
            return self.states[k + 1];
        }
        std::array::from_fn(|i| self.states[k][i] + frac * (self.states[k + 1][i] - self.states[k][i]))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sol: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse { path: "<offline>".into(), message: e.to_string() })?;
        let ns = sol.delta.len();
        if ns == 0 || sol.n.len() != ns || sol.times.len() != sol.states.len() || sol.states.len() < 2 {
            return Err(Error::Config("offline solution arrays are inconsistent".into()));
        }
        if !(sol.tf > 0.0 && sol.tf.is_finite()) {
            return Err(Error::Config("offline solution tf must be positive".into()));
        }
        Ok(sol)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: path.display().to_string(), message },
            other => other,
        })
    }
}

/// Single-shooting evaluation of the offline problem.
pub struct OfflineProblem<'a, P: Plant> {
    pub plant: &'a P,
    pub collision: Option<&'a CollisionModel>,
    pub x0: [f64; STATE_DIM],
    pub target: [f64; STATE_DIM],
    pub limits: ControlLimits,
    pub options: OfflineOptions,
}

struct Shot {
    times: Vec<f64>,
    states: Vec<[f64; STATE_DIM]>,
    objective: f64,
    penalty: f64,
    /// Most negative collision residual seen.
    worst: f64,
}

impl<P: Plant> OfflineProblem<'_, P> {
    fn dim(&self) -> usize {
        1 + 2 * self.options.segments
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let ns = self.options.segments;
        let mut lo = vec![self.options.tf_bounds.0];
        let mut hi = vec![self.options.tf_bounds.1];
        lo.extend(std::iter::repeat_n(-self.limits.delta_max, ns));
        hi.extend(std::iter::repeat_n(self.limits.delta_max, ns));
        lo.extend(std::iter::repeat_n(-self.limits.n_max, ns));
        hi.extend(std::iter::repeat_n(self.limits.n_max, ns));
        (lo, hi)
    }

    fn shoot(&self, v: &[f64]) -> Result<Shot> {
        let ns = self.options.segments;
        let sub = self.options.substeps;
        let tf = v[0];
        let h = tf / (ns * sub) as f64;
        let mut times = Vec::with_capacity(ns * sub + 1);
        let mut states = Vec::with_capacity(ns * sub + 1);
        let mut x = self.x0;
        times.push(0.0);
        states.push(x);
        for q in 0..ns {
            let u = [v[1 + q], v[1 + ns + q]];
            let mut rhs = |_t: f64, s: &[f64; STATE_DIM]| self.plant.rate(s, &u);
            for j in 0..sub {
                let t = (q * sub + j) as f64 * h;
                x = rk4_step(&mut rhs, t, &x, h)?;
                if x.iter().any(|c| !c.is_finite()) {
                    return Err(Error::IntegrationDiverged { t: t + h, detail: "offline shot".into() });
                }
                times.push(t + h);
                states.push(x);
            }
        }
        let w = &self.options.weights;
        let terminal = deviation(w, &x, &self.target);
        // composite Simpson over an even number of RK4 intervals
        let last = states.len() - 1;
        let integral = h / 3.0
            * states
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let c = if k == 0 || k == last {
                        1.0
                    } else if k % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    c * deviation(w, s, &self.target)
                })
                .sum::<f64>();
        let mut penalty = 0.0;
        let mut worst = 0.0f64;
        if let Some(col) = self.collision {
            for s in &states {
                for p in col.footprint.world_points(&Pose::new(s[0], s[2], s[4])) {
                    let res = col.polygon.angle_sum(&p).unwrap_or(0.0) - std::f64::consts::TAU;
                    penalty += (-res).max(0.0).powi(2);
                    worst = worst.min(res);
                }
            }
        }
        Ok(Shot { times, states, objective: terminal * integral, penalty, worst })
    }

    /// Fitness used by CMA-ES; failures map to `+inf`.
    pub fn fitness(&self, v: &[f64]) -> f64 {
        match self.shoot(v) {
            Ok(s) => s.objective + self.options.collision_weight * s.penalty,
            Err(_) => f64::INFINITY,
        }
    }

    fn initial_mean(&self) -> Vec<f64> {
        let (lo, hi) = self.bounds();
        let (tf, delta, n) = self.options.initial_guess;
        let ns = self.options.segments;
        let mut v = vec![tf];
        v.extend(std::iter::repeat_n(delta, ns));
        v.extend(std::iter::repeat_n(n, ns));
        v.iter().zip(lo.iter().zip(&hi)).map(|(x, (l, h))| x.clamp(*l, *h)).collect()
    }

    pub fn solve(&self) -> Result<OfflineSolution> {
        self.options.validate()?;
        self.limits.validate()?;
        let (lo, hi) = self.bounds();
        let mean = self.initial_mean();
        let res: CmaesResult = cmaes::minimize(|v| self.fitness(v), &mean, &lo, &hi, &self.options.cmaes)?;
        let mut sol = self.simulate(&res.best_x)?;
        sol.evaluations = res.evaluations;
        Ok(sol)
    }

    /// Shoots a given `[tf, delta.., n..]` vector without optimizing.
    pub fn simulate(&self, v: &[f64]) -> Result<OfflineSolution> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let shot = self.shoot(v)?;
        let ns = self.options.segments;
        Ok(OfflineSolution {
            tf: v[0],
            delta: v[1..1 + ns].to_vec(),
            n: v[1 + ns..].to_vec(),
            final_state: *shot.states.last().expect("non-empty shot"),
            times: shot.times,
            states: shot.states,
            target: self.target,
            objective: shot.objective,
            collision_free: shot.worst >= -FEASIBILITY_TOLERANCE,
            evaluations: 0,
            key: unit_multipliers(),
        })
    }
}

/// Harbor, hull outline and ship model shared by all plans.
#[derive(Debug, Clone)]
pub struct PlanEnvironment {
    pub params: ShipParams,
    pub polygon: HarborPolygon,
    pub footprint: ShipFootprint,
}

impl PlanEnvironment {
    /// The bundled 3 m model ship in the bundled pond.
    pub fn bundled() -> Self {
        let params = ShipParams::esso_osaka_3m();
        let footprint = ShipFootprint::bundled_pentagon();
        Self { params, polygon: HarborPolygon::inukai_pond(), footprint }
    }

    pub fn collision_model(&self) -> CollisionModel {
        CollisionModel { polygon: self.polygon.clone(), footprint: self.footprint.clone() }
    }
}

/// Runs the offline planner for the ship from `x0`.
pub fn solve_offline(
    env: &PlanEnvironment,
    x0: &ShipState,
    target: &DockingTarget,
    wind: WindCondition,
    limits: ControlLimits,
    options: &OfflineOptions,
) -> Result<OfflineSolution> {
    env.params.validate()?;
    if !x0.is_finite() {
        return Err(Error::NonFinite("offline initial state".into()));
    }
    let plant = ShipPlant { params: env.params.clone(), wind };
    let collision = env.collision_model();
    let problem = OfflineProblem {
        plant: &plant,
        collision: Some(&collision),
        x0: x0.to_array(),
        target: target.x_fin.to_array(),
        limits,
        options: *options,
    };
    problem.solve()
}

/// Resamples an offline solution onto the collocation grid.
pub fn warm_start_from_offline(sol: &OfflineSolution, grid: &CollocationGrid) -> DecisionVector {
    let times = grid.times(sol.tf);
    let states = times.iter().map(|&t| sol.state_at(t)).collect();
    let controls: Vec<[f64; CONTROL_DIM]> = times.iter().map(|&t| sol.control_at(t)).collect();
    DecisionVector {
        tf: sol.tf,
        states,
        delta: controls.iter().map(|u| u[0]).collect(),
        n: controls.iter().map(|u| u[1]).collect(),
    }
}

/// Linear states, half-limit controls, 160 s final time.
pub fn cold_start_linear(
    x0: &ShipState,
    target: &DockingTarget,
    grid: &CollocationGrid,
    limits: &ControlLimits,
) -> DecisionVector {
    let nc = grid.points();
    let a = x0.to_array();
    let b = target.x_fin.to_array();
    let states = (0..nc)
        .map(|k| {
            let s = k as f64 / (nc - 1) as f64;
            std::array::from_fn(|i| (1.0 - s) * a[i] + s * b[i])
        })
        .collect();
    DecisionVector {
        tf: 160.0,
        states,
        delta: vec![0.5 * limits.delta_max; nc],
        n: vec![0.5 * limits.n_max; nc],
    }
}

/// Offline solutions keyed by their initial-state multipliers.
#[derive(Debug, Clone, Default)]
pub struct WarmStartLibrary {
    entries: Vec<OfflineSolution>,
}

impl WarmStartLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sol: OfflineSolution) {
        self.entries.push(sol);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry whose multipliers are closest to `d`; ties keep the earliest.
    pub fn select(&self, d: &[f64; STATE_DIM]) -> Option<&OfflineSolution> {
        let dist = |s: &OfflineSolution| (0..STATE_DIM).map(|i| (s.key[i] - d[i]).powi(2)).sum::<f64>();
        self.entries.iter().fold(None, |best: Option<&OfflineSolution>, s| match best {
            Some(b) if dist(b) <= dist(s) => Some(b),
            _ => Some(s),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Guess {
    Offline(OfflineSolution),
    Linear,
    Solution(DecisionVector),
}

impl Guess {
    pub fn kind(&self) -> &'static str {
        match self {
            Guess::Offline(_) => "warm",
            Guess::Linear => "cold",
            Guess::Solution(_) => "solution",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub scenario: Scenario,
    /// State the scenario multipliers apply to.
    pub base_state: ShipState,
    pub guess: Guess,
    pub segments: usize,
    pub limits: ControlLimits,
    pub target: DockingTarget,
}

impl PlanRequest {
    pub fn new(scenario: Scenario, guess: Guess) -> Self {
        Self {
            scenario,
            base_state: offline_initial_state(),
            guess,
            segments: 20,
            limits: ControlLimits::default(),
            target: DockingTarget::default_berth(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub scenario: String,
    pub guess: &'static str,
    pub problem: NlpProblem<ShipPlant>,
    pub initial_guess: DecisionVector,
    pub solution: DecisionVector,
    pub sqp: SqpResult,
    /// Largest equality residual, re-evaluated after the solve.
    pub max_violation: f64,
    pub bound_violation: f64,
    pub feasible: bool,
    /// Seconds spent inside the SQP solve.
    pub wall_time: f64,
}

impl PlanOutcome {
    pub fn trajectory(&self) -> Result<ContinuousTrajectory> {
        ContinuousTrajectory::new(&self.problem, &self.solution)
    }

    pub fn verify(&self) -> Result<FeasibilityReport> {
        verify_by_resimulation(&self.problem, &self.solution)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            tf: self.solution.tf,
            wall_time: self.wall_time,
            iterations: self.sqp.iterations,
            feasible: self.feasible,
            max_violation: self.max_violation,
            status: format!("{:?}", self.sqp.status),
        }
    }
}

/// Builds the scenario's NLP, picks the guess and runs SQP.
pub fn plan(env: &PlanEnvironment, request: &PlanRequest, settings: &SqpSettings) -> Result<PlanOutcome> {
    let x_init = request.scenario.initial_state(&request.base_state);
    let wind = request.scenario.wind()?;
    let problem = build_nlp(
        &env.params,
        wind,
        &env.polygon,
        &env.footprint,
        &x_init,
        &request.target,
        request.limits,
        request.segments,
    )?;
    let guess = match &request.guess {
        Guess::Offline(sol) => warm_start_from_offline(sol, &problem.grid),
        Guess::Linear => cold_start_linear(&x_init, &request.target, &problem.grid, &request.limits),
        Guess::Solution(d) => {
            if d.points() != problem.grid.points() {
                return Err(Error::DimensionMismatch { expected: problem.grid.points(), got: d.points() });
            }
            d.clone()
        }
    };
    let start = Instant::now();
    let sqp = sqp::solve(&problem, &guess.pack(), settings)?;
    let wall_time = start.elapsed().as_secs_f64();
    let solution = problem.unpack(&sqp.x)?;
    let residuals = problem.equalities(&sqp.x)?;
    let max_violation = residuals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound_violation = problem.bound_violation(&sqp.x);
    let feasible = max_violation <= FEASIBILITY_TOLERANCE && bound_violation <= BOUND_TOLERANCE;
    Ok(PlanOutcome {
        scenario: request.scenario.name.clone(),
        guess: request.guess.kind(),
        problem,
        initial_guess: guess,
        solution,
        sqp,
        max_violation,
        bound_violation,
        feasible,
        wall_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bundled(name: &str) -> Scenario {
        bundled_scenarios().into_iter().find(|s| s.name == name).unwrap()
    }

    #[test]
    fn norm_l_trivial_cases() {
        assert_eq!(norm_l(&[1.0; 6]), 0.0);
        assert_abs_diff_eq!(norm_l(&[2.0, 1.0, 1.0, 1.0, 1.0, 1.0]), 1.0);
    }

    #[test]
    fn speedup_formula() {
        assert_eq!(speedup(10.0, 10.0).unwrap(), 0.0);
        assert_abs_diff_eq!(speedup(4.0, 1.0).unwrap(), 75.0);
        assert!(speedup(0.0, 1.0).is_err());
        assert!(speedup(-1.0, 1.0).is_err());
    }

    #[test]
    fn bundled_table_has_fourteen_rows() {
        let s = bundled_scenarios();
        assert_eq!(s.len(), 14);
        assert_eq!(s[0].name, "M1");
        assert_eq!(s[13].name, "A10");
        assert!(s.iter().all(|s| s.wind().is_ok()));
    }

    #[test]
    fn multiplicative_yaw_convention() {
        let base = offline_initial_state();
        assert_abs_diff_eq!(bundled("M4").initial_state(&base).psi, std::f64::consts::PI, epsilon = 1e-12);
        assert_abs_diff_eq!(bundled("A9").initial_state(&base).psi, 4.0 * std::f64::consts::PI / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bundled("A9").initial_state(&base).y0, 7.5, epsilon = 1e-12);
    }

    #[test]
    fn scenario_parse_errors() {
        assert!(scenarios_from_toml_str("[[scenario]]\nname = \"X\"\n").is_err());
        let dup = "[[scenario]]\nname=\"X\"\nd=[1,1,1,1,1,1]\nwind_speed_mps=0\nchi_deg=0\n".repeat(2);
        assert!(scenarios_from_toml_str(&dup).is_err());
        let neg = "[[scenario]]\nname=\"X\"\nd=[1,1,1,1,1,1]\nwind_speed_mps=-1\nchi_deg=0\n";
        assert!(scenarios_from_toml_str(neg).is_err());
        let extra = "[[scenario]]\nname=\"X\"\nd=[1,1,1,1,1,1]\nwind_speed_mps=0\nchi_deg=0\nchi=3\n";
        assert!(scenarios_from_toml_str(extra).is_err());
        assert!(scenarios_from_toml_str("").unwrap().is_empty());
    }

    #[test]
    fn cold_start_endpoints_and_midpoint() {
        let grid = CollocationGrid::new(20).unwrap();
        let x0 = offline_initial_state();
        let target = DockingTarget::default_berth();
        let d = cold_start_linear(&x0, &target, &grid, &ControlLimits::default());
        assert_eq!(d.states[0], x0.to_array());
        assert_eq!(d.states[40], target.x_fin.to_array());
        let (a, b) = (x0.to_array(), target.x_fin.to_array());
        for i in 0..6 {
            assert_abs_diff_eq!(d.states[20][i], 0.5 * (a[i] + b[i]), epsilon = 1e-12);
        }
        assert!(d.delta.iter().all(|&v| v == 12.5) && d.n.iter().all(|&v| v == 7.5));
        assert_eq!(d.tf, 160.0);
    }

    fn toy_offline(tf: f64) -> OfflineSolution {
        let ns = 20;
        let steps = ns * 8;
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * tf / steps as f64).collect();
        OfflineSolution {
            tf,
            delta: (0..ns).map(|q| q as f64).collect(),
            n: (0..ns).map(|q| -(q as f64)).collect(),
            states: times.iter().map(|t| [*t, 1.0, 2.0 * t, 0.0, 0.0, 0.0]).collect(),
            final_state: [tf, 1.0, 2.0 * tf, 0.0, 0.0, 0.0],
            times,
            target: [0.0; 6],
            objective: 0.0,
            collision_free: true,
            evaluations: 0,
            key: [1.0; 6],
        }
    }

    #[test]
    fn warm_start_zero_order_hold() {
        let sol = toy_offline(150.0);
        let grid = CollocationGrid::new(20).unwrap();
        let d = warm_start_from_offline(&sol, &grid);
        assert_eq!(d.tf, 150.0);
        for k in 0..41 {
            let q = (k / 2).min(19);
            assert_eq!(d.delta[k], sol.delta[q], "point {k}");
            assert_eq!(d.n[k], sol.n[q]);
            assert_abs_diff_eq!(d.states[k][0], k as f64 * 150.0 / 40.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn warm_start_at_breakpoints_of_coarser_grid() {
        let sol = toy_offline(100.0);
        let grid = CollocationGrid::new(10).unwrap();
        let d = warm_start_from_offline(&sol, &grid);
        for k in 0..grid.points() - 1 {
            let t = k as f64 * 100.0 / 20.0;
            let q = (t / 5.0).round() as usize;
            assert_eq!(d.delta[k], sol.delta[q.min(19)]);
        }
    }

    #[test]
    fn offline_json_roundtrip() {
        let sol = toy_offline(80.0);
        let back = OfflineSolution::from_json(&sol.to_json().unwrap()).unwrap();
        assert_eq!(sol, back);
        assert!(OfflineSolution::from_json("{}").is_err());
    }

    #[test]
    fn library_picks_nearest_multipliers() {
        let mut lib = WarmStartLibrary::new();
        assert!(lib.select(&[1.0; 6]).is_none());
        let mut a = toy_offline(100.0);
        a.key = [1.0; 6];
        let mut b = toy_offline(120.0);
        b.key = [1.0, 3.0, 0.9, 1.0, 1.5, 1.0];
        lib.insert(a);
        lib.insert(b);
        assert_eq!(lib.select(&[1.0, 2.8, 0.9, 1.0, 1.4, 1.0]).unwrap().tf, 120.0);
        assert_eq!(lib.select(&[1.1, 1.2, 1.0, 1.0, 1.0, 1.0]).unwrap().tf, 100.0);
    }
}
