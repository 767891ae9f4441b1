use berthplan_core::dynamics::{CONTROL_DIM, STATE_DIM};
use berthplan_core::geometry::{HarborPolygon, ShipFootprint};
use berthplan_core::planner::speedup;
use berthplan_core::report::*;
use berthplan_core::transcription::*;
use berthplan_core::{Result, ShipState};
use nalgebra::{SMatrix, SVector};

/// Three damped oscillators driven by the two controls.
struct LinearPlant;

fn system() -> SMatrix<f64, 8, 8> {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    for (j, (w, c)) in [(0.6, 0.1), (0.9, 0.05), (0.4, 0.2)].into_iter().enumerate() {
        m[(2 * j, 2 * j + 1)] = 1.0;
        m[(2 * j + 1, 2 * j)] = -w * w;
        m[(2 * j + 1, 2 * j + 1)] = -c;
    }
    m[(1, 6)] = 0.01;
    m[(3, 7)] = 0.1;
    m[(5, 6)] = 0.02;
    m
}

impl Plant for LinearPlant {
    fn rate(&self, x: &[f64; STATE_DIM], u: &[f64; CONTROL_DIM]) -> Result<[f64; STATE_DIM]> {
        let m = system();
        let z = SVector::<f64, 8>::from_fn(|i, _| if i < 6 { x[i] } else { u[i - 6] });
        let dz = m * z;
        Ok(std::array::from_fn(|i| dz[i]))
    }
}

const X0: [f64; STATE_DIM] = [1.0, 0.0, -0.5, 0.3, 0.2, -0.1];
const U: [f64; CONTROL_DIM] = [5.0, 3.0];

fn analytic(t: f64) -> [f64; STATE_DIM] {
    let z0 = SVector::<f64, 8>::from_fn(|i, _| if i < 6 { X0[i] } else { U[i - 6] });
    let z = (system() * t).exp() * z0;
    std::array::from_fn(|i| z[i])
}

fn linear_problem(segments: usize, target: [f64; STATE_DIM]) -> NlpProblem<LinearPlant> {
    NlpProblem::new(
        LinearPlant,
        None,
        X0,
        DockingTarget::new(ShipState::from_array(target)).unwrap(),
        ControlLimits::default(),
        CollocationGrid::new(segments).unwrap(),
        TranscriptionOptions::default(),
    )
    .unwrap()
}

/// Collocation solution of the linear system with constant controls, targeting its own end state.
fn linear_solution(segments: usize, tf: f64) -> (NlpProblem<LinearPlant>, DecisionVector) {
    let probe = linear_problem(segments, X0);
    let nc = 2 * segments + 1;
    let d = probe.collocation_forward(X0, tf, &vec![U[0]; nc], &vec![U[1]; nc]).unwrap();
    let end = *d.states.last().unwrap();
    (linear_problem(segments, end), d)
}

fn ship_like() -> (NlpProblem<LinearPlant>, DecisionVector) {
    linear_solution(10, 12.0)
}

#[test]
fn control_matches_discrete_values_and_midpoints() {
    let (p, mut d) = ship_like();
    for k in 0..d.points() {
        d.delta[k] = (k as f64 * 0.7).sin() * 20.0;
        d.n[k] = 5.0 + (k as f64 * 0.3).cos();
    }
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    for k in 0..d.points() {
        let u = traj.control(traj.times[k]).unwrap();
        assert!((u[0] - d.delta[k]).abs() < 1e-12);
        assert!((u[1] - d.n[k]).abs() < 1e-12);
    }
    for k in 0..d.points() - 1 {
        let mid = 0.5 * (traj.times[k] + traj.times[k + 1]);
        let u = traj.control(mid).unwrap();
        assert!((u[0] - 0.5 * (d.delta[k] + d.delta[k + 1])).abs() < 1e-9);
        assert!((u[1] - 0.5 * (d.n[k] + d.n[k + 1])).abs() < 1e-9);
    }
}

#[test]
fn control_is_continuous_at_every_point() {
    let (p, mut d) = ship_like();
    for k in 0..d.points() {
        d.delta[k] = if k % 2 == 0 { 25.0 } else { -25.0 };
    }
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    let eps = 1e-9;
    for k in 1..d.points() - 1 {
        let t = traj.times[k];
        let left = traj.control(t - eps).unwrap();
        let right = traj.control(t + eps).unwrap();
        assert!((left[0] - right[0]).abs() < 1e-6, "jump at point {k}");
    }
}

#[test]
fn out_of_range_times_are_rejected() {
    let (p, d) = ship_like();
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    assert!(traj.control(-1e-6).is_err());
    assert!(traj.state(d.tf + 1e-6).is_err());
}

#[test]
fn state_hits_knots_with_true_slope() {
    let (p, d) = ship_like();
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    let rates = p.rates(&d).unwrap();
    for k in (0..d.points() - 1).step_by(2) {
        let t = traj.times[k];
        let x = traj.state(t).unwrap();
        let f = traj.state_rate(t).unwrap();
        for i in 0..STATE_DIM {
            assert!((x[i] - d.states[k][i]).abs() < 1e-12);
            assert!((f[i] - rates[k][i]).abs() < 1e-12);
        }
    }
}

#[test]
fn state_is_continuous_at_shared_knots() {
    let (p, d) = ship_like();
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    for k in (2..d.points() - 1).step_by(2) {
        let t = traj.times[k];
        let left = traj.state(t - 1e-12).unwrap();
        for i in 0..STATE_DIM {
            assert!((left[i] - d.states[k][i]).abs() < 1e-10, "knot {k} component {i}");
        }
    }
}

fn interpolant_error(segments: usize) -> f64 {
    let (p, d) = linear_solution(segments, 10.0);
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    let mut worst = 0.0f64;
    for t in traj.sample_times(2000) {
        let x = traj.state(t).unwrap();
        let truth = analytic(t);
        for i in 0..STATE_DIM {
            worst = worst.max((x[i] - truth[i]).abs());
        }
    }
    worst
}

#[test]
fn interpolant_error_is_fourth_order() {
    let e: Vec<f64> = [5, 10, 20].into_iter().map(interpolant_error).collect();
    assert!(e[0] / e[1] >= 12.0, "{e:?}");
    assert!(e[1] / e[2] >= 12.0, "{e:?}");
}

#[test]
fn resimulation_gap_is_fourth_order() {
    let gap = |ns: usize| {
        let (p, d) = linear_solution(ns, 10.0);
        let r = verify_by_resimulation(&p, &d).unwrap().resimulation.unwrap();
        assert!(!r.diverged);
        r.terminal_gap.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let g: Vec<f64> = [5, 10, 20].into_iter().map(gap).collect();
    assert!(g[0] / g[1] >= 12.0, "{g:?}");
    assert!(g[1] / g[2] >= 12.0, "{g:?}");
}

#[test]
fn resimulation_gap_grows_linearly_with_control_perturbation() {
    let (p, d) = linear_solution(10, 10.0);
    let base = verify_by_resimulation(&p, &d).unwrap().resimulation.unwrap().terminal_gap;
    let shift = |eps: f64| {
        let mut e = d.clone();
        e.delta.iter_mut().for_each(|v| *v += eps);
        let g = verify_by_resimulation(&p, &e).unwrap().resimulation.unwrap().terminal_gap;
        (0..STATE_DIM).map(|i| (g[i] - base[i]).powi(2)).sum::<f64>().sqrt()
    };
    let (a, b, c) = (shift(0.5), shift(1.0), shift(2.0));
    assert!(a > 1e-4);
    assert!((b / a - 2.0).abs() < 1e-6, "{a} {b}");
    assert!((c / b - 2.0).abs() < 1e-6, "{b} {c}");
    let perturbed = {
        let mut e = d.clone();
        e.delta.iter_mut().for_each(|v| *v += 1.0);
        e
    };
    let report = verify_by_resimulation(&p, &perturbed).unwrap();
    assert!(!report.feasible);
    assert!(report.violated().contains(&"quadrature"));
}

/// Straight-line kinematics in the plane.
struct Drift;

impl Plant for Drift {
    fn rate(&self, x: &[f64; STATE_DIM], _u: &[f64; CONTROL_DIM]) -> Result<[f64; STATE_DIM]> {
        Ok([x[1], 0.0, x[3], 0.0, 0.0, 0.0])
    }
}

#[test]
fn dense_sampling_catches_a_cut_corner() {
    let polygon = HarborPolygon::from_pairs(&[[0.0, 0.0], [10.0, 0.0], [10.0, 4.0], [4.0, 4.0], [4.0, 10.0], [0.0, 10.0]])
        .unwrap();
    let footprint = ShipFootprint::pentagon(1e-3, 5e-4);
    let (start, end) = ([9.9, 0.1], [3.9, 4.5]);
    let tf = 1.0;
    let v = [(end[0] - start[0]) / tf, (end[1] - start[1]) / tf];
    let states: Vec<[f64; STATE_DIM]> = (0..3)
        .map(|k| {
            let s = k as f64 / 2.0;
            [start[0] + s * (end[0] - start[0]), v[0], start[1] + s * (end[1] - start[1]), v[1], 0.0, 0.0]
        })
        .collect();
    let last = states[2];
    let p = NlpProblem::new(
        Drift,
        Some(CollisionModel { polygon: polygon.clone(), footprint }),
        states[0],
        DockingTarget::new(ShipState::from_array(last)).unwrap(),
        ControlLimits::default(),
        CollocationGrid::new(1).unwrap(),
        TranscriptionOptions::default(),
    )
    .unwrap();
    let d = DecisionVector { tf, states, delta: vec![0.0; 3], n: vec![0.0; 3] };
    let report = verify_by_resimulation(&p, &d).unwrap();
    assert!(report.collision <= 1e-12, "collocation points are inside");
    assert!(report.interpolation < 1e-12 && report.quadrature < 1e-12);
    let r = report.resimulation.unwrap();
    assert!(!r.dense_collision_ok);
    assert!(r.dense_collision < -1.0);
}

fn summary(tf: f64, wall_time: f64, iterations: usize) -> RunSummary {
    RunSummary { tf, wall_time, iterations, feasible: true, max_violation: 1e-9, status: "converged".into() }
}

fn input(name: &str, warm: f64, cold: f64) -> ComparisonInput {
    ComparisonInput {
        scenario: name.into(),
        norm_l: 0.5,
        wind_speed_mps: 0.0,
        chi_deg: 0.0,
        warm: Some(summary(180.0, warm, 4)),
        cold: Some(summary(175.0, cold, 40)),
        errors: vec![],
    }
}

#[test]
fn single_scenario_row_uses_the_speedup_formula() {
    let report = emit_report(&[input("M1", 0.478, 31.877)]).unwrap();
    assert_eq!(report.rows.len(), 1);
    let s = report.rows[0].speedup_percent.unwrap();
    assert!((s - 98.0).abs() <= 1.0, "{s}");
    assert_eq!(s, speedup(31.877, 0.478).unwrap());
    assert_eq!(report.averages.speedup_percent, Some(s));
}

#[test]
fn averages_are_column_means() {
    let rows = [input("a", 1.0, 4.0), input("b", 2.0, 4.0), input("c", 3.0, 12.0)];
    let report = emit_report(&rows).unwrap();
    let a = &report.averages;
    assert!((a.warm_time.unwrap() - 2.0).abs() < 1e-12);
    assert!((a.cold_time.unwrap() - 20.0 / 3.0).abs() < 1e-12);
    assert!((a.speedup_percent.unwrap() - (75.0 + 50.0 + 75.0) / 3.0).abs() < 1e-12);
    assert!((a.warm_iterations.unwrap() - 4.0).abs() < 1e-12);
    let text = report.to_text();
    for name in ["a", "b", "c"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name)), "{text}");
    }
    let json: ComparisonReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json, report);
}

#[test]
fn missing_runs_stay_in_the_table() {
    let mut broken = input("x", 1.0, 2.0);
    broken.cold = None;
    broken.errors.push("cold: solver aborted".into());
    let report = emit_report(&[broken, input("y", 1.0, 4.0)]).unwrap();
    assert_eq!(report.rows[0].speedup_percent, None);
    assert_eq!(report.averages.speedup_percent, Some(75.0));
    assert!(emit_report(&[]).is_err());
}

#[test]
fn csv_has_expected_columns_and_rows() {
    let (p, d) = ship_like();
    let traj = ContinuousTrajectory::new(&p, &d).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,u,y0,vm,psi,r,delta,n");
    assert_eq!(lines.count(), CSV_SAMPLES + 1);
}
