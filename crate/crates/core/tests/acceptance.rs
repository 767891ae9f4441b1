//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::sync::OnceLock;
use std::time::Instant;

use berthplan_core::cmaes::{minimize, CmaesSettings};
use berthplan_core::dynamics::{CONTROL_DIM, STATE_DIM};
use berthplan_core::geometry::HarborPolygon;
use berthplan_core::planner::*;
use berthplan_core::report::verify_by_resimulation;
use berthplan_core::sqp::{qp_step, solve, Nlp, SqpSettings};
use berthplan_core::transcription::*;
use berthplan_core::{Result, ShipState, WindCondition};
use nalgebra::{DMatrix, DVector, Point2, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    println!("criterion {criterion} ({title}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_norm_l() {
    let start = Instant::now();
    let table = [
        ("M1", 0.00),
        ("M2", 1.03),
        ("M3", 1.03),
        ("M4", 2.06),
        ("A1", 0.32),
        ("A2", 0.53),
        ("A3", 0.79),
        ("A4", 0.92),
        ("A5", 0.58),
        ("A6", 0.41),
        ("A7", 1.25),
        ("A8", 1.51),
        ("A9", 2.24),
        ("A10", 2.31),
    ];
    let scenarios = bundled_scenarios();
    let mut worst = 0.0f64;
    let mut rows = 0;
    for (name, l) in table {
        let s = scenarios.iter().find(|s| s.name == name).expect("bundled scenario");
        worst = worst.max((s.norm_l() - l).abs());
        rows += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = rows == 14 && scenarios.len() == 14 && worst <= 0.005 && secs < 1.0;
    report(1, "norm L", pass, &format!("max |L - table| = {worst:.4} over {rows} rows, {secs:.3} s"));
    assert!(pass);
}

#[test]
fn criterion_02_speedup() {
    let start = Instant::now();
    let table = [
        (0.478, 31.877, 98.0),
        (0.645, 18.635, 97.0),
        (8.999, 28.289, 68.0),
        (11.664, 23.807, 51.0),
        (3.425, 18.361, 81.0),
        (5.881, 17.711, 67.0),
        (20.718, 46.836, 56.0),
        (3.426, 47.019, 93.0),
        (6.084, 31.397, 81.0),
        (3.442, 54.906, 94.0),
        (14.313, 19.903, 28.0),
        (9.268, 68.519, 86.0),
        (17.487, 30.697, 43.0),
        (23.128, 42.133, 45.0),
    ];
    let mut worst = 0.0f64;
    let mut sum = 0.0;
    for (warm, cold, printed) in table {
        let s = speedup(cold, warm).unwrap();
        worst = worst.max((s - printed).abs());
        sum += s;
    }
    let average = sum / table.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1.0 && (average - 71.0).abs() <= 1.0 && secs < 1.0;
    report(
        2,
        "speedup",
        pass,
        &format!("max row deviation {worst:.2}%, average {average:.2}% (printed 71%), {secs:.3} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_nlp_sizing() {
    let start = Instant::now();
    let env = PlanEnvironment::bundled();
    let p = build_nlp(
        &env.params,
        WindCondition::calm(),
        &env.polygon,
        &env.footprint,
        &offline_initial_state(),
        &DockingTarget::default_berth(),
        ControlLimits::default(),
        20,
    )
    .unwrap();
    let count = |f: ConstraintFamily| p.family_range(f).len();
    let counts = [
        count(ConstraintFamily::Initial) + count(ConstraintFamily::Terminal),
        count(ConstraintFamily::TerminalSimpson),
        count(ConstraintFamily::Interpolation),
        count(ConstraintFamily::Quadrature),
        count(ConstraintFamily::Collision),
    ];
    let vars = p.num_variables();
    let secs = start.elapsed().as_secs_f64();
    let pass = vars == 329
        && counts == [12, 6, 120, 120, 205]
        && p.num_equalities() == counts.iter().sum::<usize>()
        && env.footprint.len() == 5
        && secs < 1.0;
    report(3, "NLP sizing", pass, &format!("{vars} variables, families {counts:?}, {secs:.3} s"));
    assert!(pass);
}

fn ray_cast(p: &Point2<f64>, v: &[Point2<f64>]) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Star-shaped about the origin, hence simple; convex when all radii are equal.
fn random_polygon(rng: &mut ChaCha8Rng, convex: bool) -> Vec<Point2<f64>> {
    let n = rng.random_range(3..16);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let r0 = rng.random_range(1.0..50.0);
    angles
        .iter()
        .map(|&t| {
            let r = if convex { r0 } else { r0 * rng.random_range(0.2..1.0) };
            Point2::new(r * t.cos(), r * t.sin())
        })
        .collect()
}

#[test]
fn criterion_04_point_in_polygon() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut polygons, mut convex, mut points, mut disagreements) = (0, 0, 0usize, 0usize);
    while polygons < 120 {
        let is_convex = polygons % 3 == 0;
        let v = random_polygon(&mut rng, is_convex);
        let Ok(poly) = HarborPolygon::new(v.clone()) else { continue };
        polygons += 1;
        convex += usize::from(is_convex);
        let extent = v.iter().fold(0.0f64, |m, p| m.max(p.coords.norm())) * 1.3;
        let mut tested = 0;
        while tested < 10_000 {
            let p = Point2::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent));
            let near = (0..v.len()).any(|i| segment_distance(&p, &v[i], &v[(i + 1) % v.len()]) < 1e-9);
            if near {
                continue;
            }
            tested += 1;
            if poly.contains(&p) != ray_cast(&p, &v) {
                disagreements += 1;
            }
        }
        points += tested;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = disagreements == 0 && polygons >= 100 && points >= 10_000 && secs < 10.0;
    report(
        4,
        "point in polygon",
        pass,
        &format!("{disagreements} disagreements over {points} points in {polygons} polygons ({convex} convex), {secs:.2} s"),
    );
    assert!(pass);
}

/// Three damped oscillators driven by the two controls.
struct LinearPlant;

fn linear_system() -> SMatrix<f64, 8, 8> {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    for (j, (w, c)) in [(0.7, 0.1), (1.1, 0.05), (0.5, 0.3)].into_iter().enumerate() {
        m[(2 * j, 2 * j + 1)] = 1.0;
        m[(2 * j + 1, 2 * j)] = -w * w;
        m[(2 * j + 1, 2 * j + 1)] = -c;
    }
    m[(1, 6)] = 0.02;
    m[(3, 7)] = 0.05;
    m[(5, 6)] = -0.01;
    m
}

impl Plant for LinearPlant {
    fn rate(&self, x: &[f64; STATE_DIM], u: &[f64; CONTROL_DIM]) -> Result<[f64; STATE_DIM]> {
        let z = SVector::<f64, 8>::from_fn(|i, _| if i < 6 { x[i] } else { u[i - 6] });
        let dz = linear_system() * z;
        Ok(std::array::from_fn(|i| dz[i]))
    }
}

fn knot_error(segments: usize) -> f64 {
    let x0 = [1.0, 0.0, 0.5, -0.2, -0.3, 0.1];
    let u = [4.0, 2.0];
    let tf = 12.0;
    let p = NlpProblem::new(
        LinearPlant,
        None,
        x0,
        DockingTarget::new(ShipState::from_array(x0)).unwrap(),
        ControlLimits::default(),
        CollocationGrid::new(segments).unwrap(),
        TranscriptionOptions::default(),
    )
    .unwrap();
    let nc = 2 * segments + 1;
    let d = p.collocation_forward(x0, tf, &vec![u[0]; nc], &vec![u[1]; nc]).unwrap();
    let z0 = SVector::<f64, 8>::from_fn(|i, _| if i < 6 { x0[i] } else { u[i - 6] });
    let times = p.grid.times(tf);
    (0..nc)
        .step_by(2)
        .map(|k| {
            let z = (linear_system() * times[k]).exp() * z0;
            (0..STATE_DIM).map(|i| (d.states[k][i] - z[i]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_05_collocation_order() {
    let start = Instant::now();
    let errors: Vec<f64> = [8, 16, 32, 64].into_iter().map(knot_error).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = ratios.iter().all(|r| *r >= 12.0) && secs < 30.0;
    report(
        5,
        "collocation order",
        pass,
        &format!(
            "max knot errors [{}], halving ratios [{}], {secs:.2} s",
            errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", "),
            ratios.iter().map(|r| format!("{r:.1}")).collect::<Vec<_>>().join(", ")
        ),
    );
    assert!(pass);
}

/// Small NLP given by closures, with its analytic optimum.
struct Case {
    name: &'static str,
    n: usize,
    f: fn(&[f64]) -> f64,
    c: fn(&[f64]) -> Vec<f64>,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x0: Vec<f64>,
    optimum: Vec<f64>,
}

impl Nlp for Case {
    fn num_variables(&self) -> usize {
        self.n
    }
    fn num_equalities(&self) -> usize {
        self.m
    }
    fn lower_bounds(&self) -> Vec<f64> {
        self.lo.clone()
    }
    fn upper_bounds(&self) -> Vec<f64> {
        self.hi.clone()
    }
    fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
    fn equalities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.c)(x))
    }
}

fn free(n: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![-1e3; n], vec![1e3; n])
}

fn nlp_library() -> Vec<Case> {
    let s3 = 3f64.sqrt();
    let q = 2f64.powf(0.25);
    let case = |name, n, m, f, c, bounds: (Vec<f64>, Vec<f64>), x0: Vec<f64>, optimum: Vec<f64>| Case {
        name,
        n,
        f,
        c,
        m,
        lo: bounds.0,
        hi: bounds.1,
        x0,
        optimum,
    };
    vec![
        case("min-norm on a line", 2, 1, |x| x[0] * x[0] + x[1] * x[1], |x| vec![x[0] + x[1] - 1.0], free(2), vec![3.0, -2.0], vec![0.5, 0.5]),
        case(
            "projection onto a line",
            2,
            1,
            |x| (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
            |x| vec![x[0] + 2.0 * x[1] - 1.0],
            free(2),
            vec![0.0, 0.0],
            vec![1.4, -0.2],
        ),
        case("linear on a circle", 2, 1, |x| x[0] + x[1], |x| vec![x[0] * x[0] + x[1] * x[1] - 2.0], free(2), vec![-0.5, -1.5], vec![-1.0, -1.0]),
        case(
            "two linear equalities",
            3,
            2,
            |x| x.iter().map(|v| v * v).sum(),
            |x| vec![x[0] + x[1] + x[2] - 3.0, x[0] - x[1]],
            free(3),
            vec![0.0, 2.0, -1.0],
            vec![1.0, 1.0, 1.0],
        ),
        case(
            "active upper bound",
            2,
            1,
            |x| (x[0] - 3.0).powi(2) + (x[1] - 3.0).powi(2),
            |x| vec![x[0] + x[1] - 2.0],
            (vec![-10.0, -10.0], vec![0.5, 10.0]),
            vec![0.0, 0.0],
            vec![0.5, 1.5],
        ),
        case("bilinear", 2, 1, |x| -x[0] * x[1], |x| vec![x[0] + x[1] - 4.0], (vec![0.0, 0.0], vec![10.0, 10.0]), vec![1.0, 3.0], vec![2.0, 2.0]),
        case("exponentials", 2, 1, |x| x[0].exp() + x[1].exp(), |x| vec![x[0] + x[1]], free(2), vec![1.0, -0.5], vec![0.0, 0.0]),
        case(
            "hyperbola",
            2,
            1,
            |x| x[0] * x[0] + 2.0 * x[1] * x[1],
            |x| vec![x[0] * x[1] - 1.0],
            (vec![0.0, 0.0], vec![10.0, 10.0]),
            vec![2.0, 2.0],
            vec![q, 1.0 / q],
        ),
        case("HS6", 2, 1, |x| (1.0 - x[0]).powi(2), |x| vec![10.0 * (x[1] - x[0] * x[0])], free(2), vec![-1.2, 1.0], vec![1.0, 1.0]),
        case(
            "HS7",
            2,
            1,
            |x| (1.0 + x[0] * x[0]).ln() - x[1],
            |x| vec![(1.0 + x[0] * x[0]).powi(2) + x[1] * x[1] - 4.0],
            free(2),
            vec![2.0, 2.0],
            vec![0.0, s3],
        ),
        case(
            "HS28",
            3,
            1,
            |x| (x[0] + x[1]).powi(2) + (x[1] + x[2]).powi(2),
            |x| vec![x[0] + 2.0 * x[1] + 3.0 * x[2] - 1.0],
            free(3),
            vec![-4.0, 1.0, 1.0],
            vec![0.5, -0.5, 0.5],
        ),
        case(
            "HS48",
            5,
            2,
            |x| (x[0] - 1.0).powi(2) + (x[1] - x[2]).powi(2) + (x[3] - x[4]).powi(2),
            |x| vec![x.iter().sum::<f64>() - 5.0, x[2] - 2.0 * (x[3] + x[4]) + 3.0],
            free(5),
            vec![3.0, 5.0, -3.0, 2.0, -2.0],
            vec![1.0; 5],
        ),
        case(
            "bound-capped tracking",
            2,
            1,
            |x| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2),
            |x| vec![x[1] - x[0]],
            (vec![0.0, 0.0], vec![1.0, 1.0]),
            vec![0.2, 0.7],
            vec![1.0, 1.0],
        ),
    ]
}

/// Exhaustive active-set enumeration for `min 1/2 d'Hd + g'd, A d = b, lo <= d <= hi`.
fn enumerate_qp(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = g.len();
    let m = b.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let fixed: Vec<usize> = (0..n).filter(|&j| state[j] != 0).collect();
        let dim = n + m + fixed.len();
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        k.view_mut((0, 0), (n, n)).copy_from(h);
        k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(a);
        for j in 0..n {
            rhs[j] = -g[j];
        }
        for i in 0..m {
            rhs[n + i] = b[i];
        }
        for (r, &j) in fixed.iter().enumerate() {
            k[(j, n + m + r)] = 1.0;
            k[(n + m + r, j)] = 1.0;
            rhs[n + m + r] = if state[j] == 1 { lo[j] } else { hi[j] };
        }
        let Some(sol) = k.lu().solve(&rhs) else { continue };
        let d = sol.rows(0, n).into_owned();
        if (0..n).any(|j| d[j] < lo[j] - 1e-12 || d[j] > hi[j] + 1e-12) || (a * &d - b).amax() > 1e-9 {
            continue;
        }
        let val = 0.5 * d.dot(&(h * &d)) + g.dot(&d);
        if best.as_ref().is_none_or(|(v, _)| val < *v - 1e-14) {
            best = Some((val, d));
        }
    }
    best.map(|(_, d)| d)
}

#[test]
fn criterion_06_solver_correctness() {
    let start = Instant::now();
    let mut nlp_worst = 0.0f64;
    let mut failed = Vec::new();
    let library = nlp_library();
    for case in &library {
        match solve(case, &case.x0, &SqpSettings::default()) {
            Ok(r) => {
                let err = r.x.iter().zip(&case.optimum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                nlp_worst = nlp_worst.max(err);
                if err > 1e-6 || !r.feasible {
                    failed.push(case.name);
                }
            }
            Err(_) => failed.push(case.name),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut qp_worst = 0.0f64;
    let qps = 200;
    for _ in 0..qps {
        let n = rng.random_range(2..6);
        let m = rng.random_range(0..n.min(3));
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &r * r.transpose() + DMatrix::identity(n, n) * 0.1;
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let lo = DVector::from_fn(n, |_, _| rng.random_range(-2.0..-0.1));
        let hi = DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
        let interior = DVector::from_fn(n, |j, _| rng.random_range(lo[j] * 0.9..hi[j] * 0.9));
        let b = &a * interior;
        let oracle = enumerate_qp(&h, &a, &g, &b, &lo, &hi).expect("feasible by construction");
        let got = qp_step(&h, &a, &g, &b, &lo, &hi, 100, 0.0).unwrap().step;
        qp_worst = qp_worst.max((got - oracle).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = library.len() >= 10 && failed.is_empty() && nlp_worst <= 1e-6 && qp_worst <= 1e-8 && secs < 30.0;
    report(
        6,
        "solver correctness",
        pass,
        &format!(
            "{} NLPs, max optimum error {nlp_worst:.2e}, failures {failed:?}; {qps} QPs, max deviation from enumeration {qp_worst:.2e}; {secs:.2} s",
            library.len()
        ),
    );
    assert!(pass);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_07_cmaes() {
    let start = Instant::now();
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let rosenbrock =
        |x: &[f64]| x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum::<f64>();
    let run = |f: &(dyn Fn(&[f64]) -> f64 + Sync), dim: usize, budget: usize, seed: u64| {
        let settings = CmaesSettings {
            sigma0: 0.1,
            max_evaluations: budget,
            seed,
            restarts: 0,
            tol_fun: 0.0,
            tol_x: 0.0,
            ..CmaesSettings::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r = minimize(f, &x0, &vec![-5.0; dim], &vec![5.0; dim], &settings).unwrap();
        assert!(r.evaluations <= budget);
        r.best_f
    };
    let s = median((0..10).map(|seed| run(&sphere, 10, 5_000, seed)).collect());
    let r = median((0..10).map(|seed| run(&rosenbrock, 5, 50_000, seed)).collect());
    let secs = start.elapsed().as_secs_f64();
    let pass = s < 1e-10 && r < 1e-6 && secs < 60.0;
    report(7, "CMA-ES", pass, &format!("sphere-10 median {s:.2e}, Rosenbrock-5 median {r:.2e}, {secs:.2} s"));
    assert!(pass);
}

struct Paired {
    name: &'static str,
    warm: PlanOutcome,
    cold: PlanOutcome,
}

static PAIRED: OnceLock<(Vec<Paired>, f64)> = OnceLock::new();

fn paired_runs() -> &'static (Vec<Paired>, f64) {
    PAIRED.get_or_init(|| {
        let start = Instant::now();
        let env = PlanEnvironment::bundled();
        let offline = bundled_offline();
        let settings = SqpSettings::default();
        let scenarios = bundled_scenarios();
        let runs = ["M1", "M2", "A1", "A5", "A6"]
            .into_iter()
            .map(|name| {
                let s = scenarios.iter().find(|s| s.name == name).unwrap().clone();
                let warm = plan(&env, &PlanRequest::new(s.clone(), Guess::Offline(offline.clone())), &settings).unwrap();
                let cold = plan(&env, &PlanRequest::new(s, Guess::Linear), &settings).unwrap();
                Paired { name, warm, cold }
            })
            .collect();
        (runs, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_08_warm_start_benefit() {
    let (runs, secs) = paired_runs();
    let mut wins = 0;
    let mut cold_faster = Vec::new();
    for r in runs {
        let win = r.warm.feasible && r.warm.max_violation <= 1e-6 && r.warm.sqp.iterations < r.cold.sqp.iterations;
        wins += usize::from(win);
        if r.cold.wall_time < 0.9 * r.warm.wall_time {
            cold_faster.push(r.name);
        }
        println!(
            "  {}: warm {} it {:.3} s feasible {} | cold {} it {:.3} s feasible {}",
            r.name,
            r.warm.sqp.iterations,
            r.warm.wall_time,
            r.warm.feasible,
            r.cold.sqp.iterations,
            r.cold.wall_time,
            r.cold.feasible
        );
    }
    let pass = wins >= 4 && cold_faster.is_empty() && *secs < 600.0;
    report(
        8,
        "warm-start benefit",
        pass,
        &format!("{wins}/5 warm wins, cold faster by >10% in {cold_faster:?}, {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_self_consistency() {
    let (runs, _) = paired_runs();
    let mut checked = 0;
    let mut failures = Vec::new();
    for r in runs {
        for (kind, out) in [("warm", &r.warm), ("cold", &r.cold)] {
            if !out.feasible {
                continue;
            }
            checked += 1;
            let rs = verify_by_resimulation(&out.problem, &out.solution).unwrap().resimulation.unwrap();
            let ok = !rs.diverged && rs.position_gap <= 0.05 && rs.heading_gap <= 0.05 && rs.dense_collision_ok;
            println!(
                "  {} {kind}: position gap {:.4} m, heading gap {:.4} rad, dense collision {:.2e}",
                r.name, rs.position_gap, rs.heading_gap, rs.dense_collision
            );
            if !ok {
                failures.push(format!("{} {kind}", r.name));
            }
        }
    }
    let pass = checked > 0 && failures.is_empty();
    report(9, "self-consistency", pass, &format!("{checked} feasible solves checked, failing: {failures:?}"));
    assert!(pass);
}

#[test]
fn criterion_10_infeasibility_reporting() {
    let env = PlanEnvironment::bundled();
    let plant = ShipPlant { params: env.params.clone(), wind: WindCondition::calm() };
    let shooter = OfflineProblem {
        plant: &plant,
        collision: None,
        x0: offline_initial_state().to_array(),
        target: DockingTarget::default_berth().x_fin.to_array(),
        limits: ControlLimits::default(),
        options: OfflineOptions::default(),
    };
    // hard-over rudder at full ahead for the whole horizon
    let mut v = vec![400.0];
    v.extend([25.0; OFFLINE_SEGMENTS]);
    v.extend([15.0; OFFLINE_SEGMENTS]);
    let poor = shooter.simulate(&v).unwrap();
    let s = bundled_scenarios().into_iter().find(|s| s.name == "M1").unwrap();
    let settings = SqpSettings { max_iterations: 5, ..SqpSettings::default() };
    let out = plan(&env, &PlanRequest::new(s, Guess::Offline(poor)), &settings).unwrap();
    let independent = out.problem.residuals_of(&out.solution).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let verified = out.verify().unwrap();
    let pass = !out.feasible
        && out.max_violation > 1e-6
        && out.max_violation == independent
        && !verified.feasible
        && verified.max_violation == independent;
    report(
        10,
        "infeasibility reporting",
        pass,
        &format!(
            "feasible {}, reported violation {:.3e}, independent {:.3e}, violated {:?}",
            out.feasible,
            out.max_violation,
            independent,
            verified.violated()
        ),
    );
    assert!(pass);
}
