//! Separated Hermite-Simpson transcription of the docking problem.
//!
//! Discretization points are indexed from 0: even `k` are knots, odd `k` are
//! mid-segment collocation points, so segment `q` spans `2q, 2q+1, 2q+2`.

use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::ops::Range;

use crate::dynamics::{
    dynamics, ControlInput, ShipParams, ShipState, WindCondition, CONTROL_DIM, DELTA_ACTUAL_MAX,
    N_ACTUAL_MAX, STATE_DIM,
};
use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{angle_sum_gradient, HarborPolygon, Pose, ShipFootprint};
use crate::sqp::Nlp;

/// Default box for the final time (s).
pub const TF_BOUNDS: (f64, f64) = (5.0, 600.0);

/// Time-invariant state equation `x' = f(x, u)`.
pub trait Plant: Sync {
    fn rate(&self, x: &[f64; STATE_DIM], u: &[f64; CONTROL_DIM]) -> Result<[f64; STATE_DIM]>;
}

/// The ship under wind frozen at planning time.
#[derive(Debug, Clone)]
pub struct ShipPlant {
    pub params: ShipParams,
    pub wind: WindCondition,
}

impl Plant for ShipPlant {
    fn rate(&self, x: &[f64; STATE_DIM], u: &[f64; CONTROL_DIM]) -> Result<[f64; STATE_DIM]> {
        dynamics(
            &ShipState::from_array(*x),
            &ControlInput::new(u[0], u[1]),
            &self.wind,
            &self.params,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollocationGrid {
    segments: usize,
}

impl CollocationGrid {
    pub fn new(segments: usize) -> Result<Self> {
        if segments == 0 {
            return Err(Error::Config("collocation grid needs at least one segment".into()));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// `Nc = 2 Ns + 1`.
    pub fn points(&self) -> usize {
        2 * self.segments + 1
    }

    pub fn hs(&self, tf: f64) -> f64 {
        tf / self.segments as f64
    }

    pub fn hd(&self, tf: f64) -> f64 {
        0.5 * self.hs(tf)
    }

    pub fn times(&self, tf: f64) -> Vec<f64> {
        let hd = self.hd(tf);
        (0..self.points()).map(|k| k as f64 * hd).collect()
    }

    pub fn is_knot(k: usize) -> bool {
        k % 2 == 0
    }
}

/// Index arithmetic for the flat layout `[tf | x blocks | delta block | n block]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    points: usize,
}

impl Layout {
    pub fn new(grid: &CollocationGrid) -> Self {
        Self { points: grid.points() }
    }

    /// `(2 + 6) Nc + 1`.
    pub fn len(&self) -> usize {
        (STATE_DIM + CONTROL_DIM) * self.points + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub const TF: usize = 0;

    pub fn state(&self, k: usize, i: usize) -> usize {
        1 + STATE_DIM * k + i
    }

    pub fn delta(&self, k: usize) -> usize {
        1 + STATE_DIM * self.points + k
    }

    pub fn n(&self, k: usize) -> usize {
        1 + (STATE_DIM + 1) * self.points + k
    }

    pub fn control(&self, k: usize, j: usize) -> usize {
        if j == 0 {
            self.delta(k)
        } else {
            self.n(k)
        }
    }
}

/// Unpacked decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub tf: f64,
    pub states: Vec<[f64; STATE_DIM]>,
    pub delta: Vec<f64>,
    pub n: Vec<f64>,
}

impl DecisionVector {
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + (STATE_DIM + CONTROL_DIM) * self.states.len());
        v.push(self.tf);
        for x in &self.states {
            v.extend_from_slice(x);
        }
        v.extend_from_slice(&self.delta);
        v.extend_from_slice(&self.n);
        v
    }

    pub fn unpack(grid: &CollocationGrid, flat: &[f64]) -> Result<Self> {
        let layout = Layout::new(grid);
        if flat.len() != layout.len() {
            return Err(Error::DimensionMismatch { expected: layout.len(), got: flat.len() });
        }
        let nc = grid.points();
        let states = (0..nc)
            .map(|k| std::array::from_fn(|i| flat[layout.state(k, i)]))
            .collect();
        Ok(Self {
            tf: flat[Layout::TF],
            states,
            delta: flat[layout.delta(0)..layout.delta(0) + nc].to_vec(),
            n: flat[layout.n(0)..layout.n(0) + nc].to_vec(),
        })
    }

    pub fn control(&self, k: usize) -> [f64; CONTROL_DIM] {
        [self.delta[k], self.n[k]]
    }

    pub fn points(&self) -> usize {
        self.states.len()
    }
}

/// Desired final docking states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingTarget {
    pub x_fin: ShipState,
}

impl DockingTarget {
    pub fn new(x_fin: ShipState) -> Result<Self> {
        ensure_finite(&x_fin.to_array(), "docking target")?;
        Ok(Self { x_fin })
    }

    /// Alongside the berth with 0.01 m/s residual surge.
    pub fn default_berth() -> Self {
        Self { x_fin: ShipState::new(-0.50, 0.01, -0.50, 0.0, std::f64::consts::PI, 0.0) }
    }
}

/// Symmetric rudder angle (deg) and propeller speed (rps) limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub delta_max: f64,
    pub n_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self { delta_max: 25.0, n_max: 15.0 }
    }
}

impl ControlLimits {
    pub fn new(delta_max: f64, n_max: f64) -> Result<Self> {
        let limits = Self { delta_max, n_max };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_max > 0.0 && self.delta_max <= DELTA_ACTUAL_MAX) {
            return Err(Error::InvalidLimits(format!(
                "delta_max {} must lie in (0, {DELTA_ACTUAL_MAX}]",
                self.delta_max
            )));
        }
        if !(self.n_max > 0.0 && self.n_max <= N_ACTUAL_MAX) {
            return Err(Error::InvalidLimits(format!(
                "n_max {} must lie in (0, {N_ACTUAL_MAX}]",
                self.n_max
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, u: [f64; CONTROL_DIM]) -> [f64; CONTROL_DIM] {
        [u[0].clamp(-self.delta_max, self.delta_max), u[1].clamp(-self.n_max, self.n_max)]
    }
}

/// Harbor and hull outline for the point-in-polygon equalities.
#[derive(Debug, Clone)]
pub struct CollisionModel {
    pub polygon: HarborPolygon,
    pub footprint: ShipFootprint,
}

impl CollisionModel {
    pub fn points(&self) -> usize {
        self.footprint.len()
    }
}

/// Transcription options beyond the problem data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionOptions {
    pub tf_bounds: (f64, f64),
    pub weights: [f64; STATE_DIM],
    /// Relative forward-difference step for the dynamics blocks.
    pub fd_step: f64,
}

impl Default for TranscriptionOptions {
    fn default() -> Self {
        Self { tf_bounds: TF_BOUNDS, weights: [1.0; STATE_DIM], fd_step: 1e-7 }
    }
}

/// Equality constraint families in stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    Initial,
    Terminal,
    TerminalSimpson,
    Interpolation,
    Quadrature,
    Collision,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 6] = [
        ConstraintFamily::Initial,
        ConstraintFamily::Terminal,
        ConstraintFamily::TerminalSimpson,
        ConstraintFamily::Interpolation,
        ConstraintFamily::Quadrature,
        ConstraintFamily::Collision,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintFamily::Initial => "initial",
            ConstraintFamily::Terminal => "terminal",
            ConstraintFamily::TerminalSimpson => "terminal_simpson",
            ConstraintFamily::Interpolation => "interpolation",
            ConstraintFamily::Quadrature => "quadrature",
            ConstraintFamily::Collision => "collision",
        }
    }
}

/// Mid-segment state of the cubic Hermite interpolant.
pub fn hermite_state(
    x_a: &[f64; STATE_DIM],
    f_a: &[f64; STATE_DIM],
    x_b: &[f64; STATE_DIM],
    f_b: &[f64; STATE_DIM],
    hs: f64,
) -> [f64; STATE_DIM] {
    std::array::from_fn(|i| 0.5 * (x_a[i] + x_b[i]) + hs / 8.0 * (f_a[i] - f_b[i]))
}

/// Mid-segment slope of the cubic Hermite interpolant.
pub fn hermite_slope(
    x_a: &[f64; STATE_DIM],
    f_a: &[f64; STATE_DIM],
    x_b: &[f64; STATE_DIM],
    f_b: &[f64; STATE_DIM],
    hs: f64,
) -> [f64; STATE_DIM] {
    std::array::from_fn(|i| -1.5 / hs * (x_a[i] - x_b[i]) - 0.25 * (f_a[i] + f_b[i]))
}

type Block6 = SMatrix<f64, STATE_DIM, STATE_DIM>;
type Block62 = SMatrix<f64, STATE_DIM, CONTROL_DIM>;

/// The transcribed NLP; immutable once built.
#[derive(Debug, Clone)]
pub struct NlpProblem<P: Plant = ShipPlant> {
    pub plant: P,
    pub collision: Option<CollisionModel>,
    pub x_init: [f64; STATE_DIM],
    pub target: DockingTarget,
    pub limits: ControlLimits,
    pub grid: CollocationGrid,
    pub options: TranscriptionOptions,
}

/// Build the ship docking NLP.
#[allow(clippy::too_many_arguments)]
pub fn build_nlp(
    params: &ShipParams,
    wind: WindCondition,
    polygon: &HarborPolygon,
    footprint: &ShipFootprint,
    x_init: &ShipState,
    target: &DockingTarget,
    limits: ControlLimits,
    segments: usize,
) -> Result<NlpProblem<ShipPlant>> {
    params.validate()?;
    NlpProblem::new(
        ShipPlant { params: params.clone(), wind },
        Some(CollisionModel { polygon: polygon.clone(), footprint: footprint.clone() }),
        x_init.to_array(),
        *target,
        limits,
        CollocationGrid::new(segments)?,
        TranscriptionOptions::default(),
    )
}

impl<P: Plant> NlpProblem<P> {
    pub fn new(
        plant: P,
        collision: Option<CollisionModel>,
        x_init: [f64; STATE_DIM],
        target: DockingTarget,
        limits: ControlLimits,
        grid: CollocationGrid,
        options: TranscriptionOptions,
    ) -> Result<Self> {
        ensure_finite(&x_init, "initial state")?;
        ensure_finite(&target.x_fin.to_array(), "docking target")?;
        limits.validate()?;
        let (lo, hi) = options.tf_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidLimits(format!("tf bounds [{lo}, {hi}] must satisfy 0 < lo < hi")));
        }
        if options.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("objective weights must be finite and non-negative".into()));
        }
        if !(options.fd_step > 0.0) {
            return Err(Error::Config("finite-difference step must be > 0".into()));
        }
        Ok(Self { plant, collision, x_init, target, limits, grid, options })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.grid)
    }

    pub fn boundary_points(&self) -> usize {
        self.collision.as_ref().map_or(0, CollisionModel::points)
    }

    /// Row range of every constraint family.
    pub fn family_ranges(&self) -> Vec<(ConstraintFamily, Range<usize>)> {
        let ns = self.grid.segments();
        let sizes = [
            STATE_DIM,
            STATE_DIM,
            STATE_DIM,
            STATE_DIM * ns,
            STATE_DIM * ns,
            self.boundary_points() * self.grid.points(),
        ];
        let mut start = 0;
        ConstraintFamily::ALL
            .iter()
            .zip(sizes)
            .map(|(f, n)| {
                let r = start..start + n;
                start += n;
                (*f, r)
            })
            .collect()
    }

    pub fn family_range(&self, family: ConstraintFamily) -> Range<usize> {
        self.family_ranges()
            .into_iter()
            .find(|(f, _)| *f == family)
            .map(|(_, r)| r)
            .expect("every family has a range")
    }

    pub fn unpack(&self, flat: &[f64]) -> Result<DecisionVector> {
        DecisionVector::unpack(&self.grid, flat)
    }

    pub fn rates(&self, d: &DecisionVector) -> Result<Vec<[f64; STATE_DIM]>> {
        (0..d.points()).map(|k| self.plant.rate(&d.states[k], &d.control(k))).collect()
    }

    fn deviation(&self, x: &[f64; STATE_DIM]) -> f64 {
        let xf = self.target.x_fin.to_array();
        (0..STATE_DIM).map(|i| self.options.weights[i] * (x[i] - xf[i]).powi(2)).sum()
    }

    /// Composite Simpson weights over the discretization points (times hs/6).
    fn simpson_weight(&self, k: usize) -> f64 {
        let nc = self.grid.points();
        if k == 0 || k == nc - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        }
    }

    /// Terminal deviation times the Simpson-integrated running deviation.
    pub fn objective_of(&self, d: &DecisionVector) -> f64 {
        let terminal = self.deviation(d.states.last().expect("grid has points"));
        let hs = self.grid.hs(d.tf);
        let integral: f64 = d
            .states
            .iter()
            .enumerate()
            .map(|(k, x)| self.simpson_weight(k) * self.deviation(x))
            .sum::<f64>()
            * hs
            / 6.0;
        terminal * integral
    }

    /// All equality residuals in family order.
    pub fn residuals_of(&self, d: &DecisionVector) -> Result<Vec<f64>> {
        let f = self.rates(d)?;
        self.residuals_with_rates(d, &f)
    }

    fn residuals_with_rates(&self, d: &DecisionVector, f: &[[f64; STATE_DIM]]) -> Result<Vec<f64>> {
        let nc = self.grid.points();
        let ns = self.grid.segments();
        let hs = self.grid.hs(d.tf);
        let xf = self.target.x_fin.to_array();
        let mut r = Vec::with_capacity(18 + 12 * ns + self.boundary_points() * nc);
        r.extend((0..STATE_DIM).map(|i| d.states[0][i] - self.x_init[i]));
        r.extend((0..STATE_DIM).map(|i| d.states[nc - 1][i] - xf[i]));
        let (a, m, b) = (nc - 3, nc - 2, nc - 1);
        r.extend((0..STATE_DIM).map(|i| {
            d.states[a][i] - (xf[i] - hs / 6.0 * (f[a][i] + 4.0 * f[m][i] + f[b][i]))
        }));
        for q in 0..ns {
            let (a, m, b) = (2 * q, 2 * q + 1, 2 * q + 2);
            let xh = hermite_state(&d.states[a], &f[a], &d.states[b], &f[b], hs);
            r.extend((0..STATE_DIM).map(|i| xh[i] - d.states[m][i]));
        }
        for q in 0..ns {
            let (a, m, b) = (2 * q, 2 * q + 1, 2 * q + 2);
            let fh = hermite_slope(&d.states[a], &f[a], &d.states[b], &f[b], hs);
            r.extend((0..STATE_DIM).map(|i| fh[i] - f[m][i]));
        }
        if let Some(col) = &self.collision {
            for x in &d.states {
                let pose = Pose::new(x[0], x[2], x[4]);
                for p in col.footprint.world_points(&pose) {
                    r.push(col.polygon.angle_sum(&p)? - TAU);
                }
            }
        }
        Ok(r)
    }

    /// Rate and its forward-difference partials at one point.
    fn rate_blocks(
        &self,
        x: &[f64; STATE_DIM],
        u: &[f64; CONTROL_DIM],
        f0: &[f64; STATE_DIM],
    ) -> Result<(Block6, Block62)> {
        let step = self.options.fd_step;
        let mut a = Block6::zeros();
        let mut b = Block62::zeros();
        for j in 0..STATE_DIM {
            let h = step * x[j].abs().max(1.0);
            let mut xp = *x;
            xp[j] += h;
            let h = xp[j] - x[j];
            let fp = self.plant.rate(&xp, u)?;
            for i in 0..STATE_DIM {
                a[(i, j)] = (fp[i] - f0[i]) / h;
            }
        }
        for j in 0..CONTROL_DIM {
            let h = step * u[j].abs().max(1.0);
            let mut up = *u;
            up[j] += h;
            let h = up[j] - u[j];
            let fp = self.plant.rate(x, &up)?;
            for i in 0..STATE_DIM {
                b[(i, j)] = (fp[i] - f0[i]) / h;
            }
        }
        Ok((a, b))
    }

    /// Equality Jacobian by the chain rule over finite-differenced dynamics blocks.
    pub fn structured_jacobian(&self, d: &DecisionVector) -> Result<DMatrix<f64>> {
        let nc = self.grid.points();
        let ns = self.grid.segments();
        let hs = self.grid.hs(d.tf);
        let dhs = 1.0 / ns as f64;
        let lay = self.layout();
        let f = self.rates(d)?;
        let blocks: Vec<(Block6, Block62)> = (0..nc)
            .map(|k| self.rate_blocks(&d.states[k], &d.control(k), &f[k]))
            .collect::<Result<_>>()?;
        let rows = self.family_ranges().last().map_or(0, |(_, r)| r.end);
        let mut jac = DMatrix::zeros(rows, lay.len());

        // Adds `scale * (A_k | B_k)` into the six rows starting at `row`.
        let add_point = |jac: &mut DMatrix<f64>, row: usize, k: usize, scale: f64, identity: f64| {
            let (a, b) = &blocks[k];
            for i in 0..STATE_DIM {
                for j in 0..STATE_DIM {
                    jac[(row + i, lay.state(k, j))] += scale * a[(i, j)];
                }
                jac[(row + i, lay.state(k, i))] += identity;
                for j in 0..CONTROL_DIM {
                    jac[(row + i, lay.control(k, j))] += scale * b[(i, j)];
                }
            }
        };

        let fam = self.family_ranges();
        for i in 0..STATE_DIM {
            jac[(fam[0].1.start + i, lay.state(0, i))] = 1.0;
            jac[(fam[1].1.start + i, lay.state(nc - 1, i))] = 1.0;
        }
        let row = fam[2].1.start;
        let (a, m, b) = (nc - 3, nc - 2, nc - 1);
        add_point(&mut jac, row, a, hs / 6.0, 1.0);
        add_point(&mut jac, row, m, 4.0 * hs / 6.0, 0.0);
        add_point(&mut jac, row, b, hs / 6.0, 0.0);
        for i in 0..STATE_DIM {
            jac[(row + i, Layout::TF)] = dhs / 6.0 * (f[a][i] + 4.0 * f[m][i] + f[b][i]);
        }
        for q in 0..ns {
            let (a, m, b) = (2 * q, 2 * q + 1, 2 * q + 2);
            let row = fam[3].1.start + STATE_DIM * q;
            add_point(&mut jac, row, a, hs / 8.0, 0.5);
            add_point(&mut jac, row, b, -hs / 8.0, 0.5);
            for i in 0..STATE_DIM {
                jac[(row + i, lay.state(m, i))] -= 1.0;
                jac[(row + i, Layout::TF)] = dhs / 8.0 * (f[a][i] - f[b][i]);
            }
            let row = fam[4].1.start + STATE_DIM * q;
            add_point(&mut jac, row, a, -0.25, -1.5 / hs);
            add_point(&mut jac, row, b, -0.25, 1.5 / hs);
            add_point(&mut jac, row, m, -1.0, 0.0);
            for i in 0..STATE_DIM {
                jac[(row + i, Layout::TF)] =
                    1.5 / (hs * hs) * dhs * (d.states[a][i] - d.states[b][i]);
            }
        }
        if let Some(col) = &self.collision {
            let start = fam[5].1.start;
            let np = col.points();
            for (k, x) in d.states.iter().enumerate() {
                let pose = Pose::new(x[0], x[2], x[4]);
                let dpsi = col.footprint.world_points_dpsi(&pose);
                for (j, p) in col.footprint.world_points(&pose).iter().enumerate() {
                    let g = angle_sum_gradient(p, col.polygon.vertices())?;
                    let row = start + np * k + j;
                    jac[(row, lay.state(k, 0))] = g.x;
                    jac[(row, lay.state(k, 2))] = g.y;
                    jac[(row, lay.state(k, 4))] = g.dot(&dpsi[j]);
                }
            }
        }
        Ok(jac)
    }

    /// Exact gradient of the product-form objective.
    pub fn objective_gradient_of(&self, d: &DecisionVector) -> Vec<f64> {
        let lay = self.layout();
        let nc = self.grid.points();
        let xf = self.target.x_fin.to_array();
        let w = &self.options.weights;
        let hs = self.grid.hs(d.tf);
        let terminal = self.deviation(&d.states[nc - 1]);
        let integral: f64 = d
            .states
            .iter()
            .enumerate()
            .map(|(k, x)| self.simpson_weight(k) * self.deviation(x))
            .sum::<f64>()
            * hs
            / 6.0;
        let mut g = vec![0.0; lay.len()];
        g[Layout::TF] = terminal * integral / d.tf;
        for (k, x) in d.states.iter().enumerate() {
            for i in 0..STATE_DIM {
                let dev = 2.0 * w[i] * (x[i] - xf[i]);
                g[lay.state(k, i)] += terminal * self.simpson_weight(k) * hs / 6.0 * dev;
                if k == nc - 1 {
                    g[lay.state(k, i)] += integral * dev;
                }
            }
        }
        g
    }

    /// Exterior distance plus a small margin for every boundary point outside.
    pub fn exterior_residuals(&self, d: &DecisionVector) -> Vec<f64> {
        const MARGIN: f64 = 1e-3;
        let Some(col) = &self.collision else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(col.points() * d.points());
        for x in &d.states {
            for p in col.footprint.world_points(&Pose::new(x[0], x[2], x[4])) {
                let outside = col.polygon.angle_sum(&p).map(|s| s < 0.5 * TAU).unwrap_or(true);
                out.push(if outside { col.polygon.boundary_distance(&p) + MARGIN } else { 0.0 });
            }
        }
        out
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        let lay = self.layout();
        let nc = self.grid.points();
        let mut lo = vec![f64::NEG_INFINITY; lay.len()];
        lo[Layout::TF] = self.options.tf_bounds.0;
        for k in 0..nc {
            lo[lay.delta(k)] = -self.limits.delta_max;
            lo[lay.n(k)] = -self.limits.n_max;
        }
        lo
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        let lay = self.layout();
        let nc = self.grid.points();
        let mut hi = vec![f64::INFINITY; lay.len()];
        hi[Layout::TF] = self.options.tf_bounds.1;
        for k in 0..nc {
            hi[lay.delta(k)] = self.limits.delta_max;
            hi[lay.n(k)] = self.limits.n_max;
        }
        hi
    }

    /// Largest bound violation of a flat decision vector.
    pub fn bound_violation(&self, flat: &[f64]) -> f64 {
        self.lower_bounds()
            .iter()
            .zip(self.upper_bounds())
            .zip(flat)
            .map(|((lo, hi), v)| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Integrate the collocation equations forward for fixed controls and tf:
    /// each segment solves interpolation and quadrature rows for its
    /// mid-point and end knot by Newton iteration.
    pub fn collocation_forward(
        &self,
        x0: [f64; STATE_DIM],
        tf: f64,
        delta: &[f64],
        n: &[f64],
    ) -> Result<DecisionVector> {
        let nc = self.grid.points();
        if delta.len() != nc || n.len() != nc {
            return Err(Error::DimensionMismatch { expected: nc, got: delta.len().min(n.len()) });
        }
        let hs = self.grid.hs(tf);
        let mut states = vec![x0; nc];
        for q in 0..self.grid.segments() {
            let (a, m, b) = (2 * q, 2 * q + 1, 2 * q + 2);
            let ua = [delta[a], n[a]];
            let um = [delta[m], n[m]];
            let ub = [delta[b], n[b]];
            let xa = states[a];
            let fa = self.plant.rate(&xa, &ua)?;
            let mut z = SVector::<f64, 12>::zeros();
            for i in 0..STATE_DIM {
                z[i] = xa[i] + 0.5 * hs * fa[i];
                z[STATE_DIM + i] = xa[i] + hs * fa[i];
            }
            let eval = |z: &SVector<f64, 12>| -> Result<SVector<f64, 12>> {
                let xm: [f64; STATE_DIM] = std::array::from_fn(|i| z[i]);
                let xb: [f64; STATE_DIM] = std::array::from_fn(|i| z[STATE_DIM + i]);
                let fm = self.plant.rate(&xm, &um)?;
                let fb = self.plant.rate(&xb, &ub)?;
                let xh = hermite_state(&xa, &fa, &xb, &fb, hs);
                let fh = hermite_slope(&xa, &fa, &xb, &fb, hs);
                Ok(SVector::<f64, 12>::from_fn(|i, _| {
                    if i < STATE_DIM {
                        xh[i] - xm[i]
                    } else {
                        fh[i - STATE_DIM] - fm[i - STATE_DIM]
                    }
                }))
            };
            let mut converged = false;
            for _ in 0..50 {
                let r = eval(&z)?;
                if r.amax() < 1e-13 {
                    converged = true;
                    break;
                }
                let mut jac = SMatrix::<f64, 12, 12>::zeros();
                for j in 0..12 {
                    let h = 1e-7 * z[j].abs().max(1.0);
                    let mut zp = z;
                    zp[j] += h;
                    let col = (eval(&zp)? - r) / h;
                    jac.set_column(j, &col);
                }
                let step = jac.lu().solve(&(-r)).ok_or_else(|| {
                    Error::SolverAborted(format!("singular collocation Jacobian in segment {q}"))
                })?;
                z += step;
                if step.amax() < 1e-15 * z.amax().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged && eval(&z)?.amax() > 1e-9 {
                return Err(Error::SolverAborted(format!("collocation Newton failed in segment {q}")));
            }
            states[m] = std::array::from_fn(|i| z[i]);
            states[b] = std::array::from_fn(|i| z[STATE_DIM + i]);
        }
        Ok(DecisionVector { tf, states, delta: delta.to_vec(), n: n.to_vec() })
    }
}

impl<P: Plant> Nlp for NlpProblem<P> {
    fn num_variables(&self) -> usize {
        self.layout().len()
    }

    fn num_equalities(&self) -> usize {
        self.family_ranges().last().map_or(0, |(_, r)| r.end)
    }

    fn lower_bounds(&self) -> Vec<f64> {
        NlpProblem::lower_bounds(self)
    }

    fn upper_bounds(&self) -> Vec<f64> {
        NlpProblem::upper_bounds(self)
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.objective_of(&self.unpack(x)?))
    }

    fn equalities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.residuals_of(&self.unpack(x)?)
    }

    fn objective_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.objective_gradient_of(&self.unpack(x)?))
    }

    fn equality_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.structured_jacobian(&self.unpack(x)?)
    }

    fn variable_scale(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.num_variables()];
        s[Layout::TF] = 100.0;
        s
    }

    fn restoration_residuals(&self, x: &[f64]) -> Option<Result<Vec<f64>>> {
        self.collision.as_ref()?;
        Some(self.unpack(x).map(|d| self.exterior_residuals(&d)))
    }
}
