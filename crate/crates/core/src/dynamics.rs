//! Three-degree-of-freedom maneuvering model of the vessel under wind.
//!
//! State ordering is `[x0, u, y0, vm, psi, r]` (positions in the earth-fixed
//! frame with x0 pointing north, velocities at midship in the ship-fixed
//! frame). Control is `[delta, n]` with the rudder angle kept in degrees.
//!
//! The kinetics are the rearranged MMG equations of motion about midship.
//! The total forces come from the reference force model whose coefficients
//! are loaded from a ship-parameter file (see `data/esso_osaka_3m.toml`):
//! quadratic resistance plus low-speed cross-flow drag for the hull, a
//! four-quadrant propeller thrust polynomial, a rudder normal force from the
//! effective inflow, and apparent-wind loads on projected areas.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::path::Path;

use crate::error::{ensure_finite, Error, Result};

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 2;

/// Rudder capacity of the model ship (deg).
pub const DELTA_ACTUAL_MAX: f64 = 35.0;
/// Propeller capacity of the model ship (rps).
pub const N_ACTUAL_MAX: f64 = 20.0;

/// Relative tolerance on the determinant of the sway/yaw block.
const SINGULAR_TOL: f64 = 1e-12;

/// Regularization used by the smooth absolute value in hull damping terms (m/s).
const SMOOTH_ABS_EPS: f64 = 1e-4;
/// Width of the smooth ramp used for the propeller slipstream (rps).
const SLIPSTREAM_RAMP: f64 = 0.5;

/// Ship state `[x0, u, y0, vm, psi, r]`. The yaw angle is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShipState {
    pub x0: f64,
    pub u: f64,
    pub y0: f64,
    pub vm: f64,
    pub psi: f64,
    pub r: f64,
}

impl ShipState {
    pub fn new(x0: f64, u: f64, y0: f64, vm: f64, psi: f64, r: f64) -> Self {
        Self { x0, u, y0, vm, psi, r }
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != STATE_DIM {
            return Err(Error::DimensionMismatch { expected: STATE_DIM, got: s.len() });
        }
        Ok(Self::new(s[0], s[1], s[2], s[3], s[4], s[5]))
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x0, self.u, self.y0, self.vm, self.psi, self.r]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Speed of midship over ground.
    pub fn speed(&self) -> f64 {
        self.u.hypot(self.vm)
    }
}

/// Rudder angle (deg) and propeller revolution (rps).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta: f64,
    pub n: f64,
}

impl ControlInput {
    pub fn new(delta: f64, n: f64) -> Self {
        Self { delta, n }
    }

    /// True when the input is inside the physical actuator capacity.
    pub fn within_capacity(&self) -> bool {
        self.delta.abs() <= DELTA_ACTUAL_MAX && self.n.abs() <= N_ACTUAL_MAX
    }
}

/// True wind speed and the direction it blows from, measured from north.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindCondition {
    speed: f64,
    from: f64,
}

impl WindCondition {
    pub fn new(speed_mps: f64, from_rad: f64) -> Result<Self> {
        ensure_finite(&[speed_mps, from_rad], "wind condition")?;
        if speed_mps < 0.0 {
            return Err(Error::Config(format!("wind speed must be >= 0, got {speed_mps}")));
        }
        Ok(Self { speed: speed_mps, from: from_rad.rem_euclid(TAU) })
    }

    pub fn from_degrees(speed_mps: f64, from_deg: f64) -> Result<Self> {
        Self::new(speed_mps, from_deg.to_radians())
    }

    pub fn calm() -> Self {
        Self { speed: 0.0, from: 0.0 }
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Blows-from direction in `[0, 2pi)`.
    pub fn direction(&self) -> f64 {
        self.from
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullCoefficients {
    pub wetted_surface_m2: f64,
    pub resistance_coefficient: f64,
    pub x_vv: f64,
    pub x_vr: f64,
    pub x_rr: f64,
    pub y_v: f64,
    pub y_r: f64,
    pub n_v: f64,
    pub n_r: f64,
    pub cross_flow_drag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropellerCoefficients {
    pub diameter_m: f64,
    pub wake_fraction: f64,
    pub thrust_deduction: f64,
    /// `[k0, k1, k2]` for u >= 0, n >= 0.
    pub kt_first: [f64; 3],
    /// u < 0, n >= 0.
    pub kt_second: [f64; 3],
    /// u < 0, n < 0.
    pub kt_third: [f64; 3],
    /// u >= 0, n < 0.
    pub kt_fourth: [f64; 3],
}

impl PropellerCoefficients {
    fn quadrant(&self, u: f64, n: f64) -> &[f64; 3] {
        match (u >= 0.0, n >= 0.0) {
            (true, true) => &self.kt_first,
            (false, true) => &self.kt_second,
            (false, false) => &self.kt_third,
            (true, false) => &self.kt_fourth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RudderCoefficients {
    pub area_m2: f64,
    pub aspect_ratio: f64,
    pub x_position_m: f64,
    pub steering_resistance_deduction: f64,
    pub hull_interaction_a_h: f64,
    pub hull_interaction_x_h_m: f64,
    pub flow_straightening: f64,
    pub inflow_ratio: f64,
    pub slipstream_gain: f64,
}

impl RudderCoefficients {
    /// Normal-force lift slope (Fujii's formula).
    pub fn lift_slope(&self) -> f64 {
        6.13 * self.aspect_ratio / (self.aspect_ratio + 2.25)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindCoefficients {
    pub frontal_area_m2: f64,
    pub lateral_area_m2: f64,
    pub cx: f64,
    pub cy: f64,
    pub cn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceCoefficients {
    pub water_density: f64,
    pub air_density: f64,
    pub hull: HullCoefficients,
    pub propeller: PropellerCoefficients,
    pub rudder: RudderCoefficients,
    pub wind: WindCoefficients,
}

/// Principal particulars, inertia and force-model coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShipParams {
    pub name: String,
    pub lpp: f64,
    pub breadth: f64,
    pub draught: f64,
    pub xg: f64,
    pub mass: f64,
    pub cb: f64,
    pub mx: f64,
    pub my: f64,
    pub izg: f64,
    pub jz: f64,
    pub forces: ForceCoefficients,
}

// On-disk layout of the ship-parameter file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShipFile {
    name: String,
    format_version: u32,
    principal: PrincipalSection,
    inertia: InertiaSection,
    environment: EnvironmentSection,
    hull: HullCoefficients,
    propeller: PropellerCoefficients,
    rudder: RudderCoefficients,
    wind: WindCoefficients,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrincipalSection {
    lpp_m: f64,
    breadth_m: f64,
    draught_m: f64,
    xg_m: f64,
    mass_kg: f64,
    block_coefficient: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InertiaSection {
    added_mass_x_kg: f64,
    added_mass_y_kg: f64,
    yaw_inertia_kgm2: f64,
    added_yaw_inertia_kgm2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentSection {
    water_density_kgpm3: f64,
    air_density_kgpm3: f64,
}

const ESSO_OSAKA_3M: &str = include_str!("../../../data/esso_osaka_3m.toml");

impl ShipParams {
    /// The bundled 3 m Esso Osaka model with the reference force model.
    pub fn esso_osaka_3m() -> Self {
        Self::from_toml_str(ESSO_OSAKA_3M).expect("bundled ship parameters are valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ShipFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<ship parameters>".into(),
            message: e.to_string(),
        })?;
        if file.format_version != 1 {
            return Err(Error::InvalidParams(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let params = ShipParams {
            name: file.name,
            lpp: file.principal.lpp_m,
            breadth: file.principal.breadth_m,
            draught: file.principal.draught_m,
            xg: file.principal.xg_m,
            mass: file.principal.mass_kg,
            cb: file.principal.block_coefficient,
            mx: file.inertia.added_mass_x_kg,
            my: file.inertia.added_mass_y_kg,
            izg: file.inertia.yaw_inertia_kgm2,
            jz: file.inertia.added_yaw_inertia_kgm2,
            forces: ForceCoefficients {
                water_density: file.environment.water_density_kgpm3,
                air_density: file.environment.air_density_kgpm3,
                hull: file.hull,
                propeller: file.propeller,
                rudder: file.rudder,
                wind: file.wind,
            },
        };
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.forces;
        let scalars = [
            self.lpp, self.breadth, self.draught, self.xg, self.mass, self.cb, self.mx, self.my,
            self.izg, self.jz, f.water_density, f.air_density,
        ];
        ensure_finite(&scalars, "ship parameters")?;
        for (name, v) in [
            ("lpp", self.lpp),
            ("breadth", self.breadth),
            ("draught", self.draught),
            ("mass", self.mass),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.mx_total() <= 0.0 || self.my_total() <= 0.0 || self.izm() <= 0.0 {
            return Err(Error::InvalidParams("derived masses Mx, My, Izm must be > 0".into()));
        }
        let p = &f.propeller;
        if p.diameter_m <= 0.0 {
            return Err(Error::InvalidParams("propeller diameter must be > 0".into()));
        }
        // Thrust continuity across the quadrant boundaries.
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        if !same(p.kt_first[0], p.kt_second[0]) || !same(p.kt_third[0], p.kt_fourth[0]) {
            return Err(Error::InvalidParams(
                "propeller k0 must agree across u = 0 (first/second, third/fourth)".into(),
            ));
        }
        if !same(p.kt_first[2], p.kt_fourth[2]) || !same(p.kt_second[2], p.kt_third[2]) {
            return Err(Error::InvalidParams(
                "propeller k2 must agree across n = 0 (first/fourth, second/third)".into(),
            ));
        }
        if f.rudder.aspect_ratio <= 0.0 || f.rudder.area_m2 < 0.0 {
            return Err(Error::InvalidParams("rudder area/aspect ratio invalid".into()));
        }
        Ok(())
    }

    /// Mx = m + mx.
    pub fn mx_total(&self) -> f64 {
        self.mass + self.mx
    }

    /// My = m + my.
    pub fn my_total(&self) -> f64 {
        self.mass + self.my
    }

    /// Izm = IzG + xG^2 m + Jz.
    pub fn izm(&self) -> f64 {
        self.izg + self.xg * self.xg * self.mass + self.jz
    }
}

/// Total surge force, sway force and yaw moment about midship.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceBreakdown {
    pub x: f64,
    pub y: f64,
    pub n: f64,
}

impl std::ops::Add for ForceBreakdown {
    type Output = ForceBreakdown;
    fn add(self, o: ForceBreakdown) -> ForceBreakdown {
        ForceBreakdown { x: self.x + o.x, y: self.y + o.y, n: self.n + o.n }
    }
}

/// Earth-fixed rates `[dx0/dt, dy0/dt, dpsi/dt]`.
pub fn kinematics(state: &ShipState) -> [f64; 3] {
    let (s, c) = state.psi.sin_cos();
    [c * state.u - s * state.vm, s * state.u + c * state.vm, state.r]
}

#[inline]
fn smooth_abs(x: f64) -> f64 {
    (x * x + SMOOTH_ABS_EPS * SMOOTH_ABS_EPS).sqrt()
}

#[inline]
fn smooth_positive(x: f64) -> f64 {
    0.5 * (x + (x * x + SLIPSTREAM_RAMP * SLIPSTREAM_RAMP).sqrt() - SLIPSTREAM_RAMP)
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Hull forces: resistance, linear maneuvering terms and cross-flow drag.
pub fn hull_forces(state: &ShipState, params: &ShipParams) -> ForceBreakdown {
    let h = &params.forces.hull;
    let rho = params.forces.water_density;
    let (l, d) = (params.lpp, params.draught);
    let (u, vm, r) = (state.u, state.vm, state.r);
    let q_ld = 0.5 * rho * l * d;

    let resistance = 0.5 * rho * h.wetted_surface_m2 * h.resistance_coefficient * u * u.abs();
    let x = -resistance + q_ld * (h.x_vv * vm * vm + h.x_vr * vm * r * l + h.x_rr * r * r * l * l);
    let mut y = q_ld * (h.y_v * smooth_abs(u) * vm + h.y_r * u * r * l);
    let mut n = q_ld * l * (h.n_v * u * vm + h.n_r * smooth_abs(u) * r * l);

    // Cross-flow drag integrated over the hull length.
    let half = 0.5 * l;
    let q_cf = 0.5 * rho * d * h.cross_flow_drag;
    let (mut iy, mut in_) = (0.0, 0.0);
    for (xi, wi) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        let xs = half * xi;
        let v_local = vm + xs * r;
        let q = v_local * v_local.abs();
        iy += wi * q;
        in_ += wi * xs * q;
    }
    y -= q_cf * half * iy;
    n -= q_cf * half * in_;
    ForceBreakdown { x, y, n }
}

/// Propeller thrust and rudder forces.
pub fn propeller_rudder_forces(
    state: &ShipState,
    control: &ControlInput,
    params: &ShipParams,
) -> ForceBreakdown {
    let p = &params.forces.propeller;
    let rd = &params.forces.rudder;
    let rho = params.forces.water_density;
    let dia = p.diameter_m;
    let n = control.n;
    let up = (1.0 - p.wake_fraction) * state.u;

    let k = p.quadrant(state.u, n);
    let thrust =
        rho * dia * dia * (k[0] * n * n.abs() * dia * dia + k[1] * n * up * dia + k[2] * up * up.abs());
    let x_p = (1.0 - p.thrust_deduction) * thrust;

    let delta = control.delta * PI / 180.0;
    let (sd, cd) = delta.sin_cos();
    let u_r = rd.inflow_ratio * up + rd.slipstream_gain * dia * smooth_positive(n);
    let v_r = rd.flow_straightening * (state.vm + rd.x_position_m * state.r);
    let speed_r = u_r.hypot(v_r);
    let normal = 0.5 * rho * rd.area_m2 * rd.lift_slope() * speed_r * (u_r * sd - v_r * cd);

    let x_r = -(1.0 - rd.steering_resistance_deduction) * normal * sd;
    let y_r = (1.0 + rd.hull_interaction_a_h) * normal * cd;
    let n_r = (rd.x_position_m + rd.hull_interaction_a_h * rd.hull_interaction_x_h_m) * normal * cd;
    ForceBreakdown { x: x_p + x_r, y: y_r, n: n_r }
}

/// Apparent wind vector `(a_x, a_y)` in the ship frame, pointing to where the
/// apparent wind comes from.
pub fn apparent_wind(state: &ShipState, wind: &WindCondition) -> (f64, f64) {
    let rel = wind.direction() - state.psi;
    (wind.speed() * rel.cos() + state.u, wind.speed() * rel.sin() + state.vm)
}

/// Wind loads from apparent wind speed and angle.
pub fn wind_forces(state: &ShipState, wind: &WindCondition, params: &ShipParams) -> ForceBreakdown {
    let w = &params.forces.wind;
    let rho_a = params.forces.air_density;
    let (ax, ay) = apparent_wind(state, wind);
    let speed = ax.hypot(ay);
    ForceBreakdown {
        x: -0.5 * rho_a * w.frontal_area_m2 * w.cx * speed * ax,
        y: -0.5 * rho_a * w.lateral_area_m2 * w.cy * speed * ay,
        n: -rho_a * w.lateral_area_m2 * params.lpp * w.cn * ax * ay,
    }
}

/// Total forces acting on the ship for the given state, control and wind.
pub fn total_forces(
    state: &ShipState,
    control: &ControlInput,
    wind: &WindCondition,
    params: &ShipParams,
) -> Result<ForceBreakdown> {
    ensure_finite(&state.to_array(), "state")?;
    ensure_finite(&[control.delta, control.n], "control")?;
    let f = hull_forces(state, params)
        + propeller_rudder_forces(state, control, params)
        + wind_forces(state, wind, params);
    ensure_finite(&[f.x, f.y, f.n], "force evaluation")?;
    Ok(f)
}

/// Body-frame accelerations `[du/dt, dvm/dt, dr/dt]` from the rearranged
/// equations of motion.
pub fn kinetics(state: &ShipState, forces: &ForceBreakdown, params: &ShipParams) -> Result<[f64; 3]> {
    let mx = params.mx_total();
    let my = params.my_total();
    let izm = params.izm();
    let xgm = params.xg * params.mass;
    let (u, vm, r) = (state.u, state.vm, state.r);

    let denominator = my * izm - xgm * xgm;
    let scale = my * izm + xgm * xgm;
    if denominator.abs() < SINGULAR_TOL * scale {
        return Err(Error::SingularMassMatrix { denominator, scale });
    }
    let sway = forces.y - mx * u * r;
    let yaw = forces.n - xgm * u * r;
    Ok([
        (forces.x + my * vm * r + xgm * r * r) / mx,
        (sway * izm - yaw * xgm) / denominator,
        (sway * xgm - yaw * my) / -denominator,
    ])
}

/// Full state rate `f(x, u, V, chi)` in state ordering.
pub fn dynamics(
    state: &ShipState,
    control: &ControlInput,
    wind: &WindCondition,
    params: &ShipParams,
) -> Result<[f64; STATE_DIM]> {
    let forces = total_forces(state, control, wind, params)?;
    let [dx, dy, dpsi] = kinematics(state);
    let [du, dv, dr] = kinetics(state, &forces, params)?;
    Ok([dx, du, dy, dv, dpsi, dr])
}

/// Sampled state trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ShipState>,
}

impl Trajectory {
    pub fn last(&self) -> &ShipState {
        self.states.last().expect("trajectory has at least one sample")
    }
}

fn axpy(a: &[f64; STATE_DIM], h: f64, k: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    std::array::from_fn(|i| a[i] + h * k[i])
}

/// One classical RK4 step of an autonomous-in-form system `x' = rhs(t, x)`.
pub fn rk4_step<F>(rhs: &mut F, t: f64, x: &[f64; STATE_DIM], h: f64) -> Result<[f64; STATE_DIM]>
where
    F: FnMut(f64, &[f64; STATE_DIM]) -> Result<[f64; STATE_DIM]>,
{
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + 0.5 * h, &axpy(x, 0.5 * h, &k1))?;
    let k3 = rhs(t + 0.5 * h, &axpy(x, 0.5 * h, &k2))?;
    let k4 = rhs(t + h, &axpy(x, h, &k3))?;
    Ok(std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// Fixed-step RK4 of a generic right-hand side over `[t0, t1]`.
///
/// The step is shrunk to `(t1 - t0) / ceil((t1 - t0) / step)` so that the
/// last sample lands on `t1`.
pub fn integrate_rk4_with<F>(
    mut rhs: F,
    x0: [f64; STATE_DIM],
    t_span: (f64, f64),
    step: f64,
) -> Result<(Vec<f64>, Vec<[f64; STATE_DIM]>)>
where
    F: FnMut(f64, &[f64; STATE_DIM]) -> Result<[f64; STATE_DIM]>,
{
    let (t0, t1) = t_span;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("integration step must be > 0, got {step}")));
    }
    ensure_finite(&[t0, t1], "time span")?;
    let span = t1 - t0;
    if span < 0.0 {
        return Err(Error::Config(format!("time span reversed: [{t0}, {t1}]")));
    }
    let steps = ((span / step) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { span / steps as f64 };
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0;
    times.push(t0);
    states.push(x);
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        x = rk4_step(&mut rhs, t, &x, h)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged {
                t: t + h,
                detail: format!("non-finite state {x:?}"),
            });
        }
        times.push(if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h });
        states.push(x);
    }
    Ok((times, states))
}

/// RK4 simulation of the ship under a time-dependent control signal.
pub fn integrate_rk4<C>(
    state: &ShipState,
    control: C,
    wind: &WindCondition,
    params: &ShipParams,
    t_span: (f64, f64),
    step: f64,
) -> Result<Trajectory>
where
    C: Fn(f64) -> ControlInput,
{
    ensure_finite(&state.to_array(), "initial state")?;
    let rhs = |t: f64, x: &[f64; STATE_DIM]| {
        let s = ShipState::from_array(*x);
        dynamics(&s, &control(t), wind, params).map_err(|e| match e {
            Error::NonFinite(_) => Error::IntegrationDiverged { t, detail: e.to_string() },
            other => other,
        })
    };
    let (times, xs) = integrate_rk4_with(rhs, state.to_array(), t_span, step)?;
    Ok(Trajectory { times, states: xs.into_iter().map(ShipState::from_array).collect() })
}
