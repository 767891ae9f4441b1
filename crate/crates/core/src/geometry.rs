//! Harbor free region, ship footprint and angle-summation collision residuals.
//!
//! A point is inside a counter-clockwise simple polygon iff the signed angles
//! it subtends over all edges sum to 2pi (0 outside). Each angle is computed
//! as `atan2(cross, dot)` of the two rays to consecutive vertices, which is
//! smooth away from the boundary. Residuals are evaluated only where they are
//! asked for; a thin notch can still be cut between two sampled poses.

use nalgebra::{Point2, Rotation2, Vector2};
use serde::Deserialize;
use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{ensure_finite, Error, Result};

/// Rays shorter than this (m) are treated as coincident with a vertex.
pub const DEGENERATE_RAY_TOL: f64 = 1e-12;

/// Ship pose: midship position and unwrapped yaw angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x0: f64,
    pub y0: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x0: f64, y0: f64, psi: f64) -> Self {
        Self { x0, y0, psi }
    }
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Twice the signed area (positive for counter-clockwise order).
pub fn signed_area2(vertices: &[Point2<f64>]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

/// Sum of signed angles subtended at `point` by consecutive vertex pairs.
pub fn angle_sum(point: &Point2<f64>, vertices: &[Point2<f64>]) -> Result<f64> {
    let n = vertices.len();
    let mut total = 0.0;
    for i in 0..n {
        let a = vertices[i] - point;
        let b = vertices[(i + 1) % n] - point;
        if a.norm() < DEGENERATE_RAY_TOL {
            return Err(Error::DegenerateRay { index: i });
        }
        total += cross(&a, &b).atan2(a.dot(&b));
    }
    Ok(total)
}

/// Gradient of [`angle_sum`] with respect to `point`, summed edge by edge.
///
/// Telescopes to zero away from the boundary; returned as computed.
pub fn angle_sum_gradient(point: &Point2<f64>, vertices: &[Point2<f64>]) -> Result<Vector2<f64>> {
    let n = vertices.len();
    let mut g = Vector2::zeros();
    for i in 0..n {
        let a = vertices[i] - point;
        let b = vertices[(i + 1) % n] - point;
        let (na, nb) = (a.norm_squared(), b.norm_squared());
        if na.sqrt() < DEGENERATE_RAY_TOL {
            return Err(Error::DegenerateRay { index: i });
        }
        g += Vector2::new(b.y, -b.x) / nb - Vector2::new(a.y, -a.x) / na;
    }
    Ok(g)
}

fn segments_intersect(p1: Point2<f64>, p2: Point2<f64>, q1: Point2<f64>, q2: Point2<f64>) -> bool {
    let d1 = cross(&(q2 - q1), &(p1 - q1));
    let d2 = cross(&(q2 - q1), &(p2 - q1));
    let d3 = cross(&(p2 - p1), &(q1 - p1));
    let d4 = cross(&(p2 - p1), &(q2 - p1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |a: Point2<f64>, b: Point2<f64>, c: Point2<f64>| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

/// Obstacle-free region: a simple polygon stored counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct HarborPolygon {
    vertices: Vec<Point2<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolygonFile {
    #[allow(dead_code)]
    name: Option<String>,
    vertices: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FootprintFile {
    #[allow(dead_code)]
    name: Option<String>,
    points: Vec<[f64; 2]>,
}

const INUKAI_POND: &str = include_str!("../../../data/inukai_pond.toml");
const PENTAGON: &str = include_str!("../../../data/footprint_pentagon.toml");

impl HarborPolygon {
    /// Validates the outline and reorders it counter-clockwise (keeping the
    /// first vertex first) when given clockwise.
    pub fn new(vertices: Vec<Point2<f64>>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidPolygon(format!("need at least 3 vertices, got {n}")));
        }
        for v in &vertices {
            ensure_finite(&[v.x, v.y], "polygon vertex")?;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (vertices[i] - vertices[j]).norm() < DEGENERATE_RAY_TOL {
                    return Err(Error::InvalidPolygon(format!("vertices {i} and {j} coincide")));
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]) {
                    return Err(Error::InvalidPolygon(format!("edges {i} and {j} intersect")));
                }
            }
        }
        let area2 = signed_area2(&vertices);
        if area2.abs() < 1e-12 {
            return Err(Error::InvalidPolygon("polygon has zero area".into()));
        }
        let vertices = if area2 > 0.0 {
            vertices
        } else {
            let mut v = Vec::with_capacity(n);
            v.push(vertices[0]);
            v.extend(vertices[1..].iter().rev());
            v
        };
        Ok(Self { vertices })
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| Point2::new(p[0], p[1])).collect())
    }

    /// The bundled approximate outline of the model-scale pond (11 vertices).
    pub fn inukai_pond() -> Self {
        Self::from_toml_str(INUKAI_POND).expect("bundled harbor polygon is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: PolygonFile = toml::from_str(text)
            .map_err(|e| Error::Parse { path: "<polygon>".into(), message: e.to_string() })?;
        Self::from_pairs(&file.vertices)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text).map_err(|e| relabel(e, path))
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn angle_sum(&self, point: &Point2<f64>) -> Result<f64> {
        angle_sum(point, &self.vertices)
    }

    /// Angle-sum classification (true when the sum is closer to 2pi than 0).
    pub fn contains(&self, point: &Point2<f64>) -> bool {
        self.angle_sum(point).map(|s| s > 0.5 * TAU).unwrap_or(false)
    }

    /// Euclidean distance from `point` to the polygon boundary.
    pub fn boundary_distance(&self, point: &Point2<f64>) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| point_segment_distance(point, &self.vertices[i], &self.vertices[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance to the boundary for exterior points, 0 inside.
    pub fn exterior_distance(&self, point: &Point2<f64>) -> f64 {
        if self.contains(point) {
            0.0
        } else {
            self.boundary_distance(point)
        }
    }
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { message, .. } => Error::Parse { path: path.display().to_string(), message },
        other => other,
    }
}

/// Ship boundary points in the ship-fixed frame, midship at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ShipFootprint {
    local_points: Vec<Point2<f64>>,
}

impl ShipFootprint {
    /// Points must lie within `[-lpp/2, lpp/2] x [-breadth/2, breadth/2]`.
    pub fn new(local_points: Vec<Point2<f64>>, lpp: f64, breadth: f64) -> Result<Self> {
        if local_points.len() < 3 {
            return Err(Error::InvalidFootprint(format!(
                "need at least 3 boundary points, got {}",
                local_points.len()
            )));
        }
        let tol = 1e-9;
        for p in &local_points {
            ensure_finite(&[p.x, p.y], "footprint point")?;
            if p.x.abs() > 0.5 * lpp + tol || p.y.abs() > 0.5 * breadth + tol {
                return Err(Error::InvalidFootprint(format!(
                    "point ({}, {}) outside the hull bounding box {lpp} x {breadth}",
                    p.x, p.y
                )));
            }
        }
        Ok(Self { local_points })
    }

    /// Bow, two shoulders at Lpp/4 and two stern corners.
    pub fn pentagon(lpp: f64, breadth: f64) -> Self {
        let (hl, hb) = (0.5 * lpp, 0.5 * breadth);
        let pts = vec![
            Point2::new(hl, 0.0),
            Point2::new(0.5 * hl, hb),
            Point2::new(-hl, hb),
            Point2::new(-hl, -hb),
            Point2::new(0.5 * hl, -hb),
        ];
        Self { local_points: pts }
    }

    pub fn from_toml_str(text: &str, lpp: f64, breadth: f64) -> Result<Self> {
        let file: FootprintFile = toml::from_str(text)
            .map_err(|e| Error::Parse { path: "<footprint>".into(), message: e.to_string() })?;
        Self::new(file.points.iter().map(|p| Point2::new(p[0], p[1])).collect(), lpp, breadth)
    }

    /// The bundled pentagon for the 3 m model.
    pub fn bundled_pentagon() -> Self {
        Self::from_toml_str(PENTAGON, 3.0, 0.489).expect("bundled footprint is valid")
    }

    pub fn load(path: &Path, lpp: f64, breadth: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, lpp, breadth).map_err(|e| relabel(e, path))
    }

    pub fn local_points(&self) -> &[Point2<f64>] {
        &self.local_points
    }

    pub fn len(&self) -> usize {
        self.local_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_points.is_empty()
    }

    /// Derivative of each world point with respect to `psi` at `pose`.
    pub fn world_points_dpsi(&self, pose: &Pose) -> Vec<Vector2<f64>> {
        let (s, c) = pose.psi.sin_cos();
        self.local_points.iter().map(|p| Vector2::new(-s * p.x - c * p.y, c * p.x - s * p.y)).collect()
    }

    /// Boundary points in the earth-fixed frame.
    pub fn world_points(&self, pose: &Pose) -> Vec<Point2<f64>> {
        let rot = Rotation2::new(pose.psi);
        let origin = Vector2::new(pose.x0, pose.y0);
        self.local_points.iter().map(|p| Point2::from(rot * p.coords + origin)).collect()
    }
}

/// `angle_sum(p_j) - 2pi` for every footprint point `j` at `pose`.
pub fn collision_residuals(
    footprint: &ShipFootprint,
    pose: &Pose,
    polygon: &HarborPolygon,
) -> Result<Vec<f64>> {
    footprint
        .world_points(pose)
        .iter()
        .map(|p| polygon.angle_sum(p).map(|s| s - TAU))
        .collect()
}
