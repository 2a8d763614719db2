use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::PhysicsError;
use crate::math::{closest_point_on_segment, polygon_centroid, Pose, Vec2};

/// Upper bound on polygon vertex count.
pub const MAX_POLYGON_VERTICES: usize = 8;

/// Collision shape in body coordinates. The body origin is its center of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Circle { radius: f64 },
    /// Convex, counter-clockwise.
    Polygon { vertices: Vec<Vec2> },
    /// Segment along the local x axis from `-half_length` to `+half_length`, inflated by `radius`.
    Capsule { half_length: f64, radius: f64 },
    /// Union of convex polygon parts. Parts must not overlap.
    Compound { parts: Vec<Shape> },
}

impl Shape {
    pub fn circle(radius: f64) -> Self {
        Shape::Circle { radius }
    }

    pub fn rect(width: f64, height: f64) -> Self {
        Self::rect_at(width, height, Vec2::ZERO)
    }

    /// Axis-aligned rectangle centered at `center` (body coordinates).
    pub fn rect_at(width: f64, height: f64, center: Vec2) -> Self {
        let (hw, hh) = (0.5 * width, 0.5 * height);
        Shape::Polygon {
            vertices: vec![
                center + Vec2::new(-hw, -hh),
                center + Vec2::new(hw, -hh),
                center + Vec2::new(hw, hh),
                center + Vec2::new(-hw, hh),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |why: &str| Err(PhysicsError::InvalidShape(why.to_string()));
        match self {
            Shape::Circle { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad("circle radius must be > 0");
                }
            }
            Shape::Capsule { half_length, radius } => {
                if !(half_length.is_finite() && *half_length > 0.0) {
                    return bad("capsule half_length must be > 0");
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad("capsule radius must be > 0");
                }
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                if n < 3 {
                    return bad("polygon needs at least 3 vertices");
                }
                if n > MAX_POLYGON_VERTICES {
                    return bad("polygon has too many vertices");
                }
                if vertices.iter().any(|v| !v.is_finite()) {
                    return bad("polygon vertex is not finite");
                }
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    if (b - a).cross(c - b) <= 0.0 {
                        return bad("polygon must be convex and counter-clockwise");
                    }
                }
            }
            Shape::Compound { parts } => {
                if parts.is_empty() {
                    return bad("compound needs at least one part");
                }
                for p in parts {
                    if !matches!(p, Shape::Polygon { .. }) {
                        return bad("compound parts must be polygons");
                    }
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Circle { radius } => PI * radius * radius,
            Shape::Capsule { half_length, radius } => {
                4.0 * half_length * radius + PI * radius * radius
            }
            Shape::Polygon { vertices } => polygon_centroid(vertices).1,
            Shape::Compound { parts } => parts.iter().map(Shape::area).sum(),
        }
    }

    /// Area centroid in body coordinates.
    pub fn centroid(&self) -> Vec2 {
        match self {
            Shape::Circle { .. } | Shape::Capsule { .. } => Vec2::ZERO,
            Shape::Polygon { vertices } => polygon_centroid(vertices).0,
            Shape::Compound { parts } => {
                let mut total = 0.0;
                let mut c = Vec2::ZERO;
                for p in parts {
                    let a = p.area();
                    c += p.centroid() * a;
                    total += a;
                }
                c * (1.0 / total)
            }
        }
    }

    /// Rotational inertia about the body origin for uniform density and total `mass`.
    pub fn inertia(&self, mass: f64) -> f64 {
        match self {
            Shape::Circle { radius } => 0.5 * mass * radius * radius,
            Shape::Capsule { half_length, radius } => {
                let (h, r) = (*half_length, *radius);
                let rect_area = 4.0 * h * r;
                let circ_area = PI * r * r;
                let density = mass / (rect_area + circ_area);
                let rect_mass = density * rect_area;
                let circ_mass = density * circ_area;
                let lc = 4.0 * r / (3.0 * PI);
                let circ_inertia = circ_mass * (0.5 * r * r + h * h + 2.0 * h * lc);
                let rect_inertia = rect_mass * (4.0 * r * r + 4.0 * h * h) / 12.0;
                circ_inertia + rect_inertia
            }
            Shape::Polygon { vertices } => {
                let density = mass / polygon_centroid(vertices).1;
                density * polygon_second_moment(vertices)
            }
            Shape::Compound { parts } => {
                let density = mass / self.area();
                parts
                    .iter()
                    .map(|p| match p {
                        Shape::Polygon { vertices } => density * polygon_second_moment(vertices),
                        _ => 0.0,
                    })
                    .sum()
            }
        }
    }

    /// Radius of a disk about the body origin containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Circle { radius } => *radius,
            Shape::Capsule { half_length, radius } => half_length + radius,
            Shape::Polygon { vertices } => vertices.iter().map(|v| v.norm()).fold(0.0, f64::max),
            Shape::Compound { parts } => parts.iter().map(Shape::bounding_radius).fold(0.0, f64::max),
        }
    }

    /// Convex cores of the shape placed at `pose` (one per compound part).
    pub(crate) fn world_cores(&self, pose: &Pose) -> Vec<Core> {
        match self {
            Shape::Circle { radius } => vec![Core::point(pose.position(), *radius)],
            Shape::Capsule { half_length, radius } => vec![Core::segment(
                pose.transform_point(Vec2::new(-half_length, 0.0)),
                pose.transform_point(Vec2::new(*half_length, 0.0)),
                *radius,
            )],
            Shape::Polygon { vertices } => vec![Core::polygon(vertices, pose)],
            Shape::Compound { parts } => parts.iter().flat_map(|p| p.world_cores(pose)).collect(),
        }
    }

    /// Euclidean distance from a world point to the shape at `pose`; zero inside.
    pub fn distance_to_point(&self, pose: &Pose, p: Vec2) -> f64 {
        self.world_cores(pose)
            .iter()
            .map(|c| c.distance_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed separation between two placed shapes: the gap when disjoint,
    /// minus the penetration depth when overlapping.
    pub fn separation(&self, pose: &Pose, other: &Shape, other_pose: &Pose) -> f64 {
        let mut best = f64::INFINITY;
        for a in self.world_cores(pose) {
            for b in other.world_cores(other_pose) {
                best = best.min(super::collide::core_separation(&a, &b));
            }
        }
        best
    }

    /// Extent of the shape along the world direction `dir` (unit), relative to `pose`'s origin.
    pub fn support_extent(&self, pose: &Pose, dir: Vec2) -> f64 {
        self.world_cores(pose)
            .iter()
            .map(|c| {
                c.verts()
                    .iter()
                    .map(|v| (*v - pose.position()).dot(dir))
                    .fold(f64::NEG_INFINITY, f64::max)
                    + c.radius
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Second moment of area about the origin of a counter-clockwise polygon.
fn polygon_second_moment(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut j = 0.0;
    for i in 0..n {
        let e1 = vertices[i];
        let e2 = vertices[(i + 1) % n];
        let cr = e1.cross(e2);
        j += cr / 12.0 * (e1.dot(e1) + e1.dot(e2) + e2.dot(e2));
    }
    j
}

/// A convex point, segment, or polygon inflated by `radius`, in world coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Core {
    v: [Vec2; MAX_POLYGON_VERTICES],
    n: [Vec2; MAX_POLYGON_VERTICES],
    pub count: usize,
    pub radius: f64,
}

impl Core {
    pub fn point(p: Vec2, radius: f64) -> Self {
        let mut c = Core {
            v: [Vec2::ZERO; MAX_POLYGON_VERTICES],
            n: [Vec2::ZERO; MAX_POLYGON_VERTICES],
            count: 1,
            radius,
        };
        c.v[0] = p;
        c
    }

    pub fn segment(a: Vec2, b: Vec2, radius: f64) -> Self {
        let mut c = Core {
            v: [Vec2::ZERO; MAX_POLYGON_VERTICES],
            n: [Vec2::ZERO; MAX_POLYGON_VERTICES],
            count: 2,
            radius,
        };
        c.v[0] = a;
        c.v[1] = b;
        let e = (b - a).normalized();
        c.n[0] = Vec2::new(e.y, -e.x);
        c.n[1] = -c.n[0];
        c
    }

    pub fn polygon(local: &[Vec2], pose: &Pose) -> Self {
        let mut c = Core {
            v: [Vec2::ZERO; MAX_POLYGON_VERTICES],
            n: [Vec2::ZERO; MAX_POLYGON_VERTICES],
            count: local.len(),
            radius: 0.0,
        };
        for (i, p) in local.iter().enumerate() {
            c.v[i] = pose.transform_point(*p);
        }
        let k = c.count;
        for i in 0..k {
            let e = (c.v[(i + 1) % k] - c.v[i]).normalized();
            c.n[i] = Vec2::new(e.y, -e.x);
        }
        c
    }

    pub fn verts(&self) -> &[Vec2] {
        &self.v[..self.count]
    }

    pub fn normals(&self) -> &[Vec2] {
        &self.n[..self.count]
    }

    /// Edge `i` as a segment. A point core has one degenerate edge and a
    /// segment core has both orientations of the same edge.
    pub fn edge(&self, i: usize) -> (Vec2, Vec2) {
        match self.count {
            1 => (self.v[0], self.v[0]),
            2 => {
                if i == 0 {
                    (self.v[0], self.v[1])
                } else {
                    (self.v[1], self.v[0])
                }
            }
            k => (self.v[i], self.v[(i + 1) % k]),
        }
    }

    /// Number of distinct boundary segments used for distance queries.
    pub fn distance_edge_count(&self) -> usize {
        match self.count {
            1 | 2 => 1,
            k => k,
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        if self.count < 3 {
            return false;
        }
        (0..self.count).all(|i| (p - self.v[i]).dot(self.n[i]) <= 0.0)
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let d = (0..self.distance_edge_count())
            .map(|i| {
                let (a, b) = self.edge(i);
                (closest_point_on_segment(p, a, b).0 - p).norm()
            })
            .fold(f64::INFINITY, f64::min);
        (d - self.radius).max(0.0)
    }
}
