#![allow(dead_code)]

use grasplab::math::{Pose, Vec2};
use grasplab::physics2d::Shape;
use rand::Rng;

/// Random circle or convex polygon (3 to 8 vertices, CCW, centered near the origin).
pub fn random_shape(rng: &mut impl Rng) -> Shape {
    if rng.random_bool(0.3) {
        return Shape::circle(rng.random_range(0.01..0.06));
    }
    let n = rng.random_range(3..=8);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let gap_ok = angles.windows(2).all(|w| w[1] - w[0] > 0.2)
        && angles[0] + std::f64::consts::TAU - angles[n - 1] > 0.2
        && angles.windows(2).all(|w| w[1] - w[0] < 2.8)
        && angles[0] + std::f64::consts::TAU - angles[n - 1] < 2.8;
    if !gap_ok {
        return random_shape(rng);
    }
    let r = rng.random_range(0.02..0.07);
    let vertices = angles.iter().map(|a| Vec2::from_angle(*a) * r).collect();
    Shape::Polygon { vertices }
}

fn world_vertices(shape: &Shape, pose: &Pose) -> Vec<Vec2> {
    match shape {
        Shape::Polygon { vertices } => vertices.iter().map(|v| pose.transform_point(*v)).collect(),
        _ => panic!("polygon expected"),
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}

fn edge_normals(vs: &[Vec2]) -> Vec<Vec2> {
    (0..vs.len())
        .map(|i| {
            let e = vs[(i + 1) % vs.len()] - vs[i];
            Vec2::new(e.y, -e.x) * (1.0 / e.norm())
        })
        .collect()
}

fn interval(vs: &[Vec2], axis: Vec2) -> (f64, f64) {
    vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let d = v.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Signed distance from a point to a convex polygon (negative inside).
fn polygon_signed_distance(p: Vec2, vs: &[Vec2]) -> f64 {
    let normals = edge_normals(vs);
    let inside = (0..vs.len()).all(|i| (p - vs[i]).dot(normals[i]) <= 0.0);
    if inside {
        -(0..vs.len()).map(|i| -(p - vs[i]).dot(normals[i])).fold(f64::INFINITY, f64::min)
    } else {
        (0..vs.len())
            .map(|i| point_segment_distance(p, vs[i], vs[(i + 1) % vs.len()]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Penetration depth (positive when overlapping, minus the gap otherwise) by
/// exhaustive vertex/edge projection.
pub fn oracle_penetration(a: &Shape, pa: &Pose, b: &Shape, pb: &Pose) -> f64 {
    match (a, b) {
        (Shape::Circle { radius: ra }, Shape::Circle { radius: rb }) => {
            ra + rb - (pb.position() - pa.position()).norm()
        }
        (Shape::Circle { radius }, _) => radius - polygon_signed_distance(pa.position(), &world_vertices(b, pb)),
        (_, Shape::Circle { radius }) => radius - polygon_signed_distance(pb.position(), &world_vertices(a, pa)),
        _ => {
            let va = world_vertices(a, pa);
            let vb = world_vertices(b, pb);
            let mut overlap = f64::INFINITY;
            for axis in edge_normals(&va).into_iter().chain(edge_normals(&vb)) {
                let (alo, ahi) = interval(&va, axis);
                let (blo, bhi) = interval(&vb, axis);
                overlap = overlap.min((ahi - blo).min(bhi - alo));
            }
            if overlap > 0.0 {
                return overlap;
            }
            let mut gap = f64::INFINITY;
            for (p, poly) in va.iter().map(|p| (p, &vb)).chain(vb.iter().map(|p| (p, &va))) {
                for i in 0..poly.len() {
                    gap = gap.min(point_segment_distance(*p, poly[i], poly[(i + 1) % poly.len()]));
                }
            }
            -gap
        }
    }
}
