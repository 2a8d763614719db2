//! Narrowphase for rounded convex cores (points, segments, polygons).
//!
//! Disjoint cores are handled through exact closest points between boundary
//! segments. Overlapping cores fall back to the separating-axis test with
//! reference/incident edge clipping, which yields up to two manifold points.

use super::shape::Core;
use crate::math::{closest_point_on_segment, Vec2};

/// Faces whose normals are within this cosine of the contact normal are
/// treated as parallel and produce a two-point manifold.
const PARALLEL_COS: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ManifoldPoint {
    pub point: Vec2,
    /// Signed gap along the normal; negative when penetrating.
    pub separation: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Manifold {
    /// Unit normal pointing from core A to core B.
    pub normal: Vec2,
    pub points: Vec<ManifoldPoint>,
}

/// Contact manifold between two cores, keeping points with `separation < max_separation`.
pub(crate) fn collide_cores(a: &Core, b: &Core, max_separation: f64) -> Manifold {
    if a.count == 1 && b.count == 1 {
        return collide_points(a, b, max_separation);
    }

    let overlap = b.verts().iter().any(|&p| a.contains(p)) || a.verts().iter().any(|&p| b.contains(p));
    let (dist, pa, pb) = if overlap {
        (0.0, Vec2::ZERO, Vec2::ZERO)
    } else {
        core_distance(a, b)
    };

    if dist > 1e-12 {
        disjoint_manifold(a, b, dist, pa, pb, max_separation)
    } else {
        sat_manifold(a, b, max_separation)
    }
}

/// Exact signed separation between two cores (negative when overlapping).
pub(crate) fn core_separation(a: &Core, b: &Core) -> f64 {
    let overlap = b.verts().iter().any(|&p| a.contains(p)) || a.verts().iter().any(|&p| b.contains(p));
    if !overlap || (a.count == 1 && b.count == 1) {
        let (dist, _, _) = core_distance(a, b);
        if dist > 1e-12 {
            return dist - a.radius - b.radius;
        }
    }
    sat_manifold(a, b, f64::INFINITY)
        .points
        .iter()
        .map(|p| p.separation)
        .fold(f64::INFINITY, f64::min)
}

fn collide_points(a: &Core, b: &Core, max_separation: f64) -> Manifold {
    let pa = a.verts()[0];
    let pb = b.verts()[0];
    let d = pb - pa;
    let dist = d.norm();
    let normal = if dist > 0.0 { d * (1.0 / dist) } else { Vec2::new(0.0, 1.0) };
    let separation = dist - a.radius - b.radius;
    let mut m = Manifold { normal, points: Vec::new() };
    if separation < max_separation {
        let sa = pa + normal * a.radius;
        let sb = pb - normal * b.radius;
        m.points.push(ManifoldPoint { point: (sa + sb) * 0.5, separation });
    }
    m
}

/// Minimum distance between the boundaries of two cores, with the closest points.
fn core_distance(a: &Core, b: &Core) -> (f64, Vec2, Vec2) {
    let mut best = (f64::INFINITY, Vec2::ZERO, Vec2::ZERO);
    for i in 0..a.distance_edge_count() {
        let (a0, a1) = a.edge(i);
        for j in 0..b.distance_edge_count() {
            let (b0, b1) = b.edge(j);
            let (d, p, q) = segment_distance(a0, a1, b0, b1);
            if d < best.0 {
                best = (d, p, q);
            }
        }
    }
    best
}

/// Closest points between segments `[a0, a1]` and `[b0, b1]`.
pub(crate) fn segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> (f64, Vec2, Vec2) {
    if let Some(x) = segment_intersection(a0, a1, b0, b1) {
        return (0.0, x, x);
    }
    let candidates = [
        (a0, closest_point_on_segment(a0, b0, b1).0),
        (a1, closest_point_on_segment(a1, b0, b1).0),
        (closest_point_on_segment(b0, a0, a1).0, b0),
        (closest_point_on_segment(b1, a0, a1).0, b1),
    ];
    let mut best = (f64::INFINITY, Vec2::ZERO, Vec2::ZERO);
    for (p, q) in candidates {
        let d = (q - p).norm();
        if d < best.0 {
            best = (d, p, q);
        }
    }
    best
}

fn segment_intersection(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<Vec2> {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = r.cross(s);
    if denom.abs() < 1e-300 {
        return None;
    }
    let t = (b0 - a0).cross(s) / denom;
    let u = (b0 - a0).cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(a0 + r * t)
    } else {
        None
    }
}

fn disjoint_manifold(
    a: &Core,
    b: &Core,
    dist: f64,
    pa: Vec2,
    pb: Vec2,
    max_separation: f64,
) -> Manifold {
    let separation = dist - a.radius - b.radius;
    let normal = (pb - pa) * (1.0 / dist);
    let mut m = Manifold { normal, points: Vec::new() };
    if separation >= max_separation {
        return m;
    }

    if a.count >= 2 && b.count >= 2 {
        let (ia, na) = best_face(a, normal);
        let (ib, nb) = best_face(b, -normal);
        if na.dot(normal) > PARALLEL_COS && -nb.dot(normal) > PARALLEL_COS {
            let (r0, r1) = a.edge(ia);
            let (i0, i1) = b.edge(ib);
            let pts = clip_to_reference(r0, r1, na, i0, i1, a.radius, b.radius, max_separation);
            if !pts.is_empty() {
                m.normal = na;
                m.points = pts;
                return m;
            }
        }
    }

    let sa = pa + normal * a.radius;
    let sb = pb - normal * b.radius;
    m.points.push(ManifoldPoint { point: (sa + sb) * 0.5, separation });
    m
}

/// Face of `c` whose outward normal is most aligned with `dir`.
fn best_face(c: &Core, dir: Vec2) -> (usize, Vec2) {
    let mut best = (0, c.normals()[0]);
    let mut best_dot = f64::NEG_INFINITY;
    for (i, n) in c.normals().iter().enumerate() {
        let d = n.dot(dir);
        if d > best_dot {
            best_dot = d;
            best = (i, *n);
        }
    }
    best
}

/// Maximum over faces of `reference` of the minimum signed distance of `other`'s vertices.
fn max_face_separation(reference: &Core, other: &Core) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    if reference.count < 2 {
        return best;
    }
    for i in 0..reference.count {
        let n = reference.normals()[i];
        let (v0, _) = reference.edge(i);
        let s = other
            .verts()
            .iter()
            .map(|p| (*p - v0).dot(n))
            .fold(f64::INFINITY, f64::min);
        if s > best.0 {
            best = (s, i);
        }
    }
    best
}

fn sat_manifold(a: &Core, b: &Core, max_separation: f64) -> Manifold {
    let (sep_a, edge_a) = max_face_separation(a, b);
    let (sep_b, edge_b) = max_face_separation(b, a);

    // Prefer A as reference unless B is clearly better.
    let flip = sep_b > sep_a + 1e-9;
    let (reference, incident, ref_edge, core_sep) = if flip {
        (b, a, edge_b, sep_b)
    } else {
        (a, b, edge_a, sep_a)
    };
    let n_ref = reference.normals()[ref_edge];
    let (r0, r1) = reference.edge(ref_edge);

    let inc_edge = if incident.count == 1 { 0 } else { best_face(incident, -n_ref).0 };
    let (i0, i1) = incident.edge(inc_edge);

    let mut pts = clip_to_reference(
        r0,
        r1,
        n_ref,
        i0,
        i1,
        reference.radius,
        incident.radius,
        max_separation,
    );

    // The deepest incident vertex defines the penetration depth. When clipping
    // against the reference side planes removes it, keep the vertex itself.
    let deepest_sep = core_sep - reference.radius - incident.radius;
    if deepest_sep < max_separation && !pts.iter().any(|p| p.separation <= deepest_sep + 1e-12) {
        let support = incident
            .verts()
            .iter()
            .copied()
            .min_by(|p, q| (*p - r0).dot(n_ref).total_cmp(&(*q - r0).dot(n_ref)))
            .unwrap_or(i0);
        let s_depth = (support - r0).dot(n_ref);
        let surf_inc = support - n_ref * incident.radius;
        let surf_ref = support - n_ref * (s_depth - reference.radius);
        let deepest = ManifoldPoint { point: (surf_inc + surf_ref) * 0.5, separation: deepest_sep };
        if pts.len() < 2 {
            pts.push(deepest);
        } else {
            let far = if (pts[0].point - support).norm_sq() < (pts[1].point - support).norm_sq() { 0 } else { 1 };
            pts[far] = deepest;
        }
    }

    Manifold { normal: if flip { -n_ref } else { n_ref }, points: pts }
}

/// Clips incident segment `[i0, i1]` to the side planes of reference edge
/// `[r0, r1]` (outward normal `n`) and measures each point's separation.
#[allow(clippy::too_many_arguments)]
fn clip_to_reference(
    r0: Vec2,
    r1: Vec2,
    n: Vec2,
    i0: Vec2,
    i1: Vec2,
    r_ref: f64,
    r_inc: f64,
    max_separation: f64,
) -> Vec<ManifoldPoint> {
    let t = r1 - r0;
    let len = t.norm();
    let mut out = Vec::with_capacity(2);

    let mut seg = [i0, i1];
    let n_pts = if (i1 - i0).norm_sq() > 0.0 { 2 } else { 1 };
    if len > 0.0 {
        let t = t * (1.0 / len);
        // Keep the part of the incident segment with 0 <= (p - r0)·t <= len.
        for (origin, dir, limit) in [(r0, t, 0.0), (r1, -t, 0.0)] {
            if n_pts == 1 {
                if (seg[0] - origin).dot(dir) < limit {
                    return out;
                }
                continue;
            }
            let d0 = (seg[0] - origin).dot(dir);
            let d1 = (seg[1] - origin).dot(dir);
            if d0 < 0.0 && d1 < 0.0 {
                return out;
            }
            if d0 < 0.0 {
                seg[0] = seg[0] + (seg[1] - seg[0]) * (d0 / (d0 - d1));
            } else if d1 < 0.0 {
                seg[1] = seg[1] + (seg[0] - seg[1]) * (d1 / (d1 - d0));
            }
        }
    }

    for &p in &seg[..n_pts] {
        let depth = (p - r0).dot(n);
        let separation = depth - r_ref - r_inc;
        if separation < max_separation {
            let surf_inc = p - n * r_inc;
            let surf_ref = p - n * (depth - r_ref);
            out.push(ManifoldPoint { point: (surf_inc + surf_ref) * 0.5, separation });
        }
    }
    if out.len() == 2 && (out[0].point - out[1].point).norm_sq() < 1e-24 {
        out.pop();
    }
    out
}
