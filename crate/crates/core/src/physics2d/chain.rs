//! Reduced-coordinate planar revolute chains attached to a kinematic base.
//!
//! Joint angles are measured counter-clockwise; link `k`'s absolute heading is
//! `base.theta + base_angle + q[0] + ... + q[k]`.

use serde::{Deserialize, Serialize};

use super::BodyId;
use crate::math::{Pose, Twist, Vec2};

/// Upper bound on joints per chain.
pub const MAX_CHAIN_DOF: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub lower: f64,
    pub upper: f64,
    /// Viscous damping, N·m·s/rad.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub body: BodyId,
    pub length: f64,
    /// Distance from the joint to the link's center of mass along the link axis.
    pub com_offset: f64,
    pub mass: f64,
    /// About the center of mass.
    pub inertia: f64,
    pub joint: JointSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevoluteChain {
    pub base: BodyId,
    /// First joint position in the base frame.
    pub anchor: Vec2,
    /// Zero-configuration heading of the first link relative to the base.
    pub base_angle: f64,
    pub links: Vec<ChainLink>,
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    /// Joint torques accumulated for the next step.
    #[serde(skip)]
    pub(crate) tau: Vec<f64>,
    /// Joint-limit impulses `[lower, upper]` from the last solve, used for warm starting.
    #[serde(skip)]
    pub(crate) limit_impulse: Vec<[f64; 2]>,
}

/// Joint origins and absolute headings for a chain configuration.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub origins: Vec<Vec2>,
    pub headings: Vec<f64>,
    pub coms: Vec<Vec2>,
}

impl RevoluteChain {
    pub fn new(base: BodyId, anchor: Vec2, base_angle: f64, links: Vec<ChainLink>, q: Vec<f64>) -> Self {
        let n = links.len();
        assert!(n > 0 && n <= MAX_CHAIN_DOF, "chain must have 1..={MAX_CHAIN_DOF} links");
        assert_eq!(q.len(), n);
        Self {
            base,
            anchor,
            base_angle,
            links,
            q,
            dq: vec![0.0; n],
            tau: vec![0.0; n],
            limit_impulse: vec![[0.0; 2]; n],
        }
    }

    /// Restores scratch buffers skipped by serialization.
    pub(crate) fn ensure_buffers(&mut self) {
        let n = self.dof();
        self.tau.resize(n, 0.0);
        self.limit_impulse.resize(n, [0.0; 2]);
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Planar forward kinematics of the chain for joint angles `q`.
    pub fn frames(&self, base: &Pose, q: &[f64]) -> ChainFrames {
        let n = self.dof();
        let mut origins = Vec::with_capacity(n);
        let mut headings = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut o = base.transform_point(self.anchor);
        let mut h = base.theta + self.base_angle;
        for (k, link) in self.links.iter().enumerate() {
            h += q[k];
            let dir = Vec2::from_angle(h);
            origins.push(o);
            headings.push(h);
            coms.push(o + dir * link.com_offset);
            o += dir * link.length;
        }
        ChainFrames { origins, headings, coms }
    }

    /// Link body poses (centered at each link's center of mass).
    pub fn link_poses(&self, frames: &ChainFrames) -> Vec<Pose> {
        frames
            .coms
            .iter()
            .zip(&frames.headings)
            .map(|(c, h)| Pose::new(c.x, c.y, *h))
            .collect()
    }

    pub fn link_twists(&self, frames: &ChainFrames, dq: &[f64]) -> Vec<Twist> {
        (0..self.dof())
            .map(|k| {
                let mut v = Vec2::ZERO;
                let mut w = 0.0;
                for i in 0..=k {
                    v += (frames.coms[k] - frames.origins[i]).perp() * dq[i];
                    w += dq[i];
                }
                Twist::new(v.x, v.y, w)
            })
            .collect()
    }

    /// Joint-space mass matrix, row-major `n × n`.
    pub fn mass_matrix(&self, frames: &ChainFrames) -> Vec<f64> {
        let n = self.dof();
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            let link = &self.links[k];
            for i in 0..=k {
                let ji = (frames.coms[k] - frames.origins[i]).perp();
                for j in 0..=k {
                    let jj = (frames.coms[k] - frames.origins[j]).perp();
                    m[i * n + j] += link.mass * ji.dot(jj) + link.inertia;
                }
            }
        }
        m
    }

    /// Velocity-product (Coriolis/centrifugal) generalized forces.
    pub fn bias_forces(&self, frames: &ChainFrames, dq: &[f64]) -> Vec<f64> {
        let n = self.dof();
        // Joint-origin and COM velocities.
        let point_vel = |p: Vec2, upto: usize| -> Vec2 {
            let mut v = Vec2::ZERO;
            for i in 0..upto {
                v += (p - frames.origins[i]).perp() * dq[i];
            }
            v
        };
        let mut h = vec![0.0; n];
        for k in 0..n {
            let vc = point_vel(frames.coms[k], k + 1);
            // COM acceleration with zero joint accelerations.
            let mut acc = Vec2::ZERO;
            for i in 0..=k {
                let vo = point_vel(frames.origins[i], i);
                acc += (vc - vo).perp() * dq[i];
            }
            let f = acc * self.links[k].mass;
            for (i, hi) in h.iter_mut().enumerate().take(k + 1) {
                *hi += (frames.coms[k] - frames.origins[i]).perp().dot(f);
            }
        }
        h
    }

    /// Generalized-force row for a world-frame direction `dir` applied at `point` on link `k`.
    pub fn point_jacobian_row(&self, frames: &ChainFrames, k: usize, point: Vec2, dir: Vec2) -> [f64; MAX_CHAIN_DOF] {
        let mut row = [0.0; MAX_CHAIN_DOF];
        for (i, r) in row.iter_mut().enumerate().take(k + 1) {
            *r = (point - frames.origins[i]).cross(dir);
        }
        row
    }
}

/// Inverse of a small dense row-major matrix by Gauss-Jordan elimination.
pub(crate) fn invert(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r * n + j] -= f * a[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}
