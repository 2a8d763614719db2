//! Sequential-impulse (projected Gauss-Seidel) solver over generalized velocities.

use serde::{Deserialize, Serialize};

use super::chain::{invert, ChainFrames, MAX_CHAIN_DOF};
use super::{BodyId, BodyKind, Contact, PhysicsError, World};
use crate::math::Vec2;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    /// Largest impulse change in the final sweep.
    pub residual: f64,
    pub rows: usize,
}

#[derive(Clone, Copy)]
struct Side {
    offset: usize,
    len: usize,
    j: [f64; MAX_CHAIN_DOF],
    w: [f64; MAX_CHAIN_DOF],
}

impl Side {
    fn velocity(&self, vel: &[f64]) -> f64 {
        (0..self.len).map(|i| self.j[i] * vel[self.offset + i]).sum()
    }

    fn apply(&self, vel: &mut [f64], impulse: f64) {
        for i in 0..self.len {
            vel[self.offset + i] += self.w[i] * impulse;
        }
    }

    fn k(&self) -> f64 {
        (0..self.len).map(|i| self.j[i] * self.w[i]).sum()
    }
}

#[derive(Clone, Copy)]
enum RowKind {
    /// Unilateral, lambda >= 0.
    Normal,
    /// Friction bounded by mu times the normal row at `normal_row`.
    Tangent { normal_row: usize, mu: f64 },
}

struct Row {
    sides: [Option<Side>; 2],
    inv_k: f64,
    bias: f64,
    lambda: f64,
    kind: RowKind,
    contact: Option<usize>,
    /// `(chain, joint, 0 = lower | 1 = upper)` for joint-limit rows.
    limit: Option<(usize, usize, usize)>,
}

impl Row {
    fn velocity(&self, vel: &[f64]) -> f64 {
        self.sides.iter().flatten().map(|s| s.velocity(vel)).sum()
    }

    fn apply(&self, vel: &mut [f64], impulse: f64) {
        for s in self.sides.iter().flatten() {
            s.apply(vel, impulse);
        }
    }
}

enum Block {
    Free { inv_mass: f64, inv_inertia: f64 },
    Chain { dof: usize, inv: Vec<f64> },
}

/// Generalized velocity layout of a world: one block per dynamic body and per chain.
pub(crate) struct Layout {
    body_offset: Vec<Option<usize>>,
    chain_offset: Vec<usize>,
    blocks: Vec<(usize, Block)>,
    pub frames: Vec<ChainFrames>,
    pub vel: Vec<f64>,
}

impl Layout {
    pub fn build(world: &World) -> Result<Self, PhysicsError> {
        let dt = world.config.dt;
        let mut vel = Vec::new();
        let mut blocks = Vec::new();
        let mut body_offset = vec![None; world.bodies.len()];
        for (i, b) in world.bodies.iter().enumerate() {
            if b.kind == BodyKind::Dynamic {
                body_offset[i] = Some(vel.len());
                blocks.push((
                    vel.len(),
                    Block::Free { inv_mass: b.mass.inv_mass(), inv_inertia: b.mass.inv_inertia() },
                ));
                vel.extend_from_slice(&[b.twist.vx, b.twist.vy, b.twist.omega]);
            }
        }
        let mut chain_offset = Vec::with_capacity(world.chains.len());
        let mut frames = Vec::with_capacity(world.chains.len());
        for c in &world.chains {
            let base = world.bodies[c.base.0 as usize].pose;
            let f = c.frames(&base, &c.q);
            let n = c.dof();
            let mut m = c.mass_matrix(&f);
            for (i, l) in c.links.iter().enumerate() {
                m[i * n + i] += dt * l.joint.damping;
            }
            let inv = invert(&m, n).ok_or(PhysicsError::SingularChain)?;
            chain_offset.push(vel.len());
            blocks.push((vel.len(), Block::Chain { dof: n, inv }));
            vel.extend_from_slice(&c.dq);
            frames.push(f);
        }
        Ok(Self { body_offset, chain_offset, blocks, frames, vel })
    }

    fn block_at(&self, offset: usize) -> &Block {
        let i = self.blocks.iter().position(|(o, _)| *o == offset).expect("block offset");
        &self.blocks[i].1
    }

    fn finish_side(&self, offset: usize, len: usize, j: [f64; MAX_CHAIN_DOF]) -> Side {
        let mut w = [0.0; MAX_CHAIN_DOF];
        match self.block_at(offset) {
            Block::Free { inv_mass, inv_inertia } => {
                w[0] = j[0] * inv_mass;
                w[1] = j[1] * inv_mass;
                w[2] = j[2] * inv_inertia;
            }
            Block::Chain { dof, inv } => {
                for r in 0..*dof {
                    w[r] = (0..*dof).map(|c| inv[r * dof + c] * j[c]).sum();
                }
            }
        }
        Side { offset, len, j, w }
    }

    /// Jacobian side for a force along world direction `dir` applied at `point` on `body`.
    fn point_side(&self, world: &World, body: BodyId, point: Vec2, dir: Vec2) -> Option<Side> {
        let b = &world.bodies[body.0 as usize];
        match b.kind {
            BodyKind::Kinematic => None,
            BodyKind::Dynamic => {
                let offset = self.body_offset[body.0 as usize]?;
                if b.mass.inv_mass() == 0.0 {
                    return None;
                }
                let r = point - b.pose.position();
                let mut j = [0.0; MAX_CHAIN_DOF];
                j[0] = dir.x;
                j[1] = dir.y;
                j[2] = r.cross(dir);
                Some(self.finish_side(offset, 3, j))
            }
            BodyKind::Link { chain, index } => {
                let c = &world.chains[chain];
                let j = c.point_jacobian_row(&self.frames[chain], index, point, dir);
                Some(self.finish_side(self.chain_offset[chain], c.dof(), j))
            }
        }
    }

    /// Writes the generalized velocities back into bodies and chains.
    pub fn store(&self, world: &mut World) {
        for (i, off) in self.body_offset.iter().enumerate() {
            if let Some(o) = off {
                let t = &mut world.bodies[i].twist;
                t.vx = self.vel[*o];
                t.vy = self.vel[o + 1];
                t.omega = self.vel[o + 2];
            }
        }
        for (ci, c) in world.chains.iter_mut().enumerate() {
            let o = self.chain_offset[ci];
            let n = c.dof();
            c.dq.copy_from_slice(&self.vel[o..o + n]);
        }
    }

    pub fn chain_velocity(&self, chain: usize, dof: usize) -> &[f64] {
        let o = self.chain_offset[chain];
        &self.vel[o..o + dof]
    }
}

/// Resolves contacts and joint limits by projected Gauss-Seidel on `layout.vel`.
///
/// Impulses already present on `contacts` (and the chains' cached limit
/// impulses) are used as the initial guess. Returns the solved joint-limit
/// impulses per chain alongside the diagnostics.
pub(crate) fn solve(
    world: &World,
    layout: &mut Layout,
    contacts: &mut [Contact],
) -> (SolverDiagnostics, Vec<Vec<[f64; 2]>>) {
    let cfg = &world.config;
    let dt = cfg.dt;
    let mut rows: Vec<Row> = Vec::with_capacity(2 * contacts.len() + 8);

    for (ci, c) in contacts.iter().enumerate() {
        let n = c.normal;
        let t = c.tangent();
        let normal_sides = [
            layout.point_side(world, c.body_a, c.point, -n),
            layout.point_side(world, c.body_b, c.point, n),
        ];
        let k: f64 = normal_sides.iter().flatten().map(Side::k).sum();
        if k <= 0.0 {
            continue;
        }
        let separation = -c.penetration;
        let mut bias = if separation > 0.0 {
            -separation / dt
        } else if c.penetration > cfg.contact_slop {
            cfg.baumgarte_beta / dt * (c.penetration - cfg.contact_slop)
        } else {
            0.0
        };
        if cfg.restitution > 0.0 {
            let row = Row {
                sides: normal_sides,
                inv_k: 0.0,
                bias: 0.0,
                lambda: 0.0,
                kind: RowKind::Normal,
                contact: None,
                limit: None,
            };
            let vn = row.velocity(&layout.vel);
            if vn < -cfg.restitution_threshold {
                bias = bias.max(-cfg.restitution * vn);
            }
        }
        let normal_row = rows.len();
        rows.push(Row {
            sides: normal_sides,
            inv_k: 1.0 / k,
            bias,
            lambda: c.normal_impulse.max(0.0),
            kind: RowKind::Normal,
            contact: Some(ci),
            limit: None,
        });
        let tangent_sides = [
            layout.point_side(world, c.body_a, c.point, -t),
            layout.point_side(world, c.body_b, c.point, t),
        ];
        let kt: f64 = tangent_sides.iter().flatten().map(Side::k).sum();
        if kt > 0.0 {
            rows.push(Row {
                sides: tangent_sides,
                inv_k: 1.0 / kt,
                bias: 0.0,
                lambda: c.tangent_impulse.clamp(-c.friction * c.normal_impulse.max(0.0), c.friction * c.normal_impulse.max(0.0)),
                kind: RowKind::Tangent { normal_row, mu: c.friction },
                contact: Some(ci),
                limit: None,
            });
        }
    }

    // Speculative joint-limit rows keep q + dt·dq inside [lower, upper].
    for (chain_idx, c) in world.chains.iter().enumerate() {
        let offset = layout.chain_offset[chain_idx];
        for (i, l) in c.links.iter().enumerate() {
            let limits = [(1.0, (l.joint.lower - c.q[i]) / dt), (-1.0, (c.q[i] - l.joint.upper) / dt)];
            for (side_idx, (sign, bias)) in limits.into_iter().enumerate() {
                let mut j = [0.0; MAX_CHAIN_DOF];
                j[i] = sign;
                let side = layout.finish_side(offset, c.dof(), j);
                let k = side.k();
                if k > 0.0 {
                    rows.push(Row {
                        sides: [Some(side), None],
                        inv_k: 1.0 / k,
                        bias,
                        lambda: c.limit_impulse[i][side_idx].max(0.0),
                        kind: RowKind::Normal,
                        contact: None,
                        limit: Some((chain_idx, i, side_idx)),
                    });
                }
            }
        }
    }

    // Warm start from the impulses carried in by the caller.
    for row in &rows {
        if row.lambda != 0.0 {
            row.apply(&mut layout.vel, row.lambda);
        }
    }

    let mut residual = 0.0;
    for _ in 0..cfg.solver_iterations {
        residual = 0.0f64;
        for r in 0..rows.len() {
            let (lo, hi) = match rows[r].kind {
                RowKind::Normal => (0.0, f64::INFINITY),
                RowKind::Tangent { normal_row, mu } => {
                    let m = mu * rows[normal_row].lambda;
                    (-m, m)
                }
            };
            let row = &rows[r];
            let v = row.velocity(&layout.vel);
            let old = row.lambda;
            let new = (old + (row.bias - v) * row.inv_k).clamp(lo, hi);
            let delta = new - old;
            if delta != 0.0 {
                row.apply(&mut layout.vel, delta);
            }
            residual = residual.max(delta.abs());
            rows[r].lambda = new;
        }
    }

    let mut limit_impulses: Vec<Vec<[f64; 2]>> = world.chains.iter().map(|c| vec![[0.0; 2]; c.dof()]).collect();
    for row in &rows {
        if let Some((chain, joint, side)) = row.limit {
            limit_impulses[chain][joint][side] = row.lambda;
        }
        if let Some(ci) = row.contact {
            match row.kind {
                RowKind::Normal => contacts[ci].normal_impulse = row.lambda,
                RowKind::Tangent { .. } => contacts[ci].tangent_impulse = row.lambda,
            }
        }
    }

    (SolverDiagnostics { iterations: cfg.solver_iterations, residual, rows: rows.len() }, limit_impulses)
}
