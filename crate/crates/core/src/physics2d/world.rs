use serde::{Deserialize, Serialize};

use super::collide::collide_cores;
use super::solver::{solve, Layout, SolverDiagnostics};
use super::{BodyDesc, BodyId, BodyKind, Contact, MassProps, PhysicsError, RevoluteChain, RigidBody};
use crate::math::{Pose, Twist, Vec2};

/// Contacts closer than this to a contact of the previous step inherit its impulses.
const WARM_START_RADIUS: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Fixed time step, s.
    pub dt: f64,
    pub solver_iterations: usize,
    /// Allowed penetration before positional correction kicks in, m.
    pub contact_slop: f64,
    pub baumgarte_beta: f64,
    pub restitution: f64,
    /// Approach speed below which restitution is ignored, m/s.
    pub restitution_threshold: f64,
    /// Speed above which a step reports instability, m/s.
    pub max_speed: f64,
    pub gravity: Vec2,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.010,
            solver_iterations: 10,
            contact_slop: 1e-3,
            baumgarte_beta: 0.2,
            restitution: 0.0,
            restitution_threshold: 1.0,
            max_speed: 100.0,
            gravity: Vec2::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub bodies: Vec<RigidBody>,
    pub chains: Vec<RevoluteChain>,
    /// Contacts solved during the most recent step.
    pub contacts: Vec<Contact>,
    pub time: f64,
    pub steps: u64,
    #[serde(skip)]
    pub last_diagnostics: SolverDiagnostics,
}

/// JSON view of a world for rendering and debugging.
///
/// Field names are stable: `time`, `bodies[].{id, kind, pose{x,y,theta},
/// twist{vx,vy,omega}, shape}`, `contacts[].{body_a, body_b, point, normal,
/// penetration, normal_impulse, tangent_impulse, friction}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub time: f64,
    pub bodies: Vec<BodySnapshot>,
    pub contacts: Vec<Contact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySnapshot {
    pub id: BodyId,
    pub kind: BodyKind,
    pub pose: Pose,
    pub twist: Twist,
    pub shape: super::Shape,
}

impl World {
    pub fn new(config: WorldConfig) -> Self {
        Self {
            config,
            bodies: Vec::new(),
            chains: Vec::new(),
            contacts: Vec::new(),
            time: 0.0,
            steps: 0,
            last_diagnostics: SolverDiagnostics::default(),
        }
    }

    pub fn add_body(&mut self, desc: BodyDesc) -> Result<BodyId, PhysicsError> {
        desc.shape.validate()?;
        if let MassProps::Finite { mass, inertia } = desc.mass {
            if !(mass > 0.0 && inertia > 0.0 && mass.is_finite() && inertia.is_finite()) {
                return Err(PhysicsError::InvalidBody("finite mass and inertia must be > 0".into()));
            }
        }
        if !(desc.friction >= 0.0) {
            return Err(PhysicsError::InvalidBody("friction must be >= 0".into()));
        }
        let id = BodyId(self.bodies.len() as u32);
        self.bodies.push(RigidBody {
            id,
            kind: desc.kind,
            pose: desc.pose,
            twist: desc.twist,
            mass: desc.mass,
            shape: desc.shape,
            friction: desc.friction,
            collision_group: desc.collision_group,
            force: Vec2::ZERO,
            torque: 0.0,
        });
        Ok(id)
    }

    /// Registers a chain whose link bodies were added as [`BodyKind::Link`] bodies.
    /// Returns the chain index and syncs the link poses to the chain state.
    pub fn add_chain(&mut self, chain: RevoluteChain) -> Result<usize, PhysicsError> {
        let idx = self.chains.len();
        self.body(chain.base)?;
        for (k, l) in chain.links.iter().enumerate() {
            let b = self.body_mut(l.body)?;
            b.kind = BodyKind::Link { chain: idx, index: k };
            b.mass = MassProps::Finite { mass: l.mass, inertia: l.inertia };
        }
        self.chains.push(chain);
        self.sync_chain(idx);
        Ok(idx)
    }

    pub fn body(&self, id: BodyId) -> Result<&RigidBody, PhysicsError> {
        self.bodies.get(id.0 as usize).ok_or(PhysicsError::UnknownBody(id))
    }

    pub fn body_mut(&mut self, id: BodyId) -> Result<&mut RigidBody, PhysicsError> {
        self.bodies.get_mut(id.0 as usize).ok_or(PhysicsError::UnknownBody(id))
    }

    /// Accumulates a world-frame force at the body's center of mass for the next step only.
    pub fn apply_external_force(&mut self, id: BodyId, force: Vec2) -> Result<(), PhysicsError> {
        let b = self.body_mut(id)?;
        b.force += force;
        Ok(())
    }

    pub fn apply_external_torque(&mut self, id: BodyId, torque: f64) -> Result<(), PhysicsError> {
        self.body_mut(id)?.torque += torque;
        Ok(())
    }

    /// Accumulates joint torques on a chain for the next step only.
    pub fn apply_joint_torques(&mut self, chain: usize, tau: &[f64]) {
        let c = &mut self.chains[chain];
        c.ensure_buffers();
        for (acc, t) in c.tau.iter_mut().zip(tau) {
            *acc += t;
        }
    }

    /// Sets chain joint state and updates link body poses and twists.
    pub fn set_chain_state(&mut self, chain: usize, q: &[f64], dq: &[f64]) {
        let c = &mut self.chains[chain];
        c.q.copy_from_slice(q);
        c.dq.copy_from_slice(dq);
        self.sync_chain(chain);
    }

    fn sync_chain(&mut self, idx: usize) {
        let c = &self.chains[idx];
        let base = self.bodies[c.base.0 as usize].pose;
        let f = c.frames(&base, &c.q);
        let poses = c.link_poses(&f);
        let twists = c.link_twists(&f, &c.dq);
        let ids: Vec<BodyId> = c.links.iter().map(|l| l.body).collect();
        for ((id, p), t) in ids.into_iter().zip(poses).zip(twists) {
            let b = &mut self.bodies[id.0 as usize];
            b.pose = p;
            b.twist = t;
        }
    }

    fn may_collide(a: &RigidBody, b: &RigidBody) -> bool {
        if a.collision_group != 0 && a.collision_group == b.collision_group {
            return false;
        }
        let movable = |r: &RigidBody| r.kind != BodyKind::Kinematic;
        movable(a) || movable(b)
    }

    /// Every body pair closer than `contact_slop`, sorted by `(body_a, body_b)` then point.
    pub fn detect_contacts(&self) -> Vec<Contact> {
        let slop = self.config.contact_slop;
        let mut out = Vec::new();
        for i in 0..self.bodies.len() {
            let a = &self.bodies[i];
            for b in &self.bodies[i + 1..] {
                if !Self::may_collide(a, b) {
                    continue;
                }
                let reach = a.shape.bounding_radius() + b.shape.bounding_radius() + slop;
                if (b.pose.position() - a.pose.position()).norm_sq() > reach * reach {
                    continue;
                }
                let friction = (a.friction * b.friction).sqrt();
                let start = out.len();
                for ca in a.shape.world_cores(&a.pose) {
                    for cb in b.shape.world_cores(&b.pose) {
                        let m = collide_cores(&ca, &cb, slop);
                        for p in m.points {
                            out.push(Contact {
                                body_a: a.id,
                                body_b: b.id,
                                point: p.point,
                                normal: m.normal,
                                penetration: -p.separation,
                                normal_impulse: 0.0,
                                tangent_impulse: 0.0,
                                friction,
                            });
                        }
                    }
                }
                out[start..].sort_by(|p, q| {
                    p.point.x.total_cmp(&q.point.x).then(p.point.y.total_cmp(&q.point.y))
                });
            }
        }
        out
    }

    /// Applies contact and joint-limit impulses to the current velocities.
    /// Positions are untouched. Impulses already set on `contacts` seed the
    /// iteration (warm start); contacts fresh from [`World::detect_contacts`] start cold.
    pub fn solve_contacts(&mut self, mut contacts: Vec<Contact>) -> Result<(Vec<Contact>, SolverDiagnostics), PhysicsError> {
        let mut layout = Layout::build(self)?;
        let (diag, limit_impulses) = solve(self, &mut layout, &mut contacts);
        layout.store(self);
        for (c, li) in self.chains.iter_mut().zip(limit_impulses) {
            c.limit_impulse = li;
        }
        for i in 0..self.chains.len() {
            self.sync_chain_twists(i, &layout);
        }
        Ok((contacts, diag))
    }

    fn sync_chain_twists(&mut self, idx: usize, layout: &Layout) {
        let c = &self.chains[idx];
        let twists = c.link_twists(&layout.frames[idx], layout.chain_velocity(idx, c.dof()));
        let ids: Vec<BodyId> = c.links.iter().map(|l| l.body).collect();
        for (id, t) in ids.into_iter().zip(twists) {
            self.bodies[id.0 as usize].twist = t;
        }
    }

    /// Copies impulses from last step's contacts onto matching new contacts
    /// (same body pair, nearest point within `WARM_START_RADIUS`).
    fn warm_start(&self, contacts: &mut [Contact]) {
        let mut used = vec![false; self.contacts.len()];
        for c in contacts.iter_mut() {
            let mut best: Option<(usize, f64)> = None;
            for (i, old) in self.contacts.iter().enumerate() {
                if used[i] || old.body_a != c.body_a || old.body_b != c.body_b {
                    continue;
                }
                let d = (old.point - c.point).norm_sq();
                if d < WARM_START_RADIUS * WARM_START_RADIUS && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                used[i] = true;
                c.normal_impulse = self.contacts[i].normal_impulse;
                c.tangent_impulse = self.contacts[i].tangent_impulse;
            }
        }
    }

    /// Advances the world by one fixed step.
    ///
    /// On instability the world is left in its post-step state and an error is
    /// returned; callers should treat the episode as failed.
    pub fn step(&mut self) -> Result<SolverDiagnostics, PhysicsError> {
        let dt = self.config.dt;
        let gravity = self.config.gravity;
        for c in &mut self.chains {
            c.ensure_buffers();
        }

        // Velocity update from accumulated forces.
        for b in &mut self.bodies {
            if b.kind == BodyKind::Dynamic {
                if let MassProps::Finite { mass, inertia } = b.mass {
                    let acc = b.force * (1.0 / mass) + gravity;
                    b.twist.vx += dt * acc.x;
                    b.twist.vy += dt * acc.y;
                    b.twist.omega += dt * b.torque / inertia;
                }
            }
        }
        for ci in 0..self.chains.len() {
            let c = &self.chains[ci];
            let base = self.bodies[c.base.0 as usize].pose;
            let f = c.frames(&base, &c.q);
            let n = c.dof();
            let m = c.mass_matrix(&f);
            let h = c.bias_forces(&f, &c.dq);
            // (M + dt·C) dq⁺ = M dq + dt (τ + gravity terms − h)
            let mut a = m.clone();
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                a[i * n + i] += dt * c.links[i].joint.damping;
                let mut s = 0.0;
                for j in 0..n {
                    s += m[i * n + j] * c.dq[j];
                }
                let mut g = 0.0;
                for k in i..n {
                    g += (f.coms[k] - f.origins[i]).cross(gravity * c.links[k].mass);
                }
                rhs[i] = s + dt * (c.tau[i] + g - h[i]);
            }
            let inv = super::chain::invert(&a, n).ok_or(PhysicsError::SingularChain)?;
            let dq: Vec<f64> = (0..n).map(|r| (0..n).map(|col| inv[r * n + col] * rhs[col]).sum()).collect();
            self.chains[ci].dq = dq;
        }

        let mut contacts = self.detect_contacts();
        self.warm_start(&mut contacts);
        let (contacts, diag) = self.solve_contacts(contacts)?;
        self.contacts = contacts;

        // Position update.
        for b in &mut self.bodies {
            if b.kind == BodyKind::Dynamic {
                b.pose.x += dt * b.twist.vx;
                b.pose.y += dt * b.twist.vy;
                b.pose.theta += dt * b.twist.omega;
            }
            b.force = Vec2::ZERO;
            b.torque = 0.0;
        }
        for ci in 0..self.chains.len() {
            let c = &mut self.chains[ci];
            for i in 0..c.dof() {
                let mut q = c.q[i] + dt * c.dq[i];
                let joint = &c.links[i].joint;
                if q < joint.lower {
                    q = joint.lower;
                    c.dq[i] = c.dq[i].max(0.0);
                } else if q > joint.upper {
                    q = joint.upper;
                    c.dq[i] = c.dq[i].min(0.0);
                }
                c.q[i] = q;
                c.tau[i] = 0.0;
            }
            self.sync_chain(ci);
        }

        self.time += dt;
        self.steps += 1;
        self.last_diagnostics = diag.clone();

        let cap = self.config.max_speed;
        for b in &self.bodies {
            let speed = b.twist.linear().norm();
            if !(speed <= cap) {
                return Err(PhysicsError::Unstable { body: b.id, speed, cap });
            }
        }
        Ok(diag)
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            time: self.time,
            bodies: self
                .bodies
                .iter()
                .map(|b| BodySnapshot {
                    id: b.id,
                    kind: b.kind,
                    pose: b.pose,
                    twist: b.twist,
                    shape: b.shape.clone(),
                })
                .collect(),
            contacts: self.contacts.clone(),
        }
    }

    pub fn total_linear_momentum(&self) -> Vec2 {
        self.bodies
            .iter()
            .filter(|b| b.kind == BodyKind::Dynamic)
            .map(|b| match b.mass {
                MassProps::Finite { mass, .. } => b.twist.linear() * mass,
                MassProps::Infinite => Vec2::ZERO,
            })
            .fold(Vec2::ZERO, |a, b| a + b)
    }
}
