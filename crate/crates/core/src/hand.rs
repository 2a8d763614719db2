//! Planar two-finger hand: a kinematic palm with two 2-link revolute fingers.
//!
//! Joint order is `(finger 1 proximal, finger 1 distal, finger 2 proximal,
//! finger 2 distal)`. In the palm frame the approach direction is +x, finger 1
//! is mounted at −y and closes with positive torque, finger 2 is mounted at +y
//! and closes with negative torque.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Pose, Vec2};
use crate::physics2d::{
    BodyDesc, BodyId, ChainLink, JointSpec, PhysicsError, RevoluteChain, RigidBody, Shape, World,
};

pub const NUM_JOINTS: usize = 4;
/// Palm plus four links.
pub const NUM_SENSED_BODIES: usize = 5;
/// Sign of the torque that closes each joint.
pub const CLOSING_SIGNS: [f64; NUM_JOINTS] = [1.0, 1.0, -1.0, -1.0];
/// Collision group shared by all hand bodies.
pub const HAND_GROUP: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandError {
    #[error("joint {joint} angle {value} outside [{lower}, {upper}]")]
    OutOfLimits { joint: usize, value: f64, lower: f64, upper: f64 },
    #[error("invalid hand model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Hand geometry and actuation limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandModel {
    /// Palm extent along the approach axis, m.
    pub palm_depth: f64,
    /// Palm extent across the approach axis, m.
    pub palm_width: f64,
    pub link_length: f64,
    pub link_radius: f64,
    pub link_mass: f64,
    /// Limits for finger 1; finger 2 uses the mirrored range.
    pub proximal_limits: [f64; 2],
    pub distal_limits: [f64; 2],
    /// N·m.
    pub torque_limit: f64,
    /// N·m·s/rad.
    pub damping: f64,
    pub friction: f64,
    /// Open configuration used by pre-grasps.
    pub open_q: [f64; NUM_JOINTS],
}

impl Default for HandModel {
    fn default() -> Self {
        Self {
            palm_depth: 0.02,
            palm_width: 0.08,
            link_length: 0.06,
            link_radius: 0.008,
            link_mass: 0.05,
            proximal_limits: [-0.4, 1.7],
            distal_limits: [0.0, 1.7],
            torque_limit: 2.5,
            damping: 0.1,
            friction: 0.8,
            open_q: [-0.2, 0.0, 0.2, 0.0],
        }
    }
}

/// Bodies and chains of a hand instantiated in a [`World`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandBodies {
    pub palm: BodyId,
    pub links: [BodyId; NUM_JOINTS],
    pub chains: [usize; 2],
}

impl HandBodies {
    /// Bodies in sensor order: palm, then links in joint order.
    pub fn sensed(&self) -> [BodyId; NUM_SENSED_BODIES] {
        [self.palm, self.links[0], self.links[1], self.links[2], self.links[3]]
    }

    pub fn contains(&self, id: BodyId) -> bool {
        self.sensed().contains(&id)
    }
}

/// World poses of the palm and the four links, plus the two fingertip points.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPoses {
    pub palm: Pose,
    pub links: [Pose; NUM_JOINTS],
    pub tips: [Vec2; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandReading {
    pub q: [f64; NUM_JOINTS],
    pub dq: [f64; NUM_JOINTS],
    /// Contact force on palm, link 0..3 as (fx, fy) pairs in the palm frame, N.
    pub contact_forces: [f64; 2 * NUM_SENSED_BODIES],
}

impl HandModel {
    pub fn validate(&self) -> Result<(), HandError> {
        let positive = [
            ("palm_depth", self.palm_depth),
            ("palm_width", self.palm_width),
            ("link_length", self.link_length),
            ("link_radius", self.link_radius),
            ("link_mass", self.link_mass),
            ("torque_limit", self.torque_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(HandError::Invalid(format!("{name} must be > 0")));
            }
        }
        if !(self.damping >= 0.0 && self.friction >= 0.0) {
            return Err(HandError::Invalid("damping and friction must be >= 0".into()));
        }
        for (name, l) in [("proximal_limits", self.proximal_limits), ("distal_limits", self.distal_limits)] {
            if !(l[0] < l[1]) {
                return Err(HandError::Invalid(format!("{name} must satisfy lower < upper")));
            }
        }
        self.check_limits(&self.open_q)
    }

    /// `(lower, upper)` per joint; finger 2 mirrors finger 1.
    pub fn joint_limits(&self) -> [(f64, f64); NUM_JOINTS] {
        let [pl, pu] = self.proximal_limits;
        let [dl, du] = self.distal_limits;
        [(pl, pu), (dl, du), (-pu, -pl), (-du, -dl)]
    }

    pub fn check_limits(&self, q: &[f64; NUM_JOINTS]) -> Result<(), HandError> {
        for (j, ((lo, hi), v)) in self.joint_limits().iter().zip(q).enumerate() {
            if !(*v >= *lo && *v <= *hi) {
                return Err(HandError::OutOfLimits { joint: j, value: *v, lower: *lo, upper: *hi });
            }
        }
        Ok(())
    }

    /// Fully closed configuration (every joint at its closing limit).
    pub fn closed_q(&self) -> [f64; NUM_JOINTS] {
        let lim = self.joint_limits();
        std::array::from_fn(|j| if CLOSING_SIGNS[j] > 0.0 { lim[j].1 } else { lim[j].0 })
    }

    pub fn palm_shape(&self) -> Shape {
        Shape::rect(self.palm_depth, self.palm_width)
    }

    pub fn link_shape(&self) -> Shape {
        Shape::Capsule { half_length: 0.5 * self.link_length, radius: self.link_radius }
    }

    /// Finger root in the palm frame.
    pub fn anchor(&self, finger: usize) -> Vec2 {
        let side = if finger == 0 { -1.0 } else { 1.0 };
        Vec2::new(0.5 * self.palm_depth, side * 0.5 * self.palm_width)
    }

    fn finger_chain(&self, finger: usize, palm: BodyId, links: [BodyId; 2], q: [f64; 2]) -> RevoluteChain {
        let limits = self.joint_limits();
        let inertia = self.link_shape().inertia(self.link_mass);
        let chain_links = (0..2)
            .map(|k| {
                let (lower, upper) = limits[2 * finger + k];
                ChainLink {
                    body: links[k],
                    length: self.link_length,
                    com_offset: 0.5 * self.link_length,
                    mass: self.link_mass,
                    inertia,
                    joint: JointSpec { lower, upper, damping: self.damping },
                }
            })
            .collect();
        RevoluteChain::new(palm, self.anchor(finger), 0.0, chain_links, q.to_vec())
    }

    /// Adds the palm (kinematic, at `base`) and both fingers at `q` to `world`.
    pub fn spawn(&self, world: &mut World, base: Pose, q: [f64; NUM_JOINTS]) -> Result<HandBodies, HandError> {
        self.validate()?;
        self.check_limits(&q)?;
        let palm = world.add_body(
            BodyDesc::kinematic(self.palm_shape(), base).with_friction(self.friction).with_group(HAND_GROUP),
        )?;
        let mut links = [BodyId(0); NUM_JOINTS];
        for l in &mut links {
            *l = world.add_body(
                BodyDesc::dynamic(self.link_shape(), self.link_mass, base)
                    .with_friction(self.friction)
                    .with_group(HAND_GROUP),
            )?;
        }
        let mut chains = [0; 2];
        for (f, c) in chains.iter_mut().enumerate() {
            let chain = self.finger_chain(f, palm, [links[2 * f], links[2 * f + 1]], [q[2 * f], q[2 * f + 1]]);
            *c = world.add_chain(chain)?;
        }
        Ok(HandBodies { palm, links, chains })
    }

    /// Palm, link, and fingertip poses for joint angles `q` with the palm at `base`.
    pub fn forward_kinematics(&self, base: Pose, q: [f64; NUM_JOINTS]) -> Result<HandPoses, HandError> {
        self.check_limits(&q)?;
        let mut links = [Pose::IDENTITY; NUM_JOINTS];
        let mut tips = [Vec2::ZERO; 2];
        for f in 0..2 {
            let chain = self.finger_chain(f, BodyId(0), [BodyId(0); 2], [q[2 * f], q[2 * f + 1]]);
            let frames = chain.frames(&base, &chain.q);
            let poses = chain.link_poses(&frames);
            links[2 * f] = poses[0];
            links[2 * f + 1] = poses[1];
            tips[f] = frames.origins[1] + Vec2::from_angle(frames.headings[1]) * self.link_length;
        }
        Ok(HandPoses { palm: base, links, tips })
    }

    /// Clamps `tau` to the torque limit, queues it for the next step, and returns the applied torques.
    pub fn apply_joint_torques(&self, hand: &HandBodies, world: &mut World, tau: &[f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
        let lim = self.torque_limit;
        let applied: [f64; NUM_JOINTS] = std::array::from_fn(|j| {
            let t = tau[j];
            if t.is_nan() {
                0.0
            } else {
                t.clamp(-lim, lim)
            }
        });
        world.apply_joint_torques(hand.chains[0], &applied[0..2]);
        world.apply_joint_torques(hand.chains[1], &applied[2..4]);
        applied
    }

    pub fn joint_state(&self, hand: &HandBodies, world: &World) -> ([f64; NUM_JOINTS], [f64; NUM_JOINTS]) {
        let (c0, c1) = (&world.chains[hand.chains[0]], &world.chains[hand.chains[1]]);
        ([c0.q[0], c0.q[1], c1.q[0], c1.q[1]], [c0.dq[0], c0.dq[1], c1.dq[0], c1.dq[1]])
    }

    /// Joint encoders and per-body contact forces from the last solved step.
    ///
    /// Only contacts with non-hand bodies are sensed; joint-limit reactions are not.
    pub fn read_sensors(&self, hand: &HandBodies, world: &World) -> HandReading {
        let (q, dq) = self.joint_state(hand, world);
        let palm_theta = world.bodies[hand.palm.0 as usize].pose.theta;
        let dt = world.config.dt;
        let mut contact_forces = [0.0; 2 * NUM_SENSED_BODIES];
        for (k, id) in hand.sensed().iter().enumerate() {
            let mut impulse = Vec2::ZERO;
            for c in &world.contacts {
                if c.involves(*id) && !(hand.contains(c.body_a) && hand.contains(c.body_b)) {
                    impulse += c.impulse_on(*id);
                }
            }
            let f = (impulse * (1.0 / dt)).rotate(-palm_theta);
            contact_forces[2 * k] = f.x;
            contact_forces[2 * k + 1] = f.y;
        }
        HandReading { q, dq, contact_forces }
    }

    /// World-frame fingertip points of the two distal links.
    pub fn fingertips(&self, hand: &HandBodies, world: &World) -> [Vec2; 2] {
        std::array::from_fn(|f| {
            let p = world.bodies[hand.links[2 * f + 1].0 as usize].pose;
            p.transform_point(Vec2::new(0.5 * self.link_length, 0.0))
        })
    }

    /// Mean distance from the two fingertip points to the object's surface (0 inside).
    pub fn fingertip_mean_distance(&self, hand: &HandBodies, world: &World, object: &RigidBody) -> f64 {
        let tips = self.fingertips(hand, world);
        tips.iter().map(|t| object.shape.distance_to_point(&object.pose, *t)).sum::<f64>() / tips.len() as f64
    }
}
