//! Deterministic planar rigid-body simulation with hard contacts.
//!
//! Free bodies use maximal coordinates; hand fingers are reduced-coordinate
//! revolute chains hanging off a kinematic base. Contacts and joint limits are
//! resolved together by sequential impulses in generalized velocity space.

mod chain;
pub(crate) mod collide;
mod shape;
mod solver;
mod world;

pub use chain::{ChainFrames, ChainLink, JointSpec, RevoluteChain, MAX_CHAIN_DOF};
pub use shape::{Shape, MAX_POLYGON_VERTICES};
pub use solver::SolverDiagnostics;
pub use world::{World, WorldConfig, WorldSnapshot};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Pose, Twist, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BodyId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassProps {
    Finite { mass: f64, inertia: f64 },
    /// Kinematic: unaffected by forces and impulses.
    Infinite,
}

impl MassProps {
    pub fn inv_mass(&self) -> f64 {
        match self {
            MassProps::Finite { mass, .. } => 1.0 / mass,
            MassProps::Infinite => 0.0,
        }
    }

    pub fn inv_inertia(&self) -> f64 {
        match self {
            MassProps::Finite { inertia, .. } => 1.0 / inertia,
            MassProps::Infinite => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BodyKind {
    Dynamic,
    Kinematic,
    /// Link `index` of chain `chain`; its pose and twist follow the chain state.
    Link { chain: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub id: BodyId,
    pub kind: BodyKind,
    pub pose: Pose,
    pub twist: Twist,
    pub mass: MassProps,
    pub shape: Shape,
    pub friction: f64,
    /// Bodies sharing a nonzero group never collide with each other.
    pub collision_group: u32,
    #[serde(skip)]
    pub(crate) force: Vec2,
    #[serde(skip)]
    pub(crate) torque: f64,
}

/// Description used to add a body to a [`World`].
#[derive(Debug, Clone)]
pub struct BodyDesc {
    pub kind: BodyKind,
    pub pose: Pose,
    pub twist: Twist,
    pub mass: MassProps,
    pub shape: Shape,
    pub friction: f64,
    pub collision_group: u32,
}

impl BodyDesc {
    /// Dynamic body with uniform density.
    pub fn dynamic(shape: Shape, mass: f64, pose: Pose) -> Self {
        let inertia = shape.inertia(mass);
        Self {
            kind: BodyKind::Dynamic,
            pose,
            twist: Twist::ZERO,
            mass: MassProps::Finite { mass, inertia },
            shape,
            friction: DEFAULT_FRICTION,
            collision_group: 0,
        }
    }

    pub fn kinematic(shape: Shape, pose: Pose) -> Self {
        Self {
            kind: BodyKind::Kinematic,
            pose,
            twist: Twist::ZERO,
            mass: MassProps::Infinite,
            shape,
            friction: DEFAULT_FRICTION,
            collision_group: 0,
        }
    }

    pub fn with_friction(mut self, mu: f64) -> Self {
        self.friction = mu;
        self
    }

    pub fn with_twist(mut self, twist: Twist) -> Self {
        self.twist = twist;
        self
    }

    pub fn with_group(mut self, group: u32) -> Self {
        self.collision_group = group;
        self
    }
}

pub const DEFAULT_FRICTION: f64 = 0.8;

/// A single solved (or to-be-solved) contact point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub body_a: BodyId,
    pub body_b: BodyId,
    pub point: Vec2,
    /// Unit normal from `body_a` to `body_b`.
    pub normal: Vec2,
    /// Positive when overlapping.
    pub penetration: f64,
    /// Impulse applied to `body_b` along `normal` (and its negative to `body_a`).
    pub normal_impulse: f64,
    /// Impulse along `normal.perp()`.
    pub tangent_impulse: f64,
    /// Combined friction coefficient.
    pub friction: f64,
}

impl Contact {
    pub fn tangent(&self) -> Vec2 {
        self.normal.perp()
    }

    /// Total impulse applied to `body_b`.
    pub fn impulse_on_b(&self) -> Vec2 {
        self.normal * self.normal_impulse + self.tangent() * self.tangent_impulse
    }

    pub fn involves(&self, id: BodyId) -> bool {
        self.body_a == id || self.body_b == id
    }

    /// Impulse applied to `id` by this contact (zero if not involved).
    pub fn impulse_on(&self, id: BodyId) -> Vec2 {
        if self.body_b == id {
            self.impulse_on_b()
        } else if self.body_a == id {
            -self.impulse_on_b()
        } else {
            Vec2::ZERO
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("unknown body id {0:?}")]
    UnknownBody(BodyId),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid body: {0}")]
    InvalidBody(String),
    #[error("simulation unstable: body {body:?} reached speed {speed:.3} m/s (cap {cap} m/s)")]
    Unstable { body: BodyId, speed: f64, cap: f64 },
    #[error("singular chain mass matrix")]
    SingularChain,
}
