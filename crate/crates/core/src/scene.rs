//! Procedural objects, pre-grasp sampling, and train/test splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{HandError, HandModel, NUM_JOINTS};
use crate::math::{derive_seed, Pose, Vec2};
use crate::physics2d::{BodyDesc, BodyId, Shape, World, WorldConfig};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("n must be > 0")]
    EmptyRequest,
    #[error("gave up after {rejected} rejected pre-grasp candidates for {kind}")]
    TooManyRejections { kind: String, rejected: usize },
    #[error("split needs at least 2 pre-grasps, got {0}")]
    TooFewForSplit(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("invalid sampler: {0}")]
    InvalidSampler(String),
    #[error(transparent)]
    Hand(#[from] HandError),
}

fn d_disk_radius() -> f64 {
    0.025
}
fn d_mass() -> f64 {
    0.1
}
fn d_ring_outer() -> f64 {
    0.03
}
fn d_ring_inner() -> f64 {
    0.018
}
fn d_ring_mass() -> f64 {
    0.08
}
fn d_bar_length() -> f64 {
    0.09
}
fn d_thickness() -> f64 {
    0.02
}
fn d_tee_top() -> f64 {
    0.07
}
fn d_stem() -> f64 {
    0.05
}
fn d_ell_long() -> f64 {
    0.06
}

/// Planar test objects. Sizes in meters, masses in kilograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectKind {
    Disk {
        #[serde(default = "d_disk_radius")]
        radius: f64,
        #[serde(default = "d_mass")]
        mass: f64,
    },
    /// Collides as a disk of the outer radius; the hole only shows up in renders.
    Ring {
        #[serde(default = "d_ring_outer")]
        outer_radius: f64,
        #[serde(default = "d_ring_inner")]
        inner_radius: f64,
        #[serde(default = "d_ring_mass")]
        mass: f64,
    },
    Bar {
        #[serde(default = "d_bar_length")]
        length: f64,
        #[serde(default = "d_thickness")]
        width: f64,
        #[serde(default = "d_mass")]
        mass: f64,
    },
    /// Crossbar of length `top` with a stem of length `stem` below its middle.
    Tee {
        #[serde(default = "d_tee_top")]
        top: f64,
        #[serde(default = "d_stem")]
        stem: f64,
        #[serde(default = "d_thickness")]
        thickness: f64,
        #[serde(default = "d_mass")]
        mass: f64,
    },
    /// Horizontal leg of length `long` with a vertical leg of length `short` at one end.
    Ell {
        #[serde(default = "d_ell_long")]
        long: f64,
        #[serde(default = "d_stem")]
        short: f64,
        #[serde(default = "d_thickness")]
        thickness: f64,
        #[serde(default = "d_mass")]
        mass: f64,
    },
}

impl ObjectKind {
    pub fn disk() -> Self {
        ObjectKind::Disk { radius: d_disk_radius(), mass: d_mass() }
    }

    pub fn ring() -> Self {
        ObjectKind::Ring { outer_radius: d_ring_outer(), inner_radius: d_ring_inner(), mass: d_ring_mass() }
    }

    pub fn bar() -> Self {
        ObjectKind::Bar { length: d_bar_length(), width: d_thickness(), mass: d_mass() }
    }

    pub fn tee() -> Self {
        ObjectKind::Tee { top: d_tee_top(), stem: d_stem(), thickness: d_thickness(), mass: d_mass() }
    }

    pub fn ell() -> Self {
        ObjectKind::Ell { long: d_ell_long(), short: d_stem(), thickness: d_thickness(), mass: d_mass() }
    }

    /// The five default objects in table order.
    pub fn all_defaults() -> Vec<Self> {
        vec![Self::disk(), Self::ring(), Self::bar(), Self::tee(), Self::ell()]
    }

    /// Default-sized object by name (`disk`, `ring`, `bar`, `tee`, `ell`).
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "disk" => Some(Self::disk()),
            "ring" => Some(Self::ring()),
            "bar" => Some(Self::bar()),
            "tee" => Some(Self::tee()),
            "ell" => Some(Self::ell()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectKind::Disk { .. } => "disk",
            ObjectKind::Ring { .. } => "ring",
            ObjectKind::Bar { .. } => "bar",
            ObjectKind::Tee { .. } => "tee",
            ObjectKind::Ell { .. } => "ell",
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            ObjectKind::Disk { mass, .. }
            | ObjectKind::Ring { mass, .. }
            | ObjectKind::Bar { mass, .. }
            | ObjectKind::Tee { mass, .. }
            | ObjectKind::Ell { mass, .. } => *mass,
        }
    }

    /// Collision shape with the area centroid at the origin.
    pub fn shape(&self) -> Shape {
        match *self {
            ObjectKind::Disk { radius, .. } => Shape::circle(radius),
            ObjectKind::Ring { outer_radius, .. } => Shape::circle(outer_radius),
            ObjectKind::Bar { length, width, .. } => Shape::rect(length, width),
            ObjectKind::Tee { top, stem, thickness, .. } => recentered(vec![
                Shape::rect_at(top, thickness, Vec2::new(0.0, 0.5 * thickness)),
                Shape::rect_at(thickness, stem, Vec2::new(0.0, -0.5 * stem)),
            ]),
            ObjectKind::Ell { long, short, thickness, .. } => recentered(vec![
                Shape::rect_at(long, thickness, Vec2::new(0.5 * long, 0.5 * thickness)),
                Shape::rect_at(thickness, short, Vec2::new(0.5 * thickness, thickness + 0.5 * short)),
            ]),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = match *self {
            ObjectKind::Ring { outer_radius, inner_radius, .. } => inner_radius >= 0.0 && inner_radius < outer_radius,
            _ => true,
        };
        if !ok || !(self.mass() > 0.0) {
            return Err(SceneError::InvalidObject(format!("{}: bad size or mass", self.name())));
        }
        self.shape().validate().map_err(|e| SceneError::InvalidObject(e.to_string()))
    }
}

fn recentered(parts: Vec<Shape>) -> Shape {
    let c = Shape::Compound { parts: parts.clone() }.centroid();
    Shape::Compound {
        parts: parts
            .into_iter()
            .map(|p| match p {
                Shape::Polygon { vertices } => Shape::Polygon { vertices: vertices.into_iter().map(|v| v - c).collect() },
                other => other,
            })
            .collect(),
    }
}

/// Dynamic body for `kind` at the canonical pose with zero twist.
pub fn make_object(kind: &ObjectKind) -> BodyDesc {
    BodyDesc::dynamic(kind.shape(), kind.mass(), Pose::IDENTITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreGrasp {
    pub id: u32,
    pub object: ObjectKind,
    pub object_pose: Pose,
    pub hand_pose: Pose,
    pub q0: [f64; NUM_JOINTS],
}

/// A pre-grasp instantiated in a fresh world.
pub struct Placed {
    pub world: World,
    pub hand: crate::hand::HandBodies,
    pub object: BodyId,
}

impl PreGrasp {
    /// Builds the world: object first, then the hand.
    pub fn instantiate(&self, model: &HandModel, config: WorldConfig) -> Result<Placed, SceneError> {
        let mut world = World::new(config);
        let mut desc = make_object(&self.object);
        desc.pose = self.object_pose;
        let object = world.add_body(desc).map_err(HandError::from)?;
        let hand = model.spawn(&mut world, self.hand_pose, self.q0)?;
        Ok(Placed { world, hand, object })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Palm-to-object surface distance range, m.
    pub standoff: [f64; 2],
    /// Heading jitter half-width, rad.
    pub heading_jitter: f64,
    /// Half-width of the sideways shift of the approach line off the object center, m.
    pub lateral_offset: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { standoff: [0.02, 0.08], heading_jitter: 0.3, lateral_offset: 0.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let [lo, hi] = self.standoff;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SceneError::InvalidSampler("standoff must satisfy 0 <= min <= max".into()));
        }
        if !(self.heading_jitter >= 0.0 && self.lateral_offset >= 0.0) {
            return Err(SceneError::InvalidSampler("heading_jitter and lateral_offset must be >= 0".into()));
        }
        Ok(())
    }
}

/// Distance from the palm to the object when the palm origin sits at `base + dir * s`.
fn palm_gap(model: &HandModel, object: &Shape, base: Vec2, dir: Vec2, heading: f64, s: f64) -> f64 {
    let p = base + dir * s;
    model.palm_shape().separation(&Pose::new(p.x, p.y, heading), object, &Pose::IDENTITY)
}

/// Samples `n` collision-free pre-grasps around `kind`, deterministic in `seed`.
pub fn sample_pregrasps(
    kind: &ObjectKind,
    n: usize,
    seed: u64,
    model: &HandModel,
    sampler: &SamplerConfig,
) -> Result<Vec<PreGrasp>, SceneError> {
    if n == 0 {
        return Err(SceneError::EmptyRequest);
    }
    kind.validate()?;
    model.validate()?;
    sampler.validate()?;
    let shape = kind.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut rejected = 0;
    let max_reach = shape.bounding_radius() + model.palm_shape().bounding_radius() + sampler.standoff[1] + 1.0;
    while out.len() < n {
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let d = rng.random_range(sampler.standoff[0]..=sampler.standoff[1]);
        let jitter = if sampler.heading_jitter > 0.0 {
            rng.random_range(-sampler.heading_jitter..=sampler.heading_jitter)
        } else {
            0.0
        };
        let lateral = if sampler.lateral_offset > 0.0 {
            rng.random_range(-sampler.lateral_offset..=sampler.lateral_offset)
        } else {
            0.0
        };
        let dir = Vec2::from_angle(phi);
        let base = dir.perp() * lateral;
        let heading = phi + std::f64::consts::PI + jitter;
        // Bisection on the ray: gap(lo) < d <= gap(hi).
        let (mut lo, mut hi) = (0.0, max_reach);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if palm_gap(model, &shape, base, dir, heading, mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = base + dir * hi;
        let candidate = PreGrasp {
            id: out.len() as u32,
            object: kind.clone(),
            object_pose: Pose::IDENTITY,
            hand_pose: Pose::new(p.x, p.y, heading),
            q0: model.open_q,
        };
        let placed = candidate.instantiate(model, WorldConfig::default())?;
        let on_target = (palm_gap(model, &shape, base, dir, heading, hi) - d).abs() < 1e-6;
        if on_target && placed.world.detect_contacts().is_empty() {
            out.push(candidate);
        } else {
            rejected += 1;
            if rejected >= 100 * n {
                return Err(SceneError::TooManyRejections { kind: kind.name().into(), rejected });
            }
        }
    }
    Ok(out)
}

/// Pre-grasps of one object with a disjoint train/test split of their ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub object: ObjectKind,
    pub pregrasps: Vec<PreGrasp>,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

impl Dataset {
    pub fn get(&self, id: u32) -> Option<&PreGrasp> {
        self.pregrasps.iter().find(|p| p.id == id)
    }

    pub fn train_set(&self) -> Vec<PreGrasp> {
        self.train.iter().filter_map(|id| self.get(*id).cloned()).collect()
    }

    pub fn test_set(&self) -> Vec<PreGrasp> {
        self.test.iter().filter_map(|id| self.get(*id).cloned()).collect()
    }
}

/// Shuffles ids by `seed` and puts the first `⌈ratio·n⌉` into train.
pub fn split_dataset(pregrasps: Vec<PreGrasp>, ratio: f64, seed: u64) -> Result<Dataset, SceneError> {
    let n = pregrasps.len();
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SceneError::BadRatio(ratio));
    }
    if n < 2 {
        return Err(SceneError::TooFewForSplit(n));
    }
    let object = pregrasps[0].object.clone();
    let mut ids: Vec<u32> = pregrasps.iter().map(|p| p.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).ceil() as usize).min(n - 1).max(1);
    let test = ids.split_off(n_train);
    Ok(Dataset { object, pregrasps, train: ids, test })
}

/// Versioned on-disk bundle of per-object datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub format_version: u32,
    pub seed: u64,
    pub datasets: Vec<Dataset>,
}

impl DatasetFile {
    pub fn find(&self, object: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.object.name() == object)
    }
}

/// Samples and splits pre-grasps for each object; per-object seeds derive from `seed`.
pub fn build_dataset(
    objects: &[ObjectKind],
    n: usize,
    ratio: f64,
    seed: u64,
    model: &HandModel,
    sampler: &SamplerConfig,
) -> Result<DatasetFile, SceneError> {
    let mut datasets = Vec::with_capacity(objects.len());
    for (i, kind) in objects.iter().enumerate() {
        let pg = sample_pregrasps(kind, n, derive_seed(&[seed, i as u64, 0]), model, sampler)?;
        datasets.push(split_dataset(pg, ratio, derive_seed(&[seed, i as u64, 1]))?);
    }
    Ok(DatasetFile { format_version: DATASET_FORMAT_VERSION, seed, datasets })
}
