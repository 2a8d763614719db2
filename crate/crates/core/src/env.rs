//! Finite-horizon grasping MDP: observation assembly, shaped reward, drop test.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{HandBodies, HandModel, NUM_JOINTS, NUM_SENSED_BODIES};
use crate::math::{derive_seed, wrap_angle, Pose, Twist, Vec2};
use crate::physics2d::{BodyId, PhysicsError, WorldConfig, World, WorldSnapshot};
use crate::scene::{PreGrasp, SceneError};

pub const NOMINAL_OBS_DIM: usize = NUM_JOINTS + 3 + 3;
pub const CONTACT_OBS_DIM: usize = 2 * NUM_SENSED_BODIES;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished")]
    EpisodeDone,
    #[error("action has {0} entries, expected {NUM_JOINTS}")]
    BadAction(usize),
    #[error("pre-grasp {0} starts in contact")]
    InitialContact(u32),
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coefficients of the six reward signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Times the change in the number of hand bodies touching the object.
    pub contacts: f64,
    /// Times the change in distance between hand base and object.
    pub distance: f64,
    /// Times the squared norm of the raw action.
    pub effort: f64,
    /// Times the squared norm of the object twist.
    pub twist: f64,
    /// Times the change in mean fingertip-to-object distance.
    pub fingertips: f64,
    /// Times the binary drop-test outcome (final step only).
    pub drop_test: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { contacts: 0.1, distance: -1.0, effort: -1e-3, twist: -1e-2, fingertips: -1.0, drop_test: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Position offsets are uniform on a disk of this radius, m.
    pub position_radius: f64,
    /// Angle offsets are uniform on `[-angle_max, angle_max]`, rad.
    pub angle_max: f64,
    /// Draw the angle offset as `±angle_max` instead of uniformly.
    pub fixed_angle_magnitude: bool,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: false, position_radius: 0.015, angle_max: 0.3, fixed_angle_magnitude: false, seed: 0 }
    }
}

/// Frame in which the object pose and twist are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationFrame {
    /// Scene frame, in which pre-grasp objects start at the origin.
    World,
    /// Relative to the (fixed) palm.
    #[default]
    Palm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Policy steps per episode.
    pub horizon: usize,
    /// Drop-test force magnitude, N.
    pub drop_force: f64,
    /// Duration of each drop-test phase, s.
    pub drop_phase_duration: f64,
    /// The object must stay within a circle of this diameter during the drop test, m.
    pub success_diameter: f64,
    pub contact_feedback: bool,
    pub observation_frame: ObservationFrame,
    pub noise: NoiseConfig,
    pub reward: RewardWeights,
    /// Simulator settings; `physics.dt` is the step duration.
    pub physics: WorldConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 1000,
            drop_force: 12.0,
            drop_phase_duration: 0.5,
            success_diameter: 0.05,
            contact_feedback: true,
            observation_frame: ObservationFrame::Palm,
            noise: NoiseConfig::default(),
            reward: RewardWeights::default(),
            physics: WorldConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.horizon < 1 {
            return bad("horizon must be >= 1");
        }
        if !(self.physics.dt > 0.0 && self.drop_phase_duration > 0.0) {
            return bad("durations must be > 0");
        }
        if !(self.success_diameter > 0.0 && self.drop_force >= 0.0) {
            return bad("success_diameter must be > 0 and drop_force >= 0");
        }
        if !(self.noise.position_radius >= 0.0 && self.noise.angle_max >= 0.0) {
            return bad("noise radius and angle must be >= 0");
        }
        let w = &self.reward;
        let all = [w.contacts, w.distance, w.effort, w.twist, w.fingertips, w.drop_test];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("reward weights must be finite");
        }
        if !(w.drop_test > 0.0) {
            return bad("reward.drop_test must be > 0");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        NOMINAL_OBS_DIM + if self.contact_feedback { CONTACT_OBS_DIM } else { 0 }
    }

    pub fn drop_phase_steps(&self) -> usize {
        (self.drop_phase_duration / self.physics.dt).round() as usize
    }
}

/// Per-step reward terms, already multiplied by their weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub contacts: f64,
    pub distance: f64,
    pub effort: f64,
    pub twist: f64,
    pub fingertips: f64,
    pub drop_test: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.contacts + self.distance + self.effort + self.twist + self.fingertips + self.drop_test
    }
}

/// Raw signals the reward differences between consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSignals {
    /// Hand bodies touching the object.
    pub n_contacts: usize,
    /// Distance from hand base to the true object position, m.
    pub base_distance: f64,
    pub fingertip_distance: f64,
    pub twist: Twist,
}

impl RewardSignals {
    pub fn measure(model: &HandModel, hand: &HandBodies, object: BodyId, world: &World) -> Self {
        let o = &world.bodies[object.0 as usize];
        let palm = world.bodies[hand.palm.0 as usize].pose;
        Self {
            n_contacts: contacting_hand_bodies(hand, object, world),
            base_distance: (palm.position() - o.pose.position()).norm(),
            fingertip_distance: model.fingertip_mean_distance(hand, world, o),
            twist: o.twist,
        }
    }
}

/// Number of hand bodies with a touching or loaded contact against `object` in the last solve.
pub fn contacting_hand_bodies(hand: &HandBodies, object: BodyId, world: &World) -> usize {
    hand.sensed()
        .iter()
        .filter(|id| {
            world.contacts.iter().any(|c| {
                c.involves(**id) && c.involves(object) && (c.penetration >= 0.0 || c.normal_impulse > 0.0)
            })
        })
        .count()
}

/// The six weighted reward terms. `drop_success` is `None` except at the final step.
pub fn compute_reward(
    prev: &RewardSignals,
    curr: &RewardSignals,
    action: &[f64],
    drop_success: Option<bool>,
    w: &RewardWeights,
) -> (f64, RewardBreakdown) {
    let tw = curr.twist;
    let b = RewardBreakdown {
        contacts: w.contacts * (curr.n_contacts as f64 - prev.n_contacts as f64),
        distance: w.distance * (curr.base_distance - prev.base_distance),
        effort: w.effort * action.iter().map(|a| a * a).sum::<f64>(),
        twist: w.twist * (tw.vx * tw.vx + tw.vy * tw.vy + tw.omega * tw.omega),
        fingertips: w.fingertips * (curr.fingertip_distance - prev.fingertip_distance),
        drop_test: match drop_success {
            Some(true) => w.drop_test,
            _ => 0.0,
        },
    };
    (b.total(), b)
}

/// Uniform offset on a disk of radius `position_radius` plus an angle offset.
pub fn corrupt_pose(pose: &Pose, noise: &NoiseConfig, rng: &mut impl Rng) -> Pose {
    let r = noise.position_radius * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let dtheta = if noise.fixed_angle_magnitude {
        if rng.random_bool(0.5) {
            noise.angle_max
        } else {
            -noise.angle_max
        }
    } else {
        noise.angle_max * (2.0 * rng.random::<f64>() - 1.0)
    };
    Pose::new(pose.x + r * phi.cos(), pose.y + r * phi.sin(), pose.theta + dtheta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropOutcome {
    pub success: bool,
    /// Largest distance from the pre-test position reached during the test, m.
    pub max_displacement: f64,
    /// Steps simulated before the outcome was decided.
    pub steps: usize,
    pub unstable: bool,
}

/// Pushes the object up then down for one phase each while the hand keeps
/// applying `hold` torques; succeeds if the object never leaves the circle of
/// `success_diameter` around its starting position.
pub fn drop_test(
    world: &mut World,
    model: &HandModel,
    hand: &HandBodies,
    object: BodyId,
    hold: &[f64; NUM_JOINTS],
    config: &EpisodeConfig,
) -> DropOutcome {
    let start = world.bodies[object.0 as usize].pose.position();
    let radius = 0.5 * config.success_diameter;
    let phase = config.drop_phase_steps();
    let mut out = DropOutcome { success: true, max_displacement: 0.0, steps: 0, unstable: false };
    for k in 0..2 * phase {
        let dir = if k < phase { 1.0 } else { -1.0 };
        model.apply_joint_torques(hand, world, hold);
        world
            .apply_external_force(object, Vec2::new(0.0, dir * config.drop_force))
            .expect("object exists");
        out.steps = k + 1;
        if world.step().is_err() {
            out.unstable = true;
            out.success = false;
            out.max_displacement = f64::INFINITY;
            break;
        }
        let d = (world.bodies[object.0 as usize].pose.position() - start).norm();
        out.max_displacement = out.max_displacement.max(d);
        if d > radius {
            out.success = false;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub n_contacts: usize,
    pub true_pose: Pose,
    pub breakdown: RewardBreakdown,
    /// Applied (clamped) joint torques.
    pub torques: [f64; NUM_JOINTS],
    /// Set on the final step.
    pub drop: Option<DropOutcome>,
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

struct Episode {
    pregrasp_id: u32,
    world: World,
    hand: HandBodies,
    object: BodyId,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
    signals: RewardSignals,
}

/// One environment instance. Not shared between threads; run one per worker.
pub struct Env {
    pub model: HandModel,
    pub config: EpisodeConfig,
    episode: Option<Episode>,
    episodes_started: u64,
}

impl Env {
    pub fn new(model: HandModel, config: EpisodeConfig) -> Result<Self, EnvError> {
        config.validate()?;
        model.validate().map_err(SceneError::from)?;
        Ok(Self { model, config, episode: None, episodes_started: 0 })
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    /// Starts the next episode; the noise stream is keyed by an internal episode counter.
    pub fn reset(&mut self, pregrasp: &PreGrasp) -> Result<Vec<f64>, EnvError> {
        let n = self.episodes_started;
        self.reset_episode(pregrasp, n)
    }

    /// Starts an episode whose noise stream is keyed by `(noise.seed, pregrasp.id, episode)`.
    pub fn reset_episode(&mut self, pregrasp: &PreGrasp, episode: u64) -> Result<Vec<f64>, EnvError> {
        let placed = pregrasp.instantiate(&self.model, self.config.physics.clone())?;
        if !placed.world.detect_contacts().is_empty() {
            return Err(EnvError::InitialContact(pregrasp.id));
        }
        let signals = RewardSignals::measure(&self.model, &placed.hand, placed.object, &placed.world);
        let seed = derive_seed(&[self.config.noise.seed, pregrasp.id as u64, episode]);
        self.episode = Some(Episode {
            pregrasp_id: pregrasp.id,
            world: placed.world,
            hand: placed.hand,
            object: placed.object,
            t: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            signals,
        });
        self.episodes_started = episode + 1;
        Ok(self.observe())
    }

    fn ep(&self) -> &Episode {
        self.episode.as_ref().expect("reset first")
    }

    pub fn world(&self) -> &World {
        &self.ep().world
    }

    pub fn hand(&self) -> &HandBodies {
        &self.ep().hand
    }

    pub fn object(&self) -> BodyId {
        self.ep().object
    }

    pub fn pregrasp_id(&self) -> u32 {
        self.ep().pregrasp_id
    }

    pub fn steps_taken(&self) -> usize {
        self.ep().t
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn true_object_pose(&self) -> Pose {
        let e = self.ep();
        e.world.bodies[e.object.0 as usize].pose
    }

    /// Observation of the current state; draws fresh pose noise when enabled.
    fn observe(&mut self) -> Vec<f64> {
        let cfg = &self.config;
        let e = self.episode.as_mut().expect("reset first");
        let reading = self.model.read_sensors(&e.hand, &e.world);
        let obj = &e.world.bodies[e.object.0 as usize];
        let mut pose = obj.pose;
        if cfg.noise.enabled {
            pose = corrupt_pose(&pose, &cfg.noise, &mut e.rng);
        }
        let mut twist = obj.twist;
        if cfg.observation_frame == ObservationFrame::Palm {
            let palm = e.world.bodies[e.hand.palm.0 as usize].pose;
            pose = palm.relative(&pose);
            let v = twist.linear().rotate(-palm.theta);
            twist = Twist::new(v.x, v.y, twist.omega);
        }
        let mut obs = Vec::with_capacity(cfg.obs_dim());
        obs.extend_from_slice(&reading.q);
        obs.extend_from_slice(&[pose.x, pose.y, wrap_angle(pose.theta)]);
        obs.extend_from_slice(&[twist.vx, twist.vy, twist.omega]);
        if cfg.contact_feedback {
            obs.extend_from_slice(&reading.contact_forces);
        }
        obs
    }

    /// Applies `action` as joint torques for one physics step.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != NUM_JOINTS {
            return Err(EnvError::BadAction(action.len()));
        }
        let e = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if e.done {
            return Err(EnvError::EpisodeDone);
        }
        let raw: [f64; NUM_JOINTS] = std::array::from_fn(|j| action[j]);
        let torques = self.model.apply_joint_torques(&e.hand, &mut e.world, &raw);
        let unstable = e.world.step().is_err();
        e.t += 1;

        let mut curr = RewardSignals::measure(&self.model, &e.hand, e.object, &e.world);
        if unstable {
            // Keep the reward finite; the episode ends as a failure.
            curr = RewardSignals { twist: Twist::ZERO, ..e.signals };
        }
        let last = e.t == self.config.horizon || unstable;
        let true_pose = e.world.bodies[e.object.0 as usize].pose;
        let observation = self.observe();
        let e = self.episode.as_mut().expect("reset first");
        let drop = if last {
            if unstable {
                Some(DropOutcome { success: false, max_displacement: f64::INFINITY, steps: 0, unstable: true })
            } else {
                Some(drop_test(&mut e.world, &self.model, &e.hand, e.object, &torques, &self.config))
            }
        } else {
            None
        };
        let (reward, breakdown) =
            compute_reward(&e.signals, &curr, action, drop.map(|d| d.success), &self.config.reward);
        e.signals = curr;
        e.done = last;
        let info = StepInfo {
            step: e.t,
            n_contacts: curr.n_contacts,
            true_pose,
            breakdown,
            torques,
            drop,
            unstable,
        };
        Ok(StepResult { observation, reward, done: last, info })
    }

    /// Record of the current state for traces.
    pub fn trace_record(&self, observation: &[f64], action: &[f64], result: &StepResult) -> TraceRecord {
        let e = self.ep();
        TraceRecord {
            step: result.info.step,
            observation: observation.to_vec(),
            action: action.to_vec(),
            reward: result.reward,
            breakdown: result.info.breakdown,
            true_pose: result.info.true_pose,
            n_contacts: result.info.n_contacts,
            contact_forces: self.model.read_sensors(&e.hand, &e.world).contact_forces.to_vec(),
            drop: result.info.drop,
            snapshot: e.world.snapshot(),
        }
    }
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    /// Observation the action was chosen from.
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub true_pose: Pose,
    pub n_contacts: usize,
    /// Sensed forces on palm and links (palm frame, N).
    pub contact_forces: Vec<f64>,
    pub drop: Option<DropOutcome>,
    pub snapshot: WorldSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub total_reward: f64,
    pub steps: usize,
    pub success: bool,
    pub trace: Vec<TraceRecord>,
}

/// Runs one episode with a deterministic controller.
pub fn rollout(
    env: &mut Env,
    pregrasp: &PreGrasp,
    episode: u64,
    record: bool,
    mut controller: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<Rollout, EnvError> {
    let mut obs = env.reset_episode(pregrasp, episode)?;
    let mut out = Rollout { total_reward: 0.0, steps: 0, success: false, trace: Vec::new() };
    loop {
        let action = controller(&obs);
        let r = env.step(&action)?;
        out.total_reward += r.reward;
        out.steps += 1;
        if record {
            out.trace.push(env.trace_record(&obs, &action, &r));
        }
        if r.done {
            out.success = r.info.drop.is_some_and(|d| d.success);
            return Ok(out);
        }
        obs = r.observation;
    }
}

/// Writes trace records as JSON lines.
pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), EnvError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
