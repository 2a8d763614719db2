//! Baselines, policy evaluation, and the experiment categories with their results tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approximator::{ApproxError, Checkpoint};
use crate::env::{corrupt_pose, rollout, Env, EnvError, EpisodeConfig, NoiseConfig};
use crate::hand::{HandError, HandModel, CLOSING_SIGNS, NUM_JOINTS};
use crate::math::{derive_seed, Pose, Vec2};
use crate::physics2d::{World, WorldConfig};
use crate::scene::{make_object, sample_pregrasps, split_dataset, ObjectKind, PreGrasp, SamplerConfig, SceneError};
use crate::trpo::{train, TrpoConfig, TrpoError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("empty evaluation set")]
    EmptySet,
    #[error("checkpoint expects {checkpoint}-dim observations but the environment produces {env}")]
    DimensionMismatch { checkpoint: usize, env: usize },
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Trpo(#[from] TrpoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Success of one evaluated pre-grasp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub pregrasp_id: u32,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub fraction: f64,
    pub outcomes: Vec<InstanceOutcome>,
}

impl EvalResult {
    fn from_outcomes(outcomes: Vec<InstanceOutcome>) -> Self {
        let fraction = outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64;
        Self { fraction, outcomes }
    }
}

/// Closing-direction torque of `magnitude` on every joint.
pub fn closing_action(magnitude: f64) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|j| CLOSING_SIGNS[j] * magnitude)
}

/// Open-loop baseline: the same closing torque on every joint for the whole episode.
pub fn constant_torque_eval(
    pregrasps: &[PreGrasp],
    torque: f64,
    model: &HandModel,
    config: &EpisodeConfig,
) -> Result<EvalResult, ExperimentError> {
    if pregrasps.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    let action = closing_action(torque).to_vec();
    let outcomes = pregrasps
        .par_iter()
        .map(|pg| {
            let mut env = Env::new(model.clone(), config.clone())?;
            let r = rollout(&mut env, pg, 0, false, |_| action.clone())?;
            Ok(InstanceOutcome { pregrasp_id: pg.id, success: r.success })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(EvalResult::from_outcomes(outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsScoreConfig {
    pub trials: usize,
    /// Object pose perturbation; `enabled` is ignored.
    pub noise: NoiseConfig,
    /// Joint increment of the kinematic closing sweep, rad.
    pub close_increment: f64,
    /// Duration of the dynamic settling phase, s.
    pub settle_duration: f64,
    /// Closing torque held during settling, as a fraction of the torque limit.
    pub hold_fraction: f64,
}

impl Default for PhysicsScoreConfig {
    fn default() -> Self {
        Self { trials: 31, noise: NoiseConfig::default(), close_increment: 0.01, settle_duration: 1.0, hold_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsScore {
    pub pregrasp_id: u32,
    pub successes: usize,
    pub trials: usize,
}

impl PhysicsScore {
    pub fn fraction(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    pub fn passes(&self) -> bool {
        self.fraction() > 0.5
    }
}

/// Sweeps each finger toward closed until a link would penetrate the object
/// or every joint of the finger is at its limit. A touching distal link stops
/// the whole finger; a touching proximal link lets the distal joint continue.
pub fn kinematic_close(model: &HandModel, base: Pose, q0: [f64; NUM_JOINTS], object: &ObjectKind, object_pose: Pose, increment: f64) -> [f64; NUM_JOINTS] {
    let limits = model.joint_limits();
    let closed = model.closed_q();
    let link = model.link_shape();
    let shape = object.shape();
    let touches = |q: [f64; NUM_JOINTS], j: usize| -> bool {
        let poses = model.forward_kinematics(base, q).expect("swept angles stay within limits");
        link.separation(&poses.links[j], &shape, &object_pose) <= 0.0
    };
    let mut q = q0;
    let mut moving = [true; NUM_JOINTS];
    while moving.iter().any(|m| *m) {
        for f in 0..2 {
            for j in [2 * f, 2 * f + 1] {
                if !moving[j] {
                    continue;
                }
                let (lo, hi) = limits[j];
                let next = (q[j] + CLOSING_SIGNS[j] * increment).clamp(lo, hi);
                let mut trial = q;
                trial[j] = next;
                // A proximal move also carries the distal link.
                let hit = touches(trial, j) || (j % 2 == 0 && touches(trial, j + 1));
                if hit {
                    moving[j] = false;
                    if j % 2 == 1 {
                        moving[j - 1] = false;
                    }
                } else {
                    q[j] = next;
                    if q[j] == closed[j] {
                        moving[j] = false;
                    }
                }
            }
        }
    }
    q
}

/// Monotone-chain convex hull, counter-clockwise.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: Vec2, a: Vec2, b: Vec2| (a - o).cross(b - o);
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &pt in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
                hull.pop();
            }
            hull.push(pt);
        }
        hull.pop();
    }
    hull
}

/// Inside or on the boundary of a counter-clockwise convex polygon.
pub fn inside_convex(hull: &[Vec2], p: Vec2) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| (hull[(i + 1) % hull.len()] - hull[i]).cross(p - hull[i]) >= 0.0)
}

/// Palm corners plus the end points of every link.
pub fn hand_outline(model: &HandModel, world: &World, hand: &crate::hand::HandBodies) -> Vec<Vec2> {
    let palm = world.bodies[hand.palm.0 as usize].pose;
    let (hx, hy) = (0.5 * model.palm_depth, 0.5 * model.palm_width);
    let mut pts: Vec<Vec2> =
        [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)].iter().map(|&(x, y)| palm.transform_point(Vec2::new(x, y))).collect();
    for l in hand.links {
        let p = world.bodies[l.0 as usize].pose;
        let h = 0.5 * model.link_length;
        pts.push(p.transform_point(Vec2::new(-h, 0.0)));
        pts.push(p.transform_point(Vec2::new(h, 0.0)));
    }
    pts
}

/// One noisy open-loop closing trial: kinematic sweep, then dynamic settling
/// with a held closing torque; succeeds if the object center ends inside the
/// hand's convex hull.
pub fn physics_trial(pg: &PreGrasp, model: &HandModel, physics: &WorldConfig, config: &PhysicsScoreConfig, object_pose: Pose) -> Result<bool, ExperimentError> {
    let q = kinematic_close(model, pg.hand_pose, pg.q0, &pg.object, object_pose, config.close_increment);
    let mut world = World::new(physics.clone());
    let mut desc = make_object(&pg.object);
    desc.pose = object_pose;
    let object = world.add_body(desc).map_err(HandError::from)?;
    let hand = model.spawn(&mut world, pg.hand_pose, q)?;
    let hold = closing_action(config.hold_fraction * model.torque_limit);
    let steps = (config.settle_duration / physics.dt).round() as usize;
    for _ in 0..steps {
        model.apply_joint_torques(&hand, &mut world, &hold);
        if world.step().is_err() {
            return Ok(false);
        }
    }
    let hull = convex_hull(&hand_outline(model, &world, &hand));
    Ok(inside_convex(&hull, world.bodies[object.0 as usize].pose.position()))
}

/// Fraction of noisy closing trials that keep the object in the hand.
pub fn physics_score(pg: &PreGrasp, model: &HandModel, physics: &WorldConfig, config: &PhysicsScoreConfig) -> Result<PhysicsScore, ExperimentError> {
    let noise = NoiseConfig { enabled: true, ..config.noise.clone() };
    let results = (0..config.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[noise.seed, pg.id as u64, k as u64]));
            let pose = corrupt_pose(&pg.object_pose, &noise, &mut rng);
            physics_trial(pg, model, physics, config, pose)
        })
        .collect::<Result<Vec<bool>, _>>()?;
    Ok(PhysicsScore { pregrasp_id: pg.id, successes: results.iter().filter(|s| **s).count(), trials: config.trials })
}

/// One episode per pre-grasp with the policy's mean action; the drop test decides success.
pub fn evaluate_policy(
    checkpoint: &Checkpoint,
    pregrasps: &[PreGrasp],
    model: &HandModel,
    config: &EpisodeConfig,
) -> Result<EvalResult, ExperimentError> {
    if pregrasps.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    if checkpoint.obs_dim() != config.obs_dim() || checkpoint.contact_feedback != config.contact_feedback {
        return Err(ExperimentError::DimensionMismatch { checkpoint: checkpoint.obs_dim(), env: config.obs_dim() });
    }
    let outcomes = pregrasps
        .par_iter()
        .map(|pg| {
            let mut env = Env::new(model.clone(), config.clone())?;
            let mut failure = None;
            let r = rollout(&mut env, pg, 0, false, |obs| match checkpoint.act(obs) {
                Ok(a) => a,
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![0.0; NUM_JOINTS]
                }
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            Ok(InstanceOutcome { pregrasp_id: pg.id, success: r.success })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(EvalResult::from_outcomes(outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// One policy per pre-grasp, tested on that same pre-grasp.
    SinglePregrasp,
    /// One policy per object on the train split, tested on the test split.
    MultiPregrasp,
    /// Four policies per object over contacts × train noise, tested with noise.
    MultiPregraspNoise,
}

/// Table column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    PhysicsScore,
    ConstantTorque,
    NoContacts,
    Contacts,
    NoContactsNoNoise,
    ContactsNoNoise,
    NoContactsNoise,
    ContactsNoise,
}

impl Column {
    pub fn header(self) -> &'static str {
        match self {
            Column::PhysicsScore => "P>0.5",
            Column::ConstantTorque => "CT",
            Column::NoContacts => "¬C",
            Column::Contacts => "C",
            Column::NoContactsNoNoise => "¬C,¬N",
            Column::ContactsNoNoise => "C,¬N",
            Column::NoContactsNoise => "¬C,N",
            Column::ContactsNoise => "C,N",
        }
    }

    /// Policy variant `(contact_feedback, train_noise)` behind a learned column.
    pub fn variant(self) -> Option<(bool, bool)> {
        match self {
            Column::NoContacts => Some((false, false)),
            Column::Contacts => Some((true, false)),
            Column::NoContactsNoNoise => Some((false, false)),
            Column::ContactsNoNoise => Some((true, false)),
            Column::NoContactsNoise => Some((false, true)),
            Column::ContactsNoise => Some((true, true)),
            _ => None,
        }
    }
}

impl Category {
    pub fn columns(self) -> Vec<Column> {
        use Column::*;
        match self {
            Category::SinglePregrasp | Category::MultiPregrasp => vec![PhysicsScore, ConstantTorque, NoContacts, Contacts],
            Category::MultiPregraspNoise => {
                vec![PhysicsScore, ConstantTorque, NoContactsNoNoise, ContactsNoNoise, NoContactsNoise, ContactsNoise]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub category: Category,
    pub objects: Vec<ObjectKind>,
    /// Pre-grasps sampled per object.
    pub n_pregrasps: usize,
    pub split_ratio: f64,
    /// Learned columns to fill; empty means every learned column of the category.
    pub policies: Vec<Column>,
    /// Evaluate with observation noise (always on for the noise category).
    pub eval_noise: bool,
    /// Training seeds; each learned cell is averaged over them.
    pub seeds: Vec<u64>,
    /// Seed of pre-grasp sampling and splitting.
    pub dataset_seed: u64,
    pub sampler: SamplerConfig,
    /// Episode settings shared by training and evaluation; feedback and noise are set per column.
    pub episode: EpisodeConfig,
    /// Training budget and hyper-parameters; the seed is replaced per cell.
    pub trpo: TrpoConfig,
    /// Constant-torque baseline magnitude as a fraction of the torque limit.
    pub constant_torque_fraction: f64,
    pub physics_score: PhysicsScoreConfig,
    /// Skip training and leave the learned columns blank.
    pub baselines_only: bool,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            category: Category::MultiPregrasp,
            objects: ObjectKind::all_defaults(),
            n_pregrasps: 20,
            split_ratio: 0.7,
            policies: Vec::new(),
            eval_noise: false,
            seeds: vec![0],
            dataset_seed: 0,
            sampler: SamplerConfig::default(),
            episode: EpisodeConfig::default(),
            trpo: TrpoConfig::default(),
            constant_torque_fraction: 0.5,
            physics_score: PhysicsScoreConfig::default(),
            baselines_only: false,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.objects.is_empty() {
            return bad("objects must not be empty".into());
        }
        if self.n_pregrasps == 0 {
            return bad("n_pregrasps must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.constant_torque_fraction) {
            return bad("constant_torque_fraction must lie in [0, 1]".into());
        }
        if self.physics_score.trials == 0 || !(self.physics_score.close_increment > 0.0) {
            return bad("physics_score.trials and close_increment must be > 0".into());
        }
        let allowed = self.category.columns();
        for c in &self.policies {
            if c.variant().is_none() || !allowed.contains(c) {
                return bad(format!("column {} is not a learned column of {:?}", c.header(), self.category));
            }
        }
        if self.category == Category::MultiPregraspNoise && !self.eval_noise {
            return bad("multi_pregrasp_noise evaluates with noise; set eval_noise = true".into());
        }
        for o in &self.objects {
            o.validate()?;
        }
        self.sampler.validate()?;
        self.episode.validate()?;
        self.trpo.validate()?;
        Ok(())
    }

    pub fn learned_columns(&self) -> Vec<Column> {
        if self.policies.is_empty() {
            self.category.columns().into_iter().filter(|c| c.variant().is_some()).collect()
        } else {
            self.policies.clone()
        }
    }

    fn episode_for(&self, contacts: bool, noise: bool) -> EpisodeConfig {
        let mut e = self.episode.clone();
        e.contact_feedback = contacts;
        e.noise.enabled = noise;
        e
    }
}

/// Success percentage of one cell with the data behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Mean over seeds, in percent; `None` marks a gap.
    pub percent: Option<f64>,
    /// Evaluated pre-grasps per seed.
    pub n: usize,
    pub per_seed: Vec<f64>,
    pub error: Option<String>,
}

impl Cell {
    fn from_fractions(n: usize, per_seed: Vec<f64>) -> Self {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        Self { percent: Some(100.0 * mean), n, per_seed: per_seed.iter().map(|f| 100.0 * f).collect(), error: None }
    }

    fn gap(n: usize, error: String) -> Self {
        Self { percent: None, n, per_seed: Vec::new(), error: Some(error) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub object: String,
    pub cells: BTreeMap<Column, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub category: Category,
    pub columns: Vec<Column>,
    pub rows: Vec<ResultsRow>,
}

impl ResultsTable {
    pub fn headers(&self) -> Vec<String> {
        std::iter::once("object".to_string()).chain(self.columns.iter().map(|c| c.header().to_string())).collect()
    }

    fn cell_text(&self, row: &ResultsRow, c: Column) -> String {
        match row.cells.get(&c).and_then(|x| x.percent) {
            Some(p) => format!("{p:.1}"),
            None => String::new(),
        }
    }

    /// Percentages with one decimal; gaps are empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.headers())?;
        for row in &self.rows {
            let mut rec = vec![row.object.clone()];
            rec.extend(self.columns.iter().map(|c| self.cell_text(row, *c)));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width text table; each cell shows `percent (n=…, seeds=…)`.
    pub fn to_text(&self) -> String {
        let mut grid = vec![self.headers()];
        for row in &self.rows {
            let mut line = vec![row.object.clone()];
            for c in &self.columns {
                line.push(match row.cells.get(c) {
                    Some(Cell { percent: Some(p), n, per_seed, .. }) => format!("{p:.1} (n={n}, seeds={})", per_seed.len()),
                    Some(Cell { percent: None, error: Some(_), .. }) => "error".to_string(),
                    _ => String::new(),
                });
            }
            grid.push(line);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|k| grid.iter().map(|r| r[k].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, r) in grid.iter().enumerate() {
            let cells: Vec<String> =
                r.iter().zip(&widths).map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count()))).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            }
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn cell(&self, object: &str, column: Column) -> Option<&Cell> {
        self.rows.iter().find(|r| r.object == object)?.cells.get(&column)
    }
}

/// One per-instance outcome behind a table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutcome {
    pub category: Category,
    pub object: String,
    pub column: String,
    /// Training seed; `None` for baselines.
    pub seed: Option<u64>,
    pub pregrasp_id: u32,
    pub success: bool,
    /// Physics-score trial fraction, for the P column.
    pub fraction: Option<f64>,
}

pub fn write_jsonl(path: &Path, records: &[RawOutcome]) -> Result<(), ExperimentError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryResult {
    pub table: ResultsTable,
    pub raw: Vec<RawOutcome>,
}

/// Training problems of one object: `(train set, evaluation set)` pairs.
fn object_problems(config: &ExperimentConfig, index: usize, kind: &ObjectKind, model: &HandModel) -> Result<Vec<(Vec<PreGrasp>, Vec<PreGrasp>)>, ExperimentError> {
    let seed = derive_seed(&[config.dataset_seed, index as u64, 0]);
    let pregrasps = sample_pregrasps(kind, config.n_pregrasps, seed, model, &config.sampler)?;
    Ok(match config.category {
        Category::SinglePregrasp => pregrasps.into_iter().map(|p| (vec![p.clone()], vec![p])).collect(),
        _ => {
            let d = split_dataset(pregrasps, config.split_ratio, derive_seed(&[config.dataset_seed, index as u64, 1]))?;
            let (train, test) = (d.train_set(), d.test_set());
            assert!(train.iter().all(|p| !d.test.contains(&p.id)), "train and test splits overlap");
            vec![(train, test)]
        }
    })
}

/// Runs one experiment category: baselines on every evaluation set, then the
/// learned columns for every seed. Failed cells are recorded as gaps.
pub fn run_category(config: &ExperimentConfig, model: &HandModel) -> Result<CategoryResult, ExperimentError> {
    config.validate()?;
    let columns = config.category.columns();
    let learned = config.learned_columns();
    let eval_noise = config.eval_noise || config.category == Category::MultiPregraspNoise;
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    for (index, kind) in config.objects.iter().enumerate() {
        let problems = object_problems(config, index, kind, model)?;
        let eval_set: Vec<PreGrasp> = problems.iter().flat_map(|(_, e)| e.clone()).collect();
        let n = eval_set.len();
        let mut cells = BTreeMap::new();
        let record = |column: Column, seed: Option<u64>, o: &InstanceOutcome, fraction: Option<f64>| RawOutcome {
            category: config.category,
            object: kind.name().to_string(),
            column: column.header().to_string(),
            seed,
            pregrasp_id: o.pregrasp_id,
            success: o.success,
            fraction,
        };

        let scores = pool.install(|| {
            eval_set
                .iter()
                .map(|pg| physics_score(pg, model, &config.episode.physics, &config.physics_score))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let passed = scores.iter().filter(|s| s.passes()).count() as f64 / n as f64;
        cells.insert(Column::PhysicsScore, Cell::from_fractions(n, vec![passed]));
        for s in &scores {
            let o = InstanceOutcome { pregrasp_id: s.pregrasp_id, success: s.passes() };
            raw.push(record(Column::PhysicsScore, None, &o, Some(s.fraction())));
        }

        let ct_episode = config.episode_for(false, eval_noise);
        let ct = pool.install(|| {
            constant_torque_eval(&eval_set, config.constant_torque_fraction * model.torque_limit, model, &ct_episode)
        })?;
        cells.insert(Column::ConstantTorque, Cell::from_fractions(n, vec![ct.fraction]));
        raw.extend(ct.outcomes.iter().map(|o| record(Column::ConstantTorque, None, o, None)));

        for &column in columns.iter().filter(|c| learned.contains(c)) {
            if config.baselines_only {
                continue;
            }
            let (contacts, train_noise) = column.variant().expect("learned column");
            let train_episode = config.episode_for(contacts, train_noise);
            let eval_episode = config.episode_for(contacts, eval_noise);
            let mut per_seed = Vec::new();
            let mut error = None;
            'seeds: for &seed in &config.seeds {
                let mut outcomes = Vec::new();
                for (k, (train_set, test_set)) in problems.iter().enumerate() {
                    let trpo = TrpoConfig {
                        seed: derive_seed(&[seed, index as u64, k as u64, contacts as u64, train_noise as u64]),
                        ..config.trpo.clone()
                    };
                    let result = train(model, &train_episode, &trpo, train_set, None, None, config.workers)
                        .map_err(ExperimentError::from)
                        .and_then(|t| pool.install(|| evaluate_policy(&t.checkpoint, test_set, model, &eval_episode)));
                    match result {
                        Ok(r) => outcomes.extend(r.outcomes),
                        Err(e) => {
                            error = Some(e.to_string());
                            break 'seeds;
                        }
                    }
                }
                per_seed.push(outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64);
                raw.extend(outcomes.iter().map(|o| record(column, Some(seed), o, None)));
            }
            cells.insert(column, match error {
                Some(e) => Cell::gap(n, e),
                None => Cell::from_fractions(n, per_seed),
            });
        }
        rows.push(ResultsRow { object: kind.name().to_string(), cells });
    }
    Ok(CategoryResult { table: ResultsTable { category: config.category, columns, rows }, raw })
}
