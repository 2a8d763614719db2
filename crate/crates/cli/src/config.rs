//! Run configuration: one JSON document (comments allowed) holding every module's settings.

use std::path::{Path, PathBuf};

use grasplab::env::EpisodeConfig;
use grasplab::experiments::{Category, Column, ExperimentConfig, PhysicsScoreConfig};
use grasplab::hand::HandModel;
use grasplab::scene::{ObjectKind, SamplerConfig};
use grasplab::trpo::TrpoConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Pre-grasps sampled per object.
    pub n_pregrasps: usize,
    /// Fraction of pre-grasps in the train split.
    pub split_ratio: f64,
    pub sampler: SamplerConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_pregrasps: 100, split_ratio: 0.7, sampler: SamplerConfig::default() }
    }
}

/// Experiment settings not already covered by the other sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub category: Category,
    /// Pre-grasps per object for experiments (the dataset section is used for `dataset`).
    pub n_pregrasps: usize,
    /// Learned columns to fill; empty means all of the category.
    pub policies: Vec<Column>,
    pub eval_noise: bool,
    /// Training seeds averaged in every learned cell.
    pub seeds: Vec<u64>,
    /// Constant-torque baseline magnitude as a fraction of the torque limit.
    pub constant_torque_fraction: f64,
    pub physics_score: PhysicsScoreConfig,
    pub baselines_only: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            category: e.category,
            n_pregrasps: e.n_pregrasps,
            policies: e.policies,
            eval_noise: e.eval_noise,
            seeds: e.seeds,
            constant_torque_fraction: e.constant_torque_fraction,
            physics_score: e.physics_score,
            baselines_only: e.baselines_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Draw every k-th step.
    pub every: usize,
    /// Force arrow length per newton, m/N.
    pub force_scale: f64,
    /// Side of the square view centered on the palm, m.
    pub view_size: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { every: 10, force_scale: 0.004, view_size: 0.3 }
    }
}

/// Everything a command needs. The master `seed` overrides the seed fields of
/// the episode noise, training, and physics-score sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for rollouts and evaluation.
    pub workers: usize,
    pub hand: HandModel,
    pub objects: Vec<ObjectKind>,
    pub dataset: DatasetConfig,
    pub episode: EpisodeConfig,
    pub trpo: TrpoConfig,
    pub experiment: ExperimentSection,
    pub render: RenderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 1,
            hand: HandModel::default(),
            objects: ObjectKind::all_defaults(),
            dataset: DatasetConfig::default(),
            episode: EpisodeConfig::default(),
            trpo: TrpoConfig::default(),
            experiment: ExperimentSection::default(),
            render: RenderConfig::default(),
        }
    }
}

/// Replaces `//` and `/* */` comments outside strings with spaces, keeping
/// line breaks so parse errors point at the original line.
pub fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut in_string = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            if c == '\\' {
                if let Some(n) = chars.next() {
                    out.push(n);
                }
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match (c, chars.peek()) {
            ('"', _) => {
                in_string = true;
                out.push(c);
            }
            ('/', Some('/')) => {
                for n in chars.by_ref() {
                    if n == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = ' ';
                for n in chars.by_ref() {
                    out.push(if n == '\n' { '\n' } else { ' ' });
                    if prev == '*' && n == '/' {
                        break;
                    }
                    prev = n;
                }
            }
            _ => out.push(c),
        }
    }
    out
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(&strip_comments(text)).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Copies the master seed into every module seed.
    pub fn resolve(mut self) -> Self {
        self.trpo.seed = self.seed;
        self.episode.noise.seed = self.seed;
        self.experiment.physics_score.noise.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let d = &self.dataset;
        if !(d.split_ratio > 0.0 && d.split_ratio < 1.0) {
            return bad(format!("dataset.split_ratio must lie in (0, 1), got {}", d.split_ratio));
        }
        if d.n_pregrasps < 2 {
            return bad(format!("dataset.n_pregrasps must be >= 2, got {}", d.n_pregrasps));
        }
        if self.objects.is_empty() {
            return bad("objects must list at least one object".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.render.every == 0 || !(self.render.force_scale >= 0.0) || !(self.render.view_size > 0.0) {
            return bad("render.every and render.view_size must be > 0, render.force_scale >= 0".into());
        }
        for o in &self.objects {
            o.validate().map_err(|e| CliError::Validation(format!("objects: {e}")))?;
        }
        let section = |name: &str, r: Result<(), String>| r.map_err(|e| CliError::Validation(format!("{name}: {e}")));
        section("hand", self.hand.validate().map_err(|e| e.to_string()))?;
        section("dataset.sampler", d.sampler.validate().map_err(|e| e.to_string()))?;
        section("episode", self.episode.validate().map_err(|e| e.to_string()))?;
        section("trpo", self.trpo.validate().map_err(|e| e.to_string()))?;
        section("experiment", self.experiment_config().validate().map_err(|e| e.to_string()))?;
        Ok(())
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        let x = &self.experiment;
        ExperimentConfig {
            category: x.category,
            objects: self.objects.clone(),
            n_pregrasps: x.n_pregrasps,
            split_ratio: self.dataset.split_ratio,
            policies: x.policies.clone(),
            eval_noise: x.eval_noise,
            seeds: x.seeds.clone(),
            dataset_seed: self.seed,
            sampler: self.dataset.sampler.clone(),
            episode: self.episode.clone(),
            trpo: self.trpo.clone(),
            constant_torque_fraction: x.constant_torque_fraction,
            physics_score: x.physics_score.clone(),
            baselines_only: x.baselines_only,
            workers: self.workers,
        }
    }
}
