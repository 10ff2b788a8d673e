//! Run configuration: a nestable TOML file plus `--set key=value` overrides.
//! Unknown keys are rejected; the effective config is echoed into every
//! output directory.

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use ssm_nav::env::{EnvParams, EpisodeParams};
use ssm_nav::metrics::DistanceMode;
use ssm_nav::planner::DecisionMode;
use ssm_nav::policy::ModelDims;
use ssm_nav::trainer::TrainConfig;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub count: usize,
    pub seed_start: u64,
    pub n_nodes: usize,
    pub radius: f64,
    pub vocab: usize,
    pub d_f: usize,
    pub tiling: usize,
    pub noise_sigma: f64,
    pub min_sep: f64,
    pub z_range: f64,
    pub heading_bins: u8,
    pub elevation_bins: u8,
    pub embedding_seed: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let p = EnvParams::default();
        Self {
            count: 8,
            seed_start: 100,
            n_nodes: p.n_nodes,
            radius: p.radius,
            vocab: p.vocab,
            d_f: p.d_f,
            tiling: p.tiling,
            noise_sigma: p.noise_sigma,
            min_sep: p.min_sep,
            z_range: p.z_range,
            heading_bins: p.heading_bins,
            elevation_bins: p.elevation_bins,
            embedding_seed: p.embedding_seed,
        }
    }
}

impl EnvSection {
    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            n_nodes: self.n_nodes,
            radius: self.radius,
            vocab: self.vocab,
            d_f: self.d_f,
            tiling: self.tiling,
            noise_sigma: self.noise_sigma,
            min_sep: self.min_sep,
            z_range: self.z_range,
            heading_bins: self.heading_bins,
            elevation_bins: self.elevation_bins,
            embedding_seed: self.embedding_seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub per_env: usize,
    pub seed_start: u64,
    pub min_len: usize,
    pub trap_branches: usize,
    pub success_radius: f64,
    pub max_tries: usize,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let p = EpisodeParams::default();
        Self {
            per_env: 25,
            seed_start: 0,
            min_len: p.min_len,
            trap_branches: p.trap_branches,
            success_radius: p.success_radius,
            max_tries: p.max_tries,
        }
    }
}

impl EpisodeSection {
    pub fn episode_params(&self) -> EpisodeParams {
        EpisodeParams {
            min_len: self.min_len,
            trap_branches: self.trap_branches,
            success_radius: self.success_radius,
            max_tries: self.max_tries,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_x: usize,
    pub d_h: usize,
    pub s_steps: usize,
    pub grounding: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_x: 64,
            d_h: 64,
            s_steps: 2,
            grounding: true,
        }
    }
}

impl ModelSection {
    pub fn dims(&self, env: &EnvSection) -> ModelDims {
        ModelDims {
            d_x: self.d_x,
            d_f: env.d_f,
            tiling: env.tiling,
            d_h: self.d_h,
            s_steps: self.s_steps,
            n_tokens: 6 + env.vocab,
            grounding: self.grounding,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mode: DecisionMode,
    pub max_rounds: usize,
    pub match_eps: f64,
    pub distance: DistanceMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: DecisionMode::Frontier,
            max_rounds: 20,
            match_eps: 0.5,
            distance: DistanceMode::Geodesic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub train_env_seed_start: u64,
    pub train_env_count: usize,
    pub eval_env_seed_start: u64,
    pub eval_env_count: usize,
    pub train_per_env: usize,
    pub eval_per_env: usize,
    /// Required SR margin of the full model over the local baseline.
    pub sr_margin: f64,
    /// Allowed tie range for the reasoning/grounding toggles.
    pub tie_tolerance: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            train_env_seed_start: 100,
            train_env_count: 8,
            eval_env_seed_start: 900,
            eval_env_count: 10,
            train_per_env: 25,
            eval_per_env: 50,
            sr_margin: 0.05,
            tie_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvSection,
    pub episodes: EpisodeSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

/// Mirror of [`TrainConfig`] so the whole file deserializes with defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub il_weight: f64,
    pub rl_weight: f64,
    pub gamma: f64,
    pub lr: f64,
    pub batch_episodes: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub success_bonus: f64,
    pub mode: DecisionMode,
    pub student_forcing_prob: f64,
    pub max_rounds: usize,
    pub match_eps: f64,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            il_weight: t.il_weight,
            rl_weight: t.rl_weight,
            gamma: t.gamma,
            lr: t.lr,
            batch_episodes: t.batch_episodes,
            max_epochs: t.max_epochs,
            seed: t.seed,
            success_bonus: t.success_bonus,
            mode: t.mode,
            student_forcing_prob: t.student_forcing_prob,
            max_rounds: t.max_rounds,
            match_eps: t.match_eps,
            eval_every: t.eval_every,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            il_weight: self.il_weight,
            rl_weight: self.rl_weight,
            gamma: self.gamma,
            lr: self.lr,
            batch_episodes: self.batch_episodes,
            max_epochs: self.max_epochs,
            seed: self.seed,
            success_bonus: self.success_bonus,
            mode: self.mode,
            student_forcing_prob: self.student_forcing_prob,
            max_rounds: self.max_rounds,
            match_eps: self.match_eps,
            eval_every: self.eval_every,
        }
    }
}

fn set_path(doc: &mut toml::Value, dotted: &str, raw: &str) -> Result<()> {
    let mut parts = dotted.split('.').peekable();
    let mut cur = doc;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| anyhow!("'{dotted}': parent is not a table"))?;
            let value: toml::Value = raw
                .parse::<i64>()
                .map(toml::Value::from)
                .or_else(|_| raw.parse::<f64>().map(toml::Value::from))
                .or_else(|_| raw.parse::<bool>().map(toml::Value::from))
                .unwrap_or_else(|_| toml::Value::from(raw));
            table.insert(part.to_string(), value);
            return Ok(());
        }
        let table = cur
            .as_table_mut()
            .ok_or_else(|| anyhow!("'{dotted}': parent is not a table"))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(anyhow!("empty override key"))
}

/// Load a config file (defaults when absent) and apply `--set` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc: toml::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Value>().context("parsing config TOML")?
        }
        None => toml::Value::Table(Default::default()),
    };
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got '{ov}'"))?;
        set_path(&mut doc, key.trim(), value.trim())?;
    }
    let cfg: RunConfig = doc.try_into().context("validating config")?;
    Ok(cfg)
}

pub fn echo_config(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg).context("serializing effective config")?;
    std::fs::write(out_dir.join("config.toml"), text).context("writing config echo")?;
    Ok(())
}
