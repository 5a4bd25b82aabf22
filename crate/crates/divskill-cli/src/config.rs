//! TOML run configuration with JSON overrides.
//!
//! Unknown keys are rejected everywhere. `--override '<json>'` flags are
//! deep-merged onto the file before validation, so any field can be patched
//! from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use divskill::agents::Budgets;
use divskill::domain::{Skill, SkillPool, DEFAULT_MAX_PROMPT_LEN};
use divskill::exec::{ExecLimits, MatchPolicy};
use divskill::residual::RunConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub run: RunSection,
    pub budgets: Budgets,
    pub match_policy: MatchPolicy,
    pub screen: ScreenSection,
    pub executor: ExecutorSection,
    pub llm: LlmSection,
    pub paths: PathsSection,
    pub pool: PoolSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Pool size; 0 means "use the seed pool's size".
    pub k: usize,
    pub batches: usize,
    pub batch_size: usize,
    pub n_eval: usize,
    pub max_prompt_len: usize,
    pub seed: Option<u64>,
    pub rotation_stride: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            k: 0,
            batches: 0,
            batch_size: 0,
            n_eval: 1,
            max_prompt_len: DEFAULT_MAX_PROMPT_LEN,
            seed: None,
            rotation_stride: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    /// Lowercased dialect-specific keywords proposals must avoid.
    pub dialect_denylist: Vec<String>,
}

impl Default for ScreenSection {
    fn default() -> Self {
        ScreenSection {
            dialect_denylist: ["qualify", "ilike", "variant", "safe_cast"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorSection {
    /// Failure probability of the synthetic executor.
    pub noise: f64,
    pub timeout_s: f64,
    pub max_rows: usize,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        ExecutorSection {
            noise: 0.0,
            timeout_s: 30.0,
            max_rows: 10_000,
        }
    }
}

impl ExecutorSection {
    pub fn limits(&self) -> ExecLimits {
        ExecLimits {
            timeout: std::time::Duration::from_secs_f64(self.timeout_s),
            max_rows: self.max_rows,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: String,
    pub model: String,
    /// Falls back to `model` when empty.
    pub judge_model: String,
    /// Falls back to `model` when empty.
    pub optimizer_model: String,
}

impl LlmSection {
    pub fn judge_model(&self) -> &str {
        if self.judge_model.is_empty() {
            &self.model
        } else {
            &self.judge_model
        }
    }

    pub fn optimizer_model(&self) -> &str {
        if self.optimizer_model.is_empty() {
            &self.model
        } else {
            &self.optimizer_model
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub docs_dir: Option<PathBuf>,
    pub patterns_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    /// Pool JSON document path; takes precedence over inline skills.
    pub file: Option<PathBuf>,
    pub skills: Vec<SeedSkillRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSkillRow {
    pub id: String,
    pub prompt: String,
}

fn deep_merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(patch_map)) => {
            for (key, value) in patch_map {
                match base_map.get_mut(&key) {
                    Some(slot) => deep_merge(slot, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<CliConfig> {
    let base = match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("config: cannot read {}", path.display()))?;
            toml::from_str::<CliConfig>(&text)
                .with_context(|| format!("config: invalid TOML in {}", path.display()))?
        }
        None => CliConfig::default(),
    };
    if overrides.is_empty() {
        return Ok(base);
    }
    let mut value = serde_json::to_value(&base).context("config: serialize")?;
    for patch_text in overrides {
        let patch: serde_json::Value = serde_json::from_str(patch_text)
            .with_context(|| format!("config: --override is not valid JSON: {patch_text}"))?;
        deep_merge(&mut value, patch);
    }
    serde_json::from_value(value).context("config: override produced an invalid configuration")
}

impl CliConfig {
    /// Build the engine RunConfig; `seed_flag` wins over the file.
    pub fn run_config(&self, pool_k: usize, seed_flag: Option<u64>) -> Result<RunConfig> {
        let seed = seed_flag.or(self.run.seed);
        let Some(seed) = seed else {
            bail!("a seed is required (set [run].seed or pass --seed)");
        };
        let k = if self.run.k == 0 { pool_k } else { self.run.k };
        Ok(RunConfig {
            k,
            batches: self.run.batches,
            batch_size: self.run.batch_size,
            n_eval: self.run.n_eval,
            max_prompt_len: self.run.max_prompt_len,
            seed,
            rotation_stride: self.run.rotation_stride,
        })
    }

    /// Resolve the seed pool from `[pool].file` or inline `[pool].skills`.
    pub fn seed_pool(&self, config_dir: Option<&Path>) -> Result<SkillPool> {
        if let Some(file) = &self.pool.file {
            let path = match (file.is_relative(), config_dir) {
                (true, Some(dir)) => dir.join(file),
                _ => file.clone(),
            };
            let text = fs::read_to_string(&path)
                .with_context(|| format!("pool: cannot read {}", path.display()))?;
            return SkillPool::from_json(&text).context("pool: invalid pool document");
        }
        if self.pool.skills.is_empty() {
            bail!("no seed pool: set [pool].file or [[pool.skills]] entries");
        }
        let skills: Vec<Skill> = self
            .pool
            .skills
            .iter()
            .map(|row| Skill::seed(row.id.clone(), row.prompt.clone()))
            .collect::<Result<_, _>>()
            .context("pool: invalid seed skill")?;
        SkillPool::new(skills).context("pool: invalid seed pool")
    }
}
