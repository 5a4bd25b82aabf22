//! Dataset manifests (JSONL) and gold-result resolution with caching.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dialect, GoldSpec, Instance, InstanceId};
use crate::exec::{
    execute_sql, fingerprint, results_match, ExecError, ExecLimits, Fingerprint, MatchPolicy,
    ResultTable,
};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate instance id '{0}'")]
    DuplicateId(InstanceId),
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
}

/// One manifest row:
/// `{id, question, db, gold_sql? | gold_result?, dialect}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    id: InstanceId,
    question: String,
    db: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_result: Option<ResultTable>,
    dialect: Dialect,
}

impl ManifestRow {
    fn into_instance(self, line: usize) -> Result<Instance, ManifestError> {
        let gold = match (self.gold_sql, self.gold_result) {
            (Some(sql), None) => GoldSpec::Sql(sql),
            (None, Some(table)) => GoldSpec::Table(table),
            (Some(_), Some(_)) => {
                return Err(ManifestError::Parse {
                    line,
                    message: "row sets both gold_sql and gold_result".into(),
                })
            }
            (None, None) => {
                return Err(ManifestError::Parse {
                    line,
                    message: "row sets neither gold_sql nor gold_result".into(),
                })
            }
        };
        Ok(Instance {
            instance_id: self.id,
            question: self.question,
            db: self.db,
            gold,
            dialect: self.dialect,
        })
    }

    fn from_instance(instance: &Instance) -> Self {
        let (gold_sql, gold_result) = match &instance.gold {
            GoldSpec::Sql(sql) => (Some(sql.clone()), None),
            GoldSpec::Table(table) => (None, Some(table.clone())),
        };
        ManifestRow {
            id: instance.instance_id.clone(),
            question: instance.question.clone(),
            db: instance.db.clone(),
            gold_sql,
            gold_result,
            dialect: instance.dialect,
        }
    }
}

pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Vec<Instance>, ManifestError> {
    let mut instances = Vec::new();
    let mut seen: BTreeSet<InstanceId> = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let instance = row.into_instance(lineno)?;
        if !seen.insert(instance.instance_id.clone()) {
            return Err(ManifestError::DuplicateId(instance.instance_id));
        }
        instances.push(instance);
    }
    Ok(instances)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Instance>, ManifestError> {
    let file = fs::File::open(path)?;
    parse_manifest(BufReader::new(file))
}

pub fn serialize_manifest(instances: &[Instance]) -> String {
    let mut out = String::new();
    for instance in instances {
        let row = ManifestRow::from_instance(instance);
        out.push_str(&serde_json::to_string(&row).expect("manifest row serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, instances: &[Instance]) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(serialize_manifest(instances).as_bytes())
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("gold SQL for '{instance}' failed: {source}")]
    Exec {
        instance: InstanceId,
        source: ExecError,
    },
    #[error("gold cache I/O for '{instance}': {message}")]
    Cache { instance: InstanceId, message: String },
}

/// Resolves and memoizes gold result tables.
///
/// Gold given as SQL is executed once per instance against the instance
/// database and cached in memory, and on disk when a cache directory is set.
pub struct GoldStore {
    policy: MatchPolicy,
    limits: ExecLimits,
    cache_dir: Option<PathBuf>,
    memo: Mutex<BTreeMap<InstanceId, ResultTable>>,
}

impl GoldStore {
    pub fn new(policy: MatchPolicy, limits: ExecLimits) -> Self {
        GoldStore {
            policy,
            limits,
            cache_dir: None,
            memo: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn policy(&self) -> &MatchPolicy {
        &self.policy
    }

    fn cache_path(&self, id: &InstanceId) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|dir| {
            // Instance ids are tokens; sanitize anyway so ids never escape
            // the cache directory.
            let safe: String = id
                .as_str()
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            dir.join(format!("{safe}.json"))
        })
    }

    pub fn gold_table(&self, instance: &Instance) -> Result<ResultTable, GoldError> {
        if let GoldSpec::Table(table) = &instance.gold {
            return Ok(table.clone());
        }
        if let Some(table) = self.memo.lock().unwrap().get(&instance.instance_id) {
            return Ok(table.clone());
        }
        if let Some(path) = self.cache_path(&instance.instance_id) {
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| GoldError::Cache {
                    instance: instance.instance_id.clone(),
                    message: e.to_string(),
                })?;
                let table: ResultTable =
                    serde_json::from_str(&text).map_err(|e| GoldError::Cache {
                        instance: instance.instance_id.clone(),
                        message: e.to_string(),
                    })?;
                self.memo
                    .lock()
                    .unwrap()
                    .insert(instance.instance_id.clone(), table.clone());
                return Ok(table);
            }
        }
        let GoldSpec::Sql(sql) = &instance.gold else {
            unreachable!("table variant handled above");
        };
        let table = execute_sql(Path::new(&instance.db), sql, &self.limits).map_err(|source| {
            GoldError::Exec {
                instance: instance.instance_id.clone(),
                source,
            }
        })?;
        if let Some(path) = self.cache_path(&instance.instance_id) {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| GoldError::Cache {
                    instance: instance.instance_id.clone(),
                    message: e.to_string(),
                })?;
            }
            fs::write(&path, serde_json::to_string_pretty(&table).unwrap()).map_err(|e| {
                GoldError::Cache {
                    instance: instance.instance_id.clone(),
                    message: e.to_string(),
                }
            })?;
        }
        self.memo
            .lock()
            .unwrap()
            .insert(instance.instance_id.clone(), table.clone());
        Ok(table)
    }

    pub fn gold_fingerprint(&self, instance: &Instance) -> Result<Fingerprint, GoldError> {
        Ok(fingerprint(&self.gold_table(instance)?, &self.policy))
    }

    /// Binary execution-correctness verdict for a candidate execution.
    /// Errored executions are never correct.
    pub fn verdict(
        &self,
        instance: &Instance,
        candidate: &Result<ResultTable, ExecError>,
    ) -> Result<bool, GoldError> {
        match candidate {
            Err(_) => Ok(false),
            Ok(table) => {
                let gold = self.gold_table(instance)?;
                Ok(results_match(table, &gold, &self.policy))
            }
        }
    }
}
