//! Domain types shared by every other module: skills, instances, outcome
//! records, and the residual-set calculus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ResultTable;

/// Default prompt-length ceiling, in characters.
pub const DEFAULT_MAX_PROMPT_LEN: usize = 12_000;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillId(pub String);

impl SkillId {
    pub fn new(id: impl Into<String>) -> Self {
        SkillId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SkillId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub String);

impl InstanceId {
    pub fn new(id: impl Into<String>) -> Self {
        InstanceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillOrigin {
    Seed,
    Optimized,
}

/// A strategy prompt with version lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub skill_id: SkillId,
    pub prompt: String,
    pub version: u32,
    pub parent_version: Option<u32>,
    pub origin: SkillOrigin,
}

impl Skill {
    /// A version-0 seed skill.
    pub fn seed(id: impl Into<String>, prompt: impl Into<String>) -> Result<Self, DomainError> {
        let skill = Skill {
            skill_id: SkillId::new(id),
            prompt: prompt.into(),
            version: 0,
            parent_version: None,
            origin: SkillOrigin::Seed,
        };
        skill.validate(DEFAULT_MAX_PROMPT_LEN)?;
        Ok(skill)
    }

    pub fn validate(&self, max_prompt_len: usize) -> Result<(), DomainError> {
        if self.prompt.is_empty() {
            return Err(DomainError::EmptyPrompt(self.skill_id.clone()));
        }
        let len = self.prompt.chars().count();
        if len > max_prompt_len {
            return Err(DomainError::PromptTooLong {
                skill: self.skill_id.clone(),
                len,
                max: max_prompt_len,
            });
        }
        if self.origin == SkillOrigin::Seed && self.version != 0 {
            return Err(DomainError::SeedVersionNonZero(self.skill_id.clone()));
        }
        if let Some(parent) = self.parent_version {
            if parent >= self.version {
                return Err(DomainError::VersionNotIncreasing(self.skill_id.clone()));
            }
        }
        Ok(())
    }

    /// The successor skill produced by committing an accepted prompt.
    pub fn committed_update(&self, new_prompt: String) -> Skill {
        Skill {
            skill_id: self.skill_id.clone(),
            prompt: new_prompt,
            version: self.version + 1,
            parent_version: Some(self.version),
            origin: SkillOrigin::Optimized,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("skill '{0}' has an empty prompt")]
    EmptyPrompt(SkillId),
    #[error("skill '{skill}' prompt is {len} chars, limit {max}")]
    PromptTooLong { skill: SkillId, len: usize, max: usize },
    #[error("seed skill '{0}' must have version 0")]
    SeedVersionNonZero(SkillId),
    #[error("skill '{0}' version does not increase over its parent")]
    VersionNotIncreasing(SkillId),
    #[error("duplicate skill id '{0}'")]
    DuplicateSkillId(SkillId),
    #[error("pool must contain at least one skill")]
    EmptyPool,
    #[error("unknown skill id '{0}'")]
    UnknownSkill(SkillId),
    #[error("unknown instance id '{0}'")]
    UnknownInstance(InstanceId),
    #[error("bad pool document: {0}")]
    BadPoolDocument(String),
    #[error("bad outcome log: {0}")]
    BadOutcomeLog(String),
}

/// Fixed-size ordered skill bank.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillPool {
    skills: Vec<Skill>,
}

/// On-disk pool document: `{skills: [...], k}`.
#[derive(Serialize, Deserialize)]
struct PoolDocument {
    skills: Vec<Skill>,
    k: usize,
}

impl SkillPool {
    pub fn new(skills: Vec<Skill>) -> Result<Self, DomainError> {
        if skills.is_empty() {
            return Err(DomainError::EmptyPool);
        }
        let mut seen = BTreeSet::new();
        for skill in &skills {
            if !seen.insert(skill.skill_id.clone()) {
                return Err(DomainError::DuplicateSkillId(skill.skill_id.clone()));
            }
        }
        Ok(SkillPool { skills })
    }

    pub fn k(&self) -> usize {
        self.skills.len()
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn get(&self, id: &SkillId) -> Option<&Skill> {
        self.skills.iter().find(|s| &s.skill_id == id)
    }

    pub fn ids(&self) -> Vec<SkillId> {
        self.skills.iter().map(|s| s.skill_id.clone()).collect()
    }

    pub(crate) fn replace_at(&mut self, index: usize, skill: Skill) {
        self.skills[index] = skill;
    }

    pub fn to_json(&self) -> String {
        let doc = PoolDocument {
            skills: self.skills.clone(),
            k: self.k(),
        };
        serde_json::to_string_pretty(&doc).expect("pool serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let doc: PoolDocument =
            serde_json::from_str(text).map_err(|e| DomainError::BadPoolDocument(e.to_string()))?;
        if doc.k != doc.skills.len() {
            return Err(DomainError::BadPoolDocument(format!(
                "k={} but {} skills listed",
                doc.k,
                doc.skills.len()
            )));
        }
        SkillPool::new(doc.skills)
    }
}

/// What counts as the right answer for an instance: reference SQL executed on
/// demand, or a frozen reference result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldSpec {
    Sql(String),
    Table(ResultTable),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Sqlite,
    Snowflake,
    Bigquery,
    Postgres,
    Synthetic,
}

/// One text-to-SQL task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: InstanceId,
    pub question: String,
    /// Database locator; for SQLite dialects, a file path.
    pub db: String,
    pub gold: GoldSpec,
    pub dialect: Dialect,
}

/// One recorded evaluation of a (skill, instance) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

impl Attempt {
    pub fn bare(success: bool) -> Self {
        Attempt {
            success,
            candidate_ref: None,
            batch: None,
            position: None,
        }
    }
}

/// JSONL row of the persisted outcome log.
#[derive(Serialize, Deserialize)]
struct OutcomeRow {
    skill_id: SkillId,
    instance_id: InstanceId,
    attempt: usize,
    success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidate_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    position: Option<usize>,
}

/// Append-only record of binary execution outcomes per (skill, instance).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutcomeMatrix {
    skills: BTreeSet<SkillId>,
    instances: BTreeSet<InstanceId>,
    records: BTreeMap<(SkillId, InstanceId), Vec<Attempt>>,
}

impl OutcomeMatrix {
    pub fn new(
        skills: impl IntoIterator<Item = SkillId>,
        instances: impl IntoIterator<Item = InstanceId>,
    ) -> Self {
        OutcomeMatrix {
            skills: skills.into_iter().collect(),
            instances: instances.into_iter().collect(),
            records: BTreeMap::new(),
        }
    }

    pub fn register_skill(&mut self, id: SkillId) {
        self.skills.insert(id);
    }

    pub fn register_instance(&mut self, id: InstanceId) {
        self.instances.insert(id);
    }

    pub fn known_skill(&self, id: &SkillId) -> bool {
        self.skills.contains(id)
    }

    pub fn known_instance(&self, id: &InstanceId) -> bool {
        self.instances.contains(id)
    }

    /// Append one attempt. Prior records are never touched.
    pub fn record(
        &mut self,
        skill: &SkillId,
        instance: &InstanceId,
        attempt: Attempt,
    ) -> Result<(), DomainError> {
        if !self.skills.contains(skill) {
            return Err(DomainError::UnknownSkill(skill.clone()));
        }
        if !self.instances.contains(instance) {
            return Err(DomainError::UnknownInstance(instance.clone()));
        }
        self.records
            .entry((skill.clone(), instance.clone()))
            .or_default()
            .push(attempt);
        Ok(())
    }

    pub fn attempts(&self, skill: &SkillId, instance: &InstanceId) -> &[Attempt] {
        self.records
            .get(&(skill.clone(), instance.clone()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// `Some(true)` if any attempt succeeded, `Some(false)` if all failed,
    /// `None` when unattempted.
    pub fn any_success(&self, skill: &SkillId, instance: &InstanceId) -> Option<bool> {
        let attempts = self.attempts(skill, instance);
        if attempts.is_empty() {
            None
        } else {
            Some(attempts.iter().any(|a| a.success))
        }
    }

    /// Instances on which every listed skill failed all recorded attempts.
    ///
    /// An unattempted (skill, instance) pair counts as a failure; a warning
    /// is logged so silent gaps are visible. With an empty skill list the
    /// residual is the full instance set.
    pub fn residual_of(
        &self,
        instances: &BTreeSet<InstanceId>,
        skills: &[SkillId],
    ) -> ResidualSet {
        let mut remaining = BTreeSet::new();
        'instances: for instance in instances {
            for skill in skills {
                match self.any_success(skill, instance) {
                    Some(true) => continue 'instances,
                    Some(false) => {}
                    None => {
                        log::warn!(
                            "residual_of: no attempts recorded for ({skill}, {instance}); treated as failure"
                        );
                    }
                }
            }
            remaining.insert(instance.clone());
        }
        ResidualSet {
            instance_ids: remaining,
            provenance: Provenance::default(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for ((skill, instance), attempts) in &self.records {
            for (idx, attempt) in attempts.iter().enumerate() {
                let row = OutcomeRow {
                    skill_id: skill.clone(),
                    instance_id: instance.clone(),
                    attempt: idx,
                    success: attempt.success,
                    candidate_ref: attempt.candidate_ref.clone(),
                    batch: attempt.batch,
                    position: attempt.position,
                };
                serde_json::to_writer(&mut writer, &row)?;
                writer.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, DomainError> {
        let mut matrix = OutcomeMatrix::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| DomainError::BadOutcomeLog(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: OutcomeRow = serde_json::from_str(&line).map_err(|e| {
                DomainError::BadOutcomeLog(format!("line {}: {e}", lineno + 1))
            })?;
            matrix.register_skill(row.skill_id.clone());
            matrix.register_instance(row.instance_id.clone());
            matrix
                .record(
                    &row.skill_id,
                    &row.instance_id,
                    Attempt {
                        success: row.success,
                        candidate_ref: row.candidate_ref,
                        batch: row.batch,
                        position: row.position,
                    },
                )
                .expect("ids registered above");
        }
        Ok(matrix)
    }
}

/// Where a residual set came from: batch index and position within it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub batch: usize,
    pub position: usize,
}

/// Training instances on which every skill considered so far has failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub instance_ids: BTreeSet<InstanceId>,
    pub provenance: Provenance,
}

impl ResidualSet {
    pub fn new(instance_ids: BTreeSet<InstanceId>, batch: usize, position: usize) -> Self {
        ResidualSet {
            instance_ids,
            provenance: Provenance { batch, position },
        }
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn contains(&self, id: &InstanceId) -> bool {
        self.instance_ids.contains(id)
    }

    pub fn is_subset_of(&self, other: &ResidualSet) -> bool {
        self.instance_ids.is_subset(&other.instance_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> SkillId {
        SkillId::new(s)
    }

    fn iid(s: &str) -> InstanceId {
        InstanceId::new(s)
    }

    fn matrix(skills: &[&str], instances: &[&str]) -> OutcomeMatrix {
        OutcomeMatrix::new(
            skills.iter().map(|s| sid(s)),
            instances.iter().map(|s| iid(s)),
        )
    }

    #[test]
    fn single_append() {
        let mut m = matrix(&["s1"], &["x1"]);
        m.record(&sid("s1"), &iid("x1"), Attempt::bare(true)).unwrap();
        assert_eq!(m.attempts(&sid("s1"), &iid("x1")).len(), 1);
        assert_eq!(m.any_success(&sid("s1"), &iid("x1")), Some(true));
    }

    #[test]
    fn append_preserves_order() {
        let mut m = matrix(&["s1"], &["x1"]);
        m.record(&sid("s1"), &iid("x1"), Attempt::bare(false)).unwrap();
        m.record(&sid("s1"), &iid("x1"), Attempt::bare(false)).unwrap();
        let attempts = m.attempts(&sid("s1"), &iid("x1"));
        assert_eq!(attempts.len(), 2);
        assert!(attempts.iter().all(|a| !a.success));
    }

    #[test]
    fn success_count_matches_reference_reread() {
        let mut m = matrix(&["s1"], &["x1"]);
        for outcome in [true, false, true] {
            m.record(&sid("s1"), &iid("x1"), Attempt::bare(outcome)).unwrap();
        }
        // Reference re-reader: serialize the log and count success rows.
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let successes = text.lines().filter(|l| l.contains("\"success\":true")).count();
        assert_eq!(successes, 2);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let mut m = matrix(&["s1"], &["x1"]);
        assert_eq!(
            m.record(&sid("ghost"), &iid("x1"), Attempt::bare(true)),
            Err(DomainError::UnknownSkill(sid("ghost")))
        );
        assert_eq!(
            m.record(&sid("s1"), &iid("ghost"), Attempt::bare(true)),
            Err(DomainError::UnknownInstance(iid("ghost")))
        );
    }

    #[test]
    fn record_never_mutates_existing_attempts() {
        let mut m = matrix(&["s1", "s2"], &["x1", "x2"]);
        m.record(&sid("s1"), &iid("x1"), Attempt::bare(true)).unwrap();
        m.record(&sid("s2"), &iid("x2"), Attempt::bare(false)).unwrap();
        let snapshot = m.attempts(&sid("s1"), &iid("x1")).to_vec();
        m.record(&sid("s2"), &iid("x1"), Attempt::bare(true)).unwrap();
        m.record(&sid("s2"), &iid("x2"), Attempt::bare(true)).unwrap();
        assert_eq!(m.attempts(&sid("s1"), &iid("x1")), snapshot.as_slice());
        assert_eq!(m.attempts(&sid("s2"), &iid("x2"))[0], Attempt::bare(false));
    }

    #[test]
    fn residual_is_definition_example() {
        // s1 solves {x1}, s2 solves {x2}; residual of [s1, s2] over
        // {x1, x2, x3} is {x3}.
        let mut m = matrix(&["s1", "s2"], &["x1", "x2", "x3"]);
        for (s, x, ok) in [
            ("s1", "x1", true),
            ("s1", "x2", false),
            ("s1", "x3", false),
            ("s2", "x1", false),
            ("s2", "x2", true),
            ("s2", "x3", false),
        ] {
            m.record(&sid(s), &iid(x), Attempt::bare(ok)).unwrap();
        }
        let all: BTreeSet<_> = ["x1", "x2", "x3"].iter().map(|s| iid(s)).collect();
        let residual = m.residual_of(&all, &[sid("s1"), sid("s2")]);
        assert_eq!(residual.instance_ids, [iid("x3")].into_iter().collect());
    }

    #[test]
    fn empty_skill_list_returns_everything() {
        let m = matrix(&[], &["x1", "x2"]);
        let all: BTreeSet<_> = ["x1", "x2"].iter().map(|s| iid(s)).collect();
        let residual = m.residual_of(&all, &[]);
        assert_eq!(residual.instance_ids, all);
    }

    #[test]
    fn residual_matches_independent_failure_set_intersection() {
        // Random 4x6 boolean matrix; oracle computes per-skill failure sets
        // and intersects them.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let skills: Vec<SkillId> = (0..4).map(|i| sid(&format!("s{i}"))).collect();
        let instances: Vec<InstanceId> = (0..6).map(|i| iid(&format!("x{i}"))).collect();
        let mut m = OutcomeMatrix::new(skills.iter().cloned(), instances.iter().cloned());
        let mut outcomes = BTreeMap::new();
        for s in &skills {
            for x in &instances {
                let ok = rng.gen_bool(0.4);
                outcomes.insert((s.clone(), x.clone()), ok);
                m.record(s, x, Attempt::bare(ok)).unwrap();
            }
        }
        let universe: BTreeSet<_> = instances.iter().cloned().collect();
        let residual = m.residual_of(&universe, &skills);

        let mut oracle: BTreeSet<InstanceId> = universe.clone();
        for s in &skills {
            let failures: BTreeSet<InstanceId> = instances
                .iter()
                .filter(|x| !outcomes[&(s.clone(), (*x).clone())])
                .cloned()
                .collect();
            oracle = oracle.intersection(&failures).cloned().collect();
        }
        assert_eq!(residual.instance_ids, oracle);
    }

    #[test]
    fn residual_shrinks_monotonically_over_prefixes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let skills: Vec<SkillId> = (0..5).map(|i| sid(&format!("s{i}"))).collect();
        let instances: Vec<InstanceId> = (0..8).map(|i| iid(&format!("x{i}"))).collect();
        let mut m = OutcomeMatrix::new(skills.iter().cloned(), instances.iter().cloned());
        for s in &skills {
            for x in &instances {
                m.record(s, x, Attempt::bare(rng.gen_bool(0.3))).unwrap();
            }
        }
        let universe: BTreeSet<_> = instances.iter().cloned().collect();
        let mut previous = m.residual_of(&universe, &[]);
        for prefix_len in 1..=skills.len() {
            let current = m.residual_of(&universe, &skills[..prefix_len]);
            assert!(current.is_subset_of(&previous));
            previous = current;
        }
        // Order insensitivity: reversed list gives the same set.
        let reversed: Vec<_> = skills.iter().rev().cloned().collect();
        assert_eq!(
            m.residual_of(&universe, &skills).instance_ids,
            m.residual_of(&universe, &reversed).instance_ids
        );
    }

    #[test]
    fn any_success_is_generous_over_attempts() {
        let mut m = matrix(&["s1"], &["x1"]);
        m.record(&sid("s1"), &iid("x1"), Attempt::bare(false)).unwrap();
        m.record(&sid("s1"), &iid("x1"), Attempt::bare(true)).unwrap();
        let universe: BTreeSet<_> = [iid("x1")].into_iter().collect();
        let residual = m.residual_of(&universe, &[sid("s1")]);
        assert!(residual.is_empty());
    }

    #[test]
    fn pool_rejects_duplicates_and_roundtrips_json() {
        let a = Skill::seed("a", "prompt a").unwrap();
        let b = Skill::seed("b", "prompt b").unwrap();
        let dup = Skill::seed("a", "other").unwrap();
        assert_eq!(
            SkillPool::new(vec![a.clone(), dup]).unwrap_err(),
            DomainError::DuplicateSkillId(sid("a"))
        );
        let pool = SkillPool::new(vec![a, b]).unwrap();
        let json = pool.to_json();
        assert!(json.contains("\"k\": 2"));
        let back = SkillPool::from_json(&json).unwrap();
        assert_eq!(back, pool);
    }

    #[test]
    fn skill_validation_enforces_prompt_bounds() {
        assert!(matches!(
            Skill::seed("s", ""),
            Err(DomainError::EmptyPrompt(_))
        ));
        let long = "x".repeat(DEFAULT_MAX_PROMPT_LEN + 1);
        assert!(matches!(
            Skill::seed("s", long),
            Err(DomainError::PromptTooLong { .. })
        ));
        let ok = Skill::seed("s", "fine").unwrap();
        let next = ok.committed_update("finer".into());
        assert_eq!(next.version, 1);
        assert_eq!(next.parent_version, Some(0));
        assert_eq!(next.origin, SkillOrigin::Optimized);
        next.validate(DEFAULT_MAX_PROMPT_LEN).unwrap();
    }

    #[test]
    fn outcome_log_roundtrip() {
        let mut m = matrix(&["s1", "s2"], &["x1"]);
        m.record(
            &sid("s1"),
            &iid("x1"),
            Attempt {
                success: true,
                candidate_ref: Some("abc".into()),
                batch: Some(1),
                position: Some(2),
            },
        )
        .unwrap();
        m.record(&sid("s2"), &iid("x1"), Attempt::bare(false)).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let back = OutcomeMatrix::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.attempts(&sid("s1"), &iid("x1")), m.attempts(&sid("s1"), &iid("x1")));
        assert_eq!(back.attempts(&sid("s2"), &iid("x1")), m.attempts(&sid("s2"), &iid("x1")));
    }
}
