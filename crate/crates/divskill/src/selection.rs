//! Inference-time selection: execution-output deduplication into
//! equivalence classes, then an exhaustive round-robin pairwise tournament
//! in which every pair is judged twice with swapped presentation order.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::domain::{InstanceId, SkillId};
use crate::exec::{
    fingerprint, result_preview, ExecError, Fingerprint, MatchPolicy, ResultTable,
};

/// One executed candidate entering selection, in skill order.
#[derive(Clone, Debug)]
pub struct CandidateExecution {
    pub skill_id: SkillId,
    pub sql: String,
    pub outcome: Result<ResultTable, ExecError>,
}

/// A group of candidates with identical execution output. Errored
/// candidates form singleton classes.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateClass {
    pub fingerprint: Option<Fingerprint>,
    pub members: Vec<usize>,
    pub errored: bool,
}

/// Per-instance candidates partitioned by execution fingerprint.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    pub instance_id: InstanceId,
    pub candidates: Vec<CandidateExecution>,
    pub classes: Vec<CandidateClass>,
    /// One candidate index per non-error class (lowest skill index in the
    /// class). Empty when every candidate errored.
    pub representatives: Vec<usize>,
}

impl CandidatePool {
    /// Number of classes entering the tournament (G).
    pub fn class_count(&self) -> usize {
        self.representatives.len()
    }

    pub fn all_errored(&self) -> bool {
        self.representatives.is_empty()
    }
}

/// Partition candidates by execution-output equality.
///
/// Classes are ordered by first appearance; each class's representative is
/// its first (lowest skill index) member. Errored candidates are excluded
/// from representation whenever at least one candidate executed.
pub fn deduplicate(
    instance_id: InstanceId,
    candidates: Vec<CandidateExecution>,
    policy: &MatchPolicy,
) -> CandidatePool {
    let mut classes: Vec<CandidateClass> = Vec::new();
    let mut by_fingerprint: BTreeMap<Fingerprint, usize> = BTreeMap::new();
    for (index, candidate) in candidates.iter().enumerate() {
        match &candidate.outcome {
            Ok(table) => {
                let print = fingerprint(table, policy);
                match by_fingerprint.get(&print) {
                    Some(&class_idx) => classes[class_idx].members.push(index),
                    None => {
                        by_fingerprint.insert(print.clone(), classes.len());
                        classes.push(CandidateClass {
                            fingerprint: Some(print),
                            members: vec![index],
                            errored: false,
                        });
                    }
                }
            }
            Err(_) => classes.push(CandidateClass {
                fingerprint: None,
                members: vec![index],
                errored: true,
            }),
        }
    }
    let representatives: Vec<usize> = classes
        .iter()
        .filter(|class| !class.errored)
        .map(|class| class.members[0])
        .collect();
    CandidatePool {
        instance_id,
        candidates,
        classes,
        representatives,
    }
}

/// Presentation side picked by a judge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// What a judge sees of one candidate.
pub struct CandidateView<'a> {
    pub sql: &'a str,
    pub preview: String,
    pub fingerprint: Option<Fingerprint>,
}

pub struct JudgeContext<'a> {
    pub question: &'a str,
    pub schema_summary: &'a str,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge backend failed: {0}")]
    Backend(String),
}

/// Total pairwise comparator: must always return a side. Implementations may
/// be stochastic; abstaining implementations must coin-flip internally.
pub trait Judge {
    fn compare(
        &self,
        context: &JudgeContext,
        a: &CandidateView,
        b: &CandidateView,
    ) -> Result<Side, JudgeError>;
}

/// Knows the gold fingerprint; prefers the matching candidate. When neither
/// or both match it prefers the first presented, which the swapped-order
/// protocol neutralizes into the deterministic tie-break.
pub struct OracleJudge {
    pub gold: Fingerprint,
}

impl Judge for OracleJudge {
    fn compare(
        &self,
        _context: &JudgeContext,
        a: &CandidateView,
        b: &CandidateView,
    ) -> Result<Side, JudgeError> {
        let a_correct = a.fingerprint.as_ref() == Some(&self.gold);
        let b_correct = b.fingerprint.as_ref() == Some(&self.gold);
        Ok(match (a_correct, b_correct) {
            (true, false) => Side::A,
            (false, true) => Side::B,
            _ => Side::A,
        })
    }
}

/// Verdict depends only on presentation position; used to verify the
/// order-swap protocol neutralizes position bias.
pub struct PositionBiasedJudge;

impl Judge for PositionBiasedJudge {
    fn compare(
        &self,
        _context: &JudgeContext,
        _a: &CandidateView,
        _b: &CandidateView,
    ) -> Result<Side, JudgeError> {
        Ok(Side::A)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("pool has no candidates")]
    EmptyPool,
    #[error("no representatives to run a tournament over")]
    NoRepresentatives,
}

/// Tournament outcome over class representatives.
#[derive(Clone, Debug, Serialize)]
pub struct TournamentOutcome {
    /// Winning candidate index into the pool.
    pub winner: usize,
    /// Wins per representative candidate index.
    pub win_counts: BTreeMap<usize, u32>,
    pub judgments: u32,
    pub forfeits: u32,
}

const JUDGE_RETRIES: u32 = 2;

fn judged(
    judge: &dyn Judge,
    context: &JudgeContext,
    a: &CandidateView,
    b: &CandidateView,
) -> Option<Side> {
    for attempt in 0..=JUDGE_RETRIES {
        match judge.compare(context, a, b) {
            Ok(side) => return Some(side),
            Err(error) => {
                log::warn!("judge failure (attempt {}): {error}", attempt + 1);
            }
        }
    }
    None
}

fn view_of<'a>(candidate: &'a CandidateExecution, policy: &MatchPolicy) -> CandidateView<'a> {
    match &candidate.outcome {
        Ok(table) => CandidateView {
            sql: &candidate.sql,
            preview: result_preview(table, 20, 200),
            fingerprint: Some(fingerprint(table, policy)),
        },
        Err(error) => CandidateView {
            sql: &candidate.sql,
            preview: format!("error: {error}"),
            fingerprint: None,
        },
    }
}

/// Round-robin over all unordered representative pairs, each judged twice
/// with swapped order; one win per judgment. A judgment that still fails
/// after retries is forfeited symmetrically (no win either side). The
/// candidate with the most wins is returned, ties broken by lowest skill
/// index (= lowest candidate index).
pub fn run_tournament(
    pool: &CandidatePool,
    judge: &dyn Judge,
    context: &JudgeContext,
    policy: &MatchPolicy,
) -> Result<TournamentOutcome, SelectionError> {
    let reps = &pool.representatives;
    if reps.is_empty() {
        return Err(SelectionError::NoRepresentatives);
    }
    let mut win_counts: BTreeMap<usize, u32> = reps.iter().map(|&r| (r, 0)).collect();
    let mut judgments = 0u32;
    let mut forfeits = 0u32;
    if reps.len() > 1 {
        for i in 0..reps.len() {
            for j in i + 1..reps.len() {
                let first = view_of(&pool.candidates[reps[i]], policy);
                let second = view_of(&pool.candidates[reps[j]], policy);
                for (left_rep, right_rep, left_view, right_view) in [
                    (reps[i], reps[j], &first, &second),
                    (reps[j], reps[i], &second, &first),
                ] {
                    match judged(judge, context, left_view, right_view) {
                        Some(Side::A) => {
                            judgments += 1;
                            *win_counts.get_mut(&left_rep).unwrap() += 1;
                        }
                        Some(Side::B) => {
                            judgments += 1;
                            *win_counts.get_mut(&right_rep).unwrap() += 1;
                        }
                        None => forfeits += 1,
                    }
                }
            }
        }
    }
    // Max wins; BTreeMap iterates by ascending candidate index, so strict
    // improvement keeps the lowest index among ties.
    let mut winner = reps[0];
    let mut best = 0u32;
    let mut first = true;
    for (&candidate, &wins) in &win_counts {
        if first || wins > best {
            winner = candidate;
            best = wins;
            first = false;
        }
    }
    Ok(TournamentOutcome {
        winner,
        win_counts,
        judgments,
        forfeits,
    })
}

/// Final selection for one instance.
#[derive(Clone, Debug, Serialize)]
pub struct SelectionOutcome {
    pub instance_id: InstanceId,
    pub winner_skill_id: SkillId,
    pub sql: String,
    /// Equivalence-class count G that entered the tournament.
    pub g: usize,
    /// Wins per skill id.
    pub win_counts: BTreeMap<SkillId, u32>,
    pub judgments: u32,
    /// Set when every candidate errored and the lowest-index candidate was
    /// passed through.
    pub all_candidates_errored: bool,
}

/// Deduplicate then run the tournament; the winning representative's SQL is
/// the final answer. When every candidate errored, the lowest-index
/// candidate's SQL is returned with a diagnostic flag.
pub fn select(
    instance_id: InstanceId,
    candidates: Vec<CandidateExecution>,
    judge: &dyn Judge,
    context: &JudgeContext,
    policy: &MatchPolicy,
) -> Result<SelectionOutcome, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let pool = deduplicate(instance_id.clone(), candidates, policy);
    if pool.all_errored() {
        let fallback = &pool.candidates[0];
        return Ok(SelectionOutcome {
            instance_id,
            winner_skill_id: fallback.skill_id.clone(),
            sql: fallback.sql.clone(),
            g: 0,
            win_counts: BTreeMap::new(),
            judgments: 0,
            all_candidates_errored: true,
        });
    }
    let outcome = run_tournament(&pool, judge, context, policy)?;
    let winner = &pool.candidates[outcome.winner];
    Ok(SelectionOutcome {
        instance_id,
        winner_skill_id: winner.skill_id.clone(),
        sql: winner.sql.clone(),
        g: pool.class_count(),
        win_counts: outcome
            .win_counts
            .iter()
            .map(|(&idx, &wins)| (pool.candidates[idx].skill_id.clone(), wins))
            .collect(),
        judgments: outcome.judgments,
        all_candidates_errored: false,
    })
}
