//! Evaluation statistics: empirical success rates, Pass@k curves from
//! finite candidate pools, and selected accuracy.
//!
//! Pass@k uses the closed form `1 - C(f,k)/C(K,k)` (f = failed candidates),
//! which equals the average of the at-least-one-success indicator over all
//! size-k candidate subsets. For `K <= 16` it is evaluated in exact rational
//! arithmetic so estimator-vs-enumeration tests can compare exactly.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{InstanceId, OutcomeMatrix, ResidualSet, SkillId};
use crate::scalar::ProbScalar;

/// Candidate-pool sizes up to this bound get exact rational Pass@k.
pub const EXACT_PASS_K_LIMIT: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty residual set")]
    EmptyResidual,
    #[error("k={k} outside [1, {max}]")]
    BadK { k: usize, max: usize },
    #[error("instance '{0}' has no selection")]
    MissingSelection(InstanceId),
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("instances disagree on candidate count: {0} vs {1}")]
    RaggedCandidates(usize, usize),
}

/// Mean over the residual of per-instance success ratios
/// (successes / attempts for the given skill).
///
/// Unattempted instances contribute zero and log a warning.
pub fn empirical_success_rate<S: ProbScalar>(
    matrix: &OutcomeMatrix,
    skill: &SkillId,
    residual: &ResidualSet,
) -> Result<S, MetricsError> {
    if residual.is_empty() {
        return Err(MetricsError::EmptyResidual);
    }
    let mut sum = S::zero();
    for instance in &residual.instance_ids {
        let attempts = matrix.attempts(skill, instance);
        if attempts.is_empty() {
            log::warn!("empirical_success_rate: ({skill}, {instance}) unattempted; counted as 0");
            continue;
        }
        let successes = attempts.iter().filter(|a| a.success).count() as u64;
        sum = sum + S::from_count_ratio(successes, attempts.len() as u64);
    }
    let denom = S::from_count_ratio(residual.len() as u64, 1);
    Ok(sum / denom)
}

/// C(n, k) in u128 via the multiplicative formula (exact at every step).
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 1..=k {
        result = result * u128::from(n - k + i) / u128::from(i);
    }
    result
}

/// Exact Pass@k for one instance's candidate outcomes.
pub fn pass_at_k_rational(outcomes: &[bool], k: usize) -> Result<Ratio<u128>, MetricsError> {
    let total = outcomes.len();
    if k == 0 || k > total {
        return Err(MetricsError::BadK { k, max: total });
    }
    let failures = outcomes.iter().filter(|&&ok| !ok).count() as u64;
    let miss = Ratio::new(binomial(failures, k as u64), binomial(total as u64, k as u64));
    Ok(Ratio::from_integer(1) - miss)
}

/// Pass@k as a float; exact-rational path for pools up to
/// [`EXACT_PASS_K_LIMIT`] candidates, running-product form above.
pub fn pass_at_k(outcomes: &[bool], k: usize) -> Result<f64, MetricsError> {
    let total = outcomes.len();
    if k == 0 || k > total {
        return Err(MetricsError::BadK { k, max: total });
    }
    if total <= EXACT_PASS_K_LIMIT {
        let exact = pass_at_k_rational(outcomes, k)?;
        return Ok(*exact.numer() as f64 / *exact.denom() as f64);
    }
    let failures = outcomes.iter().filter(|&&ok| !ok).count();
    if failures < k {
        return Ok(1.0);
    }
    let mut miss = 1.0;
    for i in 1..=k {
        miss *= (failures - k + i) as f64 / (total - k + i) as f64;
    }
    Ok(1.0 - miss)
}

/// Pass@k for k = 1..K; non-decreasing in k by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassKCurve {
    pub values: BTreeMap<usize, f64>,
}

impl PassKCurve {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.values.get(&k).copied()
    }

    pub fn max_k(&self) -> usize {
        self.values.keys().max().copied().unwrap_or(0)
    }

    pub fn is_monotone(&self) -> bool {
        self.values
            .values()
            .zip(self.values.values().skip(1))
            .all(|(a, b)| b + 1e-12 >= *a)
    }
}

/// Curve for a single instance's candidate outcomes.
pub fn pass_curve(outcomes: &[bool]) -> Result<PassKCurve, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let mut values = BTreeMap::new();
    for k in 1..=outcomes.len() {
        values.insert(k, pass_at_k(outcomes, k)?);
    }
    Ok(PassKCurve { values })
}

/// Dataset-level curve: mean over instances of the per-instance Pass@k.
/// All instances must expose the same candidate count.
pub fn dataset_pass_curve(per_instance: &[Vec<bool>]) -> Result<PassKCurve, MetricsError> {
    if per_instance.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let width = per_instance[0].len();
    for row in per_instance {
        if row.len() != width {
            return Err(MetricsError::RaggedCandidates(width, row.len()));
        }
    }
    let mut values = BTreeMap::new();
    for k in 1..=width {
        let mean = per_instance
            .iter()
            .map(|row| pass_at_k(row, k))
            .sum::<Result<f64, _>>()?
            / per_instance.len() as f64;
        values.insert(k, mean);
    }
    Ok(PassKCurve { values })
}

/// Dataset pass@1: mean over instances of the per-instance mean candidate
/// success (equivalently Pass@1 of the curve).
pub fn mean_pass1(per_instance: &[Vec<bool>]) -> Result<f64, MetricsError> {
    if per_instance.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let mut sum = 0.0;
    for row in per_instance {
        if row.is_empty() {
            return Err(MetricsError::NoInstances);
        }
        sum += row.iter().filter(|&&ok| ok).count() as f64 / row.len() as f64;
    }
    Ok(sum / per_instance.len() as f64)
}

/// Standard deviation of the per-instance mean candidate success.
pub fn pass1_std_dev(per_instance: &[Vec<bool>]) -> Result<f64, MetricsError> {
    let mean = mean_pass1(per_instance)?;
    let n = per_instance.len() as f64;
    let variance = per_instance
        .iter()
        .map(|row| {
            let p = row.iter().filter(|&&ok| ok).count() as f64 / row.len() as f64;
            (p - mean).powi(2)
        })
        .sum::<f64>()
        / n;
    Ok(variance.sqrt())
}

/// First-candidate pass@1 (counts only the first candidate per instance).
pub fn first_candidate_pass1(per_instance: &[Vec<bool>]) -> Result<f64, MetricsError> {
    if per_instance.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let mut hits = 0usize;
    for row in per_instance {
        if row.is_empty() {
            return Err(MetricsError::NoInstances);
        }
        if row[0] {
            hits += 1;
        }
    }
    Ok(hits as f64 / per_instance.len() as f64)
}

/// Fraction of instances whose selected candidate's execution verdict is
/// correct. Every instance in the universe needs exactly one verdict.
pub fn selected_accuracy(
    verdicts: &BTreeMap<InstanceId, bool>,
    universe: &[InstanceId],
) -> Result<f64, MetricsError> {
    if universe.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let mut correct = 0usize;
    for id in universe {
        match verdicts.get(id) {
            Some(true) => correct += 1,
            Some(false) => {}
            None => return Err(MetricsError::MissingSelection(id.clone())),
        }
    }
    Ok(correct as f64 / universe.len() as f64)
}

/// Per-instance block of the metrics report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerInstanceMetrics {
    pub instance_id: InstanceId,
    pub candidate_successes: Vec<bool>,
    pub selected_correct: Option<bool>,
}

/// Emitted JSON report: pass curve, selected accuracy, per-instance detail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pass_curve: BTreeMap<usize, f64>,
    pub selected_accuracy: f64,
    pub pass1_mean: f64,
    pub pass1_std_dev: f64,
    pub pass1_first_candidate: f64,
    pub per_instance: Vec<PerInstanceMetrics>,
}

pub fn build_report(
    per_instance: &[(InstanceId, Vec<bool>, Option<bool>)],
) -> Result<MetricsReport, MetricsError> {
    let rows: Vec<Vec<bool>> = per_instance.iter().map(|(_, v, _)| v.clone()).collect();
    let curve = dataset_pass_curve(&rows)?;
    let universe: Vec<InstanceId> = per_instance.iter().map(|(id, _, _)| id.clone()).collect();
    let verdicts: BTreeMap<InstanceId, bool> = per_instance
        .iter()
        .filter_map(|(id, _, sel)| sel.map(|v| (id.clone(), v)))
        .collect();
    let selected = selected_accuracy(&verdicts, &universe)?;
    Ok(MetricsReport {
        pass_curve: curve.values,
        selected_accuracy: selected,
        pass1_mean: mean_pass1(&rows)?,
        pass1_std_dev: pass1_std_dev(&rows)?,
        pass1_first_candidate: first_candidate_pass1(&rows)?,
        per_instance: per_instance
            .iter()
            .map(|(id, v, sel)| PerInstanceMetrics {
                instance_id: id.clone(),
                candidate_successes: v.clone(),
                selected_correct: *sel,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Attempt, OutcomeMatrix};
    use num_rational::BigRational;
    use std::collections::BTreeSet;

    fn sid(s: &str) -> SkillId {
        SkillId::new(s)
    }

    fn iid(s: &str) -> InstanceId {
        InstanceId::new(s)
    }

    /// Independent oracle: average of the at-least-one-success indicator
    /// over every size-k subset, by explicit enumeration.
    fn pass_at_k_by_enumeration(outcomes: &[bool], k: usize) -> Ratio<u128> {
        let n = outcomes.len();
        let mut subsets: u128 = 0;
        let mut hits: u128 = 0;
        let mut indices: Vec<usize> = (0..k).collect();
        loop {
            subsets += 1;
            if indices.iter().any(|&i| outcomes[i]) {
                hits += 1;
            }
            // Advance to the next k-combination in lexicographic order.
            let mut pos = k;
            loop {
                if pos == 0 {
                    return Ratio::new(hits, subsets);
                }
                pos -= 1;
                if indices[pos] != pos + n - k {
                    break;
                }
            }
            indices[pos] += 1;
            for later in pos + 1..k {
                indices[later] = indices[later - 1] + 1;
            }
        }
    }

    #[test]
    fn closed_form_matches_enumeration_k8_f6_k2() {
        // K=8, f=6, k=2 → 1 - 15/28 = 13/28.
        let outcomes = [true, true, false, false, false, false, false, false];
        let exact = pass_at_k_rational(&outcomes, 2).unwrap();
        assert_eq!(exact, Ratio::new(13, 28));
        assert_eq!(pass_at_k_by_enumeration(&outcomes, 2), Ratio::new(13, 28));
        let float = pass_at_k(&outcomes, 2).unwrap();
        assert!((float - 13.0 / 28.0).abs() < 1e-15);
    }

    #[test]
    fn all_failures_give_zero_for_every_k() {
        let outcomes = [false; 8];
        for k in 1..=8 {
            assert_eq!(pass_at_k_rational(&outcomes, k).unwrap(), Ratio::from_integer(0));
        }
    }

    #[test]
    fn k_equals_pool_size_is_any_success() {
        let some = [false, false, true, false];
        assert_eq!(pass_at_k_rational(&some, 4).unwrap(), Ratio::from_integer(1));
        let none = [false; 4];
        assert_eq!(pass_at_k_rational(&none, 4).unwrap(), Ratio::from_integer(0));
    }

    #[test]
    fn bad_k_is_rejected() {
        let outcomes = [true, false];
        assert_eq!(
            pass_at_k(&outcomes, 0).unwrap_err(),
            MetricsError::BadK { k: 0, max: 2 }
        );
        assert_eq!(
            pass_at_k(&outcomes, 3).unwrap_err(),
            MetricsError::BadK { k: 3, max: 2 }
        );
    }

    #[test]
    fn closed_form_equals_enumeration_exhaustively_k_up_to_8() {
        for total in 1..=8usize {
            for failures in 0..=total {
                let outcomes: Vec<bool> = (0..total).map(|i| i >= failures).collect();
                for k in 1..=total {
                    let closed = pass_at_k_rational(&outcomes, k).unwrap();
                    let enumerated = pass_at_k_by_enumeration(&outcomes, k);
                    assert_eq!(closed, enumerated, "K={total} f={failures} k={k}");
                }
            }
        }
    }

    #[test]
    fn float_path_agrees_with_rational_path_above_limit() {
        let mut outcomes = vec![false; 24];
        for slot in [3usize, 11, 17] {
            outcomes[slot] = true;
        }
        for k in 1..=24 {
            let float = pass_at_k(&outcomes, k).unwrap();
            let exact = pass_at_k_rational(&outcomes, k).unwrap();
            let exact_f = *exact.numer() as f64 / *exact.denom() as f64;
            assert!((float - exact_f).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn curve_is_monotone_nondecreasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..=12);
            let outcomes: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let curve = pass_curve(&outcomes).unwrap();
            assert!(curve.is_monotone());
            assert!(curve.values.values().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empirical_rate_direct_fraction() {
        let mut m = OutcomeMatrix::new(
            [sid("s")],
            (0..4).map(|i| iid(&format!("x{i}"))),
        );
        for (i, ok) in [true, true, false, false].iter().enumerate() {
            m.record(&sid("s"), &iid(&format!("x{i}")), Attempt::bare(*ok)).unwrap();
        }
        let residual = ResidualSet::new(
            (0..4).map(|i| iid(&format!("x{i}"))).collect::<BTreeSet<_>>(),
            0,
            0,
        );
        let rate: f64 = empirical_success_rate(&m, &sid("s"), &residual).unwrap();
        assert_eq!(rate, 0.5);
    }

    #[test]
    fn empirical_rate_averages_per_instance_ratios() {
        // Ratios {1/2, 1/1, 0/3} → (0.5 + 1 + 0) / 3 = 0.5, hand-evaluated.
        let mut m = OutcomeMatrix::new([sid("s")], ["x1", "x2", "x3"].map(iid));
        for ok in [true, false] {
            m.record(&sid("s"), &iid("x1"), Attempt::bare(ok)).unwrap();
        }
        m.record(&sid("s"), &iid("x2"), Attempt::bare(true)).unwrap();
        for _ in 0..3 {
            m.record(&sid("s"), &iid("x3"), Attempt::bare(false)).unwrap();
        }
        let residual =
            ResidualSet::new(["x1", "x2", "x3"].map(iid).into_iter().collect(), 0, 0);
        let exact: BigRational = empirical_success_rate(&m, &sid("s"), &residual).unwrap();
        assert_eq!(exact, BigRational::from_count_ratio(1, 2));
        let float: f64 = empirical_success_rate(&m, &sid("s"), &residual).unwrap();
        assert_eq!(float, 0.5);
    }

    #[test]
    fn empirical_rate_all_unsolved_is_zero_and_empty_residual_errors() {
        let mut m = OutcomeMatrix::new([sid("s")], ["x1"].map(iid));
        m.record(&sid("s"), &iid("x1"), Attempt::bare(false)).unwrap();
        let residual = ResidualSet::new(["x1"].map(iid).into_iter().collect(), 0, 0);
        let rate: f64 = empirical_success_rate(&m, &sid("s"), &residual).unwrap();
        assert_eq!(rate, 0.0);
        let empty = ResidualSet::new(BTreeSet::new(), 0, 0);
        assert_eq!(
            empirical_success_rate::<f64>(&m, &sid("s"), &empty).unwrap_err(),
            MetricsError::EmptyResidual
        );
    }

    #[test]
    fn selected_accuracy_basic_and_guards() {
        let universe: Vec<InstanceId> = ["a", "b", "c"].map(iid).to_vec();
        let verdicts: BTreeMap<InstanceId, bool> =
            [(iid("a"), true), (iid("b"), true), (iid("c"), false)]
                .into_iter()
                .collect();
        let acc = selected_accuracy(&verdicts, &universe).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);

        assert_eq!(
            selected_accuracy(&verdicts, &[]).unwrap_err(),
            MetricsError::NoInstances
        );
        let partial: BTreeMap<InstanceId, bool> = [(iid("a"), true)].into_iter().collect();
        assert_eq!(
            selected_accuracy(&partial, &universe).unwrap_err(),
            MetricsError::MissingSelection(iid("b"))
        );
    }

    #[test]
    fn selected_accuracy_never_exceeds_oracle_pass_at_k() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let instances = rng.gen_range(1..=10);
            let k = rng.gen_range(1..=6);
            let mut rows = Vec::new();
            let mut verdicts = BTreeMap::new();
            let mut universe = Vec::new();
            for i in 0..instances {
                let id = iid(&format!("x{i}"));
                let outcomes: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.4)).collect();
                // Any selector: pick a random candidate's verdict.
                let pick = rng.gen_range(0..k);
                verdicts.insert(id.clone(), outcomes[pick]);
                universe.push(id);
                rows.push(outcomes);
            }
            let oracle = dataset_pass_curve(&rows).unwrap().get(k).unwrap();
            let selected = selected_accuracy(&verdicts, &universe).unwrap();
            assert!(selected <= oracle + 1e-12);
        }
    }

    #[test]
    fn pass1_variants() {
        let rows = vec![vec![true, false], vec![false, false]];
        assert_eq!(mean_pass1(&rows).unwrap(), 0.25);
        assert_eq!(first_candidate_pass1(&rows).unwrap(), 0.5);
        assert!((pass1_std_dev(&rows).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn report_serializes_with_expected_shape() {
        let report = build_report(&[
            (iid("a"), vec![true, false], Some(true)),
            (iid("b"), vec![false, false], Some(false)),
        ])
        .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["pass_curve"]["1"].is_number());
        assert!(json["selected_accuracy"].is_number());
        assert_eq!(json["per_instance"].as_array().unwrap().len(), 2);
    }
}
