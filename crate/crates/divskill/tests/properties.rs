//! Generative property tests for the spec's cross-cutting invariants.

use std::collections::BTreeSet;

use divskill::domain::{Attempt, InstanceId, OutcomeMatrix, SkillId};
use divskill::exec::{fingerprint, results_match, Cell, ExecError, MatchPolicy, ResultTable};
use divskill::metrics::{pass_at_k, pass_curve};
use divskill::selection::{deduplicate, CandidateExecution};
use proptest::prelude::*;

fn cell_strategy() -> impl Strategy<Value = Cell> {
    prop_oneof![
        Just(Cell::Null),
        (-20i64..20).prop_map(Cell::Integer),
        (-3.0f64..3.0).prop_map(Cell::Decimal),
        "[a-c]{0,3}".prop_map(Cell::Text),
        Just(Cell::Text("NULL".into())),
    ]
}

fn table_strategy() -> impl Strategy<Value = ResultTable> {
    (1usize..4).prop_flat_map(|columns| {
        prop::collection::vec(prop::collection::vec(cell_strategy(), columns), 0..6).prop_map(
            move |rows| {
                ResultTable::new((0..columns).map(|i| format!("c{i}")).collect(), rows)
            },
        )
    })
}

proptest! {
    /// Fingerprint soundness under both row-order policies.
    #[test]
    fn fingerprint_equality_iff_results_match(
        a in table_strategy(),
        b in table_strategy(),
        order_sensitive in any::<bool>(),
    ) {
        let policy = MatchPolicy { row_order_sensitive: order_sensitive, ..MatchPolicy::default() };
        let matched = results_match(&a, &b, &policy);
        let prints_equal = fingerprint(&a, &policy) == fingerprint(&b, &policy);
        prop_assert_eq!(matched, prints_equal);
        // Reflexivity and symmetry of the match relation.
        prop_assert!(results_match(&a, &a, &policy));
        prop_assert_eq!(matched, results_match(&b, &a, &policy));
    }

    /// Pass@k curves are bounded and non-decreasing for any outcome vector.
    #[test]
    fn pass_curve_is_monotone(outcomes in prop::collection::vec(any::<bool>(), 1..20)) {
        let curve = pass_curve(&outcomes).unwrap();
        prop_assert!(curve.is_monotone());
        for k in 1..=outcomes.len() {
            let value = pass_at_k(&outcomes, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&value));
        }
        // k = K is exactly the any-success indicator.
        let any = outcomes.iter().any(|&ok| ok);
        let at_full = pass_at_k(&outcomes, outcomes.len()).unwrap();
        prop_assert_eq!(at_full, if any { 1.0 } else { 0.0 });
    }

    /// Dedup produces a partition: every candidate in exactly one class;
    /// each representative is its class's first member; errored classes
    /// never represent while a non-error class exists.
    #[test]
    fn dedup_is_a_partition(
        markers in prop::collection::vec(0u8..4, 1..9),
        errors in prop::collection::vec(any::<bool>(), 1..9),
    ) {
        let candidates: Vec<CandidateExecution> = markers
            .iter()
            .zip(errors.iter().cycle())
            .enumerate()
            .map(|(idx, (marker, errored))| CandidateExecution {
                skill_id: SkillId::new(format!("s{idx}")),
                sql: format!("q{idx}"),
                outcome: if *errored {
                    Err(ExecError::Syntax("x".into()))
                } else {
                    Ok(ResultTable::single_text("answer", &format!("m{marker}")))
                },
            })
            .collect();
        let total = candidates.len();
        let pool = deduplicate(InstanceId::new("x"), candidates, &MatchPolicy::default());
        let mut seen = BTreeSet::new();
        for class in &pool.classes {
            for &member in &class.members {
                prop_assert!(seen.insert(member), "candidate {} in two classes", member);
            }
            if class.errored {
                prop_assert_eq!(class.members.len(), 1);
            }
        }
        prop_assert_eq!(seen.len(), total);
        let has_ok = pool.classes.iter().any(|c| !c.errored);
        for &rep in &pool.representatives {
            let class = pool.classes.iter().find(|c| c.members[0] == rep).unwrap();
            prop_assert!(!class.errored);
        }
        prop_assert_eq!(pool.representatives.is_empty(), !has_ok);
    }

    /// Residual sets shrink monotonically over skill-list prefixes and are
    /// insensitive to skill order, for arbitrary outcome matrices.
    #[test]
    fn residuals_shrink_and_ignore_order(
        outcomes in prop::collection::vec(prop::collection::vec(any::<bool>(), 6), 1..5),
    ) {
        let skills: Vec<SkillId> = (0..outcomes.len()).map(|i| SkillId::new(format!("s{i}"))).collect();
        let instances: Vec<InstanceId> = (0..6).map(|i| InstanceId::new(format!("x{i}"))).collect();
        let mut matrix = OutcomeMatrix::new(skills.iter().cloned(), instances.iter().cloned());
        for (row, skill) in outcomes.iter().zip(&skills) {
            for (ok, instance) in row.iter().zip(&instances) {
                matrix.record(skill, instance, Attempt::bare(*ok)).unwrap();
            }
        }
        let universe: BTreeSet<InstanceId> = instances.iter().cloned().collect();
        let mut previous = matrix.residual_of(&universe, &[]);
        prop_assert_eq!(previous.len(), 6);
        for prefix in 1..=skills.len() {
            let current = matrix.residual_of(&universe, &skills[..prefix]);
            prop_assert!(current.is_subset_of(&previous));
            previous = current;
        }
        let mut reversed: Vec<SkillId> = skills.clone();
        reversed.reverse();
        prop_assert_eq!(
            matrix.residual_of(&universe, &skills).instance_ids,
            matrix.residual_of(&universe, &reversed).instance_ids
        );
    }
}
