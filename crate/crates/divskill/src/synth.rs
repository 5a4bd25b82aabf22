//! Synthetic instance families for desk-scale runs: each instance requires
//! a capability subset, each skill covers the capabilities tagged in its
//! prompt, and the analytic success probability is known exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{instance_requirements, synthetic_gold, SyntheticSkill};
use crate::coverage::{CoverageError, PopulationMatrix};
use crate::domain::{Dialect, GoldSpec, Instance, InstanceId, Skill, SkillPool};

/// Parameters of a generated family.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub capabilities: Vec<String>,
    pub train: usize,
    pub holdout: usize,
    /// Required capabilities per instance (cycled over the alphabet).
    pub reqs_per_instance: usize,
    pub seed: u64,
}

fn make_instance(id: String, requirements: &[String]) -> Instance {
    let tags: Vec<String> = requirements.iter().map(|r| format!("req:{r}")).collect();
    let gold = synthetic_gold(&id);
    Instance {
        instance_id: InstanceId::new(id.clone()),
        question: format!("Synthetic task {id}: satisfy {}", tags.join(" ")),
        db: String::new(),
        gold: GoldSpec::Table(gold),
        dialect: Dialect::Synthetic,
    }
}

/// Balanced train/holdout split: instance i requires `reqs_per_instance`
/// capabilities starting at position i mod |alphabet|, and each split is
/// shuffled with the given seed.
pub fn generate_instances(spec: &SynthSpec) -> (Vec<Instance>, Vec<Instance>) {
    assert!(!spec.capabilities.is_empty(), "capability alphabet is empty");
    let reqs = spec.reqs_per_instance.max(1).min(spec.capabilities.len());
    let build = |prefix: &str, count: usize, seed: u64| {
        let mut instances: Vec<Instance> = (0..count)
            .map(|i| {
                let requirements: Vec<String> = (0..reqs)
                    .map(|j| spec.capabilities[(i + j) % spec.capabilities.len()].clone())
                    .collect();
                make_instance(format!("{prefix}{i:04}"), &requirements)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        instances.shuffle(&mut rng);
        instances
    };
    (
        build("train_", spec.train, spec.seed),
        build("holdout_", spec.holdout, spec.seed.wrapping_add(1)),
    )
}

/// K seed skills sharing one base capability, distinct ids.
pub fn seed_pool(k: usize, base_capability: &str) -> SkillPool {
    let skills: Vec<Skill> = (1..=k)
        .map(|i| {
            Skill::seed(
                format!("skill_{i}"),
                format!("Base strategy: read the task, then answer. cap:{base_capability}"),
            )
            .expect("seed prompt is valid")
        })
        .collect();
    SkillPool::new(skills).expect("ids are distinct")
}

/// The analytic population matrix of a pool over a synthetic instance set:
/// p = 1 - noise when the skill's capabilities cover the instance's
/// requirements, else 0.
pub fn population_of(
    pool: &SkillPool,
    instances: &[Instance],
    default_noise: f64,
) -> Result<PopulationMatrix<f64>, CoverageError> {
    let rows: Vec<Vec<f64>> = pool
        .skills()
        .iter()
        .map(|skill| {
            let synthetic = SyntheticSkill::parse(&skill.prompt, default_noise);
            instances
                .iter()
                .map(|instance| {
                    let requirements = instance_requirements(instance);
                    if requirements.is_subset(&synthetic.capabilities) {
                        1.0 - synthetic.noise
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    PopulationMatrix::new(rows)
}
