//! Population-level Pass@K coverage objective over a matrix of per-skill
//! success probabilities, with greedy selection, exhaustive optimum, and the
//! (1 - 1/e) guarantee check.
//!
//! Generic over the probability scalar: `f64` for tolerance-based checks,
//! `BigRational` for exact 0/1 matrices.

use serde::Serialize;
use thiserror::Error;

use crate::metrics::binomial;
use crate::scalar::ProbScalar;

/// Default cap on the number of subsets brute force may enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// The greedy approximation bound 1 - 1/e.
pub fn greedy_bound() -> f64 {
    1.0 - (-1.0f64).exp()
}

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("matrix must have at least one skill and one instance")]
    Empty,
    #[error("row {0} has {1} entries, expected {2}")]
    RaggedRow(usize, usize, usize),
    #[error("probability out of [0,1] at skill {skill}, instance {instance}")]
    BadProbability { skill: usize, instance: usize },
    #[error("weights must be non-negative and sum to 1")]
    BadWeights,
    #[error("skill {0} is already in the subset")]
    AlreadyInSet(usize),
    #[error("k={k} exceeds the {max} available skills")]
    BadK { k: usize, max: usize },
    #[error("enumeration needs {needed} subsets, cap is {cap}")]
    TooLarge { needed: u128, cap: u128 },
}

/// Success probabilities p_s(x) indexed (skill, instance), with per-instance
/// probability masses standing in for the task distribution.
#[derive(Clone, Debug)]
pub struct PopulationMatrix<S> {
    p: Vec<Vec<S>>,
    weights: Vec<S>,
}

impl<S: ProbScalar> PopulationMatrix<S> {
    /// Uniform instance weights.
    pub fn new(p: Vec<Vec<S>>) -> Result<Self, CoverageError> {
        let instances = p.first().map(Vec::len).unwrap_or(0);
        if instances == 0 {
            return Err(CoverageError::Empty);
        }
        let weights = (0..instances)
            .map(|_| S::from_count_ratio(1, instances as u64))
            .collect();
        Self::with_weights(p, weights)
    }

    pub fn with_weights(p: Vec<Vec<S>>, weights: Vec<S>) -> Result<Self, CoverageError> {
        if p.is_empty() || p[0].is_empty() {
            return Err(CoverageError::Empty);
        }
        let instances = p[0].len();
        for (row_idx, row) in p.iter().enumerate() {
            if row.len() != instances {
                return Err(CoverageError::RaggedRow(row_idx, row.len(), instances));
            }
            for (col_idx, value) in row.iter().enumerate() {
                if *value < S::zero() || *value > S::one() {
                    return Err(CoverageError::BadProbability {
                        skill: row_idx,
                        instance: col_idx,
                    });
                }
            }
        }
        if weights.len() != instances {
            return Err(CoverageError::BadWeights);
        }
        let mut total = S::zero();
        for w in &weights {
            if *w < S::zero() {
                return Err(CoverageError::BadWeights);
            }
            total = total + w.clone();
        }
        let slack = S::comparison_slack();
        if total.clone() - S::one() > slack || S::one() - total > slack {
            return Err(CoverageError::BadWeights);
        }
        Ok(PopulationMatrix { p, weights })
    }

    pub fn num_skills(&self) -> usize {
        self.p.len()
    }

    pub fn num_instances(&self) -> usize {
        self.weights.len()
    }

    pub fn success_prob(&self, skill: usize, instance: usize) -> &S {
        &self.p[skill][instance]
    }

    pub fn weight(&self, instance: usize) -> &S {
        &self.weights[instance]
    }

    /// F(A) = sum_x w(x) * (1 - prod_{s in A} (1 - p_s(x))); F(empty) = 0.
    pub fn objective(&self, subset: &[usize]) -> S {
        let mut total = S::zero();
        for x in 0..self.num_instances() {
            let mut miss = S::one();
            for &s in subset {
                miss = miss * (S::one() - self.p[s][x].clone());
            }
            total = total + self.weights[x].clone() * (S::one() - miss);
        }
        total
    }

    /// Closed-form marginal gain of adding `skill` to `subset`:
    /// sum_x w(x) * p_s(x) * prod_{s' in subset} (1 - p_{s'}(x)).
    pub fn marginal_gain(&self, skill: usize, subset: &[usize]) -> Result<S, CoverageError> {
        if subset.contains(&skill) {
            return Err(CoverageError::AlreadyInSet(skill));
        }
        let mut total = S::zero();
        for x in 0..self.num_instances() {
            let mut miss = S::one();
            for &s in subset {
                miss = miss * (S::one() - self.p[s][x].clone());
            }
            total = total + self.weights[x].clone() * self.p[skill][x].clone() * miss;
        }
        Ok(total)
    }

    /// Greedy argmax over marginal gains; ties broken by lowest skill index.
    pub fn greedy_select(&self, k: usize) -> Result<Vec<usize>, CoverageError> {
        if k > self.num_skills() {
            return Err(CoverageError::BadK {
                k,
                max: self.num_skills(),
            });
        }
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut best: Option<(usize, S)> = None;
            for s in 0..self.num_skills() {
                if chosen.contains(&s) {
                    continue;
                }
                let gain = self
                    .marginal_gain(s, &chosen)
                    .expect("s is not in the chosen set");
                let better = match &best {
                    None => true,
                    Some((_, best_gain)) => gain > *best_gain,
                };
                if better {
                    best = Some((s, gain));
                }
            }
            let (s, _) = best.expect("k <= num_skills leaves a candidate");
            chosen.push(s);
        }
        Ok(chosen)
    }

    fn enumeration_size(&self, k: usize) -> u128 {
        (1..=k.min(self.num_skills()) as u64)
            .map(|j| binomial(self.num_skills() as u64, j))
            .sum()
    }

    /// Exhaustive maximum of F over all subsets of size <= k.
    /// Ties keep the first subset in (size-ascending, lexicographic) order.
    pub fn brute_force_best(
        &self,
        k: usize,
        cap: u128,
    ) -> Result<(Vec<usize>, S), CoverageError> {
        if k > self.num_skills() {
            return Err(CoverageError::BadK {
                k,
                max: self.num_skills(),
            });
        }
        let needed = self.enumeration_size(k);
        if needed > cap {
            return Err(CoverageError::TooLarge { needed, cap });
        }
        let n = self.num_skills();
        let mut best_subset: Vec<usize> = Vec::new();
        let mut best_value = S::zero();
        for size in 1..=k {
            let mut indices: Vec<usize> = (0..size).collect();
            loop {
                let value = self.objective(&indices);
                if value > best_value {
                    best_value = value;
                    best_subset = indices.clone();
                }
                if !next_combination(&mut indices, n) {
                    break;
                }
            }
        }
        Ok((best_subset, best_value))
    }

    /// Proposition-level check: greedy value vs the brute-force optimum.
    pub fn check_guarantee(&self, k: usize, cap: u128) -> Result<GuaranteeReport, CoverageError> {
        let greedy_set = self.greedy_select(k)?;
        let greedy_value = self.objective(&greedy_set).approx_f64();
        let (opt_set, opt) = self.brute_force_best(k, cap)?;
        let opt_value = opt.approx_f64();
        let ratio = if opt_value == 0.0 {
            1.0
        } else {
            greedy_value / opt_value
        };
        let holds = greedy_value >= greedy_bound() * opt_value - 1e-12;
        Ok(GuaranteeReport {
            greedy_set,
            opt_set,
            greedy_value,
            opt_value,
            ratio,
            holds,
        })
    }
}

/// Advance `indices` to the next lexicographic k-combination of `0..n`.
/// Returns false when exhausted.
pub(crate) fn next_combination(indices: &mut [usize], n: usize) -> bool {
    let k = indices.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if indices[i] != i + n - k {
            indices[i] += 1;
            for j in i + 1..k {
                indices[j] = indices[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Outcome of one guarantee check.
#[derive(Clone, Debug, Serialize)]
pub struct GuaranteeReport {
    pub greedy_set: Vec<usize>,
    pub opt_set: Vec<usize>,
    pub greedy_value: f64,
    pub opt_value: f64,
    pub ratio: f64,
    pub holds: bool,
}
