use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, TaskError, TaskInstance};

/// How subsets `κ` are drawn from a task's `train ∪ val` pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubsetStrategy {
    /// Every subset is the training set itself.
    TrainOnly,
    /// `⌊pool/2⌋` points without replacement.
    RandomHalf {
        #[serde(default)]
        class_balanced: bool,
    },
    /// `m` points without replacement.
    RandomM {
        m: usize,
        #[serde(default)]
        class_balanced: bool,
    },
}

impl Default for SubsetStrategy {
    fn default() -> Self {
        SubsetStrategy::TrainOnly
    }
}

impl SubsetStrategy {
    pub fn is_train_only(&self) -> bool {
        matches!(self, SubsetStrategy::TrainOnly)
    }
}

/// `k` subsets of the pooled task data. Rows keep pool order.
pub fn sample_subsets(
    task: &TaskInstance,
    strategy: &SubsetStrategy,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Dataset>, TaskError> {
    if k == 0 {
        return Err(TaskError::Subset("K must be at least 1".into()));
    }
    let (m, balanced) = match *strategy {
        SubsetStrategy::TrainOnly => return Ok(vec![task.train.clone(); k]),
        SubsetStrategy::RandomHalf { class_balanced } => ((task.train.len() + task.val.len()) / 2, class_balanced),
        SubsetStrategy::RandomM { m, class_balanced } => (m, class_balanced),
    };
    let pool = task.pool();
    if m > pool.len() {
        return Err(TaskError::SubsetTooLarge { m, pool: pool.len() });
    }
    if m == 0 {
        return Err(TaskError::Subset("subset size must be at least 1".into()));
    }
    (0..k)
        .map(|_| {
            let mut picks = if balanced {
                balanced_pick(&pool, m, rng)?
            } else {
                index::sample(rng, pool.len(), m).into_vec()
            };
            picks.sort_unstable();
            Ok(pool.select(&picks))
        })
        .collect()
}

/// Equal per-class counts (the first `m mod N` classes get one extra),
/// each capped by what the class has.
fn balanced_pick(pool: &Dataset, m: usize, rng: &mut impl Rng) -> Result<Vec<usize>, TaskError> {
    let (Some(labels), Some(n_way)) = (pool.labels(), pool.n_way()) else {
        return Err(TaskError::Subset("class-balanced sampling needs class labels".into()));
    };
    let mut picks = Vec::with_capacity(m);
    for class in 0..n_way {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let want = (m / n_way + usize::from(class < m % n_way)).min(members.len());
        picks.extend(index::sample(rng, members.len(), want).into_iter().map(|j| members[j]));
    }
    Ok(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::tasks::{sample_task, BlobsConfig, TaskDistributionConfig};
    use proptest::prelude::*;

    fn sine_task(seed: u64) -> TaskInstance {
        sample_task(&TaskDistributionConfig::sinusoid(10, 30), &mut stream(seed, Purpose::Tasks, 0)).unwrap()
    }

    #[test]
    fn train_only_returns_train() {
        let task = sine_task(0);
        let subs = sample_subsets(&task, &SubsetStrategy::TrainOnly, 1, &mut stream(0, Purpose::Subsets, 0)).unwrap();
        assert_eq!(subs, vec![task.train.clone()]);
    }

    #[test]
    fn full_size_is_whole_pool() {
        let task = sine_task(1);
        let s = SubsetStrategy::RandomM { m: 40, class_balanced: false };
        let subs = sample_subsets(&task, &s, 2, &mut stream(0, Purpose::Subsets, 0)).unwrap();
        assert_eq!(subs[0], task.pool());
    }

    #[test]
    fn oversized_and_zero_k_rejected() {
        let task = sine_task(2);
        let s = SubsetStrategy::RandomM { m: 41, class_balanced: false };
        assert!(matches!(
            sample_subsets(&task, &s, 1, &mut stream(0, Purpose::Subsets, 0)),
            Err(TaskError::SubsetTooLarge { m: 41, pool: 40 })
        ));
        assert!(sample_subsets(&task, &SubsetStrategy::TrainOnly, 0, &mut stream(0, Purpose::Subsets, 0)).is_err());
    }

    #[test]
    fn random_half_size() {
        let task = sine_task(3);
        let s = SubsetStrategy::RandomHalf { class_balanced: false };
        for sub in sample_subsets(&task, &s, 3, &mut stream(0, Purpose::Subsets, 0)).unwrap() {
            assert_eq!(sub.len(), 20);
        }
    }

    #[test]
    fn balanced_size_schedule() {
        let cfg = TaskDistributionConfig::blobs(BlobsConfig { n_way: 2, dim: 3, ..Default::default() }, 32, 32);
        let task = sample_task(&cfg, &mut stream(5, Purpose::Tasks, 0)).unwrap();
        let mut rng = stream(5, Purpose::Subsets, 0);
        for m in [4, 8, 16, 32, 64] {
            let s = SubsetStrategy::RandomM { m, class_balanced: true };
            let subs = sample_subsets(&task, &s, 128 / m, &mut rng).unwrap();
            assert_eq!(subs.len(), 128 / m);
            for sub in subs {
                let ones = sub.labels().unwrap().iter().filter(|&&l| l == 1).count();
                assert_eq!(sub.len(), m);
                assert_eq!(ones, m / 2);
            }
        }
    }

    #[test]
    fn balanced_on_regression_rejected() {
        let task = sine_task(4);
        let s = SubsetStrategy::RandomM { m: 4, class_balanced: true };
        assert!(sample_subsets(&task, &s, 1, &mut stream(0, Purpose::Subsets, 0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn subsets_stay_inside_pool(seed in 0u64..500, m in 1usize..=40, k in 1usize..4) {
            let task = sine_task(seed);
            let pool = task.pool();
            let s = SubsetStrategy::RandomM { m, class_balanced: false };
            let a = sample_subsets(&task, &s, k, &mut stream(seed, Purpose::Subsets, 0)).unwrap();
            let b = sample_subsets(&task, &s, k, &mut stream(seed, Purpose::Subsets, 0)).unwrap();
            prop_assert_eq!(&a, &b);
            for sub in &a {
                prop_assert_eq!(sub.len(), m);
                for (row, &idx) in sub.indices.iter().enumerate() {
                    prop_assert_eq!(sub.xs.row(row), pool.xs.row(idx));
                }
            }
        }
    }
}
