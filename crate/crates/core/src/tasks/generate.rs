use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Dataset, TaskDistributionConfig, TaskError, TaskFamily, TaskInstance, TaskMeta, Targets};
use crate::autodiff::Tensor;

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        Uniform::new_inclusive(r[0], r[1]).sample(rng)
    }
}

/// Draws one task. Sinusoid targets are noise-free; blob points are
/// `mean + spread * N(0, I)`.
pub fn sample_task(cfg: &TaskDistributionConfig, rng: &mut impl Rng) -> Result<TaskInstance, TaskError> {
    cfg.validate()?;
    match &cfg.family {
        TaskFamily::Sinusoid(s) => {
            let shift = cfg.amplitude_shift;
            let amplitude = uniform(rng, [s.amplitude[0] + shift, s.amplitude[1] + shift]);
            let phase = uniform(rng, s.phase);
            let meta = TaskMeta::Sinusoid { amplitude, phase };
            let mut points = |n: usize, offset: usize| -> Result<Dataset, TaskError> {
                let xs: Vec<f64> = (0..n).map(|_| uniform(rng, s.input)).collect();
                let ys: Vec<f64> = xs.iter().map(|&x| amplitude * (x + phase).sin()).collect();
                Dataset::new(
                    Tensor::new(vec![n, 1], xs).map_err(|e| TaskError::Config(e.to_string()))?,
                    Targets::Regression(Tensor::new(vec![n, 1], ys).map_err(|e| TaskError::Config(e.to_string()))?),
                    (offset..offset + n).collect(),
                )
            };
            let train = points(cfg.shots, 0)?;
            let val = points(cfg.val_size, cfg.shots)?;
            Ok(TaskInstance { train, val, meta })
        }
        TaskFamily::GaussianBlobs(b) => {
            let means: Vec<Vec<f64>> = (0..b.n_way)
                .map(|_| (0..b.dim).map(|_| uniform(rng, b.mean_range)).collect())
                .collect();
            let mut points = |per_class: usize, offset: usize| -> Result<Dataset, TaskError> {
                let mut xs = Vec::with_capacity(per_class * b.n_way * b.dim);
                let mut labels = Vec::with_capacity(per_class * b.n_way);
                for (label, mean) in means.iter().enumerate() {
                    for _ in 0..per_class {
                        for &m in mean {
                            let z: f64 = StandardNormal.sample(rng);
                            xs.push(m + b.spread * z);
                        }
                        labels.push(label);
                    }
                }
                let n = labels.len();
                Dataset::new(
                    Tensor::new(vec![n, b.dim], xs).map_err(|e| TaskError::Config(e.to_string()))?,
                    Targets::Classes { labels, n_way: b.n_way },
                    (offset..offset + n).collect(),
                )
            };
            let train = points(cfg.shots, 0)?;
            let val = points(cfg.val_size, cfg.shots * b.n_way)?;
            Ok(TaskInstance {
                train,
                val,
                meta: TaskMeta::GaussianBlobs { means },
            })
        }
    }
}

/// `count` independent draws from one stream.
pub fn sample_batch(
    cfg: &TaskDistributionConfig,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TaskInstance>, TaskError> {
    (0..count).map(|_| sample_task(cfg, rng)).collect()
}
