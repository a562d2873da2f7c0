//! Every evaluation protocol on one briefly trained model, with CSV, JSON
//! and SVG reports written to a directory.
//!
//! ```text
//! cargo run --release --example evaluate -- [report dir]
//! ```

use std::path::PathBuf;

use conml::contrastive::{ContrastiveConfig, DistanceKind};
use conml::eval::*;
use conml::learners::{build_learner, LearnerConfig, MamlConfig};
use conml::tasks::TaskDistributionConfig;
use conml::training::{EpisodeConfig, TrainSpec, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/evaluate-example"));
    let tasks = TaskDistributionConfig::sinusoid(5, 10);
    let spec = TrainSpec {
        learner: LearnerConfig::Maml(MamlConfig::default()),
        tasks: tasks.clone(),
        contrastive: Some(ContrastiveConfig::default()),
        episode: EpisodeConfig { episodes: 300, ..Default::default() },
        seed: 0,
    };
    let mut trainer = Trainer::new(spec.clone())?;
    trainer.run(None)?;
    let learner = build_learner(&spec.learner, &tasks)?;
    let (l, theta) = (learner.as_ref(), trainer.theta());
    let eval = EvalConfig { tasks: 200, distances: DistanceEvalConfig { tasks: 200, ..Default::default() }, ..Default::default() };

    let shots = shot_sweep(l, theta, &tasks, &eval.shots, &eval, 1, 1)?;
    let ood = ood_sweep(l, theta, &tasks, &eval.deltas, 5, &eval, 1, 1)?;
    let clusters = cluster_models(l, theta, &tasks, &eval.cluster, true, 1, 1)?;
    let dists = distance_distributions(l, theta, &tasks, &eval.distances, DistanceKind::Cosine, 1, 1)?;
    for (n, r) in &shots {
        println!("{n}-shot MSE {:.4}", r.mean);
    }
    for (d, r) in &ood {
        println!("shift {d}: MSE {:.4}", r.mean);
    }
    println!("clustering {:?}", clusters.scores);
    println!("mean d_in {:.3e}, mean d_out {:.3e}", dists.mean_in, dists.mean_out);

    write_sweep_report(&dir, "shots", "shots", &[("maml".into(), shots)])?;
    write_sweep_report(&dir, "ood", "delta", &[("maml".into(), ood)])?;
    write_cluster_report(&dir, "cluster", &clusters)?;
    write_distance_report(&dir, "distances", &[("maml".into(), &dists)])?;
    println!("reports in {}", dir.display());
    Ok(())
}
