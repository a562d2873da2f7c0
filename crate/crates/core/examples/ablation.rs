//! A small λ × distance ablation grid, printed as a markdown table.
//!
//! ```text
//! cargo run --release --example ablation -- [episodes]
//! ```

use conml::contrastive::{ContrastiveConfig, DistanceKind};
use conml::eval::{ablation_grid, AblationAxes, EvalConfig};
use conml::learners::{LearnerConfig, MamlConfig};
use conml::tasks::TaskDistributionConfig;
use conml::training::{EpisodeConfig, TrainSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(200);
    let base = TrainSpec {
        learner: LearnerConfig::Maml(MamlConfig { hidden: vec![20, 20], ..Default::default() }),
        tasks: TaskDistributionConfig::sinusoid(5, 10),
        contrastive: Some(ContrastiveConfig::default()),
        episode: EpisodeConfig { batch_size: 10, episodes, ..Default::default() },
        seed: 0,
    };
    let axes = AblationAxes {
        lambda: vec![0.0, 0.1, 1.0],
        distance: vec![DistanceKind::Cosine, DistanceKind::SigmoidEuclidean],
        ..Default::default()
    };
    let table = ablation_grid(&base, &axes, &[0, 1], &EvalConfig { tasks: 100, ..Default::default() }, 1)?;
    print!("{}", table.to_markdown());
    Ok(())
}
