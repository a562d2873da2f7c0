//! Meta-trains MAML on sine regression with and without the contrastive
//! term and compares held-out 5-shot MSE.
//!
//! ```text
//! cargo run --release --example train -- [episodes] [output dir]
//! ```

use std::path::PathBuf;

use conml::contrastive::ContrastiveConfig;
use conml::eval::{eval_mse, EvalConfig};
use conml::learners::{build_learner, LearnerConfig, MamlConfig};
use conml::tasks::TaskDistributionConfig;
use conml::training::{EpisodeConfig, TrainSpec, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1000);
    let out = args.next().map(PathBuf::from);
    let tasks = TaskDistributionConfig::sinusoid(5, 10);
    let eval = EvalConfig { tasks: 200, ..Default::default() };
    for (name, contrastive) in [("baseline", None), ("contrastive", Some(ContrastiveConfig::default()))] {
        let spec = TrainSpec {
            learner: LearnerConfig::Maml(MamlConfig::default()),
            tasks: tasks.clone(),
            contrastive,
            episode: EpisodeConfig { episodes, ..Default::default() },
            seed: 0,
        };
        let mut trainer = Trainer::new(spec.clone())?;
        let dir = out.as_ref().map(|o| o.join(name));
        trainer.run(dir.as_deref())?;
        let last = trainer.trace().last().expect("at least one episode");
        let learner = build_learner(&spec.learner, &spec.tasks)?;
        let mse = eval_mse(learner.as_ref(), trainer.theta(), &tasks, 5, &eval, 99, 1)?;
        println!(
            "{name:12} final L_v {:.4}  d_in {:?}  d_out {:?}  5-shot test MSE {:.4} ± {:.4}  ({:.1}s)",
            last.l_v,
            last.d_in,
            last.d_out,
            mse.mean,
            mse.std,
            trainer.stats().seconds
        );
    }
    Ok(())
}
