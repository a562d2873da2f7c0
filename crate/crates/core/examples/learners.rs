//! The three learner families: adapt to a task, predict, and project the
//! adapted model to its representation vector.
//!
//! ```text
//! cargo run --example learners
//! ```

use conml::autodiff::Tape;
use conml::learners::{build_learner, AdaptMode, HyperNetConfig, LearnerConfig, MamlConfig, ProtoNetConfig};
use conml::rng::{stream, Purpose};
use conml::tasks::{sample_task, BlobsConfig, TaskDistributionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sine = TaskDistributionConfig::sinusoid(5, 20);
    let blobs = TaskDistributionConfig::blobs(BlobsConfig { n_way: 5, dim: 8, ..Default::default() }, 1, 5);
    let setups = [
        ("maml", LearnerConfig::Maml(MamlConfig::default()), &sine),
        ("protonet", LearnerConfig::Protonet(ProtoNetConfig::default()), &blobs),
        ("hypernet", LearnerConfig::Hypernet(HyperNetConfig::default()), &sine),
    ];
    for (name, cfg, tasks) in setups {
        let learner = build_learner(&cfg, tasks)?;
        let theta = learner.init_params(&mut stream(0, Purpose::Init, 0))?;
        let task = sample_task(tasks, &mut stream(0, Purpose::Tasks, 0))?;
        let mut tape = Tape::new();
        let bound = theta.bind(&mut tape);
        let model = learner.adapt(&mut tape, &bound, &task.train, AdaptMode::Test)?;
        let loss = learner.loss(&mut tape, &model, &task.val)?;
        let e = learner.represent(&mut tape, &model)?;
        println!(
            "{name:9} {:6} parameters, untrained validation loss {:.4}, representation length {}",
            theta.numel(),
            tape.scalar(loss),
            tape.value(e).numel()
        );
    }
    Ok(())
}
