//! Per-episode wall time and adapt calls of the contrastive objective
//! against the plain episodic objective, for K in {1, 2, 4}.
//!
//! ```text
//! cargo run --release --example overhead -- [episodes] [val_size] [batch]
//! ```

use std::time::Instant;

use conml::contrastive::ContrastiveConfig;
use conml::learners::{LearnerConfig, MamlConfig};
use conml::tasks::TaskDistributionConfig;
use conml::training::{EpisodeConfig, TrainSpec, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let episodes = args.first().copied().unwrap_or(20);
    let val_size = args.get(1).copied().unwrap_or(10);
    let batch_size = args.get(2).copied().unwrap_or(25);
    let spec = |contrastive| TrainSpec {
        learner: LearnerConfig::Maml(MamlConfig::default()),
        tasks: TaskDistributionConfig::sinusoid(5, val_size),
        contrastive,
        episode: EpisodeConfig { batch_size, episodes, ..Default::default() },
        seed: 0,
    };
    let time = |spec: TrainSpec| -> Result<(f64, f64, usize), Box<dyn std::error::Error>> {
        let mut t = Trainer::new(spec)?;
        let start = Instant::now();
        t.run(None)?;
        let per_episode = start.elapsed().as_secs_f64() / episodes as f64;
        let calls = t.stats().adapt_calls as f64 / (episodes * batch_size) as f64;
        Ok((per_episode, calls, t.stats().max_peak_bytes))
    };
    let (base, base_calls, base_mem) = time(spec(None))?;
    println!("baseline      {:8.3} ms/episode  {base_calls:.0} adapt/task  {base_mem} peak bytes", base * 1e3);
    for k in [1, 2, 4] {
        let cfg = ContrastiveConfig { k, ..Default::default() };
        let (secs, calls, mem) = time(spec(Some(cfg)))?;
        println!(
            "conml K={k}     {:8.3} ms/episode  {calls:.0} adapt/task  {mem} peak bytes  ratio {:.2}",
            secs * 1e3,
            secs / base
        );
    }
    Ok(())
}
