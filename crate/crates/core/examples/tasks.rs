//! Task distributions, subset strategies and the JSONL task format.
//!
//! ```text
//! cargo run --example tasks
//! ```

use conml::rng::{stream, Purpose};
use conml::tasks::{dump_jsonl, load_jsonl, sample_batch, sample_subsets, BlobsConfig, SubsetStrategy, TaskDistributionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sine = TaskDistributionConfig::sinusoid(5, 10);
    let batch = sample_batch(&sine, 3, &mut stream(0, Purpose::Tasks, 0))?;
    for (i, t) in batch.iter().enumerate() {
        println!("sine task {i}: {:?}, {} train / {} val points", t.meta, t.train.len(), t.val.len());
    }

    // Shifting the amplitude range gives out-of-distribution tasks.
    let shifted = sample_batch(&sine.clone().with_shift(3.0), 1, &mut stream(0, Purpose::Tasks, 0))?;
    println!("shifted by 3: {:?}", shifted[0].meta);

    let blobs = TaskDistributionConfig::blobs(BlobsConfig { n_way: 3, dim: 2, ..Default::default() }, 4, 4);
    let task = &sample_batch(&blobs, 1, &mut stream(0, Purpose::Tasks, 1))?[0];
    let strategies = [
        SubsetStrategy::TrainOnly,
        SubsetStrategy::RandomHalf { class_balanced: true },
        SubsetStrategy::RandomM { m: 6, class_balanced: true },
    ];
    for s in &strategies {
        let subsets = sample_subsets(task, s, 2, &mut stream(0, Purpose::Subsets, 0))?;
        let labels: Vec<_> = subsets.iter().map(|d| d.labels().map(<[usize]>::to_vec)).collect();
        println!("{s:?}: subset labels {labels:?}");
    }

    let mut buf = Vec::new();
    dump_jsonl(&batch, &mut buf)?;
    let back = load_jsonl(buf.as_slice())?;
    println!("JSONL round trip of {} tasks exact: {}", back.len(), back == batch);
    Ok(())
}
