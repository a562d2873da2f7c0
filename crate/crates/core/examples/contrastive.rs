//! Inner- and inter-task distances and the contrastive losses on hand-made
//! representation vectors.
//!
//! ```text
//! cargo run --example contrastive
//! ```

use conml::autodiff::{Tape, Tensor};
use conml::contrastive::{contrastive_terms, ContrastiveConfig, DistanceKind, LossForm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three tasks; each has two subset models near its full-data model.
    let anchors = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let subsets: Vec<Vec<Vec<f64>>> = anchors
        .iter()
        .map(|a| vec![a.iter().map(|x| x + 0.1).collect(), a.iter().map(|x| x * 0.9 + 0.05).collect()])
        .collect();
    for distance in [DistanceKind::Cosine, DistanceKind::SigmoidEuclidean] {
        for loss_form in [LossForm::Simple, LossForm::Infonce] {
            let cfg = ContrastiveConfig { distance, loss_form, k: 2, ..Default::default() };
            let mut tape = Tape::new();
            let sv: Vec<Vec<_>> = subsets.iter().map(|s| s.iter().map(|v| tape.leaf(Tensor::vector(v.clone()))).collect()).collect();
            let av: Vec<_> = anchors.iter().map(|v| tape.leaf(Tensor::vector(v.clone()))).collect();
            let t = contrastive_terms(&mut tape, &cfg, &sv, &av)?;
            println!(
                "{distance:?}/{loss_form:?}: d_in {:.4}  d_out {:.4}  loss {:.4}",
                tape.scalar(t.d_in),
                tape.scalar(t.d_out),
                tape.scalar(t.loss)
            );
        }
    }
    Ok(())
}
