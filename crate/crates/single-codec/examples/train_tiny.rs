//! Trains the full codec for a handful of steps on a generated corpus and
//! prints the validation trajectory.
//!
//!     cargo run --release --example train_tiny -- [steps] [out_dir] [val_every]

use std::path::PathBuf;
use std::time::Instant;

use single_codec::corpus::{generate_corpus, CorpusSpec};
use single_codec::data::{Dataset, DatasetManifest};
use single_codec::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out_dir: PathBuf =
        args.get(2).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/train-tiny"));

    let corpus_dir = out_dir.join("corpus");
    let spec = CorpusSpec::default();
    let manifest_path = generate_corpus(&corpus_dir, &spec)?;
    let manifest = DatasetManifest::load(&manifest_path)?;

    // Hold out the last few utterances for validation.
    let n_val = (manifest.entries.len() / 10).max(1);
    let split = manifest.entries.len() - n_val;
    let train_manifest = DatasetManifest { entries: manifest.entries[..split].to_vec() };
    let val_manifest = DatasetManifest { entries: manifest.entries[split..].to_vec() };

    let mut cfg = TrainConfig::desk("Single-Codec");
    cfg.steps = steps;
    cfg.val_every =
        args.get(3).map(|s| s.parse()).transpose()?.unwrap_or((steps / 10).max(1));

    let train_ds = Dataset::load(&train_manifest, &cfg.model.mel())?;
    let val_ds = Dataset::load(&val_manifest, &cfg.model.mel())?;
    println!(
        "corpus: {} train / {} val utterances, {} steps",
        train_ds.len(),
        val_ds.len(),
        cfg.steps
    );

    let started = Instant::now();
    let report = train(&cfg, &train_ds, &val_ds, &out_dir.join("run"), true)?;
    let elapsed = started.elapsed().as_secs_f64();

    for (step, val) in &report.val_history {
        println!("step {step:>6}  val mel-L1 {val:.4}");
    }
    println!(
        "final perplexity {:.1}, improvement {:.1}%, {:.2} s/step",
        report.final_perplexity,
        100.0 * (1.0 - report.final_val / report.first_val),
        elapsed / report.steps_run.max(1) as f64
    );
    println!("artifacts in {}", report.checkpoint_dir.display());
    Ok(())
}
