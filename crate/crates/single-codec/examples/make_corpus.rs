//! Writes the deterministic synthetic speech corpus used by the other
//! examples: one speaker, formant-filtered pulse trains with fricative and
//! silence segments.
//!
//!     cargo run --release --example make_corpus -- [dir] [n_utterances] [seconds] [seed]

use std::path::PathBuf;

use single_codec::corpus::{generate_corpus, CorpusSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let dir: PathBuf = args.get(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/corpus"));
    let mut spec = CorpusSpec::default();
    if let Some(n) = args.get(2) {
        spec.n_utterances = n.parse()?;
    }
    if let Some(s) = args.get(3) {
        spec.utterance_seconds = s.parse()?;
    }
    if let Some(s) = args.get(4) {
        spec.seed = s.parse()?;
    }

    let manifest = generate_corpus(&dir, &spec)?;
    let total = spec.n_utterances as f64 * spec.utterance_seconds / 60.0;
    println!(
        "{} utterances x {:.0} s ({:.1} min) at {} Hz",
        spec.n_utterances, spec.utterance_seconds, total, spec.sample_rate
    );
    println!("manifest {}", manifest.display());
    Ok(())
}
