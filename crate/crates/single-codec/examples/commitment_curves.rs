//! Classifies commitment-loss trajectories: three synthetic regimes, plus
//! any real training log passed on the command line.
//!
//!     cargo run --example commitment_curves -- [loss_log.tsv ...]

use single_codec::convergence::{
    classify_convergence, parse_log, CommitmentCurve, Convergence,
};

fn synthetic(name: &str, f: impl Fn(f64) -> f64) -> (String, Convergence) {
    let steps: Vec<u64> = (1..=400).collect();
    let values: Vec<f64> = steps.iter().map(|&s| f(s as f64)).collect();
    let curve = CommitmentCurve::new(steps, values, 10).expect("valid synthetic curve");
    let class = classify_convergence(&curve).expect("classifiable");
    (name.to_string(), class)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("synthetic regimes:");
    for (name, class) in [
        synthetic("linear growth t/100", |t| t / 100.0),
        synthetic("constant 0.5", |_| 0.5),
        synthetic("decay 1/t", |t| 1.0 / t),
    ] {
        println!("  {name:<22} -> {class}");
    }

    // Scaling a curve by any positive constant never changes its class.
    let (_, base) = synthetic("1/t", |t| 1.0 / t);
    let (_, scaled) = synthetic("1000/t", |t| 1000.0 / t);
    assert_eq!(base, scaled);
    println!("  scale invariance: 1/t and 1000/t agree ({base})");

    for path in std::env::args().skip(1) {
        let text = std::fs::read_to_string(&path)?;
        let records = parse_log(&text)?;
        let window = (records.len() / 10).clamp(3, 50);
        let curve = CommitmentCurve::from_records(&records, window)?;
        let class = classify_convergence(&curve)?;
        println!("{path}: {} records -> {class}", records.len());
    }
    Ok(())
}
