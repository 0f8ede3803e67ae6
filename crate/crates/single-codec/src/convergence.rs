//! Commitment-loss curve analysis.
//!
//! Training appends one record per step to a tab-separated log; this module
//! parses those logs and classifies a commitment-loss trajectory as
//! diverging, flat, or converging by comparing a smoothed late-training mean
//! against a mid-training mean. The rule is ratio-based, so uniformly
//! rescaling a curve never changes its class.

use std::fmt;

use crate::error::{Error, Result};

/// One training-log record: `step \t commitment \t rec \t adv \t perplexity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub commitment: f64,
    pub rec: f64,
    pub adv: f64,
    pub perplexity: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
            self.step, self.commitment, self.rec, self.adv, self.perplexity
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad number {:?} in field {}", fields[i], i + 1),
            })
        };
        Ok(Self {
            step: fields[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad step {:?}", fields[0]),
            })?,
            commitment: num(1)?,
            rec: num(2)?,
            adv: num(3)?,
            perplexity: num(4)?,
        })
    }
}

/// Parse a full loss log. Blank lines and `#` comments are skipped.
pub fn parse_log(text: &str) -> Result<Vec<LossRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(LossRecord::parse_line(line, idx + 1)?);
    }
    Ok(out)
}

pub const DEFAULT_SMOOTHING_WINDOW: usize = 25;
pub const DIVERGE_RATIO: f64 = 1.1;
pub const CONVERGE_RATIO: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct CommitmentCurve {
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
    pub smoothing_window: usize,
}

impl CommitmentCurve {
    pub fn new(steps: Vec<u64>, values: Vec<f64>, smoothing_window: usize) -> Result<Self> {
        if steps.len() != values.len() {
            return Err(Error::InvalidInput("steps and values lengths differ".into()));
        }
        if smoothing_window == 0 {
            return Err(Error::InvalidInput("smoothing_window must be > 0".into()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("steps must be strictly increasing".into()));
        }
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidInput("values must be finite and >= 0".into()));
        }
        Ok(Self { steps, values, smoothing_window })
    }

    pub fn from_records(records: &[LossRecord], smoothing_window: usize) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.step).collect(),
            records.iter().map(|r| r.commitment).collect(),
            smoothing_window,
        )
    }

    /// Centered moving average; the window is clamped at the edges.
    fn smoothed(&self) -> Vec<f64> {
        let n = self.values.len();
        let half = self.smoothing_window / 2;
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(n);
                self.values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Diverging,
    Flat,
    Converging,
}

impl fmt::Display for Convergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Convergence::Diverging => "diverging",
            Convergence::Flat => "flat",
            Convergence::Converging => "converging",
        };
        f.write_str(s)
    }
}

fn window_mean(smoothed: &[f64], lo_frac: f64, hi_frac: f64) -> f64 {
    let n = smoothed.len();
    let a = ((n as f64 * lo_frac).floor() as usize).min(n - 1);
    let b = (((n as f64 * hi_frac).floor() as usize).max(a + 1)).min(n);
    smoothed[a..b].iter().sum::<f64>() / (b - a) as f64
}

/// Classify with explicit ratio thresholds.
pub fn classify_convergence_with(
    curve: &CommitmentCurve,
    diverge_ratio: f64,
    converge_ratio: f64,
) -> Result<Convergence> {
    let n = curve.values.len();
    if n < 3 * curve.smoothing_window {
        return Err(Error::InsufficientData(format!(
            "{n} points < 3 x smoothing window {}",
            curve.smoothing_window
        )));
    }
    let smoothed = curve.smoothed();
    let m_end = window_mean(&smoothed, 0.9, 1.0);
    let m_mid = window_mean(&smoothed, 0.4, 0.5);
    // Plain comparisons rather than a quotient: this keeps the rule
    // scale-invariant and well defined when the mid mean is zero.
    if m_end > diverge_ratio * m_mid {
        Ok(Convergence::Diverging)
    } else if m_end < converge_ratio * m_mid {
        Ok(Convergence::Converging)
    } else {
        Ok(Convergence::Flat)
    }
}

/// Classify a commitment trajectory: late mean above 1.1x the mid-training
/// mean is diverging, below 0.9x is converging, between is flat.
pub fn classify_convergence(curve: &CommitmentCurve) -> Result<Convergence> {
    classify_convergence_with(curve, DIVERGE_RATIO, CONVERGE_RATIO)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_from(values: Vec<f64>) -> CommitmentCurve {
        let steps = (0..values.len() as u64).map(|i| i + 1).collect();
        CommitmentCurve::new(steps, values, DEFAULT_SMOOTHING_WINDOW).unwrap()
    }

    #[test]
    fn increasing_curve_diverges() {
        let c = curve_from((1..=200).map(|t| t as f64).collect());
        assert_eq!(classify_convergence(&c).unwrap(), Convergence::Diverging);
    }

    #[test]
    fn constant_curve_is_flat() {
        let c = curve_from(vec![0.37; 200]);
        assert_eq!(classify_convergence(&c).unwrap(), Convergence::Flat);
        let zeros = curve_from(vec![0.0; 200]);
        assert_eq!(classify_convergence(&zeros).unwrap(), Convergence::Flat);
    }

    #[test]
    fn one_over_t_converges() {
        let c = curve_from((1..=200).map(|t| 1.0 / t as f64).collect());
        assert_eq!(classify_convergence(&c).unwrap(), Convergence::Converging);
    }

    #[test]
    fn noisy_trend_classified_by_smoothing() {
        // Sawtooth noise on a decaying trend; raw last-point comparisons
        // would be unstable, the smoothed means are not.
        let values: Vec<f64> = (1..=300)
            .map(|t| 10.0 / (t as f64).sqrt() + if t % 2 == 0 { 0.3 } else { 0.0 })
            .collect();
        let c = curve_from(values);
        assert_eq!(classify_convergence(&c).unwrap(), Convergence::Converging);
    }

    #[test]
    fn scale_invariant() {
        let base: Vec<f64> = (1..=200).map(|t| 1.0 / t as f64).collect();
        for scale in [1e-6, 1.0, 1e6] {
            let c = curve_from(base.iter().map(|v| v * scale).collect());
            assert_eq!(classify_convergence(&c).unwrap(), Convergence::Converging, "scale {scale}");
        }
        let flat: Vec<f64> = vec![2.0; 150];
        for scale in [1e-6, 1.0, 1e6] {
            let c = curve_from(flat.iter().map(|v| v * scale).collect());
            assert_eq!(classify_convergence(&c).unwrap(), Convergence::Flat, "scale {scale}");
        }
    }

    #[test]
    fn too_few_points_is_insufficient() {
        let c = curve_from(vec![1.0; 74]);
        assert!(matches!(classify_convergence(&c), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn strictly_increasing_steps_enforced() {
        let r = CommitmentCurve::new(vec![1, 1, 2], vec![0.0; 3], 5);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let r = CommitmentCurve::new(vec![1, 2, 3], vec![0.0, -1.0, 0.0], 5);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn log_lines_roundtrip() {
        let rec = LossRecord { step: 17, commitment: 0.25, rec: 1.5, adv: 0.0, perplexity: 42.0 };
        let parsed = LossRecord::parse_line(&rec.to_line(), 1).unwrap();
        assert_eq!(parsed.step, 17);
        assert!((parsed.commitment - 0.25).abs() < 1e-12);
        assert!((parsed.perplexity - 42.0).abs() < 1e-12);

        let text = format!("# header comment\n{}\n\n{}\n", rec.to_line(), LossRecord {
            step: 18,
            ..rec
        }
        .to_line());
        let records = parse_log(&text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].step, 18);

        match parse_log("1\t2\t3\n") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
