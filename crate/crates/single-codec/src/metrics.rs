//! Objective reconstruction metrics and rate accounting.
//!
//! Everything here is a pure function over mel matrices `[frames, mels]`.
//! MCD is frame-aligned (codec output is time-synchronous with its input)
//! over orthonormal DCT-II cepstra, coefficients 1..=13. The speaker metric
//! is a stats-pooling proxy: per-bin temporal mean and standard deviation,
//! compared by cosine.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// 10·√2 / ln 10, the conventional cepstral-distance-to-dB constant.
pub const MCD_CONSTANT: f64 = 6.141851463713754;
/// Cepstral coefficients 1..=MCD_COEFFS enter the distance; the 0th (energy)
/// is excluded.
pub const MCD_COEFFS: usize = 13;
/// Minimum frames for the stats-pooling speaker embedding to be meaningful.
pub const SPEAKER_MIN_FRAMES: usize = 50;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub mcd: f64,
    pub mel_l1: f64,
    pub speaker_cosine: f64,
    pub perplexity: f64,
    pub utilization: f64,
    pub bandwidth_bps: f64,
    /// Slots for externally computed metrics (perceptual scores etc.); never
    /// filled by this crate.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str =
        "bandwidth_bps\tmcd\tspeaker_cosine\tmel_l1\tperplexity\tutilization";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.2}\t{:.4}",
            self.bandwidth_bps.floor() as i64,
            self.mcd,
            self.speaker_cosine,
            self.mel_l1,
            self.perplexity,
            self.utilization
        )
    }

    /// Mean over per-utterance reports.
    pub fn aggregate(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            mcd: reports.iter().map(|r| r.mcd).sum::<f64>() / n,
            mel_l1: reports.iter().map(|r| r.mel_l1).sum::<f64>() / n,
            speaker_cosine: reports.iter().map(|r| r.speaker_cosine).sum::<f64>() / n,
            perplexity: reports.iter().map(|r| r.perplexity).sum::<f64>() / n,
            utilization: reports.iter().map(|r| r.utilization).sum::<f64>() / n,
            bandwidth_bps: reports.iter().map(|r| r.bandwidth_bps).sum::<f64>() / n,
            external: BTreeMap::new(),
        })
    }
}

fn check_shapes(a: &Array2<f32>, b: &Array2<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mel shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Orthonormal DCT-II of one frame, coefficients `0..=n_coeffs`.
fn dct_frame(frame: &[f32], n_coeffs: usize) -> Vec<f64> {
    let n = frame.len();
    let mut out = Vec::with_capacity(n_coeffs + 1);
    for k in 0..=n_coeffs {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        let mut acc = 0.0f64;
        for (i, &x) in frame.iter().enumerate() {
            acc += x as f64
                * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n as f64))
                    .cos();
        }
        out.push(scale * acc);
    }
    out
}

/// Mel cepstral distortion in dB between two log-mel matrices of equal shape.
pub fn mcd(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    check_shapes(a, b)?;
    if a.ncols() <= MCD_COEFFS {
        return Err(Error::Shape(format!(
            "need more than {MCD_COEFFS} mel bins, got {}",
            a.ncols()
        )));
    }
    let n_frames = a.nrows();
    if n_frames == 0 {
        return Err(Error::Shape("empty mel".into()));
    }
    let mut total = 0.0f64;
    for t in 0..n_frames {
        let ca = dct_frame(a.row(t).as_slice().expect("row-major"), MCD_COEFFS);
        let cb = dct_frame(b.row(t).as_slice().expect("row-major"), MCD_COEFFS);
        let mut sq = 0.0f64;
        for d in 1..=MCD_COEFFS {
            let diff = ca[d] - cb[d];
            sq += diff * diff;
        }
        total += MCD_CONSTANT * sq.sqrt();
    }
    Ok(total / n_frames as f64)
}

/// Mean absolute difference between two equal-shape mel matrices.
pub fn mel_l1(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    check_shapes(a, b)?;
    if a.is_empty() {
        return Err(Error::Shape("empty mel".into()));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() as f64).sum();
    Ok(sum / a.len() as f64)
}

/// Stats-pooling embedding: per-bin temporal mean then per-bin temporal std.
pub fn speaker_embedding(mel: &Array2<f32>) -> Result<Vec<f64>> {
    if mel.nrows() < SPEAKER_MIN_FRAMES {
        return Err(Error::InsufficientData(format!(
            "{} frames < {SPEAKER_MIN_FRAMES} needed for speaker stats",
            mel.nrows()
        )));
    }
    let n = mel.nrows() as f64;
    let mut means = Vec::with_capacity(mel.ncols());
    let mut stds = Vec::with_capacity(mel.ncols());
    for col in mel.columns() {
        let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        means.push(mean);
        stds.push(var.sqrt());
    }
    means.extend(stds);
    Ok(means)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity of the two stats-pooling embeddings. Frame counts may
/// differ; the mel-bin count must match.
pub fn speaker_cosine_proxy(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "mel bin counts differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let ea = speaker_embedding(a)?;
    let eb = speaker_embedding(b)?;
    Ok(cosine(&ea, &eb))
}

/// Token bits per second of the payload. The per-utterance embedding sidecar
/// is constant overhead and excluded from the rate.
pub fn bandwidth(sample_rate: u32, hop: u32, downsample_factor: u32, codebook_size: u32) -> f64 {
    assert!(sample_rate > 0 && hop > 0 && downsample_factor > 0 && codebook_size > 1);
    let tokens_per_second = sample_rate as f64 / (hop as f64 * downsample_factor as f64);
    let bits = (codebook_size as f64).log2().ceil();
    tokens_per_second * bits
}

/// Bandwidth as reported in rate tables: floored to an integer.
pub fn reported_bandwidth(
    sample_rate: u32,
    hop: u32,
    downsample_factor: u32,
    codebook_size: u32,
) -> u64 {
    bandwidth(sample_rate, hop, downsample_factor, codebook_size).floor() as u64
}
