//! Log-mel spectrogram front end.
//!
//! The analysis chain is: reflect-pad to center frames, Hann-windowed STFT,
//! power spectrum, triangular mel filterbank (HTK scale), then natural log
//! with an amplitude floor. Frame count for a signal of `n` samples is
//! `floor(n / hop) + 1`.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    /// Floor applied to mel power before the log.
    pub log_floor: f32,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 100,
            fmin: 0.0,
            fmax: 12_000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop_length == 0 || self.n_mels == 0 {
            return Err(Error::Config("n_fft, hop_length, n_mels must be > 0".into()));
        }
        if self.hop_length > self.win_length || self.win_length > self.n_fft {
            return Err(Error::Config("need hop_length <= win_length <= n_fft".into()));
        }
        if self.fmax <= self.fmin {
            return Err(Error::Config("fmax must exceed fmin".into()));
        }
        if self.fmax > self.sample_rate as f32 / 2.0 {
            return Err(Error::Config("fmax must be <= Nyquist".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be > 0".into()));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `n_samples`.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop_length + 1
    }
}

/// A log-mel spectrogram, `[n_frames, n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f32>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.data.ncols()
    }
}

fn hz_to_mel(f: f32) -> f32 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f32) -> f32 {
    700.0 * (10f32.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `[n_mels, n_fft / 2 + 1]`.
pub fn mel_filterbank(config: &MelConfig) -> Array2<f32> {
    let n_bins = config.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(config.fmin);
    let mel_hi = hz_to_mel(config.fmax);
    // n_mels + 2 edge points, evenly spaced on the mel scale.
    let edges: Vec<f32> = (0..config.n_mels + 2)
        .map(|i| {
            let m = mel_lo + (mel_hi - mel_lo) * i as f32 / (config.n_mels + 1) as f32;
            mel_to_hz(m)
        })
        .collect();
    let bin_hz = config.sample_rate as f32 / config.n_fft as f32;
    let mut fb = Array2::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f32 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            if w > 0.0 {
                fb[[m, b]] = w;
            }
        }
    }
    fb
}

/// Reflect-pad `signal` by `pad` samples on both sides (edge sample not repeated).
pub(crate) fn reflect_pad(signal: &[f32], pad: usize) -> Vec<f32> {
    let n = signal.len();
    assert!(n > pad, "signal too short for reflect padding");
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(signal[i]);
    }
    out.extend_from_slice(signal);
    for i in 1..=pad {
        out.push(signal[n - 1 - i]);
    }
    out
}

pub(crate) fn hann_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let x = std::f32::consts::PI * i as f32 / len as f32;
            x.sin() * x.sin()
        })
        .collect()
}

/// Power spectrogram `[n_fft / 2 + 1, n_frames]` of a centered, Hann-windowed STFT.
pub fn power_spectrogram(signal: &[f32], config: &MelConfig) -> Result<Array2<f32>> {
    config.validate()?;
    let pad = config.n_fft / 2;
    if signal.len() <= pad {
        return Err(Error::InvalidInput(format!(
            "signal of {} samples is too short for n_fft {}",
            signal.len(),
            config.n_fft
        )));
    }
    let padded = reflect_pad(signal, pad);
    let n_frames = config.n_frames(signal.len());
    let n_bins = config.n_fft / 2 + 1;
    let window = hann_window(config.win_length);
    let win_offset = (config.n_fft - config.win_length) / 2;

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(config.n_fft);
    let mut spec = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex::new(0.0f32, 0.0); config.n_fft];

    for t in 0..n_frames {
        let start = t * config.hop_length;
        for v in buf.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for i in 0..config.win_length {
            let s = padded.get(start + win_offset + i).copied().unwrap_or(0.0);
            buf[win_offset + i] = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            spec[[b, t]] = buf[b].norm_sqr();
        }
    }
    Ok(spec)
}

/// Log-mel of a raw sample buffer already known to match `config.sample_rate`.
pub fn compute_mel_signal(signal: &[f32], config: &MelConfig) -> Result<MelSpectrogram> {
    let power = power_spectrogram(signal, config)?;
    let fb = mel_filterbank(config);
    // fb [n_mels, n_bins] x power [n_bins, n_frames] -> transpose to [n_frames, n_mels].
    let mel = fb.dot(&power).reversed_axes();
    let data = mel.mapv(|v| v.max(config.log_floor).ln());
    Ok(MelSpectrogram { data, config: config.clone() })
}

/// Compute the log-mel spectrogram of a clip.
pub fn compute_mel(clip: &AudioClip, config: &MelConfig) -> Result<MelSpectrogram> {
    if clip.is_empty() {
        return Err(Error::InvalidInput("empty clip".into()));
    }
    if clip.sample_rate != config.sample_rate {
        return Err(Error::ConfigMismatch(format!(
            "clip is {} Hz but mel config expects {} Hz",
            clip.sample_rate, config.sample_rate
        )));
    }
    compute_mel_signal(&clip.samples, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, sr: u32, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin())
            .collect()
    }

    #[test]
    fn frame_count_matches_formula() {
        let cfg = MelConfig::default();
        // Oracle: centered STFT with hop h yields floor(n / h) + 1 frames.
        for n in [24_000usize, 24_001, 25_600, 65_536, 2048] {
            let mel = compute_mel_signal(&sine(440.0, 24_000, n), &cfg).unwrap();
            assert_eq!(mel.n_frames(), n / cfg.hop_length + 1, "n = {n}");
            assert_eq!(mel.n_mels(), 100);
        }
    }

    #[test]
    fn one_second_at_defaults_gives_94_frames() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.n_frames(24_000), 94);
    }

    #[test]
    fn silence_hits_log_floor() {
        let cfg = MelConfig::default();
        let mel = compute_mel_signal(&vec![0.0; 4096], &cfg).unwrap();
        let expected = cfg.log_floor.ln();
        assert!(mel.data.iter().all(|&v| (v - expected).abs() < 1e-6));
    }

    #[test]
    fn sine_energy_lands_in_matching_band() {
        let cfg = MelConfig::default();
        let freq = 2000.0;
        let mel = compute_mel_signal(&sine(freq, 24_000, 24_000), &cfg).unwrap();
        let frame = mel.data.row(mel.n_frames() / 2);
        let argmax = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // Oracle: band centers are even on the mel scale; find the band whose
        // center is nearest the tone.
        let mel_lo = hz_to_mel(cfg.fmin);
        let mel_hi = hz_to_mel(cfg.fmax);
        let tone_mel = hz_to_mel(freq);
        let nearest = ((tone_mel - mel_lo) / (mel_hi - mel_lo) * (cfg.n_mels + 1) as f32 - 1.0)
            .round() as isize;
        assert!((argmax as isize - nearest).abs() <= 1, "argmax {argmax} nearest {nearest}");
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.shape(), &[100, 513]);
        // Every band must pass some energy.
        for m in 0..cfg.n_mels {
            assert!(fb.row(m).sum() > 0.0, "band {m} is empty");
        }
    }

    #[test]
    fn clip_rate_mismatch_is_rejected() {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(sine(440.0, 16_000, 8000), 16_000).unwrap();
        match compute_mel(&clip, &cfg) {
            Err(Error::ConfigMismatch(_)) => {}
            other => panic!("expected ConfigMismatch, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let cfg = MelConfig::default();
        let sig = sine(523.25, 24_000, 12_000);
        let a = compute_mel_signal(&sig, &cfg).unwrap();
        let b = compute_mel_signal(&sig, &cfg).unwrap();
        assert_eq!(a.data, b.data);
    }
}
