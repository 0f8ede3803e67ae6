//! Diagnostic waveform reconstruction: log-mel back to linear amplitudes via
//! a ridge-regularized filterbank inverse, then Griffin-Lim phase recovery.
//! Everything is deterministic, so reconstructions are reproducible sample
//! for sample.

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mel::{hann_window, mel_filterbank, reflect_pad, MelConfig, MelSpectrogram};

#[derive(Debug, Clone)]
pub struct VocoderConfig {
    pub iterations: usize,
    /// Ridge weight for the filterbank inversion, relative to the mean
    /// diagonal of the Gram matrix.
    pub ridge: f32,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self { iterations: 64, ridge: 1e-4 }
    }
}

/// Complex STFT with the same framing as the mel front end:
/// centered frames over a reflect-padded signal, Hann window.
pub fn stft(signal: &[f32], config: &MelConfig) -> Result<Array2<Complex<f32>>> {
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
            spec[[b, t]] = buf[b];
        }
    }
    Ok(spec)
}

/// Windowed overlap-add inverse of [`stft`], trimmed to `out_len` samples.
pub fn istft(spec: &Array2<Complex<f32>>, config: &MelConfig, out_len: usize) -> Result<Vec<f32>> {
    config.validate()?;
    let n_bins = config.n_fft / 2 + 1;
    if spec.nrows() != n_bins {
        return Err(Error::Shape(format!(
            "expected {n_bins} frequency bins, got {}",
            spec.nrows()
        )));
    }
    let n_frames = spec.ncols();
    let pad = config.n_fft / 2;
    let window = hann_window(config.win_length);
    let win_offset = (config.n_fft - config.win_length) / 2;
    let padded_len = (n_frames.saturating_sub(1)) * config.hop_length + config.n_fft;

    let mut planner = FftPlanner::<f32>::new();
    let ifft = planner.plan_fft_inverse(config.n_fft);
    let mut acc = vec![0.0f32; padded_len];
    let mut norm = vec![0.0f32; padded_len];
    let mut buf = vec![Complex::new(0.0f32, 0.0); config.n_fft];
    let scale = 1.0 / config.n_fft as f32;
    for t in 0..n_frames {
        // Rebuild the full conjugate-symmetric spectrum of a real frame.
        for b in 0..n_bins {
            buf[b] = spec[[b, t]];
        }
        for b in n_bins..config.n_fft {
            buf[b] = spec[[config.n_fft - b, t]].conj();
        }
        ifft.process(&mut buf);
        let start = t * config.hop_length;
        for i in 0..config.win_length {
            let idx = start + win_offset + i;
            if idx < padded_len {
                let w = window[i];
                acc[idx] += buf[win_offset + i].re * scale * w;
                norm[idx] += w * w;
            }
        }
    }
    let mut out = vec![0.0f32; out_len];
    for i in 0..out_len {
        let idx = pad + i;
        if idx < padded_len && norm[idx] > 1e-8 {
            out[i] = acc[idx] / norm[idx];
        }
    }
    Ok(out)
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky
/// factorization, in f64.
pub(crate) fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Shape("cholesky_solve needs square A and matching b".into()));
    }
    // A = L L^T, stored lower-triangular.
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite at pivot {i}"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    // L y = b
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    // L^T x = y
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

/// Log-mel back to linear amplitude spectra `[n_bins, n_frames]`.
///
/// Power is recovered as `F^T (F F^T + r I)^{-1} m` per frame (ridge
/// pseudo-inverse of the mel filterbank), clamped at zero.
pub fn mel_to_linear_amplitude(mel: &MelSpectrogram, ridge: f32) -> Result<Array2<f32>> {
    let config = &mel.config;
    let fb = mel_filterbank(config);
    let (n_mels, n_bins) = (fb.nrows(), fb.ncols());
    if mel.data.ncols() != n_mels {
        return Err(Error::Shape(format!(
            "mel has {} bands, filterbank has {n_mels}",
            mel.data.ncols()
        )));
    }
    let fb64 = fb.mapv(|v| v as f64);
    let mut gram = fb64.dot(&fb64.t());
    let mean_diag = (0..n_mels).map(|i| gram[[i, i]]).sum::<f64>() / n_mels as f64;
    let r = (ridge as f64 * mean_diag).max(1e-12);
    for i in 0..n_mels {
        gram[[i, i]] += r;
    }

    let n_frames = mel.data.nrows();
    let mut amp = Array2::<f32>::zeros((n_bins, n_frames));
    for t in 0..n_frames {
        // Invert the log, then the filterbank.
        let m: Array1<f64> = mel.data.row(t).mapv(|v| (v as f64).exp());
        let w = cholesky_solve(&gram, &m)?;
        for b in 0..n_bins {
            let mut p = 0.0f64;
            for j in 0..n_mels {
                p += fb64[[j, b]] * w[j];
            }
            amp[[b, t]] = (p.max(0.0)).sqrt() as f32;
        }
    }
    Ok(amp)
}

/// Griffin-Lim phase recovery from amplitude spectra. Zero-phase start, so
/// the result is a pure function of its inputs.
pub fn griffin_lim(
    amplitude: &Array2<f32>,
    config: &MelConfig,
    iterations: usize,
) -> Result<Vec<f32>> {
    let n_bins = config.n_fft / 2 + 1;
    if amplitude.nrows() != n_bins {
        return Err(Error::Shape(format!(
            "expected {n_bins} frequency bins, got {}",
            amplitude.nrows()
        )));
    }
    let n_frames = amplitude.ncols();
    if n_frames == 0 {
        return Err(Error::InvalidInput("no frames to reconstruct".into()));
    }
    let out_len = (n_frames - 1) * config.hop_length;
    if out_len == 0 {
        return Err(Error::InvalidInput("too few frames to reconstruct audio".into()));
    }

    let mut spec: Array2<Complex<f32>> =
        amplitude.mapv(|a| Complex::new(a, 0.0));
    for _ in 0..iterations {
        let x = istft(&spec, config, out_len)?;
        let est = stft(&x, config)?;
        for t in 0..n_frames.min(est.ncols()) {
            for b in 0..n_bins {
                let e = est[[b, t]];
                let mag = e.norm();
                let phase = if mag > 1e-12 { e / mag } else { Complex::new(1.0, 0.0) };
                spec[[b, t]] = phase * amplitude[[b, t]];
            }
        }
    }
    istft(&spec, config, out_len)
}

/// Full mel-to-audio path for listening checks.
pub fn mel_to_audio(mel: &MelSpectrogram, voc: &VocoderConfig) -> Result<AudioClip> {
    let amp = mel_to_linear_amplitude(mel, voc.ridge)?;
    let samples = griffin_lim(&amp, &mel.config, voc.iterations)?;
    AudioClip::new(samples, mel.config.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mel::compute_mel_signal;

    fn sine(freq: f32, seconds: f32, sr: u32) -> Vec<f32> {
        let n = (seconds * sr as f32) as usize;
        (0..n)
            .map(|i| (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin() * 0.5)
            .collect()
    }

    #[test]
    fn stft_istft_is_an_identity_for_cola_windows() {
        let cfg = MelConfig::default();
        // A deterministic multi-tone signal.
        let sr = cfg.sample_rate;
        let x: Vec<f32> = sine(220.0, 0.5, sr)
            .iter()
            .zip(sine(1333.0, 0.5, sr))
            .map(|(a, b)| a + 0.3 * b)
            .collect();
        let spec = stft(&x, &cfg).unwrap();
        let y = istft(&spec, &cfg, x.len()).unwrap();
        assert_eq!(y.len(), x.len());
        let err: f64 = x
            .iter()
            .zip(&y)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let ref_norm: f64 = x.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        assert!(err / ref_norm < 1e-4, "relative error {}", err / ref_norm);
    }

    #[test]
    fn cholesky_solves_spd_systems() {
        let n = 8;
        // B B^T + I is positive definite for any B.
        let b = Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let mut a = b.dot(&b.t());
        for i in 0..n {
            a[[i, i]] += 1.0;
        }
        let rhs = Array1::from_shape_fn(n, |i| (i as f64 * 0.37).sin());
        let x = cholesky_solve(&a, &rhs).unwrap();
        let back = a.dot(&x);
        for (u, v) in back.iter().zip(rhs.iter()) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_matrices() {
        let mut a = Array2::<f64>::eye(3);
        a[[2, 2]] = -1.0;
        let b = Array1::zeros(3);
        assert!(matches!(cholesky_solve(&a, &b), Err(Error::Numerical(_))));
    }

    #[test]
    fn filterbank_inverse_is_consistent_in_mel_space() {
        let cfg = MelConfig::default();
        let mel = compute_mel_signal(&sine(440.0, 0.4, cfg.sample_rate), &cfg).unwrap();
        let amp = mel_to_linear_amplitude(&mel, 1e-4).unwrap();
        // Push the recovered power back through the filterbank: it should
        // reproduce the (exp of the) mel input closely.
        let fb = mel_filterbank(&cfg);
        let power = amp.mapv(|a| a * a);
        let back = fb.dot(&power);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for t in 0..mel.data.nrows() {
            for j in 0..mel.data.ncols() {
                let want = (mel.data[[t, j]] as f64).exp();
                let got = back[[j, t]] as f64;
                num += (want - got).powi(2);
                den += want.powi(2);
            }
        }
        assert!((num / den).sqrt() < 0.05, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn griffin_lim_recovers_a_sine_s_frequency() {
        let cfg = MelConfig::default();
        let freq = 440.0;
        let x = sine(freq, 0.5, cfg.sample_rate);
        let mel = compute_mel_signal(&x, &cfg).unwrap();
        let clip = mel_to_audio(&mel, &VocoderConfig { iterations: 32, ridge: 1e-4 }).unwrap();
        assert_eq!(clip.sample_rate, cfg.sample_rate);
        assert!(!clip.samples.is_empty());

        // Dominant frequency via a single long FFT of the middle chunk.
        let n = 8192;
        let mid = clip.samples.len() / 2 - n / 2;
        let mut planner = FftPlanner::<f32>::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f32>> =
            clip.samples[mid..mid + n].iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        let peak = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        let peak_hz = peak as f32 * cfg.sample_rate as f32 / n as f32;
        assert!(
            (peak_hz - freq).abs() < 30.0,
            "dominant frequency {peak_hz} Hz, expected about {freq} Hz"
        );
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let cfg = MelConfig::default();
        let mel = compute_mel_signal(&sine(330.0, 0.3, cfg.sample_rate), &cfg).unwrap();
        let a = mel_to_audio(&mel, &VocoderConfig { iterations: 8, ridge: 1e-4 }).unwrap();
        let b = mel_to_audio(&mel, &VocoderConfig { iterations: 8, ridge: 1e-4 }).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn output_length_follows_the_frame_count() {
        let cfg = MelConfig::default();
        let x = sine(500.0, 0.25, cfg.sample_rate);
        let mel = compute_mel_signal(&x, &cfg).unwrap();
        let amp = mel_to_linear_amplitude(&mel, 1e-4).unwrap();
        let y = griffin_lim(&amp, &cfg, 2).unwrap();
        assert_eq!(y.len(), (mel.data.nrows() - 1) * cfg.hop_length);
    }
}
