//! Deterministic synthetic speech-like corpus: a single "speaker" built from
//! a pulse-train source through drifting formant resonators, with fricative
//! noise and silences. Every utterance is a pure function of the corpus seed
//! and its index, so generated datasets are reproducible byte for byte.

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::data::{DatasetManifest, ManifestEntry};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_utterances: usize,
    pub utterance_seconds: f64,
    pub sample_rate: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        // Roughly ten minutes of audio in total.
        Self { seed: 0, n_utterances: 40, utterance_seconds: 15.0, sample_rate: 24_000 }
    }
}

/// Two-pole resonator, the classic formant filter.
struct Resonator {
    r: f32,
    y1: f32,
    y2: f32,
}

impl Resonator {
    fn new(r: f32) -> Self {
        Self { r, y1: 0.0, y2: 0.0 }
    }

    fn process(&mut self, x: f32, freq: f32, sr: f32) -> f32 {
        let theta = 2.0 * std::f32::consts::PI * freq / sr;
        let y = x + 2.0 * self.r * theta.cos() * self.y1 - self.r * self.r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f32 {
    (rng.next_u32() as f64 / (u32::MAX as f64 + 1.0)) as f32
}

fn range(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    lo + (hi - lo) * unit(rng)
}

#[derive(Clone, Copy, PartialEq)]
enum Segment {
    Voiced,
    Fricative,
    Silence,
}

/// One utterance of the synthetic speaker. Deterministic in `(spec.seed, index)`.
pub fn synth_utterance(spec: &CorpusSpec, index: usize) -> AudioClip {
    let sr = spec.sample_rate as f32;
    let n = (spec.utterance_seconds * spec.sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1)));

    // Speaker identity: fixed formant centers and pitch range for the corpus.
    let mut id_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base_formants =
        [range(&mut id_rng, 450.0, 650.0), range(&mut id_rng, 1300.0, 1700.0), range(&mut id_rng, 2400.0, 2800.0)];
    let f0_lo = range(&mut id_rng, 90.0, 110.0);
    let f0_hi = f0_lo + range(&mut id_rng, 25.0, 45.0);

    let mut resonators = [Resonator::new(0.985), Resonator::new(0.98), Resonator::new(0.975)];
    let weights = [1.0f32, 0.7, 0.4];

    let mut out = vec![0.0f32; n];
    let mut phase = 0.0f32;
    let mut f0 = range(&mut rng, f0_lo, f0_hi);
    let mut formants = base_formants;
    let mut targets = base_formants;
    // One-pole slew of about 30 ms toward segment targets.
    let slew = 1.0 - (-1.0 / (0.03 * sr)).exp();

    let mut pos = 0usize;
    while pos < n {
        let (seg, dur_s) = {
            let roll = unit(&mut rng);
            if roll < 0.60 {
                (Segment::Voiced, range(&mut rng, 0.12, 0.35))
            } else if roll < 0.85 {
                (Segment::Fricative, range(&mut rng, 0.06, 0.18))
            } else {
                (Segment::Silence, range(&mut rng, 0.04, 0.15))
            }
        };
        let seg_len = ((dur_s * sr) as usize).max(1).min(n - pos);
        let f0_target = range(&mut rng, f0_lo, f0_hi);
        if seg == Segment::Voiced {
            // New vowel: move every formant to a fresh target near its base.
            for (t, b) in targets.iter_mut().zip(&base_formants) {
                *t = b * range(&mut rng, 0.75, 1.3);
            }
        } else if seg == Segment::Fricative {
            targets = [base_formants[2] * 1.1, base_formants[2] * 1.5, base_formants[2] * 1.9];
        }
        let gain = match seg {
            Segment::Voiced => 1.0,
            Segment::Fricative => 0.25,
            Segment::Silence => 0.0,
        };
        let edge = ((0.015 * sr) as usize).max(1);
        for i in 0..seg_len {
            let t = pos + i;
            f0 += (f0_target - f0) * slew * 0.3;
            for (f, tg) in formants.iter_mut().zip(&targets) {
                *f += (tg - *f) * slew;
            }
            // Raised-cosine edges against clicks.
            let env = {
                let a = if i < edge { i as f32 / edge as f32 } else { 1.0 };
                let b = if seg_len - 1 - i < edge {
                    (seg_len - 1 - i) as f32 / edge as f32
                } else {
                    1.0
                };
                let e = a.min(b);
                0.5 - 0.5 * (std::f32::consts::PI * e).cos()
            };
            let source = match seg {
                Segment::Voiced => {
                    phase += f0 / sr;
                    let pulse = if phase >= 1.0 {
                        phase -= 1.0;
                        1.0
                    } else {
                        0.0
                    };
                    pulse + 0.02 * (unit(&mut rng) - 0.5)
                }
                Segment::Fricative => unit(&mut rng) - 0.5,
                Segment::Silence => 0.002 * (unit(&mut rng) - 0.5),
            };
            let mut y = 0.05 * source;
            for k in 0..resonators.len() {
                y += weights[k] * resonators[k].process(source, formants[k], sr);
            }
            out[t] = y * gain * env;
        }
        pos += seg_len;
    }

    normalize(&mut out);
    AudioClip { samples: out, sample_rate: spec.sample_rate }
}

fn normalize(samples: &mut [f32]) {
    let peak = samples.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 1e-9 {
        let s = 0.5 / peak;
        for v in samples.iter_mut() {
            *v *= s;
        }
    }
}

/// Writes `utt_0000.wav .. utt_{n-1}.wav` plus `manifest.tsv` into `dir`.
/// Returns the manifest path.
pub fn generate_corpus(dir: &Path, spec: &CorpusSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(spec.n_utterances);
    for i in 0..spec.n_utterances {
        let clip = synth_utterance(spec, i);
        let name = format!("utt_{i:04}.wav");
        clip.save_wav(dir.join(&name))?;
        entries.push(ManifestEntry {
            utterance_id: format!("utt_{i:04}"),
            path: PathBuf::from(&name),
            duration_seconds: clip.duration_seconds(),
            speaker_id: "synth0".into(),
        });
    }
    let manifest = DatasetManifest { entries };
    let path = dir.join("manifest.tsv");
    manifest.write(&path)?;
    Ok(path)
}
