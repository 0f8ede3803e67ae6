//! Dataset manifests and the dual-segment training sampler.
//!
//! Training draws two slices from each utterance: a long reference segment
//! (`seg1`, 600 frames by default) that only feeds the global-embedding path,
//! and a short content segment (`seg2`, 200 frames) that the codec actually
//! reconstructs. Utterances shorter than a segment are extended by bounce
//! reflection, never by zeros: zero padding would bias the global embedding
//! toward silence.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mel::{compute_mel, MelConfig, MelSpectrogram};

/// Default reference-segment length in frames.
pub const SEG1_FRAMES: usize = 600;
/// Default content-segment length in frames.
pub const SEG2_FRAMES: usize = 200;

/// The two training slices drawn from one utterance, `[frames, n_mels]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub seg1: Array2<f32>,
    pub seg2: Array2<f32>,
    pub seg1_start: usize,
    pub seg2_start: usize,
}

/// Bounce-reflection index into a length-`n` sequence (edges not repeated).
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Platform-stable uniform draw in `0..n` from the raw 64-bit stream.
fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// Copy `len` frames starting at `start`, reflecting past the end.
fn slice_reflected(mel: &Array2<f32>, start: usize, len: usize) -> Array2<f32> {
    let n = mel.nrows();
    let mut out = Array2::zeros((len, mel.ncols()));
    for t in 0..len {
        let src = reflect_index(start + t, n);
        out.row_mut(t).assign(&mel.row(src));
    }
    out
}

/// Draw a segment pair with explicit segment lengths.
///
/// Start indices are uniform over the valid offsets; a segment longer than the
/// utterance starts at 0 and is reflection-padded on the right. `seg1` is drawn
/// before `seg2` from the same seeded stream.
pub fn sample_segments_with(
    mel: &MelSpectrogram,
    seed: u64,
    seg1_len: usize,
    seg2_len: usize,
) -> Result<SegmentPair> {
    if mel.n_frames() == 0 {
        return Err(Error::InvalidInput("mel has no frames".into()));
    }
    let n = mel.n_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, len: usize| {
        if n > len {
            uniform_index(rng, n - len + 1)
        } else {
            // Consume a draw regardless so the seg2 offset does not depend on
            // whether seg1 needed padding.
            rng.next_u64();
            0
        }
    };
    let seg1_start = draw(&mut rng, seg1_len);
    let seg2_start = draw(&mut rng, seg2_len);
    Ok(SegmentPair {
        seg1: slice_reflected(&mel.data, seg1_start, seg1_len),
        seg2: slice_reflected(&mel.data, seg2_start, seg2_len),
        seg1_start,
        seg2_start,
    })
}

/// Draw the default 600-frame reference / 200-frame content pair.
pub fn sample_segments(mel: &MelSpectrogram, seed: u64) -> Result<SegmentPair> {
    sample_segments_with(mel, seed, SEG1_FRAMES, SEG2_FRAMES)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub path: PathBuf,
    pub duration_seconds: f64,
    pub speaker_id: String,
}

/// A parsed dataset manifest: one `utterance_id \t path \t duration \t speaker_id`
/// record per line. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let duration_seconds: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad duration {:?}", fields[2]),
            })?;
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate utterance_id {:?}", fields[0]),
                });
            }
            let raw = PathBuf::from(fields[1]);
            let path = if raw.is_absolute() { raw } else { base_dir.join(raw) };
            entries.push(ManifestEntry {
                utterance_id: fields[0].to_string(),
                path,
                duration_seconds,
                speaker_id: fields[3].to_string(),
            });
        }
        Ok(Self { entries })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Entries whose audio file does not exist on disk.
    pub fn missing(&self) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| !e.path.exists()).collect()
    }

    pub fn write<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.utterance_id,
                e.path.display(),
                e.duration_seconds,
                e.speaker_id
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// A manifest with every utterance's mel held in memory.
///
/// Desk-scale corpora are minutes long, so eager loading is cheap and keeps
/// the batch stream free of per-step disk reads. Unreadable entries are
/// skipped and reported, not fatal.
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub mels: Vec<MelSpectrogram>,
    pub skipped: Vec<(String, String)>,
    pub mel_config: MelConfig,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest, mel_config: &MelConfig) -> Result<Self> {
        let mut entries = Vec::new();
        let mut mels = Vec::new();
        let mut skipped = Vec::new();
        for entry in &manifest.entries {
            let loaded = AudioClip::load_wav(&entry.path).and_then(|clip| {
                let clip = if clip.sample_rate == mel_config.sample_rate {
                    clip
                } else {
                    clip.resample(mel_config.sample_rate)?
                };
                compute_mel(&clip, mel_config)
            });
            match loaded {
                Ok(mel) => {
                    entries.push(entry.clone());
                    mels.push(mel);
                }
                Err(e) => skipped.push((entry.utterance_id.clone(), e.to_string())),
            }
        }
        Ok(Self { entries, mels, skipped, mel_config: mel_config.clone() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One shuffled pass over the dataset in batches. Shuffle order and every
    /// segment draw are functions of `seed` alone.
    pub fn batches(
        &self,
        batch_size: usize,
        seed: u64,
        seg1_len: usize,
        seg2_len: usize,
    ) -> impl Iterator<Item = Vec<SegmentPair>> + '_ {
        assert!(batch_size > 0, "batch_size must be > 0");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..self.len()).collect();
        // Fisher-Yates on the raw stream keeps the order platform-stable.
        for i in (1..order.len()).rev() {
            let j = uniform_index(&mut rng, i + 1);
            order.swap(i, j);
        }
        let items: Vec<(usize, u64)> =
            order.into_iter().map(|idx| (idx, rng.next_u64())).collect();
        items
            .chunks(batch_size)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&(idx, s)| {
                        sample_segments_with(&self.mels[idx], s, seg1_len, seg2_len)
                            .expect("loaded mel has frames")
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
    }
}

/// Load a manifest's audio and stream shuffled default-shape segment batches.
pub fn iterate_batches(
    manifest: &DatasetManifest,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<SegmentPair>>> {
    let dataset = Dataset::load(manifest, &MelConfig::default())?;
    Ok(dataset.batches(batch_size, seed, SEG1_FRAMES, SEG2_FRAMES).collect())
}

/// Stack one field of a batch into `[batch, frames, n_mels]`.
pub fn stack_segments(batch: &[SegmentPair], reference: bool) -> Array2<f32> {
    // Callers reshape; a flat [batch * frames, n_mels] array avoids a 3D dep here.
    let views: Vec<_> = batch
        .iter()
        .map(|p| if reference { p.seg1.view() } else { p.seg2.view() })
        .collect();
    ndarray::concatenate(Axis(0), &views).expect("uniform segment shapes")
}
