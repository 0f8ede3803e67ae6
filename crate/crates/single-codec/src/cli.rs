//! Command-line front end: train, encode, decode, eval, ablate, curves.
//!
//! Every failure exits nonzero with a single `error[CODE]: text` line on
//! stderr, so scripts can match on the stable code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::{Device, Tensor};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{read_stream, write_stream, StreamParams};
use crate::checkpoint::load_model;
use crate::convergence::{classify_convergence, parse_log, CommitmentCurve};
use crate::data::{Dataset, DatasetManifest, SEG2_FRAMES};
use crate::error::{Error, Result};
use crate::mel::MelSpectrogram;
use crate::metrics::{bandwidth, mcd, mel_l1, speaker_cosine_proxy, MetricReport};
use crate::model::{Model, ModelConfig};
use crate::quantizer::{perplexity, quantize, utilization, Codebook};
use crate::train::{train, TrainConfig};
use crate::variants::{build_variant, variant_flags, VARIANT_NAMES};
use crate::vocoder::{mel_to_audio, VocoderConfig};

#[derive(Parser)]
#[command(
    name = "single-codec",
    version,
    about = "Single-sequence neural speech codec: train, code, and inspect."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a codec variant on a manifest of wav files.
    Train(TrainArgs),
    /// Encode one wav file into a token stream.
    Encode(EncodeArgs),
    /// Decode a token stream back to a mel spectrogram (optionally audio).
    Decode(DecodeArgs),
    /// Reconstruction metrics for every utterance in a manifest.
    Eval(EvalArgs),
    /// Build the variant matrix and report per-variant metrics.
    Ablate(AblateArgs),
    /// Classify the commitment-loss trajectory of a training log.
    Curves(CurvesArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Variant name, e.g. "Single-Codec" or "VQVAE".
    #[arg(long, default_value = "Single-Codec")]
    pub variant: String,
    /// Manifest of training audio; the last tenth is held out for validation.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the loss log, validation history, and checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_every: Option<u64>,
    /// Suppress per-step progress on stderr.
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Checkpoint directory produced by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    /// Output token-stream path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Token stream produced by `encode`.
    #[arg(long)]
    pub tokens: PathBuf,
    /// Output mel spectrogram as tab-separated text, one frame per line.
    #[arg(long)]
    pub out_mel: PathBuf,
    /// Also reconstruct a waveform by iterative phase recovery.
    #[arg(long)]
    pub griffin_lim_wav: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output report path (tab-separated, one row per utterance plus an
    /// aggregate row).
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Variants to include; defaults to all eight.
    #[arg(long, num_args = 1..)]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct CurvesArgs {
    /// Training loss log (as written by `train`).
    #[arg(long)]
    pub log: PathBuf,
    /// Print only the classification word.
    #[arg(long, default_value_t = false)]
    pub classify: bool,
}

/// Parse std::env args, dispatch, and map any error to a single stderr line.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}

pub fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Train(a) => run_train(a),
        Command::Encode(a) => run_encode(a),
        Command::Decode(a) => run_decode(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Curves(a) => run_curves(a),
    }
}

fn run_train(a: &TrainArgs) -> Result<()> {
    variant_flags(&a.variant)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let n = manifest.entries.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "manifest has {n} utterance(s); the train/val split needs at least 2"
        )));
    }
    let n_val = (n / 10).max(1);
    let split = n - n_val;
    let train_manifest = DatasetManifest { entries: manifest.entries[..split].to_vec() };
    let val_manifest = DatasetManifest { entries: manifest.entries[split..].to_vec() };

    let mut cfg = TrainConfig::desk(&a.variant);
    cfg.steps = a.steps;
    cfg.seed = a.seed;
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(v) = a.val_every {
        cfg.val_every = v;
    }

    let train_ds = Dataset::load(&train_manifest, &cfg.model.mel())?;
    let val_ds = Dataset::load(&val_manifest, &cfg.model.mel())?;
    warn_skipped(&train_ds);
    warn_skipped(&val_ds);
    let report = train(&cfg, &train_ds, &val_ds, &a.out, !a.quiet)?;

    println!(
        "val mel-L1 {:.4} -> {:.4} ({:.1}% lower) over {} steps",
        report.first_val,
        report.final_val,
        100.0 * (1.0 - report.final_val / report.first_val),
        report.steps_run
    );
    println!("final perplexity {:.1}", report.final_perplexity);
    println!("loss log {}", report.log_path.display());
    println!("checkpoint {}", report.checkpoint_dir.display());
    Ok(())
}

fn warn_skipped(ds: &Dataset) {
    for (id, why) in &ds.skipped {
        eprintln!("skipping {id}: {why}");
    }
}

fn run_encode(a: &EncodeArgs) -> Result<()> {
    let (model, cb, meta) = load_model(&a.ckpt)?;
    let mel = load_wav_mel(&a.wav, &meta.config)?;
    let (codes, embedding, pad_frames) = encode_mel(&model, &cb, &mel.data)?;

    let params = StreamParams {
        sample_rate: meta.config.sample_rate,
        hop: meta.config.hop_length as u16,
        downsample_factor: meta.config.downsample_factor as u8,
        codebook_bits: meta.config.codebook_bits() as u8,
        pad_frames,
    };
    write_stream(&a.out, &codes, &embedding, &params)?;
    println!(
        "{} frames -> {} tokens ({} bits each), pad {pad_frames}, wrote {}",
        mel.data.nrows(),
        codes.len(),
        params.codebook_bits,
        a.out.display()
    );
    Ok(())
}

fn run_decode(a: &DecodeArgs) -> Result<()> {
    let (model, cb, meta) = load_model(&a.ckpt)?;
    let (codes, embedding, header) = read_stream(&a.tokens)?;

    let cfg = &meta.config;
    if header.sample_rate != cfg.sample_rate
        || header.hop as usize != cfg.hop_length
        || header.downsample_factor as usize != cfg.downsample_factor
        || header.codebook_bits as u32 != cfg.codebook_bits()
    {
        return Err(Error::ConfigMismatch(format!(
            "stream header (sr {}, hop {}, down {}, bits {}) does not match the \
             checkpoint (sr {}, hop {}, down {}, bits {})",
            header.sample_rate,
            header.hop,
            header.downsample_factor,
            header.codebook_bits,
            cfg.sample_rate,
            cfg.hop_length,
            cfg.downsample_factor,
            cfg.codebook_bits()
        )));
    }

    let data = decode_tokens(&model, &cb, &codes, &embedding, header.pad_frames)?;
    write_mel_tsv(&a.out_mel, &data)?;
    println!("{} tokens -> {} mel frames, wrote {}", codes.len(), data.nrows(), a.out_mel.display());

    if let Some(wav_path) = &a.griffin_lim_wav {
        let mel = MelSpectrogram { data, config: cfg.mel() };
        let clip = mel_to_audio(&mel, &VocoderConfig::default())?;
        clip.save_wav(wav_path)?;
        println!("wrote {} ({:.2} s)", wav_path.display(), clip.duration_seconds());
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (model, cb, meta) = load_model(&a.ckpt)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let ds = Dataset::load(&manifest, &meta.config.mel())?;
    warn_skipped(&ds);

    let mut lines = vec![format!("utterance\t{}", MetricReport::TSV_HEADER)];
    let mut reports = Vec::new();
    for (entry, mel) in ds.entries.iter().zip(&ds.mels) {
        let r = roundtrip_report(&model, &cb, &meta.config, &mel.data)?;
        lines.push(format!("{}\t{}", entry.utterance_id, r.tsv_row()));
        reports.push(r);
    }
    let agg = MetricReport::aggregate(&reports).ok_or_else(|| {
        Error::InsufficientData("no utterances were evaluated".into())
    })?;
    lines.push(format!("aggregate\t{}", agg.tsv_row()));
    std::fs::write(&a.report, lines.join("\n") + "\n")?;

    println!("utterance\t{}", MetricReport::TSV_HEADER);
    println!("aggregate\t{}", agg.tsv_row());
    println!("report {}", a.report.display());
    Ok(())
}

fn run_ablate(a: &AblateArgs) -> Result<()> {
    let names: Vec<String> = if a.variants.is_empty() {
        VARIANT_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.variants.clone()
    };
    for name in &names {
        variant_flags(name)?;
    }

    let config = ModelConfig::desk();
    let manifest = DatasetManifest::load(&a.manifest)?;
    let ds = Dataset::load(&manifest, &config.mel())?;
    warn_skipped(&ds);
    if ds.mels.is_empty() {
        return Err(Error::InsufficientData("no usable utterances in the manifest".into()));
    }

    let mut lines = vec![format!("variant\t{}", MetricReport::TSV_HEADER)];
    for name in &names {
        let model = build_variant(name, config.clone(), a.seed)?;
        // One shared codebook initialization keeps the comparison controlled.
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0xB00C_5EED);
        let cb = Codebook::new_random(config.codebook_size, config.model_dim, &mut rng);

        let mut reports = Vec::new();
        for mel in &ds.mels {
            reports.push(roundtrip_report(&model, &cb, &config, &mel.data)?);
        }
        let agg = MetricReport::aggregate(&reports).expect("nonempty by the check above");
        lines.push(format!("{name}\t{}", agg.tsv_row()));
    }
    std::fs::write(&a.report, lines.join("\n") + "\n")?;
    for line in &lines {
        println!("{line}");
    }
    Ok(())
}

fn run_curves(a: &CurvesArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.log)?;
    let records = parse_log(&text)?;
    let window = (records.len() / 10).clamp(3, 50);
    let curve = CommitmentCurve::from_records(&records, window)?;
    let class = classify_convergence(&curve)?;
    if a.classify {
        println!("{class}");
    } else {
        let first = curve.values.first().copied().unwrap_or(f64::NAN);
        let last = curve.values.last().copied().unwrap_or(f64::NAN);
        println!("{} commitment records, smoothing window {window}", records.len());
        println!("commitment {first:.6e} -> {last:.6e}");
        println!("classification: {class}");
    }
    Ok(())
}

/// Load a wav, resampling to the model rate if needed, and take its mel.
fn load_wav_mel(path: &Path, config: &ModelConfig) -> Result<MelSpectrogram> {
    let clip = crate::audio::AudioClip::load_wav(path)?;
    let clip =
        if clip.sample_rate == config.sample_rate { clip } else { clip.resample(config.sample_rate)? };
    crate::mel::compute_mel(&clip, &config.mel())
}

/// Index into a sequence mirror-extended past its end (bounce reflection).
fn mirror_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Extend `data` along frames to `target` rows by reflecting at the tail.
fn mirror_extend(data: &Array2<f32>, target: usize) -> Array2<f32> {
    let n = data.nrows();
    Array2::from_shape_fn((target, data.ncols()), |(i, j)| data[[mirror_index(i, n), j]])
}

/// Chunked whole-utterance encode: one global embedding from the full mel,
/// content coded in fixed windows, final window mirror-padded.
///
/// Returns the token sequence, the (possibly empty) embedding, and the pad.
pub fn encode_mel(
    model: &Model,
    cb: &Codebook,
    mel: &Array2<f32>,
) -> Result<(Vec<u32>, Vec<f32>, u16)> {
    let frames = mel.nrows();
    let m = mel.ncols();
    if frames == 0 {
        return Err(Error::InvalidInput("cannot encode an empty mel".into()));
    }
    if m != model.config.n_mels {
        return Err(Error::Shape(format!(
            "mel has {m} bands, model expects {}",
            model.config.n_mels
        )));
    }
    let device = Device::Cpu;
    let n_chunks = frames.div_ceil(SEG2_FRAMES);
    let padded_len = n_chunks * SEG2_FRAMES;
    let pad = (padded_len - frames) as u16;

    let padded = mirror_extend(mel, padded_len);
    let content = Tensor::from_vec(
        padded.iter().copied().collect::<Vec<f32>>(),
        (n_chunks, SEG2_FRAMES, m),
        &device,
    )?;

    let g = if model.flags.use_reference {
        let whole = Tensor::from_vec(
            mel.iter().copied().collect::<Vec<f32>>(),
            (1, frames, m),
            &device,
        )?;
        Some(model.utterance_embedding(&whole)?)
    } else {
        None
    };

    let latents = model.encode(&content, g.as_ref())?;
    let result = quantize(&latents, cb)?;
    let embedding = match &g {
        Some(t) => t.flatten_all()?.to_vec1::<f32>()?,
        None => Vec::new(),
    };
    Ok((result.codes, embedding, pad))
}

/// Inverse of [`encode_mel`]: tokens and embedding back to mel frames.
pub fn decode_tokens(
    model: &Model,
    cb: &Codebook,
    codes: &[u32],
    embedding: &[f32],
    pad_frames: u16,
) -> Result<Array2<f32>> {
    let per_chunk = SEG2_FRAMES / model.config.downsample_factor;
    if codes.is_empty() {
        return Err(Error::InvalidInput("token stream holds no codes".into()));
    }
    if codes.len() % per_chunk != 0 {
        return Err(Error::Format {
            offset: None,
            msg: format!(
                "token count {} is not a multiple of the {per_chunk}-token chunk size",
                codes.len()
            ),
        });
    }
    let n_chunks = codes.len() / per_chunk;
    let total_frames = n_chunks * SEG2_FRAMES;
    if pad_frames as usize >= SEG2_FRAMES || pad_frames as usize >= total_frames {
        return Err(Error::Format {
            offset: None,
            msg: format!("pad of {pad_frames} frames exceeds the decoded length"),
        });
    }

    let device = Device::Cpu;
    let g = match (model.flags.use_reference, embedding.is_empty()) {
        (true, true) => {
            return Err(Error::ConfigMismatch(
                "checkpoint variant needs a global embedding but the stream has none".into(),
            ))
        }
        (false, false) => {
            return Err(Error::ConfigMismatch(
                "stream carries a global embedding but the checkpoint variant has no \
                 reference encoder"
                    .into(),
            ))
        }
        (true, false) => {
            if embedding.len() != model.config.model_dim {
                return Err(Error::ConfigMismatch(format!(
                    "stream embedding has {} dims, model uses {}",
                    embedding.len(),
                    model.config.model_dim
                )));
            }
            Some(Tensor::from_vec(embedding.to_vec(), (1, embedding.len()), &device)?)
        }
        (false, true) => None,
    };

    let q = cb
        .lookup(codes, &device)?
        .reshape((n_chunks, per_chunk, model.config.model_dim))?;
    let mel_hat = model.decode(&q, g.as_ref())?;
    let m = model.config.n_mels;
    let rows = mel_hat.reshape((total_frames, m))?.to_vec2::<f32>()?;

    let keep = total_frames - pad_frames as usize;
    let mut out = Array2::<f32>::zeros((keep, m));
    for (i, row) in rows.into_iter().take(keep).enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Code and reconstruct one utterance, returning its metric row.
fn roundtrip_report(
    model: &Model,
    cb: &Codebook,
    config: &ModelConfig,
    mel: &Array2<f32>,
) -> Result<MetricReport> {
    let (codes, embedding, pad) = encode_mel(model, cb, mel)?;
    let recon = decode_tokens(model, cb, &codes, &embedding, pad)?;
    Ok(MetricReport {
        mcd: mcd(mel, &recon)?,
        mel_l1: mel_l1(mel, &recon)?,
        speaker_cosine: speaker_cosine_proxy(mel, &recon)?,
        perplexity: perplexity(&codes, cb.k())?,
        utilization: utilization(&codes, cb.k())?,
        bandwidth_bps: bandwidth(
            config.sample_rate,
            config.hop_length as u32,
            config.downsample_factor as u32,
            config.codebook_size as u32,
        ),
        external: Default::default(),
    })
}

fn write_mel_tsv(path: &Path, data: &Array2<f32>) -> Result<()> {
    let mut out = String::new();
    for row in data.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_mel(seed: u64, frames: usize, mels: usize) -> Array2<f32> {
        use rand_chacha::rand_core::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((frames, mels), |_| {
            rng.next_u32() as f32 / u32::MAX as f32 * 4.0 - 6.0
        })
    }

    fn desk_model(name: &str) -> (Model, Codebook) {
        let config = ModelConfig::desk();
        let model = build_variant(name, config.clone(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cb = Codebook::new_random(config.codebook_size, config.model_dim, &mut rng);
        (model, cb)
    }

    #[test]
    fn mirror_index_bounces_between_the_ends() {
        // n = 4: 0 1 2 3 2 1 0 1 2 3 ...
        let want = [0, 1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1];
        for (i, &w) in want.iter().enumerate() {
            assert_eq!(mirror_index(i, 4), w, "index {i}");
        }
        for i in 0..10 {
            assert_eq!(mirror_index(i, 1), 0);
        }
    }

    #[test]
    fn mirror_extend_keeps_the_prefix_intact() {
        let data = rand_mel(0, 94, 5);
        let ext = mirror_extend(&data, 200);
        assert_eq!(ext.nrows(), 200);
        for i in 0..94 {
            for j in 0..5 {
                assert_eq!(ext[[i, j]], data[[i, j]]);
            }
        }
        // First reflected row mirrors the second-to-last real row.
        assert_eq!(ext[[94, 0]], data[[92, 0]]);
    }

    #[test]
    fn encode_decode_round_trip_shapes_and_determinism() {
        let (model, cb) = desk_model("Single-Codec");
        let mel = rand_mel(3, 431, 100);

        let (codes, g, pad) = encode_mel(&model, &cb, &mel).unwrap();
        assert_eq!(codes.len(), 431usize.div_ceil(200) * 50);
        assert_eq!(pad, (3 * 200 - 431) as u16);
        assert_eq!(g.len(), model.config.model_dim);

        let recon = decode_tokens(&model, &cb, &codes, &g, pad).unwrap();
        assert_eq!(recon.nrows(), 431);
        assert_eq!(recon.ncols(), 100);

        let (codes2, g2, pad2) = encode_mel(&model, &cb, &mel).unwrap();
        let recon2 = decode_tokens(&model, &cb, &codes2, &g2, pad2).unwrap();
        assert_eq!(codes, codes2);
        assert_eq!(g, g2);
        assert_eq!(recon, recon2);
    }

    #[test]
    fn plain_variant_encodes_without_an_embedding() {
        let (model, cb) = desk_model("VQVAE");
        let mel = rand_mel(4, 200, 100);
        let (codes, g, pad) = encode_mel(&model, &cb, &mel).unwrap();
        assert_eq!(codes.len(), 50);
        assert!(g.is_empty());
        assert_eq!(pad, 0);
        let recon = decode_tokens(&model, &cb, &codes, &g, pad).unwrap();
        assert_eq!(recon.dim(), (200, 100));
    }

    #[test]
    fn decode_rejects_mismatched_embedding_and_variant() {
        let (model, cb) = desk_model("VQVAE");
        let codes = vec![0u32; 50];
        let err = decode_tokens(&model, &cb, &codes, &[0.0; 64], 0).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));

        let (model, cb) = desk_model("Single-Codec");
        let err = decode_tokens(&model, &cb, &codes, &[], 0).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));
    }

    #[test]
    fn decode_rejects_broken_streams() {
        let (model, cb) = desk_model("VQVAE");
        assert!(matches!(
            decode_tokens(&model, &cb, &[], &[], 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            decode_tokens(&model, &cb, &vec![0u32; 49], &[], 0),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            decode_tokens(&model, &cb, &vec![0u32; 50], &[], 200),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn chunked_encode_matches_single_chunk_encode_on_aligned_input() {
        // A 400-frame utterance is exactly two chunks; coding it whole must
        // agree with coding each half against the same embedding.
        let (model, cb) = desk_model("Single-Codec");
        let mel = rand_mel(9, 400, 100);
        let (codes, g, pad) = encode_mel(&model, &cb, &mel).unwrap();
        assert_eq!(pad, 0);
        assert_eq!(codes.len(), 100);

        let device = Device::Cpu;
        let whole = Tensor::from_vec(
            mel.iter().copied().collect::<Vec<f32>>(),
            (1, 400, 100),
            &device,
        )
        .unwrap();
        let g_t = model.utterance_embedding(&whole).unwrap();
        let mut per_half = Vec::new();
        for half in 0..2 {
            let chunk = rand_mel_slice(&mel, half * 200, 200);
            let t = Tensor::from_vec(chunk, (1, 200, 100), &device).unwrap();
            let latents = model.encode(&t, Some(&g_t)).unwrap();
            per_half.extend(quantize(&latents, &cb).unwrap().codes);
        }
        assert_eq!(codes, per_half);
        drop(g);
    }

    fn rand_mel_slice(mel: &Array2<f32>, start: usize, len: usize) -> Vec<f32> {
        let mut v = Vec::with_capacity(len * mel.ncols());
        for i in start..start + len {
            for j in 0..mel.ncols() {
                v.push(mel[[i, j]]);
            }
        }
        v
    }
}
