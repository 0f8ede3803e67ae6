//! Whole-utterance codec round trip: wav -> mel -> tokens -> mel, with the
//! token stream written to disk in between. Uses a trained checkpoint when
//! given one, otherwise a freshly initialized full codec.
//!
//!     cargo run --release --example encode_decode -- <wav> [ckpt_dir] [out_dir]

use std::path::PathBuf;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use single_codec::audio::AudioClip;
use single_codec::bitstream::{read_stream, write_stream, StreamParams};
use single_codec::checkpoint::load_model;
use single_codec::cli::{decode_tokens, encode_mel};
use single_codec::mel::compute_mel;
use single_codec::metrics::{mcd, mel_l1};
use single_codec::model::ModelConfig;
use single_codec::quantizer::Codebook;
use single_codec::variants::build_variant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let wav = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("target/corpus/utt_0000.wav"));
    let ckpt = args.get(2).map(PathBuf::from);
    let out_dir = args.get(3).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/encode-decode"));
    std::fs::create_dir_all(&out_dir)?;

    let (model, cb, config) = match &ckpt {
        Some(dir) => {
            let (model, cb, meta) = load_model(dir)?;
            println!("checkpoint {} (variant {}, step {})", dir.display(), meta.variant, meta.step);
            (model, cb, meta.config)
        }
        None => {
            let config = ModelConfig::desk();
            let model = build_variant("Single-Codec", config.clone(), 0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let cb = Codebook::new_random(config.codebook_size, config.model_dim, &mut rng);
            println!("no checkpoint given; using an untrained full codec");
            (model, cb, config)
        }
    };

    let clip = AudioClip::load_wav(&wav)?;
    let clip = if clip.sample_rate == config.sample_rate {
        clip
    } else {
        clip.resample(config.sample_rate)?
    };
    let mel = compute_mel(&clip, &config.mel())?;
    println!("{}: {:.2} s, {} mel frames", wav.display(), clip.duration_seconds(), mel.n_frames());

    let (codes, embedding, pad) = encode_mel(&model, &cb, &mel.data)?;
    let params = StreamParams {
        sample_rate: config.sample_rate,
        hop: config.hop_length as u16,
        downsample_factor: config.downsample_factor as u8,
        codebook_bits: config.codebook_bits() as u8,
        pad_frames: pad,
    };
    let stream_path = out_dir.join("utterance.scs");
    write_stream(&stream_path, &codes, &embedding, &params)?;
    let stream_bytes = std::fs::metadata(&stream_path)?.len();
    let seconds = clip.duration_seconds();
    println!(
        "{} tokens -> {} bytes on disk ({:.1} payload bps over {:.2} s)",
        codes.len(),
        stream_bytes,
        codes.len() as f64 * params.codebook_bits as f64 / seconds,
        seconds
    );

    let (codes2, embedding2, header) = read_stream(&stream_path)?;
    assert_eq!(codes, codes2);
    assert_eq!(embedding, embedding2);
    let recon = decode_tokens(&model, &cb, &codes2, &embedding2, header.pad_frames)?;
    assert_eq!(recon.nrows(), mel.n_frames());

    println!("reconstruction mel-L1 {:.4}, MCD {:.2} dB", mel_l1(&mel.data, &recon)?, mcd(&mel.data, &recon)?);
    println!("stream {}", stream_path.display());
    Ok(())
}
