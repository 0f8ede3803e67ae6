//! Mel to audio and back: inverts the mel filterbank by ridge least squares,
//! recovers phase by iterative reconstruction, and checks the round trip in
//! mel space.
//!
//!     cargo run --release --example vocoder_roundtrip -- [wav] [out_wav]

use std::path::PathBuf;

use single_codec::audio::AudioClip;
use single_codec::mel::{compute_mel, MelConfig};
use single_codec::metrics::mel_l1;
use single_codec::vocoder::{mel_to_audio, VocoderConfig};

fn synth_test_tone(config: &MelConfig) -> AudioClip {
    let sr = config.sample_rate;
    let n = sr as usize; // one second
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let sweep = 220.0 + 440.0 * t;
            (2.0 * std::f32::consts::PI * sweep * t).sin() * 0.4
        })
        .collect();
    AudioClip::new(samples, sr).expect("valid clip")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let out_path =
        args.get(2).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/vocoder_out.wav"));

    let config = MelConfig::default();
    let clip = match args.get(1) {
        Some(p) => {
            let c = AudioClip::load_wav(p)?;
            if c.sample_rate == config.sample_rate { c } else { c.resample(config.sample_rate)? }
        }
        None => {
            println!("no wav given; using a one-second frequency sweep");
            synth_test_tone(&config)
        }
    };

    let mel = compute_mel(&clip, &config)?;
    println!("{} samples -> {} mel frames", clip.samples.len(), mel.n_frames());

    let voc = VocoderConfig::default();
    let recon = mel_to_audio(&mel, &voc)?;
    println!(
        "{} iterations of phase recovery -> {} samples ({:.2} s)",
        voc.iterations,
        recon.samples.len(),
        recon.duration_seconds()
    );

    // The fidelity that matters for a mel codec: the reconstruction's mel
    // should match the input mel.
    let mel2 = compute_mel(&recon, &config)?;
    let frames = mel.n_frames().min(mel2.n_frames());
    let a = mel.data.slice(ndarray::s![..frames, ..]).to_owned();
    let b = mel2.data.slice(ndarray::s![..frames, ..]).to_owned();
    println!("mel-L1 after round trip: {:.4}", mel_l1(&a, &b)?);

    recon.save_wav(&out_path)?;
    println!("wrote {}", out_path.display());
    Ok(())
}
