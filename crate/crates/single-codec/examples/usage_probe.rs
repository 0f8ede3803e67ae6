//! Temporary diagnostic: per-step codebook usage statistics on the real
//! corpus, to watch how assignments spread (or collapse) early in training.

use std::collections::BTreeMap;

use single_codec::data::{Dataset, DatasetManifest, SEG2_FRAMES};
use single_codec::error::Result;
use single_codec::train::{TrainConfig, Trainer};

fn main() -> Result<()> {
    let manifest = DatasetManifest::load("target/acceptance/corpus/manifest.tsv")?;
    let cfg = TrainConfig::desk("Single-Codec");
    let ds = Dataset::load(&manifest, &cfg.model.mel())?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(70);

    let seg1 = trainer.model.flags.ref_len;

    // Stage-by-stage spread at init, on the first batch.
    {
        let epoch_batches: Vec<_> = ds.batches(cfg.batch_size, cfg.seed, seg1, SEG2_FRAMES).collect();
        let (content, reference) = trainer.batch_tensors(&epoch_batches[0])?;
        let g = match reference.as_ref() {
            Some(r) => Some(trainer.model.utterance_embedding(r)?),
            None => None,
        };
        let (latents, trace) = trainer.model.encode_traced(&content, g.as_ref())?;
        for (name, t) in [
            ("mel_in", &content),
            ("backbone_out", &trace.backbone_out),
            ("pre_blstm", &trace.pre_blstm),
            ("latents", &latents),
        ] {
            // Per-dim mean removed: what's left varies with the input, the
            // removed part is the constant bias profile.
            let (b, tt, d) = t.dims3()?;
            let v = t.flatten_all()?.to_vec1::<f32>()?;
            let rows = b * tt;
            let mut mean = vec![0f64; d];
            for r in 0..rows {
                for j in 0..d {
                    mean[j] += v[r * d + j] as f64;
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            let mut var = vec![0f64; d];
            for r in 0..rows {
                for j in 0..d {
                    let diff = v[r * d + j] as f64 - mean[j];
                    var[j] += diff * diff;
                }
            }
            let signal_std =
                var.iter().map(|x| (x / rows as f64).sqrt()).sum::<f64>() / d as f64;
            let bias_norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
            println!(
                "init stage {name:13} signal_std(per-dim) {signal_std:9.5} bias_norm {bias_norm:8.3}"
            );
        }
    }

    'outer: for epoch in 0..u64::MAX {
        let epoch_seed = cfg.seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let batches: Vec<_> = ds.batches(cfg.batch_size, epoch_seed, seg1, SEG2_FRAMES).collect();
        for batch in batches {
            let step = trainer.step;
            let rec = trainer.train_step(&batch)?;
            let cb = trainer.codebook.as_ref().unwrap();

            // Post-update codebook stats.
            let mut sizes: Vec<(usize, f32)> =
                cb.ema_cluster_size.iter().copied().enumerate().collect();
            sizes.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let live = cb.ema_cluster_size.iter().filter(|&&s| s > 1.0).count();
            let max_unused = *cb.unused_steps.iter().max().unwrap();

            // This step's assignment distribution.
            let records = trainer.records.last().unwrap();
            let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
            // codes are not stored in records; recompute distinct from ppl only.
            let _ = records;
            let (content, reference) = trainer.batch_tensors(&batch)?;
            let out = trainer.model.forward(&content, reference.as_ref(), cb)?;
            for &c in &out.quant.codes {
                *hist.entry(c).or_default() += 1;
            }
            let distinct = hist.len();
            let top = hist.iter().max_by_key(|(_, &n)| n).map(|(&c, &n)| (c, n)).unwrap();

            // Latent spread.
            let (b, t, d) = out.latents.dims3()?;
            let host = out.latents.flatten_all()?.to_vec1::<f32>()?;
            let n = (b * t) as f64;
            let mut mean = vec![0f64; d];
            for row in 0..(b * t) {
                for j in 0..d {
                    mean[j] += host[row * d + j] as f64;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let mut var = vec![0f64; d];
            for row in 0..(b * t) {
                for j in 0..d {
                    let diff = host[row * d + j] as f64 - mean[j];
                    var[j] += diff * diff;
                }
            }
            let avg_std = (var.iter().map(|v| (v / n).sqrt()).sum::<f64>()) / d as f64;
            let mean_norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();

            println!(
                "step {step:3} ppl {:7.1} distinct {distinct:4} top ({}, {:3}) live {live:5} \
                 max_unused {max_unused:3} lat_std {avg_std:.4} lat_mean_norm {mean_norm:.3} \
                 rec {:.4} commit {:.5}",
                rec.perplexity, top.0, top.1, rec.rec, rec.commitment
            );
            if trainer.step >= steps {
                break 'outer;
            }
        }
    }
    Ok(())
}
