//! Adversarial training: generator updates (reconstruction + commitment +
//! hinge adversarial term), EMA codebook updates, and discriminator updates
//! gated by a warmup step. Whole runs are deterministic: identical configs
//! and datasets produce bit-identical loss logs.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{
    self, codebook_section, optimizer_section, store_section, CheckpointMeta,
    CHECKPOINT_VERSION,
};
use crate::convergence::LossRecord;
use crate::data::{sample_segments_with, Dataset, SegmentPair, SEG1_FRAMES, SEG2_FRAMES};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{Discriminator, DiscriminatorConfig};
use crate::params::{AdamW, ParamStore};
use crate::quantizer::{Codebook, DEFAULT_RESEED_AFTER};
use crate::variants::variant_flags;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub beta: f64,
    pub lambda_adv: f64,
    /// The adversarial term and discriminator updates start at this step.
    pub disc_start_step: u64,
    /// The commitment weight ramps linearly from zero to `beta` over this
    /// many steps. Early in training the encoder output distribution moves
    /// fast; pulling it toward the codebook from step 0 lets the commitment
    /// term and the codebook EMA contract each other into a single point
    /// (index collapse). Zero disables the ramp.
    #[serde(default)]
    pub commit_warmup_steps: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            beta: 0.25,
            lambda_adv: 0.1,
            disc_start_step: 500,
            commit_warmup_steps: 0,
        }
    }
}

impl LossWeights {
    /// Commitment weight at `step`, honoring the warmup ramp.
    pub fn beta_at(&self, step: u64) -> f64 {
        if self.commit_warmup_steps == 0 {
            return self.beta;
        }
        let ramp = (step as f64 / self.commit_warmup_steps as f64).min(1.0);
        self.beta * ramp
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub variant: String,
    pub model: ModelConfig,
    pub disc: DiscriminatorConfig,
    pub weights: LossWeights,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    /// Validation cadence in steps.
    pub val_every: u64,
    pub reseed_dead_codes: bool,
}

impl TrainConfig {
    pub fn desk(variant: &str) -> Self {
        Self {
            variant: variant.into(),
            model: ModelConfig::desk(),
            disc: DiscriminatorConfig::desk(),
            // Small corpora need a gentler adversarial schedule than the
            // full-scale defaults: hold the discriminator until
            // reconstruction has settled so it refines rather than derails
            // it. The commitment weight stays full-strength from the first
            // step — it is the only force that stops the encoder from
            // drifting its output away from the (slowly chasing) codebook,
            // and delaying it lets that drift outrun the code updates.
            weights: LossWeights {
                lambda_adv: 0.05,
                disc_start_step: 3500,
                ..LossWeights::default()
            },
            steps: 5000,
            batch_size: 16,
            lr_g: 2e-4,
            lr_d: 1e-4,
            seed: 0,
            val_every: 500,
            reseed_dead_codes: true,
        }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    /// Initialized from the first training batch's latents.
    pub codebook: Option<Codebook>,
    pub disc: Discriminator,
    pub disc_store: ParamStore,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub step: u64,
    pub records: Vec<LossRecord>,
    reseed_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let flags = variant_flags(&cfg.variant)?;
        let model = Model::new(cfg.model.clone(), flags, cfg.seed)?;
        let mut disc_store = ParamStore::new(cfg.seed ^ 0xD15C_0000);
        let disc = Discriminator::new(&mut disc_store, "disc", &cfg.disc)?;
        let opt_g = AdamW::new(cfg.lr_g);
        let opt_d = AdamW::new(cfg.lr_d);
        let reseed_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0DE_B00C);
        Ok(Self {
            cfg,
            model,
            codebook: None,
            disc,
            disc_store,
            opt_g,
            opt_d,
            step: 0,
            records: Vec::new(),
            reseed_rng,
        })
    }

    fn to_tensor(&self, flat: &Array2<f32>, batch: usize, frames: usize) -> Result<Tensor> {
        let n_mels = flat.ncols();
        let v: Vec<f32> = flat.iter().copied().collect();
        Ok(Tensor::from_vec(v, (batch, frames, n_mels), self.model.device())?)
    }

    /// Content and (for reference variants) reference tensors for a batch.
    pub fn batch_tensors(&self, batch: &[SegmentPair]) -> Result<(Tensor, Option<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let content_flat = crate::data::stack_segments(batch, false);
        let content = self.to_tensor(&content_flat, batch.len(), batch[0].seg2.nrows())?;
        let reference = if self.model.flags.use_reference {
            let ref_flat = crate::data::stack_segments(batch, true);
            Some(self.to_tensor(&ref_flat, batch.len(), batch[0].seg1.nrows())?)
        } else {
            None
        };
        Ok((content, reference))
    }

    fn ensure_codebook(&mut self, content: &Tensor, reference: Option<&Tensor>) -> Result<()> {
        if self.codebook.is_some() {
            return Ok(());
        }
        let g = match reference {
            Some(r) if self.model.flags.use_reference => {
                Some(self.model.utterance_embedding(r)?)
            }
            _ => None,
        };
        let latents = self.model.encode(content, g.as_ref())?;
        let (b, t, d) = latents.dims3()?;
        let host = latents.flatten_all()?.to_vec1::<f32>()?;
        let arr = Array2::from_shape_vec((b * t, d), host)
            .map_err(|e| Error::Shape(format!("latent stack: {e}")))?;
        let mut cb =
            Codebook::init_from_latents(&arr, self.cfg.model.codebook_size, &mut self.reseed_rng)?;
        cb.reseed_after = self.cfg.reseed_dead_codes.then_some(DEFAULT_RESEED_AFTER);
        self.codebook = Some(cb);
        Ok(())
    }

    /// One optimization step: generator update, EMA codebook update, and,
    /// once past the warmup, a discriminator update.
    pub fn train_step(&mut self, batch: &[SegmentPair]) -> Result<LossRecord> {
        let step = self.step;
        let (content, reference) = self.batch_tensors(batch)?;
        self.ensure_codebook(&content, reference.as_ref())?;
        let cb = self.codebook.as_ref().expect("just initialized");

        let out = self.model.forward(&content, reference.as_ref(), cb).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("step {step}: {msg}")),
            other => other,
        })?;
        let adv_active = step >= self.cfg.weights.disc_start_step;
        let w = &self.cfg.weights;
        let mut loss_g = ((&out.rec_l1 * w.lambda_rec)?
            + (&out.quant.commitment_loss * w.beta_at(step))?)?;
        let mut adv_value = 0.0f64;
        if adv_active {
            let d_fake = self.disc.forward(&out.mel_hat)?;
            let g_adv = d_fake.mean_all()?.neg()?;
            adv_value = g_adv.to_vec0::<f32>()? as f64;
            loss_g = (loss_g + (g_adv * w.lambda_adv)?)?;
        }

        let rec_value = out.rec_l1.to_vec0::<f32>()? as f64;
        let commit_value = out.quant.commitment_loss.to_vec0::<f32>()? as f64;
        if !rec_value.is_finite() || !commit_value.is_finite() || !adv_value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {step}: rec={rec_value} commitment={commit_value} \
                 adv={adv_value}"
            )));
        }

        let grads = loss_g.backward()?;
        self.opt_g.step(&self.model.store, &grads)?;

        // EMA update from this step's (pre-update) latents and assignments.
        let (b, t, d) = out.latents.dims3()?;
        let host = out.latents.flatten_all()?.to_vec1::<f32>()?;
        let arr = Array2::from_shape_vec((b * t, d), host)
            .map_err(|e| Error::Shape(format!("latent stack: {e}")))?;
        let cb = self.codebook.as_mut().expect("initialized above");
        cb.ema_update(&arr, &out.quant.codes, &mut self.reseed_rng)?;

        if adv_active {
            let d_real = self.disc.forward(&content)?;
            let d_fake = self.disc.forward(&out.mel_hat.detach())?;
            let loss_real = (1.0 - d_real)?.relu()?.mean_all()?;
            let loss_fake = (1.0 + d_fake)?.relu()?.mean_all()?;
            let loss_d = (loss_real + loss_fake)?;
            let d_value = loss_d.to_vec0::<f32>()? as f64;
            if !d_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite discriminator loss at step {step}"
                )));
            }
            let grads_d = loss_d.backward()?;
            self.opt_d.step(&self.disc_store, &grads_d)?;
        }

        let record = LossRecord {
            step,
            commitment: commit_value,
            rec: rec_value,
            adv: adv_value,
            perplexity: out.quant.perplexity,
        };
        self.records.push(record.clone());
        self.step += 1;
        Ok(record)
    }
}

/// Mean validation mel L1 over deterministic segments, one batch per
/// utterance. Pure function of the model, codebook, dataset, and seed.
pub fn validate(model: &Model, cb: &Codebook, ds: &Dataset, seed: u64) -> Result<f64> {
    if ds.mels.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let seg1_len = if model.flags.use_reference { model.flags.ref_len } else { SEG1_FRAMES };
    let mut total = 0.0f64;
    for (idx, mel) in ds.mels.iter().enumerate() {
        let pair = sample_segments_with(mel, seed ^ (idx as u64), seg1_len, SEG2_FRAMES)?;
        let device = model.device();
        let content = {
            let v: Vec<f32> = pair.seg2.iter().copied().collect();
            Tensor::from_vec(v, (1, pair.seg2.nrows(), pair.seg2.ncols()), device)?
        };
        let reference = if model.flags.use_reference {
            let v: Vec<f32> = pair.seg1.iter().copied().collect();
            Some(Tensor::from_vec(v, (1, pair.seg1.nrows(), pair.seg1.ncols()), device)?)
        } else {
            None
        };
        let out = model.forward(&content, reference.as_ref(), cb)?;
        total += out.rec_l1.to_vec0::<f32>()? as f64;
    }
    Ok(total / ds.mels.len() as f64)
}

pub struct TrainReport {
    /// Validation mel L1 before any update.
    pub first_val: f64,
    pub final_val: f64,
    pub final_perplexity: f64,
    pub steps_run: u64,
    pub val_history: Vec<(u64, f64)>,
    pub log_path: PathBuf,
    pub checkpoint_dir: PathBuf,
}

/// Full training run: loss log, validation history, and a checkpoint, all
/// written under `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    out_dir: &Path,
    progress: bool,
) -> Result<TrainReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let flags = trainer.model.flags;
    let seg1_len = if flags.use_reference { flags.ref_len } else { SEG1_FRAMES };

    let mut val_history: Vec<(u64, f64)> = Vec::new();
    let mut first_val = f64::NAN;
    let mut epoch = 0u64;
    let started = std::time::Instant::now();
    'outer: loop {
        let epoch_seed = cfg.seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let batches: Vec<Vec<SegmentPair>> = train_ds
            .batches(cfg.batch_size, epoch_seed, seg1_len, SEG2_FRAMES)
            .collect();
        if batches.is_empty() {
            return Err(Error::InvalidInput("training set produced no batches".into()));
        }
        for batch in batches {
            if trainer.step == 0 {
                // Baseline before any update; needs the codebook, which is
                // defined by the first batch's latents.
                let (content, reference) = trainer.batch_tensors(&batch)?;
                trainer.ensure_codebook(&content, reference.as_ref())?;
                first_val =
                    validate(&trainer.model, trainer.codebook.as_ref().unwrap(), val_ds, cfg.seed)?;
                val_history.push((0, first_val));
                if progress {
                    eprintln!("step 0 val_l1 {first_val:.4}");
                }
            }
            let rec = trainer.train_step(&batch)?;
            if progress && trainer.step % 100 == 0 {
                eprintln!(
                    "step {} rec {:.4} commit {:.4} adv {:.4} ppl {:.1} ({:.1}s)",
                    trainer.step,
                    rec.rec,
                    rec.commitment,
                    rec.adv,
                    rec.perplexity,
                    started.elapsed().as_secs_f64()
                );
            }
            if trainer.step % cfg.val_every == 0 || trainer.step >= cfg.steps {
                let v =
                    validate(&trainer.model, trainer.codebook.as_ref().unwrap(), val_ds, cfg.seed)?;
                val_history.push((trainer.step, v));
                if progress {
                    eprintln!("step {} val_l1 {v:.4}", trainer.step);
                }
            }
            if trainer.step >= cfg.steps {
                break 'outer;
            }
        }
        epoch += 1;
    }

    let log_path = out_dir.join("loss_log.tsv");
    let mut log = String::from("# step\tcommitment\trec\tadv\tperplexity\n");
    for r in &trainer.records {
        log.push_str(&r.to_line());
        log.push('\n');
    }
    std::fs::write(&log_path, log)?;

    let val_path = out_dir.join("val_history.tsv");
    let mut vh = String::from("# step\tval_mel_l1\n");
    for (s, v) in &val_history {
        vh.push_str(&format!("{s}\t{v:.6e}\n"));
    }
    std::fs::write(&val_path, vh)?;

    let checkpoint_dir = out_dir.join("checkpoint");
    let cb = trainer.codebook.as_ref().expect("training ran");
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        variant: cfg.variant.clone(),
        config: cfg.model.clone(),
        flags,
        seed: cfg.seed,
        step: trainer.step,
    };
    checkpoint::save(
        &checkpoint_dir,
        &meta,
        &[
            ("model", store_section(&trainer.model.store)),
            ("disc", store_section(&trainer.disc_store)),
            ("quantizer", codebook_section(cb, trainer.model.device())?),
            ("opt_g", optimizer_section(&trainer.opt_g)),
            ("opt_d", optimizer_section(&trainer.opt_d)),
        ],
    )?;

    let final_val = val_history.last().map(|&(_, v)| v).unwrap_or(f64::NAN);
    let final_perplexity =
        trainer.records.last().map(|r| r.perplexity).unwrap_or(0.0);
    Ok(TrainReport {
        first_val,
        final_val,
        final_perplexity,
        steps_run: trainer.step,
        val_history,
        log_path,
        checkpoint_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::data::DatasetManifest;

    fn tiny_train_config(variant: &str) -> TrainConfig {
        TrainConfig {
            variant: variant.into(),
            model: ModelConfig {
                model_dim: 8,
                conv_hiddens: [8, 8, 8],
                codebook_size: 16,
                conformer_dim: 8,
                conformer_depth: 1,
                conformer_heads: 2,
                conformer_ffn_mult: 1,
                conformer_kernel: 3,
                blstm_hidden: 4,
                blstm_layers: 1,
                ref_channels: [2, 2, 2, 2, 2, 2],
                ref_gru_hidden: 4,
                resample_units: 1,
                ..ModelConfig::default()
            },
            disc: DiscriminatorConfig { k5_widths: [2, 2, 4, 4], k3_width: 4, k5_stride: 2 },
            weights: LossWeights { disc_start_step: 2, ..LossWeights::default() },
            steps: 4,
            batch_size: 2,
            lr_g: 1e-3,
            lr_d: 1e-3,
            seed: 5,
            val_every: 2,
            reseed_dead_codes: true,
        }
    }

    fn tiny_dataset(dir: &Path) -> Dataset {
        let spec = CorpusSpec { seed: 3, n_utterances: 3, utterance_seconds: 2.0, sample_rate: 24_000 };
        let manifest_path = generate_corpus(dir, &spec).unwrap();
        let manifest = DatasetManifest::load(&manifest_path).unwrap();
        Dataset::load(&manifest, &tiny_train_config("VQVAE").model.mel()).unwrap()
    }

    fn store_checksum(ps: &ParamStore) -> f64 {
        let mut acc = 0.0f64;
        for (_, var) in ps.iter() {
            let v = var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            acc += v.iter().map(|&x| x as f64).sum::<f64>();
        }
        acc
    }

    fn batches_for(trainer: &Trainer, ds: &Dataset) -> Vec<Vec<SegmentPair>> {
        let seg1 = if trainer.model.flags.use_reference {
            trainer.model.flags.ref_len
        } else {
            SEG1_FRAMES
        };
        ds.batches(trainer.cfg.batch_size, trainer.cfg.seed, seg1, SEG2_FRAMES).collect()
    }

    #[test]
    fn warmup_gates_the_adversarial_path() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let mut trainer = Trainer::new(tiny_train_config("VQVAE")).unwrap();
        let batches = batches_for(&trainer, &ds);
        let disc_before = store_checksum(&trainer.disc_store);
        let gen_before = store_checksum(&trainer.model.store);
        let mut records = Vec::new();
        for i in 0..4 {
            let batch = &batches[i % batches.len()];
            records.push(trainer.train_step(batch).unwrap());
            if trainer.step == 2 {
                // Two warmup steps done: generator moved, discriminator has not.
                assert_eq!(store_checksum(&trainer.disc_store), disc_before);
                assert_ne!(store_checksum(&trainer.model.store), gen_before);
            }
        }
        assert_eq!(records[0].adv, 0.0);
        assert_eq!(records[1].adv, 0.0);
        assert_ne!(records[2].adv, 0.0);
        // Discriminator trains once the gate opens.
        assert_ne!(store_checksum(&trainer.disc_store), disc_before);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let run = || {
            let mut trainer = Trainer::new(tiny_train_config("Ref-short")).unwrap();
            let batches = batches_for(&trainer, &ds);
            for i in 0..3 {
                trainer.train_step(&batches[i % batches.len()]).unwrap();
            }
            let lines: Vec<String> = trainer.records.iter().map(|r| r.to_line()).collect();
            (lines, store_checksum(&trainer.model.store))
        };
        let (lines_a, sum_a) = run();
        let (lines_b, sum_b) = run();
        assert_eq!(lines_a, lines_b);
        assert_eq!(sum_a, sum_b);
    }

    #[test]
    fn codebook_comes_from_the_first_batch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let mut trainer = Trainer::new(tiny_train_config("VQVAE")).unwrap();
        assert!(trainer.codebook.is_none());
        let batches = batches_for(&trainer, &ds);
        trainer.train_step(&batches[0]).unwrap();
        let cb = trainer.codebook.as_ref().unwrap();
        assert_eq!(cb.k(), 16);
        assert_eq!(cb.dim(), 8);
        assert_eq!(cb.reseed_after, Some(DEFAULT_RESEED_AFTER));
    }

    #[test]
    fn non_finite_parameters_abort_with_the_step() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let mut trainer = Trainer::new(tiny_train_config("VQVAE")).unwrap();
        let batches = batches_for(&trainer, &ds);
        trainer.train_step(&batches[0]).unwrap();
        let w = trainer.model.store.get("enc.in.w").unwrap().as_tensor().clone();
        let bad = (w * f64::NAN).unwrap();
        trainer.model.store.set("enc.in.w", &bad).unwrap();
        let err = match trainer.train_step(&batches[0]) {
            Err(e) => e,
            Ok(_) => panic!("NaN parameters must abort the step"),
        };
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        assert!(err.to_string().contains("step 1"), "{err}");
    }

    #[test]
    fn validation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let mut trainer = Trainer::new(tiny_train_config("VQVAE")).unwrap();
        let batches = batches_for(&trainer, &ds);
        trainer.train_step(&batches[0]).unwrap();
        let cb = trainer.codebook.as_ref().unwrap();
        let a = validate(&trainer.model, cb, &ds, 9).unwrap();
        let b = validate(&trainer.model, cb, &ds, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite() && a > 0.0);
    }

    #[test]
    fn full_loop_writes_logs_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let out = dir.path().join("run");
        let report = train(&tiny_train_config("VQVAE"), &ds, &ds, &out, false).unwrap();
        assert_eq!(report.steps_run, 4);
        assert!(report.first_val.is_finite());
        assert!(report.final_val.is_finite());
        assert_eq!(report.val_history.first().unwrap().0, 0);
        let log = std::fs::read_to_string(&report.log_path).unwrap();
        let parsed = crate::convergence::parse_log(&log).unwrap();
        assert_eq!(parsed.len(), 4);
        let (model, cb, meta) = checkpoint::load_model(&report.checkpoint_dir).unwrap();
        assert_eq!(meta.step, 4);
        assert_eq!(cb.k(), 16);
        assert_eq!(model.flags.use_reference, false);
    }
}
