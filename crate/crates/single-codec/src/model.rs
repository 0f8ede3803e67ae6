//! The codec model: utterance-level reference encoder, convolutional content
//! encoder with optional hybrid downsampling, resampling bottleneck,
//! Conformer context, reference subtraction, BLSTM smoothing, and the mirror
//! decoder. Every architectural toggle lives in [`VariantFlags`] so ablations
//! differ only by construction, never by separate code paths.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::mel::MelConfig;
use crate::nn::{
    BLstm, ConformerStack, Conv1d, HybridDown, HybridUp, Linear, PlainDown, PlainUp,
    ReferenceEncoder, ResampleBlock, ResidualUnit,
};
use crate::params::ParamStore;
use crate::quantizer::{quantize, Codebook, QuantizationResult};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    /// Width of the latent sequence fed to the quantizer.
    pub model_dim: usize,
    /// Encoder conv widths, narrow to wide; the decoder mirrors them.
    pub conv_hiddens: [usize; 3],
    /// Total temporal reduction from mel frames to latent frames.
    pub downsample_factor: usize,
    pub codebook_size: usize,
    pub conformer_dim: usize,
    pub conformer_depth: usize,
    pub conformer_heads: usize,
    pub conformer_ffn_mult: usize,
    pub conformer_kernel: usize,
    pub blstm_hidden: usize,
    pub blstm_layers: usize,
    pub ref_channels: [usize; 6],
    pub ref_gru_hidden: usize,
    /// Internal factor of the resampling bottleneck.
    pub resample_factor: usize,
    pub resample_units: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 100,
            fmin: 0.0,
            fmax: 12_000.0,
            model_dim: 256,
            conv_hiddens: [256, 512, 1024],
            downsample_factor: 4,
            codebook_size: 8192,
            conformer_dim: 1024,
            conformer_depth: 4,
            conformer_heads: 4,
            conformer_ffn_mult: 4,
            conformer_kernel: 31,
            blstm_hidden: 128,
            blstm_layers: 2,
            ref_channels: [32, 32, 64, 64, 128, 128],
            ref_gru_hidden: 128,
            resample_factor: 2,
            resample_units: 2,
        }
    }
}

impl ModelConfig {
    /// Narrow widths for CPU-scale training runs. Rates, frame geometry, and
    /// codebook size match the full model, so the token stream and its
    /// bandwidth are unchanged.
    pub fn desk() -> Self {
        Self {
            model_dim: 64,
            conv_hiddens: [64, 96, 128],
            conformer_dim: 128,
            conformer_depth: 2,
            conformer_kernel: 15,
            blstm_hidden: 64,
            ref_channels: [8, 8, 16, 16, 32, 32],
            ref_gru_hidden: 32,
            resample_units: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.downsample_factor != 4 {
            return Err(Error::Config(format!(
                "this architecture downsamples by two stride-2 stages; \
                 downsample_factor must be 4, got {}",
                self.downsample_factor
            )));
        }
        if self.model_dim == 0 || self.conv_hiddens.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.conformer_dim % self.conformer_heads != 0 {
            return Err(Error::Config(format!(
                "conformer_heads {} must divide conformer_dim {}",
                self.conformer_heads, self.conformer_dim
            )));
        }
        if self.conformer_kernel % 2 == 0 {
            return Err(Error::Config("conformer_kernel must be odd".into()));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook needs at least two entries".into()));
        }
        if self.blstm_layers == 0 || self.blstm_hidden == 0 {
            return Err(Error::Config("blstm geometry must be nonzero".into()));
        }
        if self.resample_factor == 0 {
            return Err(Error::Config("resample_factor must be nonzero".into()));
        }
        self.mel().validate()
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            sample_rate: self.sample_rate,
            n_fft: self.n_fft,
            win_length: self.win_length,
            hop_length: self.hop_length,
            n_mels: self.n_mels,
            fmin: self.fmin,
            fmax: self.fmax,
            log_floor: 1e-5,
        }
    }

    pub fn codebook_bits(&self) -> u32 {
        (self.codebook_size as f64).log2().ceil() as u32
    }

    pub fn tokens_per_second(&self) -> f64 {
        self.sample_rate as f64 / (self.hop_length as f64 * self.downsample_factor as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VariantFlags {
    pub use_reference: bool,
    /// Reference segment length in frames during training.
    pub ref_len: usize,
    pub use_blstm: bool,
    pub use_hybrid: bool,
    pub use_conformer: bool,
    pub use_resample: bool,
}

impl VariantFlags {
    pub fn none() -> Self {
        Self {
            use_reference: false,
            ref_len: 0,
            use_blstm: false,
            use_hybrid: false,
            use_conformer: false,
            use_resample: false,
        }
    }

    pub fn all(ref_len: usize) -> Self {
        Self {
            use_reference: true,
            ref_len,
            use_blstm: true,
            use_hybrid: true,
            use_conformer: true,
            use_resample: true,
        }
    }
}

enum DownStage {
    Hybrid(HybridDown),
    Plain(PlainDown),
}

impl DownStage {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        factor: usize,
        hybrid: bool,
    ) -> Result<Self> {
        Ok(if hybrid {
            Self::Hybrid(HybridDown::new(ps, name, channels, factor)?)
        } else {
            Self::Plain(PlainDown::new(ps, name, channels, factor)?)
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Self::Hybrid(s) => s.forward(x),
            Self::Plain(s) => s.forward(x),
        }
    }
}

enum UpStage {
    Hybrid(HybridUp),
    Plain(PlainUp),
}

impl UpStage {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        factor: usize,
        hybrid: bool,
    ) -> Result<Self> {
        Ok(if hybrid {
            Self::Hybrid(HybridUp::new(ps, name, channels, factor)?)
        } else {
            Self::Plain(PlainUp::new(ps, name, channels, factor)?)
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Self::Hybrid(s) => s.forward(x),
            Self::Plain(s) => s.forward(x),
        }
    }
}

/// Taps on the encoder for invariant checks and diagnostics.
pub struct EncodeTrace {
    /// After the conv backbone, bottleneck, and context stages, before the
    /// reference embedding is subtracted.
    pub backbone_out: Tensor,
    /// After reference subtraction, before the BLSTM. Equals `backbone_out`
    /// when the variant has no reference encoder.
    pub pre_blstm: Tensor,
}

pub struct ForwardOutput {
    pub g: Option<Tensor>,
    pub latents: Tensor,
    pub quant: QuantizationResult,
    pub mel_hat: Tensor,
    /// Mean absolute reconstruction error against the input mel.
    pub rec_l1: Tensor,
}

pub struct Model {
    pub config: ModelConfig,
    pub flags: VariantFlags,
    pub store: ParamStore,
    ref_encoder: Option<ReferenceEncoder>,
    enc_g_proj: Option<Linear>,
    dec_g_proj: Option<Linear>,
    enc_in: Conv1d,
    enc_res1: ResidualUnit,
    enc_down1: DownStage,
    enc_mid1: Conv1d,
    enc_res2: ResidualUnit,
    enc_down2: DownStage,
    enc_mid2: Conv1d,
    enc_res3: ResidualUnit,
    enc_proj: Conv1d,
    enc_resample: Option<ResampleBlock>,
    enc_conformer: Option<ConformerStack>,
    enc_blstm: Option<BLstm>,
    enc_out: Linear,
    dec_blstm: Option<BLstm>,
    dec_resample: Option<ResampleBlock>,
    dec_in: Conv1d,
    dec_res3: ResidualUnit,
    dec_mid2: Conv1d,
    dec_up2: UpStage,
    dec_res2: ResidualUnit,
    dec_mid1: Conv1d,
    dec_up1: UpStage,
    dec_res1: ResidualUnit,
    dec_out: Conv1d,
}

impl Model {
    pub fn new(config: ModelConfig, flags: VariantFlags, seed: u64) -> Result<Self> {
        config.validate()?;
        if flags.use_reference && flags.ref_len == 0 {
            return Err(Error::Config("reference variant needs a ref_len".into()));
        }
        let mut ps = ParamStore::new(seed);
        let d = config.model_dim;
        let [h1, h2, h3] = config.conv_hiddens;

        let (ref_encoder, enc_g_proj, dec_g_proj) = if flags.use_reference {
            (
                Some(ReferenceEncoder::new(
                    &mut ps,
                    "ref",
                    &config.ref_channels,
                    config.n_mels,
                    config.ref_gru_hidden,
                    d,
                )?),
                Some(Linear::new(&mut ps, "enc.g_proj", d, d, false)?),
                Some(Linear::new(&mut ps, "dec.g_proj", d, d, false)?),
            )
        } else {
            (None, None, None)
        };

        let enc_in = Conv1d::new(&mut ps, "enc.in", config.n_mels, h1, 3, 1, 1, 1)?;
        let enc_res1 = ResidualUnit::new(&mut ps, "enc.res1", h1)?;
        let enc_down1 = DownStage::new(&mut ps, "enc.down1", h1, 2, flags.use_hybrid)?;
        let enc_mid1 = Conv1d::new(&mut ps, "enc.mid1", h1, h2, 3, 1, 1, 1)?;
        let enc_res2 = ResidualUnit::new(&mut ps, "enc.res2", h2)?;
        let enc_down2 = DownStage::new(&mut ps, "enc.down2", h2, 2, flags.use_hybrid)?;
        let enc_mid2 = Conv1d::new(&mut ps, "enc.mid2", h2, h3, 3, 1, 1, 1)?;
        let enc_res3 = ResidualUnit::new(&mut ps, "enc.res3", h3)?;
        let enc_proj = Conv1d::new(&mut ps, "enc.proj", h3, d, 1, 1, 0, 1)?;
        let enc_resample = if flags.use_resample {
            Some(ResampleBlock::new(
                &mut ps,
                "enc.resample",
                d,
                config.resample_factor,
                config.resample_units,
            )?)
        } else {
            None
        };
        let enc_conformer = if flags.use_conformer {
            Some(ConformerStack::new(
                &mut ps,
                "enc.conformer",
                d,
                config.conformer_dim,
                config.conformer_depth,
                config.conformer_heads,
                config.conformer_ffn_mult,
                config.conformer_kernel,
            )?)
        } else {
            None
        };
        let enc_blstm = if flags.use_blstm {
            Some(BLstm::new(&mut ps, "enc.blstm", d, config.blstm_hidden, config.blstm_layers, d)?)
        } else {
            None
        };
        let enc_out = Linear::new(&mut ps, "enc.out", d, d, true)?;

        let dec_blstm = if flags.use_blstm {
            Some(BLstm::new(&mut ps, "dec.blstm", d, config.blstm_hidden, config.blstm_layers, d)?)
        } else {
            None
        };
        let dec_resample = if flags.use_resample {
            Some(ResampleBlock::new(
                &mut ps,
                "dec.resample",
                d,
                config.resample_factor,
                config.resample_units,
            )?)
        } else {
            None
        };
        let dec_in = Conv1d::new(&mut ps, "dec.in", d, h3, 3, 1, 1, 1)?;
        let dec_res3 = ResidualUnit::new(&mut ps, "dec.res3", h3)?;
        let dec_mid2 = Conv1d::new(&mut ps, "dec.mid2", h3, h2, 3, 1, 1, 1)?;
        let dec_up2 = UpStage::new(&mut ps, "dec.up2", h2, 2, flags.use_hybrid)?;
        let dec_res2 = ResidualUnit::new(&mut ps, "dec.res2", h2)?;
        let dec_mid1 = Conv1d::new(&mut ps, "dec.mid1", h2, h1, 3, 1, 1, 1)?;
        let dec_up1 = UpStage::new(&mut ps, "dec.up1", h1, 2, flags.use_hybrid)?;
        let dec_res1 = ResidualUnit::new(&mut ps, "dec.res1", h1)?;
        let dec_out = Conv1d::new(&mut ps, "dec.out", h1, config.n_mels, 1, 1, 0, 1)?;

        Ok(Self {
            config,
            flags,
            store: ps,
            ref_encoder,
            enc_g_proj,
            dec_g_proj,
            enc_in,
            enc_res1,
            enc_down1,
            enc_mid1,
            enc_res2,
            enc_down2,
            enc_mid2,
            enc_res3,
            enc_proj,
            enc_resample,
            enc_conformer,
            enc_blstm,
            enc_out,
            dec_blstm,
            dec_resample,
            dec_in,
            dec_res3,
            dec_mid2,
            dec_up2,
            dec_res2,
            dec_mid1,
            dec_up1,
            dec_res1,
            dec_out,
        })
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Mel frames to latent frames; the input must divide evenly.
    pub fn latent_frames(&self, mel_frames: usize) -> Result<usize> {
        let f = self.config.downsample_factor;
        if mel_frames == 0 || mel_frames % f != 0 {
            return Err(Error::Shape(format!(
                "frame count {mel_frames} is not a nonzero multiple of {f}"
            )));
        }
        Ok(mel_frames / f)
    }

    /// Global utterance embedding from any-length mel, `(B, T, M) -> (B, D)`.
    pub fn utterance_embedding(&self, mel: &Tensor) -> Result<Tensor> {
        let enc = self.ref_encoder.as_ref().ok_or_else(|| {
            Error::ConfigMismatch("this variant has no reference encoder".into())
        })?;
        enc.forward(mel)
    }

    fn check_g(&self, g: Option<&Tensor>) -> Result<()> {
        match (self.flags.use_reference, g) {
            (true, None) => Err(Error::ConfigMismatch(
                "reference variant requires an utterance embedding".into(),
            )),
            (false, Some(_)) => Err(Error::ConfigMismatch(
                "variant without a reference encoder was given an embedding".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Content mel `(B, T, M)` to continuous latents `(B, T/4, D)`.
    pub fn encode(&self, mel: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.encode_traced(mel, g)?.0)
    }

    pub fn encode_traced(&self, mel: &Tensor, g: Option<&Tensor>) -> Result<(Tensor, EncodeTrace)> {
        self.check_g(g)?;
        let (_b, t, m) = mel.dims3().map_err(|_| {
            Error::Shape(format!("encode expects (batch, frames, mels), got {:?}", mel.dims()))
        })?;
        if m != self.config.n_mels {
            return Err(Error::Shape(format!(
                "expected {} mel bins, got {m}",
                self.config.n_mels
            )));
        }
        self.latent_frames(t)?;

        // (B, T, M) -> (B, M, T) for the conv backbone.
        let mut h = mel.transpose(1, 2)?.contiguous()?;
        h = self.enc_in.forward(&h)?.elu(1.0)?;
        h = self.enc_res1.forward(&h)?;
        h = self.enc_down1.forward(&h)?;
        h = self.enc_mid1.forward(&h)?.elu(1.0)?;
        h = self.enc_res2.forward(&h)?;
        h = self.enc_down2.forward(&h)?;
        h = self.enc_mid2.forward(&h)?.elu(1.0)?;
        h = self.enc_res3.forward(&h)?;
        h = self.enc_proj.forward(&h)?;
        if let Some(rs) = &self.enc_resample {
            h = rs.forward(&h)?;
        }
        // (B, D, T') -> (B, T', D) for the sequence stages.
        let mut s = h.transpose(1, 2)?.contiguous()?;
        if let Some(cf) = &self.enc_conformer {
            s = cf.forward(&s)?;
        }
        let backbone_out = s.clone();
        if let Some(proj) = &self.enc_g_proj {
            let g = g.expect("checked by check_g");
            let gp = proj.forward(g)?.unsqueeze(1)?;
            s = s.broadcast_sub(&gp)?;
        }
        let pre_blstm = s.clone();
        if let Some(bl) = &self.enc_blstm {
            // Residual context: at init an LSTM's output is dominated by its
            // own gate dynamics and passes almost none of the input through,
            // which starves the quantizer of input-dependent spread. The
            // skip keeps the signal path open while the BLSTM learns to
            // contribute context.
            s = (&s + bl.forward(&s)?)?;
        }
        let latents = self.enc_out.forward(&s)?;
        Ok((latents, EncodeTrace { backbone_out, pre_blstm }))
    }

    /// Quantized latents `(B, T', D)` back to mel `(B, T'*4, M)`.
    pub fn decode(&self, q: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        self.check_g(g)?;
        let (_b, _t, d) = q.dims3().map_err(|_| {
            Error::Shape(format!("decode expects (batch, frames, dim), got {:?}", q.dims()))
        })?;
        if d != self.config.model_dim {
            return Err(Error::Shape(format!(
                "expected latent dim {}, got {d}",
                self.config.model_dim
            )));
        }
        let mut s = q.clone();
        if let Some(proj) = &self.dec_g_proj {
            let g = g.expect("checked by check_g");
            let gp = proj.forward(g)?.unsqueeze(1)?;
            s = s.broadcast_add(&gp)?;
        }
        if let Some(bl) = &self.dec_blstm {
            // Residual, mirroring the encoder-side context stage.
            s = (&s + bl.forward(&s)?)?;
        }
        let mut h = s.transpose(1, 2)?.contiguous()?;
        if let Some(rs) = &self.dec_resample {
            h = rs.forward(&h)?;
        }
        h = self.dec_in.forward(&h)?.elu(1.0)?;
        h = self.dec_res3.forward(&h)?;
        h = self.dec_mid2.forward(&h)?.elu(1.0)?;
        h = self.dec_up2.forward(&h)?;
        h = self.dec_res2.forward(&h)?;
        h = self.dec_mid1.forward(&h)?.elu(1.0)?;
        h = self.dec_up1.forward(&h)?;
        h = self.dec_res1.forward(&h)?;
        h = self.dec_out.forward(&h)?;
        Ok(h.transpose(1, 2)?.contiguous()?)
    }

    /// Full training pass: reference embedding, encode, quantize, decode.
    ///
    /// During training the reference segment length is part of the variant
    /// contract and is enforced here; arbitrary-length references go through
    /// [`Model::utterance_embedding`].
    pub fn forward(
        &self,
        content: &Tensor,
        reference: Option<&Tensor>,
        cb: &Codebook,
    ) -> Result<ForwardOutput> {
        let g = if self.flags.use_reference {
            let r = reference.ok_or_else(|| {
                Error::ConfigMismatch("reference variant requires a reference segment".into())
            })?;
            let (_b, t, _m) = r.dims3().map_err(|_| {
                Error::Shape(format!("reference must be (batch, frames, mels), got {:?}", r.dims()))
            })?;
            if t != self.flags.ref_len {
                return Err(Error::Shape(format!(
                    "reference segment has {t} frames, variant trains with {}",
                    self.flags.ref_len
                )));
            }
            Some(self.utterance_embedding(r)?)
        } else {
            if reference.is_some() {
                return Err(Error::ConfigMismatch(
                    "variant without a reference encoder was given a reference segment".into(),
                ));
            }
            None
        };

        let latents = self.encode(content, g.as_ref())?;
        let quant = quantize(&latents, cb)?;
        let mel_hat = self.decode(&quant.quantized_st, g.as_ref())?;
        let rec_l1 = (&mel_hat - content)?.abs()?.mean_all()?;
        Ok(ForwardOutput { g, latents, quant, mel_hat, rec_l1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            model_dim: 16,
            conv_hiddens: [16, 24, 32],
            codebook_size: 32,
            conformer_dim: 32,
            conformer_depth: 1,
            conformer_heads: 2,
            conformer_ffn_mult: 2,
            conformer_kernel: 7,
            blstm_hidden: 8,
            blstm_layers: 1,
            ref_channels: [4, 4, 8, 8, 8, 8],
            ref_gru_hidden: 16,
            resample_units: 1,
            ..ModelConfig::default()
        }
    }

    fn rand_mel(seed: u64, b: usize, t: usize, m: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..b * t * m)
            .map(|_| (rng.next_u32() as f64 / (u32::MAX as f64 + 1.0)) as f32 * 2.0 - 1.0)
            .collect();
        Tensor::from_vec(v, (b, t, m), &Device::Cpu).unwrap()
    }

    fn codebook(dim: usize) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        Codebook::new_random(32, dim, &mut rng)
    }

    #[test]
    fn shape_contract_across_flag_combinations() {
        let combos = [
            VariantFlags::none(),
            VariantFlags::all(48),
            VariantFlags { use_reference: true, ref_len: 48, ..VariantFlags::none() },
            VariantFlags { use_blstm: true, use_resample: true, ..VariantFlags::none() },
            VariantFlags { use_hybrid: true, use_conformer: true, ..VariantFlags::none() },
        ];
        for flags in combos {
            let model = Model::new(tiny_config(), flags, 7).unwrap();
            let content = rand_mel(1, 2, 40, 100);
            let reference = flags.use_reference.then(|| rand_mel(2, 2, 48, 100));
            let out = model.forward(&content, reference.as_ref(), &codebook(16)).unwrap();
            assert_eq!(out.latents.dims(), &[2, 10, 16], "{flags:?}");
            assert_eq!(out.quant.codes.len(), 20, "{flags:?}");
            assert_eq!(out.mel_hat.dims(), &[2, 40, 100], "{flags:?}");
            let l1 = out.rec_l1.to_vec0::<f32>().unwrap();
            assert!(l1.is_finite(), "{flags:?}");
            if flags.use_reference {
                assert_eq!(out.g.as_ref().unwrap().dims(), &[2, 16]);
            } else {
                assert!(out.g.is_none());
            }
        }
    }

    #[test]
    fn reference_subtraction_is_exactly_linear() {
        let flags = VariantFlags::all(48);
        let model = Model::new(tiny_config(), flags, 11).unwrap();
        let content = rand_mel(5, 1, 40, 100);
        let reference = rand_mel(6, 1, 48, 100);
        let g = model.utterance_embedding(&reference).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let delta_v: Vec<f32> = (0..16)
            .map(|_| (rng.next_u32() as f64 / (u32::MAX as f64 + 1.0)) as f32 - 0.5)
            .collect();
        let delta = Tensor::from_vec(delta_v, (1, 16), &Device::Cpu).unwrap();
        let g_shift = (&g + &delta).unwrap();

        let (_, tr_a) = model.encode_traced(&content, Some(&g)).unwrap();
        let (_, tr_b) = model.encode_traced(&content, Some(&g_shift)).unwrap();
        // The backbone never sees g, so the pre-BLSTM difference must be the
        // projected delta with sign flipped, at every frame.
        let diff = (&tr_b.pre_blstm - &tr_a.pre_blstm).unwrap();
        let expect = model
            .enc_g_proj
            .as_ref()
            .unwrap()
            .forward(&delta)
            .unwrap()
            .neg()
            .unwrap();
        let diff_v = diff.reshape((10, 16)).unwrap().to_vec2::<f32>().unwrap();
        let exp_v = expect.to_vec2::<f32>().unwrap();
        for row in &diff_v {
            for (a, b) in row.iter().zip(&exp_v[0]) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
        assert_eq!(
            tr_a.backbone_out.to_vec3::<f32>().unwrap(),
            tr_b.backbone_out.to_vec3::<f32>().unwrap()
        );
    }

    #[test]
    fn gradients_reach_the_reference_encoder() {
        let flags = VariantFlags::all(48);
        let model = Model::new(tiny_config(), flags, 13).unwrap();
        let content = rand_mel(8, 1, 40, 100);
        let reference = rand_mel(9, 1, 48, 100);
        let out = model.forward(&content, Some(&reference), &codebook(16)).unwrap();
        let loss = (&out.rec_l1 + &out.quant.commitment_loss).unwrap();
        let grads = loss.backward().unwrap();
        let mut saw_ref_grad = false;
        for (name, var) in model.store.iter() {
            if name.starts_with("ref.") {
                if let Some(g) = grads.get(var.as_tensor()) {
                    let s: f32 = g.abs().unwrap().sum_all().unwrap().to_vec0().unwrap();
                    if s > 0.0 {
                        saw_ref_grad = true;
                    }
                }
            }
        }
        assert!(saw_ref_grad, "no gradient reached the reference encoder");
    }

    #[test]
    fn embedding_flag_mismatches_are_rejected() {
        let plain = Model::new(tiny_config(), VariantFlags::none(), 3).unwrap();
        let mel = rand_mel(20, 1, 40, 100);
        let fake_g = rand_mel(21, 1, 1, 16).reshape((1, 16)).unwrap();
        assert!(matches!(plain.encode(&mel, Some(&fake_g)), Err(Error::ConfigMismatch(_))));
        assert!(matches!(plain.utterance_embedding(&mel), Err(Error::ConfigMismatch(_))));
        assert!(matches!(
            plain.forward(&mel, Some(&mel), &codebook(16)),
            Err(Error::ConfigMismatch(_))
        ));

        let with_ref =
            Model::new(tiny_config(), VariantFlags::all(48), 3).unwrap();
        assert!(matches!(with_ref.encode(&mel, None), Err(Error::ConfigMismatch(_))));
        assert!(matches!(
            with_ref.forward(&mel, None, &codebook(16)),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn frame_counts_must_divide_the_downsample_factor() {
        let model = Model::new(tiny_config(), VariantFlags::none(), 5).unwrap();
        let bad = rand_mel(30, 1, 41, 100);
        assert!(matches!(model.encode(&bad, None), Err(Error::Shape(_))));
        assert_eq!(model.latent_frames(200).unwrap(), 50);
        assert_eq!(model.latent_frames(600).unwrap(), 150);
        assert!(model.latent_frames(0).is_err());
    }

    #[test]
    fn training_reference_length_is_enforced() {
        let model = Model::new(tiny_config(), VariantFlags::all(48), 5).unwrap();
        let content = rand_mel(31, 1, 40, 100);
        let short_ref = rand_mel(32, 1, 44, 100);
        assert!(matches!(
            model.forward(&content, Some(&short_ref), &codebook(16)),
            Err(Error::Shape(_))
        ));
        // Any length is fine for a standalone utterance embedding.
        assert_eq!(model.utterance_embedding(&short_ref).unwrap().dims(), &[1, 16]);
    }

    #[test]
    fn parameter_names_follow_the_flags() {
        let all = Model::new(tiny_config(), VariantFlags::all(48), 1).unwrap();
        let none = Model::new(tiny_config(), VariantFlags::none(), 1).unwrap();
        let all_names: Vec<String> = all.store.names();
        let none_names: Vec<String> = none.store.names();
        let all_names: Vec<&str> = all_names.iter().map(String::as_str).collect();
        let none_names: Vec<&str> = none_names.iter().map(String::as_str).collect();

        for prefix in
            ["ref.", "enc.g_proj", "dec.g_proj", "enc.conformer.", "enc.blstm.", "dec.blstm.",
             "enc.resample.", "dec.resample."]
        {
            assert!(all_names.iter().any(|n| n.starts_with(prefix)), "missing {prefix}");
            assert!(!none_names.iter().any(|n| n.starts_with(prefix)), "unexpected {prefix}");
        }
        // Hybrid stages add only the mixing conv on top of the plain stage.
        assert!(all_names.contains(&"enc.down1.mix.w"));
        assert!(!none_names.iter().any(|n| n.contains(".mix.")));
        assert!(all_names.contains(&"enc.down1.conv.w"));
        assert!(none_names.contains(&"enc.down1.conv.w"));
        // The trunk is identical either way.
        for n in ["enc.in.w", "enc.out.w", "dec.out.w", "enc.proj.w"] {
            assert!(all_names.contains(&n) && none_names.contains(&n), "{n}");
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = Model::new(tiny_config(), VariantFlags::all(48), 42).unwrap();
        let b = Model::new(tiny_config(), VariantFlags::all(48), 42).unwrap();
        let content = rand_mel(40, 1, 40, 100);
        let reference = rand_mel(41, 1, 48, 100);
        let cb = codebook(16);
        let oa = a.forward(&content, Some(&reference), &cb).unwrap();
        let ob = b.forward(&content, Some(&reference), &cb).unwrap();
        assert_eq!(oa.quant.codes, ob.quant.codes);
        assert_eq!(
            oa.mel_hat.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            ob.mel_hat.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn paper_and_desk_configs_validate() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::desk().validate().is_ok());
        assert_eq!(ModelConfig::default().codebook_bits(), 13);
        assert!((ModelConfig::desk().tokens_per_second() - 23.4375).abs() < 1e-9);
        let bad = ModelConfig { downsample_factor: 3, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }
}
