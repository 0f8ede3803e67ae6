//! Checkpoints: one directory holding a JSON description of the run and a
//! safetensors file with every stateful array, so that training can resume
//! and inference can rebuild the exact model. All float state round-trips
//! bit-exactly.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, VariantFlags};
use crate::params::{AdamW, ParamStore};
use crate::quantizer::Codebook;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const TENSORS_FILE: &str = "state.safetensors";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    /// Format version; refuse anything else.
    pub version: u32,
    pub variant: String,
    pub config: ModelConfig,
    pub flags: VariantFlags,
    pub seed: u64,
    pub step: u64,
}

/// Writes meta plus named tensor sections. Section contents get flat names
/// `{section}.{name}` inside the safetensors file.
pub fn save(
    dir: &Path,
    meta: &CheckpointMeta,
    sections: &[(&str, BTreeMap<String, Tensor>)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Format { offset: None, msg: format!("meta encode: {e}") })?;
    std::fs::write(dir.join(META_FILE), json)?;
    let mut flat: HashMap<String, Tensor> = HashMap::new();
    for (prefix, map) in sections {
        for (name, t) in map {
            flat.insert(format!("{prefix}.{name}"), t.clone());
        }
    }
    candle_core::safetensors::save(&flat, dir.join(TENSORS_FILE))?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    tensors: BTreeMap<String, Tensor>,
}

impl LoadedCheckpoint {
    /// Tensors under `{prefix}.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let dotted = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(&dotted).map(|rest| (rest.to_string(), v.clone()))
            })
            .collect()
    }
}

pub fn load(dir: &Path, device: &Device) -> Result<LoadedCheckpoint> {
    let meta_path = dir.join(META_FILE);
    let raw = std::fs::read_to_string(&meta_path)?;
    let meta: CheckpointMeta = serde_json::from_str(&raw).map_err(|e| Error::Format {
        offset: None,
        msg: format!("{}: {e}", meta_path.display()),
    })?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: None,
            msg: format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                meta.version
            ),
        });
    }
    let tensors = candle_core::safetensors::load(dir.join(TENSORS_FILE), device)?;
    Ok(LoadedCheckpoint { meta, tensors: tensors.into_iter().collect() })
}

/// Every parameter of a store as plain tensors.
pub fn store_section(store: &ParamStore) -> BTreeMap<String, Tensor> {
    store.iter().map(|(n, v)| (n.clone(), v.as_tensor().clone())).collect()
}

/// Loads a section into an existing store. The name sets must match exactly.
pub fn restore_store(store: &ParamStore, section: &BTreeMap<String, Tensor>) -> Result<()> {
    let have: Vec<String> = store.names();
    let want: Vec<&String> = section.keys().collect();
    if have.len() != want.len() || have.iter().zip(&want).any(|(a, b)| &a != b) {
        let missing: Vec<&String> =
            have.iter().filter(|n| !section.contains_key(*n)).collect();
        let extra: Vec<&&String> =
            want.iter().filter(|n| store.get(n).is_none()).collect();
        return Err(Error::Config(format!(
            "checkpoint does not match the model: missing {missing:?}, unexpected {extra:?}"
        )));
    }
    for (name, tensor) in section {
        store.set(name, tensor)?;
    }
    Ok(())
}

pub fn codebook_section(cb: &Codebook, device: &Device) -> Result<BTreeMap<String, Tensor>> {
    let (k, d) = (cb.k(), cb.dim());
    let mut out = BTreeMap::new();
    let flat = |a: &Array2<f32>| -> Vec<f32> { a.iter().copied().collect() };
    out.insert("vectors".into(), Tensor::from_vec(flat(&cb.vectors), (k, d), device)?);
    out.insert(
        "ema_cluster_size".into(),
        Tensor::from_vec(cb.ema_cluster_size.to_vec(), k, device)?,
    );
    out.insert(
        "ema_embed_sum".into(),
        Tensor::from_vec(flat(&cb.ema_embed_sum), (k, d), device)?,
    );
    out.insert("unused_steps".into(), Tensor::from_vec(cb.unused_steps.clone(), k, device)?);
    out.insert("decay".into(), Tensor::from_vec(vec![cb.decay], 1, device)?);
    out.insert("epsilon".into(), Tensor::from_vec(vec![cb.epsilon], 1, device)?);
    let reseed = cb.reseed_after.map(|v| v as i64).unwrap_or(-1);
    out.insert("reseed_after".into(), Tensor::from_vec(vec![reseed], 1, device)?);
    Ok(out)
}

pub fn codebook_from_section(section: &BTreeMap<String, Tensor>) -> Result<Codebook> {
    let get = |name: &str| {
        section.get(name).ok_or_else(|| Error::Format {
            offset: None,
            msg: format!("checkpoint quantizer section missing {name}"),
        })
    };
    let vectors_t = get("vectors")?;
    let (k, d) = vectors_t.dims2()?;
    let to_mat = |t: &Tensor| -> Result<Array2<f32>> {
        let v = t.flatten_all()?.to_vec1::<f32>()?;
        Array2::from_shape_vec((k, d), v)
            .map_err(|e| Error::Shape(format!("codebook matrix: {e}")))
    };
    let vectors = to_mat(vectors_t)?;
    let ema_embed_sum = to_mat(get("ema_embed_sum")?)?;
    let ema_cluster_size = Array1::from_vec(get("ema_cluster_size")?.to_vec1::<f32>()?);
    let unused_steps = get("unused_steps")?.to_vec1::<u32>()?;
    if ema_cluster_size.len() != k || unused_steps.len() != k {
        return Err(Error::Shape("codebook sections disagree on size".into()));
    }
    let decay = get("decay")?.to_vec1::<f32>()?[0];
    let epsilon = get("epsilon")?.to_vec1::<f32>()?[0];
    let reseed_raw = get("reseed_after")?.to_vec1::<i64>()?[0];
    let reseed_after = if reseed_raw < 0 { None } else { Some(reseed_raw as u32) };
    Ok(Codebook {
        vectors,
        ema_cluster_size,
        ema_embed_sum,
        decay,
        epsilon,
        unused_steps,
        reseed_after,
    })
}

/// Optimizer moments plus the step counter.
pub fn optimizer_section(opt: &AdamW) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for (name, t) in &opt.m {
        out.insert(format!("m.{name}"), t.clone());
    }
    for (name, t) in &opt.v {
        out.insert(format!("v.{name}"), t.clone());
    }
    let device = Device::Cpu;
    out.insert(
        "t".into(),
        Tensor::from_vec(vec![opt.step_t as i64], 1, &device).expect("scalar tensor"),
    );
    out
}

pub fn restore_optimizer(opt: &mut AdamW, section: &BTreeMap<String, Tensor>) -> Result<()> {
    let t = section.get("t").ok_or_else(|| Error::Format {
        offset: None,
        msg: "optimizer section missing step counter".into(),
    })?;
    opt.step_t = t.to_vec1::<i64>()?[0] as u64;
    opt.m.clear();
    opt.v.clear();
    for (name, tensor) in section {
        if let Some(p) = name.strip_prefix("m.") {
            opt.m.insert(p.to_string(), tensor.clone());
        } else if let Some(p) = name.strip_prefix("v.") {
            opt.v.insert(p.to_string(), tensor.clone());
        }
    }
    Ok(())
}

/// Rebuilds the model and codebook for inference from a checkpoint directory.
pub fn load_model(dir: &Path) -> Result<(Model, Codebook, CheckpointMeta)> {
    let ckpt = load(dir, &Device::Cpu)?;
    let model = Model::new(ckpt.meta.config.clone(), ckpt.meta.flags, ckpt.meta.seed)?;
    restore_store(&model.store, &ckpt.section("model"))?;
    let codebook = codebook_from_section(&ckpt.section("quantizer"))?;
    if codebook.dim() != ckpt.meta.config.model_dim
        || codebook.k() != ckpt.meta.config.codebook_size
    {
        return Err(Error::ConfigMismatch(format!(
            "codebook {}x{} does not match config {}x{}",
            codebook.k(),
            codebook.dim(),
            ckpt.meta.config.codebook_size,
            ckpt.meta.config.model_dim
        )));
    }
    Ok((model, codebook, ckpt.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variants::build_variant;
    use candle_core::Var;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
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
        }
    }

    fn meta_for(variant: &str, seed: u64) -> CheckpointMeta {
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            variant: variant.into(),
            config: tiny_config(),
            flags: crate::variants::variant_flags(variant).unwrap(),
            seed,
            step: 17,
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_variant("Single-Codec", tiny_config(), 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cb = Codebook::new_random(16, 8, &mut rng);
        save(
            dir.path(),
            &meta_for("Single-Codec", 41),
            &[
                ("model", store_section(&model.store)),
                ("quantizer", codebook_section(&cb, &Device::Cpu).unwrap()),
            ],
        )
        .unwrap();

        let (restored, cb2, meta) = load_model(dir.path()).unwrap();
        assert_eq!(meta.step, 17);
        assert_eq!(cb2.vectors, cb.vectors);
        assert_eq!(cb2.ema_cluster_size, cb.ema_cluster_size);
        assert_eq!(cb2.unused_steps, cb.unused_steps);
        assert_eq!(cb2.reseed_after, cb.reseed_after);
        for (name, var) in model.store.iter() {
            let a = var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = restored
                .store
                .get(name)
                .unwrap()
                .as_tensor()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn restored_weights_override_fresh_init() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_variant("VQVAE", tiny_config(), 1).unwrap();
        // Perturb one weight away from its seeded value before saving.
        let w = model.store.get("enc.in.w").unwrap().as_tensor().clone();
        model.store.set("enc.in.w", &(w.affine(2.0, 0.25)).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cb = Codebook::new_random(16, 8, &mut rng);
        save(
            dir.path(),
            &meta_for("VQVAE", 1),
            &[
                ("model", store_section(&model.store)),
                ("quantizer", codebook_section(&cb, &Device::Cpu).unwrap()),
            ],
        )
        .unwrap();
        let (restored, _, _) = load_model(dir.path()).unwrap();
        let a = model.store.get("enc.in.w").unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = restored.store.get("enc.in.w").unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn version_and_structure_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_variant("VQVAE", tiny_config(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cb = Codebook::new_random(16, 8, &mut rng);
        let mut meta = meta_for("VQVAE", 2);
        meta.version = 99;
        save(
            dir.path(),
            &meta,
            &[
                ("model", store_section(&model.store)),
                ("quantizer", codebook_section(&cb, &Device::Cpu).unwrap()),
            ],
        )
        .unwrap();
        let err = match load(dir.path(), &Device::Cpu) {
            Err(e) => e,
            Ok(_) => panic!("version 99 was accepted"),
        };
        assert!(err.to_string().contains("version"), "{err}");

        // A meta file without a version field refuses to parse.
        let raw = std::fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        let stripped = raw.replacen("\"version\": 99,", "", 1);
        std::fs::write(dir.path().join(META_FILE), stripped).unwrap();
        assert!(load(dir.path(), &Device::Cpu).is_err());
    }

    #[test]
    fn mismatched_parameter_trees_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let small = build_variant("VQVAE", tiny_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cb = Codebook::new_random(16, 8, &mut rng);
        let mut meta = meta_for("VQVAE", 3);
        // Claim the checkpoint is the full variant while storing VQVAE params.
        meta.variant = "Single-Codec".into();
        meta.flags = crate::variants::variant_flags("Single-Codec").unwrap();
        save(
            dir.path(),
            &meta,
            &[
                ("model", store_section(&small.store)),
                ("quantizer", codebook_section(&cb, &Device::Cpu).unwrap()),
            ],
        )
        .unwrap();
        let err = match load_model(dir.path()) {
            Err(e) => e,
            Ok(_) => panic!("mismatched tree was accepted"),
        };
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn optimizer_state_resumes_identically() {
        let make_store = || {
            let mut ps = ParamStore::new(11);
            ps.var("w", &[4], crate::params::Init::Const(1.0)).unwrap();
            ps
        };
        let grad_for = |ps: &ParamStore, scale: f64| {
            let var: &Var = ps.get("w").unwrap();
            let loss = (var.as_tensor() * scale).unwrap().sum_all().unwrap();
            loss.backward().unwrap()
        };

        let ps_a = make_store();
        let mut opt_a = AdamW::new(1e-2);
        for i in 0..2 {
            let g = grad_for(&ps_a, 1.0 + i as f64);
            opt_a.step(&ps_a, &g).unwrap();
        }
        let section = optimizer_section(&opt_a);

        // Restore into a fresh optimizer over a store with the same values.
        let ps_b = make_store();
        ps_b.set("w", ps_a.get("w").unwrap().as_tensor()).unwrap();
        let mut opt_b = AdamW::new(1e-2);
        restore_optimizer(&mut opt_b, &section).unwrap();
        assert_eq!(opt_b.step_t, 2);

        let ga = grad_for(&ps_a, 3.0);
        opt_a.step(&ps_a, &ga).unwrap();
        let gb = grad_for(&ps_b, 3.0);
        opt_b.step(&ps_b, &gb).unwrap();
        let a = ps_a.get("w").unwrap().as_tensor().to_vec1::<f32>().unwrap();
        let b = ps_b.get("w").unwrap().as_tensor().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn optimizer_section_survives_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ps = {
            let mut ps = ParamStore::new(12);
            ps.var("a.w", &[2, 2], crate::params::Init::FanIn(2)).unwrap();
            ps
        };
        let loss = ps.get("a.w").unwrap().as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = AdamW::new(3e-3);
        opt.step(&ps, &grads).unwrap();

        let model = build_variant("VQVAE", tiny_config(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cb = Codebook::new_random(16, 8, &mut rng);
        save(
            dir.path(),
            &meta_for("VQVAE", 4),
            &[
                ("model", store_section(&model.store)),
                ("quantizer", codebook_section(&cb, &Device::Cpu).unwrap()),
                ("opt_g", optimizer_section(&opt)),
            ],
        )
        .unwrap();
        let ckpt = load(dir.path(), &Device::Cpu).unwrap();
        let mut opt2 = AdamW::new(3e-3);
        restore_optimizer(&mut opt2, &ckpt.section("opt_g")).unwrap();
        assert_eq!(opt2.step_t, 1);
        let m_a = opt.m["a.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let m_b = opt2.m["a.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(m_a, m_b);
        let v_a = opt.v["a.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let v_b = opt2.v["a.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v_a, v_b);
    }
}
