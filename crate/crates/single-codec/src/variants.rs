//! The eight named model variants of the ablation ladder, from the plain
//! VQ-VAE baseline to the full codec. Each name maps to a flag set; the
//! model code itself never branches on names.

use crate::data::{SEG1_FRAMES, SEG2_FRAMES};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, VariantFlags};

/// Ladder order: each row changes one design choice from its neighborhood.
pub const VARIANT_NAMES: [&str; 8] = [
    "VQVAE",
    "Ref-short",
    "Ref-long",
    "Ref-BLSTM",
    "Ref-HybSam",
    "Ref-BLSTM-HybSam",
    "Ref-BLSTM-HybSam-Conf",
    "Single-Codec",
];

/// Flags for a named variant. Unknown names list the valid ones.
pub fn variant_flags(name: &str) -> Result<VariantFlags> {
    let none = VariantFlags::none();
    Ok(match name {
        "VQVAE" => none,
        "Ref-short" => VariantFlags { use_reference: true, ref_len: SEG2_FRAMES, ..none },
        "Ref-long" => VariantFlags { use_reference: true, ref_len: SEG1_FRAMES, ..none },
        "Ref-BLSTM" => VariantFlags {
            use_reference: true,
            ref_len: SEG1_FRAMES,
            use_blstm: true,
            ..none
        },
        "Ref-HybSam" => VariantFlags {
            use_reference: true,
            ref_len: SEG1_FRAMES,
            use_hybrid: true,
            ..none
        },
        "Ref-BLSTM-HybSam" => VariantFlags {
            use_reference: true,
            ref_len: SEG1_FRAMES,
            use_blstm: true,
            use_hybrid: true,
            ..none
        },
        "Ref-BLSTM-HybSam-Conf" => VariantFlags {
            use_reference: true,
            ref_len: SEG1_FRAMES,
            use_blstm: true,
            use_hybrid: true,
            use_conformer: true,
            ..none
        },
        "Single-Codec" => VariantFlags::all(SEG1_FRAMES),
        _ => {
            return Err(Error::Config(format!(
                "unknown variant {name:?}; valid names: {}",
                VARIANT_NAMES.join(", ")
            )))
        }
    })
}

pub fn build_variant(name: &str, config: ModelConfig, seed: u64) -> Result<Model> {
    Model::new(config, variant_flags(name)?, seed)
}

/// Parameter-name prefixes each flag contributes on top of the flagless
/// model. A variant's parameter tree must equal the base tree plus exactly
/// the names under its flags' prefixes.
pub fn flag_param_prefixes(flags: &VariantFlags) -> Vec<&'static str> {
    let mut p = Vec::new();
    if flags.use_reference {
        p.extend(["ref.", "enc.g_proj.", "dec.g_proj."]);
    }
    if flags.use_blstm {
        p.extend(["enc.blstm.", "dec.blstm."]);
    }
    if flags.use_hybrid {
        p.extend(["enc.down1.mix.", "enc.down2.mix.", "dec.up1.mix.", "dec.up2.mix."]);
    }
    if flags.use_conformer {
        p.push("enc.conformer.");
    }
    if flags.use_resample {
        p.extend(["enc.resample.", "dec.resample."]);
    }
    p
}

/// Names in `a` but not `b`, both sorted.
pub fn name_diff(a: &[String], b: &[String]) -> Vec<String> {
    let bset: std::collections::BTreeSet<&String> = b.iter().collect();
    a.iter().filter(|n| !bset.contains(n)).cloned().collect()
}
