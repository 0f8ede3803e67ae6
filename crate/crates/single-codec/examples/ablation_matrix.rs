//! Builds all eight codec variants and shows how their parameter trees
//! differ: each variant is exactly the base tree plus the parameter groups
//! its flags enable, and every variant codes at the same bandwidth.
//!
//!     cargo run --example ablation_matrix

use single_codec::metrics::reported_bandwidth;
use single_codec::model::ModelConfig;
use single_codec::variants::{build_variant, flag_param_prefixes, variant_flags, VARIANT_NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig::desk();
    let bw = reported_bandwidth(
        config.sample_rate,
        config.hop_length as u32,
        config.downsample_factor as u32,
        config.codebook_size as u32,
    );

    println!(
        "{:<24} {:>7} {:>10} {:>9}  extra parameter groups",
        "variant", "params", "bandwidth", "ref_len"
    );
    let base = build_variant(VARIANT_NAMES[0], config.clone(), 0)?;
    let base_names = base.store.names();

    for name in VARIANT_NAMES {
        let flags = variant_flags(name)?;
        let model = build_variant(name, config.clone(), 0)?;
        let names = model.store.names();
        let params: usize = model.store.snapshot()?.iter().map(|(_, v)| v.len()).sum();

        // Everything beyond the base tree must be claimed by a flag prefix.
        let prefixes = flag_param_prefixes(&flags);
        let extra: Vec<&String> =
            names.iter().filter(|n| !base_names.contains(n)).collect();
        for n in &extra {
            assert!(
                prefixes.iter().any(|p| n.starts_with(p)),
                "{name}: unclaimed parameter {n}"
            );
        }

        let ref_len = if flags.use_reference { flags.ref_len.to_string() } else { "-".into() };
        let groups: Vec<&str> = prefixes.iter().map(|p| p.trim_end_matches('.')).collect();
        println!(
            "{name:<24} {params:>7} {bw:>10} {ref_len:>9}  {}",
            if groups.is_empty() { "(base)".into() } else { groups.join(" ") }
        );
    }

    // The difference instrumental to the final design: the full codec minus
    // the next-smaller variant is the resampling bottleneck alone.
    let full = build_variant("Single-Codec", config.clone(), 0)?;
    let near = build_variant("Ref-BLSTM-HybSam-Conf", config, 0)?;
    let full_names = full.store.names();
    let near_names = near.store.names();
    let only_full: Vec<&String> = full_names.iter().filter(|n| !near_names.contains(n)).collect();
    println!("\nSingle-Codec minus Ref-BLSTM-HybSam-Conf:");
    for n in only_full {
        println!("  {n}");
    }
    Ok(())
}
