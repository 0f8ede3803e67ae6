//! Packs a token sequence into the on-disk stream format, prints the layout,
//! and verifies the round trip bit for bit.
//!
//!     cargo run --example bitstream_roundtrip

use single_codec::bitstream::{pack_tokens, payload_len, unpack_tokens, StreamParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let codes: Vec<u32> = vec![0, 1, 42, 4095, 8191, 77, 1234, 8190];
    let embedding: Vec<f32> = (0..4).map(|i| (i as f32 * 0.25).sin()).collect();
    let params = StreamParams { pad_frames: 13, ..StreamParams::default() };

    let bytes = pack_tokens(&codes, &embedding, &params)?;
    println!("{} codes at {} bits", codes.len(), params.codebook_bits);
    println!(
        "header {} bytes, embedding {} bytes, payload {} bytes (= ceil({} * {} / 8))",
        bytes.len() - embedding.len() * 4 - payload_len(codes.len(), params.codebook_bits),
        embedding.len() * 4,
        payload_len(codes.len(), params.codebook_bits),
        codes.len(),
        params.codebook_bits
    );
    println!("total {} bytes: {:02x?}...", bytes.len(), &bytes[..16]);

    let (codes2, embedding2, header) = unpack_tokens(&bytes)?;
    assert_eq!(codes, codes2);
    assert_eq!(embedding, embedding2);
    assert_eq!(header.pad_frames, 13);
    println!("round trip exact: {} codes, {} embedding floats", codes2.len(), embedding2.len());
    println!(
        "rate: {} Hz / (hop {} x down {}) x {} bits = {:.4} bps",
        header.sample_rate,
        header.hop,
        header.downsample_factor,
        header.codebook_bits,
        header.sample_rate as f64 / (header.hop as f64 * header.downsample_factor as f64)
            * header.codebook_bits as f64
    );
    Ok(())
}
