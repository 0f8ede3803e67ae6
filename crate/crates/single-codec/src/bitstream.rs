//! Bit-exact token stream serialization.
//!
//! Layout: a fixed header (magic "SC01", little-endian integer fields), the
//! global embedding as little-endian f32s, then the code payload packed
//! big-endian (MSB first) at `codebook_bits` bits per code, zero-padded to a
//! byte boundary. At the default 13 bits and 23.4 tokens/s the payload rate
//! is ~304 bits/s.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SC01";
/// Header size in bytes: magic + sample_rate + hop + factor + bits + n_tokens
/// + embed_dim + pad_frames.
pub const HEADER_LEN: usize = 4 + 4 + 2 + 1 + 1 + 4 + 2 + 2;

/// Stream parameters supplied at pack time. `n_tokens` and `embed_dim` are
/// derived from the data, never passed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamParams {
    pub sample_rate: u32,
    pub hop: u16,
    pub downsample_factor: u8,
    pub codebook_bits: u8,
    /// Mel frames of reflection padding appended to the final encode chunk;
    /// decode trims this many frames from the reconstruction tail.
    pub pad_frames: u16,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            hop: 256,
            downsample_factor: 4,
            codebook_bits: 13,
            pad_frames: 0,
        }
    }
}

/// The parsed header of a token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub hop: u16,
    pub downsample_factor: u8,
    pub codebook_bits: u8,
    pub n_tokens: u32,
    pub embed_dim: u16,
    pub pad_frames: u16,
}

/// Payload size in bytes for `n` codes at `bits` bits per code.
pub fn payload_len(n: usize, bits: u8) -> usize {
    (n * bits as usize).div_ceil(8)
}

pub fn pack_tokens(codes: &[u32], embedding: &[f32], params: &StreamParams) -> Result<Vec<u8>> {
    let bits = params.codebook_bits;
    if bits == 0 || bits > 31 {
        return Err(Error::InvalidInput(format!("codebook_bits {bits} out of range 1..=31")));
    }
    let limit = 1u32 << bits;
    if let Some(&bad) = codes.iter().find(|&&c| c >= limit) {
        return Err(Error::InvalidInput(format!("code {bad} does not fit in {bits} bits")));
    }
    if codes.len() > u32::MAX as usize {
        return Err(Error::InvalidInput("too many codes".into()));
    }
    if embedding.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("embedding too long".into()));
    }

    let mut out =
        Vec::with_capacity(HEADER_LEN + embedding.len() * 4 + payload_len(codes.len(), bits));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&params.sample_rate.to_le_bytes());
    out.extend_from_slice(&params.hop.to_le_bytes());
    out.push(params.downsample_factor);
    out.push(bits);
    out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    out.extend_from_slice(&(embedding.len() as u16).to_le_bytes());
    out.extend_from_slice(&params.pad_frames.to_le_bytes());
    for &v in embedding {
        out.extend_from_slice(&v.to_le_bytes());
    }

    // MSB-first bit packing; final partial byte is zero-padded on the right.
    let mut acc: u64 = 0;
    let mut nbits: u32 = 0;
    for &c in codes {
        acc = (acc << bits) | c as u64;
        nbits += bits as u32;
        while nbits >= 8 {
            nbits -= 8;
            out.push((acc >> nbits) as u8);
        }
    }
    if nbits > 0 {
        out.push(((acc << (8 - nbits)) & 0xFF) as u8);
    }
    Ok(out)
}

pub fn unpack_tokens(bytes: &[u8]) -> Result<(Vec<u32>, Vec<f32>, StreamHeader)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: Some(bytes.len() as u64),
            msg: format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format {
            offset: Some(0),
            msg: format!("bad magic {:?}, expected {:?}", &bytes[0..4], MAGIC),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let header = StreamHeader {
        sample_rate: u32_at(4),
        hop: u16_at(8),
        downsample_factor: bytes[10],
        codebook_bits: bytes[11],
        n_tokens: u32_at(12),
        embed_dim: u16_at(16),
        pad_frames: u16_at(18),
    };
    let bits = header.codebook_bits;
    if bits == 0 || bits > 31 {
        return Err(Error::Format {
            offset: Some(11),
            msg: format!("codebook_bits {bits} out of range 1..=31"),
        });
    }

    let embed_start = HEADER_LEN;
    let embed_bytes = header.embed_dim as usize * 4;
    let payload_start = embed_start + embed_bytes;
    if bytes.len() < payload_start {
        return Err(Error::Format {
            offset: Some(bytes.len() as u64),
            msg: format!(
                "truncated embedding: need {embed_bytes} bytes at offset {embed_start}"
            ),
        });
    }
    let embedding: Vec<f32> = bytes[embed_start..payload_start]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let n = header.n_tokens as usize;
    let expected_payload = payload_len(n, bits);
    let payload = &bytes[payload_start..];
    if payload.len() < expected_payload {
        return Err(Error::Format {
            offset: Some(bytes.len() as u64),
            msg: format!(
                "truncated payload: {} of {expected_payload} bytes after offset {payload_start}",
                payload.len()
            ),
        });
    }
    if payload.len() > expected_payload {
        return Err(Error::Format {
            offset: Some((payload_start + expected_payload) as u64),
            msg: format!("{} trailing bytes after payload", payload.len() - expected_payload),
        });
    }

    let mask = (1u64 << bits) - 1;
    let mut codes = Vec::with_capacity(n);
    let mut acc: u64 = 0;
    let mut nbits: u32 = 0;
    let mut pos = 0usize;
    for _ in 0..n {
        while nbits < bits as u32 {
            acc = (acc << 8) | payload[pos] as u64;
            pos += 1;
            nbits += 8;
        }
        nbits -= bits as u32;
        codes.push(((acc >> nbits) & mask) as u32);
    }
    // Remaining bits are alignment padding and must be zero.
    if nbits > 0 && acc & ((1 << nbits) - 1) != 0 {
        return Err(Error::Format {
            offset: Some((payload_start + pos - 1) as u64),
            msg: "nonzero padding bits".into(),
        });
    }
    Ok((codes, embedding, header))
}

pub fn write_stream<P: AsRef<Path>>(
    path: P,
    codes: &[u32],
    embedding: &[f32],
    params: &StreamParams,
) -> Result<()> {
    let bytes = pack_tokens(codes, embedding, params)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_stream<P: AsRef<Path>>(path: P) -> Result<(Vec<u32>, Vec<f32>, StreamHeader)> {
    let bytes = std::fs::read(path)?;
    unpack_tokens(&bytes)
}
