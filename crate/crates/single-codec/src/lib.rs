//! Single-codebook, single-sequence speech codec over mel spectrograms.
//!
//! The codec is a disentangled VQ-VAE: a reference encoder pulls a continuous,
//! time-invariant utterance embedding `g` out of a long reference segment, so
//! that the single 8192-entry codebook only has to cover time-variant content.
//! The content encoder stacks convolution blocks with hybrid down-sampling, a
//! resampling bottleneck, a Conformer stage and a BLSTM context module; the
//! decoder mirrors it. Tokens leave the codec as a bit-exact 304 bps stream.
//!
//! Entry points:
//! - [`mel`] / [`audio`] / [`data`] — audio ingest, mel analysis, segment sampling
//! - [`model`] — the codec network and its ablation variants
//! - [`quantizer`] — the single-codebook vector quantizer
//! - [`train`] — adversarial training loop and loss logs
//! - [`convergence`] — commitment-loss curve classification
//! - [`metrics`] — MCD, mel-L1, speaker-cosine proxy, bandwidth accounting
//! - [`bitstream`] — the packed token-stream file format
//! - [`vocoder`] — Griffin-Lim waveform reconstruction at desk scale
//!
//! Runnable walkthroughs live in `examples/`; the `single-codec` binary wraps
//! the same APIs as `train`, `encode`, `decode`, `eval`, `ablate` and `curves`
//! subcommands.

pub mod audio;
pub mod bitstream;
pub mod checkpoint;
pub mod cli;
pub mod convergence;
pub mod corpus;
pub mod data;
pub mod error;
pub mod mel;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod quantizer;
pub mod train;
pub mod variants;
pub mod vocoder;

pub use error::{Error, Result};
