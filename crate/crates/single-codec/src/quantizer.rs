//! The single vector quantizer: nearest-neighbor assignment with
//! deterministic tie-breaking, straight-through gradients, commitment loss,
//! exponential-moving-average codebook learning, and usage diagnostics.
//!
//! Assignment runs in two stages: a fast expanded-form distance matrix in
//! f32, then an exact f64 re-check of every candidate within a small margin
//! of the row minimum. The reported code is therefore always the argmin of
//! the exact squared distance, ties to the lowest index, independent of how
//! the fast path rounds.

use candle_core::Tensor;
use ndarray::{Array1, Array2};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Codebook {
    /// Code vectors, `[k, dim]`.
    pub vectors: Array2<f32>,
    pub ema_cluster_size: Array1<f32>,
    pub ema_embed_sum: Array2<f32>,
    pub decay: f32,
    pub epsilon: f32,
    /// Consecutive updates each code has gone unused.
    pub unused_steps: Vec<u32>,
    /// Revive a code after this many unused updates by splitting the
    /// busiest code; `None` disables dead-code handling.
    pub reseed_after: Option<u32>,
}

pub const DEFAULT_DECAY: f32 = 0.99;
pub const DEFAULT_EPSILON: f32 = 1e-5;
pub const DEFAULT_RESEED_AFTER: u32 = 50;

impl Codebook {
    pub fn k(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    fn from_vectors(vectors: Array2<f32>) -> Self {
        let k = vectors.nrows();
        let ema_embed_sum = vectors.clone();
        Self {
            vectors,
            ema_cluster_size: Array1::ones(k),
            ema_embed_sum,
            decay: DEFAULT_DECAY,
            epsilon: DEFAULT_EPSILON,
            unused_steps: vec![0; k],
            reseed_after: Some(DEFAULT_RESEED_AFTER),
        }
    }

    /// Uniform random codebook (tests and cold starts).
    pub fn new_random(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let vectors = Array2::from_shape_fn((k, dim), |_| unit_uniform(rng) - 0.5);
        Self::from_vectors(vectors)
    }

    /// Draw code vectors from a batch of latents (random rows plus a small
    /// jitter so duplicate draws stay distinct).
    pub fn init_from_latents(latents: &Array2<f32>, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = latents.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("no latents to initialize from".into()));
        }
        let dim = latents.ncols();
        let std = {
            let mean = latents.iter().map(|&v| v as f64).sum::<f64>() / latents.len() as f64;
            let var = latents.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
                / latents.len() as f64;
            var.sqrt() as f32
        };
        let jitter = 1e-3 * std.max(1e-3);
        let mut vectors = Array2::zeros((k, dim));
        for i in 0..k {
            let row = (rng.next_u64() % n as u64) as usize;
            for d in 0..dim {
                vectors[[i, d]] = latents[[row, d]] + jitter * (unit_uniform(rng) - 0.5);
            }
        }
        Ok(Self::from_vectors(vectors))
    }

    /// Codebook as a `[k, dim]` tensor for decode-side lookups.
    pub fn to_tensor(&self, device: &candle_core::Device) -> Result<Tensor> {
        let flat: Vec<f32> = self.vectors.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (self.k(), self.dim()), device)?)
    }

    /// Rows of the codebook for a code sequence, `[len, dim]`.
    pub fn lookup(&self, codes: &[u32], device: &candle_core::Device) -> Result<Tensor> {
        let k = self.k();
        let mut flat: Vec<f32> = Vec::with_capacity(codes.len() * self.dim());
        for &c in codes {
            if c as usize >= k {
                return Err(Error::InvalidInput(format!("code {c} out of range 0..{k}")));
            }
            flat.extend(self.vectors.row(c as usize).iter());
        }
        Ok(Tensor::from_vec(flat, (codes.len(), self.dim()), device)?)
    }
}

fn unit_uniform(rng: &mut ChaCha8Rng) -> f32 {
    (rng.next_u32() as f64 / (u32::MAX as f64 + 1.0)) as f32
}

pub struct QuantizationResult {
    /// Row-major `[batch * t_lat]` code indices.
    pub codes: Vec<u32>,
    /// Straight-through tensor: values are exactly the codebook rows, the
    /// gradient path is the identity onto the input latents.
    pub quantized_st: Tensor,
    /// Raw codebook rows, no gradient path, `(batch, t_lat, dim)`.
    pub quantized: Tensor,
    /// Mean squared error between input and (stopped) quantized values.
    pub commitment_loss: Tensor,
    pub perplexity: f64,
    pub utilization: f64,
}

/// Exact squared distance in f64.
fn exact_dist2(c: &[f32], v: &[f32]) -> f64 {
    c.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum()
}

/// Nearest codebook row per latent, ties to the lowest index.
///
/// `latents` is `(batch, t, dim)`. The fast expanded-form f32 pass selects
/// candidates; the exact pass decides.
pub fn quantize(latents: &Tensor, cb: &Codebook) -> Result<QuantizationResult> {
    let (b, t, d) = latents.dims3().map_err(|_| {
        Error::Shape(format!("latents must be (batch, t, dim), got {:?}", latents.dims()))
    })?;
    if d != cb.dim() {
        return Err(Error::Shape(format!(
            "latent dim {d} != codebook dim {}",
            cb.dim()
        )));
    }
    let n = b * t;
    let flat = latents.reshape((n, d))?;
    let c_host: Vec<f32> = flat.flatten_all()?.to_vec1::<f32>()?;
    if c_host.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite latent passed to quantizer".into()));
    }

    let device = latents.device();
    let cb_t = cb.to_tensor(device)?;
    // d2 = |c|^2 - 2 c V^T + |V|^2, computed batched.
    let c2 = flat.sqr()?.sum_keepdim(1)?;
    let v2 = cb_t.sqr()?.sum_keepdim(1)?.reshape((1, cb.k()))?;
    let cross = flat.matmul(&cb_t.t()?)?;
    let d2 = c2.broadcast_add(&v2)?.broadcast_sub(&(cross * 2.0)?)?;
    let d2_host: Vec<f32> = d2.flatten_all()?.to_vec1::<f32>()?;

    let k = cb.k();
    let cb_flat: &[f32] = cb.vectors.as_slice().expect("codebook row-major");
    let mut codes = Vec::with_capacity(n);
    for row in 0..n {
        let dr = &d2_host[row * k..(row + 1) * k];
        let mut fast_min = f32::INFINITY;
        for &v in dr {
            if v < fast_min {
                fast_min = v;
            }
        }
        // Anything this close to the fast minimum gets re-checked exactly.
        let margin = 1e-3f32 * (1.0 + fast_min.abs());
        let c_row = &c_host[row * d..(row + 1) * d];
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (idx, &v) in dr.iter().enumerate() {
            if v <= fast_min + margin {
                let exact = exact_dist2(c_row, &cb_flat[idx * d..(idx + 1) * d]);
                if exact < best_d {
                    best_d = exact;
                    best = idx;
                }
            }
        }
        codes.push(best as u32);
    }

    let quantized = cb.lookup(&codes, device)?.reshape((b, t, d))?;
    // Values are exactly the codebook rows (x - x is exactly zero), while the
    // gradient of the non-detached term is the identity on the latents.
    let quantized_st = (&quantized + (latents - latents.detach())?)?;
    let commitment_loss = commitment_loss(latents, &quantized)?;
    let perplexity = perplexity(&codes, k)?;
    let utilization = utilization(&codes, k)?;
    Ok(QuantizationResult { codes, quantized_st, quantized, commitment_loss, perplexity, utilization })
}

/// Mean over every element of `(c - stop_gradient(quantized))^2`.
pub fn commitment_loss(c: &Tensor, quantized: &Tensor) -> Result<Tensor> {
    if c.dims() != quantized.dims() {
        return Err(Error::Shape(format!(
            "commitment shapes differ: {:?} vs {:?}",
            c.dims(),
            quantized.dims()
        )));
    }
    Ok((c - quantized.detach())?.sqr()?.mean_all()?)
}

/// Exponential of the empirical code-distribution entropy, in `[1, k]`.
pub fn perplexity(codes: &[u32], k: usize) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::InvalidInput("perplexity of empty code sequence".into()));
    }
    let mut counts = vec![0u64; k];
    for &c in codes {
        counts[c as usize] += 1;
    }
    let n = codes.len() as f64;
    let mut entropy = 0.0f64;
    for &cnt in &counts {
        if cnt > 0 {
            let p = cnt as f64 / n;
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Fraction of the codebook used at least once.
pub fn utilization(codes: &[u32], k: usize) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::InvalidInput("utilization of empty code sequence".into()));
    }
    let mut seen = vec![false; k];
    let mut distinct = 0usize;
    for &c in codes {
        if !seen[c as usize] {
            seen[c as usize] = true;
            distinct += 1;
        }
    }
    Ok(distinct as f64 / k as f64)
}

impl Codebook {
    /// One EMA update from a batch of latents and their assignments, then
    /// dead-code reseeding where enabled.
    pub fn ema_update(
        &mut self,
        latents: &Array2<f32>,
        codes: &[u32],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let (k, d) = (self.k(), self.dim());
        if latents.nrows() != codes.len() || latents.ncols() != d {
            return Err(Error::Shape(format!(
                "latents {:?} vs {} codes, dim {d}",
                latents.shape(),
                codes.len()
            )));
        }
        let mut counts = vec![0f32; k];
        let mut sums = Array2::<f32>::zeros((k, d));
        for (row, &code) in codes.iter().enumerate() {
            let code = code as usize;
            counts[code] += 1.0;
            let mut dst = sums.row_mut(code);
            for (s, &v) in dst.iter_mut().zip(latents.row(row)) {
                *s += v;
            }
        }

        let one_minus = 1.0 - self.decay;
        for i in 0..k {
            self.ema_cluster_size[i] = self.decay * self.ema_cluster_size[i] + one_minus * counts[i];
            for j in 0..d {
                self.ema_embed_sum[[i, j]] =
                    self.decay * self.ema_embed_sum[[i, j]] + one_minus * sums[[i, j]];
            }
            let denom = self.ema_cluster_size[i] + self.epsilon;
            for j in 0..d {
                self.vectors[[i, j]] = self.ema_embed_sum[[i, j]] / denom;
            }
        }

        for i in 0..k {
            if counts[i] > 0.0 {
                self.unused_steps[i] = 0;
            } else {
                self.unused_steps[i] = self.unused_steps[i].saturating_add(1);
            }
        }
        if let Some(limit) = self.reseed_after {
            // Per-dimension batch spread sets the split jitter scale. A dead
            // code respawns as a jittered copy of the busiest one and takes
            // half of its running mass: the plane between the twins cuts
            // through that cluster, so both halves see traffic on the next
            // batch. Respawning at a sampled latent instead strands the code
            // on the shell of the distribution, where its cell is empty.
            let mut jitter: Option<Vec<f32>> = None;
            for i in 0..k {
                if self.unused_steps[i] < limit {
                    continue;
                }
                let scale = jitter.get_or_insert_with(|| batch_std(latents));
                let donor = self
                    .ema_cluster_size
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(idx, _)| idx)
                    .expect("codebook is never empty");
                if donor == i {
                    continue;
                }
                let half_size = self.ema_cluster_size[donor] * 0.5;
                for j in 0..d {
                    let noise = SPLIT_JITTER * scale[j] * (2.0 * unit_uniform(rng) - 1.0);
                    self.vectors[[i, j]] = self.vectors[[donor, j]] + noise;
                    self.ema_embed_sum[[donor, j]] *= 0.5;
                    self.ema_embed_sum[[i, j]] = self.ema_embed_sum[[donor, j]] + noise * half_size;
                }
                self.ema_cluster_size[donor] = half_size;
                self.ema_cluster_size[i] = half_size;
                self.unused_steps[i] = 0;
                self.unused_steps[donor] = 0;
            }
        }
        Ok(())
    }
}

/// Split jitter relative to the per-dimension batch spread.
const SPLIT_JITTER: f32 = 0.1;

/// Per-dimension standard deviation of a latent batch, floored away from
/// zero so a degenerate batch still separates split twins.
fn batch_std(latents: &Array2<f32>) -> Vec<f32> {
    let n = latents.nrows() as f64;
    latents
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            (var.sqrt() as f32).max(1e-4)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use candle_core::{Device, Var};
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_latents(seed: u64, b: usize, t: usize, d: usize) -> Tensor {
        let mut r = rng(seed);
        let v: Vec<f32> = (0..b * t * d).map(|_| unit_uniform(&mut r) * 2.0 - 1.0).collect();
        Tensor::from_vec(v, (b, t, d), &Device::Cpu).unwrap()
    }

    /// Independent oracle: brute-force f64 nearest neighbor.
    fn oracle_codes(latents: &Tensor, cb: &Codebook) -> Vec<u32> {
        let (b, t, d) = latents.dims3().unwrap();
        let flat = latents.reshape((b * t, d)).unwrap().to_vec2::<f32>().unwrap();
        flat.iter()
            .map(|c| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for k in 0..cb.k() {
                    let v: Vec<f32> = cb.vectors.row(k).iter().copied().collect();
                    let dist = exact_dist2(c, &v);
                    if dist < best_d {
                        best_d = dist;
                        best = k;
                    }
                }
                best as u32
            })
            .collect()
    }

    #[test]
    fn single_entry_codebook_assigns_zero() {
        let cb = Codebook::new_random(1, 4, &mut rng(1));
        let latents = rand_latents(2, 1, 6, 4);
        let r = quantize(&latents, &cb).unwrap();
        assert!(r.codes.iter().all(|&c| c == 0));
        assert_relative_eq!(r.perplexity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_latent_hits_its_code_with_zero_commitment() {
        let cb = Codebook::new_random(8, 4, &mut rng(3));
        let row: Vec<f32> = cb.vectors.row(5).iter().copied().collect();
        let latents = Tensor::from_vec(row, (1, 1, 4), &Device::Cpu).unwrap();
        let r = quantize(&latents, &cb).unwrap();
        assert_eq!(r.codes, vec![5]);
        assert_eq!(r.commitment_loss.to_vec0::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        for seed in 0..50u64 {
            let cb = Codebook::new_random(8, 6, &mut rng(seed));
            let latents = rand_latents(seed + 1000, 2, 8, 6);
            let got = quantize(&latents, &cb).unwrap().codes;
            assert_eq!(got, oracle_codes(&latents, &cb), "seed {seed}");
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let mut cb = Codebook::new_random(6, 3, &mut rng(7));
        let dup: Vec<f32> = cb.vectors.row(2).iter().copied().collect();
        for (j, v) in dup.iter().enumerate() {
            cb.vectors[[5, j]] = *v;
        }
        // A latent nearest to the duplicated vector must pick index 2.
        let latents = Tensor::from_vec(dup, (1, 1, 3), &Device::Cpu).unwrap();
        let r = quantize(&latents, &cb).unwrap();
        assert_eq!(r.codes, vec![2]);
    }

    #[test]
    fn quantized_rows_equal_codebook_rows_bitwise() {
        let cb = Codebook::new_random(16, 5, &mut rng(9));
        let latents = rand_latents(10, 2, 7, 5);
        let r = quantize(&latents, &cb).unwrap();
        let q = r.quantized.reshape((14, 5)).unwrap().to_vec2::<f32>().unwrap();
        let st = r.quantized_st.reshape((14, 5)).unwrap().to_vec2::<f32>().unwrap();
        for (row, &code) in r.codes.iter().enumerate() {
            let expect: Vec<f32> = cb.vectors.row(code as usize).iter().copied().collect();
            assert_eq!(q[row], expect, "raw row {row}");
            assert_eq!(st[row], expect, "straight-through row {row}");
        }
    }

    #[test]
    fn straight_through_gradient_is_identity() {
        let cb = Codebook::new_random(4, 3, &mut rng(11));
        let mut r = rng(12);
        let v: Vec<f32> = (0..2 * 3).map(|_| unit_uniform(&mut r) - 0.5).collect();
        let c_var = Var::from_vec(v, (1, 2, 3), &Device::Cpu).unwrap();
        let latents = c_var.as_tensor().clone();
        let q = quantize(&latents, &cb).unwrap();
        // Loss = sum(q_st * weights); d loss / d c must equal the weights.
        let weights = rand_latents(13, 1, 2, 3);
        let loss = (&q.quantized_st * &weights).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(c_var.as_tensor()).unwrap();
        assert_eq!(
            g.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            weights.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn commitment_matches_elementwise_oracle() {
        let a = rand_latents(20, 2, 4, 5);
        let b = rand_latents(21, 2, 4, 5);
        let got = commitment_loss(&a, &b).unwrap().to_vec0::<f32>().unwrap() as f64;
        let av = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let bv = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let oracle: f64 = av
            .iter()
            .zip(&bv)
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / av.len() as f64;
        assert_relative_eq!(got, oracle, epsilon = 1e-6);

        assert_eq!(commitment_loss(&a, &a).unwrap().to_vec0::<f32>().unwrap(), 0.0);
        let shifted = (&a + 1.0).unwrap();
        assert_relative_eq!(
            commitment_loss(&shifted, &a).unwrap().to_vec0::<f32>().unwrap() as f64,
            1.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn ema_three_steps_match_scalar_oracle() {
        // One code, one dimension: the recursion is a scalar we can track by
        // hand in f64.
        let vectors = Array2::from_shape_vec((1, 1), vec![0.5f32]).unwrap();
        let mut cb = Codebook::from_vectors(vectors);
        cb.reseed_after = None;
        let mut size = 1.0f64;
        let mut sum = 0.5f64;
        let mut r = rng(30);
        for step in 0..3 {
            let batch = Array2::from_shape_vec((2, 1), vec![1.0f32 + step as f32, 2.0]).unwrap();
            cb.ema_update(&batch, &[0, 0], &mut r).unwrap();
            size = 0.99 * size + 0.01 * 2.0;
            sum = 0.99 * sum + 0.01 * (3.0 + step as f64);
            let expect = sum / (size + 1e-5);
            assert_relative_eq!(cb.vectors[[0, 0]] as f64, expect, epsilon = 1e-5);
        }
    }

    #[test]
    fn degenerate_decay_snaps_to_batch_mean() {
        let vectors = Array2::from_shape_vec((2, 2), vec![9.0f32, 9.0, -9.0, -9.0]).unwrap();
        let mut cb = Codebook::from_vectors(vectors);
        cb.decay = 0.0;
        cb.reseed_after = None;
        let v = [0.25f32, -0.75];
        let batch =
            Array2::from_shape_vec((3, 2), vec![v[0], v[1], v[0], v[1], v[0], v[1]]).unwrap();
        let mut r = rng(31);
        cb.ema_update(&batch, &[0, 0, 0], &mut r).unwrap();
        for j in 0..2 {
            assert_relative_eq!(cb.vectors[[0, j]], v[j], epsilon = 1e-4);
        }
        assert!(cb.vectors.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn unused_code_splits_the_busiest_after_limit() {
        let vectors = Array2::from_shape_vec((2, 1), vec![0.0f32, 100.0]).unwrap();
        let mut cb = Codebook::from_vectors(vectors);
        cb.reseed_after = Some(5);
        let batch = Array2::from_shape_vec((2, 1), vec![1.0f32, 1.5]).unwrap();
        let mut r = rng(32);
        for _ in 0..5 {
            cb.ema_update(&batch, &[0, 0], &mut r).unwrap();
        }
        // Code 1 went unused for 5 updates, so it respawns next to code 0
        // (the only busy code) instead of staying at 100.
        let donor = cb.vectors[[0, 0]];
        let twin = cb.vectors[[1, 0]];
        assert!(
            (twin - donor).abs() <= SPLIT_JITTER * 0.25 + 1e-6,
            "twin {twin} not near donor {donor}"
        );
        assert_ne!(twin, donor, "split twins must be separable");
        assert_eq!(cb.unused_steps[1], 0);
        // The donor's running mass was shared, not duplicated.
        assert_relative_eq!(cb.ema_cluster_size[0], cb.ema_cluster_size[1], epsilon = 1e-6);
        // Vector/mass bookkeeping stays consistent: vector == sum / size.
        for i in 0..2 {
            assert_relative_eq!(
                cb.ema_embed_sum[[i, 0]] / (cb.ema_cluster_size[i] + cb.epsilon),
                cb.vectors[[i, 0]],
                epsilon = 1e-3
            );
        }

        // With reseeding disabled the dead code only shrinks, staying finite.
        let vectors = Array2::from_shape_vec((2, 1), vec![0.0f32, 100.0]).unwrap();
        let mut cb = Codebook::from_vectors(vectors);
        cb.reseed_after = None;
        for _ in 0..50 {
            cb.ema_update(&batch, &[0, 0], &mut r).unwrap();
        }
        assert!(cb.vectors[[1, 0]].is_finite());
        assert!(cb.vectors[[1, 0]].abs() < 100.0);
    }

    #[test]
    fn splitting_escapes_a_fully_collapsed_assignment() {
        // Every latent lands on code 0; all other codes are dead. After the
        // split limit passes, repeated updates must spread usage: the batch
        // has two clusters, and a split twin of the hoarding code captures
        // one of them within a few steps.
        let mut r = rng(33);
        let latents = Array2::from_shape_vec(
            (8, 2),
            vec![
                1.0f32, 1.0, 1.1, 0.9, 0.9, 1.1, 1.0, 0.9, -1.0, -1.0, -1.1, -0.9, -0.9, -1.1,
                -1.0, -0.9,
            ],
        )
        .unwrap();
        let vectors = Array2::from_shape_vec((4, 2), vec![0.0f32, 0.0, 50.0, 50.0, -50.0, 50.0, 50.0, -50.0]).unwrap();
        let mut cb = Codebook::from_vectors(vectors);
        cb.reseed_after = Some(2);
        let device = Device::Cpu;
        let mut distinct = 0usize;
        for _ in 0..20 {
            let t = Tensor::from_vec(
                latents.iter().copied().collect::<Vec<f32>>(),
                (1, 8, 2),
                &device,
            )
            .unwrap();
            let res = quantize(&t, &cb).unwrap();
            distinct = res
                .codes
                .iter()
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            cb.ema_update(&latents, &res.codes, &mut r).unwrap();
        }
        assert!(distinct >= 2, "assignment never spread beyond one code");
    }

    #[test]
    fn perplexity_and_utilization_examples() {
        assert_relative_eq!(perplexity(&[3; 20], 8192).unwrap(), 1.0, epsilon = 1e-12);
        let uniform: Vec<u32> = (0..64).collect();
        assert_relative_eq!(perplexity(&uniform, 8192).unwrap(), 64.0, epsilon = 1e-9);
        let codes = [0u32, 0, 1, 1, 2, 2, 3, 3];
        assert_relative_eq!(utilization(&codes, 8192).unwrap(), 4.0 / 8192.0, epsilon = 1e-15);
        assert!(perplexity(&[], 8).is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let cb = Codebook::new_random(4, 2, &mut rng(40));
        let latents = Tensor::from_vec(vec![f32::NAN, 0.0], (1, 1, 2), &Device::Cpu).unwrap();
        assert!(matches!(quantize(&latents, &cb), Err(Error::Numerical(_))));
    }

    #[test]
    fn init_from_latents_tracks_batch_scale() {
        let mut r = rng(50);
        let latents = Array2::from_shape_fn((10, 3), |_| unit_uniform(&mut r) * 10.0);
        let cb = Codebook::init_from_latents(&latents, 32, &mut r).unwrap();
        assert_eq!(cb.vectors.shape(), &[32, 3]);
        // Every vector sits near some latent row.
        for i in 0..32 {
            let v: Vec<f32> = cb.vectors.row(i).iter().copied().collect();
            let nearest = (0..10)
                .map(|r_| {
                    let row: Vec<f32> = latents.row(r_).iter().copied().collect();
                    exact_dist2(&v, &row)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1.0, "vector {i} far from all latents: {nearest}");
        }
    }
}
