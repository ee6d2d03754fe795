//! Pattern-memory feature enhancement.
//!
//! Features of shape B x L x D are projected down to the 128-dimensional
//! pattern space, matched against a bank of patterns by cosine
//! similarity, and the softmax-weighted average of the top-K patterns is
//! projected back up and added to the input as a residual.
//!
//! The kernel is forward-only and deterministic: ties in similarity
//! break toward the lower pattern index, and a zero-norm query scores 0
//! against every pattern.

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Fixed pattern-space dimensionality.
pub const PATTERN_DIM: usize = 128;

/// Queries with norm below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-12;

pub const MBK_MAGIC: &[u8; 4] = b"MBK1";

/// Dense B x L x D feature tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch<R> {
    pub batch: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub data: Vec<R>,
}

impl<R: Float> FeatureBatch<R> {
    pub fn new(batch: usize, seq_len: usize, dim: usize, data: Vec<R>) -> Result<Self, MemoryError> {
        if batch == 0 || seq_len == 0 || dim == 0 || data.len() != batch * seq_len * dim {
            return Err(MemoryError::BadShape {
                batch,
                seq_len,
                dim,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::NonFinite);
        }
        Ok(FeatureBatch { batch, seq_len, dim, data })
    }

    fn row(&self, b: usize, l: usize) -> &[R] {
        let start = (b * self.seq_len + l) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// A linear map `out = weight * in + bias`, weight stored row-major as
/// out_dim rows of in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<R> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<R>,
    pub bias: Vec<R>,
}

impl<R: Float> Linear<R> {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![R::zero(); dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = R::one();
        }
        Linear { in_dim: dim, out_dim: dim, weight, bias: vec![R::zero(); dim] }
    }

    fn apply(&self, input: &[R], out: &mut [R]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks(self.in_dim).zip(self.bias.iter()))
        {
            let mut acc = *b;
            for (w, x) in row.iter().zip(input.iter()) {
                acc = acc + *w * *x;
            }
            *o = acc;
        }
    }
}

/// M learnable 128-d patterns plus the down/up projections around them.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<R> {
    pub patterns: Vec<R>, // m_count x PATTERN_DIM, row-major
    pub w_down: Linear<R>,
    pub w_up: Linear<R>,
    pub m_count: usize,
}

/// Top-K retrieval output, shape B x L x K for each field.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult<R> {
    pub batch: usize,
    pub seq_len: usize,
    pub k: usize,
    pub indices: Vec<usize>,
    pub scores: Vec<R>,
    pub weights: Vec<R>,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("bad feature shape {batch}x{seq_len}x{dim} for {len} values")]
    BadShape { batch: usize, seq_len: usize, dim: usize, len: usize },
    #[error("features contain non-finite values")]
    NonFinite,
    #[error("k must satisfy 1 <= k <= {m}, got {k}")]
    BadK { k: usize, m: usize },
    #[error("feature dim {got} does not match bank dim {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("bank file: {0}")]
    BadFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Deterministic random bank: patterns ~ N(0, 1/128), projection
/// weights ~ N(0, 1/fan_in), zero biases.
pub fn init_bank<R: Float>(dim: usize, m_count: usize, seed: u64) -> MemoryBank<R> {
    assert!(dim >= 1 && m_count >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |scale: f64, n: usize| -> Vec<R> {
        (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                R::from(v * scale).unwrap()
            })
            .collect()
    };
    let patterns = normal(1.0 / (PATTERN_DIM as f64).sqrt(), m_count * PATTERN_DIM);
    let w_down_weight = normal(1.0 / (dim as f64).sqrt(), PATTERN_DIM * dim);
    let w_up_weight = normal(1.0 / (PATTERN_DIM as f64).sqrt(), dim * PATTERN_DIM);
    MemoryBank {
        patterns,
        w_down: Linear {
            in_dim: dim,
            out_dim: PATTERN_DIM,
            weight: w_down_weight,
            bias: vec![R::zero(); PATTERN_DIM],
        },
        w_up: Linear {
            in_dim: PATTERN_DIM,
            out_dim: dim,
            weight: w_up_weight,
            bias: vec![R::zero(); dim],
        },
        m_count,
    }
}

impl<R: Float> MemoryBank<R> {
    pub fn feature_dim(&self) -> usize {
        self.w_down.in_dim
    }

    pub fn pattern(&self, i: usize) -> &[R] {
        &self.patterns[i * self.pattern_dim()..(i + 1) * self.pattern_dim()]
    }

    fn pattern_dim(&self) -> usize {
        self.w_down.out_dim
    }
}

fn cosine<R: Float>(u: &[R], v: &[R]) -> R {
    let floor = R::from(NORM_FLOOR).unwrap();
    let mut dot = R::zero();
    let mut nu = R::zero();
    let mut nv = R::zero();
    for (a, b) in u.iter().zip(v.iter()) {
        dot = dot + *a * *b;
        nu = nu + *a * *a;
        nv = nv + *b * *b;
    }
    let nu = nu.sqrt();
    let nv = nv.sqrt();
    if nu < floor || nv < floor {
        R::zero()
    } else {
        dot / (nu * nv)
    }
}

/// Top-K most similar patterns for a single projected query.
/// Ties break toward the lower pattern index.
pub fn retrieve_query<R: Float>(
    query: &[R],
    bank: &MemoryBank<R>,
    k: usize,
) -> (Vec<usize>, Vec<R>, Vec<R>) {
    let mut scored: Vec<(usize, R)> = (0..bank.m_count)
        .map(|i| (i, cosine(query, bank.pattern(i))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    let indices: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
    let scores: Vec<R> = scored.iter().map(|&(_, s)| s).collect();
    (indices, softmax(&scores), scores)
}

fn softmax<R: Float>(scores: &[R]) -> Vec<R> {
    let max = scores.iter().cloned().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum = exps.iter().cloned().fold(R::zero(), |a, b| a + b);
    exps.iter().map(|&e| e / sum).collect()
}

pub fn retrieve<R: Float>(
    features: &FeatureBatch<R>,
    bank: &MemoryBank<R>,
    k: usize,
) -> Result<RetrievalResult<R>, MemoryError> {
    if k == 0 || k > bank.m_count {
        return Err(MemoryError::BadK { k, m: bank.m_count });
    }
    if features.dim != bank.feature_dim() {
        return Err(MemoryError::DimMismatch {
            got: features.dim,
            expected: bank.feature_dim(),
        });
    }
    let n = features.batch * features.seq_len;
    let mut indices = Vec::with_capacity(n * k);
    let mut scores = Vec::with_capacity(n * k);
    let mut weights = Vec::with_capacity(n * k);
    let mut query = vec![R::zero(); bank.pattern_dim()];
    for b in 0..features.batch {
        for l in 0..features.seq_len {
            bank.w_down.apply(features.row(b, l), &mut query);
            let (idx, w, s) = retrieve_query(&query, bank, k);
            indices.extend(idx);
            weights.extend(w);
            scores.extend(s);
        }
    }
    Ok(RetrievalResult {
        batch: features.batch,
        seq_len: features.seq_len,
        k,
        indices,
        scores,
        weights,
    })
}

/// Residual enhancement: input + up-projected softmax-weighted average
/// of each query's top-K patterns. Output shape equals input shape.
pub fn enhance<R: Float>(
    features: &FeatureBatch<R>,
    bank: &MemoryBank<R>,
    k: usize,
) -> Result<FeatureBatch<R>, MemoryError> {
    let retrieval = retrieve(features, bank, k)?;
    let d_p = bank.pattern_dim();
    let mut out = features.data.clone();
    let mut avg = vec![R::zero(); d_p];
    let mut lifted = vec![R::zero(); features.dim];
    for q in 0..features.batch * features.seq_len {
        for v in avg.iter_mut() {
            *v = R::zero();
        }
        for j in 0..k {
            let w = retrieval.weights[q * k + j];
            let p = bank.pattern(retrieval.indices[q * k + j]);
            for (a, &pv) in avg.iter_mut().zip(p.iter()) {
                *a = *a + w * pv;
            }
        }
        bank.w_up.apply(&avg, &mut lifted);
        let start = q * features.dim;
        for (o, &dv) in out[start..start + features.dim].iter_mut().zip(lifted.iter()) {
            *o = *o + dv;
        }
    }
    Ok(FeatureBatch {
        batch: features.batch,
        seq_len: features.seq_len,
        dim: features.dim,
        data: out,
    })
}

/// Serialize a bank as little-endian f64: header `MBK1`, D u16, M u16,
/// then patterns row-major, w_down weight row-major, w_down bias,
/// w_up weight, w_up bias.
pub fn save_bank<R: Float>(bank: &MemoryBank<R>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MBK_MAGIC);
    out.extend_from_slice(&(bank.feature_dim() as u16).to_le_bytes());
    out.extend_from_slice(&(bank.m_count as u16).to_le_bytes());
    let mut push = |vals: &[R]| {
        for v in vals {
            out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
        }
    };
    push(&bank.patterns);
    push(&bank.w_down.weight);
    push(&bank.w_down.bias);
    push(&bank.w_up.weight);
    push(&bank.w_up.bias);
    out
}

pub fn load_bank<R: Float>(bytes: &[u8]) -> Result<MemoryBank<R>, MemoryError> {
    if bytes.len() < 8 {
        return Err(MemoryError::BadFile("truncated header".into()));
    }
    if &bytes[0..4] != MBK_MAGIC {
        return Err(MemoryError::BadFile("bad magic".into()));
    }
    let dim = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let m_count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if dim == 0 || m_count == 0 {
        return Err(MemoryError::BadFile("zero dimension".into()));
    }
    let counts = [
        m_count * PATTERN_DIM,
        PATTERN_DIM * dim,
        PATTERN_DIM,
        dim * PATTERN_DIM,
        dim,
    ];
    let total: usize = counts.iter().sum();
    if bytes.len() != 8 + total * 8 {
        return Err(MemoryError::BadFile(format!(
            "expected {} bytes, got {}",
            8 + total * 8,
            bytes.len()
        )));
    }
    let mut pos = 8usize;
    let mut read = |n: usize| -> Vec<R> {
        let vals = (0..n)
            .map(|i| {
                let s = pos + i * 8;
                R::from(f64::from_le_bytes(bytes[s..s + 8].try_into().unwrap())).unwrap()
            })
            .collect();
        pos += n * 8;
        vals
    };
    let patterns = read(counts[0]);
    let w_down_weight = read(counts[1]);
    let w_down_bias = read(counts[2]);
    let w_up_weight = read(counts[3]);
    let w_up_bias = read(counts[4]);
    Ok(MemoryBank {
        patterns,
        w_down: Linear { in_dim: dim, out_dim: PATTERN_DIM, weight: w_down_weight, bias: w_down_bias },
        w_up: Linear { in_dim: PATTERN_DIM, out_dim: dim, weight: w_up_weight, bias: w_up_bias },
        m_count,
    })
}
