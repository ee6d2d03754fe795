//! Evaluation protocol: language-aware segmentation, BLEU-1..4 without
//! smoothing, word-level accuracy, and the deterministic 7:1:2 split.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAX_NGRAM: usize = 4;

/// BLEU-1..4 plus the quantities they are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    pub bleu: [f64; MAX_NGRAM],
    pub brevity_penalty: f64,
    pub precisions: [f64; MAX_NGRAM],
    pub hyp_len: usize,
    pub ref_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input list")]
    EmptyInput,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

fn is_cjk(c: char) -> bool {
    matches!(c, '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}')
}

/// Evaluation tokens: CJK chars and digits one token each, ASCII-letter
/// runs lowercased as word tokens, everything else dropped.
pub fn segment(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_ascii_alphabetic() {
            word.push(c.to_ascii_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if is_cjk(c) || c.is_ascii_digit() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram total for one pair.
fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (u64, u64) {
    let hyp_counts = ngram_counts(hyp, n);
    let ref_counts = ngram_counts(reference, n);
    let mut matched = 0u64;
    let mut total = 0u64;
    for (gram, &c) in &hyp_counts {
        total += c;
        matched += c.min(ref_counts.get(gram).copied().unwrap_or(0));
    }
    (matched, total)
}

fn report_from_counts(
    matched: [u64; MAX_NGRAM],
    total: [u64; MAX_NGRAM],
    hyp_len: usize,
    ref_len: usize,
) -> BleuReport {
    let mut precisions = [0.0; MAX_NGRAM];
    for i in 0..MAX_NGRAM {
        if total[i] > 0 {
            precisions[i] = matched[i] as f64 / total[i] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 || hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut bleu = [0.0; MAX_NGRAM];
    for n in 1..=MAX_NGRAM {
        // a zero precision at any order <= n zeroes BLEU-n (no smoothing)
        if hyp_len == 0 || precisions[..n].iter().any(|&p| p == 0.0) {
            bleu[n - 1] = 0.0;
        } else {
            let log_mean = precisions[..n].iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            bleu[n - 1] = brevity_penalty * log_mean.exp();
        }
    }
    BleuReport { bleu, brevity_penalty, precisions, hyp_len, ref_len }
}

/// Sentence-level BLEU over `segment()` tokens.
pub fn bleu(hyp: &str, reference: &str) -> BleuReport {
    let h = segment(hyp);
    let r = segment(reference);
    let mut matched = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    for n in 1..=MAX_NGRAM {
        let (m, t) = clipped_matches(&h, &r, n);
        matched[n - 1] = m;
        total[n - 1] = t;
    }
    report_from_counts(matched, total, h.len(), r.len())
}

/// Corpus-level BLEU: n-gram match counts and lengths are pooled over
/// all pairs before the precision and brevity-penalty formulas apply.
pub fn corpus_bleu(pairs: &[(String, String)]) -> Result<BleuReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut matched = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in pairs {
        let h = segment(hyp);
        let r = segment(reference);
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_NGRAM {
            let (m, t) = clipped_matches(&h, &r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    Ok(report_from_counts(matched, total, hyp_len, ref_len))
}

/// Mean of per-pair sentence BLEU; the alternative aggregation, labeled
/// as such wherever it is reported.
pub fn average_sentence_bleu(pairs: &[(String, String)]) -> Result<[f64; MAX_NGRAM], MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sums = [0.0; MAX_NGRAM];
    for (hyp, reference) in pairs {
        let r = bleu(hyp, reference);
        for i in 0..MAX_NGRAM {
            sums[i] += r.bleu[i];
        }
    }
    for s in sums.iter_mut() {
        *s /= pairs.len() as f64;
    }
    Ok(sums)
}

/// Lowercase and keep only ASCII letters and digits.
pub fn normalize_for_accuracy(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Fraction of pairs whose normalized forms match exactly.
pub fn word_accuracy(pairs: &[(String, String)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = pairs
        .iter()
        .filter(|(h, g)| normalize_for_accuracy(h) == normalize_for_accuracy(g))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Deterministic shuffled 7:1:2 split. |train| = floor(0.7n),
/// |val| = round-half-up(0.1n), |test| = remainder.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<SplitAssignment, MetricsError> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_train = n * 7 / 10;
    let n_val = (n + 5) / 10;
    let test = shuffled.split_off(n_train + n_val.min(n - n_train));
    let val = shuffled.split_off(n_train);
    Ok(SplitAssignment { train: shuffled, val, test })
}
