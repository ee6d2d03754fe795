//! End-to-end plumbing: dataset manifests, recognizer backends, the
//! noisy stub recognizer, configuration loading, and the four-arm
//! benchmark harness.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{parse_evs1, EventStream};
use crate::glyph::{correct, tokenize, ContextScorer, GlyphDatabase, TokenKind};
use crate::memory::{enhance, init_bank, FeatureBatch};
use crate::metrics::corpus_bleu;
use crate::stack::{representative_frame, stack};

/// One dataset sample: id, event file path, ground-truth label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub events: String,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

/// JSONL prediction/label record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    OracleWithNoise { noise_rate: f64, seed: u64 },
    ExternalHttp { endpoint: String, timeout_ms: u64 },
    Echo,
    Identity,
}

/// Shipped defaults: 19 frames, K=64, prompt template 3, 10 candidates,
/// margin 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub t_count: usize,
    pub memory_k: usize,
    pub prompt_template: u8,
    pub max_candidates: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            t_count: 19,
            memory_k: 64,
            prompt_template: 3,
            max_candidates: 10,
            margin: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {0}: {1}")]
    BadManifest(usize, String),
    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),
    #[error("manifest file missing: {0}")]
    MissingFile(PathBuf),
    #[error("jsonl line {0}: {1}")]
    BadJsonl(usize, String),
    #[error("config: {0}")]
    BadConfig(String),
    #[error("transport error for {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("noise rate {0} outside [0,1]")]
    BadNoiseRate(f64),
    #[error(transparent)]
    Event(#[from] crate::event::EventError),
    #[error(transparent)]
    Stack(#[from] crate::stack::StackError),
    #[error(transparent)]
    Glyph(#[from] crate::glyph::GlyphError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
}

/// Load a JSONL manifest and verify ids are unique and every referenced
/// event file exists under `base_dir`.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| PipelineError::BadManifest(i + 1, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(PipelineError::DuplicateId(rec.id));
        }
        let file = base_dir.join(&rec.events);
        if !file.exists() {
            return Err(PipelineError::MissingFile(file));
        }
        records.push(rec);
    }
    Ok(DatasetManifest { records, base_dir })
}

pub fn read_jsonl(text: &str) -> Result<Vec<TextRecord>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| PipelineError::BadJsonl(i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl(records: &[TextRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Ground-truth labels corrupted by confusable substitutions: every
/// token with database candidates is replaced by a uniformly chosen
/// candidate with probability `noise_rate`. Deterministic per seed.
pub fn run_stub_recognizer(
    manifest: &DatasetManifest,
    noise_rate: f64,
    seed: u64,
    db: &GlyphDatabase,
) -> Result<Vec<TextRecord>, PipelineError> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(PipelineError::BadNoiseRate(noise_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        out.push(TextRecord {
            id: rec.id.clone(),
            text: inject_noise(&rec.label, noise_rate, db, &mut rng),
        });
    }
    Ok(out)
}

/// Single-text noise pass used by the stub recognizer and the fixtures.
pub fn inject_noise(
    label: &str,
    noise_rate: f64,
    db: &GlyphDatabase,
    rng: &mut ChaCha8Rng,
) -> String {
    let toks = tokenize(label);
    let mut surfaces: Vec<String> = toks.tokens.iter().map(|t| t.surface.clone()).collect();
    for (i, tok) in toks.tokens.iter().enumerate() {
        if tok.kind == TokenKind::Other {
            continue;
        }
        let cands = db.candidates(&tok.surface);
        if cands.is_empty() {
            continue;
        }
        if rng.gen::<f64>() < noise_rate {
            surfaces[i] = cands[rng.gen_range(0..cands.len())].clone();
        }
    }
    surfaces.concat()
}

/// POST {"prompt": ...} to `endpoint`, expect {"text": ...} back.
/// `endpoint` is `host:port/path` or `http://host:port/path`.
pub fn call_external(endpoint: &str, timeout_ms: u64, prompt: &str) -> Result<String, PipelineError> {
    let transport = |message: String| PipelineError::Transport {
        endpoint: endpoint.to_string(),
        message,
    };
    let stripped = endpoint.strip_prefix("http://").unwrap_or(endpoint);
    let (authority, path) = match stripped.find('/') {
        Some(i) => (&stripped[..i], &stripped[i..]),
        None => (stripped, "/"),
    };
    let body = serde_json::json!({ "prompt": prompt }).to_string();
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {authority}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let timeout = Duration::from_millis(timeout_ms);
    let mut stream = TcpStream::connect(authority).map_err(|e| transport(e.to_string()))?;
    stream.set_read_timeout(Some(timeout)).ok();
    stream.set_write_timeout(Some(timeout)).ok();
    stream
        .write_all(request.as_bytes())
        .map_err(|e| transport(e.to_string()))?;
    let mut response = Vec::new();
    stream
        .read_to_end(&mut response)
        .map_err(|e| transport(e.to_string()))?;
    let header_end = response
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| transport("malformed response: no header terminator".into()))?;
    let head = String::from_utf8_lossy(&response[..header_end]);
    let status_line = head.lines().next().unwrap_or("");
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| transport(format!("malformed status line {status_line:?}")))?;
    if !(200..300).contains(&status) {
        return Err(transport(format!("status {status}")));
    }
    let body_bytes = &response[header_end + 4..];
    let parsed: serde_json::Value = serde_json::from_slice(body_bytes)
        .map_err(|e| transport(format!("malformed body: {e}")))?;
    parsed
        .get("text")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| transport("response missing \"text\" field".into()))
}

/// Exact request body sent by `call_external`; exposed for transport
/// tests.
pub fn external_request_body(prompt: &str) -> String {
    serde_json::json!({ "prompt": prompt }).to_string()
}

/// [`crate::glyph::TextBackend`] over the external HTTP protocol.
pub struct HttpBackend {
    pub endpoint: String,
    pub timeout_ms: u64,
}

impl crate::glyph::TextBackend for HttpBackend {
    fn generate(&self, prompt: &str, original_text: &str) -> Result<String, crate::glyph::GlyphError> {
        call_external(&self.endpoint, self.timeout_ms, prompt).map_err(|e| {
            crate::glyph::GlyphError::Backend {
                message: e.to_string(),
                original: original_text.to_string(),
            }
        })
    }
}

const CONFIG_KEYS: [&str; 6] = ["t_count", "k", "template", "max_candidates", "margin", "seed"];

/// Flag values parsed by the CLI layer; `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct ConfigOverrides {
    pub t_count: Option<usize>,
    pub memory_k: Option<usize>,
    pub prompt_template: Option<u8>,
    pub max_candidates: Option<usize>,
    pub margin: Option<f64>,
    pub seed: Option<u64>,
}

/// Resolve the benchmark configuration with precedence
/// CLI flag > `ESTR_*` env var > config file > default.
pub fn load_config(
    file: Option<&Path>,
    flags: &ConfigOverrides,
    env: &HashMap<String, String>,
) -> Result<BenchConfig, PipelineError> {
    let mut values: HashMap<String, String> = HashMap::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PipelineError::BadConfig(format!("line {}: expected key = value", i + 1))
            })?;
            let key = k.trim().to_string();
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(PipelineError::BadConfig(format!("unknown key {key:?}")));
            }
            values.insert(key, v.trim().to_string());
        }
    }
    for key in CONFIG_KEYS {
        let env_key = format!("ESTR_{}", key.to_uppercase());
        if let Some(v) = env.get(&env_key) {
            values.insert(key.to_string(), v.clone());
        }
    }
    for key in env.keys() {
        if let Some(suffix) = key.strip_prefix("ESTR_") {
            if !CONFIG_KEYS.contains(&suffix.to_lowercase().as_str()) {
                return Err(PipelineError::BadConfig(format!("unknown env key {key:?}")));
            }
        }
    }
    fn parse<T: std::str::FromStr>(values: &HashMap<String, String>, key: &str) -> Result<Option<T>, PipelineError> {
        match values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| PipelineError::BadConfig(format!("bad value {v:?} for {key}"))),
        }
    }
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        t_count: flags
            .t_count
            .or(parse(&values, "t_count")?)
            .unwrap_or(defaults.t_count),
        memory_k: flags.memory_k.or(parse(&values, "k")?).unwrap_or(defaults.memory_k),
        prompt_template: flags
            .prompt_template
            .or(parse(&values, "template")?)
            .unwrap_or(defaults.prompt_template),
        max_candidates: flags
            .max_candidates
            .or(parse(&values, "max_candidates")?)
            .unwrap_or(defaults.max_candidates),
        margin: flags.margin.or(parse(&values, "margin")?).unwrap_or(defaults.margin),
        seed: flags.seed.or(parse(&values, "seed")?).unwrap_or(defaults.seed),
    };
    if cfg.t_count == 0 {
        return Err(PipelineError::BadConfig("t_count must be >= 1".into()));
    }
    if !(1..=3).contains(&cfg.prompt_template) {
        return Err(PipelineError::BadConfig("template must be 1..=3".into()));
    }
    if cfg.margin < 0.0 {
        return Err(PipelineError::BadConfig("margin must be >= 0".into()));
    }
    Ok(cfg)
}

/// Per-arm result of the component benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub name: String,
    pub bleu: [f64; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub arms: Vec<ArmReport>,
    /// BLEU-1 delta of each non-baseline arm against the baseline.
    pub bleu1_deltas: Vec<f64>,
    /// Shape/latency record of the memory smoke pass; the kernel is
    /// metric-neutral without the real visual encoder.
    pub memory_smoke: MemorySmoke,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemorySmoke {
    pub records: usize,
    pub feature_dim: usize,
    pub k: usize,
    pub elapsed_ms: f64,
    pub shape_preserved: bool,
}

fn pairs_for(
    predictions: &[TextRecord],
    labels: &HashMap<String, String>,
) -> Vec<(String, String)> {
    predictions
        .iter()
        .map(|p| (p.text.clone(), labels.get(&p.id).cloned().unwrap_or_default()))
        .collect()
}

/// Run the four benchmark arms — baseline stub predictions, +correction,
/// +memory smoke pass, +both — and score each with corpus BLEU.
pub fn bench(
    manifest: &DatasetManifest,
    config: &BenchConfig,
    db: &GlyphDatabase,
    scorer: &ContextScorer,
    noise_rate: f64,
) -> Result<BenchReport, PipelineError> {
    let baseline = run_stub_recognizer(manifest, noise_rate, config.seed, db)?;
    let labels: HashMap<String, String> = manifest
        .records
        .iter()
        .map(|r| (r.id.clone(), r.label.clone()))
        .collect();

    let corrected: Vec<TextRecord> = baseline
        .iter()
        .map(|r| TextRecord {
            id: r.id.clone(),
            text: correct(&r.text, db, scorer, config.margin).corrected,
        })
        .collect();

    let memory_smoke = memory_smoke_pass(manifest, config)?;

    let mut arms = Vec::new();
    for (name, preds) in [
        ("baseline", &baseline),
        ("+gecm", &corrected),
        ("+mm", &baseline),
        ("+both", &corrected),
    ] {
        let report = corpus_bleu(&pairs_for(preds, &labels))?;
        arms.push(ArmReport { name: name.to_string(), bleu: report.bleu });
    }
    let base_bleu1 = arms[0].bleu[0];
    let bleu1_deltas = arms[1..].iter().map(|a| a.bleu[0] - base_bleu1).collect();
    Ok(BenchReport { arms, bleu1_deltas, memory_smoke })
}

/// Stack each stream, take the representative frame, pool it into a
/// coarse feature vector, and push the batch through the memory kernel
/// once. Records shape preservation and latency only.
fn memory_smoke_pass(
    manifest: &DatasetManifest,
    config: &BenchConfig,
) -> Result<MemorySmoke, PipelineError> {
    const FEATURE_DIM: usize = 48;
    let m_count = config.memory_k.max(64);
    let bank = init_bank::<f64>(FEATURE_DIM, m_count, config.seed);
    let start = Instant::now();
    let mut data = Vec::new();
    let mut n = 0usize;
    for rec in &manifest.records {
        let bytes = std::fs::read(manifest.base_dir.join(&rec.events))?;
        let stream: EventStream = parse_evs1(&bytes)?.stream;
        let frames = stack(&stream, config.t_count)?;
        data.extend(pool_frame_features(representative_frame(&frames), FEATURE_DIM));
        n += 1;
    }
    if n == 0 {
        return Ok(MemorySmoke {
            records: 0,
            feature_dim: FEATURE_DIM,
            k: config.memory_k,
            elapsed_ms: 0.0,
            shape_preserved: true,
        });
    }
    let features = FeatureBatch::new(n, 1, FEATURE_DIM, data)?;
    let out = enhance(&features, &bank, config.memory_k.min(m_count))?;
    Ok(MemorySmoke {
        records: n,
        feature_dim: FEATURE_DIM,
        k: config.memory_k,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        shape_preserved: out.data.len() == features.data.len(),
    })
}

/// Coarse polarity-count pooling of one frame into `dim` buckets.
fn pool_frame_features(frame: &crate::stack::Image, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; dim];
    let total = frame.width as usize * frame.height as usize;
    for (i, px) in frame.data.chunks(3).enumerate() {
        let bucket = i * dim / total.max(1);
        match px {
            [255, 0, 0] => out[bucket.min(dim - 1)] += 1.0,
            [0, 0, 255] => out[bucket.min(dim - 1)] -= 1.0,
            _ => {}
        }
    }
    out
}
