//! Confusable-glyph error correction.
//!
//! A glyph database maps a token (one CJK character or one ASCII word)
//! to its visually similar candidates. Correction walks the tokenized
//! text left to right, scores the original token and each candidate
//! against the surrounding context with a pluggable scorer, and replaces
//! a token only when a candidate strictly beats the original by more
//! than the configured margin. An alternative path builds a prompt from
//! the retrieved candidates and delegates the correction to an external
//! text-generation backend.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    CjkChar,
    AsciiWord,
    Other,
}

/// One token plus its byte span in the source string. Concatenating the
/// surfaces in order reconstructs the input exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub surface: String,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<Token>,
}

/// Token -> ordered confusable candidates, capped at load time.
#[derive(Debug, Clone)]
pub struct GlyphDatabase {
    entries: HashMap<String, Vec<String>>,
    pub max_candidates: usize,
}

/// Per-token decision trail from one correction run.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub position: usize,
    pub surface: String,
    pub candidates: Vec<String>,
    pub chosen: String,
    pub original_score: f64,
    pub candidate_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport {
    pub original: String,
    pub corrected: String,
    pub decisions: Vec<Decision>,
    pub prompt_used: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate(pub u8);

impl PromptTemplate {
    pub fn new(id: u8) -> Result<Self, GlyphError> {
        if (1..=3).contains(&id) {
            Ok(PromptTemplate(id))
        } else {
            Err(GlyphError::BadTemplate(id))
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(3)
    }
}

#[derive(Debug, Error)]
pub enum GlyphError {
    #[error("malformed database line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("duplicate key {0:?} at line {1}")]
    DuplicateKey(String, usize),
    #[error("key {0:?} listed among its own candidates at line {1}")]
    SelfCandidate(String, usize),
    #[error("invalid prompt template id {0}, expected 1..=3")]
    BadTemplate(u8),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("position {0} out of range for {1} tokens")]
    BadPosition(usize, usize),
    #[error("backend error for {original:?}: {message}")]
    Backend { message: String, original: String },
}

fn is_cjk(c: char) -> bool {
    matches!(c, '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}')
}

/// Split into CJK characters, maximal ASCII-letter words, and grouped
/// runs of everything else.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens: Vec<Token> = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut other_start: Option<usize> = None;
    let flush_word = |tokens: &mut Vec<Token>, text: &str, start: usize, end: usize| {
        tokens.push(Token {
            kind: TokenKind::AsciiWord,
            surface: text[start..end].to_string(),
            span: (start, end),
        });
    };
    let flush_other = |tokens: &mut Vec<Token>, text: &str, start: usize, end: usize| {
        tokens.push(Token {
            kind: TokenKind::Other,
            surface: text[start..end].to_string(),
            span: (start, end),
        });
    };
    for (i, c) in text.char_indices() {
        if c.is_ascii_alphabetic() {
            if let Some(s) = other_start.take() {
                flush_other(&mut tokens, text, s, i);
            }
            word_start.get_or_insert(i);
        } else if is_cjk(c) {
            if let Some(s) = word_start.take() {
                flush_word(&mut tokens, text, s, i);
            }
            if let Some(s) = other_start.take() {
                flush_other(&mut tokens, text, s, i);
            }
            tokens.push(Token {
                kind: TokenKind::CjkChar,
                surface: c.to_string(),
                span: (i, i + c.len_utf8()),
            });
        } else {
            if let Some(s) = word_start.take() {
                flush_word(&mut tokens, text, s, i);
            }
            other_start.get_or_insert(i);
        }
    }
    if let Some(s) = word_start {
        flush_word(&mut tokens, text, s, text.len());
    }
    if let Some(s) = other_start {
        flush_other(&mut tokens, text, s, text.len());
    }
    TokenizedText { tokens }
}

impl TokenizedText {
    pub fn reconstruct(&self) -> String {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }
}

/// ASCII-word keys are stored lowercase; lookup is case-insensitive.
fn db_key(token: &str) -> String {
    if token.is_ascii() {
        token.to_ascii_lowercase()
    } else {
        token.to_string()
    }
}

/// Parse the TSV database: one `key<TAB>cand,cand,...` entry per line.
/// Candidate lists are truncated to `max_candidates` in file order.
pub fn load_database(text: &str, max_candidates: usize) -> Result<GlyphDatabase, GlyphError> {
    let mut entries = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (key, cands) = line
            .split_once('\t')
            .ok_or_else(|| GlyphError::MalformedLine(line_no, "missing TAB separator".into()))?;
        if key.is_empty() {
            return Err(GlyphError::MalformedLine(line_no, "empty key".into()));
        }
        let key_norm = db_key(key);
        let candidates: Vec<String> = cands
            .split(',')
            .map(|c| c.trim().to_string())
            .collect();
        if candidates.iter().any(|c| c.is_empty()) {
            return Err(GlyphError::MalformedLine(line_no, "empty candidate".into()));
        }
        if candidates.iter().any(|c| db_key(c) == key_norm) {
            return Err(GlyphError::SelfCandidate(key.to_string(), line_no));
        }
        let capped: Vec<String> = candidates.into_iter().take(max_candidates).collect();
        if capped.is_empty() {
            return Err(GlyphError::MalformedLine(line_no, "no candidates".into()));
        }
        if entries.insert(key_norm, capped).is_some() {
            return Err(GlyphError::DuplicateKey(key.to_string(), line_no));
        }
    }
    Ok(GlyphDatabase { entries, max_candidates })
}

impl GlyphDatabase {
    pub fn empty() -> Self {
        GlyphDatabase { entries: HashMap::new(), max_candidates: 0 }
    }

    pub fn candidates(&self, token: &str) -> &[String] {
        self.entries.get(&db_key(token)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Candidate lists aligned with `tokenize(text)`. Non-lookup tokens get
/// empty lists.
pub fn retrieve_candidates(text: &str, db: &GlyphDatabase) -> Vec<Vec<String>> {
    tokenize(text)
        .tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::Other => Vec::new(),
            _ => db.candidates(&t.surface).to_vec(),
        })
        .collect()
}

/// Flatten per-token candidate lists in first-occurrence order without
/// duplicates; this is the candidate listing prompts use.
pub fn flatten_candidates(per_token: &[Vec<String>]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for list in per_token {
        for c in list {
            if seen.insert(c.clone()) {
                out.push(c.clone());
            }
        }
    }
    out
}

/// Instantiate one of the three fixed prompt templates, candidates
/// joined by ", ". Byte-exact output.
pub fn build_prompt(text: &str, candidates: &[String], template: PromptTemplate) -> String {
    let cands = candidates.join(", ");
    match template.0 {
        1 => format!(
            "The following text may contain errors: {text}. Possible replacements include: {cands}. Please make corrections."
        ),
        2 => format!("Correct the text: '{text}'. Use these candidates for guidance: {cands}."),
        3 => format!(
            "Original text: {text}, candidate words: {cands}, please correct the incorrect words."
        ),
        _ => unreachable!("template id validated at construction"),
    }
}

const UNK: usize = 0;
const BOS: usize = 1;
const EOS: usize = 2;

/// Token-level bigram language model with add-one smoothing and a
/// single UNK bucket; the built-in contextual validator.
#[derive(Debug, Clone)]
pub struct ContextScorer {
    vocab: HashMap<String, usize>,
    bigram: HashMap<(usize, usize), u64>,
    context: HashMap<usize, u64>,
    /// size of the next-token space: vocabulary + UNK + EOS
    next_space: usize,
}

/// Train the built-in bigram scorer over the tokenization of each
/// corpus string, with begin/end sentinels.
pub fn train_scorer(corpus: &[String]) -> Result<ContextScorer, GlyphError> {
    if corpus.is_empty() {
        return Err(GlyphError::EmptyCorpus);
    }
    let mut vocab: HashMap<String, usize> = HashMap::new();
    let mut bigram: HashMap<(usize, usize), u64> = HashMap::new();
    let mut context: HashMap<usize, u64> = HashMap::new();
    for text in corpus {
        let toks = tokenize(text);
        let mut prev = BOS;
        for t in &toks.tokens {
            let next_id = vocab.len() + 3;
            let id = *vocab.entry(t.surface.clone()).or_insert(next_id);
            *bigram.entry((prev, id)).or_insert(0) += 1;
            *context.entry(prev).or_insert(0) += 1;
            prev = id;
        }
        *bigram.entry((prev, EOS)).or_insert(0) += 1;
        *context.entry(prev).or_insert(0) += 1;
    }
    let next_space = vocab.len() + 2; // vocab + UNK + EOS
    Ok(ContextScorer { vocab, bigram, context, next_space })
}

impl ContextScorer {
    fn id(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(UNK)
    }

    fn prob(&self, ctx: usize, next: usize) -> f64 {
        let c = self.bigram.get(&(ctx, next)).copied().unwrap_or(0);
        let n = self.context.get(&ctx).copied().unwrap_or(0);
        (c as f64 + 1.0) / (n as f64 + self.next_space as f64)
    }

    /// Smoothed probability of `next` given `context`; unseen tokens
    /// fall into the UNK bucket.
    pub fn bigram_prob(&self, context: &str, next: &str) -> f64 {
        self.prob(self.id(context), self.id(next))
    }

    pub fn eos_prob(&self, context: &str) -> f64 {
        self.prob(self.id(context), EOS)
    }

    pub fn bos_prob(&self, next: &str) -> f64 {
        self.prob(BOS, self.id(next))
    }

    pub fn vocab_tokens(&self) -> Vec<&str> {
        self.vocab.keys().map(String::as_str).collect()
    }

    /// Total log-probability of a token sequence between the sentinels.
    pub fn score_sequence(&self, surfaces: &[String]) -> f64 {
        let mut prev = BOS;
        let mut total = 0.0;
        for s in surfaces {
            let id = self.id(s);
            total += self.prob(prev, id).ln();
            prev = id;
        }
        total + self.prob(prev, EOS).ln()
    }
}

/// Log-score of the sequence with `replacement` substituted at
/// `position`.
pub fn score_context(
    tokens: &TokenizedText,
    position: usize,
    replacement: &str,
    scorer: &ContextScorer,
) -> Result<f64, GlyphError> {
    if position >= tokens.tokens.len() {
        return Err(GlyphError::BadPosition(position, tokens.tokens.len()));
    }
    let mut surfaces = tokens.surfaces();
    surfaces[position] = replacement.to_string();
    Ok(scorer.score_sequence(&surfaces))
}

/// Greedy left-to-right correction against the working (already
/// corrected) sequence. A candidate wins only when its score exceeds
/// the original's by more than `margin`; ties keep the original.
pub fn correct(
    text: &str,
    db: &GlyphDatabase,
    scorer: &ContextScorer,
    margin: f64,
) -> CorrectionReport {
    let tokens = tokenize(text);
    let mut working = tokens.surfaces();
    let mut decisions = Vec::new();
    for (i, tok) in tokens.tokens.iter().enumerate() {
        if tok.kind == TokenKind::Other {
            continue;
        }
        let candidates = db.candidates(&tok.surface);
        if candidates.is_empty() {
            continue;
        }
        let original_score = scorer.score_sequence(&working);
        let mut candidate_scores = Vec::with_capacity(candidates.len());
        let mut best: Option<(usize, f64)> = None;
        for (j, cand) in candidates.iter().enumerate() {
            let prev = std::mem::replace(&mut working[i], cand.clone());
            let s = scorer.score_sequence(&working);
            working[i] = prev;
            candidate_scores.push(s);
            if best.map_or(true, |(_, bs)| s > bs) {
                best = Some((j, s));
            }
        }
        let (best_j, best_score) = best.unwrap();
        let chosen = if best_score > original_score + margin {
            working[i] = candidates[best_j].clone();
            candidates[best_j].clone()
        } else {
            tok.surface.clone()
        };
        decisions.push(Decision {
            position: i,
            surface: tok.surface.clone(),
            candidates: candidates.to_vec(),
            chosen,
            original_score,
            candidate_scores,
        });
    }
    CorrectionReport {
        original: text.to_string(),
        corrected: working.concat(),
        decisions,
        prompt_used: None,
    }
}

/// Text-in/text-out correction backend boundary. `original_text` is the
/// uncorrected text, available to trivial test doubles.
pub trait TextBackend {
    fn generate(&self, prompt: &str, original_text: &str) -> Result<String, GlyphError>;
}

/// Echo double: returns the prompt itself.
pub struct EchoBackend;

impl TextBackend for EchoBackend {
    fn generate(&self, prompt: &str, _original_text: &str) -> Result<String, GlyphError> {
        Ok(prompt.to_string())
    }
}

/// Identity double: returns the original text unchanged.
pub struct IdentityBackend;

impl TextBackend for IdentityBackend {
    fn generate(&self, _prompt: &str, original_text: &str) -> Result<String, GlyphError> {
        Ok(original_text.to_string())
    }
}

/// Prompt-mediated correction through an external backend. No local
/// scoring; the backend's output is taken as the corrected text.
pub fn correct_via_llm(
    text: &str,
    db: &GlyphDatabase,
    template: PromptTemplate,
    backend: &dyn TextBackend,
) -> Result<CorrectionReport, GlyphError> {
    let per_token = retrieve_candidates(text, db);
    let flat = flatten_candidates(&per_token);
    let prompt = build_prompt(text, &flat, template);
    let corrected = backend.generate(&prompt, text)?;
    Ok(CorrectionReport {
        original: text.to_string(),
        corrected,
        decisions: Vec::new(),
        prompt_used: Some(prompt),
    })
}
