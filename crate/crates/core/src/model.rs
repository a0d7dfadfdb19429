//! Tabular autoregressive token model.
//!
//! An order-`n` model conditions each next-token distribution on the last
//! `n-1` tokens of the context. The full conditional table is stored as a
//! flat logit vector of dimension `V^(n-1) * V`, so every probability the
//! training objectives need is available in closed form, as is the
//! gradient of any weighted sum of token log-probabilities.
//!
//! Contexts shorter than the conditioning window are left-padded with BOS,
//! which makes the conditional distribution total. Sampling applies the
//! configured temperature; every log-probability used by a loss is
//! evaluated at temperature 1.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};

/// Token id. Valid ids lie in `[0, vocab.size)`.
pub type Token = u32;

/// Vocabulary with the four reserved marker tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: usize,
    pub bos: Token,
    pub eos: Token,
    pub sep: Token,
    /// Marker framing oracle feedback in revision contexts.
    pub hint: Token,
}

impl Vocab {
    /// Standard layout: BOS=0, EOS=1, SEP=2, HINT=3, payload ids above.
    pub fn with_size(size: usize) -> Result<Self> {
        let v = Vocab { size, bos: 0, eos: 1, sep: 2, hint: 3 };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(SpearError::invalid(format!(
                "vocab size must be at least 4, got {}",
                self.size
            )));
        }
        let reserved = [self.bos, self.eos, self.sep, self.hint];
        for (i, a) in reserved.iter().enumerate() {
            if *a as usize >= self.size {
                return Err(SpearError::invalid(format!(
                    "reserved token {a} out of range for vocab size {}",
                    self.size
                )));
            }
            if reserved[..i].contains(a) {
                return Err(SpearError::invalid("reserved token ids must be distinct"));
            }
        }
        Ok(())
    }

    /// First non-reserved token id (payload tokens are `base()..size`).
    pub fn payload_base(&self) -> Token {
        let mut t = 0;
        while [self.bos, self.eos, self.sep, self.hint].contains(&t) {
            t += 1;
        }
        t
    }

    pub fn num_payload_tokens(&self) -> usize {
        self.size - 4
    }
}

/// Ordered token-id sequence; the common currency for contexts,
/// completions and feedback.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<Token>);

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn from_tokens(tokens: impl Into<Vec<Token>>) -> Self {
        TokenSeq(tokens.into())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, t: Token) {
        self.0.push(t);
    }

    pub fn extend_from(&mut self, other: &TokenSeq) {
        self.0.extend_from_slice(&other.0);
    }

    /// `self ∥ other`.
    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    /// Keep only the most recent `max_len` tokens.
    pub fn truncate_left(&mut self, max_len: usize) {
        if self.0.len() > max_len {
            self.0.drain(..self.0.len() - max_len);
        }
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Flat parameter vector: one entry per logit-table cell.
///
/// Value semantics: snapshots are plain clones, so a broadcast global
/// model can be shared read-only across worker threads and replaced
/// wholesale after aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Checkpoint format: 8-byte little-endian length header followed by
    /// the entries as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.0.len() as u64).to_le_bytes())?;
        for v in &self.0 {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        let n = u64::from_le_bytes(header) as usize;
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for i in 0..n {
            r.read_exact(&mut buf)?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(SpearError::numeric(format!(
                    "checkpoint entry {i} is not finite"
                )));
            }
            values.push(v);
        }
        Ok(ParamVector(values))
    }
}

/// Model shape: vocabulary, conditioning order and context cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub vocab: Vocab,
    /// Conditions on the last `order - 1` tokens.
    pub order: usize,
    pub max_seq_len: usize,
}

impl ModelSpec {
    pub fn new(vocab: Vocab, order: usize, max_seq_len: usize) -> Result<Self> {
        let spec = ModelSpec { vocab, order, max_seq_len };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if self.order < 1 {
            return Err(SpearError::invalid("model order must be at least 1"));
        }
        if self.max_seq_len < 1 {
            return Err(SpearError::invalid("max_seq_len must be at least 1"));
        }
        self.checked_param_dim().ok_or_else(|| {
            SpearError::invalid(format!(
                "logit table V^order = {}^{} overflows",
                self.vocab.size, self.order
            ))
        })?;
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.order - 1
    }

    fn checked_param_dim(&self) -> Option<usize> {
        self.vocab
            .size
            .checked_pow(self.order as u32)
            .filter(|&d| d <= (1usize << 40))
    }

    /// `V^(order-1) * V` logit-table cells.
    pub fn param_dim(&self) -> usize {
        self.checked_param_dim().expect("validated spec")
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.param_dim())
    }

    /// Row index for the conditioning window ending the given context.
    /// Short contexts are left-padded with BOS.
    fn row_index(&self, ctx: &[Token]) -> Result<usize> {
        let v = self.vocab.size;
        let m = self.window();
        let mut row = 0usize;
        for slot in 0..m {
            // slot 0 is the oldest position of the window
            let token = if ctx.len() + slot >= m {
                let t = ctx[ctx.len() + slot - m];
                if (t as usize) >= v {
                    return Err(SpearError::invalid(format!(
                        "token id {t} out of vocab range {v}"
                    )));
                }
                t
            } else {
                self.vocab.bos
            };
            row = row * v + token as usize;
        }
        Ok(row)
    }
}

fn check_dim(spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    let expected = spec.param_dim();
    if params.len() != expected {
        return Err(SpearError::DimensionMismatch { expected, got: params.len() });
    }
    Ok(())
}

/// Logit row for the next token after `ctx`.
pub fn logits(spec: &ModelSpec, params: &ParamVector, ctx: &TokenSeq) -> Result<Vec<f64>> {
    check_dim(spec, params)?;
    let row = spec.row_index(ctx.tokens())?;
    let v = spec.vocab.size;
    Ok(params.values()[row * v..(row + 1) * v].to_vec())
}

fn softmax_in_place(z: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for &x in z.iter() {
        if !x.is_finite() {
            return Err(SpearError::numeric(format!("non-finite logit {x}")));
        }
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in z.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// Next-token distribution `softmax(z / temperature)`.
pub fn next_token_dist(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    temperature: f64,
) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(SpearError::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut z = logits(spec, params, ctx)?;
    for x in z.iter_mut() {
        *x /= temperature;
    }
    softmax_in_place(&mut z)?;
    Ok(z)
}

/// Walks `y` one token at a time, invoking `f(step, row, probs, target)`.
fn walk_sequence<F>(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    y: &TokenSeq,
    mut f: F,
) -> Result<()>
where
    F: FnMut(usize, usize, &[f64], Token),
{
    check_dim(spec, params)?;
    if y.is_empty() {
        return Err(SpearError::invalid("completion must be nonempty"));
    }
    let v = spec.vocab.size;
    let mut window: Vec<Token> = ctx.tokens().to_vec();
    let mut z = vec![0.0; v];
    for (i, &t) in y.tokens().iter().enumerate() {
        if (t as usize) >= v {
            return Err(SpearError::invalid(format!(
                "token id {t} out of vocab range {v}"
            )));
        }
        let row = spec.row_index(&window)?;
        z.copy_from_slice(&params.values()[row * v..(row + 1) * v]);
        softmax_in_place(&mut z)?;
        f(i, row, &z, t);
        window.push(t);
    }
    Ok(())
}

/// Sequence log-likelihood `Σ_i log p(y_i | ctx, y_<i)` at temperature 1.
pub fn seq_log_prob(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    y: &TokenSeq,
) -> Result<f64> {
    let mut total = 0.0;
    walk_sequence(spec, params, ctx, y, |_, _, probs, t| {
        total += probs[t as usize].ln();
    })?;
    Ok(total)
}

/// Per-token conditional probabilities along `y`; the product equals
/// `exp(seq_log_prob)`.
pub fn token_probs_along(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    y: &TokenSeq,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(y.len());
    walk_sequence(spec, params, ctx, y, |_, _, probs, t| {
        out.push(probs[t as usize]);
    })?;
    Ok(out)
}

pub(crate) fn draw_from(probs: &[f64], rng: &mut impl Rng) -> Token {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as Token;
        }
    }
    (probs.len() - 1) as Token
}

/// Autoregressive temperature sampling; stops at EOS or `max_len`.
/// Deterministic for a given seed.
pub fn sample_completion(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    temperature: f64,
    max_len: usize,
    rng_seed: u64,
) -> Result<TokenSeq> {
    if max_len < 1 {
        return Err(SpearError::invalid("max_len must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut window = ctx.clone();
    let mut out = TokenSeq::new();
    for _ in 0..max_len {
        let probs = next_token_dist(spec, params, &window, temperature)?;
        let t = draw_from(&probs, &mut rng);
        out.push(t);
        if t == spec.vocab.eos {
            break;
        }
        window.push(t);
    }
    Ok(out)
}

/// Greedy (argmax) decoding; stops at EOS or `max_len`. Ties break toward
/// the lowest token id.
pub fn greedy_completion(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    max_len: usize,
) -> Result<TokenSeq> {
    if max_len < 1 {
        return Err(SpearError::invalid("max_len must be at least 1"));
    }
    let mut window = ctx.clone();
    let mut out = TokenSeq::new();
    for _ in 0..max_len {
        let probs = next_token_dist(spec, params, &window, 1.0)?;
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        let t = best as Token;
        out.push(t);
        if t == spec.vocab.eos {
            break;
        }
        window.push(t);
    }
    Ok(out)
}

/// Accumulates `scale * ∇_θ Σ_i weights_i · log p(y_i | ctx, y_<i)` into a
/// flat gradient buffer. Each step touches one logit row with the
/// closed-form softmax gradient `weight * (onehot(y_i) - p)`.
pub(crate) fn accumulate_grad_log_prob(
    acc: &mut [f64],
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    y: &TokenSeq,
    weights: &[f64],
    scale: f64,
) -> Result<()> {
    if weights.len() != y.len() {
        return Err(SpearError::invalid(format!(
            "weights length {} does not match completion length {}",
            weights.len(),
            y.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(SpearError::invalid(format!("non-finite weight {w}")));
    }
    let v = spec.vocab.size;
    walk_sequence(spec, params, ctx, y, |i, row, probs, t| {
        let w = weights[i] * scale;
        if w == 0.0 {
            return;
        }
        let base = row * v;
        for (j, &p) in probs.iter().enumerate() {
            acc[base + j] -= w * p;
        }
        acc[base + t as usize] += w;
    })
}

/// `∇_θ Σ_i weights_i · log p(y_i | ctx, y_<i)` as a dense vector.
pub fn grad_log_prob(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    y: &TokenSeq,
    weights: &[f64],
) -> Result<ParamVector> {
    let mut acc = vec![0.0; spec.param_dim()];
    accumulate_grad_log_prob(&mut acc, spec, params, ctx, y, weights, 1.0)?;
    Ok(ParamVector::from_values(acc))
}
