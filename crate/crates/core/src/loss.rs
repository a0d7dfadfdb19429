//! The dual training objective.
//!
//! Wins are trained with plain negative log-likelihood. Lose completions
//! contribute an unlikelihood term `-log(1 - p)` restricted to the last
//! `tau` token positions (all positions when `tau = 0`) and gated to
//! tokens where the model is confidently wrong, `p > mu`. Each lose trace
//! is scaled by its confidence weight alpha. The combined loss is
//! `lambda_w * win + lambda_l * lose`; the gradient treats the gate and
//! alpha as constants.
//!
//! Expectations over the trace sets are arithmetic means, which keeps the
//! lambda weighting comparable across rounds of different sizes.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::interaction::{LoseTrace, TraceSets, WinTrace};
use crate::model::{
    accumulate_grad_log_prob, seq_log_prob, token_probs_along, ModelSpec, ParamVector,
};

/// Hyperparameter bundle for the interaction/training phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpearHyper {
    /// Weight of the win (likelihood) objective.
    pub lambda_w: f64,
    /// Weight of the lose (unlikelihood) objective.
    pub lambda_l: f64,
    /// Confidence gate: only lose tokens with probability above mu are
    /// penalized.
    pub mu: f64,
    /// Tail size; 0 targets the whole completion.
    pub tau: usize,
    /// Maximum revision attempts per prompt.
    pub revisions: usize,
    /// Sampling temperature for generation. Losses always evaluate
    /// probabilities at temperature 1.
    pub temperature: f64,
    /// Floor applied to `1 - p` before the log.
    pub numeric_floor: f64,
}

impl Default for SpearHyper {
    fn default() -> Self {
        SpearHyper {
            lambda_w: 1.0,
            lambda_l: 0.1,
            mu: 0.3,
            tau: 0,
            revisions: 2,
            temperature: 0.8,
            numeric_floor: 1e-12,
        }
    }
}

impl SpearHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_w > 0.0) {
            return Err(SpearError::invalid("lambda_w must be positive"));
        }
        if !(self.lambda_l >= 0.0) {
            return Err(SpearError::invalid("lambda_l must be nonnegative"));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(SpearError::invalid(format!(
                "mu must lie strictly inside (0, 1), got {}",
                self.mu
            )));
        }
        if self.revisions < 1 {
            return Err(SpearError::invalid("revisions must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(SpearError::invalid("temperature must be positive"));
        }
        if !(self.numeric_floor > 0.0 && self.numeric_floor < 1e-3) {
            return Err(SpearError::invalid("numeric_floor must be a small positive value"));
        }
        Ok(())
    }
}

/// Per-evaluation loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub win_loss: f64,
    pub lose_loss: f64,
    pub total: f64,
    /// Lose-side tail tokens that passed the confidence gate.
    pub active_token_count: usize,
    /// Lose-side tail tokens excluded by the gate.
    pub gated_out_count: usize,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        LossBreakdown {
            win_loss: 0.0,
            lose_loss: 0.0,
            total: 0.0,
            active_token_count: 0,
            gated_out_count: 0,
        }
    }
}

/// Active token index range: the last `min(tau, len)` positions, or all
/// positions when `tau = 0`.
pub fn tail_set(completion_len: usize, tau: usize) -> Result<Range<usize>> {
    if completion_len == 0 {
        return Err(SpearError::invalid("completion length must be positive"));
    }
    if tau == 0 {
        Ok(0..completion_len)
    } else {
        Ok(completion_len - tau.min(completion_len)..completion_len)
    }
}

/// Mean negative log-likelihood over the win set; 0 when empty.
pub fn loss_win(spec: &ModelSpec, params: &ParamVector, wins: &[WinTrace]) -> Result<f64> {
    if wins.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for w in wins {
        total -= seq_log_prob(spec, params, &w.context0, &w.completion)?;
    }
    Ok(total / wins.len() as f64)
}

struct LoseTerms {
    weighted_sum: f64,
    active: usize,
    gated: usize,
}

fn lose_terms(
    spec: &ModelSpec,
    params: &ParamVector,
    trace: &LoseTrace,
    mu: f64,
    tau: usize,
    floor: f64,
) -> Result<LoseTerms> {
    let probs = token_probs_along(spec, params, &trace.context0, &trace.completion)?;
    let range = tail_set(probs.len(), tau)?;
    let mut sum = 0.0;
    let mut active = 0;
    let mut gated = 0;
    for &p in &probs[range] {
        // Strict gate: ties at exactly mu are excluded.
        if p > mu {
            active += 1;
            sum -= (1.0 - p).max(floor).ln();
        } else {
            gated += 1;
        }
    }
    Ok(LoseTerms { weighted_sum: trace.alpha * sum, active, gated })
}

/// Mean confidence-gated tail unlikelihood over the lose set; 0 when empty.
pub fn loss_lose(
    spec: &ModelSpec,
    params: &ParamVector,
    loses: &[LoseTrace],
    mu: f64,
    tau: usize,
    numeric_floor: f64,
) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(SpearError::invalid("mu must lie strictly inside (0, 1)"));
    }
    if loses.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for trace in loses {
        total += lose_terms(spec, params, trace, mu, tau, numeric_floor)?.weighted_sum;
    }
    Ok(total / loses.len() as f64)
}

/// Combined objective with components reported separately.
pub fn loss_spear(
    spec: &ModelSpec,
    params: &ParamVector,
    traces: &TraceSets,
    hyper: &SpearHyper,
) -> Result<LossBreakdown> {
    hyper.validate()?;
    let win = loss_win(spec, params, &traces.wins)?;
    let mut lose = 0.0;
    let mut active = 0;
    let mut gated = 0;
    for trace in &traces.loses {
        let t = lose_terms(spec, params, trace, hyper.mu, hyper.tau, hyper.numeric_floor)?;
        lose += t.weighted_sum;
        active += t.active;
        gated += t.gated;
    }
    if !traces.loses.is_empty() {
        lose /= traces.loses.len() as f64;
    }
    Ok(LossBreakdown {
        win_loss: win,
        lose_loss: lose,
        total: hyper.lambda_w * win + hyper.lambda_l * lose,
        active_token_count: active,
        gated_out_count: gated,
    })
}

/// Gradient of `loss_spear` with the gate indicator and alpha held
/// constant. Win tokens carry weight `-lambda_w / |W|` on the
/// log-probability gradient; an active lose token with probability `p`
/// carries `lambda_l * alpha * p / (1 - p) / |L|` (the chain rule through
/// `-log(1 - e^{log p})`), zeroed where the floor clamps the loss flat.
pub fn grad_spear(
    spec: &ModelSpec,
    params: &ParamVector,
    traces: &TraceSets,
    hyper: &SpearHyper,
) -> Result<ParamVector> {
    hyper.validate()?;
    let mut acc = vec![0.0; spec.param_dim()];

    if !traces.wins.is_empty() {
        let scale = -hyper.lambda_w / traces.wins.len() as f64;
        for w in &traces.wins {
            let ones = vec![1.0; w.completion.len()];
            accumulate_grad_log_prob(
                &mut acc,
                spec,
                params,
                &w.context0,
                &w.completion,
                &ones,
                scale,
            )?;
        }
    }

    if !traces.loses.is_empty() && hyper.lambda_l != 0.0 {
        let per_trace = hyper.lambda_l / traces.loses.len() as f64;
        for trace in &traces.loses {
            let probs = token_probs_along(spec, params, &trace.context0, &trace.completion)?;
            let range = tail_set(probs.len(), hyper.tau)?;
            let mut weights = vec![0.0; probs.len()];
            for i in range {
                let p = probs[i];
                if p > hyper.mu && (1.0 - p) > hyper.numeric_floor {
                    weights[i] = p / (1.0 - p);
                }
            }
            accumulate_grad_log_prob(
                &mut acc,
                spec,
                params,
                &trace.context0,
                &trace.completion,
                &weights,
                per_trace * trace.alpha,
            )?;
        }
    }

    Ok(ParamVector::from_values(acc))
}
