//! Log-probability margin lab.
//!
//! The dual objective couples likelihood on a win completion with gated
//! unlikelihood on a lose completion. For a paired sample sharing one
//! context, a loss value of epsilon forces the per-token log-probability
//! margin between the win and the active lose tail to be at least
//!
//! ```text
//! h(mu) - epsilon * (1 / (lambda_w |y+|) + 1 / (lambda_l alpha |T_tau|))
//! ```
//!
//! where `h(mu) = log 4` for `mu <= 1/2` and `log(1/(mu(1-mu)))` above.
//! The guarantee rests on the pointwise bound
//! `-log(1-p) >= log p + h(mu)` for all `p > mu`, tight at `p = 1/2` for
//! small `mu` and as `p -> mu` from above for large `mu`.
//!
//! This module evaluates all of these quantities numerically and audits
//! both the pointwise bound (dense grid) and the margin guarantee
//! (randomized small-model instances) instead of assuming them.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SpearError};
use crate::interaction::{LoseTrace, TraceSets, WinTrace};
use crate::loss::{loss_spear, tail_set, SpearHyper};
use crate::model::{
    draw_from, next_token_dist, seq_log_prob, token_probs_along, ModelSpec, ParamVector, Token,
    TokenSeq, Vocab,
};
use crate::rng::{label, rng_for};

/// Margin constant provider; swapped out by mutation checks.
pub type MarginConstantFn = fn(f64) -> Result<f64>;

/// Confidence-amplified margin constant: `log 4` on `(0, 1/2]`,
/// `log(1/(mu(1-mu)))` above.
pub fn h_mu(mu: f64) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(SpearError::invalid(format!(
            "mu must lie strictly inside (0, 1), got {mu}"
        )));
    }
    if mu <= 0.5 {
        Ok(4.0f64.ln())
    } else {
        Ok((1.0 / (mu * (1.0 - mu))).ln())
    }
}

/// Mutation hook: the plateau removed, i.e. `log(1/(mu(1-mu)))`
/// everywhere. Overstates the guarantee for `mu < 1/2`, which a sound
/// audit must detect.
pub fn h_mu_no_plateau(mu: f64) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(SpearError::invalid(format!(
            "mu must lie strictly inside (0, 1), got {mu}"
        )));
    }
    Ok((1.0 / (mu * (1.0 - mu))).ln())
}

/// Margin between a win and a lose completion sharing a context: win
/// per-token log-probability minus the mean log-probability over the
/// active lose tail.
pub fn margin(
    spec: &ModelSpec,
    params: &ParamVector,
    c0: &TokenSeq,
    y_plus: &TokenSeq,
    y_minus: &TokenSeq,
    tau: usize,
) -> Result<f64> {
    if y_plus.is_empty() || y_minus.is_empty() {
        return Err(SpearError::invalid("margin needs nonempty completions"));
    }
    let win_avg = seq_log_prob(spec, params, c0, y_plus)? / y_plus.len() as f64;
    let probs = token_probs_along(spec, params, c0, y_minus)?;
    let range = tail_set(probs.len(), tau)?;
    let tail_len = range.len() as f64;
    let mut lose_sum = 0.0;
    for &p in &probs[range] {
        lose_sum += p.ln();
    }
    Ok(win_avg - lose_sum / tail_len)
}

/// Guaranteed lower bound on the margin for a pair whose combined loss is
/// at most `epsilon`.
pub fn margin_bound(
    epsilon: f64,
    hyper: &SpearHyper,
    alpha: f64,
    win_len: usize,
    tail_size: usize,
) -> Result<f64> {
    margin_bound_with(epsilon, hyper, alpha, win_len, tail_size, h_mu)
}

fn margin_bound_with(
    epsilon: f64,
    hyper: &SpearHyper,
    alpha: f64,
    win_len: usize,
    tail_size: usize,
    h: MarginConstantFn,
) -> Result<f64> {
    if win_len < 1 || tail_size < 1 {
        return Err(SpearError::invalid("win_len and tail_size must be at least 1"));
    }
    if !(alpha > 0.0) {
        return Err(SpearError::invalid("alpha must be positive"));
    }
    if hyper.lambda_w == 0.0 || hyper.lambda_l == 0.0 {
        return Err(SpearError::invalid(
            "margin bound is undefined for zero lambda weights",
        ));
    }
    Ok(h(hyper.mu)?
        - epsilon
            * (1.0 / (hyper.lambda_w * win_len as f64)
                + 1.0 / (hyper.lambda_l * alpha * tail_size as f64)))
}

/// Outcome of checking the margin guarantee on one win/lose pair.
#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub margin: f64,
    /// Combined loss of the pair (singleton win and lose sets).
    pub epsilon: f64,
    pub bound_rhs: f64,
    /// Every active tail token exceeded the confidence threshold.
    pub assumption1_holds: bool,
    pub slack: f64,
    pub win_len: usize,
    pub tail_size: usize,
    pub alpha: f64,
    pub mu: f64,
    pub tau: usize,
    pub lambda_w: f64,
    pub lambda_l: f64,
}

/// Evaluates the guarantee on a shared-context pair. When the confidence
/// assumption fails the report is marked not applicable and carries no
/// claim about the slack.
pub fn check_theorem(
    spec: &ModelSpec,
    params: &ParamVector,
    win: &WinTrace,
    lose: &LoseTrace,
    hyper: &SpearHyper,
) -> Result<MarginReport> {
    check_theorem_with(spec, params, win, lose, hyper, h_mu)
}

fn check_theorem_with(
    spec: &ModelSpec,
    params: &ParamVector,
    win: &WinTrace,
    lose: &LoseTrace,
    hyper: &SpearHyper,
    h: MarginConstantFn,
) -> Result<MarginReport> {
    if win.context0 != lose.context0 {
        return Err(SpearError::invalid(
            "the margin guarantee applies to pairs sharing one context",
        ));
    }
    let probs = token_probs_along(spec, params, &lose.context0, &lose.completion)?;
    let range = tail_set(probs.len(), hyper.tau)?;
    let tail_size = range.len();
    let assumption1_holds = probs[range].iter().all(|&p| p > hyper.mu);

    let pair = TraceSets { wins: vec![win.clone()], loses: vec![lose.clone()] };
    let epsilon = loss_spear(spec, params, &pair, hyper)?.total;
    let m = margin(spec, params, &win.context0, &win.completion, &lose.completion, hyper.tau)?;
    let rhs = margin_bound_with(epsilon, hyper, lose.alpha, win.completion.len(), tail_size, h)?;

    Ok(MarginReport {
        margin: m,
        epsilon,
        bound_rhs: rhs,
        assumption1_holds,
        slack: m - rhs,
        win_len: win.completion.len(),
        tail_size,
        alpha: lose.alpha,
        mu: hyper.mu,
        tau: hyper.tau,
        lambda_w: hyper.lambda_w,
        lambda_l: hyper.lambda_l,
    })
}

/// Pointwise bound slack `-log(1-p) - log p - h(mu)`.
pub fn lemma_gap(mu: f64, p: f64) -> Result<f64> {
    lemma_gap_with(mu, p, h_mu)
}

fn lemma_gap_with(mu: f64, p: f64, h: MarginConstantFn) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(SpearError::invalid("mu must lie strictly inside (0, 1)"));
    }
    if !(p > mu && p < 1.0) {
        return Err(SpearError::invalid(format!(
            "p must lie strictly inside (mu, 1), got p={p} mu={mu}"
        )));
    }
    Ok(-(1.0 - p).ln() - p.ln() - h(mu)?)
}

/// Whether `-log(1-p) >= log p + h(mu)` holds (to -1e-12 slack).
pub fn lemma_holds(mu: f64, p: f64) -> Result<bool> {
    Ok(lemma_gap(mu, p)? >= -1e-12)
}

/// Tightness summary of the pointwise bound for one threshold value.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaMuSummary {
    pub mu: f64,
    pub min_gap: f64,
    pub argmin_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaGridReport {
    pub checked: usize,
    pub violations: usize,
    pub worst_gap: f64,
    pub per_mu: Vec<LemmaMuSummary>,
}

/// Scans mu over {0.05, 0.10, ..., 0.95} and p over (mu, 1) at step 1e-3.
pub fn lemma_grid_audit() -> Result<LemmaGridReport> {
    lemma_grid_audit_with(h_mu)
}

pub fn lemma_grid_audit_with(h: MarginConstantFn) -> Result<LemmaGridReport> {
    let mut report = LemmaGridReport {
        checked: 0,
        violations: 0,
        worst_gap: f64::INFINITY,
        per_mu: Vec::new(),
    };
    for i in 1..=19 {
        let mu = i as f64 * 0.05;
        let mut min_gap = f64::INFINITY;
        let mut argmin_p = f64::NAN;
        let mut k = 1usize;
        loop {
            let p = mu + k as f64 * 1e-3;
            if p >= 1.0 {
                break;
            }
            let gap = lemma_gap_with(mu, p, h)?;
            report.checked += 1;
            if gap < -1e-12 {
                report.violations += 1;
            }
            if gap < min_gap {
                min_gap = gap;
                argmin_p = p;
            }
            k += 1;
        }
        report.worst_gap = report.worst_gap.min(min_gap);
        report.per_mu.push(LemmaMuSummary { mu, min_gap, argmin_p });
    }
    Ok(report)
}

/// One randomized instance of the margin audit.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremAuditRow {
    pub instance: usize,
    pub epsilon: f64,
    pub margin: f64,
    pub bound_rhs: f64,
    pub slack: f64,
    pub alpha: f64,
    pub mu: f64,
    pub tau: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremAuditReport {
    pub rows: Vec<TheoremAuditRow>,
    pub violations: usize,
    pub worst_slack: f64,
    /// Rejection-sampling attempts spent satisfying the confidence
    /// assumption.
    pub attempts: u64,
}

const AUDIT_SLACK_TOLERANCE: f64 = -1e-9;
const AUDIT_GRID: [(f64, f64, usize); 8] = [
    (0.5, 0.3, 0),
    (0.5, 0.3, 2),
    (0.5, 0.7, 0),
    (0.5, 0.7, 2),
    (1.0, 0.3, 0),
    (1.0, 0.3, 2),
    (1.0, 0.7, 0),
    (1.0, 0.7, 2),
];

/// Samples a fixed-length sequence from the model (no stop token), so the
/// audited lose completions follow the model's own distribution — the way
/// lose traces arise in training. Uniform-random sequences would almost
/// never satisfy the confidence assumption at high thresholds.
fn sample_fixed_len(
    spec: &ModelSpec,
    params: &ParamVector,
    ctx: &TokenSeq,
    len: usize,
    rng: &mut impl Rng,
) -> Result<TokenSeq> {
    let mut window = ctx.clone();
    let mut out = TokenSeq::new();
    for _ in 0..len {
        let probs = next_token_dist(spec, params, &window, 1.0)?;
        let t = draw_from(&probs, rng);
        out.push(t);
        window.push(t);
    }
    Ok(out)
}

struct AuditInstance {
    spec: ModelSpec,
    params: ParamVector,
    win: WinTrace,
    lose: LoseTrace,
    hyper: SpearHyper,
    attempts: u64,
}

/// Rejection-samples a small-model pair satisfying the confidence
/// assumption for the given grid cell.
fn random_instance(seed: u64, id: usize, alpha: f64, mu: f64, tau: usize) -> Result<AuditInstance> {
    let mut rng = rng_for(seed, &[label::AUDIT, id as u64]);
    let vocab = Vocab::with_size(8)?;
    let hyper = SpearHyper { mu, tau, ..SpearHyper::default() };
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        if attempts > 5_000_000 {
            return Err(SpearError::numeric(format!(
                "audit instance {id} rejected {attempts} candidates"
            )));
        }
        let order = rng.gen_range(2..=3usize);
        let spec = ModelSpec::new(vocab, order, 64)?;
        let params = ParamVector::from_values(
            (0..spec.param_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        );
        let c0 = TokenSeq::from_tokens(
            (0..rng.gen_range(1..=3usize))
                .map(|_| rng.gen_range(0..8) as Token)
                .collect::<Vec<_>>(),
        );
        let win_len = rng.gen_range(2..=6usize);
        let y_plus = TokenSeq::from_tokens(
            (0..win_len).map(|_| rng.gen_range(0..8) as Token).collect::<Vec<_>>(),
        );
        let lose_len = rng.gen_range(2..=6usize);
        let y_minus = sample_fixed_len(&spec, &params, &c0, lose_len, &mut rng)?;

        let probs = token_probs_along(&spec, &params, &c0, &y_minus)?;
        let range = tail_set(probs.len(), tau)?;
        if probs[range].iter().all(|&p| p > mu) {
            return Ok(AuditInstance {
                spec,
                params,
                win: WinTrace::new(c0.clone(), y_plus)?,
                lose: LoseTrace::new(c0, y_minus, alpha)?,
                hyper,
                attempts,
            });
        }
    }
}

/// Randomized audit of the margin guarantee over `instances` pairs cycling
/// through alpha in {0.5, 1.0}, mu in {0.3, 0.7}, tau in {0, 2}.
pub fn theorem_audit(instances: usize, seed: u64) -> Result<TheoremAuditReport> {
    theorem_audit_with(instances, seed, h_mu)
}

pub fn theorem_audit_with(
    instances: usize,
    seed: u64,
    h: MarginConstantFn,
) -> Result<TheoremAuditReport> {
    let rows: Result<Vec<(TheoremAuditRow, u64)>> = (0..instances)
        .into_par_iter()
        .map(|id| {
            let (alpha, mu, tau) = AUDIT_GRID[id % AUDIT_GRID.len()];
            let inst = random_instance(seed, id, alpha, mu, tau)?;
            let report = check_theorem_with(
                &inst.spec,
                &inst.params,
                &inst.win,
                &inst.lose,
                &inst.hyper,
                h,
            )?;
            debug_assert!(report.assumption1_holds);
            let row = TheoremAuditRow {
                instance: id,
                epsilon: report.epsilon,
                margin: report.margin,
                bound_rhs: report.bound_rhs,
                slack: report.slack,
                alpha,
                mu,
                tau,
            };
            Ok((row, inst.attempts))
        })
        .collect();
    let rows = rows?;
    let attempts = rows.iter().map(|(_, a)| a).sum();
    let rows: Vec<TheoremAuditRow> = rows.into_iter().map(|(r, _)| r).collect();
    let violations = rows.iter().filter(|r| r.slack < AUDIT_SLACK_TOLERANCE).count();
    let worst_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    Ok(TheoremAuditReport { rows, violations, worst_slack, attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(tokens: &[Token]) -> TokenSeq {
        TokenSeq::from_tokens(tokens.to_vec())
    }

    /// Installs a full next-token distribution on one context row: logits
    /// equal to log-probabilities reproduce the targets exactly through
    /// softmax.
    fn set_row_dist(spec: &ModelSpec, params: &mut ParamVector, ctx: &[Token], dist: &[f64]) {
        let v = spec.vocab.size;
        assert_eq!(dist.len(), v);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut window = ctx.to_vec();
        while window.len() < spec.window() {
            window.insert(0, spec.vocab.bos);
        }
        let tail = &window[window.len() - spec.window()..];
        let row = tail.iter().fold(0usize, |acc, &t| acc * v + t as usize);
        for (j, &p) in dist.iter().enumerate() {
            params.values_mut()[row * v + j] = p.ln();
        }
    }

    /// One dominant token at probability `p`, remainder spread uniformly.
    fn set_row_prob(spec: &ModelSpec, params: &mut ParamVector, ctx: &[Token], token: Token, p: f64) {
        let v = spec.vocab.size;
        let rest = (1.0 - p) / (v as f64 - 1.0);
        let dist: Vec<f64> =
            (0..v).map(|j| if j == token as usize { p } else { rest }).collect();
        set_row_dist(spec, params, ctx, &dist);
    }

    #[test]
    fn h_mu_frozen_values() {
        assert!((h_mu(0.5).unwrap() - 1.3862943611198906).abs() < 1e-12);
        assert!((h_mu(0.3).unwrap() - 4.0f64.ln()).abs() < 1e-15);
        assert!((h_mu(0.9).unwrap() - 2.4079456086518722).abs() < 1e-12);
        assert!((h_mu(0.999).unwrap() - 6.909).abs() < 1e-3);
        assert!(h_mu(0.0).is_err());
        assert!(h_mu(1.0).is_err());
    }

    #[test]
    fn h_mu_shape() {
        // constant on (0, 1/2], continuous at 1/2, strictly increasing above
        for mu in [0.05, 0.1, 0.25, 0.4, 0.5] {
            assert_eq!(h_mu(mu).unwrap(), 4.0f64.ln());
        }
        assert!((h_mu(0.5 + 1e-9).unwrap() - 4.0f64.ln()).abs() < 1e-7);
        let mut prev = h_mu(0.55).unwrap();
        for i in 12..20 {
            let mu = i as f64 * 0.05;
            let h = h_mu(mu).unwrap();
            assert!(h > prev, "h not increasing at mu={mu}");
            prev = h;
        }
    }

    #[test]
    fn self_margin_is_exactly_zero() {
        let spec = ModelSpec::new(Vocab::with_size(6).unwrap(), 2, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ParamVector::from_values(
            (0..spec.param_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        );
        let c0 = seq(&[4]);
        let y = seq(&[1, 5, 2]);
        assert_eq!(margin(&spec, &params, &c0, &y, &y, 0).unwrap(), 0.0);
    }

    #[test]
    fn margin_worked_pair() {
        // Win token probs (0.9, 0.9) and lose token probs (0.6, 0.8):
        // direct evaluation of the margin gives
        // ln 0.9 - (ln 0.6 + ln 0.8) / 2. Note the probability pattern is
        // a formula plug-in, not a realizable single model: both first
        // tokens draw from the same shared-context softmax row, where 0.9
        // and 0.6 cannot coexist.
        let win_avg = 0.9f64.ln();
        let lose_avg = (0.6f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((win_avg - lose_avg - 0.2616240718822739).abs() < 1e-12);

        // A realizable shared-context pair computed both ways: win (2, 3)
        // at (0.9, 0.9), lose (4, 1) at (0.08, 0.8).
        let spec = ModelSpec::new(Vocab::with_size(6).unwrap(), 2, 64).unwrap();
        let mut params = spec.zero_params();
        let shared: Vec<f64> = vec![0.005, 0.005, 0.9, 0.005, 0.08, 0.005];
        set_row_dist(&spec, &mut params, &[5], &shared);
        set_row_prob(&spec, &mut params, &[2], 3, 0.9);
        set_row_prob(&spec, &mut params, &[4], 1, 0.8);
        let got = margin(&spec, &params, &seq(&[5]), &seq(&[2, 3]), &seq(&[4, 1]), 0).unwrap();
        let expect = (0.9f64.ln() + 0.9f64.ln()) / 2.0 - (0.08f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn margin_formula_matches_manual_evaluation() {
        let spec = ModelSpec::new(Vocab::with_size(8).unwrap(), 2, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ParamVector::from_values(
            (0..spec.param_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        );
        let c0 = seq(&[6]);
        let y_plus = seq(&[1, 4, 2]);
        let y_minus = seq(&[3, 3, 5, 0]);
        for tau in [0usize, 2] {
            let got = margin(&spec, &params, &c0, &y_plus, &y_minus, tau).unwrap();
            let wp = token_probs_along(&spec, &params, &c0, &y_plus).unwrap();
            let lp = token_probs_along(&spec, &params, &c0, &y_minus).unwrap();
            let range = tail_set(lp.len(), tau).unwrap();
            let expect = wp.iter().map(|p| p.ln()).sum::<f64>() / wp.len() as f64
                - lp[range.clone()].iter().map(|p| p.ln()).sum::<f64>() / range.len() as f64;
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_lose_probabilities_decreases_the_margin() {
        let spec = ModelSpec::new(Vocab::with_size(6).unwrap(), 2, 64).unwrap();
        let c0 = seq(&[5]);
        let y_plus = seq(&[2, 3]);
        let y_minus = seq(&[4, 1]);
        // Win rows fixed; both lose-path probabilities move together.
        let build = |p_first: f64, p_second: f64| {
            let mut params = spec.zero_params();
            let rest = (1.0 - 0.9 - p_first) / 4.0;
            let mut shared = vec![rest; 6];
            shared[2] = 0.9;
            shared[4] = p_first;
            set_row_dist(&spec, &mut params, &[5], &shared);
            set_row_prob(&spec, &mut params, &[2], 3, 0.9);
            set_row_prob(&spec, &mut params, &[4], 1, p_second);
            params
        };
        let m_low = margin(&spec, &build(0.01, 0.3), &c0, &y_plus, &y_minus, 0).unwrap();
        let m_high = margin(&spec, &build(0.09, 0.8), &c0, &y_plus, &y_minus, 0).unwrap();
        assert!(m_high < m_low);
    }

    #[test]
    fn margin_bound_frozen_values() {
        let hyper = SpearHyper::default(); // lambda (1.0, 0.1), mu 0.3
        // epsilon = 0 collapses to h(mu)
        assert_eq!(margin_bound(0.0, &hyper, 1.0, 2, 2).unwrap(), 4.0f64.ln());
        // worked pair from the loss module
        let eps = 0.4632938957464781;
        let rhs = margin_bound(eps, &hyper, 1.0, 2, 2).unwrap();
        assert!((rhs - (-1.1618220654857392)).abs() < 1e-9);
        assert!((rhs - (-1.1618)).abs() < 1e-4);
    }

    #[test]
    fn margin_bound_rejects_degenerate_inputs() {
        let hyper = SpearHyper::default();
        assert!(margin_bound(0.1, &hyper, 0.0, 2, 2).is_err());
        assert!(margin_bound(0.1, &hyper, 1.0, 0, 2).is_err());
        let zero_l = SpearHyper { lambda_l: 0.0, ..hyper };
        assert!(margin_bound(0.1, &zero_l, 1.0, 2, 2).is_err());
    }

    #[test]
    fn check_theorem_flags_gate_failures() {
        // All tail probabilities at 1/V = 0.125 <= mu: not applicable.
        let spec = ModelSpec::new(Vocab::with_size(8).unwrap(), 2, 64).unwrap();
        let params = spec.zero_params();
        let c0 = seq(&[5]);
        let win = WinTrace::new(c0.clone(), seq(&[1, 2])).unwrap();
        let lose = LoseTrace::new(c0, seq(&[3, 4]), 1.0).unwrap();
        let report = check_theorem(&spec, &params, &win, &lose, &SpearHyper::default()).unwrap();
        assert!(!report.assumption1_holds);
    }

    #[test]
    fn check_theorem_requires_shared_context() {
        let spec = ModelSpec::new(Vocab::with_size(8).unwrap(), 2, 64).unwrap();
        let params = spec.zero_params();
        let win = WinTrace::new(seq(&[1]), seq(&[2])).unwrap();
        let lose = LoseTrace::new(seq(&[2]), seq(&[3]), 1.0).unwrap();
        assert!(check_theorem(&spec, &params, &win, &lose, &SpearHyper::default()).is_err());
    }

    #[test]
    fn lemma_tightness_at_half_for_small_mu() {
        let gap = lemma_gap(0.3, 0.5).unwrap();
        assert!(gap.abs() < 1e-12);
        assert!(lemma_holds(0.3, 0.5).unwrap());
    }

    #[test]
    fn lemma_tightness_approaching_mu_for_large_mu() {
        let gap = lemma_gap(0.7, 0.700001).unwrap();
        assert!(gap >= 0.0);
        assert!(gap < 1e-4);
    }

    #[test]
    fn lemma_domain_is_enforced() {
        assert!(lemma_gap(0.3, 0.2).is_err());
        assert!(lemma_gap(0.3, 1.0).is_err());
        assert!(lemma_gap(1.2, 0.5).is_err());
    }

    #[test]
    fn lemma_grid_is_clean_and_tight() {
        let report = lemma_grid_audit().unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.worst_gap >= -1e-12);
        let mu03 = report
            .per_mu
            .iter()
            .find(|s| (s.mu - 0.3).abs() < 1e-9)
            .expect("mu = 0.3 in grid");
        assert!(mu03.min_gap < 1e-6);
        assert!((mu03.argmin_p - 0.5).abs() < 1e-3);
    }

    #[test]
    fn corrupted_margin_constant_is_detected_by_the_grid() {
        let report = lemma_grid_audit_with(h_mu_no_plateau).unwrap();
        assert!(report.violations > 0);
        assert!(report.worst_gap < -1e-6);
    }

    #[test]
    fn small_theorem_audit_has_no_violations() {
        let report = theorem_audit(64, 1234).unwrap();
        assert_eq!(report.rows.len(), 64);
        assert_eq!(report.violations, 0);
        assert!(report.worst_slack >= -1e-9);
    }

    #[test]
    fn audit_is_deterministic() {
        let a = theorem_audit(16, 7).unwrap();
        let b = theorem_audit(16, 7).unwrap();
        for (x, y) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(x.slack.to_bits(), y.slack.to_bits());
        }
    }

    #[test]
    fn minimum_of_symmetric_log_loss_sits_at_half() {
        // f(p) = -log(p(1-p)) has its minimum log 4 at p = 1/2.
        let f = |p: f64| -(p * (1.0 - p)).ln();
        let mut best_p = 0.0;
        let mut best = f64::INFINITY;
        let mut k = 1;
        loop {
            let p = k as f64 * 1e-3;
            if p >= 1.0 {
                break;
            }
            let v = f(p);
            if v < best {
                best = v;
                best_p = p;
            }
            k += 1;
        }
        assert!((best_p - 0.5).abs() < 1e-9);
        assert!((best - 4.0f64.ln()).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bound_monotone_in_alpha_tail_and_win_len(
            eps in 0.01f64..5.0,
            alpha in 0.1f64..1.0,
            win_len in 1usize..6,
            tail in 1usize..6,
        ) {
            let hyper = SpearHyper::default();
            let base = margin_bound(eps, &hyper, alpha, win_len, tail).unwrap();
            prop_assert!(margin_bound(eps, &hyper, alpha + 0.5, win_len, tail).unwrap() > base);
            prop_assert!(margin_bound(eps, &hyper, alpha, win_len + 1, tail).unwrap() > base);
            prop_assert!(margin_bound(eps, &hyper, alpha, win_len, tail + 1).unwrap() > base);
        }

        #[test]
        fn lemma_holds_on_random_points(mu in 0.01f64..0.98, frac in 0.001f64..0.999) {
            let p = mu + (1.0 - mu) * frac;
            if p > mu && p < 1.0 {
                prop_assert!(lemma_holds(mu, p).unwrap());
            }
        }
    }
}
