//! Interaction phase: generate, judge, solicit feedback, revise.
//!
//! For each prompt the client samples an initial completion. A correct
//! one becomes a win trace immediately. Otherwise the feedback oracle
//! produces a hint on the latest attempt, the revision context
//! `c0 ∥ y_prev ∥ f` is rebuilt, and a fresh completion is sampled, up to
//! the configured number of revisions. A prompt corrected at some attempt
//! contributes the corrected completion as a win *against the original
//! context* and its initial completion as a lose trace with full
//! confidence (alpha = 1.0); a prompt that never recovers contributes the
//! initial completion with alpha = 0.5. Lose traces always store the
//! initial generation, never a revision.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::loss::SpearHyper;
use crate::model::{sample_completion, ModelSpec, ParamVector, TokenSeq, Vocab};
use crate::rng::{derive_seed, label};
use crate::tasks::{matches_reference, Task};

/// A completion judged correct, stored against the original context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinTrace {
    pub context0: TokenSeq,
    pub completion: TokenSeq,
}

impl WinTrace {
    pub fn new(context0: TokenSeq, completion: TokenSeq) -> Result<Self> {
        if completion.is_empty() {
            return Err(SpearError::invalid("win completion must be nonempty"));
        }
        Ok(WinTrace { context0, completion })
    }
}

/// The initial incorrect completion with its confidence weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoseTrace {
    pub context0: TokenSeq,
    pub completion: TokenSeq,
    /// 1.0 when a later revision succeeded, 0.5 when every attempt failed.
    pub alpha: f64,
}

impl LoseTrace {
    pub fn new(context0: TokenSeq, completion: TokenSeq, alpha: f64) -> Result<Self> {
        if completion.is_empty() {
            return Err(SpearError::invalid("lose completion must be nonempty"));
        }
        if alpha != 0.5 && alpha != 1.0 {
            return Err(SpearError::invalid(format!(
                "lose confidence weight must be 0.5 or 1.0, got {alpha}"
            )));
        }
        Ok(LoseTrace { context0, completion, alpha })
    }
}

/// Per-round win and lose sets for one client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSets {
    pub wins: Vec<WinTrace>,
    pub loses: Vec<LoseTrace>,
}

impl TraceSets {
    /// Debug dump: one trace per line with role, alpha, and token arrays.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            role: &'static str,
            #[serde(skip_serializing_if = "Option::is_none")]
            alpha: Option<f64>,
            context: &'a TokenSeq,
            completion: &'a TokenSeq,
        }
        for t in &self.wins {
            serde_json::to_writer(
                &mut w,
                &Line { role: "win", alpha: None, context: &t.context0, completion: &t.completion },
            )?;
            writeln!(w)?;
        }
        for t in &self.loses {
            serde_json::to_writer(
                &mut w,
                &Line {
                    role: "lose",
                    alpha: Some(t.alpha),
                    context: &t.context0,
                    completion: &t.completion,
                },
            )?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Interaction bookkeeping for one client round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionStats {
    pub prompts_seen: u64,
    pub initial_correct: u64,
    /// Index n-1 counts prompts first corrected at revision attempt n.
    pub corrected_at_attempt: Vec<u64>,
    pub failed: u64,
    /// Prompts whose sampled completion came back empty.
    pub skipped: u64,
}

impl InteractionStats {
    pub fn new(max_attempts: usize) -> Self {
        InteractionStats {
            corrected_at_attempt: vec![0; max_attempts],
            ..InteractionStats::default()
        }
    }

    pub fn corrected_total(&self) -> u64 {
        self.corrected_at_attempt.iter().sum()
    }

    /// Prompts whose initial completion was judged incorrect.
    pub fn needing_revision(&self) -> u64 {
        self.corrected_total() + self.failed
    }

    pub fn merge(&mut self, other: &InteractionStats) {
        self.prompts_seen += other.prompts_seen;
        self.initial_correct += other.initial_correct;
        if self.corrected_at_attempt.len() < other.corrected_at_attempt.len() {
            self.corrected_at_attempt.resize(other.corrected_at_attempt.len(), 0);
        }
        for (i, &c) in other.corrected_at_attempt.iter().enumerate() {
            self.corrected_at_attempt[i] += c;
        }
        self.failed += other.failed;
        self.skipped += other.skipped;
    }
}

/// Correctness oracle. The production judge matches the answer region
/// against the task reference; scripted judges drive bookkeeping tests.
pub trait Judge: Sync {
    /// `attempt` is 0 for the initial generation, n for revision n.
    fn judge(&self, task: &Task, completion: &TokenSeq, attempt: usize) -> bool;
}

/// Exact answer-region matching against the task reference.
#[derive(Debug, Clone, Copy)]
pub struct TaskJudge {
    pub vocab: Vocab,
}

impl Judge for TaskJudge {
    fn judge(&self, task: &Task, completion: &TokenSeq, _attempt: usize) -> bool {
        matches_reference(task, completion, &self.vocab)
    }
}

/// Scripted judge: correct exactly from the given attempt index on
/// (`None` = never correct). Attempt 0 is the initial generation.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleJudge {
    pub correct_from_attempt: Option<usize>,
}

impl Judge for ScheduleJudge {
    fn judge(&self, _task: &Task, _completion: &TokenSeq, attempt: usize) -> bool {
        self.correct_from_attempt.is_some_and(|n| attempt >= n)
    }
}

/// Knobs of the interaction loop that are not part of the loss bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    /// Completion sampling cap (tokens).
    pub max_completion_len: usize,
    /// Fraction of the reference answer revealed by the hint oracle.
    pub hint_ratio: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig { max_completion_len: 8, hint_ratio: 0.5 }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_completion_len < 1 {
            return Err(SpearError::invalid("max_completion_len must be at least 1"));
        }
        if !(self.hint_ratio > 0.0 && self.hint_ratio <= 1.0) {
            return Err(SpearError::invalid(format!(
                "hint_ratio must lie in (0, 1], got {}",
                self.hint_ratio
            )));
        }
        Ok(())
    }
}

/// `is_correct` from the problem statement: exact match of the answer
/// region against the task reference.
pub fn is_correct(task: &Task, completion: &TokenSeq, vocab: &Vocab) -> bool {
    matches_reference(task, completion, vocab)
}

/// Revision context `c0 ∥ y_prev ∥ f`, left-truncated to `max_seq_len`.
pub fn build_revision_context(
    c0: &TokenSeq,
    y_prev: &TokenSeq,
    f: &TokenSeq,
    max_seq_len: usize,
) -> TokenSeq {
    let mut ctx = c0.clone();
    ctx.extend_from(y_prev);
    ctx.extend_from(f);
    ctx.truncate_left(max_seq_len);
    ctx
}

/// Feedback oracle: a fixed-ratio prefix of the reference answer framed by
/// the hint marker. The hint never reveals the whole answer when the
/// answer has two or more tokens; single-token answers necessarily leak.
pub fn feedback(task: &Task, _attempt: &TokenSeq, hint_ratio: f64, vocab: &Vocab) -> TokenSeq {
    let payload = task.answer_payload(vocab);
    let hint_len = if payload.len() <= 1 {
        if payload.len() == 1 {
            log::debug!("task {}: single-token answer, hint leaks it", task.task_id);
        }
        payload.len()
    } else {
        ((payload.len() as f64 * hint_ratio).ceil() as usize)
            .clamp(1, payload.len() - 1)
    };
    let mut hint = TokenSeq::from_tokens(vec![vocab.hint]);
    for &t in &payload[..hint_len] {
        hint.push(t);
    }
    hint.push(vocab.hint);
    hint
}

/// Runs the interaction loop for a batch of prompts with the production
/// judge.
pub fn run_interaction_phase(
    spec: &ModelSpec,
    params: &ParamVector,
    prompts: &[Task],
    hyper: &SpearHyper,
    icfg: &InteractionConfig,
    rng_seed: u64,
) -> Result<(TraceSets, InteractionStats)> {
    let judge = TaskJudge { vocab: spec.vocab };
    run_interaction_phase_with_judge(spec, params, prompts, hyper, icfg, &judge, rng_seed)
}

/// Interaction loop with an injected correctness oracle.
pub fn run_interaction_phase_with_judge(
    spec: &ModelSpec,
    params: &ParamVector,
    prompts: &[Task],
    hyper: &SpearHyper,
    icfg: &InteractionConfig,
    judge: &dyn Judge,
    rng_seed: u64,
) -> Result<(TraceSets, InteractionStats)> {
    hyper.validate()?;
    icfg.validate()?;
    if prompts.is_empty() {
        return Err(SpearError::invalid("interaction phase needs at least one prompt"));
    }

    let mut traces = TraceSets::default();
    let mut stats = InteractionStats::new(hyper.revisions);
    for (j, task) in prompts.iter().enumerate() {
        // Per-prompt stream: reordering or parallelizing prompts cannot
        // perturb any other prompt's draws.
        let prompt_seed = derive_seed(rng_seed, &[label::PROMPT, j as u64]);
        stats.prompts_seen += 1;

        let initial = sample_completion(
            spec,
            params,
            &task.prompt,
            hyper.temperature,
            icfg.max_completion_len,
            derive_seed(prompt_seed, &[0]),
        )?;
        if initial.is_empty() {
            stats.skipped += 1;
            continue;
        }
        if judge.judge(task, &initial, 0) {
            traces.wins.push(WinTrace::new(task.prompt.clone(), initial)?);
            stats.initial_correct += 1;
            continue;
        }

        let mut fixed = false;
        let mut y_prev = initial.clone();
        for attempt in 1..=hyper.revisions {
            let hint = feedback(task, &y_prev, icfg.hint_ratio, &spec.vocab);
            let ctx = build_revision_context(&task.prompt, &y_prev, &hint, spec.max_seq_len);
            let revised = sample_completion(
                spec,
                params,
                &ctx,
                hyper.temperature,
                icfg.max_completion_len,
                derive_seed(prompt_seed, &[attempt as u64]),
            )?;
            if revised.is_empty() {
                continue;
            }
            if judge.judge(task, &revised, attempt) {
                traces.wins.push(WinTrace::new(task.prompt.clone(), revised)?);
                traces.loses.push(LoseTrace::new(task.prompt.clone(), initial.clone(), 1.0)?);
                stats.corrected_at_attempt[attempt - 1] += 1;
                fixed = true;
                break;
            }
            y_prev = revised;
        }
        if !fixed {
            traces.loses.push(LoseTrace::new(task.prompt.clone(), initial, 0.5)?);
            stats.failed += 1;
        }
    }
    Ok((traces, stats))
}
