//! Synthetic task corpus.
//!
//! Tasks stand in for benchmark datasets at desk scale: each carries a
//! prompt, a reference answer, and a category label used for non-IID
//! partitioning. Two families:
//!
//! * **copy** — echo a payload given in the prompt. Completions are
//!   multi-token, so late-token errors and tail targeting are exercised.
//!   Payloads are drawn from a small per-length pattern pool; a lookup
//!   table model generalizes only through rows it has seen, so held-out
//!   tasks must share payload patterns with training shards for any
//!   learning signal to show up at this scale.
//! * **mcq** — pick the option token matching a key under a fixed
//!   key-to-option mapping. Single-token answers exercise the confidence
//!   gate rather than the tail.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::model::{Token, TokenSeq, Vocab};
use crate::rng::{label, rng_for};

/// One prompt/answer pair. The prompt ends with SEP, the answer with EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: u64,
    pub category: u32,
    pub prompt: TokenSeq,
    pub answer: TokenSeq,
}

impl Task {
    /// Reference answer tokens without marker framing.
    pub fn answer_payload<'a>(&'a self, vocab: &Vocab) -> &'a [Token] {
        answer_region(&self.answer, vocab)
    }
}

/// Answer region of a completion: tokens after the last SEP (the whole
/// completion if none), up to and excluding the first EOS that follows.
pub fn answer_region<'a>(completion: &'a TokenSeq, vocab: &Vocab) -> &'a [Token] {
    let tokens = completion.tokens();
    let start = tokens
        .iter()
        .rposition(|&t| t == vocab.sep)
        .map(|i| i + 1)
        .unwrap_or(0);
    let region = &tokens[start..];
    let end = region.iter().position(|&t| t == vocab.eos).unwrap_or(region.len());
    &region[..end]
}

/// Exact-match correctness: the completion's answer region must equal the
/// task's reference answer tokens. Trailing junk before EOS fails.
pub fn matches_reference(task: &Task, completion: &TokenSeq, vocab: &Vocab) -> bool {
    answer_region(completion, vocab) == answer_region(&task.answer, vocab)
}

fn payload_tokens(vocab: &Vocab) -> Vec<Token> {
    (0..vocab.size as Token)
        .filter(|t| ![vocab.bos, vocab.eos, vocab.sep, vocab.hint].contains(t))
        .collect()
}

/// Copy tasks with a derived payload pool (one distinct payload pattern
/// per `count / 8` tasks, at least two per length).
pub fn gen_copy_tasks(
    count: usize,
    payload_len_range: (usize, usize),
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<Task>> {
    let (lo, hi) = payload_len_range;
    let lens = hi.saturating_sub(lo) + 1;
    let per_len = (count / (8 * lens.max(1))).max(2);
    gen_copy_tasks_pooled(count, payload_len_range, per_len, vocab, seed)
}

/// Copy tasks drawing payloads from a pool of `pool_per_len` distinct
/// patterns per payload length.
pub fn gen_copy_tasks_pooled(
    count: usize,
    payload_len_range: (usize, usize),
    pool_per_len: usize,
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<Task>> {
    let (lo, hi) = payload_len_range;
    if lo < 1 || lo > hi {
        return Err(SpearError::invalid(format!(
            "payload length range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
        )));
    }
    if pool_per_len < 1 {
        return Err(SpearError::invalid("payload pool must be nonempty"));
    }
    vocab.validate()?;
    let alphabet = payload_tokens(vocab);
    if alphabet.is_empty() {
        return Err(SpearError::invalid("vocab has no payload tokens"));
    }

    let mut rng = rng_for(seed, &[label::TASKS, lo as u64, hi as u64]);

    // Distinct payload pool per length.
    let mut pools: Vec<Vec<Vec<Token>>> = Vec::new();
    for len in lo..=hi {
        let space = (alphabet.len() as f64).powi(len as i32);
        let want = (pool_per_len as f64).min(space) as usize;
        let mut pool: Vec<Vec<Token>> = Vec::with_capacity(want);
        while pool.len() < want {
            let candidate: Vec<Token> =
                (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
            if !pool.contains(&candidate) {
                pool.push(candidate);
            }
        }
        pools.push(pool);
    }

    let num_lens = hi - lo + 1;
    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        // Round-robin over lengths keeps categories balanced.
        let len_idx = i % num_lens;
        let payload = pools[len_idx].choose(&mut rng).unwrap();
        let mut prompt = TokenSeq::from_tokens(vec![vocab.bos]);
        for &t in payload {
            prompt.push(t);
        }
        prompt.push(vocab.sep);
        let mut answer = TokenSeq::from_tokens(payload.clone());
        answer.push(vocab.eos);
        tasks.push(Task {
            task_id: i as u64,
            category: (lo + len_idx) as u32,
            prompt,
            answer,
        });
    }
    Ok(tasks)
}

const MCQ_CATEGORIES: u32 = 4;

/// Multiple-choice tasks: the prompt shows a key token and `num_options`
/// candidate tokens in randomized order; the answer is the option paired
/// with the key by a fixed seed-derived mapping.
pub fn gen_mcq_tasks(
    count: usize,
    num_options: usize,
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<Task>> {
    if !(2..=8).contains(&num_options) {
        return Err(SpearError::invalid(format!(
            "num_options must be in [2, 8], got {num_options}"
        )));
    }
    vocab.validate()?;
    let alphabet = payload_tokens(vocab);
    if alphabet.len() < num_options {
        return Err(SpearError::invalid(format!(
            "need at least {num_options} payload tokens, vocab provides {}",
            alphabet.len()
        )));
    }

    let mut rng = rng_for(seed, &[label::TASKS, num_options as u64]);

    // Fixed key -> correct option mapping: a seeded derangement-ish shuffle
    // of the alphabet indexed by key position.
    let mut mapping = alphabet.clone();
    mapping.shuffle(&mut rng);

    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        let key_idx = i % alphabet.len();
        let key = alphabet[key_idx];
        let correct = mapping[key_idx];

        let mut options = vec![correct];
        while options.len() < num_options {
            let decoy = *alphabet.choose(&mut rng).unwrap();
            if !options.contains(&decoy) {
                options.push(decoy);
            }
        }
        options.shuffle(&mut rng);

        let mut prompt = TokenSeq::from_tokens(vec![vocab.bos, key]);
        for &o in &options {
            prompt.push(o);
        }
        prompt.push(vocab.sep);
        let answer = TokenSeq::from_tokens(vec![correct, vocab.eos]);
        tasks.push(Task {
            task_id: i as u64,
            category: (key_idx as u32) % MCQ_CATEGORIES,
            prompt,
            answer,
        });
    }
    Ok(tasks)
}

/// One JSON object per line.
pub fn write_corpus_jsonl<W: Write>(tasks: &[Task], mut w: W) -> Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut w, task)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_corpus_jsonl<R: BufRead>(r: R) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        tasks.push(serde_json::from_str(&line)?);
    }
    Ok(tasks)
}

/// Deterministic train/held-out split; the held-out set takes roughly
/// `eval_fraction` of the corpus, shuffled by seed.
pub fn split_eval(
    tasks: Vec<Task>,
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<Task>, Vec<Task>)> {
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(SpearError::invalid(format!(
            "eval_fraction must be in [0, 1), got {eval_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut rng_for(seed, &[label::TASKS, u64::MAX]));
    let eval_count = (tasks.len() as f64 * eval_fraction).round() as usize;
    let eval_ids: std::collections::HashSet<usize> =
        order.into_iter().take(eval_count).collect();
    let mut train = Vec::with_capacity(tasks.len() - eval_count);
    let mut eval = Vec::with_capacity(eval_count);
    for (i, task) in tasks.into_iter().enumerate() {
        if eval_ids.contains(&i) {
            eval.push(task);
        } else {
            train.push(task);
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::with_size(16).unwrap()
    }

    #[test]
    fn copy_task_shape() {
        let v = vocab();
        let tasks = gen_copy_tasks(30, (2, 2), &v, 1).unwrap();
        for t in &tasks {
            let p = t.prompt.tokens();
            assert_eq!(p[0], v.bos);
            assert_eq!(*p.last().unwrap(), v.sep);
            let payload = &p[1..p.len() - 1];
            assert_eq!(payload.len(), 2);
            let a = t.answer.tokens();
            assert_eq!(&a[..a.len() - 1], payload);
            assert_eq!(*a.last().unwrap(), v.eos);
            assert_eq!(t.category, 2);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let v = vocab();
        let a = gen_copy_tasks(40, (2, 4), &v, 9).unwrap();
        let b = gen_copy_tasks(40, (2, 4), &v, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_mcq_tasks(40, 4, &v, 9).unwrap();
        let d = gen_mcq_tasks(40, 4, &v, 9).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn corpus_answers_pass_their_own_matcher() {
        let v = vocab();
        let mut tasks = gen_copy_tasks(60, (2, 4), &v, 3).unwrap();
        tasks.extend(gen_mcq_tasks(60, 4, &v, 3).unwrap());
        for t in &tasks {
            assert!(matches_reference(t, &t.answer, &v));
        }
    }

    #[test]
    fn categories_balanced_within_ten_percent() {
        let v = vocab();
        let tasks = gen_copy_tasks(240, (2, 4), &v, 5).unwrap();
        let mut counts = std::collections::HashMap::new();
        for t in &tasks {
            *counts.entry(t.category).or_insert(0usize) += 1;
        }
        let per = 240.0 / counts.len() as f64;
        for (&cat, &n) in &counts {
            assert!(
                (n as f64 - per).abs() <= per * 0.1,
                "category {cat} has {n} tasks"
            );
        }
    }

    #[test]
    fn answer_region_cases() {
        let v = vocab();
        // [a, b, EOS] -> [a, b]
        assert_eq!(
            answer_region(&TokenSeq::from_tokens(vec![5, 6, v.eos]), &v),
            &[5, 6]
        );
        // [a, SEP, c, EOS] -> [c]
        assert_eq!(
            answer_region(&TokenSeq::from_tokens(vec![5, v.sep, 7, v.eos]), &v),
            &[7]
        );
        // no EOS -> after last SEP to end
        assert_eq!(
            answer_region(&TokenSeq::from_tokens(vec![5, v.sep, 7, 8]), &v),
            &[7, 8]
        );
        // empty region
        assert_eq!(
            answer_region(&TokenSeq::from_tokens(vec![v.sep, v.eos]), &v),
            &[] as &[Token]
        );
    }

    #[test]
    fn matcher_rejects_flipped_token_and_trailing_junk() {
        let v = vocab();
        let task = gen_copy_tasks(3, (2, 2), &v, 2).unwrap().remove(0);
        let payload = task.answer_payload(&v).to_vec();

        let mut flipped = payload.clone();
        flipped[0] = if flipped[0] == 5 { 6 } else { 5 };
        let mut wrong = TokenSeq::from_tokens(flipped);
        wrong.push(v.eos);
        assert!(!matches_reference(&task, &wrong, &v));

        let mut junk = TokenSeq::from_tokens(payload);
        junk.push(9);
        junk.push(v.eos);
        assert!(!matches_reference(&task, &junk, &v));
    }

    #[test]
    fn mcq_has_exactly_one_correct_option_and_chance_is_quarter() {
        let v = vocab();
        let tasks = gen_mcq_tasks(200, 4, &v, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut hits = 0usize;
        let mut trials = 0usize;
        for t in &tasks {
            let p = t.prompt.tokens();
            let options = &p[2..p.len() - 1];
            assert_eq!(options.len(), 4);
            let correct: Vec<_> = options
                .iter()
                .filter(|&&o| {
                    matches_reference(t, &TokenSeq::from_tokens(vec![o, v.eos]), &v)
                })
                .collect();
            assert_eq!(correct.len(), 1, "task {} has {} correct options", t.task_id, correct.len());
            // A uniform guesser restricted to the displayed options.
            for _ in 0..25 {
                let guess = options[rng.gen_range(0..options.len())];
                if matches_reference(t, &TokenSeq::from_tokens(vec![guess, v.eos]), &v) {
                    hits += 1;
                }
                trials += 1;
            }
        }
        let acc = hits as f64 / trials as f64;
        assert!((acc - 0.25).abs() < 0.02, "chance accuracy {acc}");
    }

    #[test]
    fn mcq_mapping_is_fixed_per_key() {
        let v = vocab();
        let tasks = gen_mcq_tasks(120, 4, &v, 13).unwrap();
        let mut seen: std::collections::HashMap<Token, Token> = std::collections::HashMap::new();
        for t in &tasks {
            let key = t.prompt.tokens()[1];
            let correct = t.answer.tokens()[0];
            if let Some(&prev) = seen.get(&key) {
                assert_eq!(prev, correct, "key {key} mapped to two answers");
            }
            seen.insert(key, correct);
        }
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let v = vocab();
        let tasks = gen_copy_tasks(10, (2, 3), &v, 17).unwrap();
        let mut buf = Vec::new();
        write_corpus_jsonl(&tasks, &mut buf).unwrap();
        let back = read_corpus_jsonl(buf.as_slice()).unwrap();
        assert_eq!(tasks, back);
    }

    #[test]
    fn eval_split_partitions_the_corpus() {
        let v = vocab();
        let tasks = gen_copy_tasks(50, (2, 3), &v, 19).unwrap();
        let (train, eval) = split_eval(tasks.clone(), 0.2, 19).unwrap();
        assert_eq!(eval.len(), 10);
        assert_eq!(train.len() + eval.len(), tasks.len());
        let mut all: Vec<_> = train.iter().chain(eval.iter()).map(|t| t.task_id).collect();
        all.sort_unstable();
        let mut expect: Vec<_> = tasks.iter().map(|t| t.task_id).collect();
        expect.sort_unstable();
        assert_eq!(all, expect);
    }
}
