//! Federated round loop: partition, select, train locally, aggregate.
//!
//! Each round a seeded subset of clients receives the global snapshot,
//! runs the interaction phase on a batch sampled from its shard, takes a
//! fixed number of optimizer steps on the round's trace sets, and reports
//! parameters plus its win-trace count. The server averages parameters
//! weighted by win counts; a round with no wins anywhere keeps the
//! previous global model.
//!
//! Every random draw is derived from (seed, round, client id, ...), so
//! client work may run on any number of worker threads without changing
//! a single bit of the output.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Result, SpearError};
use crate::interaction::{run_interaction_phase, InteractionStats};
use crate::loss::{grad_spear, loss_spear, LossBreakdown};
use crate::model::{greedy_completion, ModelSpec, ParamVector};
use crate::optim::{self, OptimState};
use crate::rng::{derive_seed, label, rng_for};
use crate::tasks::{matches_reference, Task};

/// Federated loop shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    #[serde(default = "default_clients_per_round")]
    pub clients_per_round: usize,
    pub rounds: usize,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_prompts_per_round")]
    pub prompts_per_round: usize,
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_num_clients() -> usize {
    50
}
fn default_clients_per_round() -> usize {
    3
}
fn default_local_steps() -> usize {
    5
}
fn default_prompts_per_round() -> usize {
    16
}
fn default_dirichlet_alpha() -> f64 {
    1.0
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 1 {
            return Err(SpearError::invalid("num_clients must be at least 1"));
        }
        if self.clients_per_round < 1 || self.clients_per_round > self.num_clients {
            return Err(SpearError::invalid(format!(
                "clients_per_round must lie in [1, {}], got {}",
                self.num_clients, self.clients_per_round
            )));
        }
        if self.prompts_per_round < 1 {
            return Err(SpearError::invalid("prompts_per_round must be at least 1"));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(SpearError::invalid("dirichlet_alpha must be positive"));
        }
        Ok(())
    }
}

/// One client's slice of the simulation.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: Vec<Task>,
    /// Optimizer moments carried across rounds when persistence is on.
    pub optim: Option<OptimState>,
}

/// What a client sends back after a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub params: ParamVector,
    pub win_count: u64,
    pub stats: InteractionStats,
    pub losses: Vec<LossBreakdown>,
}

/// Per-round metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub win_counts: Vec<u64>,
    pub accuracy: f64,
    pub mean_win_loss: f64,
    pub mean_lose_loss: f64,
    pub frac_needing_revision: f64,
    pub prompts_seen: u64,
    pub initial_correct: u64,
    pub corrected: u64,
    pub failed: u64,
    pub skipped: u64,
}

/// Splits tasks across clients: per category, a Dirichlet(alpha) draw
/// assigns proportions; every client is repaired up to at least one task
/// by round-robin moves from the largest shard.
pub fn partition_dirichlet(
    tasks: &[Task],
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<Task>>> {
    if num_clients < 1 {
        return Err(SpearError::invalid("num_clients must be at least 1"));
    }
    if tasks.len() < num_clients {
        return Err(SpearError::invalid(format!(
            "cannot split {} tasks across {num_clients} clients",
            tasks.len()
        )));
    }
    if !(alpha > 0.0) {
        return Err(SpearError::invalid("dirichlet alpha must be positive"));
    }

    let mut rng = rng_for(seed, &[label::PARTITION]);
    let gamma = rand_distr::Gamma::new(alpha, 1.0)
        .map_err(|e| SpearError::invalid(format!("invalid gamma shape: {e}")))?;

    let mut by_category: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, t) in tasks.iter().enumerate() {
        by_category.entry(t.category).or_default().push(i);
    }

    let mut shards: Vec<Vec<Task>> = vec![Vec::new(); num_clients];
    for (_, mut ids) in by_category {
        use rand::seq::SliceRandom;
        ids.shuffle(&mut rng);
        let weights: Vec<f64> =
            (0..num_clients).map(|_| rand_distr::Distribution::sample(&gamma, &mut rng)).collect();
        let total: f64 = weights.iter().sum();
        let n = ids.len() as f64;
        let mut cursor = 0usize;
        let mut cum = 0.0;
        for (k, w) in weights.iter().enumerate() {
            cum += w / total;
            let end = if k + 1 == num_clients {
                ids.len()
            } else {
                ((cum * n).round() as usize).min(ids.len())
            };
            for &id in &ids[cursor..end] {
                shards[k].push(tasks[id].clone());
            }
            cursor = end;
        }
    }

    // Repair: nobody starves.
    loop {
        let Some(empty) = shards.iter().position(|s| s.is_empty()) else { break };
        let donor = shards
            .iter()
            .enumerate()
            .max_by_key(|(i, s)| (s.len(), usize::MAX - i))
            .map(|(i, _)| i)
            .unwrap();
        if shards[donor].len() <= 1 {
            return Err(SpearError::invalid("not enough tasks to cover every client"));
        }
        let task = shards[donor].pop().unwrap();
        shards[empty].push(task);
    }
    Ok(shards)
}

/// Win-weighted parameter average; zero total wins keeps the previous
/// global model. Per-component terms are summed in a canonical order so
/// the result is bitwise independent of update ordering.
pub fn aggregate(updates: &[ClientUpdate], previous_global: &ParamVector) -> Result<ParamVector> {
    let dim = previous_global.len();
    for u in updates {
        if u.params.len() != dim {
            return Err(SpearError::DimensionMismatch { expected: dim, got: u.params.len() });
        }
    }
    let total: u64 = updates.iter().map(|u| u.win_count).sum();
    if total == 0 {
        return Ok(previous_global.clone());
    }
    let weighted: Vec<(&ClientUpdate, f64)> = updates
        .iter()
        .filter(|u| u.win_count > 0)
        .map(|u| (u, u.win_count as f64 / total as f64))
        .collect();
    let mut out = vec![0.0; dim];
    let mut terms: Vec<f64> = Vec::with_capacity(weighted.len());
    for (j, slot) in out.iter_mut().enumerate() {
        terms.clear();
        for (u, f) in &weighted {
            terms.push(f * u.params.values()[j]);
        }
        terms.sort_unstable_by(|a, b| a.total_cmp(b));
        *slot = terms.iter().sum();
    }
    Ok(ParamVector::from_values(out))
}

/// Greedy-decoding accuracy over a task set.
pub fn evaluate_accuracy(
    spec: &ModelSpec,
    params: &ParamVector,
    tasks: &[Task],
    max_len: usize,
) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for task in tasks {
        let out = greedy_completion(spec, params, &task.prompt, max_len)?;
        if matches_reference(task, &out, &spec.vocab) {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

/// One client's round: broadcast copy, interaction, local steps.
pub fn local_round(
    client: &ClientState,
    global: &ParamVector,
    cfg: &RunConfig,
    total_steps: usize,
    round: usize,
) -> Result<(ClientUpdate, Option<OptimState>)> {
    let spec = cfg.model.to_spec()?;
    let fed = &cfg.fed;
    if client.shard.is_empty() {
        return Ok((
            ClientUpdate {
                params: global.clone(),
                win_count: 0,
                stats: InteractionStats::new(cfg.hyper.revisions),
                losses: Vec::new(),
            },
            client.optim.clone(),
        ));
    }

    // Evolving stream stand-in: uniform draws with replacement.
    let mut batch_rng = rng_for(fed.seed, &[label::BATCH, round as u64, client.client_id as u64]);
    let batch: Vec<Task> = (0..fed.prompts_per_round)
        .map(|_| client.shard[batch_rng.gen_range(0..client.shard.len())].clone())
        .collect();

    let interaction_seed =
        derive_seed(fed.seed, &[label::CLIENT, round as u64, client.client_id as u64]);
    let (traces, stats) = run_interaction_phase(
        &spec,
        global,
        &batch,
        &cfg.hyper,
        &cfg.interaction,
        interaction_seed,
    )?;
    let win_count = traces.wins.len() as u64;

    let mut params = global.clone();
    let start_step = (round * fed.local_steps).min(total_steps);
    let mut state = OptimState::new(&cfg.optim, params.len(), total_steps, start_step)?;
    if cfg.optim.persist_moments {
        if let Some(prev) = &client.optim {
            if prev.first_moment.len() == state.first_moment.len() {
                state.first_moment.clone_from(&prev.first_moment);
                state.second_moment.clone_from(&prev.second_moment);
            }
        }
    }

    let mut losses = Vec::with_capacity(fed.local_steps);
    for _ in 0..fed.local_steps {
        let breakdown = loss_spear(&spec, &params, &traces, &cfg.hyper)?;
        losses.push(breakdown);
        // An idle step (exactly zero loss) must not drift the parameters
        // through weight decay.
        if breakdown.total == 0.0 {
            continue;
        }
        let grad = grad_spear(&spec, &params, &traces, &cfg.hyper)?;
        let (next_params, next_state) = optim::step(&state, &params, &grad)?;
        params = next_params;
        state = next_state;
    }

    let keep = cfg.optim.persist_moments.then_some(state);
    Ok((ClientUpdate { params, win_count, stats, losses }, keep))
}

/// Full federated run, invoking `sink` once per completed round with the
/// record and the new global parameters.
pub fn run_federated_with<F>(
    cfg: &RunConfig,
    train: &[Task],
    eval: &[Task],
    mut sink: F,
) -> Result<(Vec<RoundRecord>, ParamVector)>
where
    F: FnMut(&RoundRecord, &ParamVector) -> Result<()>,
{
    cfg.validate()?;
    let spec = cfg.model.to_spec()?;
    let fed = &cfg.fed;

    let shards = partition_dirichlet(train, fed.num_clients, fed.dirichlet_alpha, fed.seed)?;
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .enumerate()
        .map(|(client_id, shard)| ClientState { client_id, shard, optim: None })
        .collect();

    let total_steps = (fed.rounds * fed.local_steps).max(1);
    let mut global = spec.zero_params();
    let mut records = Vec::with_capacity(fed.rounds);

    for round in 0..fed.rounds {
        let mut selection_rng = rng_for(fed.seed, &[label::SELECTION, round as u64]);
        let mut selected =
            rand::seq::index::sample(&mut selection_rng, fed.num_clients, fed.clients_per_round)
                .into_vec();
        selected.sort_unstable();

        let results: Result<Vec<_>> = selected
            .par_iter()
            .map(|&k| local_round(&clients[k], &global, cfg, total_steps, round))
            .collect();
        let results = results?;

        let mut updates = Vec::with_capacity(results.len());
        for (&k, (update, optim_state)) in selected.iter().zip(results) {
            clients[k].optim = optim_state;
            updates.push(update);
        }

        global = aggregate(&updates, &global)?;
        let accuracy =
            evaluate_accuracy(&spec, &global, eval, cfg.interaction.max_completion_len)?;

        let mut stats = InteractionStats::new(cfg.hyper.revisions);
        for u in &updates {
            stats.merge(&u.stats);
        }
        let all_losses: Vec<&LossBreakdown> =
            updates.iter().flat_map(|u| u.losses.iter()).collect();
        let mean = |f: fn(&LossBreakdown) -> f64| {
            if all_losses.is_empty() {
                0.0
            } else {
                all_losses.iter().map(|b| f(b)).sum::<f64>() / all_losses.len() as f64
            }
        };

        let record = RoundRecord {
            round,
            selected: selected.clone(),
            win_counts: updates.iter().map(|u| u.win_count).collect(),
            accuracy,
            mean_win_loss: mean(|b| b.win_loss),
            mean_lose_loss: mean(|b| b.lose_loss),
            frac_needing_revision: if stats.prompts_seen == 0 {
                0.0
            } else {
                stats.needing_revision() as f64 / stats.prompts_seen as f64
            },
            prompts_seen: stats.prompts_seen,
            initial_correct: stats.initial_correct,
            corrected: stats.corrected_total(),
            failed: stats.failed,
            skipped: stats.skipped,
        };
        sink(&record, &global)?;
        records.push(record);
    }
    Ok((records, global))
}

/// `run_federated_with` without a sink.
pub fn run_federated(
    cfg: &RunConfig,
    train: &[Task],
    eval: &[Task],
) -> Result<(Vec<RoundRecord>, ParamVector)> {
    run_federated_with(cfg, train, eval, |_, _| Ok(()))
}
