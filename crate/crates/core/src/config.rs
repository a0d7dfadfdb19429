//! Run configuration: one JSON document covering the model shape, task
//! corpus, loss bundle, optimizer constants, and federated loop.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::federation::FedConfig;
use crate::interaction::InteractionConfig;
use crate::loss::SpearHyper;
use crate::model::{ModelSpec, Vocab};
use crate::optim::OptimSettings;
use crate::tasks::{gen_copy_tasks_pooled, gen_mcq_tasks, split_eval, Task};

/// Model shape as configured (reserved token ids use the standard layout).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub order: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { vocab_size: 16, order: 3, max_seq_len: 64 }
    }
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(Vocab::with_size(self.vocab_size)?, self.order, self.max_seq_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Copy,
    Mcq,
}

/// Corpus generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksConfig {
    #[serde(default = "default_family")]
    pub family: TaskFamily,
    pub count: usize,
    #[serde(default = "default_len_min")]
    pub payload_len_min: usize,
    #[serde(default = "default_len_max")]
    pub payload_len_max: usize,
    /// Copy family: distinct payload patterns per length (None derives a
    /// corpus-size default). Pattern reuse across tasks is what lets a
    /// lookup-table model transfer training onto held-out tasks.
    #[serde(default)]
    pub distinct_payloads_per_len: Option<usize>,
    #[serde(default = "default_num_options")]
    pub num_options: usize,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

fn default_family() -> TaskFamily {
    TaskFamily::Copy
}
fn default_len_min() -> usize {
    2
}
fn default_len_max() -> usize {
    4
}
fn default_num_options() -> usize {
    4
}
fn default_eval_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write params_round_<t>.bin checkpoints alongside the metrics.
    pub save_checkpoints: bool,
}

/// The whole experiment in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub tasks: TasksConfig,
    #[serde(default)]
    pub hyper: SpearHyper,
    #[serde(default)]
    pub interaction: InteractionConfig,
    #[serde(default)]
    pub optim: OptimSettings,
    pub fed: FedConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.model.to_spec()?;
        self.hyper.validate()?;
        self.interaction.validate()?;
        self.optim.validate()?;
        self.fed.validate()?;

        let t = &self.tasks;
        if t.count == 0 {
            return Err(SpearError::invalid("tasks.count must be positive"));
        }
        if t.payload_len_min < 1 || t.payload_len_min > t.payload_len_max {
            return Err(SpearError::invalid(
                "tasks payload length range must satisfy 1 <= min <= max",
            ));
        }
        if !(0.0..1.0).contains(&t.eval_fraction) {
            return Err(SpearError::invalid("tasks.eval_fraction must lie in [0, 1)"));
        }
        // prompt and answer must fit the context jointly
        let joint = match t.family {
            TaskFamily::Copy => 2 * t.payload_len_max + 3,
            TaskFamily::Mcq => t.num_options + 5,
        };
        if joint > spec.max_seq_len {
            return Err(SpearError::invalid(format!(
                "prompt+answer length {joint} exceeds max_seq_len {}",
                spec.max_seq_len
            )));
        }
        let eval_count = (t.count as f64 * t.eval_fraction).round() as usize;
        if t.count - eval_count < self.fed.num_clients {
            return Err(SpearError::invalid(format!(
                "{} training tasks cannot cover {} clients",
                t.count - eval_count,
                self.fed.num_clients
            )));
        }
        Ok(())
    }

    /// Generates the corpus and splits off the held-out evaluation set.
    pub fn build_corpus(&self) -> Result<(Vec<Task>, Vec<Task>)> {
        let vocab = Vocab::with_size(self.model.vocab_size)?;
        let t = &self.tasks;
        let all = match t.family {
            TaskFamily::Copy => {
                let lens = t.payload_len_max - t.payload_len_min + 1;
                let pool = t
                    .distinct_payloads_per_len
                    .unwrap_or_else(|| (t.count / (8 * lens)).max(2));
                gen_copy_tasks_pooled(
                    t.count,
                    (t.payload_len_min, t.payload_len_max),
                    pool,
                    &vocab,
                    self.fed.seed,
                )?
            }
            TaskFamily::Mcq => gen_mcq_tasks(t.count, t.num_options, &vocab, self.fed.seed)?,
        };
        split_eval(all, t.eval_fraction, self.fed.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "tasks": { "count": 60 },
            "fed": { "rounds": 2, "num_clients": 4, "clients_per_round": 2 }
        }"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(minimal_json()).unwrap();
        assert_eq!(cfg.model.vocab_size, 16);
        assert_eq!(cfg.hyper.lambda_w, 1.0);
        assert_eq!(cfg.hyper.lambda_l, 0.1);
        assert_eq!(cfg.hyper.mu, 0.3);
        assert_eq!(cfg.hyper.revisions, 2);
        assert_eq!(cfg.fed.rounds, 2);
        assert!(!cfg.output.save_checkpoints);
    }

    #[test]
    fn missing_required_field_names_it() {
        let err = RunConfig::from_json(r#"{ "tasks": { "count": 10 }, "fed": {} }"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("rounds"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = RunConfig::from_json(
            r#"{ "tasks": { "count": 10, "fancy": 1 }, "fed": { "rounds": 1 } }"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("fancy"), "{err}");
    }

    #[test]
    fn cross_validation_catches_oversized_tasks() {
        let mut cfg = RunConfig::from_json(minimal_json()).unwrap();
        cfg.model.max_seq_len = 8;
        cfg.tasks.payload_len_max = 6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::from_json(minimal_json()).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn corpus_split_respects_eval_fraction() {
        let cfg = RunConfig::from_json(minimal_json()).unwrap();
        let (train, eval) = cfg.build_corpus().unwrap();
        assert_eq!(train.len() + eval.len(), 60);
        assert_eq!(eval.len(), 12);
    }
}
