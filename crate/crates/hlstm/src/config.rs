//! Run configuration: TOML-backed description of a task, model, optimizer,
//! and grow-and-prune schedule.
//!
//! Defaults mirror the stock hyper-parameters (lr 3e-4, hidden dropout 0.2,
//! io dropout 0.5, Adam betas 0.9/0.999); desk-scale budgets have explicit
//! fields. The cell's input and output widths are derived from the task
//! encoding, so a config cannot describe an inconsistent pairing.

use crate::cells::{CellKind, CellSpec};
use crate::error::{Error, Result};
use crate::optim::{LrSchedule, OptimizerKind};
use crate::tape::Activation;
use crate::tasks::{Task, TaskCfg, TaskKind};
use crate::train::GpSchedule;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskSection,
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub gp: GpSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct TaskSection {
    pub kind: String,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub payload_len: Option<usize>,
    #[serde(default)]
    pub blank_len: Option<usize>,
    #[serde(default)]
    pub vocab: Option<usize>,
    #[serde(default)]
    pub seq_len: Option<usize>,
    pub n_train: usize,
    pub n_eval: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub cell: String,
    pub cell_width: usize,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_stack")]
    pub stack_depth: usize,
    #[serde(default = "default_io_dropout")]
    pub io_dropout: f64,
    #[serde(default = "default_hidden_dropout")]
    pub hidden_dropout: f64,
    /// Gate hidden-layer activation at the start of training; the
    /// activation shift later swaps leaky_relu to relu.
    #[serde(default = "default_internal_activation")]
    pub internal_activation: String,
}

fn default_internal_activation() -> String {
    "leaky_relu".into()
}

fn default_stack() -> usize {
    1
}

fn default_io_dropout() -> f64 {
    0.5
}

fn default_hidden_dropout() -> f64 {
    0.2
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_opt_kind")]
    pub kind: String,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_schedule_kind")]
    pub schedule: String,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_period")]
    pub decay_period: u32,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: default_opt_kind(),
            lr: default_lr(),
            weight_decay: 0.0,
            schedule: default_schedule_kind(),
            decay_factor: default_decay(),
            decay_period: default_period(),
        }
    }
}

fn default_opt_kind() -> String {
    "adam".into()
}

fn default_lr() -> f64 {
    3e-4
}

fn default_schedule_kind() -> String {
    "constant".into()
}

fn default_decay() -> f64 {
    0.8
}

fn default_period() -> u32 {
    6
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    pub seed_sparsity: f64,
    pub alpha: f64,
    pub beta: f64,
    pub growth_epochs: u32,
    pub retrain_epochs_per_prune: u32,
    pub accuracy_threshold: f64,
    #[serde(default = "default_shift_epochs")]
    pub shift_retrain_epochs: u32,
    pub main_epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_margin")]
    pub early_stop_margin: f64,
}

fn default_shift_epochs() -> u32 {
    3
}

fn default_batch() -> usize {
    64
}

fn default_margin() -> f64 {
    0.5
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task_cfg()?;
        self.schedule()?.validate()?;
        self.lr_schedule()?.validate()?;
        self.optimizer_kind()?;
        let task = Task::generate(TaskCfg {
            n_train: 1,
            n_eval: 1,
            ..self.task_cfg()?
        })?;
        self.cell_spec(&task)?.validate()
    }

    pub fn task_cfg(&self) -> Result<TaskCfg> {
        let need = |field: Option<usize>, name: &str| {
            field.ok_or_else(|| Error::Config(format!("task.{name} is required for task kind {}", self.task.kind)))
        };
        let kind = match self.task.kind.as_str() {
            "adding" => TaskKind::Adding {
                length: need(self.task.length, "length")?,
            },
            "copy" => TaskKind::Copy {
                payload_len: need(self.task.payload_len, "payload_len")?,
                blank_len: need(self.task.blank_len, "blank_len")?,
                vocab: need(self.task.vocab, "vocab")?,
            },
            "char_lm" => TaskKind::CharLm {
                seq_len: need(self.task.seq_len, "seq_len")?,
            },
            other => return Err(Error::Config(format!("unknown task kind '{other}'"))),
        };
        Ok(TaskCfg {
            kind,
            n_train: self.task.n_train,
            n_eval: self.task.n_eval,
            seed: self.seed,
        })
    }

    pub fn generate_task(&self) -> Result<Task> {
        Task::generate(self.task_cfg()?)
    }

    pub fn cell_spec(&self, task: &Task) -> Result<CellSpec> {
        let kind = match self.model.cell.as_str() {
            "hlstm" => CellKind::HLstm,
            "lstm" => CellKind::Lstm,
            "gru" => CellKind::Gru,
            other => return Err(Error::Config(format!("unknown cell kind '{other}'"))),
        };
        let internal_activation = match self.model.internal_activation.as_str() {
            "leaky_relu" => Activation::LeakyRelu,
            "relu" => Activation::Relu,
            other => {
                return Err(Error::Config(format!(
                    "unknown internal activation '{other}' (expected leaky_relu or relu)"
                )))
            }
        };
        Ok(CellSpec {
            kind,
            input_width: task.input_width(),
            cell_width: self.model.cell_width,
            hidden_layer_widths: self.model.hidden_widths.clone(),
            stack_depth: self.model.stack_depth,
            io_dropout: self.model.io_dropout,
            hidden_dropout: self.model.hidden_dropout,
            internal_activation,
        })
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match self.optimizer.kind.as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "nesterov_sgd" => Ok(OptimizerKind::NesterovSgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn lr_schedule(&self) -> Result<LrSchedule> {
        let base_lr = self.optimizer.lr;
        Ok(match self.optimizer.schedule.as_str() {
            "constant" => LrSchedule::Constant { base_lr },
            "step_decay" => LrSchedule::StepDecay {
                base_lr,
                factor: self.optimizer.decay_factor,
                period: self.optimizer.decay_period,
            },
            "per_epoch_decay" => LrSchedule::PerEpochDecay {
                base_lr,
                factor: self.optimizer.decay_factor,
            },
            other => return Err(Error::Config(format!("unknown lr schedule '{other}'"))),
        })
    }

    pub fn schedule(&self) -> Result<GpSchedule> {
        let g = &self.gp;
        let schedule = GpSchedule {
            alpha: g.alpha,
            beta: g.beta,
            seed_sparsity: g.seed_sparsity,
            growth_epochs: g.growth_epochs,
            retrain_epochs_per_prune: g.retrain_epochs_per_prune,
            accuracy_threshold: g.accuracy_threshold,
            shift_retrain_epochs: g.shift_retrain_epochs,
            main_epochs: g.main_epochs,
            batch_size: g.batch_size,
            early_stop_margin: g.early_stop_margin,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[task]
kind = "adding"
length = 12
n_train = 64
n_eval = 32

[model]
cell = "hlstm"
cell_width = 8
hidden_widths = [8]
io_dropout = 0.0
hidden_dropout = 0.0

[gp]
seed_sparsity = 0.5
alpha = 0.9
beta = 0.2
growth_epochs = 2
retrain_epochs_per_prune = 4
accuracy_threshold = 0.05
main_epochs = 10
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.optimizer.kind, "adam");
        assert_eq!(cfg.optimizer.lr, 3e-4);
        assert_eq!(cfg.gp.batch_size, 64);
        let task = cfg.generate_task().unwrap();
        let spec = cfg.cell_spec(&task).unwrap();
        assert_eq!(spec.input_width, 2);
        assert_eq!(spec.stack_depth, 1);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let bad = MINIMAL.replace("[model]", "[model]\nbogus = 1");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad = MINIMAL.replace("alpha = 0.9", "alpha = 1.4");
        assert!(matches!(RunConfig::from_toml_str(&bad), Err(Error::Config(_))));
        let bad = MINIMAL.replace("kind = \"adding\"", "kind = \"mnist\"");
        assert!(RunConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn missing_task_field_is_named() {
        let bad = MINIMAL.replace("length = 12\n", "");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config(msg)) => assert!(msg.contains("length"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let again = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(again.seed, cfg.seed);
        assert_eq!(again.model.cell_width, cfg.model.cell_width);
    }
}
