//! Hidden-layer LSTM cells with grow-and-prune training.
//!
//! The cell family here replaces each LSTM control gate with a small DNN
//! (zero or more hidden layers before the gate nonlinearity), and trains it
//! sparsely: a random sparse seed architecture grows connections whose
//! average gradient magnitude clears a percentile threshold, then iterative
//! magnitude pruning with retraining and rollback compacts the result while
//! holding a task-metric threshold.
//!
//! Crate layout follows the moving parts:
//!
//! - [`tensor`], [`tape`]: dense f64 matrices and reverse-mode
//!   differentiation with dormant-weight gradients.
//! - [`cells`]: H-LSTM / LSTM / GRU steps, stacking, unrolling.
//! - [`sparsity`]: masks, percentile policies, neuron pruning.
//! - [`optim`]: Adam and Nesterov SGD with re-masking.
//! - [`exec`]: sharded dataset passes — rayon-parallel with the `parallel`
//!   feature (default), sequential otherwise, bit-identical either way.
//! - [`train`]: gradient accumulation, the growth/shift/main/prune phases,
//!   and the end-to-end pipeline.
//! - [`tasks`]: adding / copy / char-LM benchmarks and metrics.
//! - [`metrics`]: parameter, FLOPs, ReLU-activation, and latency reports.
//! - [`checkpoint`]: the HLGP binary format.
//! - [`config`]: TOML run configuration.

pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod sparsity;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use cells::{CellKind, CellModel, CellSpec, Mode};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
pub use params::{GradStore, ParamId, ParamStore};
pub use sparsity::{Mask, SparsityReport};
pub use tape::{Activation, NodeId, Tape};
pub use tasks::{Dataset, MetricKind, Sample, Split, Task, TaskCfg, TaskKind};
pub use tensor::Matrix;
pub use train::{
    accumulate_avg_grads, activation_shift, advance, gp_pipeline, run_to_final, EventSink,
    GpSchedule, JsonlSink, MemorySink, MetricRecord, NullSink, PhaseTag, Stage, TrainEvent,
    Trajectory,
};
