//! Grow-and-prune training: gradient accumulation over the training set,
//! the growth and pruning phases, the activation shift, and the pipeline
//! that chains them.
//!
//! The pipeline is a sequence of phase advances over a [`Checkpoint`]:
//!
//! seed -> growth -> activation shift -> main training -> prune iterations
//!
//! Each advance consumes only checkpoint state (model, optimizer, RNG,
//! counters), so a run resumed from any phase checkpoint continues
//! bit-identically to an uninterrupted one. Pruning commits one iteration at
//! a time; when a retrained candidate misses the accuracy threshold the
//! checkpoint rolls back wholesale — weights, optimizer moments, and RNG —
//! to the last committed iteration.

use crate::cells::{CellModel, Mode};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::exec::{self, PassCtx};
use crate::optim::Optimizer;
use crate::params::GradStore;
use crate::sparsity::{self, Mask, PruneOutcome};
use crate::tape::Activation;
use crate::tasks::{Dataset, Sample, Split, Task, TaskKind};
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use serde::Serialize;
use std::io::Write;

/// Grow-and-prune schedule plus the desk-scale training budgets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GpSchedule {
    /// Growth percentile ratio in (0, 1].
    pub alpha: f64,
    /// Per-iteration pruning ratio in (0, 1).
    pub beta: f64,
    /// Seed architecture sparsity in [0, 1).
    pub seed_sparsity: f64,
    pub growth_epochs: u32,
    pub retrain_epochs_per_prune: u32,
    /// Bound on the task metric that a prune iteration must recover to
    /// commit (<= for MSE/bits, >= for accuracy).
    pub accuracy_threshold: f64,
    pub shift_retrain_epochs: u32,
    pub main_epochs: u32,
    pub batch_size: usize,
    /// Early-stop margin for main training in (0, 1]; the phase ends once
    /// the metric clears the threshold scaled by this factor. 0 disables.
    pub early_stop_margin: f64,
}

impl GpSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !(0.0 < self.beta && self.beta < 1.0) {
            return Err(Error::Config(format!("beta {} not in (0, 1)", self.beta)));
        }
        if !(0.0..1.0).contains(&self.seed_sparsity) {
            return Err(Error::Config(format!(
                "seed sparsity {} not in [0, 1)",
                self.seed_sparsity
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.early_stop_margin) {
            return Err(Error::Config("early stop margin must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Pipeline position of a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PhaseTag {
    Seed,
    PostGrowth,
    PostShift,
    Trained,
    PostPruneIter(u32),
    Final,
}

impl PhaseTag {
    pub fn label(&self) -> String {
        match self {
            PhaseTag::Seed => "seed".into(),
            PhaseTag::PostGrowth => "post-growth".into(),
            PhaseTag::PostShift => "post-shift".into(),
            PhaseTag::Trained => "trained".into(),
            PhaseTag::PostPruneIter(k) => format!("post-prune-iter-{k}"),
            PhaseTag::Final => "final".into(),
        }
    }
}

/// Which loop produced a history record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    Growth,
    ShiftRetrain,
    Main,
    PruneRetrain(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub stage: Stage,
    pub epoch: u32,
    pub loss: f64,
    pub metric: f64,
    pub sparsity: f64,
}

/// Seed / post-growth / post-pruning sparsity per layer group.
#[derive(Clone, Debug, Serialize)]
pub struct TrajRow {
    pub name: String,
    pub seed: f64,
    pub post_growth: f64,
    pub post_prune: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub rows: Vec<TrajRow>,
    pub total: TrajRow,
}

fn group_sparsity(model: &CellModel, ids: &[crate::params::ParamId]) -> f64 {
    let mut active = 0usize;
    let mut total = 0usize;
    for &id in ids {
        if let Some(m) = &model.params.tensor(id).mask {
            active += m.active_count();
            total += m.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        1.0 - active as f64 / total as f64
    }
}

impl Trajectory {
    pub fn from_seed(model: &CellModel) -> Trajectory {
        let rows = model
            .layer_groups()
            .into_iter()
            .map(|(name, ids)| TrajRow {
                name,
                seed: group_sparsity(model, &ids),
                post_growth: f64::NAN,
                post_prune: f64::NAN,
            })
            .collect();
        Trajectory {
            rows,
            total: TrajRow {
                name: "Total".into(),
                seed: model.total_sparsity(),
                post_growth: f64::NAN,
                post_prune: f64::NAN,
            },
        }
    }

    fn record(&mut self, model: &CellModel, pick: fn(&mut TrajRow) -> &mut f64) {
        for (name, ids) in model.layer_groups() {
            if let Some(row) = self.rows.iter_mut().find(|r| r.name == name) {
                *pick(row) = group_sparsity(model, &ids);
            }
        }
        *pick(&mut self.total) = model.total_sparsity();
    }

    pub fn record_post_growth(&mut self, model: &CellModel) {
        self.record(model, |r| &mut r.post_growth);
    }

    pub fn record_post_prune(&mut self, model: &CellModel) {
        self.record(model, |r| &mut r.post_prune);
    }

    /// Aligned table with Seed / Post-Growth / Post-Pruning columns.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["Layers".len(), "Total".len()].into_iter())
            .max()
            .unwrap_or(6);
        let cell = |v: f64| {
            if v.is_nan() {
                "-".to_string()
            } else {
                format!("{:.2}%", v * 100.0)
            }
        };
        let mut out = format!(
            "{:<width$}  {:>8}  {:>12}  {:>13}\n",
            "Layers", "Seed", "Post-Growth", "Post-Pruning"
        );
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>12}  {:>13}\n",
                r.name,
                cell(r.seed),
                cell(r.post_growth),
                cell(r.post_prune)
            ));
        }
        out
    }
}

/// One structured log record per epoch or phase event.
#[derive(Clone, Debug, Serialize)]
pub struct TrainEvent {
    pub phase: String,
    pub epoch: u32,
    pub loss: Option<f64>,
    pub metric: Option<f64>,
    pub sparsity: f64,
}

pub trait EventSink {
    fn emit(&mut self, ev: &TrainEvent);
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _ev: &TrainEvent) {}
}

/// Collects events in memory (tests, reports).
#[derive(Default)]
pub struct MemorySink {
    pub events: Vec<TrainEvent>,
}

impl EventSink for MemorySink {
    fn emit(&mut self, ev: &TrainEvent) {
        self.events.push(ev.clone());
    }
}

/// Writes one JSON object per line, with a wall-clock timestamp attached.
pub struct JsonlSink<W: Write> {
    w: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(w: W) -> Self {
        JsonlSink { w }
    }
}

#[derive(Serialize)]
struct StampedEvent<'a> {
    ts_ms: u128,
    #[serde(flatten)]
    ev: &'a TrainEvent,
}

impl<W: Write> EventSink for JsonlSink<W> {
    fn emit(&mut self, ev: &TrainEvent) {
        let ts_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        if let Ok(line) = serde_json::to_string(&StampedEvent { ts_ms, ev }) {
            let _ = writeln!(self.w, "{line}");
        }
    }
}

// Per-phase RNG stream salts for dropout derivation.
const SALT_GROWTH: u64 = 1;
const SALT_SHIFT: u64 = 2;
const SALT_MAIN: u64 = 3;
const SALT_PRUNE: u64 = 4;

/// Mean per-sample |gradient| over a whole dataset, dropout off, no
/// parameter updates. Dense over dormant entries, which is what growth
/// ranks.
pub fn accumulate_avg_grads(model: &CellModel, data: &Dataset, kind: TaskKind) -> Result<GradStore> {
    if data.is_empty() {
        return Err(Error::Contract("gradient accumulation over empty dataset".into()));
    }
    let refs: Vec<(u64, &Sample)> = data.samples.iter().enumerate().map(|(i, s)| (i as u64, s)).collect();
    let ctx = PassCtx::eval(0);
    let f = move |model: &CellModel,
                  tape: &mut crate::tape::Tape,
                  sample: &Sample,
                  mode: Mode,
                  rng: &mut rand_chacha::ChaCha8Rng| kind.loss_node(model, tape, sample, mode, rng);
    let mut sum = exec::grad_sum(model, &refs, &ctx, &f)?;
    sum.grads.scale(1.0 / sum.count as f64);
    sum.grads.abs_in_place();
    Ok(sum.grads)
}

/// One shuffled-minibatch training epoch. Returns the mean per-sample loss.
/// Increments the checkpoint's global epoch counter.
pub fn train_epoch(ck: &mut Checkpoint, task: &Task, salt: u64) -> Result<f64> {
    let n = task.train.len();
    if n == 0 {
        return Err(Error::Contract("training epoch over empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ck.rng);
    let kind = task.cfg.kind;
    let f = move |model: &CellModel,
                  tape: &mut crate::tape::Tape,
                  sample: &Sample,
                  mode: Mode,
                  rng: &mut rand_chacha::ChaCha8Rng| kind.loss_node(model, tape, sample, mode, rng);
    let mut loss_sum = 0.0;
    for batch in order.chunks(ck.schedule.batch_size) {
        let refs: Vec<(u64, &Sample)> = batch
            .iter()
            .map(|&i| (i as u64, &task.train.samples[i]))
            .collect();
        let ctx = PassCtx {
            run_seed: ck.run_seed,
            phase_salt: salt,
            epoch: ck.global_epoch,
            mode: Mode::Train,
        };
        let mut sum = exec::grad_sum(&ck.model, &refs, &ctx, &f)?;
        sum.grads.scale(1.0 / sum.count as f64);
        ck.opt.step(&mut ck.model.params, &sum.grads, ck.global_epoch)?;
        loss_sum += sum.loss_sum;
    }
    ck.global_epoch += 1;
    Ok(loss_sum / n as f64)
}

fn meets(ck: &Checkpoint, task: &Task, metric: f64) -> bool {
    task.metric_kind().meets(metric, ck.schedule.accuracy_threshold)
}

fn push_record(ck: &mut Checkpoint, sink: &mut dyn EventSink, stage: Stage, phase: &str, loss: f64, metric: f64) {
    let sparsity = ck.model.total_sparsity();
    ck.history.push(MetricRecord {
        stage,
        epoch: ck.global_epoch,
        loss,
        metric,
        sparsity,
    });
    sink.emit(&TrainEvent {
        phase: phase.into(),
        epoch: ck.global_epoch,
        loss: Some(loss),
        metric: Some(metric),
        sparsity,
    });
}

fn marker_event(ck: &Checkpoint, sink: &mut dyn EventSink, phase: &str, metric: Option<f64>) {
    sink.emit(&TrainEvent {
        phase: phase.into(),
        epoch: ck.global_epoch,
        loss: None,
        metric,
        sparsity: ck.model.total_sparsity(),
    });
}

/// Growth phase: per growth epoch, accumulate average gradients over the
/// full training set, activate dormant connections that clear the
/// percentile, then train one epoch. Records post-growth sparsity.
pub fn growth_phase(ck: &mut Checkpoint, task: &Task, sink: &mut dyn EventSink) -> Result<()> {
    for _ in 0..ck.schedule.growth_epochs {
        let avg = accumulate_avg_grads(&ck.model, &task.train, task.cfg.kind)?;
        for id in ck.model.params.masked_ids() {
            let tensor = ck.model.params.tensor_mut(id);
            let mask = tensor.mask.as_mut().expect("masked id");
            // Split borrow: weights and mask live in the same tensor.
            let (value, mask) = (&mut tensor.value, mask);
            sparsity::grow(value, mask, avg.grad(id), ck.schedule.alpha)?;
        }
        let loss = train_epoch(ck, task, SALT_GROWTH)?;
        let metric = task.evaluate(&ck.model, Split::Eval)?;
        push_record(ck, sink, Stage::Growth, "growth", loss, metric);
    }
    ck.phase = PhaseTag::PostGrowth;
    let model = ck.model.clone();
    ck.trajectory.record_post_growth(&model);
    marker_event(ck, sink, "post-growth", None);
    Ok(())
}

/// Swap every leaky-ReLU internal activation to ReLU, weights untouched.
/// Returns false when there was nothing to shift.
pub fn activation_shift(model: &mut CellModel) -> bool {
    if model.spec.internal_activation != Activation::LeakyRelu || !model.has_hidden_layers() {
        return false;
    }
    model.spec.internal_activation = Activation::Relu;
    true
}

/// Activation shift plus its recovery retraining.
pub fn shift_phase(ck: &mut Checkpoint, task: &Task, sink: &mut dyn EventSink) -> Result<()> {
    if activation_shift(&mut ck.model) {
        for _ in 0..ck.schedule.shift_retrain_epochs {
            let loss = train_epoch(ck, task, SALT_SHIFT)?;
            let metric = task.evaluate(&ck.model, Split::Eval)?;
            push_record(ck, sink, Stage::ShiftRetrain, "shift-retrain", loss, metric);
        }
    }
    ck.phase = PhaseTag::PostShift;
    marker_event(ck, sink, "post-shift", None);
    Ok(())
}

fn early_stop_target(ck: &Checkpoint, task: &Task) -> Option<f64> {
    let m = ck.schedule.early_stop_margin;
    if m <= 0.0 {
        return None;
    }
    let thr = ck.schedule.accuracy_threshold;
    Some(if task.metric_kind().lower_is_better() {
        thr * m
    } else {
        thr + (1.0 - thr) * (1.0 - m)
    })
}

/// Main training toward convergence: up to `main_epochs`, stopping early
/// once the eval metric clears the margin target.
pub fn main_phase(ck: &mut Checkpoint, task: &Task, sink: &mut dyn EventSink, epochs: Option<u32>) -> Result<()> {
    let budget = epochs.unwrap_or(ck.schedule.main_epochs);
    let target = early_stop_target(ck, task);
    for _ in 0..budget {
        let loss = train_epoch(ck, task, SALT_MAIN)?;
        let metric = task.evaluate(&ck.model, Split::Eval)?;
        push_record(ck, sink, Stage::Main, "main", loss, metric);
        if let Some(t) = target {
            if task.metric_kind().meets(metric, t) {
                break;
            }
        }
    }
    ck.phase = PhaseTag::Trained;
    marker_event(ck, sink, "trained", None);
    Ok(())
}

fn neuron_prune_model(model: &mut CellModel) -> usize {
    let chains = model.gate_chains();
    let mut removed = 0;
    for chain in chains {
        // Lift the chain tensors out of the store so they can be mutated as
        // one slice, then put them back.
        let mut taken: Vec<(Matrix, Mask)> = chain
            .iter()
            .map(|&id| {
                let t = model.params.tensor_mut(id);
                (
                    std::mem::replace(&mut t.value, Matrix::zeros(0, 0)),
                    t.mask.take().expect("chain tensors are masked"),
                )
            })
            .collect();
        {
            let mut refs: Vec<(&mut Matrix, &mut Mask)> =
                taken.iter_mut().map(|(m, k)| (m, k)).collect();
            removed += sparsity::prune_neurons(&mut refs);
        }
        for (&id, (m, k)) in chain.iter().zip(taken) {
            let t = model.params.tensor_mut(id);
            t.value = m;
            t.mask = Some(k);
        }
    }
    removed
}

/// Outcome of one prune iteration.
enum PruneIter {
    Committed,
    Stopped,
}

fn prune_iteration(ck: &mut Checkpoint, task: &Task, sink: &mut dyn EventSink) -> Result<PruneIter> {
    let iter = match ck.phase {
        PhaseTag::Trained => {
            // The input model must satisfy the threshold before pruning can
            // commit anything.
            let metric = task.evaluate(&ck.model, Split::Eval)?;
            if !meets(ck, task, metric) {
                marker_event(ck, sink, "prune-skipped-below-threshold", Some(metric));
                return Ok(PruneIter::Stopped);
            }
            1
        }
        PhaseTag::PostPruneIter(k) => k + 1,
        _ => return Err(Error::Contract(format!("prune iteration from phase {:?}", ck.phase))),
    };

    let mut cand = ck.clone();
    let mut pruned = 0usize;
    for id in cand.model.params.masked_ids() {
        let tensor = cand.model.params.tensor_mut(id);
        let mask = tensor.mask.as_mut().expect("masked id");
        let (value, mask) = (&mut tensor.value, mask);
        if let PruneOutcome::Pruned(k) = sparsity::prune_step(value, mask, cand.schedule.beta)? {
            pruned += k;
        }
    }
    if pruned == 0 {
        marker_event(ck, sink, "prune-no-progress", None);
        return Ok(PruneIter::Stopped);
    }
    neuron_prune_model(&mut cand.model);
    cand.opt.remask(&mut cand.model.params);

    for _ in 0..cand.schedule.retrain_epochs_per_prune {
        let loss = train_epoch(&mut cand, task, SALT_PRUNE)?;
        let metric = task.evaluate(&cand.model, Split::Eval)?;
        push_record(&mut cand, sink, Stage::PruneRetrain(iter), "prune-retrain", loss, metric);
        if meets(&cand, task, metric) {
            cand.phase = PhaseTag::PostPruneIter(iter);
            *ck = cand;
            marker_event(ck, sink, &format!("prune-commit-{iter}"), Some(metric));
            return Ok(PruneIter::Committed);
        }
    }
    // Candidate never recovered: roll back to the committed state `ck`
    // untouched (weights, moments, and RNG alike).
    marker_event(ck, sink, &format!("prune-rollback-{iter}"), None);
    Ok(PruneIter::Stopped)
}

/// Iterative magnitude pruning with retraining and rollback. Leaves the
/// checkpoint at `Final`, holding the last committed model.
pub fn prune_phase(ck: &mut Checkpoint, task: &Task, sink: &mut dyn EventSink) -> Result<()> {
    if !matches!(ck.phase, PhaseTag::Trained | PhaseTag::PostPruneIter(_)) {
        ck.phase = PhaseTag::Trained;
    }
    loop {
        match prune_iteration(ck, task, sink)? {
            PruneIter::Committed => {}
            PruneIter::Stopped => break,
        }
    }
    finalize(ck, sink);
    Ok(())
}

fn finalize(ck: &mut Checkpoint, sink: &mut dyn EventSink) {
    ck.phase = PhaseTag::Final;
    let model = ck.model.clone();
    ck.trajectory.record_post_prune(&model);
    marker_event(ck, sink, "final", None);
}

/// Advance one pipeline stage. Growth, shift, and main training are one
/// stage each; every prune iteration is its own stage so mid-phase
/// checkpoints can resume.
pub fn advance(ck: &mut Checkpoint, task: &Task, sink: &mut dyn EventSink) -> Result<()> {
    match ck.phase {
        PhaseTag::Seed => growth_phase(ck, task, sink),
        PhaseTag::PostGrowth => shift_phase(ck, task, sink),
        PhaseTag::PostShift => main_phase(ck, task, sink, None),
        PhaseTag::Trained | PhaseTag::PostPruneIter(_) => {
            match prune_iteration(ck, task, sink)? {
                PruneIter::Committed => Ok(()),
                PruneIter::Stopped => {
                    finalize(ck, sink);
                    Ok(())
                }
            }
        }
        PhaseTag::Final => Err(Error::Contract("pipeline already final".into())),
    }
}

/// Run the full pipeline to `Final`, invoking `on_phase` after every stage
/// (checkpoint writers hook in here).
pub fn run_to_final(
    ck: &mut Checkpoint,
    task: &Task,
    sink: &mut dyn EventSink,
    mut on_phase: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<()> {
    while ck.phase != PhaseTag::Final {
        advance(ck, task, sink)?;
        on_phase(ck)?;
    }
    Ok(())
}

/// Build a seed checkpoint and run the whole grow-and-prune pipeline.
pub fn gp_pipeline(
    spec: crate::cells::CellSpec,
    schedule: GpSchedule,
    opt_kind: crate::optim::OptimizerKind,
    lr: crate::optim::LrSchedule,
    weight_decay: f64,
    task: &Task,
    run_seed: u64,
    sink: &mut dyn EventSink,
) -> Result<Checkpoint> {
    let mut ck = Checkpoint::init(spec, schedule, opt_kind, lr, weight_decay, task, run_seed)?;
    marker_event(&ck, sink, "seed", None);
    run_to_final(&mut ck, task, sink, |_| Ok(()))?;
    Ok(ck)
}

impl Checkpoint {
    /// Fresh seed checkpoint: random sparse seed architecture, zeroed
    /// optimizer, RNG advanced past initialization.
    pub fn init(
        spec: crate::cells::CellSpec,
        schedule: GpSchedule,
        opt_kind: crate::optim::OptimizerKind,
        lr: crate::optim::LrSchedule,
        weight_decay: f64,
        task: &Task,
        run_seed: u64,
    ) -> Result<Checkpoint> {
        schedule.validate()?;
        lr.validate()?;
        spec.validate()?;
        if spec.input_width != task.input_width() {
            return Err(Error::Config(format!(
                "cell input width {} but task encodes {}",
                spec.input_width,
                task.input_width()
            )));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(run_seed);
        let model = CellModel::init(spec, Some(task.output_width()), schedule.seed_sparsity, &mut rng)?;
        let opt = Optimizer::new(opt_kind, lr, weight_decay, &model.params);
        let trajectory = Trajectory::from_seed(&model);
        Ok(Checkpoint {
            model,
            opt,
            schedule,
            phase: PhaseTag::Seed,
            run_seed,
            global_epoch: 0,
            rng,
            history: Vec::new(),
            trajectory,
        })
    }
}
