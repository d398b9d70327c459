//! Sharded per-sample passes over a dataset, with a rayon data-parallel
//! implementation and a sequential fallback.
//!
//! Both paths split the sample list into fixed-size shards, fold each shard
//! sequentially, and combine the shard partials in shard order. The shard
//! boundaries depend only on the sample count, never on the thread count, so
//! the parallel and sequential results are bit-identical and a run
//! reproduces exactly on any machine.
//!
//! Training-mode passes need dropout noise. To keep it independent of
//! execution order, each sample draws from its own RNG, derived by hashing
//! (run seed, phase, epoch, sample index).

use crate::cells::{CellModel, Mode};
use crate::error::Result;
use crate::params::GradStore;
use crate::tape::{NodeId, Tape};
use crate::tasks::Sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per shard; shard partials are combined in shard order.
pub const SHARD_SIZE: usize = 32;

/// Identity of a pass for per-sample RNG derivation.
#[derive(Clone, Copy, Debug)]
pub struct PassCtx {
    pub run_seed: u64,
    pub phase_salt: u64,
    pub epoch: u32,
    pub mode: Mode,
}

impl PassCtx {
    pub fn eval(run_seed: u64) -> Self {
        PassCtx {
            run_seed,
            phase_salt: 0,
            epoch: 0,
            mode: Mode::Eval,
        }
    }

    fn sample_rng(&self, sample_index: u64) -> ChaCha8Rng {
        let h = mix64(mix64(mix64(self.run_seed ^ self.phase_salt) ^ self.epoch as u64) ^ sample_index);
        ChaCha8Rng::seed_from_u64(h)
    }
}

/// splitmix64 finalizer; cheap, stable, and good enough to decorrelate
/// per-sample dropout streams.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Gradient sum plus bookkeeping for one set of samples.
pub struct GradSum {
    pub grads: GradStore,
    pub loss_sum: f64,
    pub count: usize,
}

/// Builds the per-sample scalar loss node. Must not mutate anything outside
/// the tape.
pub trait LossFn: Sync {
    fn loss(
        &self,
        model: &CellModel,
        tape: &mut Tape,
        sample: &Sample,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId>;
}

impl<F> LossFn for F
where
    F: Fn(&CellModel, &mut Tape, &Sample, Mode, &mut ChaCha8Rng) -> Result<NodeId> + Sync,
{
    fn loss(
        &self,
        model: &CellModel,
        tape: &mut Tape,
        sample: &Sample,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        self(model, tape, sample, mode, rng)
    }
}

fn shard_grads<F: LossFn>(
    model: &CellModel,
    shard: &[(u64, &Sample)],
    ctx: &PassCtx,
    loss_fn: &F,
) -> Result<GradSum> {
    let mut grads = GradStore::zeros_like(&model.params);
    let mut loss_sum = 0.0;
    let mut tape = Tape::new();
    for &(idx, sample) in shard {
        tape.reset();
        let mut rng = ctx.sample_rng(idx);
        let loss = loss_fn.loss(model, &mut tape, sample, ctx.mode, &mut rng)?;
        loss_sum += tape.scalar(loss)?;
        tape.backward(&model.params, loss, &mut grads)?;
    }
    Ok(GradSum {
        grads,
        loss_sum,
        count: shard.len(),
    })
}

fn combine(parts: Vec<GradSum>, model: &CellModel) -> Result<GradSum> {
    let mut total = GradSum {
        grads: GradStore::zeros_like(&model.params),
        loss_sum: 0.0,
        count: 0,
    };
    for p in parts {
        total.grads.add_assign(&p.grads)?;
        total.loss_sum += p.loss_sum;
        total.count += p.count;
    }
    Ok(total)
}

/// Sequential shard fold.
pub fn grad_sum_sequential<F: LossFn>(
    model: &CellModel,
    samples: &[(u64, &Sample)],
    ctx: &PassCtx,
    loss_fn: &F,
) -> Result<GradSum> {
    let parts = samples
        .chunks(SHARD_SIZE)
        .map(|shard| shard_grads(model, shard, ctx, loss_fn))
        .collect::<Result<Vec<_>>>()?;
    combine(parts, model)
}

/// Rayon shard fold; same shards, same combine order as the sequential path.
#[cfg(feature = "parallel")]
pub fn grad_sum_parallel<F: LossFn>(
    model: &CellModel,
    samples: &[(u64, &Sample)],
    ctx: &PassCtx,
    loss_fn: &F,
) -> Result<GradSum> {
    use rayon::prelude::*;
    let parts = samples
        .par_chunks(SHARD_SIZE)
        .map(|shard| shard_grads(model, shard, ctx, loss_fn))
        .collect::<Result<Vec<_>>>()?;
    combine(parts, model)
}

/// Dispatch to the parallel path when it is compiled in and worthwhile.
pub fn grad_sum<F: LossFn>(
    model: &CellModel,
    samples: &[(u64, &Sample)],
    ctx: &PassCtx,
    loss_fn: &F,
) -> Result<GradSum> {
    #[cfg(feature = "parallel")]
    {
        if samples.len() > SHARD_SIZE {
            return grad_sum_parallel(model, samples, ctx, loss_fn);
        }
    }
    grad_sum_sequential(model, samples, ctx, loss_fn)
}

/// Per-sample metric contribution: (numerator, denominator) pair.
pub trait MetricFn: Sync {
    fn measure(&self, model: &CellModel, tape: &mut Tape, sample: &Sample) -> Result<(f64, f64)>;
}

impl<F> MetricFn for F
where
    F: Fn(&CellModel, &mut Tape, &Sample) -> Result<(f64, f64)> + Sync,
{
    fn measure(&self, model: &CellModel, tape: &mut Tape, sample: &Sample) -> Result<(f64, f64)> {
        self(model, tape, sample)
    }
}

fn shard_metric<F: MetricFn>(
    model: &CellModel,
    shard: &[&Sample],
    metric_fn: &F,
) -> Result<Vec<(f64, f64)>> {
    let mut tape = Tape::new();
    let mut out = Vec::with_capacity(shard.len());
    for sample in shard {
        tape.reset();
        out.push(metric_fn.measure(model, &mut tape, sample)?);
    }
    Ok(out)
}

fn reduce_metric(mut pairs: Vec<(f64, f64)>) -> (f64, f64) {
    // Canonical summation order makes the result independent of sample
    // order within the split.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut num = 0.0;
    let mut den = 0.0;
    for (n, d) in pairs {
        num += n;
        den += d;
    }
    (num, den)
}

/// Sequential metric pass. Returns summed (numerator, denominator).
pub fn metric_sum_sequential<F: MetricFn>(
    model: &CellModel,
    samples: &[&Sample],
    metric_fn: &F,
) -> Result<(f64, f64)> {
    let parts = samples
        .chunks(SHARD_SIZE)
        .map(|shard| shard_metric(model, shard, metric_fn))
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_metric(parts.into_iter().flatten().collect()))
}

/// Rayon metric pass.
#[cfg(feature = "parallel")]
pub fn metric_sum_parallel<F: MetricFn>(
    model: &CellModel,
    samples: &[&Sample],
    metric_fn: &F,
) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let parts = samples
        .par_chunks(SHARD_SIZE)
        .map(|shard| shard_metric(model, shard, metric_fn))
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_metric(parts.into_iter().flatten().collect()))
}

pub fn metric_sum<F: MetricFn>(
    model: &CellModel,
    samples: &[&Sample],
    metric_fn: &F,
) -> Result<(f64, f64)> {
    #[cfg(feature = "parallel")]
    {
        if samples.len() > SHARD_SIZE {
            return metric_sum_parallel(model, samples, metric_fn);
        }
    }
    metric_sum_sequential(model, samples, metric_fn)
}
