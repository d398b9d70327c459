//! Binary checkpoint serialization ("HLGP" format, version 1).
//!
//! Layout: magic `HLGP`, a version byte, then length-prefixed sections in a
//! fixed order: SPEC, SCHED, PARAM, OPT, PHASE, RNG, HIST, TRAJ. All
//! integers little-endian; f64 stored as raw bits, so save/load round-trips
//! are bit-exact and a resumed run continues bit-identically.
//!
//! Masked tensors store only their active weights plus a run-length-encoded
//! mask; dormant entries are 0.0 by invariant, so nothing is lost and a
//! heavily pruned checkpoint is several times smaller than its dense
//! counterpart. Optimizer moments follow the same encoding (they are
//! re-masked to zero on dormant positions after every step).

use crate::cells::{CellKind, CellModel, CellSpec};
use crate::error::{Error, Result};
use crate::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::sparsity::Mask;
use crate::tape::Activation;
use crate::tensor::Matrix;
use crate::train::{GpSchedule, MetricRecord, PhaseTag, Stage, TrajRow, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HLGP";
pub const VERSION: u8 = 1;

/// Serialized training state: everything a resumed run needs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CellModel,
    pub opt: Optimizer,
    pub schedule: GpSchedule,
    pub phase: PhaseTag,
    pub run_seed: u64,
    pub global_epoch: u32,
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricRecord>,
    pub trajectory: Trajectory,
}

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn new() -> Self {
        Enc { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], section: &'static str) -> Self {
        Dec { buf, pos: 0, section }
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            section: self.section,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return self.fail(format!(
                "unexpected end: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        match std::str::from_utf8(bytes) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail("invalid utf-8 string"),
        }
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return self.fail(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Sigmoid => 0,
        Activation::Tanh => 1,
        Activation::Relu => 2,
        Activation::LeakyRelu => 3,
    }
}

fn activation_from(code: u8, d: &Dec) -> Result<Activation> {
    Ok(match code {
        0 => Activation::Sigmoid,
        1 => Activation::Tanh,
        2 => Activation::Relu,
        3 => Activation::LeakyRelu,
        _ => return d.fail(format!("unknown activation code {code}")),
    })
}

fn encode_mask_rle(enc: &mut Enc, mask: &Mask) {
    let data = mask.data();
    if data.is_empty() {
        enc.u8(0);
        enc.u32(0);
        return;
    }
    enc.u8(data[0]);
    let mut runs: Vec<u32> = Vec::new();
    let mut current = data[0];
    let mut len: u32 = 0;
    for &b in data {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    enc.u32(runs.len() as u32);
    for r in runs {
        enc.u32(r);
    }
}

fn decode_mask_rle(d: &mut Dec, rows: usize, cols: usize) -> Result<Mask> {
    let first = d.u8()?;
    if first > 1 {
        return d.fail(format!("mask first bit {first}"));
    }
    let nruns = d.u32()? as usize;
    let mut bits = Vec::with_capacity(rows * cols);
    let mut current = first;
    for _ in 0..nruns {
        let run = d.u32()? as usize;
        bits.extend(std::iter::repeat(current).take(run));
        current ^= 1;
    }
    if bits.len() != rows * cols {
        return d.fail(format!("mask runs cover {} of {} bits", bits.len(), rows * cols));
    }
    Mask::from_raw(rows, cols, bits).map_err(|e| Error::Parse {
        section: d.section,
        reason: e.to_string(),
    })
}

/// Values at active positions (row-major) for masked tensors; dense
/// otherwise.
fn encode_values(enc: &mut Enc, value: &Matrix, mask: Option<&Mask>) {
    match mask {
        Some(m) => {
            for (k, &v) in value.data().iter().enumerate() {
                if m.data()[k] != 0 {
                    enc.f64(v);
                }
            }
        }
        None => {
            for &v in value.data() {
                enc.f64(v);
            }
        }
    }
}

fn decode_values(d: &mut Dec, rows: usize, cols: usize, mask: Option<&Mask>) -> Result<Matrix> {
    let mut m = Matrix::zeros(rows, cols);
    match mask {
        Some(mask) => {
            for k in 0..rows * cols {
                if mask.data()[k] != 0 {
                    m.data_mut()[k] = d.f64()?;
                }
            }
        }
        None => {
            for k in 0..rows * cols {
                m.data_mut()[k] = d.f64()?;
            }
        }
    }
    Ok(m)
}

fn encode_spec(enc: &mut Enc, spec: &CellSpec, output_width: Option<usize>) {
    enc.u8(match spec.kind {
        CellKind::HLstm => 0,
        CellKind::Lstm => 1,
        CellKind::Gru => 2,
    });
    enc.u32(spec.input_width as u32);
    enc.u32(spec.cell_width as u32);
    enc.u8(spec.hidden_layer_widths.len() as u8);
    for &w in &spec.hidden_layer_widths {
        enc.u32(w as u32);
    }
    enc.u32(spec.stack_depth as u32);
    enc.f64(spec.io_dropout);
    enc.f64(spec.hidden_dropout);
    enc.u8(activation_code(spec.internal_activation));
    enc.u32(output_width.unwrap_or(0) as u32);
}

fn decode_spec(d: &mut Dec) -> Result<(CellSpec, Option<usize>)> {
    let kind = match d.u8()? {
        0 => CellKind::HLstm,
        1 => CellKind::Lstm,
        2 => CellKind::Gru,
        k => return d.fail(format!("unknown cell kind {k}")),
    };
    let input_width = d.u32()? as usize;
    let cell_width = d.u32()? as usize;
    let nh = d.u8()? as usize;
    let mut hidden = Vec::with_capacity(nh);
    for _ in 0..nh {
        hidden.push(d.u32()? as usize);
    }
    let stack_depth = d.u32()? as usize;
    let io_dropout = d.f64()?;
    let hidden_dropout = d.f64()?;
    let code = d.u8()?;
    let internal_activation = activation_from(code, d)?;
    let ow = d.u32()? as usize;
    Ok((
        CellSpec {
            kind,
            input_width,
            cell_width,
            hidden_layer_widths: hidden,
            stack_depth,
            io_dropout,
            hidden_dropout,
            internal_activation,
        },
        if ow == 0 { None } else { Some(ow) },
    ))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);

        let push_section = |out: &mut Vec<u8>, id: u8, enc: Enc| {
            out.push(id);
            out.extend_from_slice(&(enc.buf.len() as u64).to_le_bytes());
            out.extend_from_slice(&enc.buf);
        };

        let mut enc = Enc::new();
        encode_spec(&mut enc, &self.model.spec, self.model.output_width);
        push_section(&mut out, 1, enc);

        let mut enc = Enc::new();
        let s = &self.schedule;
        enc.f64(s.alpha);
        enc.f64(s.beta);
        enc.f64(s.seed_sparsity);
        enc.u32(s.growth_epochs);
        enc.u32(s.retrain_epochs_per_prune);
        enc.f64(s.accuracy_threshold);
        enc.u32(s.shift_retrain_epochs);
        enc.u32(s.main_epochs);
        enc.u64(s.batch_size as u64);
        enc.f64(s.early_stop_margin);
        push_section(&mut out, 2, enc);

        let mut enc = Enc::new();
        enc.u32(self.model.params.len() as u32);
        for (_, t) in self.model.params.iter() {
            enc.str(&t.name);
            enc.u32(t.value.rows() as u32);
            enc.u32(t.value.cols() as u32);
            match &t.mask {
                Some(m) => {
                    enc.u8(1);
                    encode_mask_rle(&mut enc, m);
                    encode_values(&mut enc, &t.value, Some(m));
                }
                None => {
                    enc.u8(0);
                    encode_values(&mut enc, &t.value, None);
                }
            }
        }
        push_section(&mut out, 3, enc);

        let mut enc = Enc::new();
        let o = &self.opt;
        enc.u8(match o.kind {
            OptimizerKind::Adam => 0,
            OptimizerKind::NesterovSgd => 1,
        });
        let (lk, base, factor, period) = match o.schedule {
            LrSchedule::Constant { base_lr } => (0u8, base_lr, 1.0, 1u32),
            LrSchedule::StepDecay { base_lr, factor, period } => (1, base_lr, factor, period),
            LrSchedule::PerEpochDecay { base_lr, factor } => (2, base_lr, factor, 1),
        };
        enc.u8(lk);
        enc.f64(base);
        enc.f64(factor);
        enc.u32(period);
        enc.f64(o.weight_decay);
        enc.f64(o.beta1);
        enc.f64(o.beta2);
        enc.f64(o.epsilon);
        enc.f64(o.momentum);
        enc.u64(o.step_count);
        for (id, t) in self.model.params.iter() {
            encode_values(&mut enc, &o.m[id.index()], t.mask.as_ref());
        }
        if o.kind == OptimizerKind::Adam {
            for (id, t) in self.model.params.iter() {
                encode_values(&mut enc, &o.v[id.index()], t.mask.as_ref());
            }
        }
        push_section(&mut out, 4, enc);

        let mut enc = Enc::new();
        let (tag, iter) = match self.phase {
            PhaseTag::Seed => (0u8, 0u32),
            PhaseTag::PostGrowth => (1, 0),
            PhaseTag::PostShift => (2, 0),
            PhaseTag::Trained => (3, 0),
            PhaseTag::PostPruneIter(k) => (4, k),
            PhaseTag::Final => (5, 0),
        };
        enc.u8(tag);
        enc.u32(iter);
        enc.u32(self.global_epoch);
        enc.u64(self.run_seed);
        push_section(&mut out, 5, enc);

        let mut enc = Enc::new();
        enc.bytes(&self.rng.get_seed());
        enc.u128(self.rng.get_word_pos());
        enc.u64(self.rng.get_stream());
        push_section(&mut out, 6, enc);

        let mut enc = Enc::new();
        enc.u32(self.history.len() as u32);
        for r in &self.history {
            let (code, it) = match r.stage {
                Stage::Growth => (0u8, 0u32),
                Stage::ShiftRetrain => (1, 0),
                Stage::Main => (2, 0),
                Stage::PruneRetrain(k) => (3, k),
            };
            enc.u8(code);
            enc.u32(it);
            enc.u32(r.epoch);
            enc.f64(r.loss);
            enc.f64(r.metric);
            enc.f64(r.sparsity);
        }
        push_section(&mut out, 7, enc);

        let mut enc = Enc::new();
        enc.u32(self.trajectory.rows.len() as u32);
        let row = |enc: &mut Enc, r: &TrajRow| {
            enc.str(&r.name);
            enc.f64(r.seed);
            enc.f64(r.post_growth);
            enc.f64(r.post_prune);
        };
        for r in &self.trajectory.rows {
            row(&mut enc, r);
        }
        row(&mut enc, &self.trajectory.total);
        push_section(&mut out, 8, enc);

        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let head = Dec::new(bytes, "header");
        if bytes.len() < 5 {
            return head.fail("file shorter than header");
        }
        if &bytes[..4] != MAGIC {
            return head.fail("bad magic (expected HLGP)");
        }
        if bytes[4] != VERSION {
            return head.fail(format!("unsupported version {}", bytes[4]));
        }
        let mut pos = 5usize;
        let mut section = |id_expect: u8, name: &'static str| -> Result<Dec> {
            let hdr = Dec::new(bytes, name);
            if pos + 9 > bytes.len() {
                return hdr.fail("missing section header");
            }
            let id = bytes[pos];
            if id != id_expect {
                return hdr.fail(format!("expected section id {id_expect}, found {id}"));
            }
            let len = u64::from_le_bytes(bytes[pos + 1..pos + 9].try_into().unwrap()) as usize;
            if pos + 9 + len > bytes.len() {
                return hdr.fail(format!("section truncated: wants {len} bytes"));
            }
            let d = Dec::new(&bytes[pos + 9..pos + 9 + len], name);
            pos += 9 + len;
            Ok(d)
        };

        let mut d = section(1, "SPEC")?;
        let (spec, output_width) = decode_spec(&mut d)?;
        d.done()?;

        let mut d = section(2, "SCHED")?;
        let schedule = GpSchedule {
            alpha: d.f64()?,
            beta: d.f64()?,
            seed_sparsity: d.f64()?,
            growth_epochs: d.u32()?,
            retrain_epochs_per_prune: d.u32()?,
            accuracy_threshold: d.f64()?,
            shift_retrain_epochs: d.u32()?,
            main_epochs: d.u32()?,
            batch_size: d.u64()? as usize,
            early_stop_margin: d.f64()?,
        };
        d.done()?;

        // Rebuild the wiring from the spec, then overwrite every tensor.
        let mut scaffold_rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = CellModel::init(spec, output_width, 0.0, &mut scaffold_rng)
            .map_err(|e| Error::Parse {
                section: "SPEC",
                reason: e.to_string(),
            })?;

        let mut d = section(3, "PARAM")?;
        let count = d.u32()? as usize;
        if count != model.params.len() {
            return d.fail(format!(
                "tensor count {count} does not match spec wiring ({})",
                model.params.len()
            ));
        }
        let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
        for id in &ids {
            let name = d.str()?;
            let rows = d.u32()? as usize;
            let cols = d.u32()? as usize;
            let t = model.params.tensor_mut(*id);
            if t.name != name || t.value.rows() != rows || t.value.cols() != cols {
                return Err(Error::Parse {
                    section: "PARAM",
                    reason: format!(
                        "tensor {}: file has {name} {rows}x{cols}, wiring has {}x{}",
                        t.name,
                        t.value.rows(),
                        t.value.cols()
                    ),
                });
            }
            let masked = d.u8()?;
            if masked == 1 {
                let mask = decode_mask_rle(&mut d, rows, cols)?;
                t.value = decode_values(&mut d, rows, cols, Some(&mask))?;
                t.mask = Some(mask);
            } else {
                t.value = decode_values(&mut d, rows, cols, None)?;
                t.mask = None;
            }
        }
        d.done()?;

        let mut d = section(4, "OPT")?;
        let kind = match d.u8()? {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::NesterovSgd,
            k => return d.fail(format!("unknown optimizer kind {k}")),
        };
        let lk = d.u8()?;
        let base_lr = d.f64()?;
        let factor = d.f64()?;
        let period = d.u32()?;
        let lr = match lk {
            0 => LrSchedule::Constant { base_lr },
            1 => LrSchedule::StepDecay { base_lr, factor, period },
            2 => LrSchedule::PerEpochDecay { base_lr, factor },
            k => return d.fail(format!("unknown lr schedule kind {k}")),
        };
        let mut opt = Optimizer::new(kind, lr, d.f64()?, &model.params);
        opt.beta1 = d.f64()?;
        opt.beta2 = d.f64()?;
        opt.epsilon = d.f64()?;
        opt.momentum = d.f64()?;
        opt.step_count = d.u64()?;
        for (id, t) in model.params.iter() {
            opt.m[id.index()] =
                decode_values(&mut d, t.value.rows(), t.value.cols(), t.mask.as_ref())?;
        }
        if kind == OptimizerKind::Adam {
            for (id, t) in model.params.iter() {
                opt.v[id.index()] =
                    decode_values(&mut d, t.value.rows(), t.value.cols(), t.mask.as_ref())?;
            }
        }
        d.done()?;

        let mut d = section(5, "PHASE")?;
        let tag = d.u8()?;
        let iter = d.u32()?;
        let phase = match tag {
            0 => PhaseTag::Seed,
            1 => PhaseTag::PostGrowth,
            2 => PhaseTag::PostShift,
            3 => PhaseTag::Trained,
            4 => PhaseTag::PostPruneIter(iter),
            5 => PhaseTag::Final,
            k => return d.fail(format!("unknown phase tag {k}")),
        };
        let global_epoch = d.u32()?;
        let run_seed = d.u64()?;
        d.done()?;

        let mut d = section(6, "RNG")?;
        let seed: [u8; 32] = d.take(32)?.try_into().unwrap();
        let word_pos = d.u128()?;
        let stream = d.u64()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        d.done()?;

        let mut d = section(7, "HIST")?;
        let n = d.u32()? as usize;
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            let code = d.u8()?;
            let it = d.u32()?;
            let stage = match code {
                0 => Stage::Growth,
                1 => Stage::ShiftRetrain,
                2 => Stage::Main,
                3 => Stage::PruneRetrain(it),
                k => return d.fail(format!("unknown stage code {k}")),
            };
            history.push(MetricRecord {
                stage,
                epoch: d.u32()?,
                loss: d.f64()?,
                metric: d.f64()?,
                sparsity: d.f64()?,
            });
        }
        d.done()?;

        let mut d = section(8, "TRAJ")?;
        let n = d.u32()? as usize;
        let read_row = |d: &mut Dec| -> Result<TrajRow> {
            Ok(TrajRow {
                name: d.str()?,
                seed: d.f64()?,
                post_growth: d.f64()?,
                post_prune: d.f64()?,
            })
        };
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push(read_row(&mut d)?);
        }
        let total = read_row(&mut d)?;
        d.done()?;

        if pos != bytes.len() {
            return Dec::new(bytes, "trailer").fail(format!("{} trailing bytes", bytes.len() - pos));
        }

        Ok(Checkpoint {
            model,
            opt,
            schedule,
            phase,
            run_seed,
            global_epoch,
            rng,
            history,
            trajectory: Trajectory { rows, total },
        })
    }
}

/// Write a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = ck.to_bytes();
    let tmp = path.with_extension("hlgp.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref())?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;
    use crate::tasks::{Task, TaskCfg, TaskKind};
    use crate::train::{train_epoch, GpSchedule};

    fn demo_task() -> Task {
        Task::generate(TaskCfg {
            kind: TaskKind::Adding { length: 6 },
            n_train: 48,
            n_eval: 16,
            seed: 5,
        })
        .unwrap()
    }

    fn demo_schedule() -> GpSchedule {
        GpSchedule {
            alpha: 0.9,
            beta: 0.2,
            seed_sparsity: 0.4,
            growth_epochs: 1,
            retrain_epochs_per_prune: 2,
            accuracy_threshold: 0.1,
            shift_retrain_epochs: 1,
            main_epochs: 2,
            batch_size: 16,
            early_stop_margin: 0.5,
        }
    }

    fn demo_checkpoint(seed_sparsity: f64) -> Checkpoint {
        let task = demo_task();
        let mut sched = demo_schedule();
        sched.seed_sparsity = seed_sparsity;
        let spec = CellSpec::hlstm(2, 6, vec![6]).with_dropout(0.1, 0.1);
        let mut ck = Checkpoint::init(
            spec,
            sched,
            OptimizerKind::Adam,
            LrSchedule::StepDecay {
                base_lr: 3e-4,
                factor: 0.8,
                period: 6,
            },
            1e-4,
            &task,
            42,
        )
        .unwrap();
        // A couple of epochs so moments, history, and rng state are nontrivial.
        for _ in 0..2 {
            let loss = train_epoch(&mut ck, &task, 3).unwrap();
            ck.history.push(MetricRecord {
                stage: Stage::Main,
                epoch: ck.global_epoch,
                loss,
                metric: loss,
                sparsity: ck.model.total_sparsity(),
            });
        }
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = demo_checkpoint(0.4);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let again = back.to_bytes();
        assert_eq!(bytes, again);
        // Spot-check live state equality beyond byte identity.
        assert_eq!(ck.global_epoch, back.global_epoch);
        assert_eq!(ck.phase, back.phase);
        assert_eq!(ck.rng, back.rng);
        for ((_, a), (_, b)) in ck.model.params.iter().zip(back.model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.mask, b.mask);
        }
        for (a, b) in ck.opt.m.iter().zip(back.opt.m.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn save_load_save_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hlgp");
        let ck = demo_checkpoint(0.4);
        save_checkpoint(&path, &ck).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let path2 = dir.path().join("ck2.hlgp");
        save_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_names_failing_section() {
        let ck = demo_checkpoint(0.4);
        let bytes = ck.to_bytes();
        let cut = Checkpoint::from_bytes(&bytes[..bytes.len() / 2]);
        match cut {
            Err(Error::Parse { section, .. }) => {
                assert!(!section.is_empty());
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let ck = demo_checkpoint(0.4);
        let mut bytes = ck.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Parse { section: "header", .. })
        ));
    }

    #[test]
    fn sparse_checkpoint_much_smaller_than_dense() {
        // Same architecture at 94% and 0% sparsity; the sparse file must be
        // at least 5x smaller.
        let task = demo_task();
        let spec = CellSpec::hlstm(2, 48, vec![48]).with_dropout(0.0, 0.0);
        let mut sched = demo_schedule();
        sched.seed_sparsity = 0.94;
        let sparse = Checkpoint::init(
            spec.clone(),
            sched,
            OptimizerKind::Adam,
            LrSchedule::Constant { base_lr: 1e-3 },
            0.0,
            &task,
            7,
        )
        .unwrap();
        let mut sched = demo_schedule();
        sched.seed_sparsity = 0.0;
        let dense = Checkpoint::init(
            spec,
            sched,
            OptimizerKind::Adam,
            LrSchedule::Constant { base_lr: 1e-3 },
            0.0,
            &task,
            7,
        )
        .unwrap();
        let s = sparse.to_bytes().len() as f64;
        let d = dense.to_bytes().len() as f64;
        assert!(d / s >= 5.0, "dense {d} bytes vs sparse {s} bytes");
    }
}
