//! Acceptance suite. Each test covers one numbered criterion and prints a
//! PASS line (run with `--nocapture` to see them); a failed assertion is the
//! FAIL signal.

use hlstm::cells::{CellModel, CellSpec, Mode};
use hlstm::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use hlstm::metrics::{count_flops, count_params, size_report};
use hlstm::optim::{LrSchedule, Optimizer, OptimizerKind};
use hlstm::params::GradStore;
use hlstm::sparsity::{grow, prune_step, Mask, PruneOutcome};
use hlstm::tape::{Activation, Tape};
use hlstm::tasks::{Split, Task, TaskCfg, TaskKind};
use hlstm::tensor::Matrix;
use hlstm::train::{self, GpSchedule, NullSink, PhaseTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::LazyLock;

fn pass(n: u32, what: &str) {
    println!("acceptance criterion {n}: PASS — {what}");
}

// ---------------------------------------------------------------------
// Criterion 1: closed-form size accounting reproduces the reference
// counts exactly.
// ---------------------------------------------------------------------

#[test]
fn criterion_1_size_accounting() {
    assert_eq!(count_params(&CellSpec::lstm(512, 512)), 2_099_200);
    assert_eq!(count_params(&CellSpec::lstm(512, 512).with_stack(2)), 4_198_400);
    assert_eq!(count_params(&CellSpec::lstm(512, 512).with_stack(3)), 6_297_600);
    assert_eq!(count_params(&CellSpec::hlstm(512, 512, vec![512])), 3_149_824);
    assert_eq!(count_params(&CellSpec::hlstm(512, 320, vec![320])), 1_477_120);
    let lstm1 = count_params(&CellSpec::lstm(512, 512)) as f64;
    let gru4 = count_params(&CellSpec::gru(512, 512).with_stack(4)) as f64;
    let lstm4 = count_params(&CellSpec::lstm(512, 512).with_stack(4)) as f64;
    assert_eq!(gru4 / lstm1, 3.0);
    assert_eq!(lstm4 / lstm1, 4.0);
    pass(1, "2,099,200 / 4.2M / 6.3M / 3,149,824 / 1,477,120 and GRU 3.0 vs LSTM 4.0");
}

// ---------------------------------------------------------------------
// Criterion 2: FLOPs = 2 x params, exactly.
// ---------------------------------------------------------------------

#[test]
fn criterion_2_flops_convention() {
    assert_eq!(count_flops(2_099_200), 4_198_400);
    assert_eq!(count_flops(4_198_400), 8_396_800);
    assert_eq!(count_flops(6_297_600), 12_595_200);
    pass(2, "2.1M->4.2M, 4.2M->8.4M, 6.3M->12.6M");
}

// ---------------------------------------------------------------------
// Criterion 3: analytic gradients of a 3-step unrolled squared-error
// loss match central finite differences on >= 100 random H-LSTM
// configurations.
// ---------------------------------------------------------------------

/// Loss of a 3-step eval-mode unroll with per-step squared error.
fn unrolled_loss(model: &CellModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Tape, hlstm::tape::NodeId) {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let roll = model.unroll(&mut tape, inputs, Mode::Eval, &mut rng).unwrap();
    let mut terms = Vec::new();
    for (out, t) in roll.outputs.iter().zip(targets.iter()) {
        terms.push(tape.squared_error(*out, t).unwrap());
    }
    let loss = tape.mean(&terms).unwrap();
    let v = tape.scalar(loss).unwrap();
    (v, tape, loss)
}

/// Finite differences are only a valid oracle away from ReLU kinks; reject
/// configurations whose hidden pre-activations come within `margin` of zero.
fn min_hidden_preact(model: &CellModel, inputs: &[Vec<f64>]) -> f64 {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let roll = model.unroll(&mut tape, inputs, Mode::Eval, &mut rng).unwrap();
    roll.hidden_probe
        .iter()
        .flat_map(|p| tape.value(p.pre).iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_3_gradient_correctness() {
    let mut master = ChaCha8Rng::seed_from_u64(0x6AD5);
    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    let mut checked_params = 0usize;
    for case in 0..100 {
        // Resample until the configuration is kink-free for finite
        // differencing.
        let (model, inputs, targets) = loop {
            let input_w = master.random_range(2..=8);
            let cell_w = master.random_range(2..=8);
            let n_hidden = master.random_range(0..=2);
            let hidden: Vec<usize> = (0..n_hidden).map(|_| master.random_range(2..=8)).collect();
            let act = if master.random::<bool>() { Activation::Relu } else { Activation::LeakyRelu };
            let sparsity = if case % 2 == 0 { 0.0 } else { 0.3 };
            let spec = CellSpec {
                internal_activation: act,
                ..CellSpec::hlstm(input_w, cell_w, hidden).with_dropout(0.0, 0.0)
            };
            let model = CellModel::init(spec, None, sparsity, &mut master).unwrap();
            let inputs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..input_w).map(|_| master.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let targets: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..cell_w).map(|_| master.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            if min_hidden_preact(&model, &inputs) > 1e-3 {
                break (model, inputs, targets);
            }
        };

        let mut grads = GradStore::zeros_like(&model.params);
        {
            let (_, tape, loss) = unrolled_loss(&model, &inputs, &targets);
            tape.backward(&model.params, loss, &mut grads).unwrap();
        }

        for (id, t) in model.params.iter() {
            for k in 0..t.value.len() {
                // Dormant entries: finite differences with the mask bit
                // forced on (the stored weight is 0 either way).
                let mut plus = model.clone();
                let mut minus = model.clone();
                for side in [&mut plus, &mut minus] {
                    if let Some(m) = side.params.tensor_mut(id).mask.as_mut() {
                        m.set(k / t.value.cols(), k % t.value.cols(), true);
                    }
                }
                plus.params.tensor_mut(id).value.data_mut()[k] += eps;
                minus.params.tensor_mut(id).value.data_mut()[k] -= eps;
                let fd = (unrolled_loss(&plus, &inputs, &targets).0
                    - unrolled_loss(&minus, &inputs, &targets).0)
                    / (2.0 * eps);
                let a = grads.grad(id).data()[k];
                let rel = (a - fd).abs() / f64::max(1e-3, f64::max(a.abs(), fd.abs()));
                assert!(
                    rel < 1e-5,
                    "case {case} tensor {} entry {k}: analytic {a} vs fd {fd} (rel {rel})",
                    t.name
                );
                max_rel = max_rel.max(rel);
                checked_params += 1;
            }
        }
    }
    pass(
        3,
        &format!("100 configs, {checked_params} parameters, max relative error {max_rel:.2e} < 1e-5"),
    );
}

// ---------------------------------------------------------------------
// Criterion 4: grow / prune selections equal an independent sort-based
// oracle on 1000 random instances, ties included.
// ---------------------------------------------------------------------

fn grow_oracle(mask: &Mask, grads: &Matrix, alpha: f64) -> Vec<(usize, usize)> {
    // Brute force: sort all |g|, take the ceil(alpha*N)-th smallest as the
    // threshold, then scan dormant entries strictly above it.
    let mut mags: Vec<f64> = grads.data().iter().map(|g| g.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let rank = ((alpha * mags.len() as f64).ceil() as usize).max(1);
    let threshold = mags[rank - 1];
    let mut out = Vec::new();
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            if !mask.is_active(r, c) && grads[(r, c)].abs() > threshold {
                out.push((r, c));
            }
        }
    }
    out
}

fn prune_oracle(w: &Matrix, mask: &Mask, beta: f64) -> Vec<(usize, usize)> {
    let mut active: Vec<(usize, usize)> = Vec::new();
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            if mask.is_active(r, c) {
                active.push((r, c));
            }
        }
    }
    let k = (beta * active.len() as f64).floor() as usize;
    active.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    let mut out: Vec<_> = active.into_iter().take(k).collect();
    out.sort();
    out
}

#[test]
fn criterion_4_policy_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut tie_cases = 0usize;
    for i in 0..1000 {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=8);
        // Half the instances draw from a coarse grid to force ties.
        let coarse = i % 2 == 1;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if coarse {
                (rng.random_range(0..4) as f64) * 0.25
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            }
        };
        let mut weights = Matrix::zeros(rows, cols);
        let mut grads = Matrix::zeros(rows, cols);
        let mut mask = Mask::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                grads[(r, c)] = draw(&mut rng);
                if rng.random::<f64>() < 0.6 {
                    mask.set(r, c, true);
                    weights[(r, c)] = draw(&mut rng);
                }
            }
        }
        let alpha: f64 = rng.random_range(0.05..=1.0);
        let beta: f64 = rng.random_range(0.05..0.95);
        if coarse {
            tie_cases += 1;
        }

        // Growth.
        let expect = grow_oracle(&mask, &grads, alpha);
        let mut w2 = weights.clone();
        let mut m2 = mask.clone();
        let got = grow(&mut w2, &mut m2, &grads, alpha).unwrap();
        assert_eq!(got, expect, "grow mismatch on instance {i}");

        // Pruning applies to the post-growth state.
        let expect = prune_oracle(&w2, &m2, beta);
        let before = m2.clone();
        let out = prune_step(&mut w2, &mut m2, beta).unwrap();
        let mut got = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if before.is_active(r, c) && !m2.is_active(r, c) {
                    got.push((r, c));
                }
            }
        }
        assert_eq!(got, expect, "prune mismatch on instance {i}");
        if let PruneOutcome::Pruned(k) = out {
            assert_eq!(k, expect.len());
        }
    }
    pass(4, &format!("1000 instances ({tie_cases} tie-heavy) match the sort oracle exactly"));
}

// ---------------------------------------------------------------------
// Criterion 5: mask hygiene through long optimizer runs; forward output
// invariant to corrupting dormant weights.
// ---------------------------------------------------------------------

#[test]
fn criterion_5_mask_hygiene() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4151);
    let spec = CellSpec::hlstm(3, 8, vec![8]).with_dropout(0.0, 0.0);
    for kind in [OptimizerKind::Adam, OptimizerKind::NesterovSgd] {
        let mut model = CellModel::init(spec.clone(), Some(2), 0.5, &mut rng).unwrap();
        let mut opt = Optimizer::new(kind, LrSchedule::Constant { base_lr: 3e-3 }, 1e-4, &model.params);
        for step in 0..100 {
            // Random losses: fresh random input and target every step.
            let inputs: Vec<Vec<f64>> =
                (0..4).map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
            let target: Vec<f64> = (0..2).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut grads = GradStore::zeros_like(&model.params);
            let mut tape = Tape::new();
            let mut r0 = ChaCha8Rng::seed_from_u64(step);
            let roll = model.unroll(&mut tape, &inputs, Mode::Eval, &mut r0).unwrap();
            let pred = model.readout(&mut tape, *roll.outputs.last().unwrap()).unwrap();
            let loss = tape.squared_error(pred, &target).unwrap();
            tape.backward(&model.params, loss, &mut grads).unwrap();
            opt.step(&mut model.params, &grads, 0).unwrap();
        }
        for (_, t) in model.params.iter() {
            let Some(mask) = &t.mask else { continue };
            for k in 0..t.value.len() {
                if mask.data()[k] == 0 {
                    assert_eq!(t.value.data()[k], 0.0, "{} entry {k} drifted ({kind:?})", t.name);
                }
            }
        }

        // Corrupt every dormant weight, forward unchanged; then re-mask and
        // confirm storage returns to exact zeros.
        let inputs: Vec<Vec<f64>> = (0..4).map(|_| vec![0.3, -0.1, 0.7]).collect();
        let forward = |m: &CellModel| {
            let mut tape = Tape::new();
            let mut r0 = ChaCha8Rng::seed_from_u64(0);
            let roll = m.unroll(&mut tape, &inputs, Mode::Eval, &mut r0).unwrap();
            roll.outputs
                .iter()
                .flat_map(|&o| tape.value(o).iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        let clean = forward(&model);
        let mut corrupted = model.clone();
        for (_, t) in corrupted.params.iter_mut() {
            let Some(mask) = t.mask.clone() else { continue };
            for k in 0..t.value.len() {
                if mask.data()[k] == 0 {
                    t.value.data_mut()[k] = 1e6;
                }
            }
        }
        assert_eq!(clean, forward(&corrupted), "dormant corruption leaked into forward");
        corrupted.params.remask();
        for (_, t) in corrupted.params.iter() {
            let Some(mask) = &t.mask else { continue };
            for k in 0..t.value.len() {
                if mask.data()[k] == 0 {
                    assert_eq!(t.value.data()[k], 0.0);
                }
            }
        }
    }
    pass(5, "dormant weights exactly 0.0 after 100 Adam and 100 Nesterov steps; forward corruption-proof");
}

// ---------------------------------------------------------------------
// Criteria 6 and 7 share the desk-scale pipeline fixture: the adding
// problem at length 30, width-32 H-LSTM with one hidden layer per gate.
// ---------------------------------------------------------------------

const GP_SEEDS: [u64; 3] = [1, 2, 4];

fn desk_task(seed: u64) -> Task {
    Task::generate(TaskCfg {
        kind: TaskKind::Adding { length: 30 },
        n_train: 1024,
        n_eval: 256,
        seed,
    })
    .unwrap()
}

fn desk_schedule(growth_epochs: u32) -> GpSchedule {
    GpSchedule {
        alpha: 0.9,
        beta: 0.2,
        seed_sparsity: 0.5,
        growth_epochs,
        retrain_epochs_per_prune: 16,
        accuracy_threshold: 0.05,
        shift_retrain_epochs: 3,
        main_epochs: 40,
        batch_size: 32,
        early_stop_margin: 0.0,
    }
}

fn desk_run(seed: u64, growth_epochs: u32) -> Checkpoint {
    let task = desk_task(seed);
    let spec = CellSpec::hlstm(2, 32, vec![32]).with_dropout(0.0, 0.0);
    train::gp_pipeline(
        spec,
        desk_schedule(growth_epochs),
        OptimizerKind::Adam,
        LrSchedule::Constant { base_lr: 5e-3 },
        0.0,
        &task,
        seed,
        &mut NullSink,
    )
    .unwrap()
}

static GP_RUNS: LazyLock<Vec<Checkpoint>> =
    LazyLock::new(|| GP_SEEDS.iter().map(|&s| desk_run(s, 3)).collect());

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn criterion_6_gp_pipeline_desk_scale() {
    let runs = &*GP_RUNS;
    let mut metrics = Vec::new();
    let mut sparsities = Vec::new();
    let mut post_growth = Vec::new();
    for (seed, ck) in GP_SEEDS.iter().zip(runs.iter()) {
        let task = desk_task(*seed);
        let metric = task.evaluate(&ck.model, Split::Eval).unwrap();
        metrics.push(metric);
        sparsities.push(ck.model.total_sparsity());
        post_growth.push(ck.trajectory.total.post_growth);
        println!(
            "  seed {seed}: mse {metric:.4}, sparsity {:.2}%, post-growth {:.2}%",
            ck.model.total_sparsity() * 100.0,
            ck.trajectory.total.post_growth * 100.0
        );
    }
    assert!(median(metrics.clone()) <= 0.05, "median MSE {}", median(metrics));
    assert!(
        median(sparsities.clone()) >= 0.80,
        "median final sparsity {}",
        median(sparsities)
    );
    assert!(
        median(post_growth.clone()) < 0.50,
        "median post-growth sparsity {}",
        median(post_growth)
    );
    pass(
        6,
        &format!(
            "median MSE {:.4} <= 0.05, median sparsity {:.1}% >= 80%, post-growth {:.1}% < 50%",
            median(metrics),
            median(sparsities) * 100.0,
            median(post_growth) * 100.0
        ),
    );
}

#[test]
fn criterion_7_gp_no_worse_than_prune_only() {
    // Pruning-only: the identical setup with the growth phase disabled.
    let gp_active: Vec<f64> = GP_RUNS
        .iter()
        .map(|ck| size_report(&ck.model).active_total() as f64)
        .collect();
    let po_active: Vec<f64> = GP_SEEDS
        .iter()
        .map(|&s| {
            let ck = desk_run(s, 0);
            size_report(&ck.model).active_total() as f64
        })
        .collect();
    println!("  gp active {gp_active:?} vs prune-only active {po_active:?}");
    assert!(
        median(gp_active.clone()) <= median(po_active.clone()),
        "gp median {} vs prune-only median {}",
        median(gp_active),
        median(po_active)
    );
    pass(
        7,
        &format!(
            "median active params: gp {} <= prune-only {}",
            median(gp_active),
            median(po_active)
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 8: single H-LSTM vs stacked 2-layer LSTM at matched dense
// budgets on the copy task.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_cell_quality_on_copy_task() {
    let hl_spec = CellSpec::hlstm(10, 16, vec![16]).with_dropout(0.0, 0.0);
    let lstm_spec = CellSpec::lstm(10, 13).with_stack(2).with_dropout(0.0, 0.0);
    let hl_budget = count_params(&hl_spec) as f64;
    let lstm_budget = count_params(&lstm_spec) as f64;
    assert!(
        (hl_budget - lstm_budget).abs() / lstm_budget <= 0.10,
        "budgets {hl_budget} vs {lstm_budget} differ beyond 10%"
    );

    let epochs = 30;
    let train_one = |spec: &CellSpec, seed: u64| -> f64 {
        let task = Task::generate(TaskCfg {
            kind: TaskKind::Copy {
                payload_len: 5,
                blank_len: 10,
                vocab: 8,
            },
            n_train: 512,
            n_eval: 128,
            seed,
        })
        .unwrap();
        let schedule = GpSchedule {
            alpha: 0.9,
            beta: 0.2,
            seed_sparsity: 0.0,
            growth_epochs: 0,
            retrain_epochs_per_prune: 1,
            accuracy_threshold: 1.0,
            shift_retrain_epochs: 0,
            main_epochs: epochs,
            batch_size: 32,
            early_stop_margin: 0.0,
        };
        let mut ck = Checkpoint::init(
            spec.clone(),
            schedule,
            OptimizerKind::Adam,
            LrSchedule::Constant { base_lr: 5e-3 },
            0.0,
            &task,
            seed,
        )
        .unwrap();
        train::main_phase(&mut ck, &task, &mut NullSink, Some(epochs)).unwrap();
        task.evaluate(&ck.model, Split::Eval).unwrap()
    };

    let seeds = [1u64, 2, 3, 4, 5];
    let hl: Vec<f64> = seeds.iter().map(|&s| train_one(&hl_spec, s)).collect();
    let ls: Vec<f64> = seeds.iter().map(|&s| train_one(&lstm_spec, s)).collect();
    println!("  hlstm accuracies {hl:?}");
    println!("  lstm  accuracies {ls:?}");
    let (mh, ml) = (median(hl), median(ls));
    assert!(mh >= ml, "median accuracy: hlstm {mh} < stacked lstm {ml}");
    pass(8, &format!("median copy accuracy: hlstm {mh:.3} >= stacked lstm {ml:.3}"));
}

// ---------------------------------------------------------------------
// Criterion 9: checkpoint round-trips are bit-exact and a resumed run
// finishes bit-identical to an uninterrupted one.
// ---------------------------------------------------------------------

#[test]
fn criterion_9_checkpoint_roundtrip_and_resume() {
    let task = Task::generate(TaskCfg {
        kind: TaskKind::Adding { length: 8 },
        n_train: 96,
        n_eval: 48,
        seed: 77,
    })
    .unwrap();
    let schedule = GpSchedule {
        alpha: 0.9,
        beta: 0.2,
        seed_sparsity: 0.5,
        growth_epochs: 2,
        retrain_epochs_per_prune: 3,
        accuracy_threshold: 0.25,
        shift_retrain_epochs: 1,
        main_epochs: 6,
        batch_size: 16,
        early_stop_margin: 0.0,
    };
    let spec = CellSpec::hlstm(2, 8, vec![8]).with_dropout(0.2, 0.1);
    let fresh = || {
        Checkpoint::init(
            spec.clone(),
            schedule,
            OptimizerKind::Adam,
            LrSchedule::Constant { base_lr: 5e-3 },
            0.0,
            &task,
            123,
        )
        .unwrap()
    };

    // Uninterrupted run, capturing every phase checkpoint as bytes.
    let mut ck = fresh();
    let mut snapshots: Vec<(PhaseTag, Vec<u8>)> = Vec::new();
    train::run_to_final(&mut ck, &task, &mut NullSink, |c| {
        snapshots.push((c.phase, c.to_bytes()));
        Ok(())
    })
    .unwrap();
    let final_bytes = ck.to_bytes();

    // save/load/save bit-identity through disk.
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.hlgp");
    let p2 = dir.path().join("b.hlgp");
    save_checkpoint(&p1, &ck).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    // Resume from a mid-phase snapshot (a committed prune iteration when one
    // exists, otherwise post-shift) through a disk round-trip.
    let mid = snapshots
        .iter()
        .find(|(p, _)| matches!(p, PhaseTag::PostPruneIter(_)))
        .or_else(|| snapshots.iter().find(|(p, _)| *p == PhaseTag::PostShift))
        .expect("mid-phase snapshot");
    let pm = dir.path().join("mid.hlgp");
    std::fs::write(&pm, &mid.1).unwrap();
    let mut resumed = load_checkpoint(&pm).unwrap();
    train::run_to_final(&mut resumed, &task, &mut NullSink, |_| Ok(())).unwrap();
    assert_eq!(
        final_bytes,
        resumed.to_bytes(),
        "resumed final differs from uninterrupted final"
    );
    pass(9, &format!("round-trip bit-exact; resume from {:?} reproduces the final bit-identically", mid.0));
}

// ---------------------------------------------------------------------
// Criterion 10: activation shift.
// ---------------------------------------------------------------------

#[test]
fn criterion_10_activation_shift() {
    // (a) With all-nonnegative hidden preactivations the swap is a forward
    // no-op: force nonnegative weights, biases, and inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x51F7);
    let spec = CellSpec::hlstm(2, 4, vec![4]).with_dropout(0.0, 0.0);
    let mut model = CellModel::init(spec, None, 0.0, &mut rng).unwrap();
    for (_, t) in model.params.iter_mut() {
        for v in t.value.data_mut() {
            *v = v.abs();
        }
    }
    let inputs: Vec<Vec<f64>> = (0..4).map(|t| vec![0.2 + 0.1 * t as f64, 0.4]).collect();
    let forward = |m: &CellModel| {
        let mut tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let roll = m.unroll(&mut tape, &inputs, Mode::Eval, &mut r).unwrap();
        // Every hidden preactivation really is nonnegative in this setup.
        for p in &roll.hidden_probe {
            assert!(tape.value(p.pre).iter().all(|&z| z >= 0.0));
        }
        roll.outputs
            .iter()
            .flat_map(|&o| tape.value(o).iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>()
    };
    let before = forward(&model);
    assert!(train::activation_shift(&mut model));
    assert_eq!(before, forward(&model), "swap changed a nonnegative-preactivation forward");

    // (b) Negative preactivations do change: -3 maps to -0.03 before and 0
    // after, weights untouched.
    assert_eq!(Activation::LeakyRelu.apply(-3.0), -0.03);
    assert_eq!(Activation::Relu.apply(-3.0), 0.0);

    // (c) Desk-scale: swap + retrain recovers the toy-task metric to within
    // 5% of the pre-swap metric.
    let task = Task::generate(TaskCfg {
        kind: TaskKind::Adding { length: 10 },
        n_train: 256,
        n_eval: 128,
        seed: 9,
    })
    .unwrap();
    let schedule = GpSchedule {
        alpha: 0.9,
        beta: 0.2,
        seed_sparsity: 0.0,
        growth_epochs: 0,
        retrain_epochs_per_prune: 1,
        accuracy_threshold: 0.05,
        shift_retrain_epochs: 5,
        main_epochs: 20,
        batch_size: 32,
        early_stop_margin: 0.0,
    };
    let spec = CellSpec::hlstm(2, 16, vec![16]).with_dropout(0.0, 0.0);
    let mut ck = Checkpoint::init(
        spec,
        schedule,
        OptimizerKind::Adam,
        LrSchedule::Constant { base_lr: 5e-3 },
        0.0,
        &task,
        31,
    )
    .unwrap();
    train::main_phase(&mut ck, &task, &mut NullSink, None).unwrap();
    let pre = task.evaluate(&ck.model, Split::Eval).unwrap();
    train::shift_phase(&mut ck, &task, &mut NullSink).unwrap();
    assert_eq!(ck.model.spec.internal_activation, Activation::Relu);
    let post = task.evaluate(&ck.model, Split::Eval).unwrap();
    println!("  pre-shift mse {pre:.5}, post-shift-retrain mse {post:.5}");
    assert!(
        post <= pre * 1.05,
        "post-shift metric {post} not within 5% of pre-shift {pre}"
    );
    pass(10, &format!("swap exact on nonnegative preactivations; retrained mse {post:.4} within 5% of {pre:.4}"));
}
