//! `hlstm` — train, grow, prune, and inspect sparse hidden-layer LSTMs.
//!
//! Mutating commands own their output directory exclusively (a `.lock` file
//! guards it), write checkpoints atomically, and clean up anything they
//! created if they fail, so an aborted command leaves the directory as it
//! found it. `report` and `eval` are read-only and take no lock.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use hlstm::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use hlstm::metrics::size_report;
use hlstm::train::{self, EventSink, JsonlSink, PhaseTag, TrainEvent};
use hlstm::{RunConfig, Split, Task};
use serde_json::json;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "hlstm",
    about = "Grow-and-prune training for hidden-layer LSTMs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seed checkpoint (random sparse architecture) from a config.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full grow-and-prune pipeline, checkpointing every phase.
    Gp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a phase checkpoint instead of a fresh seed.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Plain training epochs on a checkpoint (no growth, no pruning).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Starting checkpoint; a fresh seed is created when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        epochs: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient-based growth phase on a checkpoint.
    Grow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the iterative prune/retrain loop on a checkpoint.
    Prune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a task split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to run.toml next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        split: String,
    },
    /// Print the size report and sparsity trajectory of a checkpoint.
    Report {
        ckpt: PathBuf,
        /// Machine-readable rows instead of aligned tables.
        #[arg(long)]
        json: bool,
    },
    /// Export weights and masks as documented portable JSON.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exclusive ownership of an output directory: lock file on entry, removal
/// of everything this run created if it fails.
struct OutputDir {
    dir: PathBuf,
    lock: PathBuf,
    created: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    fn acquire(dir: &Path) -> Result<OutputDir> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let lock = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "output directory {} is locked by another process (remove {} if stale)",
                    dir.display(),
                    lock.display()
                );
            }
            Err(e) => return Err(e).context("creating lock file"),
        }
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            lock,
            created: Vec::new(),
            committed: false,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save_ckpt(&mut self, name: &str, ck: &Checkpoint) -> Result<PathBuf> {
        let path = self.path(name);
        let fresh = !path.exists();
        save_checkpoint(&path, ck).with_context(|| format!("writing {}", path.display()))?;
        if fresh {
            self.created.push(path.clone());
        }
        Ok(path)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let fresh = !path.exists();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        if fresh {
            self.created.push(path.clone());
        }
        Ok(path)
    }

    fn event_log(&mut self, name: &str) -> Result<JsonlSink<BufWriter<File>>> {
        let path = self.path(name);
        if !path.exists() {
            self.created.push(path.clone());
        }
        let f = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JsonlSink::new(BufWriter::new(f)))
    }

    fn commit(mut self) {
        self.committed = true;
        let _ = fs::remove_file(&self.lock);
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.created {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&self.lock);
        }
    }
}

fn resolve_ckpt_path(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let with_ext = path.with_extension("hlgp");
    if with_ext.exists() {
        with_ext
    } else {
        path.to_path_buf()
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    Ok(RunConfig::from_toml_str(&text)?)
}

fn load(path: &Path) -> Result<Checkpoint> {
    let path = resolve_ckpt_path(path);
    load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn seed_checkpoint(cfg: &RunConfig, task: &Task) -> Result<Checkpoint> {
    let spec = cfg.cell_spec(task)?;
    Ok(Checkpoint::init(
        spec,
        cfg.schedule()?,
        cfg.optimizer_kind()?,
        cfg.lr_schedule()?,
        cfg.optimizer.weight_decay,
        task,
        cfg.seed,
    )?)
}

fn phase_filename(phase: PhaseTag) -> String {
    match phase {
        PhaseTag::PostPruneIter(k) => format!("post_prune_iter_{k:03}.hlgp"),
        other => format!("{}.hlgp", other.label().replace('-', "_")),
    }
}

fn split_from_str(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "eval" => Ok(Split::Eval),
        other => Err(anyhow!("unknown split '{other}' (expected train or eval)")),
    }
}

fn cmd_init(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let task = cfg.generate_task()?;
    let ck = seed_checkpoint(&cfg, &task)?;
    let mut dir = OutputDir::acquire(out)?;
    dir.write_text("run.toml", &cfg.to_toml_string()?)?;
    let path = dir.save_ckpt("seed.hlgp", &ck)?;
    dir.commit();
    println!(
        "seed checkpoint {} (sparsity {:.2}%)",
        path.display(),
        ck.model.total_sparsity() * 100.0
    );
    Ok(())
}

fn cmd_gp(config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let task = cfg.generate_task()?;
    let mut dir = OutputDir::acquire(out)?;
    dir.write_text("run.toml", &cfg.to_toml_string()?)?;
    let mut sink = dir.event_log("events.jsonl")?;
    let mut ck = match resume {
        Some(path) => {
            let ck = load(path)?;
            if ck.phase == PhaseTag::Final {
                bail!("checkpoint {} is already final", path.display());
            }
            ck
        }
        None => {
            let ck = seed_checkpoint(&cfg, &task)?;
            sink.emit(&TrainEvent {
                phase: "seed".into(),
                epoch: 0,
                loss: None,
                metric: None,
                sparsity: ck.model.total_sparsity(),
            });
            ck
        }
    };
    if resume.is_none() {
        dir.save_ckpt("seed.hlgp", &ck)?;
    }
    while ck.phase != PhaseTag::Final {
        train::advance(&mut ck, &task, &mut sink)?;
        dir.save_ckpt(&phase_filename(ck.phase), &ck)?;
    }
    let final_path = dir.save_ckpt("final.hlgp", &ck)?;
    dir.commit();
    let metric = task.evaluate(&ck.model, Split::Eval)?;
    println!("final checkpoint {}", final_path.display());
    println!(
        "eval metric {metric} | total sparsity {:.2}% | epochs {}",
        ck.model.total_sparsity() * 100.0,
        ck.global_epoch
    );
    print!("{}", ck.trajectory.render());
    Ok(())
}

fn cmd_train(config: &Path, ckpt: Option<&Path>, epochs: u32, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let task = cfg.generate_task()?;
    let mut ck = match ckpt {
        Some(p) => load(p)?,
        None => seed_checkpoint(&cfg, &task)?,
    };
    let mut dir = OutputDir::acquire(out)?;
    dir.write_text("run.toml", &cfg.to_toml_string()?)?;
    let mut sink = dir.event_log("events.jsonl")?;
    train::main_phase(&mut ck, &task, &mut sink, Some(epochs))?;
    let path = dir.save_ckpt("trained.hlgp", &ck)?;
    dir.commit();
    let metric = task.evaluate(&ck.model, Split::Eval)?;
    println!("trained checkpoint {} | eval metric {metric}", path.display());
    Ok(())
}

fn cmd_grow(config: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let task = cfg.generate_task()?;
    let mut ck = load(ckpt)?;
    let mut dir = OutputDir::acquire(out)?;
    dir.write_text("run.toml", &cfg.to_toml_string()?)?;
    let mut sink = dir.event_log("events.jsonl")?;
    let before = ck.model.total_sparsity();
    train::growth_phase(&mut ck, &task, &mut sink)?;
    let path = dir.save_ckpt("post_growth.hlgp", &ck)?;
    dir.commit();
    println!(
        "growth {} -> {:.2}% sparsity (was {:.2}%)",
        path.display(),
        ck.model.total_sparsity() * 100.0,
        before * 100.0
    );
    Ok(())
}

fn cmd_prune(config: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let task = cfg.generate_task()?;
    let mut ck = load(ckpt)?;
    let mut dir = OutputDir::acquire(out)?;
    dir.write_text("run.toml", &cfg.to_toml_string()?)?;
    let mut sink = dir.event_log("events.jsonl")?;
    train::prune_phase(&mut ck, &task, &mut sink)?;
    let path = dir.save_ckpt("final.hlgp", &ck)?;
    dir.commit();
    let metric = task.evaluate(&ck.model, Split::Eval)?;
    println!(
        "pruned checkpoint {} | eval metric {metric} | sparsity {:.2}%",
        path.display(),
        ck.model.total_sparsity() * 100.0
    );
    Ok(())
}

fn cmd_eval(ckpt: &Path, config: Option<&Path>, split: &str) -> Result<()> {
    let ck_path = resolve_ckpt_path(ckpt);
    let ck = load(&ck_path)?;
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => {
            let sibling = ck_path
                .parent()
                .map(|d| d.join("run.toml"))
                .filter(|p| p.exists());
            sibling.ok_or_else(|| {
                anyhow!("no --config given and no run.toml next to the checkpoint")
            })?
        }
    };
    let cfg = load_config(&cfg_path)?;
    let task = cfg.generate_task()?;
    let split = split_from_str(split)?;
    let metric = task.evaluate(&ck.model, split)?;
    let kind = format!("{:?}", task.metric_kind()).to_lowercase();
    println!(
        "split={} metric_kind={kind} value={metric}",
        if split == Split::Train { "train" } else { "eval" }
    );
    Ok(())
}

fn cmd_report(ckpt: &Path, json: bool) -> Result<()> {
    let ck = load(ckpt)?;
    let report = size_report(&ck.model);
    if json {
        let rows: Vec<_> = ck
            .trajectory
            .rows
            .iter()
            .chain(std::iter::once(&ck.trajectory.total))
            .map(|r| {
                json!({
                    "layer": r.name,
                    "seed_sparsity": nan_null(r.seed),
                    "post_growth_sparsity": nan_null(r.post_growth),
                    "post_prune_sparsity": nan_null(r.post_prune),
                })
            })
            .collect();
        let doc = json!({
            "phase": ck.phase.label(),
            "global_epoch": ck.global_epoch,
            "dense_params": report.dense_total(),
            "active_params": report.active_total(),
            "flops": report.flops(),
            "compression_ratio": report.compression_ratio(),
            "layers": report.layers,
            "sparsity_trajectory": rows,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!("phase: {} | epochs: {}", ck.phase.label(), ck.global_epoch);
        println!();
        print!("{}", report.render());
        println!();
        print!("{}", ck.trajectory.render());
    }
    Ok(())
}

fn nan_null(v: f64) -> serde_json::Value {
    if v.is_nan() {
        serde_json::Value::Null
    } else {
        json!(v)
    }
}

fn cmd_export(ckpt: &Path, out: &Path) -> Result<()> {
    let ck = load(ckpt)?;
    let tensors: Vec<_> = ck
        .model
        .params
        .iter()
        .map(|(_, t)| match &t.mask {
            Some(mask) => {
                let active: Vec<_> = (0..t.value.rows())
                    .flat_map(|r| (0..t.value.cols()).map(move |c| (r, c)))
                    .filter(|&(r, c)| mask.is_active(r, c))
                    .map(|(r, c)| json!([r, c, t.value[(r, c)]]))
                    .collect();
                json!({
                    "name": t.name,
                    "rows": t.value.rows(),
                    "cols": t.value.cols(),
                    "active": active,
                })
            }
            None => json!({
                "name": t.name,
                "rows": t.value.rows(),
                "cols": t.value.cols(),
                "dense": t.value.data(),
            }),
        })
        .collect();
    let doc = json!({
        "format": "hlstm-export-v1",
        "phase": ck.phase.label(),
        "spec": ck.model.spec,
        "output_width": ck.model.output_width,
        "tensors": tensors,
    });
    let tmp = out.with_extension("tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&doc)?)?;
    fs::rename(&tmp, out)?;
    println!("exported {}", out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Init { config, out } => cmd_init(config, out),
        Command::Gp { config, out, resume } => cmd_gp(config, out, resume.as_deref()),
        Command::Train {
            config,
            ckpt,
            epochs,
            out,
        } => cmd_train(config, ckpt.as_deref(), *epochs, out),
        Command::Grow { config, ckpt, out } => cmd_grow(config, ckpt, out),
        Command::Prune { config, ckpt, out } => cmd_prune(config, ckpt, out),
        Command::Eval { ckpt, config, split } => cmd_eval(ckpt, config.as_deref(), split),
        Command::Report { ckpt, json } => cmd_report(ckpt, *json),
        Command::Export { ckpt, out } => cmd_export(ckpt, out),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
