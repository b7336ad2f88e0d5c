//! The five subcommands. Each validates its whole configuration and checks
//! its inputs before writing anything.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use specalign_core::retrieval::{aggregate, EvalReport, RecordOutcome, Scorer};
use specalign_core::shift::{joint_embed, shift_metric, ShiftReport};
use specalign_core::splits::{split_by_key, verify_no_leakage, LeakageViolation, Part, SplitAssignment, SplitEntry};
use specalign_core::synthetic::gen_synthetic;
use specalign_core::train::{finetune_subset, init_model, train_loop, LossKind, MetricsRecord};
use specalign_core::PairedDataset;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_json, write_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Split,
    Train,
    Eval,
    Shift,
}

/// Command-line settings layered over the config file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub allow_leakage: bool,
    pub filter_formula: bool,
    pub loss: Option<LossKind>,
}

impl Overrides {
    /// Applies the overrides to the section `cmd` reads.
    pub fn apply(&self, cmd: Command, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            match cmd {
                Command::Gen => cfg.gen.seed = seed,
                Command::Split => cfg.split.seed = seed,
                Command::Train => cfg.train.seed = seed,
                Command::Shift => cfg.shift.seed = seed,
                Command::Eval => {}
            }
        }
        if self.filter_formula {
            cfg.eval.filter_formula = true;
        }
        if let Some(loss) = self.loss {
            cfg.train.loss_kind = loss;
        }
    }
}

pub const LEAKAGE_REPORT: &str = "leakage.json";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const EVAL_REPORT: &str = "eval.json";
pub const SHIFT_REPORT: &str = "shift.json";

/// What a successful command produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Generated { records: usize, molecules: usize },
    Split { counts: [usize; 3], violations: usize },
    Trained { steps: u64, best_step: Option<u64> },
    Evaluated(EvalReport),
    Shift(ShiftReport),
}

pub fn run(cmd: Command, mut cfg: RunConfig, ov: &Overrides) -> Result<Outcome> {
    ov.apply(cmd, &mut cfg);
    cfg.validate()?;
    if ov.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    check_inputs(cmd, &cfg)?;
    let out = &cfg.paths.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cmd {
        Command::Gen => cmd_gen(&cfg),
        Command::Split => cmd_split(&cfg, ov.allow_leakage),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg, ov.threads.unwrap_or(1)),
        Command::Shift => cmd_shift(&cfg),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn check_inputs(cmd: Command, cfg: &RunConfig) -> Result<()> {
    if cmd == Command::Gen {
        return Ok(());
    }
    for p in cfg.paths.dataset().all() {
        require(p, "dataset file")?;
    }
    if cfg.paths.split.is_some() || cmd == Command::Shift {
        require(&cfg.paths.split(), "split file")?;
    }
    match cmd {
        Command::Eval => require(&cfg.paths.checkpoint(), "checkpoint")?,
        Command::Train => {
            if let Some(p) = &cfg.finetune.init_checkpoint {
                require(p, "initial checkpoint")?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn cmd_gen(cfg: &RunConfig) -> Result<Outcome> {
    let (ds, _) = gen_synthetic(&cfg.gen)?;
    save_dataset(&ds, &cfg.paths.dataset())?;
    log::info!(
        "generated {} records over {} molecules in {}",
        ds.len(),
        ds.molecules().rows(),
        cfg.paths.out_dir.display()
    );
    Ok(Outcome::Generated {
        records: ds.len(),
        molecules: ds.molecules().rows(),
    })
}

#[derive(Serialize)]
struct LeakageReport<'a> {
    split_key: &'a str,
    leakage_key: &'a str,
    counts: [usize; 3],
    violations: &'a [LeakageViolation],
}

fn cmd_split(cfg: &RunConfig, allow_leakage: bool) -> Result<Outcome> {
    let ds = load_dataset(&cfg.paths.dataset())?;
    let assignment = split_by_key(&ds, &cfg.split.spec())?;
    let key = cfg.split.leakage_key();
    let violations = verify_no_leakage(&ds, &assignment, key);
    let counts = Part::ALL.map(|p| assignment.count(p));
    write_json(
        cfg.paths.out_dir.join(LEAKAGE_REPORT),
        &LeakageReport {
            split_key: &cfg.split.key_name,
            leakage_key: key,
            counts,
            violations: &violations,
        },
    )?;
    if !violations.is_empty() {
        log::warn!("{} values of {key:?} span several parts", violations.len());
        if !allow_leakage {
            return Err(Error::Leakage {
                key: key.into(),
                count: violations.len(),
            });
        }
    }
    write_jsonl(cfg.paths.split(), &assignment.entries)?;
    log::info!("split {counts:?} (train, val, test) written to {}", cfg.paths.split().display());
    Ok(Outcome::Split {
        counts,
        violations: violations.len(),
    })
}

/// Split assignment if a split file is configured or present.
fn load_split(cfg: &RunConfig) -> Result<Option<SplitAssignment>> {
    let path = cfg.paths.split();
    if cfg.paths.split.is_none() && !path.is_file() {
        return Ok(None);
    }
    let entries: Vec<SplitEntry> = read_jsonl(&path)?;
    Ok(Some(SplitAssignment { entries }))
}

fn part(ds: &PairedDataset, split: &SplitAssignment, p: Part) -> Result<PairedDataset> {
    Ok(ds.subset(&split.indices(ds, p)?))
}

fn cmd_train(cfg: &RunConfig) -> Result<Outcome> {
    let ds = load_dataset(&cfg.paths.dataset())?;
    let (train, val) = match load_split(cfg)? {
        Some(s) => {
            let val = part(&ds, &s, Part::Val)?;
            (part(&ds, &s, Part::Train)?, (!val.is_empty()).then_some(val))
        }
        None => {
            log::warn!("no split file: training on all records without validation");
            (ds, None)
        }
    };
    let tc = &cfg.train;
    let (outcome, adduct) = match &cfg.finetune.init_checkpoint {
        Some(path) => {
            let (base, _) = load_checkpoint(path)?;
            match &cfg.finetune.adduct {
                Some(a) => {
                    let e = finetune_subset(&base, &train, val.as_ref(), a, tc)?;
                    (e.outcome, Some(e.adduct))
                }
                None => (train_loop(base, &train, val.as_ref(), tc)?, None),
            }
        }
        None => {
            let model = init_model(tc, &train)?;
            (train_loop(model, &train, val.as_ref(), tc)?, None)
        }
    };
    save_checkpoint(&outcome.model, adduct.as_deref(), cfg.paths.checkpoint())?;
    write_jsonl::<MetricsRecord>(cfg.paths.out_dir.join(METRICS_LOG), &outcome.log)?;
    log::info!(
        "trained {} steps (best validation step {:?}); checkpoint {}",
        tc.max_steps,
        outcome.best_step,
        cfg.paths.checkpoint().display()
    );
    Ok(Outcome::Trained {
        steps: tc.max_steps,
        best_step: outcome.best_step,
    })
}

fn cmd_eval(cfg: &RunConfig, threads: usize) -> Result<Outcome> {
    let ds = load_dataset(&cfg.paths.dataset())?;
    let ds = match load_split(cfg)? {
        Some(s) => part(&ds, &s, cfg.eval.part)?,
        None => ds,
    };
    let (model, _) = load_checkpoint(cfg.paths.checkpoint())?;
    let opts = cfg.eval.options();
    let scorer = Scorer::new(&model, &ds, &opts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // Collecting an indexed parallel iterator keeps record order, so the
    // report does not depend on the thread count.
    let outcomes: Vec<RecordOutcome> =
        pool.install(|| (0..scorer.len()).into_par_iter().map(|i| scorer.score_record(i)).collect());
    let report = aggregate(&outcomes, &opts)?;
    write_json(cfg.paths.out_dir.join(EVAL_REPORT), &report)?;
    log::info!("recall {:?} over {} records", report.recall_at, report.n_records);
    Ok(Outcome::Evaluated(report))
}

fn cmd_shift(cfg: &RunConfig) -> Result<Outcome> {
    let ds = load_dataset(&cfg.paths.dataset())?;
    let split = load_split(cfg)?.expect("split file checked");
    let train = joint_embed(&ds, &split.indices(&ds, Part::Train)?)?;
    let test = joint_embed(&ds, &split.indices(&ds, Part::Test)?)?;
    let s = &cfg.shift;
    let report = shift_metric(&train, &test, s.n_projections, s.n_seeds, s.seed)?;
    write_json(cfg.paths.out_dir.join(SHIFT_REPORT), &report)?;
    log::info!("shift {:.4} ± {:.4}", report.shift_mean, report.shift_std);
    Ok(Outcome::Shift(report))
}

/// Report file a command writes into `out_dir`, if any.
pub fn report_path(cmd: Command, cfg: &RunConfig) -> Option<PathBuf> {
    let name = match cmd {
        Command::Split => LEAKAGE_REPORT,
        Command::Eval => EVAL_REPORT,
        Command::Shift => SHIFT_REPORT,
        Command::Train => METRICS_LOG,
        Command::Gen => return None,
    };
    Some(cfg.paths.out_dir.join(name))
}
