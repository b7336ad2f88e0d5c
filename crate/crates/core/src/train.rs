//! Negative sampling, training steps and the training / finetuning loops.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::dataset::{CandidateEntry, PairedDataset};
use crate::error::{Error, Result};
use crate::loss::{loss_candidate, loss_inbatch, loss_regression, stack_blocks};

use crate::model::{
    backward, gather_rows, AlignmentModel, GradientSet, Mode, ModelConfig, ScoringMode, Upstream,
};
use crate::optim::{adamw_step, lr_at, AdamWConfig, OptimizerState, Schedule};
use crate::retrieval::{evaluate, EvalOptions};
use crate::rng::{derive_seed, RngState};

const EPOCH_STREAM: u64 = 1;
const STEP_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Spectrum head regressed onto fixed molecule-side targets.
    RegressionMs2mol,
    /// Molecule head regressed onto fixed spectrum embeddings.
    RegressionMol2ms,
    Inbatch,
    Candidate,
}

impl LossKind {
    pub fn scoring(self) -> ScoringMode {
        match self {
            LossKind::RegressionMs2mol => ScoringMode::SpectrumHead,
            LossKind::RegressionMol2ms => ScoringMode::MoleculeHead,
            _ => ScoringMode::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub shared_dim: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_dim: 2048,
            shared_dim: 1024,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub negatives_per_spectrum: usize,
    pub lr: f64,
    pub max_steps: u64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub metadata_enabled: bool,
    pub ce_bounds: (f64, f64),
    pub init_temperature: f64,
    pub arch: ArchConfig,
    /// Metrics-log cadence in steps.
    pub log_every: u64,
    /// Validation cadence in steps; 0 evaluates only after the last step.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            negatives_per_spectrum: 128,
            lr: 1e-4,
            max_steps: 24000,
            warmup_steps: 4000,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            loss_kind: LossKind::Candidate,
            seed: 0,
            metadata_enabled: true,
            ce_bounds: (0.0, 200.0),
            init_temperature: 0.07,
            arch: ArchConfig::default(),
            log_every: 100,
            eval_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.negatives_per_spectrum == 0 {
            return bad("batch_size and negatives_per_spectrum must be at least 1".into());
        }
        if self.max_steps > 0 && !(1..=self.max_steps).contains(&self.warmup_steps) {
            return bad(format!(
                "warmup_steps {} must lie in [1, max_steps = {}]",
                self.warmup_steps, self.max_steps
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps >= 0.0 && self.weight_decay >= 0.0) {
            return bad("adam_eps and weight_decay must be non-negative".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.lr,
            warmup_steps: self.warmup_steps,
            max_steps: self.max_steps,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            betas: self.betas,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Sorted unique adducts present in `ds`.
pub fn adduct_vocab(ds: &PairedDataset) -> Vec<String> {
    let set: BTreeSet<&str> = ds.meta().iter().filter_map(|m| m.adduct.as_deref()).collect();
    set.into_iter().map(String::from).collect()
}

/// Model configuration for training `cfg` on `ds`.
pub fn model_config(cfg: &TrainConfig, ds: &PairedDataset) -> Result<ModelConfig> {
    let ms_dim = ds.spectra().dim();
    let mol_dim = ds.molecules().dim();
    let scoring = cfg.loss_kind.scoring();
    let target_dim = match scoring {
        ScoringMode::SpectrumHead => Some(ds.targets().map_or(mol_dim, |t| t.dim())),
        ScoringMode::MoleculeHead => Some(ms_dim),
        ScoringMode::Both => None,
    };
    if let Some(d) = target_dim {
        if cfg.arch.shared_dim != d {
            return Err(Error::InvalidConfig(format!(
                "regression needs shared_dim equal to the target dim {d}, got {}",
                cfg.arch.shared_dim
            )));
        }
    }
    let c = ModelConfig {
        ms_in_dim: ms_dim,
        mol_in_dim: mol_dim,
        hidden_layers: cfg.arch.hidden_layers,
        hidden_dim: cfg.arch.hidden_dim,
        shared_dim: cfg.arch.shared_dim,
        dropout: cfg.arch.dropout,
        layer_norm_eps: 1e-5,
        metadata_enabled: cfg.metadata_enabled,
        adduct_vocab: if cfg.metadata_enabled {
            adduct_vocab(ds)
        } else {
            Vec::new()
        },
        ce_bounds: cfg.ce_bounds,
        seed: cfg.seed,
        init_temperature: cfg.init_temperature,
        scoring,
    };
    c.validate()?;
    Ok(c)
}

pub fn init_model(cfg: &TrainConfig, ds: &PairedDataset) -> Result<AlignmentModel> {
    AlignmentModel::new(model_config(cfg, ds)?)
}

/// The positive followed by up to `k` negatives drawn uniformly without
/// replacement from the rest of the candidate list.
pub fn sample_negatives(entry: &CandidateEntry, k: usize, rng: &mut RngState) -> Vec<usize> {
    let negatives: Vec<usize> = entry
        .candidates
        .iter()
        .copied()
        .filter(|&c| c != entry.positive)
        .collect();
    let mut block = Vec::with_capacity(1 + k.min(negatives.len()));
    block.push(entry.positive);
    if negatives.len() <= k {
        block.extend_from_slice(&negatives);
    } else {
        block.extend(index::sample(rng, negatives.len(), k).into_iter().map(|i| negatives[i]));
    }
    block
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub lr: f64,
    pub val_r1: Option<f64>,
    pub val_r5: Option<f64>,
    pub val_r20: Option<f64>,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation R@1 model, or the final one without validation data.
    pub model: AlignmentModel,
    pub log: Vec<MetricsRecord>,
    pub best_step: Option<u64>,
}

/// Loss and gradients of one batch.
pub fn step_gradients(
    model: &AlignmentModel,
    ds: &PairedDataset,
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(f64, GradientSet)> {
    match cfg.loss_kind {
        LossKind::Candidate => {
            let mut rows = Vec::new();
            let mut sizes = Vec::with_capacity(batch.len());
            for &r in batch {
                let block = sample_negatives(ds.entry(r), cfg.negatives_per_spectrum, rng);
                sizes.push((block.len(), 0));
                rows.extend(block);
            }
            let (s, st) = model.embed_spectrum_tape(ds, batch, Mode::Train, rng)?;
            let (m, mt) = model.embed_molecule_tape(ds.molecules(), &rows, Mode::Train, rng)?;
            let g = loss_candidate(&s, &m, &stack_blocks(sizes), model.params.log_temperature)?;
            let grads = backward(
                model,
                &Upstream {
                    spectrum: Some((&st, &g.d_spectrum)),
                    molecule: Some((&mt, &g.d_molecule)),
                    log_temperature: g.d_log_temperature,
                },
            )?;
            Ok((g.loss, grads))
        }
        LossKind::Inbatch => {
            let rows: Vec<usize> = batch.iter().map(|&r| ds.positive(r)).collect();
            let (s, st) = model.embed_spectrum_tape(ds, batch, Mode::Train, rng)?;
            let (m, mt) = model.embed_molecule_tape(ds.molecules(), &rows, Mode::Train, rng)?;
            let g = loss_inbatch(&s, &m, model.params.log_temperature)?;
            let grads = backward(
                model,
                &Upstream {
                    spectrum: Some((&st, &g.d_spectrum)),
                    molecule: Some((&mt, &g.d_molecule)),
                    log_temperature: g.d_log_temperature,
                },
            )?;
            Ok((g.loss, grads))
        }
        LossKind::RegressionMs2mol => {
            let rows: Vec<usize> = batch.iter().map(|&r| ds.positive(r)).collect();
            let target = gather_rows(ds.targets().unwrap_or(ds.molecules()), &rows);
            let (s, st) = model.embed_spectrum_tape(ds, batch, Mode::Train, rng)?;
            let (loss, d) = loss_regression(&s, &target)?;
            let grads = backward(
                model,
                &Upstream {
                    spectrum: Some((&st, &d)),
                    molecule: None,
                    log_temperature: 0.0,
                },
            )?;
            Ok((loss, grads))
        }
        LossKind::RegressionMol2ms => {
            let rows: Vec<usize> = batch.iter().map(|&r| ds.positive(r)).collect();
            let target = gather_rows(ds.spectra(), batch);
            let (m, mt) = model.embed_molecule_tape(ds.molecules(), &rows, Mode::Train, rng)?;
            let (loss, d) = loss_regression(&m, &target)?;
            let grads = backward(
                model,
                &Upstream {
                    spectrum: None,
                    molecule: Some((&mt, &d)),
                    log_temperature: 0.0,
                },
            )?;
            Ok((loss, grads))
        }
    }
}

/// Runs `cfg.max_steps` optimizer steps on `train`, starting from `model`.
///
/// Records are reshuffled every epoch (the last partial batch of an epoch is
/// dropped), negatives are resampled every step, and when `val` is given the
/// model with the best validation R@1 is returned.
pub fn train_loop(
    model: AlignmentModel,
    train: &PairedDataset,
    val: Option<&PairedDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut outcome = TrainOutcome {
        model,
        log: Vec::new(),
        best_step: None,
    };
    if cfg.max_steps == 0 {
        return Ok(outcome);
    }
    let n = train.len();
    let b = cfg.batch_size;
    if n < b {
        return Err(Error::InvalidConfig(format!(
            "batch size {b} exceeds the {n} training records"
        )));
    }
    let batches_per_epoch = (n / b) as u64;
    let schedule = cfg.schedule();
    let adamw = cfg.adamw();
    let eval_opts = EvalOptions::default();
    let mut state = OptimizerState::new(&outcome.model.params);
    let mut model = outcome.model.clone();
    let mut best: Option<(f64, AlignmentModel)> = None;
    let mut order: Vec<usize> = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0u64);
    let epoch_seed = derive_seed(cfg.seed, EPOCH_STREAM);
    let step_seed = derive_seed(cfg.seed, STEP_STREAM);

    for step in 0..cfg.max_steps {
        let epoch = step / batches_per_epoch;
        let pos = (step % batches_per_epoch) as usize;
        if pos == 0 {
            order = (0..n).collect();
            order.shuffle(&mut RngState::new(derive_seed(epoch_seed, epoch)));
        }
        let batch = &order[pos * b..(pos + 1) * b];
        let mut rng = RngState::new(derive_seed(step_seed, step));
        let (loss, grads) = step_gradients(&model, train, batch, cfg, &mut rng)?;
        let lr = lr_at(step, &schedule);
        adamw_step(&mut model.params, &grads, &mut state, lr, &adamw)?;
        loss_sum += loss;
        loss_count += 1;

        let done = step + 1;
        let last = done == cfg.max_steps;
        let eval_due = val.is_some()
            && (last || (cfg.eval_every > 0 && done % cfg.eval_every == 0));
        if !(last || eval_due || done % cfg.log_every == 0) {
            continue;
        }
        let mut record = MetricsRecord {
            step: done,
            loss: loss_sum / loss_count as f64,
            lr,
            val_r1: None,
            val_r5: None,
            val_r20: None,
            temperature: model.temperature(),
        };
        loss_sum = 0.0;
        loss_count = 0;
        if let (true, Some(v)) = (eval_due, val) {
            let report = evaluate(&model, v, &eval_opts)?;
            record.val_r1 = report.recall(1);
            record.val_r5 = report.recall(5);
            record.val_r20 = report.recall(20);
            let r1 = report.recall(1).unwrap_or(0.0);
            if best.as_ref().is_none_or(|(b, _)| r1 > *b) {
                best = Some((r1, model.clone()));
                outcome.best_step = Some(done);
            }
        }
        log::info!(
            "step {done}: loss {:.4} lr {:.3e} temperature {:.4}{}",
            record.loss,
            lr,
            record.temperature,
            record
                .val_r1
                .map(|r| format!(" val R@1 {r:.4}"))
                .unwrap_or_default()
        );
        outcome.log.push(record);
    }
    outcome.model = match best {
        Some((_, m)) => m,
        None => model,
    };
    Ok(outcome)
}

/// A model continued on the records of one adduct.
#[derive(Debug, Clone)]
pub struct AdductExpert {
    pub adduct: String,
    pub outcome: TrainOutcome,
}

/// Record indices of `ds` whose adduct equals `adduct`.
pub fn adduct_records(ds: &PairedDataset, adduct: &str) -> Vec<usize> {
    ds.meta()
        .iter()
        .enumerate()
        .filter(|(_, m)| m.adduct.as_deref() == Some(adduct))
        .map(|(i, _)| i)
        .collect()
}

/// Continues training `base` on the `adduct` subset of `ds` (and of `val`).
pub fn finetune_subset(
    base: &AlignmentModel,
    ds: &PairedDataset,
    val: Option<&PairedDataset>,
    adduct: &str,
    cfg: &TrainConfig,
) -> Result<AdductExpert> {
    let idx = adduct_records(ds, adduct);
    if idx.is_empty() {
        return Err(Error::EmptySubset(adduct.into()));
    }
    let train = ds.subset(&idx);
    let val = val.map(|v| v.subset(&adduct_records(v, adduct)));
    let val = val.as_ref().filter(|v| !v.is_empty());
    let outcome = train_loop(base.clone(), &train, val, cfg)?;
    Ok(AdductExpert {
        adduct: adduct.into(),
        outcome,
    })
}

/// Full batches of one epoch, in training order.
#[doc(hidden)]
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngState::new(derive_seed(
        derive_seed(seed, EPOCH_STREAM),
        epoch,
    )));
    order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}
