//! The alignment model: two projection heads over frozen embeddings, a
//! spectrum-side metadata encoder, and a learnable log-temperature.
//!
//! Spectra are embedded as `normalize(head_ms([spectrum, adduct, energy]))`
//! and molecules as `normalize(head_mol(molecule))`; the score of a pair is
//! the dot product of the two unit vectors.

mod head;
mod metadata;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use head::{standardize, Block, HeadTape, LayerNormParams, Linear, Mode, ProjectionHead};
pub use metadata::{
    encode_metadata, sinusoidal_encode, MetadataEncoder, CE_SCALE_MAX, META_DIM,
};

use crate::dataset::{EmbeddingMatrix, PairedDataset};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::RngState;

/// Rows whose norm falls below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

/// Which sides of a pair go through a trained head at scoring time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Both heads (contrastive training).
    #[default]
    Both,
    /// Spectrum head against raw target rows (spectrum → molecule regression).
    SpectrumHead,
    /// Raw spectrum rows against the molecule head (molecule → spectrum regression).
    MoleculeHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub ms_in_dim: usize,
    pub mol_in_dim: usize,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub shared_dim: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub metadata_enabled: bool,
    /// Adduct labels with a learned embedding, sorted.
    pub adduct_vocab: Vec<String>,
    pub ce_bounds: (f64, f64),
    pub seed: u64,
    pub init_temperature: f64,
    #[serde(default)]
    pub scoring: ScoringMode,
}

impl ModelConfig {
    /// Heads of the default size (2 × 2048 hidden, 1024 shared, dropout 0.2).
    pub fn new(ms_in_dim: usize, mol_in_dim: usize) -> Self {
        Self {
            ms_in_dim,
            mol_in_dim,
            hidden_layers: 2,
            hidden_dim: 2048,
            shared_dim: 1024,
            dropout: 0.2,
            layer_norm_eps: 1e-5,
            metadata_enabled: true,
            adduct_vocab: Vec::new(),
            ce_bounds: (0.0, 200.0),
            seed: 0,
            init_temperature: 0.07,
            scoring: ScoringMode::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.ms_in_dim == 0 || self.mol_in_dim == 0 || self.shared_dim == 0 {
            return bad("input and shared dims must be positive".into());
        }
        if self.hidden_layers > 0 && self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return bad("init_temperature must be positive".into());
        }
        let (lo, hi) = self.ce_bounds;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return bad(format!("collision energy bounds ({lo}, {hi}) must satisfy min < max"));
        }
        if self.adduct_vocab.windows(2).any(|w| w[0] >= w[1]) {
            return bad("adduct vocabulary must be sorted and unique".into());
        }
        Ok(())
    }

    pub fn ms_head_in_dim(&self) -> usize {
        self.ms_in_dim + if self.metadata_enabled { 2 * META_DIM } else { 0 }
    }
}

/// What an optimizer needs to know about a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Embedding,
    Temperature,
}

impl ParamKind {
    /// Decoupled weight decay applies to linear weights only.
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub head_ms: ProjectionHead,
    pub head_mol: ProjectionHead,
    pub meta: MetadataEncoder,
    pub log_temperature: f64,
}

fn head_tensors<'a>(
    prefix: &str,
    head: &'a ProjectionHead,
    out: &mut Vec<(String, ParamKind, &'a [f64])>,
) {
    for (k, b) in head.blocks.iter().enumerate() {
        out.push((format!("{prefix}.block{k}.weight"), ParamKind::Weight, &b.linear.weight));
        out.push((format!("{prefix}.block{k}.bias"), ParamKind::Bias, &b.linear.bias));
        out.push((format!("{prefix}.block{k}.gamma"), ParamKind::Norm, &b.norm.gamma));
        out.push((format!("{prefix}.block{k}.beta"), ParamKind::Norm, &b.norm.beta));
    }
    out.push((format!("{prefix}.out.weight"), ParamKind::Weight, &head.output.weight));
    out.push((format!("{prefix}.out.bias"), ParamKind::Bias, &head.output.bias));
}

fn head_tensors_mut<'a>(head: &'a mut ProjectionHead, out: &mut Vec<(ParamKind, &'a mut [f64])>) {
    for b in head.blocks.iter_mut() {
        out.push((ParamKind::Weight, &mut b.linear.weight));
        out.push((ParamKind::Bias, &mut b.linear.bias));
        out.push((ParamKind::Norm, &mut b.norm.gamma));
        out.push((ParamKind::Norm, &mut b.norm.beta));
    }
    out.push((ParamKind::Weight, &mut head.output.weight));
    out.push((ParamKind::Bias, &mut head.output.bias));
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Self {
            head_ms: self.head_ms.zeros_like(),
            head_mol: self.head_mol.zeros_like(),
            meta: self.meta.zeros_like(),
            log_temperature: 0.0,
        }
    }

    /// All tensors in declaration order (the checkpoint order).
    pub fn tensors(&self) -> Vec<(String, ParamKind, &[f64])> {
        let mut out = Vec::new();
        head_tensors("ms", &self.head_ms, &mut out);
        head_tensors("mol", &self.head_mol, &mut out);
        out.push(("meta.adduct_table".into(), ParamKind::Embedding, &self.meta.table));
        out.push(("meta.adduct_unknown".into(), ParamKind::Embedding, &self.meta.adduct_unknown));
        out.push(("meta.ce_unknown".into(), ParamKind::Embedding, &self.meta.ce_unknown));
        out.push((
            "log_temperature".into(),
            ParamKind::Temperature,
            core::slice::from_ref(&self.log_temperature),
        ));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out = Vec::new();
        head_tensors_mut(&mut self.head_ms, &mut out);
        head_tensors_mut(&mut self.head_mol, &mut out);
        out.push((ParamKind::Embedding, &mut self.meta.table));
        out.push((ParamKind::Embedding, &mut self.meta.adduct_unknown));
        out.push((ParamKind::Embedding, &mut self.meta.ce_unknown));
        out.push((
            ParamKind::Temperature,
            core::slice::from_mut(&mut self.log_temperature),
        ));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }
}

/// Gradients of a loss with respect to every [`Parameters`] tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub Parameters);

impl GradientSet {
    pub fn zeros(model: &AlignmentModel) -> Self {
        GradientSet(model.params.zeros_like())
    }

    pub fn is_zero(&self) -> bool {
        self.0.tensors().iter().all(|t| t.2.iter().all(|&v| v == 0.0))
    }

    pub fn first_non_finite(&self) -> Option<String> {
        self.0
            .tensors()
            .into_iter()
            .find(|t| t.2.iter().any(|v| !v.is_finite()))
            .map(|t| t.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub config: ModelConfig,
    pub params: Parameters,
}

/// Forward state of [`AlignmentModel::embed_spectrum_tape`].
#[derive(Debug, Clone)]
pub struct SpectrumTape {
    head: HeadTape,
    unit: UnitTape,
    adduct_slots: Vec<Option<usize>>,
    ce_known: Vec<bool>,
}

/// Forward state of [`AlignmentModel::embed_molecule_tape`].
#[derive(Debug, Clone)]
pub struct MoleculeTape {
    head: HeadTape,
    unit: UnitTape,
}

#[derive(Debug, Clone)]
struct UnitTape {
    unit: Matrix,
    norms: Vec<f64>,
}

/// Upstream gradients handed to [`backward`].
pub struct Upstream<'a> {
    pub spectrum: Option<(&'a SpectrumTape, &'a Matrix)>,
    pub molecule: Option<(&'a MoleculeTape, &'a Matrix)>,
    pub log_temperature: f64,
}

/// Normalizes each row to unit L2 norm.
pub fn l2_normalize(mut m: Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let r = m.row_mut(i);
        let n = libm::sqrt(dot(r, r));
        if !(n >= MIN_NORM) {
            return Err(Error::DegenerateEmbedding { row: i, norm: n });
        }
        for v in r.iter_mut() {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((m, norms))
}

fn unit_backward(tape: &UnitTape, d_unit: &Matrix) -> Matrix {
    let mut d = Matrix::zeros(d_unit.rows(), d_unit.cols());
    for i in 0..d_unit.rows() {
        let u = tape.unit.row(i);
        let g = d_unit.row(i);
        let ug = dot(u, g);
        let inv = 1.0 / tape.norms[i];
        for ((o, &gj), &uj) in d.row_mut(i).iter_mut().zip(g).zip(u) {
            *o = (gj - uj * ug) * inv;
        }
    }
    d
}

/// Rows of a frozen matrix, widened to `f64`.
pub fn gather_rows(m: &EmbeddingMatrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.dim());
    for (o, &r) in rows.iter().enumerate() {
        for (dst, &src) in out.row_mut(o).iter_mut().zip(m.row(r)) {
            *dst = f64::from(src);
        }
    }
    out
}

/// Unit-normalized raw frozen rows (the untrained side of regression models).
pub fn raw_unit_rows(m: &EmbeddingMatrix, rows: &[usize]) -> Result<Matrix> {
    Ok(l2_normalize(gather_rows(m, rows))?.0)
}

/// All pairwise scores `S · Mᵀ` between unit-norm embeddings.
pub fn cosine_scores(spectra: &Matrix, molecules: &Matrix) -> Result<Matrix> {
    spectra.matmul_t(molecules)
}

impl AlignmentModel {
    /// Fresh model; parameters are a pure function of `config` (including its seed).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(config.seed);
        let c = &config;
        let head_ms = ProjectionHead::new(
            c.ms_head_in_dim(),
            c.hidden_layers,
            c.hidden_dim,
            c.shared_dim,
            c.dropout,
            c.layer_norm_eps,
            &mut rng,
        );
        let head_mol = ProjectionHead::new(
            c.mol_in_dim,
            c.hidden_layers,
            c.hidden_dim,
            c.shared_dim,
            c.dropout,
            c.layer_norm_eps,
            &mut rng,
        );
        let meta = MetadataEncoder::new(c.adduct_vocab.clone(), c.ce_bounds, &mut rng);
        let log_temperature = libm::log(c.init_temperature);
        Ok(Self {
            params: Parameters {
                head_ms,
                head_mol,
                meta,
                log_temperature,
            },
            config,
        })
    }

    pub fn temperature(&self) -> f64 {
        libm::exp(self.params.log_temperature)
    }

    /// Head input for the given records: frozen spectrum row, then metadata.
    fn spectrum_inputs(
        &self,
        ds: &PairedDataset,
        records: &[usize],
    ) -> Result<(Matrix, Vec<Option<usize>>, Vec<bool>)> {
        let c = &self.config;
        if ds.spectra().dim() != c.ms_in_dim {
            return Err(Error::ShapeMismatch(format!(
                "spectra have dim {}, model expects {}",
                ds.spectra().dim(),
                c.ms_in_dim
            )));
        }
        let width = c.ms_head_in_dim();
        let mut x = Matrix::zeros(records.len(), width);
        let mut slots = Vec::with_capacity(records.len());
        let mut known = Vec::with_capacity(records.len());
        let enc = &self.params.meta;
        for (o, &r) in records.iter().enumerate() {
            if r >= ds.len() {
                return Err(Error::ShapeMismatch(format!(
                    "record {r} out of range for {} records",
                    ds.len()
                )));
            }
            let row = x.row_mut(o);
            for (dst, &src) in row[..c.ms_in_dim].iter_mut().zip(ds.spectra().row(r)) {
                *dst = f64::from(src);
            }
            if c.metadata_enabled {
                let m = &ds.meta()[r];
                let slot = enc.slot(m.adduct.as_deref());
                row[c.ms_in_dim..c.ms_in_dim + META_DIM].copy_from_slice(enc.adduct_vector(slot));
                let ce = enc.ce_encoding(m.collision_energy);
                known.push(ce.is_some());
                row[c.ms_in_dim + META_DIM..]
                    .copy_from_slice(ce.as_deref().unwrap_or(&enc.ce_unknown));
                slots.push(slot);
            }
        }
        Ok((x, slots, known))
    }

    fn molecule_inputs(&self, molecules: &EmbeddingMatrix, rows: &[usize]) -> Result<Matrix> {
        if molecules.dim() != self.config.mol_in_dim {
            return Err(Error::ShapeMismatch(format!(
                "molecules have dim {}, model expects {}",
                molecules.dim(),
                self.config.mol_in_dim
            )));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= molecules.rows()) {
            return Err(Error::ShapeMismatch(format!(
                "molecule row {r} out of range for {} rows",
                molecules.rows()
            )));
        }
        Ok(gather_rows(molecules, rows))
    }

    /// Unit-norm spectrum embeddings of `records`.
    pub fn embed_spectrum(
        &self,
        ds: &PairedDataset,
        records: &[usize],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Matrix> {
        if mode == Mode::Eval {
            let (x, _, _) = self.spectrum_inputs(ds, records)?;
            return Ok(l2_normalize(self.params.head_ms.infer(&x)?)?.0);
        }
        Ok(self.embed_spectrum_tape(ds, records, mode, rng)?.0)
    }

    pub fn embed_spectrum_tape(
        &self,
        ds: &PairedDataset,
        records: &[usize],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Matrix, SpectrumTape)> {
        let (x, adduct_slots, ce_known) = self.spectrum_inputs(ds, records)?;
        let (out, head) = self.params.head_ms.forward(&x, mode, rng)?;
        let (unit, norms) = l2_normalize(out)?;
        let tape = SpectrumTape {
            head,
            unit: UnitTape {
                unit: unit.clone(),
                norms,
            },
            adduct_slots,
            ce_known,
        };
        Ok((unit, tape))
    }

    /// Unit-norm molecule embeddings of catalog `rows`.
    pub fn embed_molecule(
        &self,
        molecules: &EmbeddingMatrix,
        rows: &[usize],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Matrix> {
        if mode == Mode::Eval {
            let x = self.molecule_inputs(molecules, rows)?;
            return Ok(l2_normalize(self.params.head_mol.infer(&x)?)?.0);
        }
        Ok(self.embed_molecule_tape(molecules, rows, mode, rng)?.0)
    }

    pub fn embed_molecule_tape(
        &self,
        molecules: &EmbeddingMatrix,
        rows: &[usize],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Matrix, MoleculeTape)> {
        let x = self.molecule_inputs(molecules, rows)?;
        let (out, head) = self.params.head_mol.forward(&x, mode, rng)?;
        let (unit, norms) = l2_normalize(out)?;
        let tape = MoleculeTape {
            head,
            unit: UnitTape {
                unit: unit.clone(),
                norms,
            },
        };
        Ok((unit, tape))
    }
}

/// Exact gradients of a loss whose upstream gradients w.r.t. the unit-norm
/// embeddings (and the log-temperature) are given.
pub fn backward(model: &AlignmentModel, upstream: &Upstream<'_>) -> Result<GradientSet> {
    let mut grad = GradientSet::zeros(model);
    let p = &model.params;
    let c = &model.config;
    if let Some((tape, d_unit)) = upstream.spectrum {
        if d_unit.shape() != tape.unit.unit.shape() {
            return Err(Error::TapeMismatch(format!(
                "spectrum upstream {:?} vs embeddings {:?}",
                d_unit.shape(),
                tape.unit.unit.shape()
            )));
        }
        let d_out = unit_backward(&tape.unit, d_unit);
        let d_in = p.head_ms.backward(&tape.head, &d_out, &mut grad.0.head_ms)?;
        if c.metadata_enabled {
            if tape.adduct_slots.len() != d_in.rows() {
                return Err(Error::TapeMismatch("metadata slots do not match batch".into()));
            }
            for i in 0..d_in.rows() {
                let row = d_in.row(i);
                let da = &row[c.ms_in_dim..c.ms_in_dim + META_DIM];
                for (g, v) in grad.0.meta.adduct_vector_mut(tape.adduct_slots[i]).iter_mut().zip(da) {
                    *g += v;
                }
                if !tape.ce_known[i] {
                    let dc = &row[c.ms_in_dim + META_DIM..];
                    for (g, v) in grad.0.meta.ce_unknown.iter_mut().zip(dc) {
                        *g += v;
                    }
                }
            }
        }
    }
    if let Some((tape, d_unit)) = upstream.molecule {
        if d_unit.shape() != tape.unit.unit.shape() {
            return Err(Error::TapeMismatch(format!(
                "molecule upstream {:?} vs embeddings {:?}",
                d_unit.shape(),
                tape.unit.unit.shape()
            )));
        }
        let d_out = unit_backward(&tape.unit, d_unit);
        p.head_mol.backward(&tape.head, &d_out, &mut grad.0.head_mol)?;
    }
    grad.0.log_temperature = upstream.log_temperature;
    Ok(grad)
}
