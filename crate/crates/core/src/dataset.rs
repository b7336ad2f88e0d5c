//! Paired spectrum/molecule datasets over frozen embedding matrices.
//!
//! A [`PairedDataset`] holds one spectrum row, one [`RecordMeta`] and one
//! [`CandidateEntry`] per record, plus a molecule catalog that the candidate
//! lists index into. Construction via [`PairedDataset::new`] checks every
//! invariant eagerly; [`validate_dataset`] reports all violations as data.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleTag {
    Spectrum,
    Molecule,
    Target,
}

/// Precomputed embeddings, row-major binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    role: RoleTag,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, role: RoleTag) -> Result<Self> {
        let m = Self::new_unchecked(rows, dim, data, role)?;
        if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{:?} matrix at row {}",
                role,
                pos / dim
            )));
        }
        Ok(m)
    }

    /// Checks shape only; entries may be non-finite. Used to build corrupted
    /// fixtures for [`validate_dataset`].
    pub fn new_unchecked(rows: usize, dim: usize, data: Vec<f32>, role: RoleTag) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch("embedding dim must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {rows}x{dim} embeddings",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            role,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> RoleTag {
        self.role
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| p / self.dim)
    }
}

/// Per-record metadata. Missing values are explicit `None`s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: String,
    pub adduct: Option<String>,
    pub collision_energy: Option<f64>,
    #[serde(default)]
    pub group_keys: BTreeMap<String, String>,
    pub mol_mass: Option<f64>,
    pub formula: Option<String>,
}

impl RecordMeta {
    pub fn new(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            adduct: None,
            collision_energy: None,
            group_keys: BTreeMap::new(),
            mol_mass: None,
            formula: None,
        }
    }
}

/// Candidate list of one record, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub record_id: String,
    pub candidates: Vec<usize>,
    pub positive: usize,
    pub candidate_formulas: Option<Vec<String>>,
}

impl CandidateEntry {
    /// Slot of the positive inside `candidates`.
    pub fn positive_slot(&self) -> Option<usize> {
        self.candidates.iter().position(|&c| c == self.positive)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateTable {
    pub entries: Vec<CandidateEntry>,
}

impl CandidateTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    spectra: EmbeddingMatrix,
    molecules: EmbeddingMatrix,
    meta: Vec<RecordMeta>,
    candidates: CandidateTable,
    targets: Option<EmbeddingMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    CountMismatch,
    DuplicateRecordId,
    RecordIdMismatch,
    NonFinite,
    NonFiniteCollisionEnergy,
    IndexOutOfRange,
    MissingPositive,
    DuplicateCandidate,
    FormulaCountMismatch,
    TargetShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `None` for dataset-level problems.
    pub record_id: Option<String>,
    pub rule: Rule,
    pub detail: String,
    /// Offending candidate/positive index, for the index rules.
    pub index: Option<usize>,
    rows: usize,
}

impl PairedDataset {
    /// Builds a dataset and rejects it on the first invariant violation.
    pub fn new(
        spectra: EmbeddingMatrix,
        molecules: EmbeddingMatrix,
        meta: Vec<RecordMeta>,
        candidates: CandidateTable,
    ) -> Result<Self> {
        let ds = Self::new_unchecked(spectra, molecules, meta, candidates);
        ds.check()?;
        Ok(ds)
    }

    pub fn new_unchecked(
        spectra: EmbeddingMatrix,
        molecules: EmbeddingMatrix,
        meta: Vec<RecordMeta>,
        candidates: CandidateTable,
    ) -> Self {
        Self {
            spectra,
            molecules,
            meta,
            candidates,
            targets: None,
        }
    }

    /// Attaches a fixed regression target matrix aligned with the catalog.
    pub fn with_targets(mut self, targets: EmbeddingMatrix) -> Result<Self> {
        self.targets = Some(targets);
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        match validate_dataset(self).into_iter().next() {
            None => Ok(()),
            Some(v) => Err(v.into_error()),
        }
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn spectra(&self) -> &EmbeddingMatrix {
        &self.spectra
    }

    pub fn molecules(&self) -> &EmbeddingMatrix {
        &self.molecules
    }

    pub fn targets(&self) -> Option<&EmbeddingMatrix> {
        self.targets.as_ref()
    }

    pub fn meta(&self) -> &[RecordMeta] {
        &self.meta
    }

    pub fn candidates(&self) -> &CandidateTable {
        &self.candidates
    }

    pub fn entry(&self, record: usize) -> &CandidateEntry {
        &self.candidates.entries[record]
    }

    /// Catalog row of the true molecule of `record`.
    pub fn positive(&self, record: usize) -> usize {
        self.candidates.entries[record].positive
    }

    /// `(spectrum_row, positive molecule row)` per record.
    pub fn pair_index(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.candidates
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.positive))
    }

    /// Records `indices` (in that order) over the same molecule catalog.
    pub fn subset(&self, indices: &[usize]) -> PairedDataset {
        let dim = self.spectra.dim;
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(self.spectra.row(i));
        }
        PairedDataset {
            spectra: EmbeddingMatrix {
                rows: indices.len(),
                dim,
                data,
                role: self.spectra.role,
            },
            molecules: self.molecules.clone(),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
            candidates: CandidateTable {
                entries: indices
                    .iter()
                    .map(|&i| self.candidates.entries[i].clone())
                    .collect(),
            },
            targets: self.targets.clone(),
        }
    }

    pub fn into_parts(self) -> (EmbeddingMatrix, EmbeddingMatrix, Vec<RecordMeta>, CandidateTable) {
        (self.spectra, self.molecules, self.meta, self.candidates)
    }
}

impl Violation {
    fn new(record_id: Option<&str>, rule: Rule, detail: String) -> Self {
        Self {
            record_id: record_id.map(String::from),
            rule,
            detail,
            index: None,
            rows: 0,
        }
    }

    fn rows(mut self, rows: usize) -> Self {
        self.rows = rows;
        self
    }

    fn at(mut self, index: usize) -> Self {
        self.index = Some(index);
        self
    }

    pub fn into_error(self) -> Error {
        let rid = self.record_id.clone().unwrap_or_default();
        let index = self.index.unwrap_or_default();
        match self.rule {
            Rule::CountMismatch => Error::CountMismatch(self.detail),
            Rule::IndexOutOfRange => Error::IndexOutOfRange {
                record_id: rid,
                index,
                rows: self.rows,
            },
            Rule::MissingPositive => Error::MissingPositive {
                record_id: rid,
                positive: index,
            },
            Rule::DuplicateCandidate => Error::DuplicateCandidate {
                record_id: rid,
                index,
            },
            Rule::DuplicateRecordId => Error::DuplicateRecordId(rid),
            Rule::NonFinite => Error::NonFinite(self.detail),
            Rule::TargetShape => Error::ShapeMismatch(self.detail),
            _ => Error::InvalidRecord {
                record_id: rid,
                detail: self.detail,
            },
        }
    }
}

/// Every invariant violation in `ds`; empty iff the dataset is valid.
pub fn validate_dataset(ds: &PairedDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = ds.meta.len();
    if ds.spectra.rows != n || ds.candidates.len() != n {
        out.push(Violation::new(
            None,
            Rule::CountMismatch,
            format!(
                "{} meta lines, {} spectrum rows, {} candidate lines",
                n,
                ds.spectra.rows,
                ds.candidates.len()
            ),
        ));
    }
    if let Some(row) = ds.spectra.first_non_finite_row() {
        let rid = ds.meta.get(row).map(|m| m.record_id.as_str());
        out.push(Violation::new(
            rid,
            Rule::NonFinite,
            format!("spectrum row {row}"),
        ));
    }
    if let Some(row) = ds.molecules.first_non_finite_row() {
        out.push(Violation::new(
            None,
            Rule::NonFinite,
            format!("molecule row {row}"),
        ));
    }
    if let Some(t) = &ds.targets {
        if t.rows != ds.molecules.rows {
            out.push(Violation::new(
                None,
                Rule::TargetShape,
                format!(
                    "{} target rows for a catalog of {}",
                    t.rows, ds.molecules.rows
                ),
            ));
        }
        if let Some(row) = t.first_non_finite_row() {
            out.push(Violation::new(
                None,
                Rule::NonFinite,
                format!("target row {row}"),
            ));
        }
    }

    let mut seen = BTreeSet::new();
    for m in &ds.meta {
        if !seen.insert(m.record_id.as_str()) {
            out.push(Violation::new(
                Some(&m.record_id),
                Rule::DuplicateRecordId,
                "record id repeated".into(),
            ));
        }
        if let Some(ce) = m.collision_energy {
            if !ce.is_finite() {
                out.push(Violation::new(
                    Some(&m.record_id),
                    Rule::NonFiniteCollisionEnergy,
                    "collision energy is not finite".into(),
                ));
            }
        }
    }

    let rows = ds.molecules.rows;
    for (i, e) in ds.candidates.entries.iter().enumerate() {
        let rid = e.record_id.as_str();
        if let Some(m) = ds.meta.get(i) {
            if m.record_id != e.record_id {
                out.push(Violation::new(
                    Some(rid),
                    Rule::RecordIdMismatch,
                    format!("candidate line {i} is for {} but meta has {}", rid, m.record_id),
                ));
            }
        }
        let mut uniq = BTreeSet::new();
        for &c in &e.candidates {
            if c >= rows {
                out.push(Violation::new(
                    Some(rid),
                    Rule::IndexOutOfRange,
                    format!("candidate index {c} >= catalog rows {rows}"),
                ).at(c).rows(rows));
            }
            if !uniq.insert(c) {
                out.push(Violation::new(
                    Some(rid),
                    Rule::DuplicateCandidate,
                    format!("candidate index {c} repeated"),
                ).at(c));
            }
        }
        if e.positive >= rows {
            out.push(Violation::new(
                Some(rid),
                Rule::IndexOutOfRange,
                format!("positive index {} >= catalog rows {rows}", e.positive),
            ).at(e.positive).rows(rows));
        }
        if !uniq.contains(&e.positive) {
            out.push(Violation::new(
                Some(rid),
                Rule::MissingPositive,
                format!("positive {} not among candidates", e.positive),
            ).at(e.positive));
        }
        if let Some(f) = &e.candidate_formulas {
            if f.len() != e.candidates.len() {
                out.push(Violation::new(
                    Some(rid),
                    Rule::FormulaCountMismatch,
                    format!("{} formulas for {} candidates", f.len(), e.candidates.len()),
                ));
            }
        }
    }
    out
}

