//! Candidate-set retrieval: ranking, Recall@k, formula filtering and the
//! mean pairwise candidate similarity diagnostic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::{raw_unit_rows, AlignmentModel, Mode, ScoringMode, MIN_NORM};
use crate::rng::RngState;

/// Rows embedded per forward pass during evaluation.
const EVAL_CHUNK: usize = 2048;

/// 1-based rank of the positive; ties count against it.
pub fn rank_positive(scores: &[f64], positive_slot: usize) -> usize {
    let sp = scores[positive_slot];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != positive_slot && s >= sp)
        .count()
}

/// Fraction of ranks `<= k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean cosine similarity over unordered pairs of rows.
///
/// Uses `Σ_{j<l} u_j·u_l = (|Σ u_j|² − n) / 2` on the normalized rows.
pub fn mean_pairwise_candidate_similarity(embeddings: &Matrix) -> Result<f64> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(Error::TooFewCandidates(n));
    }
    let mut sum = vec![0.0; embeddings.cols()];
    for (i, r) in embeddings.row_iter().enumerate() {
        let norm = libm::sqrt(dot(r, r));
        if !(norm >= MIN_NORM) {
            return Err(Error::DegenerateEmbedding { row: i, norm });
        }
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v / norm;
        }
    }
    let nf = n as f64;
    Ok((dot(&sum, &sum) - nf) / (nf * (nf - 1.0)))
}

fn mean_pairwise_unit(rows: impl Iterator<Item = impl AsRef<[f64]>>, dim: usize) -> Option<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r.as_ref()) {
            *s += v;
        }
        n += 1;
    }
    (n >= 2).then(|| {
        let nf = n as f64;
        (dot(&sum, &sum) - nf) / (nf * (nf - 1.0))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub filter_formula: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 20],
            filter_formula: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub rank_of_positive: usize,
    pub num_candidates: usize,
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordOutcome {
    pub ranking: RankingResult,
    pub mu_pc_input: Option<f64>,
    pub mu_pc_learned: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub n_records: usize,
    pub mean_candidates_per_record: f64,
    /// Mean over records with at least two candidates; `None` if there are none.
    pub mu_pc_input: Option<f64>,
    pub mu_pc_learned: Option<f64>,
    pub filtered: bool,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

/// Precomputed embeddings for scoring every record of a dataset.
///
/// Construction embeds all spectra and every catalog row referenced by a
/// candidate list once; [`Scorer::score_record`] is then read-only, so
/// records can be scored concurrently.
pub struct Scorer<'a> {
    ds: &'a PairedDataset,
    candidates: Vec<Vec<usize>>,
    positive_slots: Vec<usize>,
    spectra: Matrix,
    /// Catalog row → row of `learned` / `raw`.
    cache_slot: Vec<usize>,
    learned: Matrix,
    raw: Matrix,
    keep_scores: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &AlignmentModel, ds: &'a PairedDataset, opts: &EvalOptions) -> Result<Self> {
        let mut candidates = Vec::with_capacity(ds.len());
        let mut positive_slots = Vec::with_capacity(ds.len());
        for (i, entry) in ds.candidates().entries.iter().enumerate() {
            let mut list = entry.candidates.clone();
            if opts.filter_formula {
                let meta = &ds.meta()[i];
                let missing = || Error::MissingFormula {
                    record_id: meta.record_id.clone(),
                };
                let formula = meta.formula.as_deref().ok_or_else(missing)?;
                let formulas = entry.candidate_formulas.as_ref().ok_or_else(missing)?;
                list = entry
                    .candidates
                    .iter()
                    .zip(formulas)
                    .filter(|(_, f)| f.as_str() == formula)
                    .map(|(&c, _)| c)
                    .collect();
            }
            let slot = list.iter().position(|&c| c == entry.positive).ok_or_else(|| {
                Error::InvalidRecord {
                    record_id: entry.record_id.clone(),
                    detail: "formula of the positive candidate differs from the record formula"
                        .into(),
                }
            })?;
            candidates.push(list);
            positive_slots.push(slot);
        }

        let catalog = ds.molecules();
        let mut cache_slot = vec![usize::MAX; catalog.rows()];
        let mut rows = Vec::new();
        for &c in candidates.iter().flatten() {
            if cache_slot[c] == usize::MAX {
                cache_slot[c] = 0;
                rows.push(c);
            }
        }
        rows.sort_unstable();
        for (k, &r) in rows.iter().enumerate() {
            cache_slot[r] = k;
        }

        let mut rng = RngState::new(0);
        let records: Vec<usize> = (0..ds.len()).collect();
        let mut spectra = Matrix::zeros(0, 0);
        let mut learned = Matrix::zeros(0, 0);
        for chunk in records.chunks(EVAL_CHUNK) {
            let e = match model.config.scoring {
                ScoringMode::MoleculeHead => raw_unit_rows(ds.spectra(), chunk)?,
                _ => model.embed_spectrum(ds, chunk, Mode::Eval, &mut rng)?,
            };
            spectra = vstack(spectra, e);
        }
        for chunk in rows.chunks(EVAL_CHUNK) {
            let e = match model.config.scoring {
                ScoringMode::SpectrumHead => {
                    raw_unit_rows(ds.targets().unwrap_or(catalog), chunk)?
                }
                _ => model.embed_molecule(catalog, chunk, Mode::Eval, &mut rng)?,
            };
            learned = vstack(learned, e);
        }
        let raw = raw_unit_rows(catalog, &rows)?;
        if spectra.rows() > 0 && learned.rows() > 0 && spectra.cols() != learned.cols() {
            return Err(Error::ShapeMismatch(format!(
                "spectrum side dim {} vs molecule side dim {}",
                spectra.cols(),
                learned.cols()
            )));
        }
        Ok(Self {
            ds,
            candidates,
            positive_slots,
            spectra,
            cache_slot,
            learned,
            raw,
            keep_scores: false,
        })
    }

    /// Retain per-candidate scores in each [`RankingResult`].
    pub fn keep_scores(mut self, keep: bool) -> Self {
        self.keep_scores = keep;
        self
    }

    pub fn len(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.is_empty()
    }

    pub fn score_record(&self, record: usize) -> RecordOutcome {
        let s = self.spectra.row(record);
        let list = &self.candidates[record];
        let slots: Vec<usize> = list.iter().map(|&c| self.cache_slot[c]).collect();
        let scores: Vec<f64> = slots.iter().map(|&k| dot(s, self.learned.row(k))).collect();
        let rank = rank_positive(&scores, self.positive_slots[record]);
        RecordOutcome {
            ranking: RankingResult {
                rank_of_positive: rank,
                num_candidates: list.len(),
                scores: self.keep_scores.then_some(scores),
            },
            mu_pc_input: mean_pairwise_unit(slots.iter().map(|&k| self.raw.row(k)), self.raw.cols()),
            mu_pc_learned: mean_pairwise_unit(
                slots.iter().map(|&k| self.learned.row(k)),
                self.learned.cols(),
            ),
        }
    }
}

fn vstack(top: Matrix, bottom: Matrix) -> Matrix {
    if top.rows() == 0 {
        return bottom;
    }
    let cols = top.cols();
    let rows = top.rows() + bottom.rows();
    let mut data = top.into_vec();
    data.extend_from_slice(bottom.as_slice());
    Matrix::from_vec(rows, cols, data).expect("matching widths")
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Recall@k and candidate-similarity means over per-record outcomes.
pub fn aggregate(outcomes: &[RecordOutcome], opts: &EvalOptions) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ranks: Vec<usize> = outcomes.iter().map(|o| o.ranking.rank_of_positive).collect();
    let mut recall_at = BTreeMap::new();
    for &k in &opts.ks {
        recall_at.insert(k, recall_at_k(&ranks, k)?);
    }
    let total: usize = outcomes.iter().map(|o| o.ranking.num_candidates).sum();
    Ok(EvalReport {
        recall_at,
        n_records: outcomes.len(),
        mean_candidates_per_record: total as f64 / outcomes.len() as f64,
        mu_pc_input: mean_of(outcomes.iter().filter_map(|o| o.mu_pc_input)),
        mu_pc_learned: mean_of(outcomes.iter().filter_map(|o| o.mu_pc_learned)),
        filtered: opts.filter_formula,
    })
}

/// Ranks every record's positive among its candidates (eval mode) and
/// aggregates Recall@k.
pub fn evaluate(model: &AlignmentModel, ds: &PairedDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let scorer = Scorer::new(model, ds, opts)?;
    let outcomes: Vec<RecordOutcome> = (0..scorer.len()).map(|i| scorer.score_record(i)).collect();
    aggregate(&outcomes, opts)
}
