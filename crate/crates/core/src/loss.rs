//! Training objectives over unit-norm embeddings, with exact gradients.
//!
//! All losses use mean reduction over the batch. Contrastive logits are
//! `score / ε` with `ε = exp(log_temperature)`; every contrastive loss also
//! returns its derivative with respect to `log_temperature`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};

/// Loss value and gradients of a contrastive objective.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub loss: f64,
    pub d_spectrum: Matrix,
    pub d_molecule: Matrix,
    pub d_log_temperature: f64,
}

/// Contiguous run of rows in the stacked candidate matrix belonging to one
/// spectrum; `positive` is the slot of the true molecule within the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateBlock {
    pub start: usize,
    pub len: usize,
    pub positive: usize,
}

/// Builds consecutive blocks from per-spectrum `(len, positive_slot)`.
pub fn stack_blocks(sizes: impl IntoIterator<Item = (usize, usize)>) -> Vec<CandidateBlock> {
    let mut start = 0;
    sizes
        .into_iter()
        .map(|(len, positive)| {
            let b = CandidateBlock {
                start,
                len,
                positive,
            };
            start += len;
            b
        })
        .collect()
}

/// Negative mean cosine between predictions and fixed targets.
///
/// The gradient is taken through the full cosine, so `pred` need not be
/// unit-norm. Targets receive no gradient.
pub fn loss_regression(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let b = pred.rows();
    if b == 0 {
        return Err(Error::EmptyInput);
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, pred.cols());
    for i in 0..b {
        let p = pred.row(i);
        let t = target.row(i);
        let tn = libm::sqrt(dot(t, t));
        if !(tn > 0.0) {
            return Err(Error::ZeroNormTarget { row: i });
        }
        let pn = libm::sqrt(dot(p, p));
        if !(pn > 0.0) {
            return Err(Error::DegenerateEmbedding { row: i, norm: pn });
        }
        let cos = dot(p, t) / (pn * tn);
        loss -= cos;
        // d cos / d p = t / (|p||t|) - cos · p / |p|²
        let g = grad.row_mut(i);
        for ((gj, &pj), &tj) in g.iter_mut().zip(p).zip(t) {
            *gj = -inv_b * (tj / (pn * tn) - cos * pj / (pn * pn));
        }
    }
    Ok((loss * inv_b, grad))
}

/// Softmax cross-entropy of logits `z` against slot `pos`; writes
/// `softmax(z) - onehot(pos)` into `dz` and returns the loss.
fn xent(z: &[f64], pos: usize, dz: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &v) in dz.iter_mut().zip(z) {
        *d = libm::exp(v - max);
        sum += *d;
    }
    for d in dz.iter_mut() {
        *d /= sum;
    }
    dz[pos] -= 1.0;
    max + libm::log(sum) - z[pos]
}

/// In-batch InfoNCE: spectrum `i` against all molecules of the batch, with
/// molecule `i` as its positive.
pub fn loss_inbatch(spectra: &Matrix, molecules: &Matrix, log_temperature: f64) -> Result<ContrastiveGrads> {
    if spectra.shape() != molecules.shape() {
        return Err(Error::ShapeMismatch(format!(
            "spectra {:?} vs molecules {:?}",
            spectra.shape(),
            molecules.shape()
        )));
    }
    let b = spectra.rows();
    let blocks: Vec<CandidateBlock> = (0..b)
        .map(|i| CandidateBlock {
            start: 0,
            len: b,
            positive: i,
        })
        .collect();
    loss_candidate(spectra, molecules, &blocks, log_temperature)
}

/// Candidate InfoNCE: spectrum `i` against its own block of candidate
/// embeddings (positive plus sampled negatives).
///
/// Blocks index rows of `candidates`; they may overlap, which is how the
/// in-batch loss is expressed.
pub fn loss_candidate(
    spectra: &Matrix,
    candidates: &Matrix,
    blocks: &[CandidateBlock],
    log_temperature: f64,
) -> Result<ContrastiveGrads> {
    let b = spectra.rows();
    if blocks.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} spectra but {} candidate blocks",
            b,
            blocks.len()
        )));
    }
    if spectra.cols() != candidates.cols() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum dim {} vs candidate dim {}",
            spectra.cols(),
            candidates.cols()
        )));
    }
    if b == 0 {
        return Err(Error::EmptyInput);
    }
    for (k, blk) in blocks.iter().enumerate() {
        if blk.positive >= blk.len {
            return Err(Error::MissingPositiveInBlock {
                block: k,
                slot: blk.positive,
                len: blk.len,
            });
        }
        if blk.start + blk.len > candidates.rows() {
            return Err(Error::ShapeMismatch(format!(
                "block {k} ends at row {} of {}",
                blk.start + blk.len,
                candidates.rows()
            )));
        }
    }
    let inv_t = libm::exp(-log_temperature);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut d_log_t = 0.0;
    let mut d_s = Matrix::zeros(b, spectra.cols());
    let mut d_c = Matrix::zeros(candidates.rows(), candidates.cols());
    let mut logits = Vec::new();
    let mut dz = Vec::new();
    for (i, blk) in blocks.iter().enumerate() {
        let s = spectra.row(i);
        logits.clear();
        logits.extend((0..blk.len).map(|j| dot(s, candidates.row(blk.start + j)) * inv_t));
        dz.clear();
        dz.resize(blk.len, 0.0);
        loss += xent(&logits, blk.positive, &mut dz);
        // d logit / d log t = -logit, and the dz sum to zero, so the
        // temperature gradient is Σ_{j≠pos} p_j (z_pos − z_j); this form avoids
        // cancelling against p_pos − 1 when the softmax saturates.
        let z_pos = logits[blk.positive];
        for j in 0..blk.len {
            let g = dz[j] * inv_b;
            if j != blk.positive {
                d_log_t += g * (z_pos - logits[j]);
            }
            let c = blk.start + j;
            axpy(g * inv_t, candidates.row(c), d_s.row_mut(i));
            axpy(g * inv_t, s, d_c.row_mut(c));
        }
    }
    Ok(ContrastiveGrads {
        loss: loss * inv_b,
        d_spectrum: d_s,
        d_molecule: d_c,
        d_log_temperature: d_log_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use alloc::vec;

    fn unit_rows(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        let mut m = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap();
        for i in 0..rows {
            let r = m.row_mut(i);
            let n = dot(r, r).sqrt();
            r.iter_mut().for_each(|v| *v /= n);
        }
        m
    }

    #[test]
    fn regression_perfect_and_orthogonal() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (l, _) = loss_regression(&a, &a).unwrap();
        assert!((l + 1.0).abs() < 1e-15);
        let b = Matrix::from_rows(&[vec![0.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let (l, _) = loss_regression(&a, &b).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn regression_zero_target() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let z = Matrix::zeros(1, 2);
        assert!(matches!(loss_regression(&a, &z), Err(Error::ZeroNormTarget { row: 0 })));
    }

    #[test]
    fn inbatch_single_pair_is_zero() {
        let mut rng = RngState::new(1);
        let s = unit_rows(1, 5, &mut rng);
        let m = unit_rows(1, 5, &mut rng);
        let g = loss_inbatch(&s, &m, (0.07f64).ln()).unwrap();
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn inbatch_uniform_scores_is_ln_b() {
        // every spectrum identical to every molecule
        let s = Matrix::from_rows(&vec![vec![0.6, 0.8]; 7]).unwrap();
        let g = loss_inbatch(&s, &s, 0.3f64.ln()).unwrap();
        assert!((g.loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn candidate_positive_only_is_zero() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let blocks = stack_blocks([(1, 0)]);
        assert_eq!(loss_candidate(&s, &c, &blocks, 0.0).unwrap().loss, 0.0);
    }

    #[test]
    fn candidate_uniform_is_ln_k() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // block 0: 5 candidates orthogonal to s0; block 1: 3 identical to s1
        let mut rows = vec![vec![0.0, 1.0]; 5];
        rows.extend(vec![vec![0.0, 1.0]; 3]);
        let c = Matrix::from_rows(&rows).unwrap();
        let blocks = stack_blocks([(5, 2), (3, 0)]);
        let g = loss_candidate(&s, &c, &blocks, 0.07f64.ln()).unwrap();
        let expect = (5f64.ln() + 3f64.ln()) / 2.0;
        assert!((g.loss - expect).abs() < 1e-9);
    }

    #[test]
    fn candidate_missing_positive_slot() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let blocks = [CandidateBlock {
            start: 0,
            len: 2,
            positive: 2,
        }];
        assert!(matches!(
            loss_candidate(&s, &c, &blocks, 0.0),
            Err(Error::MissingPositiveInBlock { .. })
        ));
    }

    #[test]
    fn negative_order_does_not_matter() {
        let mut rng = RngState::new(8);
        let s = unit_rows(1, 6, &mut rng);
        let c = unit_rows(5, 6, &mut rng);
        let blocks = stack_blocks([(5, 0)]);
        let a = loss_candidate(&s, &c, &blocks, -1.0).unwrap();
        let reordered = c.select_rows(&[0, 3, 1, 4, 2]);
        let b = loss_candidate(&s, &reordered, &blocks, -1.0).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-14);
        assert!((a.d_log_temperature - b.d_log_temperature).abs() < 1e-14);
    }

    #[test]
    fn temperature_gradient_sign_when_positive_dominates() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]]).unwrap();
        let g = loss_candidate(&s, &c, &stack_blocks([(3, 0)]), 0.07f64.ln()).unwrap();
        assert!(g.d_log_temperature > 0.0);
    }
}
