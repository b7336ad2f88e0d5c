//! Sliced Wasserstein distances and the normalized train/test shift metric.
//!
//! `Shift = SW(train, test) / SW(train¹, train²)` where `train¹, train²`
//! is a random halving of the training set: values near 1 mean the test
//! set is about as far from train as train is from itself.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{derive_seed, RngState};

pub const DEFAULT_PROJECTIONS: usize = 100;
pub const DEFAULT_SEEDS: usize = 5;
const MIN_DENOMINATOR: f64 = 1e-12;

/// `[spectrum row, positive molecule row]` per record, from the frozen matrices.
pub fn joint_embed(ds: &PairedDataset, records: &[usize]) -> Result<Matrix> {
    let d1 = ds.spectra().dim();
    let d2 = ds.molecules().dim();
    let mut out = Matrix::zeros(records.len(), d1 + d2);
    for (o, &r) in records.iter().enumerate() {
        if r >= ds.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "record {r} out of range for {} records",
                ds.len()
            )));
        }
        let row = out.row_mut(o);
        for (dst, &v) in row[..d1].iter_mut().zip(ds.spectra().row(r)) {
            *dst = f64::from(v);
        }
        for (dst, &v) in row[d1..].iter_mut().zip(ds.molecules().row(ds.positive(r))) {
            *dst = f64::from(v);
        }
    }
    Ok(out)
}

/// Squared 2-Wasserstein distance between two sorted 1-D samples with
/// uniform weights, integrating the difference of the empirical quantile
/// functions exactly over the merged grid of CDF levels.
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        return s / n as f64;
    }
    // levels are counted in units of 1/(n·m): a's k-th level is k·m, b's is k·n
    let (n64, m64) = (n as u64, m as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0u64;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i as u64 + 1) * m64;
        let next_b = (j as u64 + 1) * n64;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        total += (next - pos) as f64 * d * d;
        pos = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    total / (n64 * m64) as f64
}

/// Unit directions drawn as normalized standard-normal vectors.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngState::new(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let n = libm::sqrt(dot(&v, &v));
            if n > 0.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

fn sorted_projection(m: &Matrix, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = m.row_iter().map(|r| dot(r, dir)).collect();
    p.sort_unstable_by(f64::total_cmp);
    p
}

/// Sliced 2-Wasserstein distance: square root of the mean squared 1-D W2
/// over `n_projections` random directions drawn from `seed`.
pub fn sliced_w2(a: &Matrix, b: &Matrix, n_projections: usize, seed: u64) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::DimMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    if n_projections == 0 {
        return Err(Error::ZeroProjections);
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let dirs = random_directions(a.cols(), n_projections, seed);
    let mut acc = 0.0;
    for dir in &dirs {
        acc += w2_squared_sorted(&sorted_projection(a, dir), &sorted_projection(b, dir));
    }
    Ok(libm::sqrt(acc / n_projections as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub shift_mean: f64,
    /// Sample standard deviation of the per-seed ratios.
    pub shift_std: f64,
    #[serde(rename = "numerators")]
    pub numerator_per_seed: Vec<f64>,
    #[serde(rename = "denominators")]
    pub denominator_per_seed: Vec<f64>,
    pub n_projections: usize,
    pub n_seeds: usize,
}

impl ShiftReport {
    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.numerator_per_seed
            .iter()
            .zip(&self.denominator_per_seed)
            .map(|(n, d)| n / d)
    }
}

/// Shift of `test` relative to `train`, over `n_seeds` seeds derived from
/// `base_seed`. Each seed redraws both the projection directions and the
/// train halving.
pub fn shift_metric(
    train: &Matrix,
    test: &Matrix,
    n_projections: usize,
    n_seeds: usize,
    base_seed: u64,
) -> Result<ShiftReport> {
    if train.rows() < 4 {
        return Err(Error::TooFewRows {
            needed: 4,
            got: train.rows(),
        });
    }
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("n_seeds must be positive".into()));
    }
    let mut numerators = Vec::with_capacity(n_seeds);
    let mut denominators = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds {
        let seed = derive_seed(base_seed, k as u64);
        let mut order: Vec<usize> = (0..train.rows()).collect();
        order.shuffle(&mut RngState::new(derive_seed(seed, 1)));
        let (h1, h2) = order.split_at(train.rows() / 2);
        let num = sliced_w2(train, test, n_projections, seed)?;
        let den = sliced_w2(&train.select_rows(h1), &train.select_rows(h2), n_projections, seed)?;
        if !(den >= MIN_DENOMINATOR) {
            return Err(Error::DegenerateDenominator { seed, value: den });
        }
        numerators.push(num);
        denominators.push(den);
    }
    let ratios: Vec<f64> = numerators.iter().zip(&denominators).map(|(n, d)| n / d).collect();
    let mean = ratios.iter().sum::<f64>() / n_seeds as f64;
    let std = if n_seeds > 1 {
        let ss: f64 = ratios.iter().map(|r| (r - mean) * (r - mean)).sum();
        libm::sqrt(ss / (n_seeds - 1) as f64)
    } else {
        0.0
    };
    Ok(ShiftReport {
        shift_mean: mean,
        shift_std: std,
        numerator_per_seed: numerators,
        denominator_per_seed: denominators,
        n_projections,
        n_seeds,
    })
}
