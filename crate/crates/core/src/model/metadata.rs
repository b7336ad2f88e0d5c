//! Adduct and collision-energy encodings concatenated to spectrum embeddings.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::RecordMeta;
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Width of each metadata encoding.
pub const META_DIM: usize = 128;
/// Upper end of the normalized collision-energy scale.
pub const CE_SCALE_MAX: f64 = 100.0;

const INIT_STD: f64 = 0.02;

/// Sinusoidal encoding of a normalized collision energy:
/// `v[2i] = sin(x / 10000^(2i/128))`, `v[2i+1] = cos(x / 10000^(2i/128))`.
pub fn sinusoidal_encode(x: f64) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("collision energy {x}")));
    }
    let mut v = vec![0.0; META_DIM];
    for i in 0..META_DIM / 2 {
        let freq = libm::pow(10000.0, (2 * i) as f64 / META_DIM as f64);
        let a = x / freq;
        v[2 * i] = libm::sin(a);
        v[2 * i + 1] = libm::cos(a);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetadataEncoder {
    /// Sorted, unique adduct labels; row `k` of `table` belongs to `vocab[k]`.
    pub vocab: Vec<String>,
    pub table: Vec<f64>,
    pub adduct_unknown: Vec<f64>,
    pub ce_unknown: Vec<f64>,
    /// Raw energies mapped linearly from `(min, max)` onto `[0, 100]`.
    pub ce_bounds: (f64, f64),
}

impl MetadataEncoder {
    pub fn new(vocab: Vec<String>, ce_bounds: (f64, f64), rng: &mut RngState) -> Self {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| INIT_STD * rng.normal()).collect() };
        let table = draw(vocab.len() * META_DIM);
        let adduct_unknown = draw(META_DIM);
        let ce_unknown = draw(META_DIM);
        Self {
            vocab,
            table,
            adduct_unknown,
            ce_unknown,
            ce_bounds,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            table: vec![0.0; self.table.len()],
            adduct_unknown: vec![0.0; META_DIM],
            ce_unknown: vec![0.0; META_DIM],
            ce_bounds: self.ce_bounds,
        }
    }

    /// Table row of `adduct`; `None` means the unknown embedding.
    pub fn slot(&self, adduct: Option<&str>) -> Option<usize> {
        let a = adduct?;
        self.vocab.binary_search_by(|v| v.as_str().cmp(a)).ok()
    }

    pub fn adduct_vector(&self, slot: Option<usize>) -> &[f64] {
        match slot {
            Some(k) => &self.table[k * META_DIM..(k + 1) * META_DIM],
            None => &self.adduct_unknown,
        }
    }

    pub fn adduct_vector_mut(&mut self, slot: Option<usize>) -> &mut [f64] {
        match slot {
            Some(k) => &mut self.table[k * META_DIM..(k + 1) * META_DIM],
            None => &mut self.adduct_unknown,
        }
    }

    /// Linear map of a raw energy onto `[0, 100]`, clipped.
    pub fn normalize_ce(&self, raw: f64) -> f64 {
        let (lo, hi) = self.ce_bounds;
        let x = (raw - lo) / (hi - lo) * CE_SCALE_MAX;
        x.clamp(0.0, CE_SCALE_MAX)
    }

    /// Collision-energy half of the encoding; `None` when the energy is
    /// missing (the learnable unknown vector is used instead).
    pub fn ce_encoding(&self, raw: Option<f64>) -> Option<Vec<f64>> {
        let raw = raw.filter(|v| v.is_finite())?;
        sinusoidal_encode(self.normalize_ce(raw)).ok()
    }
}

/// `concat(adduct_vec, ce_vec)`, 256 values.
pub fn encode_metadata(meta: &RecordMeta, enc: &MetadataEncoder) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * META_DIM);
    v.extend_from_slice(enc.adduct_vector(enc.slot(meta.adduct.as_deref())));
    match enc.ce_encoding(meta.collision_energy) {
        Some(ce) => v.extend_from_slice(&ce),
        None => v.extend_from_slice(&enc.ce_unknown),
    }
    v
}
