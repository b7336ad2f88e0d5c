//! Synthetic paired datasets standing in for frozen encoder outputs.
//!
//! Molecules are Gaussian vectors; each adduct has a fixed random linear map
//! from molecule space to spectrum space, and a spectrum is that map applied
//! to its molecule plus isotropic noise. Molecules can be grouped into
//! isomer families that share a formula and an exact mass, with correlated
//! embeddings, which makes the mass-filtered candidate sets hard.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    CandidateEntry, CandidateTable, EmbeddingMatrix, PairedDataset, RecordMeta, RoleTag,
};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::RngState;

const ADDUCTS: [&str; 6] = ["[M+H]+", "[M+Na]+", "[M+K]+", "[M+NH4]+", "[M-H]-", "[M+Cl]-"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_molecules: usize,
    pub mol_dim: usize,
    pub ms_dim: usize,
    pub noise_sigma: f64,
    pub n_adducts: usize,
    pub ppm_tolerance: f64,
    /// Daltons.
    pub mass_range: (f64, f64),
    pub candidates_cap: usize,
    pub seed: u64,
    /// Molecules per formula family; 1 gives independent molecules.
    pub isomers_per_formula: usize,
    /// Expected cosine between two isomers' embeddings, in `[0, 1)`.
    pub isomer_similarity: f64,
    /// Range of the synthetic raw collision energies.
    pub ce_range: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_molecules: 500,
            mol_dim: 32,
            ms_dim: 48,
            noise_sigma: 0.1,
            n_adducts: 2,
            ppm_tolerance: 10.0,
            mass_range: (100.0, 1000.0),
            candidates_cap: 256,
            seed: 0,
            isomers_per_formula: 1,
            isomer_similarity: 0.0,
            ce_range: (10.0, 60.0),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_molecules == 0 || self.mol_dim == 0 || self.ms_dim == 0 || self.n_adducts == 0 {
            return bad("molecule count, dims and adduct count must be positive".into());
        }
        if self.candidates_cap == 0 || self.isomers_per_formula == 0 {
            return bad("candidates_cap and isomers_per_formula must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if !(self.ppm_tolerance > 0.0) {
            return bad(format!("ppm_tolerance {} must be positive", self.ppm_tolerance));
        }
        let (lo, hi) = self.mass_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("mass range ({lo}, {hi}) must be positive and increasing"));
        }
        if !(0.0..1.0).contains(&self.isomer_similarity) {
            return bad("isomer_similarity must lie in [0, 1)".into());
        }
        let (clo, chi) = self.ce_range;
        if !(clo.is_finite() && chi.is_finite() && chi >= clo) {
            return bad("ce_range must be finite and increasing".into());
        }
        Ok(())
    }

    pub fn adduct_labels(&self) -> Vec<String> {
        (0..self.n_adducts)
            .map(|a| match ADDUCTS.get(a) {
                Some(s) => String::from(*s),
                None => format!("[M+X{a}]"),
            })
            .collect()
    }
}

/// Generator parameters behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// One `ms_dim × mol_dim` map per adduct.
    pub adduct_maps: Vec<Matrix>,
    /// Formula family of each molecule.
    pub molecule_formula: Vec<usize>,
    pub molecule_masses: Vec<f64>,
    /// Molecule of each record.
    pub record_molecule: Vec<usize>,
    /// Adduct index of each record.
    pub record_adduct: Vec<usize>,
}

/// Catalog indices within `ppm` of `target_mass`, always including
/// `positive`; above `cap`, the positive plus a seeded uniform subsample.
/// Returned in ascending index order.
pub fn mass_filter_candidates(
    target_mass: f64,
    catalog_masses: &[f64],
    positive: usize,
    ppm: f64,
    cap: usize,
    rng: &mut RngState,
) -> Vec<usize> {
    let half_width = target_mass * ppm * 1e-6;
    let mut others: Vec<usize> = catalog_masses
        .iter()
        .enumerate()
        .filter(|&(j, &m)| j != positive && (m - target_mass).abs() <= half_width)
        .map(|(j, _)| j)
        .collect();
    if others.len() + 1 > cap {
        let keep = index::sample(rng, others.len(), cap.saturating_sub(1));
        let mut picked: Vec<usize> = keep.into_iter().map(|k| others[k]).collect();
        picked.sort_unstable();
        others = picked;
    }
    let at = others.partition_point(|&j| j < positive);
    others.insert(at, positive);
    others
}

/// Molecule-major records: molecule `j` under adduct `a` is record
/// `j · n_adducts + a`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<(PairedDataset, SyntheticTruth)> {
    cfg.validate()?;
    let root = RngState::new(cfg.seed);
    let n_mol = cfg.n_molecules;
    let n_formulas = n_mol.div_ceil(cfg.isomers_per_formula);

    let mut mass_rng = root.fork(1);
    let formula_mass: Vec<f64> = (0..n_formulas)
        .map(|_| mass_rng.uniform_range(cfg.mass_range.0, cfg.mass_range.1))
        .collect();
    let mut center_rng = root.fork(2);
    let centers: Vec<f64> = if cfg.isomer_similarity > 0.0 {
        (0..n_formulas * cfg.mol_dim).map(|_| center_rng.normal()).collect()
    } else {
        Vec::new()
    };

    let shared = libm::sqrt(cfg.isomer_similarity);
    let own = libm::sqrt(1.0 - cfg.isomer_similarity);
    let mut mol_rng = root.fork(3);
    let mut molecules = Vec::with_capacity(n_mol * cfg.mol_dim);
    let mut mol_f64 = Matrix::zeros(n_mol, cfg.mol_dim);
    let mut molecule_formula = Vec::with_capacity(n_mol);
    let mut molecule_masses = Vec::with_capacity(n_mol);
    for j in 0..n_mol {
        let f = j / cfg.isomers_per_formula;
        molecule_formula.push(f);
        molecule_masses.push(formula_mass[f]);
        let row = mol_f64.row_mut(j);
        for (d, v) in row.iter_mut().enumerate() {
            let z = mol_rng.normal();
            *v = if centers.is_empty() {
                z
            } else {
                shared * centers[f * cfg.mol_dim + d] + own * z
            };
            molecules.push(*v as f32);
        }
    }

    let mut map_rng = root.fork(4);
    let scale = 1.0 / libm::sqrt(cfg.mol_dim as f64);
    let adduct_maps: Vec<Matrix> = (0..cfg.n_adducts)
        .map(|_| {
            let data = (0..cfg.ms_dim * cfg.mol_dim)
                .map(|_| scale * map_rng.normal())
                .collect();
            Matrix::from_vec(cfg.ms_dim, cfg.mol_dim, data).expect("sized")
        })
        .collect();

    let labels = cfg.adduct_labels();
    let mut noise_rng = root.fork(5);
    let mut ce_rng = root.fork(6);
    let mut cand_rng = root.fork(7);
    let n_rec = n_mol * cfg.n_adducts;
    let mut spectra = Vec::with_capacity(n_rec * cfg.ms_dim);
    let mut meta = Vec::with_capacity(n_rec);
    let mut entries = Vec::with_capacity(n_rec);
    let mut record_molecule = Vec::with_capacity(n_rec);
    let mut record_adduct = Vec::with_capacity(n_rec);
    let formula_label = |f: usize| format!("F{f:05}");
    for j in 0..n_mol {
        let mol = mol_f64.row(j);
        let cands = mass_filter_candidates(
            molecule_masses[j],
            &molecule_masses,
            j,
            cfg.ppm_tolerance,
            cfg.candidates_cap,
            &mut cand_rng,
        );
        let formulas: Vec<String> = cands
            .iter()
            .map(|&c| formula_label(molecule_formula[c]))
            .collect();
        for (a, map) in adduct_maps.iter().enumerate() {
            for r in 0..cfg.ms_dim {
                let v = dot(map.row(r), mol) + cfg.noise_sigma * noise_rng.normal();
                spectra.push(v as f32);
            }
            let record_id = format!("rec{:06}", j * cfg.n_adducts + a);
            let mut m = RecordMeta::new(record_id.clone());
            m.adduct = Some(labels[a].clone());
            m.collision_energy = Some(ce_rng.uniform_range(cfg.ce_range.0, cfg.ce_range.1));
            m.mol_mass = Some(molecule_masses[j]);
            m.formula = Some(formula_label(molecule_formula[j]));
            m.group_keys
                .insert("formula".into(), formula_label(molecule_formula[j]));
            m.group_keys.insert("inchikey14".into(), format!("MOL{j:06}"));
            meta.push(m);
            entries.push(CandidateEntry {
                record_id,
                candidates: cands.clone(),
                positive: j,
                candidate_formulas: Some(formulas.clone()),
            });
            record_molecule.push(j);
            record_adduct.push(a);
        }
    }

    let ds = PairedDataset::new(
        EmbeddingMatrix::new(n_rec, cfg.ms_dim, spectra, RoleTag::Spectrum)?,
        EmbeddingMatrix::new(n_mol, cfg.mol_dim, molecules, RoleTag::Molecule)?,
        meta,
        CandidateTable { entries },
    )?;
    Ok((
        ds,
        SyntheticTruth {
            adduct_maps,
            molecule_formula,
            molecule_masses,
            record_molecule,
            record_adduct,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn window_arithmetic() {
        let masses = [500.0, 500.004, 500.006, 499.996, 499.994];
        let mut rng = RngState::new(0);
        let c = mass_filter_candidates(500.0, &masses, 0, 10.0, 256, &mut rng);
        assert_eq!(c, vec![0, 1, 3]);
    }

    #[test]
    fn lonely_positive() {
        let masses = [100.0, 200.0, 300.0];
        let c = mass_filter_candidates(200.0, &masses, 1, 10.0, 256, &mut RngState::new(0));
        assert_eq!(c, vec![1]);
    }

    #[test]
    fn cap_keeps_positive() {
        let masses = vec![250.0; 1000];
        let mut rng = RngState::new(3);
        let c = mass_filter_candidates(250.0, &masses, 777, 10.0, 256, &mut rng);
        assert_eq!(c.len(), 256);
        assert!(c.contains(&777));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generated_contracts() {
        let cfg = SyntheticConfig {
            n_molecules: 60,
            n_adducts: 3,
            ppm_tolerance: 5000.0,
            isomers_per_formula: 3,
            isomer_similarity: 0.5,
            ..SyntheticConfig::default()
        };
        let (ds, truth) = gen_synthetic(&cfg).unwrap();
        assert_eq!(ds.len(), 180);
        assert_eq!(ds.molecules().rows(), 60);
        for (i, e) in ds.candidates().entries.iter().enumerate() {
            assert!(e.candidates.contains(&e.positive));
            assert_eq!(e.positive, truth.record_molecule[i]);
        }
        // all adduct records of a molecule share its formula key
        for j in 0..60 {
            let keys: Vec<&String> = (0..3)
                .map(|a| &ds.meta()[j * 3 + a].group_keys["formula"])
                .collect();
            assert!(keys.iter().all(|k| *k == keys[0]));
        }
        let (again, _) = gen_synthetic(&cfg).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SyntheticConfig {
            ppm_tolerance: 0.0,
            ..SyntheticConfig::default()
        };
        assert!(matches!(gen_synthetic(&cfg), Err(Error::InvalidConfig(_))));
    }
}
