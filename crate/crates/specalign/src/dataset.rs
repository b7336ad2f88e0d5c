use std::path::{Path, PathBuf};

use specalign_core::{CandidateEntry, CandidateTable, PairedDataset, RecordMeta, RoleTag};

use crate::emb::{read_embedding_file, write_embedding_file};
use crate::error::Result;
use crate::jsonl::{read_jsonl, write_jsonl};

/// The four files of a paired dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub spectra: PathBuf,
    pub molecules: PathBuf,
    pub meta: PathBuf,
    pub candidates: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            spectra: d.join("spectra.emb"),
            molecules: d.join("molecules.emb"),
            meta: d.join("meta.jsonl"),
            candidates: d.join("candidates.jsonl"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.spectra, &self.molecules, &self.meta, &self.candidates]
    }
}

/// Reads and fully cross-validates a dataset; the first violated invariant
/// is returned as a typed error.
pub fn load_dataset(paths: &DatasetPaths) -> Result<PairedDataset> {
    let spectra = read_embedding_file(&paths.spectra, RoleTag::Spectrum)?;
    let molecules = read_embedding_file(&paths.molecules, RoleTag::Molecule)?;
    let meta: Vec<RecordMeta> = read_jsonl(&paths.meta)?;
    let entries: Vec<CandidateEntry> = read_jsonl(&paths.candidates)?;
    Ok(PairedDataset::new(
        spectra,
        molecules,
        meta,
        CandidateTable { entries },
    )?)
}

pub fn save_dataset(ds: &PairedDataset, paths: &DatasetPaths) -> Result<()> {
    write_embedding_file(ds.spectra(), &paths.spectra)?;
    write_embedding_file(ds.molecules(), &paths.molecules)?;
    write_jsonl(&paths.meta, ds.meta())?;
    write_jsonl(&paths.candidates, &ds.candidates().entries)
}
