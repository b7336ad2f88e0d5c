//! Group-key train/val/test splits and leakage checks.
//!
//! A keyed split keeps every record sharing a group-key value (formula,
//! 2D InChIKey, scaffold, ...) in one part. Groups are visited in a seeded
//! shuffled order and poured into train, then val, then test until each
//! part reaches its record-count target, so part sizes are approximate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Key name for a split that ignores group keys.
pub const RANDOM_KEY: &str = "random";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Val, Part::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub key_name: String,
    /// Train, val and test fractions.
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            key_name: "formula".into(),
            fractions: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        for f in [a, b, c] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "split fraction {f} outside (0, 1)"
                )));
            }
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        if self.key_name.is_empty() {
            return Err(Error::InvalidConfig("empty split key".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub record_id: String,
    pub part: Part,
}

/// Part of every record, in dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub entries: Vec<SplitEntry>,
}

impl SplitAssignment {
    pub fn part_of(&self, record_id: &str) -> Option<Part> {
        self.entries
            .iter()
            .find(|e| e.record_id == record_id)
            .map(|e| e.part)
    }

    /// Dataset indices of the records in `part`, in dataset order.
    ///
    /// Fails if some record of `ds` has no assignment.
    pub fn indices(&self, ds: &PairedDataset, part: Part) -> Result<Vec<usize>> {
        let map: BTreeMap<&str, Part> = self
            .entries
            .iter()
            .map(|e| (e.record_id.as_str(), e.part))
            .collect();
        let mut out = Vec::new();
        for (i, m) in ds.meta().iter().enumerate() {
            match map.get(m.record_id.as_str()) {
                Some(&p) if p == part => out.push(i),
                Some(_) => {}
                None => {
                    return Err(Error::InvalidRecord {
                        record_id: m.record_id.clone(),
                        detail: "record missing from split assignment".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn count(&self, part: Part) -> usize {
        self.entries.iter().filter(|e| e.part == part).count()
    }
}

/// A key value found in more than one part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub key_value: String,
    pub parts: Vec<Part>,
}

/// Assigns every record of `ds` to train, val or test.
pub fn split_by_key(ds: &PairedDataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let n = ds.len();
    let (ft, fv, _) = spec.fractions;
    let mut rng = RngState::new(spec.seed);
    let mut parts = alloc::vec![Part::Test; n];

    if spec.key_name == RANDOM_KEY {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_train = libm::round(ft * n as f64) as usize;
        let n_val = (libm::round(fv * n as f64) as usize).min(n - n_train);
        for (pos, &i) in order.iter().enumerate() {
            parts[i] = if pos < n_train {
                Part::Train
            } else if pos < n_train + n_val {
                Part::Val
            } else {
                Part::Test
            };
        }
    } else {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, m) in ds.meta().iter().enumerate() {
            let v = m
                .group_keys
                .get(&spec.key_name)
                .ok_or_else(|| Error::MissingKey {
                    key: spec.key_name.clone(),
                    record_id: m.record_id.clone(),
                })?;
            groups.entry(v.as_str()).or_default().push(i);
        }
        let mut order: Vec<&Vec<usize>> = groups.values().collect();
        order.shuffle(&mut rng);
        let targets = [ft * n as f64, fv * n as f64];
        let mut counts = [0usize; 3];
        let mut p = 0;
        for members in order {
            while p < 2 && counts[p] as f64 >= targets[p] {
                p += 1;
            }
            for &i in members {
                parts[i] = Part::ALL[p];
            }
            counts[p] += members.len();
        }
    }

    let out = SplitAssignment {
        entries: ds
            .meta()
            .iter()
            .zip(parts)
            .map(|(m, part)| SplitEntry {
                record_id: m.record_id.clone(),
                part,
            })
            .collect(),
    };
    for part in Part::ALL {
        if n > 0 && out.count(part) == 0 {
            log::warn!(
                "split on {:?} left the {} part empty (indivisible groups)",
                spec.key_name,
                part.as_str()
            );
        }
    }
    Ok(out)
}

/// Every value of `key_name` whose records land in more than one part.
///
/// Records without the key or without an assignment are ignored.
pub fn verify_no_leakage(
    ds: &PairedDataset,
    assignment: &SplitAssignment,
    key_name: &str,
) -> Vec<LeakageViolation> {
    let map: BTreeMap<&str, Part> = assignment
        .entries
        .iter()
        .map(|e| (e.record_id.as_str(), e.part))
        .collect();
    let mut seen: BTreeMap<&str, BTreeSet<Part>> = BTreeMap::new();
    for m in ds.meta() {
        let (Some(v), Some(&p)) = (m.group_keys.get(key_name), map.get(m.record_id.as_str())) else {
            continue;
        };
        seen.entry(v.as_str()).or_default().insert(p);
    }
    seen.into_iter()
        .filter(|(_, parts)| parts.len() > 1)
        .map(|(v, parts)| LeakageViolation {
            key_value: v.into(),
            parts: parts.into_iter().collect(),
        })
        .collect()
}
