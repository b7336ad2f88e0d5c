//! Ranking, Recall@k, negative sampling and untrained-model evaluation
//! against brute-force and statistical references.

use specalign_core::retrieval::{evaluate, rank_positive, recall_at_k, EvalOptions};
use specalign_core::train::sample_negatives;
use specalign_core::{
    AlignmentModel, CandidateEntry, CandidateTable, EmbeddingMatrix, Error, ModelConfig,
    PairedDataset, RecordMeta, RngState, RoleTag,
};

/// Position of the positive after a stable descending sort in which the
/// positive is placed after every candidate with an equal score.
fn sorted_rank(scores: &[f64], slot: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == slot).cmp(&(b == slot)))
    });
    order.iter().position(|&j| j == slot).unwrap() + 1
}

#[test]
fn rank_and_recall_match_sort_oracle() {
    let mut rng = RngState::new(2024);
    let mut ranks = Vec::new();
    let mut oracle = Vec::new();
    for _ in 0..10_000 {
        let n = 1 + (rng.uniform() * 300.0) as usize;
        // Coarse integer scores force frequent ties.
        let coarse = rng.uniform() < 0.5;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    (rng.uniform() * 5.0).floor()
                } else {
                    rng.normal()
                }
            })
            .collect();
        let slot = (rng.uniform() * n as f64) as usize;
        ranks.push(rank_positive(&scores, slot));
        oracle.push(sorted_rank(&scores, slot));
    }
    assert_eq!(ranks, oracle);
    for k in [1, 2, 5, 20, 100, 300] {
        let hits = oracle.iter().filter(|&&r| r <= k).count();
        assert_eq!(recall_at_k(&ranks, k).unwrap(), hits as f64 / oracle.len() as f64);
    }
}

#[test]
fn recall_errors() {
    assert_eq!(recall_at_k(&[], 1), Err(Error::EmptyInput));
    assert!(matches!(recall_at_k(&[1], 0), Err(Error::InvalidConfig(_))));
}

/// Inverse standard normal CDF upper point used by the Wilson-Hilferty
/// approximation of the chi-square quantile.
fn chi2_quantile(df: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn negatives_are_uniform() {
    let n_neg = 255usize;
    let k = 128usize;
    let draws = 10_000usize;
    let entry = CandidateEntry {
        record_id: "r".into(),
        candidates: (0..=n_neg).collect(),
        positive: 100,
        candidate_formulas: None,
    };
    let mut counts = vec![0usize; n_neg + 1];
    let mut rng = RngState::new(77);
    for _ in 0..draws {
        let block = sample_negatives(&entry, k, &mut rng);
        assert_eq!(block.len(), k + 1);
        assert_eq!(block[0], 100);
        for &c in &block[1..] {
            counts[c] += 1;
        }
    }
    assert_eq!(counts[100], 0);
    // Each negative is included with probability p = k/n per draw, so its
    // count is Binomial(draws, p); normalizing by that variance gives a
    // chi-square statistic with n - 1 degrees of freedom (the total is fixed).
    let p = k as f64 / n_neg as f64;
    let mean = draws as f64 * p;
    let var = mean * (1.0 - p);
    let stat: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != 100)
        .map(|(_, &o)| (o as f64 - mean).powi(2) / var)
        .sum();
    // p-value > 0.01 ⇔ statistic below the 0.99 quantile (z = 2.3263).
    let critical = chi2_quantile((n_neg - 1) as f64, 2.326_347_874);
    assert!(stat < critical, "chi-square {stat:.1} ≥ {critical:.1}");
}

/// Spectra and molecules drawn independently, so no model can do better
/// than chance on average.
fn unrelated_dataset(n_records: usize, catalog: usize, per_record: usize, seed: u64) -> PairedDataset {
    let mut rng = RngState::new(seed);
    let emb = |rows: usize, dim: usize, role, rng: &mut RngState| {
        let data = (0..rows * dim).map(|_| rng.normal() as f32).collect();
        EmbeddingMatrix::new(rows, dim, data, role).unwrap()
    };
    let spectra = emb(n_records, 12, RoleTag::Spectrum, &mut rng);
    let molecules = emb(catalog, 10, RoleTag::Molecule, &mut rng);
    let mut meta = Vec::new();
    let mut entries = Vec::new();
    for i in 0..n_records {
        let id = format!("r{i}");
        let mut m = RecordMeta::new(&id);
        m.adduct = Some("[M+H]+".into());
        m.collision_energy = Some(30.0);
        meta.push(m);
        let mut pool: Vec<usize> = (0..catalog).collect();
        for j in 0..per_record {
            let pick = j + (rng.uniform() * (catalog - j) as f64) as usize;
            pool.swap(j, pick);
        }
        let mut candidates = pool[..per_record].to_vec();
        candidates.sort_unstable();
        entries.push(CandidateEntry {
            record_id: id,
            positive: candidates[(rng.uniform() * per_record as f64) as usize],
            candidates,
            candidate_formulas: None,
        });
    }
    PairedDataset::new(spectra, molecules, meta, CandidateTable { entries }).unwrap()
}

#[test]
fn untrained_model_is_at_chance() {
    let per_record = 20;
    let n = 2000;
    let ds = unrelated_dataset(n, 500, per_record, 8);
    let cfg = ModelConfig {
        hidden_layers: 1,
        hidden_dim: 32,
        shared_dim: 16,
        adduct_vocab: vec!["[M+H]+".into()],
        ..ModelConfig::new(12, 10)
    };
    let model = AlignmentModel::new(cfg).unwrap();
    let report = evaluate(&model, &ds, &EvalOptions::default()).unwrap();
    // Recall@k of one record is Bernoulli(k / per_record); four binomial
    // standard deviations of the mean.
    for k in [1usize, 5] {
        let p = k as f64 / per_record as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        let r = report.recall(k).unwrap();
        assert!((r - p).abs() < 4.0 * sd, "R@{k} = {r}, chance {p} ± {sd}");
    }
    assert_eq!(report.recall(20), Some(1.0));
    assert_eq!(report.mean_candidates_per_record, per_record as f64);
}

fn formula_dataset(with_formulas: bool) -> PairedDataset {
    let ds = unrelated_dataset(3, 8, 4, 3);
    let (spectra, molecules, mut meta, mut table) = ds.into_parts();
    for (i, (m, e)) in meta.iter_mut().zip(&mut table.entries).enumerate() {
        m.formula = Some("C6H12O6".into());
        if with_formulas {
            // Positive and one other candidate share the formula.
            let other = e.candidates.iter().position(|&c| c != e.positive).unwrap();
            e.candidate_formulas = Some(
                e.candidates
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        if c == e.positive || j == other {
                            "C6H12O6".into()
                        } else {
                            format!("C{}H4", i + j)
                        }
                    })
                    .collect(),
            );
        }
    }
    PairedDataset::new(spectra, molecules, meta, table).unwrap()
}

#[test]
fn formula_filter_restricts_candidates() {
    let ds = formula_dataset(true);
    let model = AlignmentModel::new(ModelConfig {
        hidden_layers: 1,
        hidden_dim: 8,
        shared_dim: 4,
        adduct_vocab: vec!["[M+H]+".into()],
        ..ModelConfig::new(12, 10)
    })
    .unwrap();
    let opts = EvalOptions {
        filter_formula: true,
        ..EvalOptions::default()
    };
    let report = evaluate(&model, &ds, &opts).unwrap();
    assert_eq!(report.mean_candidates_per_record, 2.0);
    assert!(report.filtered);
    assert_eq!(report.recall(5), Some(1.0));

    let bare = formula_dataset(false);
    assert!(matches!(
        evaluate(&model, &bare, &opts),
        Err(Error::MissingFormula { .. })
    ));
    let unfiltered = evaluate(&model, &bare, &EvalOptions::default()).unwrap();
    assert_eq!(unfiltered.mean_candidates_per_record, 4.0);
}
