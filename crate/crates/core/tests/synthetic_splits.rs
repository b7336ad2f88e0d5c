//! Synthetic generator contracts and group-key splits.

use specalign_core::splits::{split_by_key, verify_no_leakage, Part, SplitSpec};
use specalign_core::synthetic::{gen_synthetic, mass_filter_candidates, SyntheticConfig};
use specalign_core::{Error, RngState};

fn spec(key: &str, seed: u64) -> SplitSpec {
    SplitSpec {
        key_name: key.into(),
        fractions: (0.8, 0.1, 0.1),
        seed,
    }
}

fn multi_adduct() -> specalign_core::PairedDataset {
    gen_synthetic(&SyntheticConfig {
        n_molecules: 300,
        n_adducts: 3,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .0
}

#[test]
fn formula_split_is_clean_random_split_leaks() {
    let ds = multi_adduct();
    let keyed = split_by_key(&ds, &spec("formula", 1)).unwrap();
    assert!(verify_no_leakage(&ds, &keyed, "formula").is_empty());
    let random = split_by_key(&ds, &spec("random", 1)).unwrap();
    let leaks = verify_no_leakage(&ds, &random, "formula");
    assert!(!leaks.is_empty());
    assert!(leaks.iter().all(|v| v.parts.len() > 1));
}

#[test]
fn split_is_total_and_near_target() {
    let ds = multi_adduct();
    let a = split_by_key(&ds, &spec("formula", 3)).unwrap();
    let n = ds.len();
    assert_eq!(Part::ALL.iter().map(|&p| a.count(p)).sum::<usize>(), n);
    // Groups hold three records; each part is within one group of its target.
    for (p, f) in Part::ALL.iter().zip([0.8, 0.1, 0.1]) {
        let c = a.count(*p) as f64;
        assert!((c - f * n as f64).abs() <= 3.0, "{p:?}: {c}");
    }
}

#[test]
fn split_determinism_and_variability() {
    let ds = multi_adduct();
    let a = split_by_key(&ds, &spec("formula", 5)).unwrap();
    assert_eq!(a, split_by_key(&ds, &spec("formula", 5)).unwrap());
    assert_ne!(a, split_by_key(&ds, &spec("formula", 6)).unwrap());
}

#[test]
fn moved_record_is_one_violation() {
    let ds = multi_adduct();
    let mut a = split_by_key(&ds, &spec("inchikey14", 2)).unwrap();
    let e = &mut a.entries[0];
    e.part = if e.part == Part::Train { Part::Test } else { Part::Train };
    let v = verify_no_leakage(&ds, &a, "inchikey14");
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].key_value, "MOL000000");
}

#[test]
fn missing_key() {
    let ds = multi_adduct();
    assert!(matches!(
        split_by_key(&ds, &spec("scaffold", 0)),
        Err(Error::MissingKey { .. })
    ));
}

#[test]
fn generator_determinism_and_sizes() {
    let cfg = SyntheticConfig {
        n_molecules: 120,
        n_adducts: 2,
        seed: 9,
        ..SyntheticConfig::default()
    };
    let (a, ta) = gen_synthetic(&cfg).unwrap();
    let (b, tb) = gen_synthetic(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(a.len(), 240);
    assert_eq!(a.molecules().rows(), 120);
    assert_eq!((a.spectra().dim(), a.molecules().dim()), (48, 32));
    for i in 0..a.len() {
        assert!(a.entry(i).candidates.contains(&a.positive(i)));
    }
    // Records of one molecule share the formula key across adducts.
    for j in 0..120 {
        assert_eq!(
            a.meta()[2 * j].group_keys["formula"],
            a.meta()[2 * j + 1].group_keys["formula"]
        );
    }
}

/// Solves `A x = b` for a small dense system by partial-pivot elimination.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                let (ac, bc) = (a[c].clone(), b[c].clone());
                a[r].iter_mut().zip(&ac).for_each(|(x, y)| *x -= f * y);
                b[r].iter_mut().zip(&bc).for_each(|(x, y)| *x -= f * y);
            }
        }
    }
    (0..n).map(|r| b[r].iter().map(|v| v / a[r][r]).collect()).collect()
}

#[test]
fn noiseless_single_adduct_is_linearly_invertible() {
    let (ds, truth) = gen_synthetic(&SyntheticConfig {
        n_molecules: 200,
        n_adducts: 1,
        noise_sigma: 0.0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    // Least-squares probe mol = P · ms with P = (AᵀA)⁻¹Aᵀ, A the adduct map.
    let a = &truth.adduct_maps[0];
    let (ms, md) = (a.rows(), a.cols());
    let ata: Vec<Vec<f64>> = (0..md)
        .map(|i| (0..md).map(|j| (0..ms).map(|r| a.get(r, i) * a.get(r, j)).sum()).collect())
        .collect();
    let at: Vec<Vec<f64>> = (0..md).map(|i| (0..ms).map(|r| a.get(r, i)).collect()).collect();
    let probe = solve(ata, at);
    let mut worst = 0.0f64;
    for rec in 0..ds.len() {
        let s = ds.spectra().row(rec);
        let mol = ds.molecules().row(ds.positive(rec));
        for (d, p) in probe.iter().enumerate() {
            let rec_v: f64 = p.iter().zip(s).map(|(w, &x)| w * f64::from(x)).sum();
            worst = worst.max((rec_v - f64::from(mol[d])).abs());
        }
    }
    // Only f32 storage rounding remains.
    assert!(worst < 1e-4, "worst reconstruction error {worst:e}");
}

#[test]
fn mass_filter_matches_linear_scan() {
    let mut rng = RngState::new(13);
    let masses: Vec<f64> = (0..5000).map(|_| rng.uniform_range(200.0, 260.0)).collect();
    for q in 0..100 {
        let pos = q * 37;
        let ppm = 10.0 + 40.0 * rng.uniform();
        let got = mass_filter_candidates(masses[pos], &masses, pos, ppm, usize::MAX, &mut rng);
        let tol = masses[pos] * ppm * 1e-6;
        let expected: Vec<usize> =
            (0..masses.len()).filter(|&j| (masses[j] - masses[pos]).abs() <= tol).collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn mass_filter_is_permutation_equivariant() {
    let mut rng = RngState::new(14);
    let masses: Vec<f64> = (0..800).map(|_| rng.uniform_range(100.0, 110.0)).collect();
    let perm: Vec<usize> = (0..800).rev().collect();
    let permuted: Vec<f64> = perm.iter().map(|&j| masses[j]).collect();
    let a = mass_filter_candidates(masses[5], &masses, 5, 300.0, usize::MAX, &mut rng);
    let mut b: Vec<usize> = mass_filter_candidates(permuted[794], &permuted, 794, 300.0, usize::MAX, &mut rng)
        .into_iter()
        .map(|j| perm[j])
        .collect();
    b.sort_unstable();
    assert_eq!(a, b);
}
