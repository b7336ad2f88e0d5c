//! Sliced Wasserstein distance and shift metric against closed forms and
//! brute-force optimal matchings.

use specalign_core::shift::{joint_embed, random_directions, shift_metric, sliced_w2, w2_squared_sorted};
use specalign_core::splits::{split_by_key, Part, SplitSpec};
use specalign_core::synthetic::{gen_synthetic, SyntheticConfig};
use specalign_core::{Error, Matrix, RngState};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngState::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn translate(m: &Matrix, delta: &[f64]) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        out.row_mut(r).iter_mut().zip(delta).for_each(|(v, d)| *v += d);
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Cheapest perfect matching of two equal-size 1-D samples, by enumeration.
fn brute_w2_squared(a: &[f64], b: &[f64]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| a.iter().zip(p).map(|(x, &j)| (x - b[j]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Uniform empirical measures of unequal sizes, replicated to a common
/// size so every atom carries the same mass.
fn replicated(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = a.len() / gcd(a.len(), b.len()) * b.len();
    let rep = |x: &[f64]| x.iter().flat_map(|&v| std::iter::repeat_n(v, l / x.len())).collect();
    (rep(a), rep(b))
}

#[test]
fn one_dimensional_oracle() {
    let mut rng = RngState::new(4);
    for _ in 0..200 {
        let n = 1 + (rng.uniform() * 6.0) as usize;
        let m = 1 + (rng.uniform() * 6.0) as usize;
        let mut a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut b: Vec<f64> = (0..m).map(|_| 2.0 * rng.normal()).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let got = w2_squared_sorted(&a, &b);
        let (ra, rb) = replicated(&a, &b);
        let expected = if ra.len() <= 8 {
            brute_w2_squared(&ra, &rb)
        } else {
            // Sorted pairing is optimal in 1-D for equal weights.
            ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ra.len() as f64
        };
        assert!((got - expected).abs() < 1e-9, "n={n} m={m}: {got} vs {expected}");
    }
}

#[test]
fn sliced_matches_projected_brute_force() {
    let a = gaussian(5, 3, 1);
    let b = translate(&gaussian(5, 3, 2), &[0.5, -1.0, 0.2]);
    let p = 7;
    let seed = 31;
    let mut acc = 0.0;
    for dir in random_directions(3, p, seed) {
        let proj = |m: &Matrix| -> Vec<f64> {
            m.row_iter().map(|r| r.iter().zip(&dir).map(|(x, d)| x * d).sum()).collect()
        };
        acc += brute_w2_squared(&proj(&a), &proj(&b));
    }
    let expected = (acc / p as f64).sqrt();
    assert!((sliced_w2(&a, &b, p, seed).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn identical_sets_are_at_zero_distance() {
    let a = gaussian(50, 4, 9);
    assert_eq!(sliced_w2(&a, &a, 100, 0).unwrap(), 0.0);
}

#[test]
fn translation_distance() {
    let (n, d) = (2000, 8);
    let a = gaussian(n, d, 10);
    let delta: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.5 } else { -0.5 }).collect();
    let b = translate(&gaussian(n, d, 11), &delta);
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let expected = norm / (d as f64).sqrt();
    let got = sliced_w2(&a, &b, 500, 12).unwrap();
    assert!((got - expected).abs() / expected < 0.10, "{got} vs {expected}");
}

#[test]
fn shift_grows_with_translation() {
    let (n, d) = (1000, 8);
    let train = gaussian(n, d, 20);
    let test = gaussian(n, d, 21);
    let dir: Vec<f64> = (0..d).map(|_| 1.0 / (d as f64).sqrt()).collect();
    let means: Vec<f64> = [0.5, 1.5, 4.0]
        .iter()
        .map(|&s| {
            let delta: Vec<f64> = dir.iter().map(|v| v * s).collect();
            shift_metric(&train, &translate(&test, &delta), 100, 5, 0).unwrap().shift_mean
        })
        .collect();
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}

#[test]
fn degenerate_train_is_rejected() {
    let train = Matrix::from_vec(6, 2, vec![1.0; 12]).unwrap();
    let test = gaussian(6, 2, 1);
    assert!(matches!(
        shift_metric(&train, &test, 10, 2, 0),
        Err(Error::DegenerateDenominator { .. })
    ));
}

#[test]
fn same_distribution_synthetic_shift() {
    let (ds, _) = gen_synthetic(&SyntheticConfig {
        n_molecules: 2000,
        n_adducts: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let split = split_by_key(
        &ds,
        &SplitSpec {
            key_name: "random".into(),
            fractions: (0.5, 0.25, 0.25),
            seed: 0,
        },
    )
    .unwrap();
    let train = joint_embed(&ds, &split.indices(&ds, Part::Train).unwrap()).unwrap();
    let held: Vec<usize> = [Part::Val, Part::Test]
        .iter()
        .flat_map(|&p| split.indices(&ds, p).unwrap())
        .collect();
    let test = joint_embed(&ds, &held).unwrap();
    assert_eq!((train.rows(), test.rows()), (2000, 2000));
    let report = shift_metric(&train, &test, 100, 5, 0).unwrap();
    eprintln!("same-distribution shift {:.4} ± {:.4}", report.shift_mean, report.shift_std);
    assert!((0.7..=1.3).contains(&report.shift_mean), "{report:?}");
}
