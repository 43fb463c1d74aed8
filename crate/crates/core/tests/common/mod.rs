//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use num_bigint::{BigInt, Sign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed-point fraction bits for the big-number softmax.
const SCALE: u64 = 320;

fn one() -> BigInt {
    BigInt::from(1) << SCALE
}

/// Exact fixed-point image of a finite f64 (truncated below 2^-SCALE).
fn to_fixed(x: f64) -> BigInt {
    assert!(x.is_finite());
    if x == 0.0 {
        return BigInt::from(0);
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    let shift = e + SCALE as i64;
    let m = BigInt::from(mantissa);
    let v = if shift >= 0 {
        m << shift as u64
    } else {
        m >> (-shift) as u64
    };
    if negative {
        -v
    } else {
        v
    }
}

/// e^x for fixed-point x <= 0: Taylor series on x / 2^12, then squaring.
fn exp_fixed(x: &BigInt) -> BigInt {
    const HALVINGS: u64 = 12;
    let y = x >> HALVINGS;
    let one = one();
    let mut sum = one.clone();
    let mut term = one;
    let mut k = 1u32;
    loop {
        term = ((&term * &y) >> SCALE) / BigInt::from(k);
        if term.sign() == Sign::NoSign {
            break;
        }
        sum += &term;
        k += 1;
    }
    for _ in 0..HALVINGS {
        sum = (&sum * &sum) >> SCALE;
    }
    sum
}

/// Fixed-point ratio num/den as f64, for 0 <= num <= den.
fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    let q: BigInt = (num << 64u64) / den;
    let (_, digits) = q.to_u64_digits();
    match digits.len() {
        0 => 0.0,
        1 => digits[0] as f64 / 2f64.powi(64),
        _ => 1.0,
    }
}

/// Softmax in arbitrary precision. Only the final quotient is rounded.
pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let fixed: Vec<BigInt> = z.iter().map(|&v| to_fixed(v)).collect();
    let max = fixed.iter().max().expect("non-empty").clone();
    let exps: Vec<BigInt> = fixed.iter().map(|v| exp_fixed(&(v - &max))).collect();
    let total: BigInt = exps.iter().sum();
    exps.iter().map(|e| ratio_to_f64(e, &total)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
}

/// Weighted Gini impurity times n, as an exact fraction (num, den).
fn impurity(children: &[[i128; 2]]) -> (i128, i128) {
    // sum_c (n_c - (a_c^2 + b_c^2) / n_c), brought over a common denominator.
    let mut num = 0i128;
    let mut den = 1i128;
    for c in children {
        let n = c[0] + c[1];
        let part_num = n * n - c[0] * c[0] - c[1] * c[1];
        num = num * n + part_num * den;
        den *= n;
    }
    (num, den)
}

fn less(a: (i128, i128), b: (i128, i128)) -> bool {
    a.0 * b.1 < b.0 * a.1
}

/// Best root split by brute force over every feature and every midpoint of
/// consecutive distinct values. Only splits that strictly reduce impurity
/// and leave `min_leaf` rows per side count; ties go to the lower feature,
/// then the lower threshold.
pub fn exhaustive_root_split(x: &[[f64; 2]], y: &[u8], min_leaf: usize) -> Option<OracleSplit> {
    let count = |rows: &mut dyn Iterator<Item = usize>| {
        let mut c = [0i128; 2];
        for r in rows {
            c[y[r] as usize] += 1;
        }
        c
    };
    let parent = count(&mut (0..y.len()));
    let parent_imp = impurity(&[parent]);
    let mut best: Option<((i128, i128), OracleSplit)> = None;
    for feature in 0..2 {
        let mut values: Vec<f64> = x.iter().map(|r| r[feature]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let threshold = (w[0] + w[1]) / 2.0;
            let left = count(&mut (0..y.len()).filter(|&r| x[r][feature] <= threshold));
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let (nl, nr) = (left[0] + left[1], right[0] + right[1]);
            if nl < min_leaf as i128 || nr < min_leaf as i128 {
                continue;
            }
            let imp = impurity(&[left, right]);
            if !less(imp, parent_imp) {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _)| less(imp, *b)) {
                best = Some((imp, OracleSplit { feature, threshold }));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// A labeled two-feature dataset of at most 32 rows.
pub struct SmallDataset {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<u8>,
}

/// Deterministic corpus of small datasets. Values are dyadic, so every
/// midpoint is exact, and coarse grids make ties common.
pub fn rf_corpus() -> Vec<SmallDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();
    for n in 2..=32usize {
        for variant in 0..40 {
            let grid = [2, 4, 8, 64, 1024][variant % 5];
            let x = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(0..=grid) as f64 / 4.0,
                        rng.gen_range(0..=grid) as f64 / 8.0,
                    ]
                })
                .collect();
            let fraud_bias = [0.1, 0.3, 0.5][variant % 3];
            let y = (0..n).map(|_| u8::from(rng.gen_bool(fraud_bias))).collect();
            out.push(SmallDataset { x, y });
        }
    }
    // Hand-built edge cases: duplicated feature columns, constant columns,
    // perfectly separable and perfectly mixed data.
    out.push(SmallDataset {
        x: (0..8).map(|i| [i as f64, i as f64]).collect(),
        y: vec![0, 0, 0, 0, 1, 1, 1, 1],
    });
    out.push(SmallDataset {
        x: (0..6).map(|i| [1.0, i as f64]).collect(),
        y: vec![0, 1, 0, 1, 0, 1],
    });
    out.push(SmallDataset {
        x: vec![[0.0, 0.0]; 5],
        y: vec![0, 1, 0, 1, 1],
    });
    out.push(SmallDataset {
        x: vec![[0.0, 0.0], [1.0, 0.2], [0.0, 1.0], [1.0, 0.9]],
        y: vec![0, 0, 1, 1],
    });
    out
}
