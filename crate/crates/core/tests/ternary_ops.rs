use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvc_core::compress::TernaryTensor;
use tvc_core::ternary_ops::{self, BitmaskPair};
use tvc_core::Error;

fn cells_to_tensor(dim: usize, cells: &[i8], scale: f32) -> TernaryTensor {
    let (mut indices, mut signs) = (Vec::new(), Vec::new());
    for (i, &c) in cells.iter().enumerate().take(dim) {
        if c != 0 {
            indices.push(i as u64);
            signs.push(c);
        }
    }
    TernaryTensor::new("t", dim as u64, indices, signs, scale).unwrap()
}

fn pair_strategy() -> impl Strategy<Value = (TernaryTensor, TernaryTensor)> {
    (1usize..400).prop_flat_map(|dim| {
        let cells = prop::collection::vec(-1i8..=1, dim);
        (cells.clone(), cells, 0.0f32..8.0, 0.0f32..8.0).prop_map(move |(a, b, sa, sb)| {
            (cells_to_tensor(dim, &a, sa), cells_to_tensor(dim, &b, sb))
        })
    })
}

proptest! {
    #[test]
    fn dot_is_symmetric_and_bounded((ta, tb) in pair_strategy()) {
        let (a, b) = (BitmaskPair::from_ternary(&ta), BitmaskPair::from_ternary(&tb));
        let ab = ternary_ops::dot(&a, &b).unwrap();
        prop_assert_eq!(ab, ternary_ops::dot(&b, &a).unwrap());
        let aa = ternary_ops::dot(&a, &a).unwrap();
        let s = ta.scale as f64;
        prop_assert_eq!(aa, s * s * ta.nnz() as f64);
        prop_assert!(aa >= 0.0);
        prop_assert!(ab * ab <= aa * ternary_ops::dot(&b, &b).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn kernels_match_dense((ta, tb) in pair_strategy()) {
        let (a, b) = (BitmaskPair::from_ternary(&ta), BitmaskPair::from_ternary(&tb));
        let (da, db) = (ta.to_dense(), tb.to_dense());
        let count: i64 = da.iter().zip(&db).map(|(x, y)| (x.signum() * y.signum()) as i64 * (*x != 0.0 && *y != 0.0) as i64).sum();
        prop_assert_eq!(ternary_ops::dot(&a, &b).unwrap(), ta.scale as f64 * tb.scale as f64 * count as f64);
        let sign = |x: f32| (x > 0.0) as i64 - (x < 0.0) as i64;
        let hamming: i64 = da.iter().zip(&db).map(|(&x, &y)| (sign(x) - sign(y)).abs()).sum();
        prop_assert_eq!(ternary_ops::sign_distance(&a, &b).unwrap(), hamming as u64);
        let l2 = da.iter().zip(&db).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt();
        let got = ternary_ops::scaled_l2_distance(&a, &b).unwrap();
        prop_assert!((got - l2).abs() <= 1e-12 * l2.max(1e-300), "{} vs {}", got, l2);
        let acc = ternary_ops::accumulate(&[a.clone(), b.clone()]).unwrap();
        let expect: Vec<f32> = da.iter().zip(&db).map(|(x, y)| (0.0 + x) + y).collect();
        prop_assert_eq!(acc, expect);
    }

    #[test]
    fn bitmask_form_round_trips((ta, _) in pair_strategy()) {
        let p = BitmaskPair::from_ternary(&ta);
        prop_assert_eq!(p.to_ternary("t"), ta.clone());
        prop_assert_eq!(p.negated().negated(), p.clone());
        prop_assert_eq!(ternary_ops::dot(&p, &p.negated()).unwrap(), -ternary_ops::dot(&p, &p).unwrap());
    }
}

#[test]
fn distance_to_self_and_negation() {
    let t = TernaryTensor::new("t", 130, vec![0, 64, 129], vec![1, -1, 1], 1.5).unwrap();
    let p = BitmaskPair::from_ternary(&t);
    assert_eq!(ternary_ops::sign_distance(&p, &p).unwrap(), 0);
    assert_eq!(ternary_ops::scaled_l2_distance(&p, &p).unwrap(), 0.0);
    assert_eq!(ternary_ops::sign_distance(&p, &p.negated()).unwrap(), 6);
    assert_eq!(ternary_ops::scaled_l2_distance(&p, &p.negated()).unwrap(), (3.0f64 * 9.0).sqrt());
}

#[test]
fn mismatched_and_empty_inputs() {
    let a = BitmaskPair::from_ternary(&TernaryTensor::new("a", 10, vec![], vec![], 1.0).unwrap());
    let b = BitmaskPair::from_ternary(&TernaryTensor::new("b", 11, vec![], vec![], 1.0).unwrap());
    assert!(matches!(ternary_ops::dot(&a, &b), Err(Error::DimMismatch(10, 11))));
    assert!(matches!(ternary_ops::sign_distance(&a, &b), Err(Error::DimMismatch(..))));
    assert!(matches!(ternary_ops::scaled_l2_distance(&a, &b), Err(Error::DimMismatch(..))));
    assert!(matches!(ternary_ops::accumulate(&[a, b]), Err(Error::DimMismatch(..))));
    assert!(matches!(ternary_ops::accumulate(&[]), Err(Error::EmptyList)));
}

/// Informational speed comparison at d = 2^24; run with `--ignored`.
#[test]
#[ignore]
fn dot_speed_against_dense() {
    let d = 1usize << 24;
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut make = || {
        let (mut idx, mut signs) = (Vec::new(), Vec::new());
        for i in 0..d as u64 {
            let x: u8 = r.gen();
            if x < 13 {
                idx.push(i);
                signs.push(if x & 1 == 0 { 1 } else { -1 });
            }
        }
        TernaryTensor::new("t", d as u64, idx, signs, 0.3).unwrap()
    };
    let (ta, tb) = (make(), make());
    let (a, b) = (BitmaskPair::from_ternary(&ta), BitmaskPair::from_ternary(&tb));
    let (da, db) = (ta.to_dense(), tb.to_dense());
    let start = Instant::now();
    let fast = ternary_ops::dot(&a, &b).unwrap();
    let t_fast = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let slow: f64 = da.iter().zip(&db).map(|(&x, &y)| x as f64 * y as f64).sum();
    let t_slow = start.elapsed().as_secs_f64();
    println!("dot {fast} vs dense {slow}: {:.1}x faster", t_slow / t_fast);
}
