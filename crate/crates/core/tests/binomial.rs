use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use realchart::stats::{binomial_tail, upper_tail, upper_tails};

/// Row `n` of Pascal's triangle built by repeated addition.
fn pascal_row(n: usize) -> Vec<BigUint> {
    let mut row = vec![BigUint::one()];
    for _ in 0..n {
        let mut next = vec![BigUint::one(); row.len() + 1];
        for i in 1..row.len() {
            next[i] = &row[i - 1] + &row[i];
        }
        row = next;
    }
    row
}

fn exact(num: &BigUint, n: u64) -> f64 {
    // both fit comfortably for n <= 200 when scaled down together
    let shift = n.saturating_sub(900);
    (num >> shift).to_f64().unwrap() / 2f64.powi((n - shift) as i32)
}

#[test]
fn matches_pascal_oracle_up_to_200() {
    for n in 1..=200u64 {
        let row = pascal_row(n as usize);
        let mut acc = BigUint::zero();
        let mut oracle = vec![0.0; n as usize + 1];
        for g in (0..=n as usize).rev() {
            acc += &row[g];
            oracle[g] = exact(&acc, n);
        }
        for g in 0..=n {
            let tail = upper_tail(n, g).unwrap();
            let mut sum = BigUint::zero();
            for c in &row[g as usize..] {
                sum += c;
            }
            assert_eq!(tail.numerator(), &sum, "n={n} g={g}");
            assert!((binomial_tail(n, g).unwrap() - oracle[g as usize]).abs() <= 1e-15);
        }
    }
}

#[test]
fn row_agrees_with_pointwise() {
    for n in [1u64, 2, 35, 910, 2000] {
        let row = upper_tails(n).unwrap();
        for g in (0..=n).step_by(7) {
            assert_eq!(row[g as usize], binomial_tail(n, g).unwrap());
        }
    }
}

proptest! {
    #[test]
    fn complement_and_symmetry(n in 1u64..2000, frac in 0.0f64..1.0) {
        let g = ((n as f64) * frac) as u64 + 1;
        prop_assume!(g <= n);
        let upper = binomial_tail(n, g).unwrap();
        // Pr[X >= g] + Pr[X >= n - g + 1] = 1 by the symmetry X -> n - X
        let mirror = binomial_tail(n, n - g + 1).unwrap();
        prop_assert!((upper + mirror - 1.0).abs() <= 1e-12);
        prop_assert!(binomial_tail(n, g - 1).unwrap() >= upper);
    }
}
