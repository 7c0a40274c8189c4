use bayes_concepts_core::interaction::{self, harsanyi_transform, zeta_reconstruct, InteractionTable};
use bayes_concepts_core::rng;
use proptest::prelude::*;

fn direct_dividends(raw: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    for (s, o) in out.iter_mut().enumerate() {
        // every t ⊆ s, enumerated by the standard submask walk
        let mut t = s;
        loop {
            let sign = if (s.count_ones() - t.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            *o += sign * raw[t];
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
    }
    out
}

fn random_table(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..1usize << n).map(|_| rng::uniform(&mut r, -3.0, 3.0)).collect()
}

fn table(raw: &[f64]) -> InteractionTable {
    harsanyi_transform(raw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_transform_matches_direct_sum(n in 0usize..=12, seed in any::<u64>()) {
        let raw = random_table(n, seed);
        let fast = table(&raw);
        for (a, b) in fast.values().iter().zip(direct_dividends(&raw)) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn zeta_inverts_mobius(n in 0usize..=12, seed in any::<u64>()) {
        let raw = random_table(n, seed);
        let back = zeta_reconstruct(&table(&raw));
        for (a, b) in back.iter().zip(&raw) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn transform_is_linear(n in 0usize..=8, seed in any::<u64>(), a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let v1 = random_table(n, seed);
        let v2 = random_table(n, seed ^ 0x9e37);
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
        let (t1, t2, tm) = (table(&v1), table(&v2), table(&mix));
        for m in 0..tm.len() {
            let expect = a * t1.get(m) + b * t2.get(m);
            prop_assert!((tm.get(m) - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn dummy_variable_has_no_interactions(n in 1usize..=8, dummy in 0usize..8, seed in any::<u64>()) {
        let dummy = dummy % n;
        let base = random_table(n, seed);
        // v(T) only depends on T without the dummy bit
        let raw: Vec<f64> = (0..1usize << n).map(|m| base[m & !(1 << dummy)]).collect();
        let t = table(&raw);
        for m in 0..t.len() {
            if m >> dummy & 1 == 1 {
                prop_assert!(t.get(m).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn additive_functions_only_have_singletons(weights in prop::collection::vec(-2.0f64..2.0, 1..=6)) {
        let n = weights.len();
        let raw: Vec<f64> = (0..1usize << n)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| weights[i]).sum())
            .collect();
        let t = table(&raw);
        for m in 1..t.len() {
            let expect = if m.count_ones() == 1 { weights[m.trailing_zeros() as usize] } else { 0.0 };
            prop_assert!((t.get(m) - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn two_variable_worked_example() {
    let t = table(&[0.0, 1.0, 2.0, 5.0]);
    assert_eq!(t.values(), &[0.0, 1.0, 2.0, 2.0]);
    assert_eq!(zeta_reconstruct(&t), vec![0.0, 1.0, 2.0, 5.0]);
}

#[test]
fn constant_game_keeps_only_the_empty_set() {
    let t = table(&[4.5; 16]);
    assert_eq!(t.get(0), 4.5);
    assert!(t.values()[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn single_pair_dividend_reconstructs_an_and() {
    let mut values = vec![0.0; 8];
    values[0b011] = 2.5;
    let raw = {
        let mut v = values.clone();
        interaction::zeta_in_place(&mut v);
        v
    };
    for (m, v) in raw.iter().enumerate() {
        assert_eq!(*v, if m & 0b011 == 0b011 { 2.5 } else { 0.0 });
    }
}

#[test]
fn non_power_of_two_input_is_rejected() {
    assert!(harsanyi_transform(&[1.0, 2.0, 3.0]).is_err());
}
