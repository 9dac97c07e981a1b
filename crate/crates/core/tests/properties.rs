//! Property tests for the structural invariants: rate scaling, the two
//! finite-dimensional rate forms, block decomposition, the tau/alpha bracket,
//! and bound monotonicity.

use mdplab_core::dependence::blocking::{block_sums, BlockScheme};
use mdplab_core::dependence::chain::FiniteMarkovChain;
use mdplab_core::paths::{rate_i, rate_im, PiecewisePath, RateForm, RatePartition};
use proptest::prelude::*;

fn linear_path_strategy() -> impl Strategy<Value = PiecewisePath> {
    // random interior knots and values, assembled into a valid linear path
    (2usize..8).prop_flat_map(|segments| {
        (
            proptest::collection::vec(0.05f64..0.95, segments - 1),
            proptest::collection::vec(-3.0f64..3.0, segments),
        )
            .prop_map(|(mut interior, values)| {
                interior.sort_by(f64::total_cmp);
                interior.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                let mut knots = vec![0.0];
                knots.extend(interior.iter());
                knots.push(1.0);
                let mut vals = vec![0.0];
                vals.extend(values.iter().take(knots.len() - 1));
                while vals.len() < knots.len() {
                    vals.push(0.0);
                }
                PiecewisePath::linear(knots, vals).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn rate_scales_quadratically(path in linear_path_strategy(), c in -4.0f64..4.0) {
        let base = rate_i(&path);
        let scaled = rate_i(&path.clone().with_scale(c));
        let want = c * c * base;
        prop_assert!((scaled - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn rate_im_forms_agree_under_difference_map(
        times in proptest::collection::vec(0.01f64..1.0, 1..6),
        levels in proptest::collection::vec(-2.0f64..2.0, 6),
    ) {
        let mut times = times;
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        let m = times.len();
        let levels: Vec<f64> = levels.into_iter().take(m).collect();
        prop_assume!(levels.len() == m);
        let mut prev = 0.0;
        let increments: Vec<f64> = levels
            .iter()
            .map(|&u| {
                let d = u - prev;
                prev = u;
                d
            })
            .collect();
        let a = rate_im(
            &RatePartition { times: times.clone(), levels },
            RateForm::Levels,
        )
        .unwrap();
        let b = rate_im(
            &RatePartition { times, levels: increments },
            RateForm::Increments,
        )
        .unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn block_decomposition_is_exact(
        series in proptest::collection::vec(-10.0f64..10.0, 30..120),
        p in 2u64..8,
        q in 1u64..4,
        t in 0.0f64..1.0,
    ) {
        let n = series.len() as u64;
        prop_assume!(p + q <= n);
        let k = n / (p + q);
        prop_assume!(k >= 1);
        let scheme = BlockScheme { n, p, q, k, epsilon: 0.5 };
        let bs = block_sums(&series, &scheme, &[t, 1.0]).unwrap();
        // recompute the identity directly
        let nt = (n as f64 * t).floor() as usize;
        let kt = (k as f64 * t).floor() as usize;
        let prefix: f64 = series[..nt].iter().sum();
        let mut lhs = bs.remainder[0];
        for j in 0..kt {
            lhs += bs.y[j] + bs.z[j];
        }
        let scale = 1e-9 * n as f64 * 10.0;
        prop_assert!((lhs - prefix).abs() <= scale, "{lhs} vs {prefix}");
        // and the whole-series version at t = 1
        let total: f64 = series.iter().sum();
        let mut whole = bs.remainder[1];
        for j in 0..k as usize {
            whole += bs.y[j] + bs.z[j];
        }
        prop_assert!((whole - total).abs() <= scale);
    }

    #[test]
    fn tau_bracket_on_random_chains(
        rows in proptest::collection::vec(
            proptest::collection::vec(0.05f64..1.0, 3),
            3,
        ),
        values in proptest::collection::vec(-2.0f64..2.0, 3),
        lag in 1usize..6,
    ) {
        // normalize rows into a 3-state stochastic matrix
        let transition: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        prop_assume!(values.iter().any(|v| v.abs() > 0.1));
        let chain = match FiniteMarkovChain::new_centered(values, transition) {
            Ok(c) => c,
            Err(_) => return Ok(()), // reducible draw
        };
        prop_assume!(chain.sup_norm() > 1e-6);
        let tau = chain.tau1_exact(lag).unwrap();
        let alpha = chain.alpha_exact(lag).unwrap();
        prop_assert!(tau <= 4.0 * chain.sup_norm() * alpha + 1e-12,
            "tau {tau} vs bracket {}", 4.0 * chain.sup_norm() * alpha);
        prop_assert!((0.0..=0.25 + 1e-12).contains(&alpha));
        // covariance bound from the tau coefficient
        let cov = chain.cov_lag(lag);
        prop_assert!(cov.abs() <= chain.sup_norm() * tau + 1e-12);
    }

    #[test]
    fn prokhorov_nonincreasing_and_clamped(
        b in 0.1f64..4.0,
        s2 in 0.5f64..200.0,
    ) {
        let mut prev = 1.0;
        for i in 1..40 {
            let t = 0.3 * i as f64;
            let v = mdplab_core::bounds::prokhorov_bound(t, b, s2).unwrap();
            prop_assert!(v <= 1.0 && v > 0.0);
            prop_assert!(v <= prev + 1e-15);
            prev = v;
        }
    }
}
