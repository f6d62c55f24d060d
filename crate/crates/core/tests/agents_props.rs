use plmp::agents::{self, hindsight_policy, rule_based_policy, tables_from_model, StorageSpec, KAPPA};
use proptest::prelude::*;

/// Best profit over every grid action sequence of a known price path.
fn enumerate_path(spec: &StorageSpec, prices: &[f64], levels: usize, t: usize, i: usize) -> f64 {
    let step = spec.e_cap / (levels - 1) as f64;
    let end = (spec.e_end / step).round() as usize;
    if t == prices.len() {
        return if i == end { 0.0 } else { f64::NEG_INFINITY };
    }
    let reach = (spec.p_cap * spec.dt / step + 1e-9).floor() as usize;
    (0..levels)
        .filter(|&j| j.abs_diff(i) <= reach)
        .map(|j| (i as f64 - j as f64) * step * prices[t] + enumerate_path(spec, prices, levels, t + 1, j))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn spec() -> impl Strategy<Value = StorageSpec> {
    (0.5..2.0f64, 0.1..0.5f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(e_cap, c, a, b)| StorageSpec {
        e_cap,
        p_cap: c * e_cap,
        e_init: (a * 10.0).round() / 10.0 * e_cap,
        e_end: (b * 10.0).round() / 10.0 * e_cap,
        dt: 1.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hindsight_equals_exhaustive_search(spec in spec(), prices in prop::collection::vec(-20.0..20.0f64, 4)) {
        let levels = 11;
        let best = enumerate_path(&spec, &prices, levels, 0, (spec.e_init / (spec.e_cap / 10.0)).round() as usize);
        match hindsight_policy(&spec, &prices, levels) {
            Ok(run) => {
                prop_assert!((run.profit() - best).abs() <= 1e-9 * (1.0 + best.abs()), "{} vs {}", run.profit(), best);
                prop_assert!((run.soc.last().unwrap() - spec.e_end).abs() < 1e-9);
            }
            Err(_) => prop_assert!(best == f64::NEG_INFINITY),
        }
    }

    #[test]
    fn dp_value_is_the_policy_expectation(
        spec in spec(),
        q in prop::collection::vec(0.0..1.0f64, 3),
        up in prop::collection::vec(0.0..10.0f64, 3),
        down in prop::collection::vec(-10.0..0.0f64, 3),
    ) {
        // the value of level `init` is the expectation of the DP policy over all 8 price paths
        let tables = tables_from_model(&spec, q.clone(), up.clone(), down.clone(), 11, KAPPA, Vec::new());
        let mut expected = 0.0;
        for mask in 0..8u32 {
            let mut prob = 1.0;
            let prices: Vec<f64> = (0..3)
                .map(|t| if mask >> t & 1 == 1 { prob *= q[t]; up[t] } else { prob *= 1.0 - q[t]; down[t] })
                .collect();
            let run = agents::dp_policy(&spec, &tables, &prices).unwrap();
            let end = (spec.e_end / tables.grid.step).round() as usize;
            let last = (run.soc[2] / tables.grid.step).round() as usize;
            let penalty = if last == end { 0.0 } else { -KAPPA };
            expected += prob * (run.profit() + penalty);
        }
        let v0 = tables.values[0][tables.grid.init];
        prop_assert!((expected - v0).abs() <= 1e-6 * (1.0 + v0.abs()), "{expected} vs {v0}");
    }

    #[test]
    fn rule_based_respects_limits(spec in spec(), prices in prop::collection::vec(-50.0..50.0f64, 24)) {
        if let Ok(run) = rule_based_policy(&spec, &prices) {
            prop_assert!(run.setpoints.iter().all(|p| p.abs() <= spec.p_cap + 1e-12));
            prop_assert!(run.soc.iter().all(|e| *e >= -1e-12 && *e <= spec.e_cap + 1e-12));
            prop_assert!((run.soc.last().unwrap() - spec.e_end).abs() < 1e-9);
        }
    }
}
