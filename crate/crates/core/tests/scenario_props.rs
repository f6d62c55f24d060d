use plmp::scenario::{bundled, generate_synthetic_grid, load_scenario, parse_scenario, Density, ScenarioConfig, ScenarioError};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_grids_round_trip_and_build(n in 5usize..80, seed in any::<u64>()) {
        let cfg = generate_synthetic_grid(n, seed, Density::default());
        prop_assert_eq!(cfg.bus_count(), n);
        prop_assert_eq!(&cfg, &generate_synthetic_grid(n, seed, Density::default()));
        prop_assert_eq!(&parse_scenario(&cfg.to_toml()).unwrap(), &cfg);
        let net = cfg.build_network().unwrap();
        prop_assert_eq!(net.branches().len(), n - 1);
        prop_assert!(net.r().clone().cholesky().is_some());
        cfg.build_problem().unwrap();
    }
}

#[test]
fn bundled_costs_match_the_case_tables() {
    let c1 = ScenarioConfig::bundled("case1").unwrap();
    assert_eq!((c1.slack.c, c1.slack.c1, c1.slack.c2), (50.0, 15.0, 200.0));
    let c2 = ScenarioConfig::bundled("case2").unwrap();
    assert_eq!((c2.slack.c, c2.slack.c1, c2.slack.c2), (20.0, 15.0, 100.0));
    let g = c2.flexgens.iter().find(|g| g.bus == 9).unwrap();
    assert_eq!((g.c, g.c1, g.c2), (100.0, 15.0, 20.0));
    let c3 = ScenarioConfig::bundled("case3").unwrap();
    assert_eq!((c3.slack.c, c3.slack.c1, c3.slack.c2), (10.0, 5.0, 10.0));
    let g = c3.flexgens.iter().find(|g| g.bus == 9).unwrap();
    assert_eq!((g.c, g.c1, g.c2), (0.0, 1000.0, 500.0));
}

#[test]
fn files_and_bundled_names_load_alike() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c2.toml");
    std::fs::write(&path, bundled("case2").unwrap()).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), load_scenario("case2".as_ref()).unwrap());
    assert!(matches!(load_scenario(&dir.path().join("missing.toml")), Err(ScenarioError::Io { .. })));
}

#[test]
fn errors_point_at_the_problem() {
    let mut cfg = ScenarioConfig::bundled("case1").unwrap();
    cfg.agents[0].bus = 42;
    let msg = cfg.validate().unwrap_err().to_string();
    assert!(msg.contains("42"), "{msg}");

    let text = bundled("case1").unwrap().replacen("horizon = 24", "horizon = 24\nbogus_key = 1", 1);
    let msg = parse_scenario(&text).unwrap_err().to_string();
    assert!(msg.contains("bogus_key"), "{msg}");
}
