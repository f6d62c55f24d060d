use nalgebra::DVector;
use plmp::{Branch, Bus, RadialNetwork};
use proptest::prelude::*;

/// Random tree: `parents[j]` feeds bus `j + 1` and is any earlier bus.
fn tree() -> impl Strategy<Value = (Vec<usize>, Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    (2usize..20).prop_flat_map(|n| {
        (
            (0..n).map(|j| 0..=j).collect::<Vec<_>>(),
            prop::collection::vec((0.001..0.1f64, 0.001..0.1f64), n),
            prop::collection::vec((-0.3..0.3f64, -0.2..0.2f64), n),
        )
    })
}

fn build(parents: &[usize], z: &[(f64, f64)]) -> RadialNetwork {
    let buses = (0..=parents.len()).map(|i| Bus::new(i, 0.9, 1.1)).collect();
    let branches = parents
        .iter()
        .zip(z)
        .enumerate()
        .map(|(j, (&from, &(r, x)))| Branch { id: j, from_bus: from, to_bus: j + 1, r, x, f_max: 1.0 })
        .collect();
    RadialNetwork::build(buses, branches, 1.0).unwrap()
}

/// Sum of injections in the subtree rooted at every bus, walking children
/// before parents.
fn subtree_sums(parents: &[usize], s: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; parents.len() + 1];
    for j in (1..=parents.len()).rev() {
        acc[j] += s[j - 1];
        acc[parents[j - 1]] += acc[j];
    }
    acc
}

proptest! {
    #[test]
    fn sensitivities_are_symmetric_positive_definite((parents, z, _) in tree()) {
        let net = build(&parents, &z);
        for m in [net.r(), net.x()] {
            prop_assert!((m - m.transpose()).amax() < 1e-14);
            prop_assert!(m.clone().cholesky().is_some());
        }
    }

    #[test]
    fn voltages_match_recursive_distflow((parents, z, s) in tree()) {
        let net = build(&parents, &z);
        let n = parents.len();
        let p = DVector::from_iterator(n, s.iter().map(|x| x.0));
        let q = DVector::from_iterator(n, s.iter().map(|x| x.1));
        let v = net.voltage_map(&p, &q).unwrap();
        let sp = subtree_sums(&parents, p.as_slice());
        let sq = subtree_sums(&parents, q.as_slice());
        let mut oracle = vec![1.0; n + 1];
        for j in 1..=n {
            let (r, x) = z[j - 1];
            oracle[j] = oracle[parents[j - 1]] + 2.0 * (r * sp[j] + x * sq[j]);
        }
        for j in 0..n {
            prop_assert!((v[j] - oracle[j + 1]).abs() < 1e-10, "bus {}: {} vs {}", j + 1, v[j], oracle[j + 1]);
        }
    }

    #[test]
    fn flows_carry_the_downstream_balance((parents, z, s) in tree()) {
        let net = build(&parents, &z);
        let n = parents.len();
        let p = DVector::from_iterator(n, s.iter().map(|x| x.0));
        let q = DVector::from_iterator(n, s.iter().map(|x| x.1));
        let (fp, fq) = net.branch_flows(&p, &q).unwrap();
        let sp = subtree_sums(&parents, p.as_slice());
        let sq = subtree_sums(&parents, q.as_slice());
        for j in 1..=n {
            let l = net.feeding_branch(j).unwrap();
            prop_assert!((fp[l] + sp[j]).abs() < 1e-12);
            prop_assert!((fq[l] + sq[j]).abs() < 1e-12);
        }
        prop_assert!((net.slack_flow(&fp) + p.sum()).abs() < 1e-12);
    }
}

#[test]
fn cycle_is_rejected() {
    let buses = (0..3).map(|i| Bus::new(i, 0.9, 1.1)).collect();
    let b = |id, from_bus, to_bus| Branch { id, from_bus, to_bus, r: 0.01, x: 0.01, f_max: 1.0 };
    assert!(RadialNetwork::build(buses, vec![b(0, 0, 1), b(1, 1, 2), b(2, 2, 0)], 1.0).is_err());
}
