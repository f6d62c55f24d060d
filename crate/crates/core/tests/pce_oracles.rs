use plmp::pce::{basis_size, gamma, multi_indices, sample_germ};
use plmp::{GammaMode, GermComponent, GermSpec, PceBasis};
use proptest::prelude::*;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b).exp()
}

/// Composite Simpson rule on (0, 1).
fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let inner: f64 = (1..n).map(|i| f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(0.0) + f(1.0) + inner) * h / 3.0
}

#[test]
fn hermite_closed_form() {
    let basis = PceBasis::new(GermSpec::new(vec![GermComponent::gaussian()], 4)).unwrap();
    for x in [-2.5, -0.3, 0.0, 1.1, 3.0] {
        let psi = basis.eval(&[x]).unwrap();
        let he = [1.0, x, x * x - 1.0, x.powi(3) - 3.0 * x, x.powi(4) - 6.0 * x * x + 3.0];
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0f64];
        for n in 0..5 {
            assert!((psi[n] - he[n] / fact[n].sqrt()).abs() < 1e-12, "He{n}({x})");
        }
    }
}

#[test]
fn jacobi_orthonormal_against_beta_density() {
    for (a, b) in [(5.0, 2.0), (4.0, 2.0), (2.0, 3.0)] {
        let basis = PceBasis::new(GermSpec::new(vec![GermComponent::beta(a, b)], 4)).unwrap();
        for m in 0..5 {
            for n in 0..5 {
                let g = simpson(
                    |x| {
                        let psi = basis.eval(&[x]).unwrap();
                        psi[m] * psi[n] * beta_pdf(a, b, x.clamp(1e-300, 1.0 - 1e-16))
                    },
                    20_000,
                );
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "B({a},{b}) <Ψ{m},Ψ{n}> = {g}");
            }
        }
    }
}

#[test]
fn monte_carlo_gram_is_identity() {
    let basis = PceBasis::new(GermSpec::case_study_default()).unwrap();
    let n = 1_000_000;
    let k = basis.k();
    let mut sum = vec![0.0; k * k];
    let mut sum_sq = vec![0.0; k * k];
    for s in sample_germ(basis.germ(), n, 99) {
        let psi = basis.eval(&s).unwrap();
        for i in 0..k {
            for j in 0..k {
                let v = psi[i] * psi[j];
                sum[i * k + j] += v;
                sum_sq[i * k + j] += v * v;
            }
        }
    }
    let nf = n as f64;
    for i in 0..k {
        for j in 0..k {
            let mean = sum[i * k + j] / nf;
            let se = ((sum_sq[i * k + j] / nf - mean * mean) / nf).sqrt();
            let want = if i == j { 1.0 } else { 0.0 };
            // 4 σ over 55 distinct entries keeps the family-wise false alarm rate small
            assert!((mean - want).abs() <= 4.0 * se + 1e-12, "G[{i}][{j}] = {mean} ± {se}");
        }
    }
}

#[test]
fn gaussian_gamma_matches_erfc_bisection() {
    for eps in [0.001, 0.01, 0.05, 0.1, 0.25, 0.4] {
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * erfc(mid / 2f64.sqrt()) > eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g = gamma(eps, GammaMode::Gaussian).unwrap();
        assert!((g - lo).abs() < 1e-8, "ε={eps}: {g} vs {lo}");
        assert!(gamma(eps, GammaMode::DistRobust).unwrap() >= g);
    }
}

proptest! {
    #[test]
    fn basis_size_counts_multi_indices(d in 1usize..6, p in 0usize..6) {
        let mi = multi_indices(d, p);
        prop_assert_eq!(mi.len(), basis_size(d, p));
        prop_assert!(mi.iter().all(|m| m.len() == d && m.iter().sum::<usize>() <= p));
        prop_assert!(mi.windows(2).all(|w| w[0].iter().sum::<usize>() <= w[1].iter().sum::<usize>()));
        let mut sorted = mi.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), mi.len());
    }

    #[test]
    fn affine_expansion_moments(j in 0usize..3, offset in -5.0..5.0f64, scale in -3.0..3.0f64) {
        let basis = PceBasis::new(GermSpec::case_study_default()).unwrap();
        let c = &basis.germ().components[j];
        let x = basis.expand_affine(j, offset, scale).unwrap();
        prop_assert!((x.mean() - (offset + scale * c.mean())).abs() < 1e-12);
        prop_assert!((x.variance() - scale * scale * c.std() * c.std()).abs() < 1e-12);
        // pointwise identity at a few germ values
        for s in sample_germ(basis.germ(), 5, 1) {
            prop_assert!((x.evaluate(&basis, &s).unwrap() - (offset + scale * s[j])).abs() < 1e-10);
        }
    }
}
