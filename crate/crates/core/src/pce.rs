//! Generalized polynomial chaos: germ definition, orthonormal multivariate
//! bases, affine input expansions, sampling and the risk multiplier Γ(ε).
//!
//! Every basis is orthonormal with respect to the germ's probability
//! measure, so for a series `X = Σ x_k Ψ_k(ξ)` the mean is `x_0` and the
//! variance is `Σ_{k≥1} x_k²`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PceError {
    #[error("unsupported germ component {index}: {reason}")]
    UnsupportedDistribution { index: usize, reason: String },
    #[error("germ coordinate {coord} = {value} is outside the support [0, 1]")]
    OutOfSupport { coord: usize, value: f64 },
    #[error("germ index {index} out of range (dimension {dim})")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("sample has {got} coordinates, germ has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("risk level {0} must satisfy 0 < ε ≤ 0.5")]
    InvalidRisk(f64),
    #[error("invalid germ: {0}")]
    InvalidGerm(String),
}

/// Distribution of a single germ coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Distribution {
    /// Standard normal N(0, 1).
    Gaussian,
    /// Beta(α, β) on the support [0, 1].
    Beta { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolynomialFamily {
    Hermite,
    Jacobi,
}

impl Distribution {
    pub fn natural_family(&self) -> PolynomialFamily {
        match self {
            Distribution::Gaussian => PolynomialFamily::Hermite,
            Distribution::Beta { .. } => PolynomialFamily::Jacobi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GermComponent {
    #[serde(flatten)]
    pub distribution: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<PolynomialFamily>,
}

impl GermComponent {
    pub fn gaussian() -> Self {
        Self { distribution: Distribution::Gaussian, family: None }
    }

    pub fn beta(alpha: f64, beta: f64) -> Self {
        Self { distribution: Distribution::Beta { alpha, beta }, family: None }
    }

    pub fn family(&self) -> PolynomialFamily {
        self.family.unwrap_or_else(|| self.distribution.natural_family())
    }

    /// Monic three-term recurrence `π_{n+1} = (x − a_n)π_n − b_n π_{n−1}`,
    /// returned as `(a_0..a_{m-1}, b_0..b_{m-1})` with `b_0 = 1`.
    pub fn recurrence(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        match self.distribution {
            Distribution::Gaussian => ((0..m).map(|_| 0.0).collect(), (0..m).map(|n| n.max(1) as f64).collect()),
            Distribution::Beta { alpha, beta } => {
                // Jacobi weight (1−y)^a (1+y)^b on [−1, 1] mapped to x = (1+y)/2
                let (a, b) = (beta - 1.0, alpha - 1.0);
                let mut aa = Vec::with_capacity(m);
                let mut bb = Vec::with_capacity(m);
                for n in 0..m {
                    let nf = n as f64;
                    let s = 2.0 * nf + a + b;
                    let alpha_y = if n == 0 { (b - a) / (a + b + 2.0) } else { (b * b - a * a) / (s * (s + 2.0)) };
                    let beta_y = match n {
                        0 => 4.0,
                        1 => 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b)),
                        _ => {
                            4.0 * nf * (nf + a) * (nf + b) * (nf + a + b)
                                / (s * s * (s + 1.0) * (s - 1.0))
                        }
                    };
                    aa.push((alpha_y + 1.0) / 2.0);
                    bb.push(beta_y / 4.0);
                }
                (aa, bb)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.recurrence(1).0[0]
    }

    pub fn std(&self) -> f64 {
        self.recurrence(2).1[1].sqrt()
    }

    fn validate(&self, index: usize) -> Result<(), PceError> {
        if self.family() != self.distribution.natural_family() {
            return Err(PceError::UnsupportedDistribution {
                index,
                reason: format!("{:?} polynomials are not orthogonal for {:?}", self.family(), self.distribution),
            });
        }
        if let Distribution::Beta { alpha, beta } = self.distribution {
            if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                return Err(PceError::UnsupportedDistribution {
                    index,
                    reason: format!("Beta shape parameters must be positive, got ({alpha}, {beta})"),
                });
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.distribution {
            Distribution::Gaussian => rng.sample(StandardNormal),
            Distribution::Beta { alpha, beta } => Beta::new(alpha, beta).expect("validated shape").sample(rng),
        }
    }
}

/// Stochastic germ: independent components and a total polynomial degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GermSpec {
    pub components: Vec<GermComponent>,
    pub degree: usize,
}

impl GermSpec {
    pub fn new(components: Vec<GermComponent>, degree: usize) -> Self {
        Self { components, degree }
    }

    /// Gaussian, Beta(5,2) and Beta(4,2) coordinates at degree 2.
    pub fn case_study_default() -> Self {
        Self::new(
            vec![GermComponent::gaussian(), GermComponent::beta(5.0, 2.0), GermComponent::beta(4.0, 2.0)],
            2,
        )
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<(), PceError> {
        if self.components.is_empty() {
            return Err(PceError::InvalidGerm("germ needs at least one component".into()));
        }
        if self.degree == 0 {
            return Err(PceError::InvalidGerm("polynomial degree must be at least 1".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            c.validate(i)?;
        }
        Ok(())
    }
}

/// Number of basis polynomials `(p+d)! / (p!·d!)`.
pub fn basis_size(dim: usize, degree: usize) -> usize {
    // incremental binomial keeps intermediates exact
    (1..=dim).fold(1usize, |acc, i| acc * (degree + i) / i)
}

/// Total-degree multi-indices in graded order; within one degree the first
/// coordinate descends, so index `1 + j` is the linear polynomial in `ξ_j`.
pub fn multi_indices(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(dim: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == dim {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first);
            fill(dim, remaining - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(basis_size(dim, degree));
    for total in 0..=degree {
        fill(dim, total, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Orthonormal univariate recurrence for one coordinate.
#[derive(Debug, Clone)]
struct Orthonormal {
    a: Vec<f64>,
    sqrt_b: Vec<f64>,
}

impl Orthonormal {
    fn new(component: &GermComponent, degree: usize) -> Self {
        let (a, b) = component.recurrence(degree + 1);
        Self { a, sqrt_b: b.iter().map(|v| v.sqrt()).collect() }
    }

    fn eval_into(&self, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        if out.len() > 1 {
            out[1] = (x - self.a[0]) / self.sqrt_b[1];
        }
        for n in 1..out.len() - 1 {
            out[n + 1] = ((x - self.a[n]) * out[n] - self.sqrt_b[n] * out[n - 1]) / self.sqrt_b[n + 1];
        }
    }
}

/// Orthonormal multivariate polynomial basis of a germ.
#[derive(Debug, Clone)]
pub struct PceBasis {
    germ: GermSpec,
    multi_indices: Vec<Vec<usize>>,
    univariate: Vec<Orthonormal>,
}

impl PceBasis {
    pub fn new(germ: GermSpec) -> Result<Self, PceError> {
        germ.validate()?;
        let multi_indices = multi_indices(germ.dim(), germ.degree);
        let univariate = germ.components.iter().map(|c| Orthonormal::new(c, germ.degree)).collect();
        Ok(Self { germ, multi_indices, univariate })
    }

    /// Single constant polynomial: every expansion is deterministic.
    pub fn deterministic() -> Self {
        let germ = GermSpec::new(vec![GermComponent::gaussian()], 1);
        let univariate = vec![Orthonormal::new(&germ.components[0], 1)];
        Self { germ, multi_indices: vec![vec![0]], univariate }
    }

    pub fn germ(&self) -> &GermSpec {
        &self.germ
    }

    pub fn k(&self) -> usize {
        self.multi_indices.len()
    }

    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.multi_indices
    }

    pub fn index_of(&self, multi_index: &[usize]) -> Option<usize> {
        self.multi_indices.iter().position(|m| m == multi_index)
    }

    /// Index of the degree-one polynomial in coordinate `j`, if present.
    pub fn linear_index(&self, j: usize) -> Option<usize> {
        let mut m = vec![0; self.germ.dim()];
        *m.get_mut(j)? = 1;
        self.index_of(&m)
    }

    fn check_sample(&self, sample: &[f64]) -> Result<(), PceError> {
        if sample.len() != self.germ.dim() {
            return Err(PceError::DimensionMismatch { expected: self.germ.dim(), got: sample.len() });
        }
        for (coord, (c, &v)) in self.germ.components.iter().zip(sample).enumerate() {
            let ok = match c.distribution {
                Distribution::Gaussian => v.is_finite(),
                Distribution::Beta { .. } => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return Err(PceError::OutOfSupport { coord, value: v });
            }
        }
        Ok(())
    }

    /// Values `Ψ_0..Ψ_{K−1}` at a germ sample.
    pub fn eval(&self, sample: &[f64]) -> Result<Vec<f64>, PceError> {
        let mut out = vec![0.0; self.k()];
        self.eval_into(sample, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, sample: &[f64], out: &mut [f64]) -> Result<(), PceError> {
        self.check_sample(sample)?;
        let p = self.germ.degree;
        let mut table = vec![0.0; self.germ.dim() * (p + 1)];
        for (j, (poly, &x)) in self.univariate.iter().zip(sample).enumerate() {
            poly.eval_into(x, &mut table[j * (p + 1)..(j + 1) * (p + 1)]);
        }
        for (o, m) in out.iter_mut().zip(&self.multi_indices) {
            *o = m.iter().enumerate().map(|(j, &deg)| table[j * (p + 1) + deg]).product();
        }
        Ok(())
    }

    /// Exact expansion of `offset + scale·ξ_j`. A deterministic basis keeps
    /// only the mean.
    pub fn expand_affine(&self, germ_index: usize, offset: f64, scale: f64) -> Result<PceSeries, PceError> {
        let component = self
            .germ
            .components
            .get(germ_index)
            .ok_or(PceError::IndexOutOfRange { index: germ_index, dim: self.germ.dim() })?;
        let mut c = vec![0.0; self.k()];
        c[0] = offset + scale * component.mean();
        if scale != 0.0 && self.k() > 1 {
            let idx = self
                .linear_index(germ_index)
                .ok_or(PceError::IndexOutOfRange { index: germ_index, dim: self.germ.dim() })?;
            c[idx] = scale * component.std();
        }
        Ok(PceSeries::new(c))
    }

    /// Tensor Gauss rule exact for polynomials of degree `2n−1` per coordinate.
    pub fn gauss_rule(&self, points_per_dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let rules: Vec<_> = self.germ.components.iter().map(|c| gauss_rule(c, points_per_dim)).collect();
        let mut nodes = vec![Vec::new()];
        let mut weights = vec![1.0];
        for (xs, ws) in &rules {
            let mut next_nodes = Vec::with_capacity(nodes.len() * xs.len());
            let mut next_weights = Vec::with_capacity(nodes.len() * xs.len());
            for (node, w) in nodes.iter().zip(&weights) {
                for (x, wx) in xs.iter().zip(ws) {
                    let mut n = node.clone();
                    n.push(*x);
                    next_nodes.push(n);
                    next_weights.push(w * wx);
                }
            }
            nodes = next_nodes;
            weights = next_weights;
        }
        (nodes, weights)
    }
}

/// Golub–Welsch nodes and probability weights for one germ coordinate.
pub fn gauss_rule(component: &GermComponent, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = component.recurrence(n);
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = a[i];
        if i + 1 < n {
            let off = b[i + 1].sqrt();
            jacobi[(i, i + 1)] = off;
            jacobi[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

/// Coefficients of one random scalar in an orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceSeries {
    pub coefficients: Vec<f64>,
}

impl PceSeries {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    pub fn constant(value: f64, k: usize) -> Self {
        let mut c = vec![0.0; k];
        c[0] = value;
        Self::new(c)
    }

    pub fn mean(&self) -> f64 {
        self.coefficients.first().copied().unwrap_or(0.0)
    }

    pub fn variance(&self) -> f64 {
        self.coefficients.iter().skip(1).map(|c| c * c).sum()
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `Σ x_k Ψ_k` for precomputed basis values.
    pub fn evaluate_with(&self, psi: &[f64]) -> f64 {
        self.coefficients.iter().zip(psi).map(|(c, p)| c * p).sum()
    }

    pub fn evaluate(&self, basis: &PceBasis, sample: &[f64]) -> Result<f64, PceError> {
        Ok(self.evaluate_with(&basis.eval(sample)?))
    }
}

/// Deterministic generator for stream `stream` of seed `seed`; distinct
/// streams never overlap, so parallel consumers stay reproducible.
pub fn germ_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn draw_germ<R: Rng + ?Sized>(germ: &GermSpec, rng: &mut R) -> Vec<f64> {
    germ.components.iter().map(|c| c.draw(rng)).collect()
}

/// `n` i.i.d. germ samples from `seed`.
pub fn sample_germ(germ: &GermSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = germ_rng(seed, 0);
    (0..n).map(|_| draw_germ(germ, &mut rng)).collect()
}

/// How the risk level ε maps to a standard-deviation multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// `Φ⁻¹(1−ε)`, exact for Gaussian quantities.
    #[default]
    Gaussian,
    /// `√((1−ε)/ε)`, valid for any distribution with the given mean and variance.
    DistRobust,
}

impl std::str::FromStr for GammaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "dist-robust" | "dist_robust" => Ok(Self::DistRobust),
            other => Err(format!("unknown gamma mode `{other}` (expected gaussian or dist-robust)")),
        }
    }
}

pub fn gamma(epsilon: f64, mode: GammaMode) -> Result<f64, PceError> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(PceError::InvalidRisk(epsilon));
    }
    Ok(match mode {
        GammaMode::Gaussian => {
            if epsilon == 0.5 {
                0.0
            } else {
                Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - epsilon)
            }
        }
        GammaMode::DistRobust => ((1.0 - epsilon) / epsilon).sqrt(),
    })
}
