//! Fluctuation-relation checks on joint heat distributions.
//!
//! Every check compares a statistic of the measured distribution (left-hand
//! side) with a closed-form trace over density operators (right-hand side)
//! and returns a [`VerificationReport`]. Checks run on the exact exponent
//! change `σ`; the `heat_A`/`heat_B` variants of [`integral_ft_with`] show
//! how far the weak-coupling bookkeeping deviates from it.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gge::{log_sum_exp_neg, GGEState};
use crate::operator::{eigh, OperatorMatrix, CLAMP_RATIO};
use crate::pipeline::Scenario;
use crate::tpm::{binned_distribution, DistributionMode, JointDistribution, ValueKind};

/// Largest condition number of `ρ(0)` for which negative powers are trusted.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Pairs lighter than this are excluded from pairwise ratio checks.
pub const PAIR_WEIGHT_FLOOR: f64 = 1e-14;

pub const DEFAULT_Z_GRID: [f64; 6] = [-1.0, -0.5, 0.0, 0.5, 2.0, 3.0];
pub const DEFAULT_U_GRID: [f64; 4] = [0.0, 0.3, 1.1, 2.7];

/// Density operator held by its spectral data, `ρ = Σ e^{ℓ_i} |v_i⟩⟨v_i|`.
///
/// Keeping log-eigenvalues instead of eigenvalues makes negative and
/// fractional powers as accurate as the exponent they came from.
#[derive(Clone, Debug)]
pub struct SpectralDensity {
    pub log_eigenvalues: Vec<f64>,
    pub vectors: DMatrix<C64>,
    /// Eigenvalues raised to the clamp floor when built from a matrix.
    pub clamped: usize,
}

impl SpectralDensity {
    /// Diagonalizes `rho`, clamping eigenvalues below `CLAMP_RATIO · λ_max`.
    pub fn from_density(rho: &OperatorMatrix) -> Result<Self> {
        let eig = eigh(rho)?;
        let max = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if max <= 0.0 {
            return Err(Error::Domain(format!("density operator has no positive eigenvalue (max {max:e})")));
        }
        let (values, clamped) = eig.clamped();
        Ok(Self { log_eigenvalues: values.iter().map(|x| x.ln()).collect(), vectors: eig.eigenvectors, clamped })
    }

    /// Exact spectral data of a GGE: `ℓ = −x − ln Z` over the exponent's
    /// spectrum.
    pub fn from_state(state: &GGEState) -> Self {
        Self {
            log_eigenvalues: state.eigen.eigenvalues.iter().map(|x| -x - state.log_z).collect(),
            vectors: state.eigen.eigenvectors.clone(),
            clamped: 0,
        }
    }

    /// `ρ_a ⊗ ρ_b`.
    pub fn product(a: &Self, b: &Self) -> Self {
        let log_eigenvalues =
            a.log_eigenvalues.iter().flat_map(|x| b.log_eigenvalues.iter().map(move |y| x + y)).collect();
        Self { log_eigenvalues, vectors: a.vectors.kronecker(&b.vectors), clamped: a.clamped + b.clamped }
    }

    /// `U ρ U†`.
    pub fn evolved(&self, u: &OperatorMatrix) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!("propagator dim {} vs state dim {}", u.dim(), self.dim())));
        }
        Ok(Self {
            log_eigenvalues: self.log_eigenvalues.clone(),
            vectors: u.entries() * &self.vectors,
            clamped: self.clamped,
        })
    }

    pub fn dim(&self) -> usize {
        self.log_eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.log_eigenvalues.iter().map(|l| l.exp()).collect()
    }

    pub fn condition_number(&self) -> f64 {
        let (min, max) =
            self.log_eigenvalues.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        (max - min).exp()
    }

    /// `ρ^p` as a matrix.
    pub fn power(&self, p: f64) -> Result<OperatorMatrix> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::new((p * self.log_eigenvalues[j]).exp(), 0.0);
        }
        OperatorMatrix::hermitian(scaled * self.vectors.adjoint())
    }

    pub fn to_operator(&self) -> Result<OperatorMatrix> {
        self.power(1.0)
    }

    /// `W_ij = |⟨a_i|b_j⟩|²`, so that `Tr[f(ρ_a) g(ρ_b)] = Σ W_ij f(λ_i) g(μ_j)`.
    fn overlaps(&self, other: &Self) -> Result<DMatrix<f64>> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!("state dims {} and {}", self.dim(), other.dim())));
        }
        Ok((self.vectors.adjoint() * &other.vectors).map(|z| z.norm_sqr()))
    }

    /// `Tr[f(ℓ_a) g(ℓ_b)]` for spectral functions of the log-eigenvalues.
    fn trace_pair(&self, other: &Self, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> Result<f64> {
        let w = self.overlaps(other)?;
        let fa: Vec<f64> = self.log_eigenvalues.iter().map(|&l| f(l)).collect();
        let gb: Vec<f64> = other.log_eigenvalues.iter().map(|&l| g(l)).collect();
        let mut total = 0.0;
        for (i, fi) in fa.iter().enumerate() {
            total += fi * w.row(i).iter().zip(&gb).map(|(x, y)| x * y).sum::<f64>();
        }
        Ok(total)
    }
}

/// `Tr[ρ_a^z ρ_b^{1−z}]`.
pub fn renyi_trace(a: &SpectralDensity, b: &SpectralDensity, z: f64) -> Result<f64> {
    a.trace_pair(b, |l| (z * l).exp(), |l| ((1.0 - z) * l).exp())
}

/// `S_z(ρ_a‖ρ_b) = ln Tr[ρ_a^z ρ_b^{1−z}] / (z − 1)`, for `z ≠ 1`.
pub fn renyi_divergence_spectral(a: &SpectralDensity, b: &SpectralDensity, z: f64) -> Result<f64> {
    if z == 1.0 {
        return Err(Error::Domain("Rényi order z = 1 is the relative entropy; use relative_entropy".into()));
    }
    let tr = renyi_trace(a, b, z)?;
    if tr.is_nan() || tr <= 0.0 || tr.is_infinite() {
        return Err(Error::Domain(format!("Tr[ρ^z σ^(1-z)] = {tr:e} at z = {z}")));
    }
    Ok(tr.ln() / (z - 1.0))
}

/// Order-`z` Rényi divergence between two density matrices.
pub fn renyi_divergence(rho0: &OperatorMatrix, rho_tau: &OperatorMatrix, z: f64) -> Result<f64> {
    renyi_divergence_spectral(&SpectralDensity::from_density(rho0)?, &SpectralDensity::from_density(rho_tau)?, z)
}

/// `D(ρ_a‖ρ_b) = Tr[ρ_a (ln ρ_a − ln ρ_b)]`; `ρ_b` must be full rank.
pub fn relative_entropy_spectral(a: &SpectralDensity, b: &SpectralDensity) -> Result<f64> {
    if b.clamped > 0 {
        return Err(Error::Domain(format!(
            "second argument is rank deficient ({} eigenvalues below {CLAMP_RATIO:e}·λmax)",
            b.clamped
        )));
    }
    let self_term: f64 = a.log_eigenvalues.iter().map(|l| l.exp() * l).sum();
    let cross = a.trace_pair(b, f64::exp, |l| l)?;
    Ok(self_term - cross)
}

pub fn relative_entropy(rho_a: &OperatorMatrix, rho_b: &OperatorMatrix) -> Result<f64> {
    relative_entropy_spectral(&SpectralDensity::from_density(rho_a)?, &SpectralDensity::from_density(rho_b)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Real(Vec<f64>),
    /// `[re, im]` pairs.
    Complex(Vec<[f64; 2]>),
}

impl Series {
    pub fn len(&self) -> usize {
        match self {
            Series::Real(v) => v.len(),
            Series::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn complex(values: &[C64]) -> Self {
        Series::Complex(values.iter().map(|z| [z.re, z.im]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMeasure {
    Absolute,
    /// Error divided by the magnitude of the reference value.
    Relative,
    /// Deviation from the target, with four standard errors as tolerance.
    Statistical,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    /// Maximum error under the reversed operator ordering (characteristic
    /// function only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternate_max_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub name: String,
    pub lhs: Series,
    pub rhs: Series,
    /// Points at which `lhs` and `rhs` were evaluated (z, u or moment order);
    /// empty for pairwise and scalar checks.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<f64>,
    pub max_error: f64,
    pub tolerance: f64,
    pub measure: ErrorMeasure,
    pub passed: bool,
    pub metadata: ReportMetadata,
}

impl VerificationReport {
    fn new(
        name: impl Into<String>,
        (lhs, rhs): (Series, Series),
        grid: Vec<f64>,
        max_error: f64,
        tolerance: f64,
        measure: ErrorMeasure,
        jd: &JointDistribution,
    ) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            grid,
            max_error,
            tolerance,
            measure,
            // NaN errors must fail
            passed: max_error <= tolerance,
            metadata: ReportMetadata {
                tau: jd.metadata.tau,
                g: jd.metadata.g,
                models: jd.metadata.models.clone(),
                samples: jd.sample_count(),
                ..Default::default()
            },
        }
    }
}

fn require_exact(jd: &JointDistribution, check: &str) -> Result<()> {
    if jd.is_exact() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{check} needs an enumerated distribution, not a sampled one")))
    }
}

/// Probability-weighted mean of `f` and its standard error for a sampled
/// distribution (zero for an exact one).
pub fn estimate(jd: &JointDistribution, f: impl Fn(&crate::tpm::PairRecord) -> f64) -> (f64, f64) {
    let mean = jd.expectation(&f);
    let se = match jd.mode {
        DistributionMode::Exact => 0.0,
        DistributionMode::Sampled { count, .. } => {
            let second = jd.expectation(|r| f(r).powi(2));
            let n = count as f64;
            let var = if count > 1 { (second - mean * mean).max(0.0) * n / (n - 1.0) } else { 0.0 };
            (var / n).sqrt()
        }
    };
    (mean, se)
}

fn statistical_report(
    name: &str,
    jd: &JointDistribution,
    (estimate, se): (f64, f64),
    target: f64,
) -> VerificationReport {
    let tolerance = if se > 0.0 { 4.0 * se } else { 1e-8 };
    let mut report = VerificationReport::new(
        name,
        (Series::Real(vec![estimate]), Series::Real(vec![target])),
        Vec::new(),
        (estimate - target).abs(),
        tolerance,
        ErrorMeasure::Statistical,
        jd,
    );
    report.metadata.standard_error = Some(se);
    report
}

/// `⟨e^{−σ}⟩ = 1`.
pub fn integral_ft(jd: &JointDistribution) -> VerificationReport {
    integral_ft_with(jd, ValueKind::Sigma)
}

/// `⟨e^{−x}⟩` against 1 for the chosen bookkeeping. Only `σ` satisfies it
/// exactly; the heat variants measure the weak-coupling approximation.
pub fn integral_ft_with(jd: &JointDistribution, kind: ValueKind) -> VerificationReport {
    let name = match kind {
        ValueKind::Sigma => "integral_ft".to_string(),
        other => format!("integral_ft_{}", other.as_str()),
    };
    let stats = estimate(jd, |r| (-r.value(kind)).exp());
    if jd.is_exact() {
        VerificationReport::new(
            name,
            (Series::Real(vec![stats.0]), Series::Real(vec![1.0])),
            Vec::new(),
            (stats.0 - 1.0).abs(),
            1e-8,
            ErrorMeasure::Absolute,
            jd,
        )
    } else {
        statistical_report(&name, jd, stats, 1.0)
    }
}

/// Pairwise `ln p_nm − ln p_mn = σ_nm` over all pairs heavier than
/// [`PAIR_WEIGHT_FLOOR`].
pub fn detailed_ft_check(jd: &JointDistribution) -> Result<VerificationReport> {
    require_exact(jd, "detailed_ft")?;
    let weight: HashMap<(usize, usize), f64> = jd.entries.iter().map(|r| ((r.n, r.m), r.probability)).collect();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut worst: f64 = 0.0;
    for r in jd.entries.iter().filter(|r| r.probability > PAIR_WEIGHT_FLOOR) {
        let reverse = weight.get(&(r.m, r.n)).copied().unwrap_or(0.0);
        let log_ratio = r.probability.ln() - reverse.ln();
        let err = (log_ratio - r.sigma).abs();
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        lhs.push(log_ratio);
        rhs.push(r.sigma);
    }
    Ok(VerificationReport::new(
        "detailed_ft",
        (Series::Real(lhs), Series::Real(rhs)),
        Vec::new(),
        worst,
        1e-8,
        ErrorMeasure::Absolute,
        jd,
    ))
}

/// `P(s)/P(−s) = e^s` over the binned support of `σ`, relative to `e^s`,
/// wherever `P(−s) > 1e-12`.
pub fn distribution_ft_check(jd: &JointDistribution, bin_eps: f64) -> Result<VerificationReport> {
    require_exact(jd, "distribution_ft")?;
    let bins = binned_distribution(jd, ValueKind::Sigma, bin_eps);
    let scale = bins.iter().fold(1.0f64, |m, b| m.max(b.0.abs()));
    let mut grid = Vec::new();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut worst: f64 = 0.0;
    for &(s, p) in &bins {
        let mirror = bins.iter().filter(|(r, _)| (r + s).abs() <= 2.0 * bin_eps * scale).map(|b| b.1).sum::<f64>();
        if mirror <= 1e-12 {
            continue;
        }
        let ratio = p / mirror;
        worst = worst.max((ratio * (-s).exp() - 1.0).abs());
        grid.push(s);
        lhs.push(ratio);
        rhs.push(s.exp());
    }
    Ok(VerificationReport::new(
        "distribution_ft",
        (Series::Real(lhs), Series::Real(rhs)),
        grid,
        worst,
        1e-6,
        ErrorMeasure::Relative,
        jd,
    ))
}

/// `⟨e^{−zσ}⟩ = Tr[ρ(τ)^{1−z} ρ(0)^z]` over `z_grid` (relative error).
pub fn renyi_identity_check(
    jd: &JointDistribution,
    rho0: &SpectralDensity,
    rho_tau: &SpectralDensity,
    z_grid: &[f64],
) -> Result<VerificationReport> {
    require_exact(jd, "renyi_identity")?;
    if let Some(&z) = z_grid.iter().find(|&&z| z == 1.0) {
        return Err(Error::Domain(format!("z = {z} belongs to the mean-heat check, not the Rényi grid")));
    }
    let condition = rho0.condition_number();
    if condition > CONDITION_LIMIT && z_grid.iter().any(|&z| !(0.0..=1.0).contains(&z)) {
        return Err(Error::Conditioning { condition, limit: CONDITION_LIMIT });
    }
    let pairs: Vec<(f64, f64)> = z_grid
        .par_iter()
        .map(|&z| Ok((jd.expectation(|r| (-z * r.sigma).exp()), renyi_trace(rho0, rho_tau, z)?)))
        .collect::<Result<_>>()?;
    let worst = pairs.iter().fold(0.0f64, |m, (l, r)| m.max((l - r).abs() / r.abs()));
    Ok(VerificationReport::new(
        "renyi_identity",
        (Series::Real(pairs.iter().map(|p| p.0).collect()), Series::Real(pairs.iter().map(|p| p.1).collect())),
        z_grid.to_vec(),
        worst,
        1e-7,
        ErrorMeasure::Relative,
        jd,
    ))
}

/// `⟨σ⟩ = D(ρ(τ)‖ρ(0))`; additionally fails if `D < −1e-10`. Sampled input
/// is tested statistically.
pub fn mean_heat_check(
    jd: &JointDistribution,
    rho0: &SpectralDensity,
    rho_tau: &SpectralDensity,
) -> Result<VerificationReport> {
    let d = relative_entropy_spectral(rho_tau, rho0)?;
    let mut report = if jd.is_exact() {
        let mean = jd.expectation(|r| r.sigma);
        VerificationReport::new(
            "mean_heat",
            (Series::Real(vec![mean]), Series::Real(vec![d])),
            Vec::new(),
            (mean - d).abs(),
            1e-8,
            ErrorMeasure::Absolute,
            jd,
        )
    } else {
        statistical_report("mean_heat", jd, estimate(jd, |r| r.sigma), d)
    };
    if d < -1e-10 {
        report.passed = false;
        report.metadata.note = Some(format!("relative entropy is negative: {d:e}"));
    }
    Ok(report)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// `⟨σ^n⟩ = Σ_k C(n,k) (−1)^{n−k} Tr[ρ(τ) (ln ρ(τ))^k (ln ρ(0))^{n−k}]` for
/// `n = 1..=n_max`, relative to `max(1, |⟨σ^n⟩|)`.
pub fn ordered_moment_check(
    jd: &JointDistribution,
    rho0: &SpectralDensity,
    rho_tau: &SpectralDensity,
    n_max: u32,
) -> Result<VerificationReport> {
    require_exact(jd, "ordered_moments")?;
    if rho0.clamped > 0 || rho_tau.clamped > 0 {
        return Err(Error::Domain("ordered moments need full-rank states".into()));
    }
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        let moment = jd.expectation(|r| r.sigma.powi(n as i32));
        let mut trace = 0.0;
        for k in 0..=n {
            let sign = if (n - k) % 2 == 0 { 1.0 } else { -1.0 };
            let term = rho_tau.trace_pair(rho0, |l| l.exp() * l.powi(k as i32), |l| l.powi((n - k) as i32))?;
            trace += sign * binomial(n, k) * term;
        }
        worst = worst.max((moment - trace).abs() / moment.abs().max(1.0));
        lhs.push(moment);
        rhs.push(trace);
    }
    Ok(VerificationReport::new(
        "ordered_moments",
        (Series::Real(lhs), Series::Real(rhs)),
        (1..=n_max).map(f64::from).collect(),
        worst,
        1e-7,
        ErrorMeasure::Relative,
        jd,
    ))
}

/// `Σ p e^{iuσ} = Tr[e^{−h} e^{−iuh} U† e^{iuh} U] / Z` with `h` the joint
/// exponent and `Z = Tr e^{−h}`. The reversed ordering, which evaluates
/// `G(−u)`, is reported as `alternate_max_error`.
pub fn characteristic_function_check(
    jd: &JointDistribution,
    exponent: &OperatorMatrix,
    u: &OperatorMatrix,
    u_grid: &[f64],
) -> Result<VerificationReport> {
    require_exact(jd, "characteristic_function")?;
    if exponent.dim() != u.dim() {
        return Err(Error::DimensionMismatch(format!("exponent dim {} vs propagator dim {}", exponent.dim(), u.dim())));
    }
    let eig = eigh(exponent)?;
    let log_z = log_sum_exp_neg(eig.eigenvalues.iter().copied());
    let rho = eig.map(|x| (-x - log_z).exp())?;
    let u_adj = u.adjoint();

    let points: Vec<(C64, C64, C64)> = u_grid
        .par_iter()
        .map(|&s| {
            let lhs: C64 = jd.entries.iter().map(|r| C64::from_polar(r.probability, s * r.sigma)).sum();
            let minus = eig.map_complex(|x| C64::from_polar(1.0, -s * x))?;
            let plus = eig.map_complex(|x| C64::from_polar(1.0, s * x))?;
            let forward = (rho.entries() * minus.entries() * u_adj.entries() * plus.entries() * u.entries()).trace();
            let reversed = (rho.entries() * plus.entries() * u_adj.entries() * minus.entries() * u.entries()).trace();
            Ok((lhs, forward, reversed))
        })
        .collect::<Result<_>>()?;

    let worst = points.iter().fold(0.0f64, |m, p| m.max((p.0 - p.1).norm()));
    let alternate = points.iter().fold(0.0f64, |m, p| m.max((p.0 - p.2).norm()));
    let lhs: Vec<C64> = points.iter().map(|p| p.0).collect();
    let rhs: Vec<C64> = points.iter().map(|p| p.1).collect();
    let mut report = VerificationReport::new(
        "characteristic_function",
        (Series::complex(&lhs), Series::complex(&rhs)),
        u_grid.to_vec(),
        worst,
        1e-8,
        ErrorMeasure::Absolute,
        jd,
    );
    report.metadata.alternate_max_error = Some(alternate);
    Ok(report)
}

/// Names accepted in a check list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    IntegralFt,
    IntegralFtHeatA,
    IntegralFtHeatB,
    DetailedFt,
    DistributionFt,
    RenyiIdentity,
    MeanHeat,
    OrderedMoments,
    CharacteristicFunction,
}

impl CheckKind {
    /// The exact identities, run by default.
    pub const STANDARD: [CheckKind; 7] = [
        CheckKind::IntegralFt,
        CheckKind::DetailedFt,
        CheckKind::DistributionFt,
        CheckKind::RenyiIdentity,
        CheckKind::MeanHeat,
        CheckKind::OrderedMoments,
        CheckKind::CharacteristicFunction,
    ];

    pub const ALL: [CheckKind; 9] = [
        CheckKind::IntegralFt,
        CheckKind::IntegralFtHeatA,
        CheckKind::IntegralFtHeatB,
        CheckKind::DetailedFt,
        CheckKind::DistributionFt,
        CheckKind::RenyiIdentity,
        CheckKind::MeanHeat,
        CheckKind::OrderedMoments,
        CheckKind::CharacteristicFunction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::IntegralFt => "integral_ft",
            CheckKind::IntegralFtHeatA => "integral_ft_heat_A",
            CheckKind::IntegralFtHeatB => "integral_ft_heat_B",
            CheckKind::DetailedFt => "detailed_ft",
            CheckKind::DistributionFt => "distribution_ft",
            CheckKind::RenyiIdentity => "renyi_identity",
            CheckKind::MeanHeat => "mean_heat",
            CheckKind::OrderedMoments => "ordered_moments",
            CheckKind::CharacteristicFunction => "characteristic_function",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Whether the check also accepts a sampled distribution.
    pub fn supports_sampling(self) -> bool {
        matches!(
            self,
            CheckKind::IntegralFt | CheckKind::IntegralFtHeatA | CheckKind::IntegralFtHeatB | CheckKind::MeanHeat
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckSettings {
    pub z_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub moment_order: u32,
    pub bin_eps: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self { z_grid: DEFAULT_Z_GRID.to_vec(), u_grid: DEFAULT_U_GRID.to_vec(), moment_order: 4, bin_eps: 1e-9 }
    }
}

/// One point of a coupling or contact-time scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub g: f64,
    pub tau: f64,
    /// `Σ p |heat_A − σ|`.
    pub mean_heat_deviation: f64,
    /// `max |heat_A − σ|` over pairs heavier than [`PAIR_WEIGHT_FLOOR`].
    pub max_heat_deviation: f64,
    pub ft_residual_sigma: f64,
    pub ft_residual_heat: f64,
    /// Largest `max_error / tolerance` over the exact σ identities.
    pub sigma_residual_ratio: f64,
    pub sigma_passed: bool,
    pub reports: Vec<VerificationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    /// Every σ identity held at every point.
    pub sigma_passed: bool,
    /// The mean heat deviation never grew by more than the slack factor from
    /// one point to the next; only asserted for coupling scans.
    pub monotone: Option<bool>,
    pub passed: bool,
}

/// Allowed growth of the heat deviation between consecutive, decreasing
/// couplings.
pub const MONOTONE_SLACK: f64 = 1.5;

fn scan_row(scenario: &Scenario, checks: &[CheckKind], settings: &CheckSettings) -> Result<ScanRow> {
    let real = scenario.realize()?;
    let reports = real.verify(checks, settings)?;
    let (mean, max) = real.heat_deviation();
    let jd = &real.distribution;
    Ok(ScanRow {
        g: scenario.g,
        tau: scenario.tau,
        mean_heat_deviation: mean,
        max_heat_deviation: max,
        ft_residual_sigma: (jd.expectation(|r| (-r.sigma).exp()) - 1.0).abs(),
        ft_residual_heat: (jd.expectation(|r| (-r.heat_a).exp()) - 1.0).abs(),
        sigma_residual_ratio: reports.iter().fold(0.0f64, |m, r| m.max(r.max_error / r.tolerance)),
        sigma_passed: reports.iter().all(|r| r.passed),
        reports,
    })
}

/// Runs the exact σ checks at every `(g, τ)` point, in parallel.
pub fn scan_points(
    scenario: &Scenario,
    points: &[(f64, f64)],
    checks: &[CheckKind],
    settings: &CheckSettings,
) -> Result<ScanReport> {
    let rows: Vec<ScanRow> = points
        .par_iter()
        .map(|&(g, tau)| scan_row(&scenario.with_coupling(g).with_tau(tau), checks, settings))
        .collect::<Result<_>>()?;
    let sigma_passed = rows.iter().all(|r| r.sigma_passed);
    Ok(ScanReport { rows, sigma_passed, monotone: None, passed: sigma_passed })
}

/// Weak-coupling diagnostic: for non-increasing `g_values`, the σ identities
/// must hold at every coupling while `Σ p |heat_A − σ|` shrinks (up to
/// [`MONOTONE_SLACK`]).
pub fn coupling_scan(scenario: &Scenario, g_values: &[f64], settings: &CheckSettings) -> Result<ScanReport> {
    coupling_scan_with(scenario, g_values, &CheckKind::STANDARD, settings)
}

/// [`coupling_scan`] with an explicit list of σ checks.
pub fn coupling_scan_with(
    scenario: &Scenario,
    g_values: &[f64],
    checks: &[CheckKind],
    settings: &CheckSettings,
) -> Result<ScanReport> {
    if g_values.iter().any(|g| g.is_nan() || *g < 0.0) || g_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Range(format!(
            "coupling scan needs non-negative, non-increasing g values, got {g_values:?}"
        )));
    }
    let points: Vec<(f64, f64)> = g_values.iter().map(|&g| (g, scenario.tau)).collect();
    let mut report = scan_points(scenario, &points, checks, settings)?;
    let monotone =
        report.rows.windows(2).all(|w| w[1].mean_heat_deviation <= MONOTONE_SLACK * w[0].mean_heat_deviation);
    report.monotone = Some(monotone);
    report.passed = report.sigma_passed && monotone;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    /// `heat_A = Δβ (E_n^A − E_m^A)` per pair.
    pub heat_identity: VerificationReport,
    /// Integral, detailed, Rényi and mean-heat checks on σ.
    pub sigma_checks: Vec<VerificationReport>,
    pub max_heat_deviation: f64,
    pub passed: bool,
}

/// With energy as the only generator on both sides the generalized heat is
/// `Δβ ΔE_A`, and the σ identities hold unchanged.
pub fn jarzynski_wojcik_reduction(scenario: &Scenario, settings: &CheckSettings) -> Result<ReductionReport> {
    for spec in [&scenario.spec_a, &scenario.spec_b] {
        if spec.operator_count() != 1 {
            return Err(Error::Model(format!(
                "system {} carries charges {:?}; the reduction needs energy only",
                spec.label,
                &spec.generator_names()[1..]
            )));
        }
    }
    let real = scenario.realize()?;
    let jd = &real.distribution;
    let delta_beta = scenario.theta_b.as_slice()[0] - scenario.theta_a.as_slice()[0];
    let nb = real.table_b.n_classes();
    let energy = |class: usize| real.table_a.class_tuples[class / nb][0];
    let lhs: Vec<f64> = jd.entries.iter().map(|r| r.heat_a).collect();
    let rhs: Vec<f64> = jd.entries.iter().map(|r| delta_beta * (energy(r.n) - energy(r.m))).collect();
    let worst = lhs.iter().zip(&rhs).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let heat_identity = VerificationReport::new(
        "heat_reduction",
        (Series::Real(lhs), Series::Real(rhs)),
        Vec::new(),
        worst,
        1e-12,
        ErrorMeasure::Absolute,
        jd,
    );
    let sigma_checks = real.verify(
        &[CheckKind::IntegralFt, CheckKind::DetailedFt, CheckKind::RenyiIdentity, CheckKind::MeanHeat],
        settings,
    )?;
    let passed = heat_identity.passed && sigma_checks.iter().all(|r| r.passed);
    Ok(ReductionReport { heat_identity, sigma_checks, max_heat_deviation: real.heat_deviation().1, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpm::{DistributionMetadata, PairRecord};

    fn diag(p: &[f64]) -> OperatorMatrix {
        OperatorMatrix::diagonal(p)
    }

    fn two_point(records: Vec<PairRecord>) -> JointDistribution {
        JointDistribution {
            entries: records,
            initial_probs: vec![],
            mode: DistributionMode::Exact,
            metadata: DistributionMetadata::default(),
        }
    }

    fn rec(n: usize, m: usize, probability: f64, sigma: f64) -> PairRecord {
        PairRecord { n, m, probability, sigma, heat_a: sigma, heat_b: sigma }
    }

    #[test]
    fn renyi_closed_forms() {
        let p = diag(&[0.75, 0.25]);
        let q = diag(&[0.5, 0.5]);
        let s2 = renyi_divergence(&p, &q, 2.0).unwrap();
        assert!((s2 - 1.25f64.ln()).abs() < 1e-14);
        for z in [-1.0, 0.0, 0.5, 2.0, 3.0] {
            assert!(renyi_divergence(&p, &p, z).unwrap().abs() < 1e-14);
        }
        assert!(renyi_divergence(&p, &q, 0.0).unwrap().abs() < 1e-14);
        assert!(matches!(renyi_divergence(&p, &q, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn relative_entropy_closed_forms() {
        let p = diag(&[0.75, 0.25]);
        let q = diag(&[0.5, 0.5]);
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((relative_entropy(&p, &q).unwrap() - expected).abs() < 1e-14);
        assert!(relative_entropy(&p, &p).unwrap().abs() < 1e-14);
        let singular = diag(&[1.0, 0.0]);
        assert!(matches!(relative_entropy(&p, &singular), Err(Error::Domain(_))));
    }

    #[test]
    fn spectral_powers_match_matrix_functions() {
        let rho = OperatorMatrix::hermitian(DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.7, 0.0), C64::new(0.1, 0.2), C64::new(0.1, -0.2), C64::new(0.3, 0.0)],
        ))
        .unwrap();
        let s = SpectralDensity::from_density(&rho).unwrap();
        assert!(s.to_operator().unwrap().max_abs_diff(&rho) < 1e-14);
        let inv = s.power(-1.0).unwrap();
        let id = &inv * &rho;
        assert!(id.max_abs_diff(&OperatorMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn integral_ft_on_hand_built_distributions() {
        // σ = ±ln 2 with p(+)/p(−) = 2
        let jd = two_point(vec![
            rec(0, 1, 2.0 / 3.0 * 0.5, 2f64.ln()),
            rec(1, 0, 1.0 / 3.0 * 0.5, -(2f64.ln())),
            rec(0, 0, 0.5, 0.0),
        ]);
        let r = integral_ft(&jd);
        assert!(r.passed, "{r:?}");
        let d = detailed_ft_check(&jd).unwrap();
        assert!(d.passed && d.max_error < 1e-15);
        let broken = two_point(vec![rec(0, 1, 0.5, 1.0), rec(1, 0, 0.5, -1.0)]);
        assert!(!integral_ft(&broken).passed);
        assert!(!detailed_ft_check(&broken).unwrap().passed);
    }

    #[test]
    fn statistical_mode_uses_standard_error() {
        let mut jd = two_point(vec![rec(0, 1, 0.5, 0.1), rec(1, 0, 0.5, -0.1)]);
        jd.mode = DistributionMode::Sampled { count: 100, seed: 0 };
        let r = integral_ft(&jd);
        assert_eq!(r.measure, ErrorMeasure::Statistical);
        let se = r.metadata.standard_error.unwrap();
        assert!(se > 0.0 && (r.tolerance - 4.0 * se).abs() < 1e-15);
        assert!(detailed_ft_check(&jd).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 0), 1.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(5, 5), 1.0);
    }

    #[test]
    fn check_names_round_trip() {
        for k in CheckKind::ALL {
            assert_eq!(CheckKind::from_name(k.name()), Some(k));
        }
        assert_eq!(CheckKind::from_name("nope"), None);
    }
}
