//! Generalized Gibbs states `ρ = e^{-Σθ_i O_i} / Z` and the inverse problem
//! of finding the generalized temperatures `θ` that reproduce prescribed
//! charge expectations.
//!
//! The fit minimizes the convex dual `ln Z(θ) + θ·targets`, whose gradient is
//! `targets − ⟨O⟩` and whose Hessian is the covariance matrix of the
//! generators. Because the generators commute, `ln Z`, the moments and the
//! covariance are exact functions of the simultaneous eigenvalue tuples, so
//! the Newton iteration runs on those tuples rather than on matrices.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SystemSpec;
use crate::operator::{eigh, embed, kron, EigenSystem, OperatorMatrix, Side};
use crate::tpm::simultaneous_eigenbasis;

/// Largest admissible `|θ_i|`.
pub const THETA_LIMIT: f64 = 1e3;

/// Ordered `(β₀, β₁..β_M, λ₁..λ_M')` on side A or `(β₀, β₁..β_M, α₁..α_N)`
/// on side B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeneralizedTemperatures(Vec<f64>);

impl GeneralizedTemperatures {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(bad) = theta.iter().find(|x| !x.is_finite()) {
            return Err(Error::Range(format!("non-finite generalized temperature {bad}")));
        }
        Ok(Self(theta))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, tuple: &[f64]) -> f64 {
        self.0.iter().zip(tuple).map(|(a, b)| a * b).sum()
    }
}

/// Target expectations in temperature order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentTargets(Vec<f64>);

impl MomentTargets {
    pub fn new(targets: Vec<f64>) -> Result<Self> {
        if let Some(bad) = targets.iter().find(|x| !x.is_finite()) {
            return Err(Error::Range(format!("non-finite moment target {bad}")));
        }
        Ok(Self(targets))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct GGEState {
    pub theta: GeneralizedTemperatures,
    pub generators: Vec<OperatorMatrix>,
    /// `Σ θ_i O_i`
    pub exponent: OperatorMatrix,
    pub rho: OperatorMatrix,
    pub log_z: f64,
    /// Spectral decomposition of `exponent`.
    pub eigen: EigenSystem,
}

impl GGEState {
    pub fn dim(&self) -> usize {
        self.rho.dim()
    }
}

/// `ln Σ e^{-x_i}` with the largest term factored out.
pub fn log_sum_exp_neg(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let min = values.clone().into_iter().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.into_iter().map(|x| (min - x).exp()).sum();
    sum.ln() - min
}

pub fn gge_state(spec: &SystemSpec, theta: &GeneralizedTemperatures) -> Result<GGEState> {
    gge_state_from_generators(&spec.generators(), theta)
}

/// GGE over an explicit generator list; the generators must commute.
pub fn gge_state_from_generators(generators: &[&OperatorMatrix], theta: &GeneralizedTemperatures) -> Result<GGEState> {
    if theta.len() != generators.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} temperatures for {} generators",
            theta.len(),
            generators.len()
        )));
    }
    if let Some(bad) = theta.as_slice().iter().find(|x| x.abs() > THETA_LIMIT) {
        return Err(Error::Range(format!(
            "|θ| = {} exceeds {THETA_LIMIT:e}; e^(-Σθ O) is not representable reliably",
            bad.abs()
        )));
    }
    let dim = generators[0].dim();
    let mut exponent = OperatorMatrix::zeros(dim);
    for (t, op) in theta.as_slice().iter().zip(generators) {
        exponent = &exponent + &op.scaled(*t);
    }
    let exponent = OperatorMatrix::hermitian(exponent.into_entries())?;
    let eigen = eigh(&exponent)?;
    let log_z = log_sum_exp_neg(eigen.eigenvalues.iter().copied());
    if !log_z.is_finite() {
        return Err(Error::Range(format!("log partition function is {log_z}")));
    }
    let rho = eigen.map(|x| (-x - log_z).exp())?;
    Ok(GGEState {
        theta: theta.clone(),
        generators: generators.iter().map(|g| (*g).clone()).collect(),
        exponent,
        rho,
        log_z,
        eigen,
    })
}

/// `(Tr[ρ O_0], Tr[ρ O_1], …)` in temperature order.
pub fn moments(state: &GGEState) -> Vec<f64> {
    state.generators.iter().map(|o| state.rho.trace_product(o).re).collect()
}

/// `C_jk = Tr[ρ O_j O_k] − Tr[ρ O_j] Tr[ρ O_k]`. For commuting generators
/// this is `−∂⟨O_j⟩/∂θ_k`.
pub fn covariance_matrix(state: &GGEState) -> DMatrix<f64> {
    let k = state.generators.len();
    let means = moments(state);
    let rho_o: Vec<OperatorMatrix> = state.generators.iter().map(|o| &state.rho * o).collect();
    let mut c = DMatrix::zeros(k, k);
    for j in 0..k {
        for l in j..k {
            let v = rho_o[j].trace_product(&state.generators[l]).re - means[j] * means[l];
            c[(j, l)] = v;
            c[(l, j)] = v;
        }
    }
    c
}

/// `ρ(0) = ρ_A ⊗ ρ_B`.
pub fn product_initial_state(state_a: &GGEState, state_b: &GGEState) -> Result<OperatorMatrix> {
    let rho = kron(&state_a.rho, &state_b.rho)?;
    OperatorMatrix::hermitian(rho.into_entries())
}

/// `𝓗_A ⊗ 1 + 1 ⊗ 𝓗_B`, whose exponential is `Z_A Z_B ρ(0)`.
pub fn joint_exponent(state_a: &GGEState, state_b: &GGEState) -> Result<OperatorMatrix> {
    let dims = (state_a.dim(), state_b.dim());
    Ok(&embed(&state_a.exponent, Side::A, dims)? + &embed(&state_b.exponent, Side::B, dims)?)
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub theta: GeneralizedTemperatures,
    /// Accepted Newton steps.
    pub iterations: usize,
    /// `max_i |⟨O_i⟩ − target_i|` at the returned `θ`, evaluated on the
    /// density matrix.
    pub residual: f64,
    /// Dual objective after each accepted step, starting with `θ0`.
    pub objective_trace: Vec<f64>,
}

/// Simultaneous eigenvalue tuples with multiplicities.
struct TupleModel {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

struct Evaluation {
    log_z: f64,
    probs: Vec<f64>,
    means: DVector<f64>,
    cov: DMatrix<f64>,
}

impl TupleModel {
    /// Merged outcome classes; compact, but tuples within the class
    /// tolerance share one representative.
    fn classes(spec: &SystemSpec) -> Result<(Self, Self)> {
        let table = simultaneous_eigenbasis(&spec.generators(), 1e-10)?;
        let mult = table.class_multiplicities();
        let classes = Self { points: table.class_tuples, weights: mult.into_iter().map(|m| m as f64).collect() };
        // one point per eigenvector reproduces the density-matrix moments to round-off
        let exact = Self { weights: vec![1.0; table.tuples.len()], points: table.tuples };
        Ok((classes, exact))
    }

    fn exponents(&self, theta: &[f64]) -> Vec<f64> {
        self.points.iter().map(|p| p.iter().zip(theta).map(|(a, b)| a * b).sum()).collect()
    }

    fn log_z(&self, theta: &[f64]) -> f64 {
        let h = self.exponents(theta);
        let min = h.iter().copied().fold(f64::INFINITY, f64::min);
        let s: f64 = h.iter().zip(&self.weights).map(|(x, w)| w * (min - x).exp()).sum();
        s.ln() - min
    }

    /// `F(θ + dθ) − F(θ)` for the dual objective `F = ln Z + θ·t`, as
    /// `ln Σ p_i e^{−dθ·(x_i − t)}`; exact to relative precision even when
    /// the change is far below the round-off of `F` itself.
    fn objective_change(&self, at: &Evaluation, dtheta: &[f64], t: &[f64]) -> f64 {
        let s: f64 = at
            .probs
            .iter()
            .zip(&self.points)
            .map(|(p, x)| {
                let d: f64 = dtheta.iter().zip(x.iter().zip(t)).map(|(a, (xi, ti))| a * (xi - ti)).sum();
                p * (-d).exp_m1()
            })
            .sum();
        s.ln_1p()
    }

    fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let k = theta.len();
        let log_z = self.log_z(theta);
        let h = self.exponents(theta);
        let probs: Vec<f64> = h.iter().zip(&self.weights).map(|(x, w)| w * (-x - log_z).exp()).collect();
        let mut means = DVector::zeros(k);
        for (p, pt) in probs.iter().zip(&self.points) {
            for j in 0..k {
                means[j] += p * pt[j];
            }
        }
        let mut cov = DMatrix::zeros(k, k);
        for (p, pt) in probs.iter().zip(&self.points) {
            for j in 0..k {
                for l in 0..k {
                    cov[(j, l)] += p * (pt[j] - means[j]) * (pt[l] - means[l]);
                }
            }
        }
        Evaluation { log_z, probs, means, cov }
    }
}

/// Fails unless `targets` is a convex combination of the tuples with every
/// weight strictly positive, i.e. lies in the relative interior of the
/// moment polytope.
fn check_feasible(model: &TupleModel, targets: &[f64]) -> Result<()> {
    let k = targets.len();
    let n = model.points.len();
    // per-coordinate rescaling keeps the equality rows comparable
    let spans: Vec<f64> = (0..k)
        .map(|j| {
            let (lo, hi) = model
                .points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[j]), hi.max(p[j])));
            (hi - lo).max(1.0)
        })
        .collect();

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let slack = lp.add_var(1.0, (0.0, 1.0));
    let w: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    for &wi in &w {
        lp.add_constraint([(wi, 1.0), (slack, -1.0)], ComparisonOp::Ge, 0.0);
    }
    let ones: Vec<_> = w.iter().map(|&wi| (wi, 1.0)).collect();
    lp.add_constraint(&ones, ComparisonOp::Eq, 1.0);
    for j in 0..k {
        let row: Vec<_> = w.iter().zip(&model.points).map(|(&wi, p)| (wi, p[j] / spans[j])).collect();
        lp.add_constraint(&row, ComparisonOp::Eq, targets[j] / spans[j]);
    }
    match lp.solve() {
        Ok(sol) if sol[slack] > 1e-9 => Ok(()),
        Ok(sol) => Err(Error::InfeasibleTarget(format!(
            "targets {targets:?} lie on the boundary of the moment polytope (interior margin {:e})",
            sol[slack]
        ))),
        Err(e) => Err(Error::InfeasibleTarget(format!("targets {targets:?} lie outside the moment polytope ({e})"))),
    }
}

fn solve_regularized(cov: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let mu = if max == 0.0 {
        1.0
    } else if min <= 0.0 || max / min > 1e12 {
        1e-10 * max
    } else {
        0.0
    };
    let v = &eig.eigenvectors;
    let proj = v.transpose() * rhs;
    let scaled =
        DVector::from_iterator(proj.len(), proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p / (l.max(0.0) + mu)));
    v * scaled
}

/// Damped Newton iteration for the generalized temperatures reproducing
/// `targets`, started from `theta0`.
pub fn fit_temperatures(
    spec: &SystemSpec,
    targets: &MomentTargets,
    theta0: &GeneralizedTemperatures,
    options: FitOptions,
) -> Result<FitOutcome> {
    let k = spec.operator_count();
    if targets.as_slice().len() != k || theta0.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} generators, {} targets, {} initial temperatures",
            k,
            targets.as_slice().len(),
            theta0.len()
        )));
    }
    let (classes, model) = TupleModel::classes(spec)?;
    check_feasible(&classes, targets.as_slice())?;

    let t = DVector::from_column_slice(targets.as_slice());
    let mut theta = DVector::from_column_slice(theta0.as_slice());
    let mut eval = model.evaluate(theta.as_slice());
    let mut f = eval.log_z + theta.dot(&t);
    let mut trace = vec![f];
    let mut iterations = 0;
    let polish_tol = options.tol * 1e-2;
    let mut previous = f64::INFINITY;

    loop {
        let gap = &eval.means - &t;
        let residual = gap.amax();
        // Newton converges quadratically; anything slower inside `tol` is round-off
        if residual <= polish_tol || (residual <= options.tol && residual > 0.5 * previous) {
            break;
        }
        previous = residual;
        if iterations >= options.max_iter {
            if residual <= options.tol {
                break;
            }
            return Err(Error::NonConvergence { iterations, residual });
        }
        let step = solve_regularized(&eval.cov, &gap);
        // directional derivative of the objective along `step`
        let slope = -gap.dot(&step);
        let mut s = 1.0;
        let accepted = loop {
            let trial = &theta + &step * s;
            let change = model.objective_change(&eval, (&step * s).as_slice(), t.as_slice());
            if change.is_finite() && change <= 1e-4 * s * slope {
                break Some((model.evaluate(trial.as_slice()), trial, f + change));
            }
            s *= 0.5;
            if s < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((trial_eval, trial, trial_f)) => {
                theta = trial;
                eval = trial_eval;
                f = trial_f;
                trace.push(f);
                iterations += 1;
            }
            // round-off floor reached before the polishing tolerance
            None if residual <= options.tol => break,
            None => return Err(Error::InfeasibleTarget(format!("line search failed at residual {residual:e}"))),
        }
        if theta.amax() > THETA_LIMIT {
            return Err(Error::InfeasibleTarget(format!("generalized temperatures diverged beyond {THETA_LIMIT:e}")));
        }
    }

    let theta = GeneralizedTemperatures::new(theta.iter().copied().collect())?;
    let state = gge_state(spec, &theta)?;
    let residual = moments(&state).iter().zip(targets.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(FitOutcome { theta, iterations, residual, objective_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{add_exclusive_charge, build_tilted_ising_chain, build_xx_chain, SystemSpec};
    use crate::operator::op_func;
    use crate::pauli::Pauli;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qubit(h: OperatorMatrix) -> SystemSpec {
        SystemSpec::new(Side::A, 1, h, vec![], vec![], "qubit").unwrap()
    }

    fn theta(v: &[f64]) -> GeneralizedTemperatures {
        GeneralizedTemperatures::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_theta_is_maximally_mixed() {
        let spec = build_xx_chain(3, 1.0, 0.4, Side::A).unwrap();
        let s = gge_state(&spec, &GeneralizedTemperatures::zeros(2)).unwrap();
        assert!((s.log_z - 8f64.ln()).abs() < 1e-14);
        assert!(s.rho.max_abs_diff(&OperatorMatrix::identity(8).scaled(0.125)) < 1e-15);
        assert!(moments(&s)[1].abs() < 1e-15);
    }

    #[test]
    fn two_level_closed_form() {
        let beta = 3f64.ln() / 2.0;
        let s = gge_state(&qubit(Pauli::Z.matrix()), &theta(&[beta])).unwrap();
        // e^{∓β}/(e^β + e^{-β}) = (1/4, 3/4)
        assert!(s.rho.max_abs_diff(&OperatorMatrix::diagonal(&[0.25, 0.75])) < 1e-15);
        assert!((moments(&s)[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn commuting_generators_add_exponents() {
        let z = Pauli::Z.matrix();
        let spec = add_exclusive_charge(&qubit(z.clone()), "Z2", z).unwrap();
        let split = gge_state(&spec, &theta(&[0.3, 0.4])).unwrap();
        let merged = gge_state(&spec, &theta(&[0.7, 0.0])).unwrap();
        assert!(split.rho.max_abs_diff(&merged.rho) < 1e-15);
        assert_eq!(moments(&split), moments(&merged));
    }

    #[test]
    fn covariance_examples() {
        let z = Pauli::Z.matrix();
        let s = gge_state(&qubit(z.clone()), &theta(&[0.0])).unwrap();
        assert!((covariance_matrix(&s)[(0, 0)] - 1.0).abs() < 1e-15);
        let spec = add_exclusive_charge(&qubit(z.clone()), "Z2", z).unwrap();
        let s = gge_state(&spec, &theta(&[0.2, -0.1])).unwrap();
        assert!(covariance_matrix(&s).determinant().abs() <= 1e-10);
    }

    #[test]
    fn covariance_matches_central_differences() {
        let spec = build_xx_chain(3, 1.0, 0.3, Side::A).unwrap();
        let th = [0.4, -0.6];
        let s = gge_state(&spec, &theta(&th)).unwrap();
        let c = covariance_matrix(&s);
        let eps = 1e-5;
        for k in 0..2 {
            let mut up = th;
            let mut down = th;
            up[k] += eps;
            down[k] -= eps;
            let mu = moments(&gge_state(&spec, &theta(&up)).unwrap());
            let md = moments(&gge_state(&spec, &theta(&down)).unwrap());
            for j in 0..2 {
                let fd = (mu[j] - md[j]) / (2.0 * eps);
                assert!((fd + c[(j, k)]).abs() < 1e-6, "j={j} k={k} fd={fd} c={}", c[(j, k)]);
            }
        }
    }

    #[test]
    fn gibbs_reduction_without_charges() {
        let spec = build_tilted_ising_chain(3, 1.0, 0.8, 0.3, Side::B).unwrap();
        let beta = 0.9;
        let s = gge_state(&spec, &theta(&[beta])).unwrap();
        let unnorm = op_func(&spec.hamiltonian.scaled(-beta), f64::exp).unwrap();
        let direct = unnorm.scaled(1.0 / unnorm.trace().re);
        assert!(s.rho.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn product_state_matches_joint_exponential() {
        let a = build_xx_chain(2, 1.0, 0.2, Side::A).unwrap();
        let b = build_xx_chain(2, 0.5, -0.3, Side::B).unwrap();
        let sa = gge_state(&a, &theta(&[0.7, 0.2])).unwrap();
        let sb = gge_state(&b, &theta(&[-0.4, 1.1])).unwrap();
        let rho0 = product_initial_state(&sa, &sb).unwrap();
        assert!((rho0.trace().re - 1.0).abs() < 1e-14);
        let h = joint_exponent(&sa, &sb).unwrap();
        let direct = op_func(&h.scaled(-1.0), f64::exp).unwrap().scaled((-sa.log_z - sb.log_z).exp());
        assert!(rho0.max_abs_diff(&direct) < 1e-10);

        let mixed_a = gge_state(&a, &GeneralizedTemperatures::zeros(2)).unwrap();
        let mixed_b = gge_state(&b, &GeneralizedTemperatures::zeros(2)).unwrap();
        let rho = product_initial_state(&mixed_a, &mixed_b).unwrap();
        assert!(rho.max_abs_diff(&OperatorMatrix::identity(16).scaled(1.0 / 16.0)) < 1e-15);
    }

    #[test]
    fn product_of_two_level_states_is_diagonal_product() {
        let qa = qubit(Pauli::Z.matrix());
        let qb = SystemSpec::new(Side::B, 1, Pauli::Z.matrix(), vec![], vec![], "qubit").unwrap();
        let sa = gge_state(&qa, &theta(&[3f64.ln() / 2.0])).unwrap();
        let sb = gge_state(&qb, &theta(&[0.0])).unwrap();
        let rho = product_initial_state(&sa, &sb).unwrap();
        assert!(rho.max_abs_diff(&OperatorMatrix::diagonal(&[0.125, 0.125, 0.375, 0.375])) < 1e-15);
    }

    #[test]
    fn rejects_wrong_length_and_huge_theta() {
        let spec = build_xx_chain(2, 1.0, 0.2, Side::A).unwrap();
        assert!(matches!(gge_state(&spec, &theta(&[1.0])), Err(Error::DimensionMismatch(_))));
        assert!(matches!(gge_state(&spec, &theta(&[2e3, 0.0])), Err(Error::Range(_))));
        assert!(GeneralizedTemperatures::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn large_beta_does_not_overflow() {
        let spec = build_xx_chain(3, 1.0, 0.2, Side::A).unwrap();
        let s = gge_state(&spec, &theta(&[300.0, 0.0])).unwrap();
        assert!(s.log_z.is_finite());
        assert!((s.rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_at_zero_targets_returns_zero() {
        let spec = build_xx_chain(2, 1.0, 0.0, Side::A).unwrap();
        let out = fit_temperatures(
            &spec,
            &MomentTargets::new(vec![0.0, 0.0]).unwrap(),
            &GeneralizedTemperatures::zeros(2),
            FitOptions::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.theta.as_slice().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn fit_rejects_boundary_and_outside_targets() {
        let spec = qubit(Pauli::Z.matrix());
        for target in [-1.0, 1.0, 1.5] {
            let r = fit_temperatures(
                &spec,
                &MomentTargets::new(vec![target]).unwrap(),
                &GeneralizedTemperatures::zeros(1),
                FitOptions::default(),
            );
            assert!(matches!(r, Err(Error::InfeasibleTarget(_))), "{target}: {r:?}");
        }
    }

    #[test]
    fn fit_recovers_theta_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let spec = build_xx_chain(3, 1.0, 0.35, Side::A).unwrap();
        for _ in 0..5 {
            let truth = theta(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let targets = MomentTargets::new(moments(&gge_state(&spec, &truth).unwrap())).unwrap();
            let out =
                fit_temperatures(&spec, &targets, &GeneralizedTemperatures::zeros(2), FitOptions::default()).unwrap();
            assert!(out.residual <= 1e-10);
            for (a, b) in out.theta.as_slice().iter().zip(truth.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
            // the dual objective only decreases
            assert!(out.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn fit_with_duplicated_generator() {
        let z = Pauli::Z.matrix();
        let spec = add_exclusive_charge(&qubit(z.clone()), "Z2", z).unwrap();
        let out = fit_temperatures(
            &spec,
            &MomentTargets::new(vec![0.3, 0.3]).unwrap(),
            &GeneralizedTemperatures::zeros(2),
            FitOptions::default(),
        )
        .unwrap();
        assert!(out.residual <= 1e-10);
        let inconsistent = fit_temperatures(
            &spec,
            &MomentTargets::new(vec![0.3, 0.2]).unwrap(),
            &GeneralizedTemperatures::zeros(2),
            FitOptions::default(),
        );
        assert!(matches!(inconsistent, Err(Error::InfeasibleTarget(_))));
    }

    #[test]
    fn fit_reports_non_convergence() {
        let spec = build_xx_chain(2, 1.0, 0.3, Side::A).unwrap();
        let targets = MomentTargets::new(moments(&gge_state(&spec, &theta(&[1.2, -0.8])).unwrap())).unwrap();
        let r = fit_temperatures(
            &spec,
            &targets,
            &GeneralizedTemperatures::zeros(2),
            FitOptions { tol: 1e-10, max_iter: 1 },
        );
        assert!(matches!(r, Err(Error::NonConvergence { iterations: 1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn states_are_normalized_and_stationary(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let spec = build_xx_chain(3, 0.8, 0.25, Side::B).unwrap();
            let s = gge_state(&spec, &theta(&[a, b])).unwrap();
            prop_assert!((s.rho.trace().re - 1.0).abs() <= 1e-12);
            let scale = s.exponent.max_abs().max(1.0);
            prop_assert!(crate::operator::commutator_norm(&s.rho, &s.exponent).unwrap() <= 1e-12 * scale);
            let c = covariance_matrix(&s);
            let eig = c.symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&x| x >= -1e-10));
        }
    }
}
