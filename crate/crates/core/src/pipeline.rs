//! End-to-end realization of one heat-exchange protocol.

use nalgebra::DMatrix;

use crate::analysis::{
    characteristic_function_check, detailed_ft_check, distribution_ft_check, integral_ft, integral_ft_with,
    mean_heat_check, ordered_moment_check, renyi_identity_check, CheckKind, CheckSettings, SpectralDensity,
    VerificationReport,
};
use crate::error::Result;
use crate::gge::{gge_state, joint_exponent, GGEState, GeneralizedTemperatures};
use crate::models::{build_composite, CompositeSystem, CouplingKind, SystemSpec};
use crate::operator::OperatorMatrix;
use crate::tpm::{
    evolve_unitary, initial_probabilities, joint_distribution, outcome_table, sample_trajectories, transition_matrix,
    DistributionMetadata, JointDistribution, OutcomeTable, SideOutcomes, ValueKind,
};

/// Tolerance used to resolve simultaneous eigenbases.
pub const BASIS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    Enumerate,
    Sample { count: u64, seed: u64 },
}

/// Two subsystems at given generalized temperatures, a coupling and a contact
/// time.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec_a: SystemSpec,
    pub spec_b: SystemSpec,
    pub coupling: CouplingKind,
    pub g: f64,
    pub tau: f64,
    pub theta_a: GeneralizedTemperatures,
    pub theta_b: GeneralizedTemperatures,
}

/// Everything computed for one scenario.
#[derive(Clone, Debug)]
pub struct Realization {
    pub system: CompositeSystem,
    pub state_a: GGEState,
    pub state_b: GGEState,
    pub table_a: OutcomeTable,
    pub table_b: OutcomeTable,
    pub probs_a: Vec<f64>,
    pub probs_b: Vec<f64>,
    pub propagator: OperatorMatrix,
    /// Column-level transition probabilities; absent in sampled mode.
    pub transitions: Option<DMatrix<f64>>,
    pub distribution: JointDistribution,
    /// `ρ(0) = ρ_A ⊗ ρ_B`.
    pub initial: SpectralDensity,
    /// `ρ(τ) = U ρ(0) U†`.
    pub evolved: SpectralDensity,
    /// Joint exponent `h` with `ρ(0) = e^{−h}/Z`.
    pub exponent: OperatorMatrix,
}

impl Scenario {
    pub fn with_coupling(&self, g: f64) -> Self {
        Self { g, ..self.clone() }
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }

    pub fn realize(&self) -> Result<Realization> {
        self.realize_with(SamplingMode::Enumerate)
    }

    pub fn realize_with(&self, mode: SamplingMode) -> Result<Realization> {
        let system = build_composite(&self.spec_a, &self.spec_b, self.coupling.clone(), self.g)?;
        let state_a = gge_state(&self.spec_a, &self.theta_a)?;
        let state_b = gge_state(&self.spec_b, &self.theta_b)?;
        let table_a = outcome_table(&self.spec_a, BASIS_TOL)?;
        let table_b = outcome_table(&self.spec_b, BASIS_TOL)?;
        let probs_a = initial_probabilities(&state_a, &table_a)?;
        let probs_b = initial_probabilities(&state_b, &table_b)?;
        let propagator = evolve_unitary(&system, self.tau)?;

        let side_a = SideOutcomes { probs: &probs_a, table: &table_a, theta: &self.theta_a };
        let side_b = SideOutcomes { probs: &probs_b, table: &table_b, theta: &self.theta_b };
        let (transitions, mut distribution) = match mode {
            SamplingMode::Enumerate => {
                let t = transition_matrix(&propagator, &OutcomeTable::product(&table_a, &table_b))?;
                let jd = joint_distribution(side_a, side_b, &t)?;
                (Some(t), jd)
            }
            SamplingMode::Sample { count, seed } => {
                (None, sample_trajectories(side_a, side_b, &propagator, count, seed)?)
            }
        };
        distribution.metadata = DistributionMetadata {
            tau: Some(self.tau),
            g: Some(self.g),
            models: vec![self.spec_a.model_id.clone(), self.spec_b.model_id.clone()],
        };

        let initial =
            SpectralDensity::product(&SpectralDensity::from_state(&state_a), &SpectralDensity::from_state(&state_b));
        let evolved = initial.evolved(&propagator)?;
        let exponent = joint_exponent(&state_a, &state_b)?;
        Ok(Realization {
            system,
            state_a,
            state_b,
            table_a,
            table_b,
            probs_a,
            probs_b,
            propagator,
            transitions,
            distribution,
            initial,
            evolved,
            exponent,
        })
    }
}

impl Realization {
    pub fn check(&self, kind: CheckKind, settings: &CheckSettings) -> Result<VerificationReport> {
        let jd = &self.distribution;
        match kind {
            CheckKind::IntegralFt => Ok(integral_ft(jd)),
            CheckKind::IntegralFtHeatA => Ok(integral_ft_with(jd, ValueKind::HeatA)),
            CheckKind::IntegralFtHeatB => Ok(integral_ft_with(jd, ValueKind::HeatB)),
            CheckKind::DetailedFt => detailed_ft_check(jd),
            CheckKind::DistributionFt => distribution_ft_check(jd, settings.bin_eps),
            CheckKind::RenyiIdentity => renyi_identity_check(jd, &self.initial, &self.evolved, &settings.z_grid),
            CheckKind::MeanHeat => mean_heat_check(jd, &self.initial, &self.evolved),
            CheckKind::OrderedMoments => ordered_moment_check(jd, &self.initial, &self.evolved, settings.moment_order),
            CheckKind::CharacteristicFunction => {
                characteristic_function_check(jd, &self.exponent, &self.propagator, &settings.u_grid)
            }
        }
    }

    pub fn verify(&self, checks: &[CheckKind], settings: &CheckSettings) -> Result<Vec<VerificationReport>> {
        checks.iter().map(|&k| self.check(k, settings)).collect()
    }

    /// Probability-weighted mean and maximum over weighted pairs of
    /// `|heat_A − σ|`.
    pub fn heat_deviation(&self) -> (f64, f64) {
        let jd = &self.distribution;
        let mean = jd.expectation(|r| (r.heat_a - r.sigma).abs());
        let max = jd
            .entries
            .iter()
            .filter(|r| r.probability > crate::analysis::PAIR_WEIGHT_FLOOR)
            .fold(0.0f64, |m, r| m.max((r.heat_a - r.sigma).abs()));
        (mean, max)
    }
}
