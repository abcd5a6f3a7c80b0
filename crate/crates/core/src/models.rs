//! Spin-chain subsystems with their conserved charges, and the coupled
//! two-chain system evolved between the two measurements.
//!
//! Every Hamiltonian built here is real in the computational basis. Complex
//! conjugation is then a symmetry of the total Hamiltonian, which is how time
//! reversal enters the numerics: the propagator is a symmetric matrix.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{commutator_norm, commutator_scale, embed, OperatorMatrix, Side, DEFAULT_DIM_CAP};
use crate::pauli::{parse_pauli_sum, site_operator, total, Pauli, SiteLayout};

/// Relative tolerance for commutation and reality assumptions.
pub const ASSUMPTION_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Charge {
    pub name: String,
    pub op: OperatorMatrix,
}

impl Charge {
    pub fn new(name: impl Into<String>, op: OperatorMatrix) -> Self {
        Self { name: name.into(), op }
    }
}

/// One subsystem: a Hamiltonian plus its shared (`I_k`) and exclusive
/// (`J_i` on side A, `K_i` on side B) conserved charges.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub label: Side,
    pub n_sites: usize,
    pub local_dim: usize,
    pub hamiltonian: OperatorMatrix,
    pub shared_charges: Vec<Charge>,
    pub exclusive_charges: Vec<Charge>,
    pub model_id: String,
}

fn check_commutes(name: &str, a: &OperatorMatrix, other: &str, b: &OperatorMatrix) -> Result<()> {
    let norm = commutator_norm(a, b)?;
    let allowed = ASSUMPTION_TOL * commutator_scale(a, b);
    if norm > allowed {
        return Err(Error::Commutation { name: name.to_string(), other: other.to_string(), norm, allowed });
    }
    Ok(())
}

fn check_real(what: &str, op: &OperatorMatrix) -> Result<()> {
    if !op.is_real() {
        return Err(Error::TimeReversal { what: what.to_string(), residual: op.imag_residual() });
    }
    Ok(())
}

fn chain_dim(n_sites: usize) -> Result<usize> {
    if n_sites == 0 {
        return Err(Error::Model("a chain needs at least one site".into()));
    }
    let cap_sites = DEFAULT_DIM_CAP.trailing_zeros() as usize;
    if n_sites > cap_sites {
        return Err(Error::Capacity {
            requested: usize::checked_shl(1, n_sites as u32).unwrap_or(usize::MAX),
            cap: DEFAULT_DIM_CAP,
        });
    }
    Ok(1 << n_sites)
}

impl SystemSpec {
    /// Builds and validates a subsystem.
    pub fn new(
        label: Side,
        n_sites: usize,
        hamiltonian: OperatorMatrix,
        shared_charges: Vec<Charge>,
        exclusive_charges: Vec<Charge>,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        let spec = Self::new_unchecked(label, n_sites, hamiltonian, shared_charges, exclusive_charges, model_id);
        spec.validate()?;
        Ok(spec)
    }

    /// Same as [`SystemSpec::new`] without the commutation and reality
    /// checks. Used to build specs whose assumptions are then reported by
    /// [`verify_system`].
    pub fn new_unchecked(
        label: Side,
        n_sites: usize,
        hamiltonian: OperatorMatrix,
        shared_charges: Vec<Charge>,
        exclusive_charges: Vec<Charge>,
        model_id: impl Into<String>,
    ) -> Self {
        Self { label, n_sites, local_dim: 2, hamiltonian, shared_charges, exclusive_charges, model_id: model_id.into() }
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn charges(&self) -> impl Iterator<Item = &Charge> {
        self.shared_charges.iter().chain(&self.exclusive_charges)
    }

    /// Generators in temperature order: `H`, shared charges, exclusive charges.
    pub fn generators(&self) -> Vec<&OperatorMatrix> {
        std::iter::once(&self.hamiltonian).chain(self.charges().map(|c| &c.op)).collect()
    }

    pub fn generator_names(&self) -> Vec<String> {
        std::iter::once("H".to_string()).chain(self.charges().map(|c| c.name.clone())).collect()
    }

    pub fn operator_count(&self) -> usize {
        1 + self.shared_charges.len() + self.exclusive_charges.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.local_dim.pow(self.n_sites as u32);
        for (name, op) in self.generator_names().iter().zip(self.generators()) {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "'{name}' has dim {} but the chain has dim {dim}",
                    op.dim()
                )));
            }
            if !op.is_hermitian() {
                return Err(Error::NotHermitian { residual: op.hermitian_residual(), allowed: 0.0 });
            }
        }
        check_real("Hamiltonian", &self.hamiltonian)?;
        let mut seen = std::collections::HashSet::new();
        for c in self.charges() {
            if c.name == "H" || !seen.insert(c.name.as_str()) {
                return Err(Error::Model(format!("duplicate generator name '{}'", c.name)));
            }
        }
        let charges: Vec<&Charge> = self.charges().collect();
        for (i, c) in charges.iter().enumerate() {
            check_commutes(&c.name, &c.op, "H", &self.hamiltonian)?;
            for other in &charges[..i] {
                check_commutes(&c.name, &c.op, &other.name, &other.op)?;
            }
        }
        Ok(())
    }
}

fn sum_terms(dim: usize, terms: impl IntoIterator<Item = (f64, OperatorMatrix)>) -> Result<OperatorMatrix> {
    let mut acc = OperatorMatrix::zeros(dim);
    for (c, op) in terms {
        acc = &acc + &op.scaled(c);
    }
    OperatorMatrix::hermitian(acc.into_entries())
}

/// Open XX chain `Σ (J/2)(XX + YY) + h Σ Z` with total magnetization
/// `Mz = Σ Z / 2` as its shared charge.
pub fn build_xx_chain(n_sites: usize, coupling: f64, field: f64, label: Side) -> Result<SystemSpec> {
    let dim = chain_dim(n_sites)?;
    let mut terms = Vec::new();
    for i in 0..n_sites.saturating_sub(1) {
        terms.push((coupling / 2.0, site_operator(&[(i, Pauli::X), (i + 1, Pauli::X)], n_sites)?));
        terms.push((coupling / 2.0, site_operator(&[(i, Pauli::Y), (i + 1, Pauli::Y)], n_sites)?));
    }
    terms.push((field, total(Pauli::Z, n_sites)?));
    let h = sum_terms(dim, terms)?;
    let mz = total(Pauli::Z, n_sites)?.scaled(0.5);
    SystemSpec::new(
        label,
        n_sites,
        h,
        vec![Charge::new("Mz", mz)],
        vec![],
        format!("xx(n={n_sites},J={coupling},h={field})"),
    )
}

/// Open Ising chain in a tilted field, `J Σ ZZ + hx Σ X + hz Σ Z`. No
/// charges beyond the energy.
pub fn build_tilted_ising_chain(n_sites: usize, coupling: f64, hx: f64, hz: f64, label: Side) -> Result<SystemSpec> {
    let dim = chain_dim(n_sites)?;
    let mut terms = Vec::new();
    for i in 0..n_sites.saturating_sub(1) {
        terms.push((coupling, site_operator(&[(i, Pauli::Z), (i + 1, Pauli::Z)], n_sites)?));
    }
    terms.push((hx, total(Pauli::X, n_sites)?));
    terms.push((hz, total(Pauli::Z, n_sites)?));
    let h = sum_terms(dim, terms)?;
    SystemSpec::new(
        label,
        n_sites,
        h,
        vec![],
        vec![],
        format!("tilted_ising(n={n_sites},J={coupling},hx={hx},hz={hz})"),
    )
}

pub fn add_exclusive_charge(spec: &SystemSpec, name: &str, op: OperatorMatrix) -> Result<SystemSpec> {
    let mut next = spec.clone();
    next.exclusive_charges.push(Charge::new(name, op));
    next.validate()?;
    Ok(next)
}

pub fn add_shared_charge(spec: &SystemSpec, name: &str, op: OperatorMatrix) -> Result<SystemSpec> {
    let mut next = spec.clone();
    next.shared_charges.push(Charge::new(name, op));
    next.validate()?;
    Ok(next)
}

#[derive(Clone, Debug)]
pub enum CouplingKind {
    /// `(X_{A,last} X_{B,first} + Y_{A,last} Y_{B,first}) / 2`
    Exchange,
    /// `Z_{A,last} Z_{B,first}`
    Ising,
    Custom(OperatorMatrix),
}

impl CouplingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingKind::Exchange => "exchange",
            CouplingKind::Ising => "ising",
            CouplingKind::Custom(_) => "custom",
        }
    }

    fn operator(&self, n_a: usize, n_b: usize) -> Result<OperatorMatrix> {
        let layout = SiteLayout::Joint { n_a, n_b };
        match self {
            CouplingKind::Exchange => {
                parse_pauli_sum("0.5 * X[last_A] X[first_B] + 0.5 * Y[last_A] Y[first_B]", layout)?.to_operator()
            }
            CouplingKind::Ising => parse_pauli_sum("Z[last_A] Z[first_B]", layout)?.to_operator(),
            CouplingKind::Custom(op) => Ok(op.clone()),
        }
    }
}

/// Commutator norms of `g·H_AB` against the quantities that are conserved
/// only approximately (energy) or possibly exactly (shared charges).
#[derive(Clone, Debug, Serialize)]
pub struct ConservationDiagnostics {
    /// `‖[g H_AB, H_A + H_B]‖`
    pub energy: f64,
    /// `‖[g H_AB, I_k^A + I_k^B]‖` per shared charge
    pub shared: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct CompositeSystem {
    pub spec_a: SystemSpec,
    pub spec_b: SystemSpec,
    pub coupling_kind: String,
    /// Unscaled `H_AB`.
    pub coupling: OperatorMatrix,
    pub coupling_strength: f64,
    pub total_hamiltonian: OperatorMatrix,
    pub diagnostics: ConservationDiagnostics,
}

impl CompositeSystem {
    pub fn dims(&self) -> (usize, usize) {
        (self.spec_a.dim(), self.spec_b.dim())
    }

    pub fn joint_dim(&self) -> usize {
        self.spec_a.dim() * self.spec_b.dim()
    }
}

/// Couples the two subsystems: `H = H_A ⊗ 1 + 1 ⊗ H_B + g·H_AB`.
pub fn build_composite(
    spec_a: &SystemSpec,
    spec_b: &SystemSpec,
    coupling: CouplingKind,
    g: f64,
) -> Result<CompositeSystem> {
    spec_a.validate()?;
    spec_b.validate()?;
    let cs = build_composite_unchecked(spec_a, spec_b, coupling, g)?;
    check_real("coupling", &cs.coupling)?;
    check_real("total Hamiltonian", &cs.total_hamiltonian)?;
    Ok(cs)
}

/// Assembles the composite without enforcing commutation or reality, for
/// use with [`verify_assumptions`].
pub fn build_composite_unchecked(
    spec_a: &SystemSpec,
    spec_b: &SystemSpec,
    coupling: CouplingKind,
    g: f64,
) -> Result<CompositeSystem> {
    if spec_a.label != Side::A || spec_b.label != Side::B {
        return Err(Error::Model("subsystems must be labeled A and B in that order".into()));
    }
    let names_a: Vec<&str> = spec_a.shared_charges.iter().map(|c| c.name.as_str()).collect();
    let names_b: Vec<&str> = spec_b.shared_charges.iter().map(|c| c.name.as_str()).collect();
    if names_a != names_b {
        return Err(Error::Model(format!("shared charges must pair up by name: A has {names_a:?}, B has {names_b:?}")));
    }
    if !g.is_finite() {
        return Err(Error::Range(format!("coupling strength {g}")));
    }
    let dims = (spec_a.dim(), spec_b.dim());
    let kind = coupling.name().to_string();
    let h_ab = coupling.operator(spec_a.n_sites, spec_b.n_sites)?;
    if h_ab.dim() != dims.0 * dims.1 {
        return Err(Error::DimensionMismatch(format!(
            "coupling has dim {} but the joint space has dim {}",
            h_ab.dim(),
            dims.0 * dims.1
        )));
    }
    if !h_ab.is_hermitian() {
        return Err(Error::NotHermitian { residual: h_ab.hermitian_residual(), allowed: 0.0 });
    }
    let local = &embed(&spec_a.hamiltonian, Side::A, dims)? + &embed(&spec_b.hamiltonian, Side::B, dims)?;
    let scaled = h_ab.scaled(g);
    let total_hamiltonian = &local + &scaled;

    let energy = commutator_norm(&scaled, &local)?;
    let shared = spec_a
        .shared_charges
        .iter()
        .zip(&spec_b.shared_charges)
        .map(|(a, b)| {
            let sum = &embed(&a.op, Side::A, dims)? + &embed(&b.op, Side::B, dims)?;
            Ok((a.name.clone(), commutator_norm(&scaled, &sum)?))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CompositeSystem {
        spec_a: spec_a.clone(),
        spec_b: spec_b.clone(),
        coupling_kind: kind,
        coupling: h_ab,
        coupling_strength: g,
        total_hamiltonian,
        diagnostics: ConservationDiagnostics { energy, shared },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Why the check could not be evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl AssumptionCheck {
    pub fn new(name: String, value: f64, tolerance: f64) -> Self {
        Self { name, value, tolerance, passed: value <= tolerance, detail: None }
    }

    /// A check that could not be evaluated at all.
    pub fn failed(name: String, detail: String) -> Self {
        Self { name, value: f64::INFINITY, tolerance: 0.0, passed: false, detail: Some(detail) }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Informational weak-coupling norms; they do not affect `passed`.
    pub conservation: Option<ConservationDiagnostics>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Commutation and reality diagnostics of a single subsystem.
pub fn verify_system(spec: &SystemSpec) -> Result<AssumptionReport> {
    let mut report = AssumptionReport::default();
    let side = spec.label;
    let h = &spec.hamiltonian;
    report.checks.push(AssumptionCheck::new(
        format!("{side}: Im(H)"),
        h.imag_residual(),
        ASSUMPTION_TOL * h.max_abs().max(1.0),
    ));
    let charges: Vec<&Charge> = spec.charges().collect();
    for (i, c) in charges.iter().enumerate() {
        report.checks.push(AssumptionCheck::new(
            format!("{side}: [H, {}]", c.name),
            commutator_norm(h, &c.op)?,
            ASSUMPTION_TOL * commutator_scale(h, &c.op),
        ));
        for other in &charges[..i] {
            report.checks.push(AssumptionCheck::new(
                format!("{side}: [{}, {}]", other.name, c.name),
                commutator_norm(&other.op, &c.op)?,
                ASSUMPTION_TOL * commutator_scale(&other.op, &c.op),
            ));
        }
    }
    Ok(report)
}

/// Every commutation and reality assumption the fluctuation relations rest
/// on, each with pass/fail against `ASSUMPTION_TOL · scale`.
pub fn verify_assumptions(cs: &CompositeSystem) -> Result<AssumptionReport> {
    let mut report = verify_system(&cs.spec_a)?;
    report.checks.extend(verify_system(&cs.spec_b)?.checks);
    report.checks.push(AssumptionCheck::new(
        "Im(H_AB)".into(),
        cs.coupling.imag_residual(),
        ASSUMPTION_TOL * cs.coupling.max_abs().max(1.0),
    ));
    report.checks.push(AssumptionCheck::new(
        "Im(H_total)".into(),
        cs.total_hamiltonian.imag_residual(),
        ASSUMPTION_TOL * cs.total_hamiltonian.max_abs().max(1.0),
    ));
    report.conservation = Some(cs.diagnostics.clone());
    Ok(report)
}
