//! Two-point measurement statistics.
//!
//! Both subsystems are measured in a simultaneous eigenbasis of all their
//! generators, the joint system evolves under the coupled Hamiltonian for a
//! time `τ`, and both are measured again. Outcomes are eigenvalue tuples; any
//! rotation inside a degenerate tuple subspace is unphysical, so the joint
//! distribution is aggregated over outcome classes (distinct tuples) rather
//! than over basis columns.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gge::{GGEState, GeneralizedTemperatures};
use crate::models::{CompositeSystem, SystemSpec};
use crate::operator::{commutator_norm, commutator_scale, eigh, OperatorMatrix};

/// Squared overlaps below this are round-off of orthonormal bases and are
/// set to zero.
pub const TRANSITION_FLOOR: f64 = 1e-28;

/// Samples drawn per independent random stream.
pub const SAMPLE_CHUNK: u64 = 4096;

/// Simultaneous eigenbasis of a commuting generator set and the eigenvalue
/// tuple of every basis column.
#[derive(Clone, Debug)]
pub struct OutcomeTable {
    /// Columns are the simultaneous eigenvectors.
    pub basis: DMatrix<C64>,
    /// Per column, one eigenvalue per generator in temperature order.
    pub tuples: Vec<Vec<f64>>,
    /// Per column, the index of its outcome class.
    pub classes: Vec<usize>,
    /// Per class, its eigenvalue tuple.
    pub class_tuples: Vec<Vec<f64>>,
    /// Number of shared charges; the tuple layout is `[E, shared.., exclusive..]`.
    pub n_shared: usize,
}

impl OutcomeTable {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.class_tuples.len()
    }

    pub fn tuple_len(&self) -> usize {
        self.class_tuples.first().map_or(0, Vec::len)
    }

    pub fn class_multiplicities(&self) -> Vec<usize> {
        let mut m = vec![0; self.n_classes()];
        for &c in &self.classes {
            m[c] += 1;
        }
        m
    }

    /// Table for the joint space: columns `n_A · dim_B + n_B`, tuples
    /// concatenated, classes `c_A · classes_B + c_B`.
    pub fn product(a: &OutcomeTable, b: &OutcomeTable) -> OutcomeTable {
        let basis = a.basis.kronecker(&b.basis);
        let mut tuples = Vec::with_capacity(a.dim() * b.dim());
        let mut classes = Vec::with_capacity(a.dim() * b.dim());
        for (ta, &ca) in a.tuples.iter().zip(&a.classes) {
            for (tb, &cb) in b.tuples.iter().zip(&b.classes) {
                tuples.push(ta.iter().chain(tb).copied().collect());
                classes.push(ca * b.n_classes() + cb);
            }
        }
        let mut class_tuples = Vec::with_capacity(a.n_classes() * b.n_classes());
        for ta in &a.class_tuples {
            for tb in &b.class_tuples {
                class_tuples.push(ta.iter().chain(tb).copied().collect());
            }
        }
        OutcomeTable { basis, tuples, classes, class_tuples, n_shared: a.n_shared }
    }
}

fn cluster_bounds(values: &[f64], gap: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] >= gap {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// Sequential refinement: diagonalize the first operator, then within every
/// degenerate cluster diagonalize the restriction of the next one, and so on.
pub fn simultaneous_eigenbasis(ops: &[&OperatorMatrix], tol: f64) -> Result<OutcomeTable> {
    let first = ops.first().ok_or_else(|| Error::Model("simultaneous eigenbasis of an empty operator set".into()))?;
    let dim = first.dim();
    for (i, a) in ops.iter().enumerate() {
        if a.dim() != dim {
            return Err(Error::DimensionMismatch(format!("operator {i} has dim {} != {dim}", a.dim())));
        }
        for (j, b) in ops[..i].iter().enumerate() {
            let norm = commutator_norm(a, b)?;
            let allowed = tol * commutator_scale(a, b);
            if norm > allowed {
                return Err(Error::Commutation {
                    name: format!("operator {i}"),
                    other: format!("operator {j}"),
                    norm,
                    allowed,
                });
            }
        }
    }

    let mut groups: Vec<DMatrix<C64>> = vec![DMatrix::identity(dim, dim)];
    for op in ops {
        let gap = tol * op.max_abs().max(1.0);
        let mut next = Vec::with_capacity(groups.len());
        for block in groups {
            if block.ncols() == 1 {
                next.push(block);
                continue;
            }
            let restricted = block.adjoint() * op.entries() * &block;
            let restricted = OperatorMatrix::hermitian(restricted)?;
            let eig = eigh(&restricted)?;
            let rotated = &block * &eig.eigenvectors;
            for (lo, hi) in cluster_bounds(&eig.eigenvalues, gap) {
                next.push(rotated.columns(lo, hi - lo).into_owned());
            }
        }
        groups = next;
    }

    let mut basis = DMatrix::<C64>::zeros(dim, dim);
    let mut classes = Vec::with_capacity(dim);
    let mut col = 0;
    for (g, block) in groups.iter().enumerate() {
        for c in 0..block.ncols() {
            basis.set_column(col, &block.column(c));
            classes.push(g);
            col += 1;
        }
    }

    let mut tuples = vec![Vec::with_capacity(ops.len()); dim];
    let mut worst: f64 = 0.0;
    for op in ops {
        let applied = op.entries() * &basis;
        let scale = op.max_abs().max(1.0);
        for (c, tuple) in tuples.iter_mut().enumerate() {
            let v = basis.column(c);
            let ov = applied.column(c);
            let value = v.dotc(&ov).re;
            let residual = (ov - v * C64::new(value, 0.0)).iter().fold(0.0f64, |m, z| m.max(z.norm()));
            worst = worst.max(residual / scale);
            tuple.push(value);
        }
    }
    if worst > 10.0 * tol {
        return Err(Error::Degeneracy { residual: worst });
    }

    let mut class_tuples = vec![Vec::new(); groups.len()];
    for (c, &g) in classes.iter().enumerate() {
        if class_tuples[g].is_empty() {
            class_tuples[g] = tuples[c].clone();
        }
    }
    Ok(OutcomeTable { basis, tuples, classes, class_tuples, n_shared: ops.len().saturating_sub(1) })
}

/// Outcome table of a subsystem's full generator set, with its
/// shared/exclusive layout recorded.
pub fn outcome_table(spec: &SystemSpec, tol: f64) -> Result<OutcomeTable> {
    let mut table = simultaneous_eigenbasis(&spec.generators(), tol)?;
    table.n_shared = spec.shared_charges.len();
    Ok(table)
}

/// First-measurement probabilities `p_c = e^{-θ·tuple_c − ln Z}` per column.
pub fn initial_probabilities(state: &GGEState, table: &OutcomeTable) -> Result<Vec<f64>> {
    if table.tuple_len() != state.theta.len() || table.dim() != state.dim() {
        return Err(Error::DimensionMismatch(format!(
            "table with {} generators on dim {} vs state with {} temperatures on dim {}",
            table.tuple_len(),
            table.dim(),
            state.theta.len(),
            state.dim()
        )));
    }
    let probs: Vec<f64> = table.tuples.iter().map(|t| (-state.theta.dot(t) - state.log_z).exp()).collect();
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical {
            what: "initial probabilities do not sum to one; table and state disagree".into(),
            residual: (total - 1.0).abs(),
        });
    }
    Ok(probs)
}

/// `U = e^{-iτH}` for the coupled Hamiltonian.
pub fn evolve_unitary(cs: &CompositeSystem, tau: f64) -> Result<OperatorMatrix> {
    let h = &cs.total_hamiltonian;
    if !h.is_real() {
        return Err(Error::TimeReversal { what: "total Hamiltonian".into(), residual: h.imag_residual() });
    }
    if !tau.is_finite() {
        return Err(Error::Range(format!("evolution time {tau}")));
    }
    if tau == 0.0 {
        return Ok(OperatorMatrix::identity(h.dim()));
    }
    let u = eigh(h)?.map_complex(|e| C64::from_polar(1.0, -tau * e))?;
    let gram = u.entries().adjoint() * u.entries();
    let residual = (gram - DMatrix::<C64>::identity(h.dim(), h.dim())).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if residual > 1e-8 {
        return Err(Error::Numerical { what: "propagator is not unitary".into(), residual });
    }
    Ok(u)
}

/// `T[m, n] = |⟨m|U|n⟩|²` over basis columns (column `n` is the initial
/// state).
pub fn transition_matrix(u: &OperatorMatrix, table: &OutcomeTable) -> Result<DMatrix<f64>> {
    if u.dim() != table.dim() {
        return Err(Error::DimensionMismatch(format!("propagator dim {} vs table dim {}", u.dim(), table.dim())));
    }
    let d = table.dim();
    // without evolution both measurements agree; skip the round-off of V†V
    if *u.entries() == DMatrix::<C64>::identity(d, d) {
        return Ok(DMatrix::identity(d, d));
    }
    let amplitudes = table.basis.adjoint() * u.entries() * &table.basis;
    let t = amplitudes.map(|a| {
        let p = a.norm_sqr();
        if p < TRANSITION_FLOOR {
            0.0
        } else {
            p
        }
    });
    let worst = t
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .chain(t.column_iter().map(|c| (c.sum() - 1.0).abs()))
        .fold(0.0f64, f64::max);
    if worst > 1e-8 {
        return Err(Error::Numerical { what: "transition matrix is not doubly stochastic".into(), residual: worst });
    }
    Ok(t)
}

/// Per-side inputs of the joint distribution.
#[derive(Clone, Copy, Debug)]
pub struct SideOutcomes<'a> {
    pub probs: &'a [f64],
    pub table: &'a OutcomeTable,
    pub theta: &'a GeneralizedTemperatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ValueKind {
    Sigma,
    HeatA,
    HeatB,
}

impl ValueKind {
    pub const ALL: [ValueKind; 3] = [ValueKind::Sigma, ValueKind::HeatA, ValueKind::HeatB];

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Sigma => "sigma",
            ValueKind::HeatA => "heat_A",
            ValueKind::HeatB => "heat_B",
        }
    }
}

/// One (initial class, final class) outcome pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairRecord {
    pub n: usize,
    pub m: usize,
    pub probability: f64,
    /// Exact change of the exponent `θ_A·𝓔_A + θ_B·𝓔_B`, final minus initial.
    pub sigma: f64,
    /// Generalized heat from the A-side charge differences.
    pub heat_a: f64,
    /// Generalized heat from the B-side charge differences.
    pub heat_b: f64,
}

impl PairRecord {
    pub fn value(&self, kind: ValueKind) -> f64 {
        match kind {
            ValueKind::Sigma => self.sigma,
            ValueKind::HeatA => self.heat_a,
            ValueKind::HeatB => self.heat_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DistributionMode {
    Exact,
    Sampled { count: u64, seed: u64 },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DistributionMetadata {
    pub tau: Option<f64>,
    pub g: Option<f64>,
    pub models: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct JointDistribution {
    pub entries: Vec<PairRecord>,
    /// First-measurement probability per joint outcome class.
    pub initial_probs: Vec<f64>,
    pub mode: DistributionMode,
    pub metadata: DistributionMetadata,
}

impl JointDistribution {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|r| r.probability).sum()
    }

    pub fn expectation(&self, f: impl Fn(&PairRecord) -> f64) -> f64 {
        self.entries.iter().map(|r| r.probability * f(r)).sum()
    }

    /// Σ_m p_nm per initial class.
    pub fn initial_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.initial_probs.len()];
        for r in &self.entries {
            out[r.n] += r.probability;
        }
        out
    }

    pub fn is_exact(&self) -> bool {
        self.mode == DistributionMode::Exact
    }

    pub fn sample_count(&self) -> Option<u64> {
        match self.mode {
            DistributionMode::Sampled { count, .. } => Some(count),
            DistributionMode::Exact => None,
        }
    }
}

struct PairGeometry<'a> {
    a: SideOutcomes<'a>,
    b: SideOutcomes<'a>,
    shared: usize,
}

impl<'a> PairGeometry<'a> {
    fn new(a: SideOutcomes<'a>, b: SideOutcomes<'a>) -> Result<Self> {
        for (side, s) in [("A", &a), ("B", &b)] {
            if s.theta.len() != s.table.tuple_len() || s.probs.len() != s.table.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "side {side}: {} temperatures, {} probabilities, table with {} generators on dim {}",
                    s.theta.len(),
                    s.probs.len(),
                    s.table.tuple_len(),
                    s.table.dim()
                )));
            }
        }
        if a.table.n_shared != b.table.n_shared {
            return Err(Error::DimensionMismatch(format!(
                "{} shared charges on A vs {} on B",
                a.table.n_shared, b.table.n_shared
            )));
        }
        Ok(Self { a, b, shared: a.table.n_shared })
    }

    fn joint_dim(&self) -> usize {
        self.a.table.dim() * self.b.table.dim()
    }

    fn n_classes(&self) -> usize {
        self.a.table.n_classes() * self.b.table.n_classes()
    }

    fn column_class(&self, col: usize) -> usize {
        let db = self.b.table.dim();
        self.a.table.classes[col / db] * self.b.table.n_classes() + self.b.table.classes[col % db]
    }

    fn column_prob(&self, col: usize) -> f64 {
        let db = self.b.table.dim();
        self.a.probs[col / db] * self.b.probs[col % db]
    }

    fn class_prob(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes()];
        for col in 0..self.joint_dim() {
            out[self.column_class(col)] += self.column_prob(col);
        }
        out
    }

    fn record(&self, n: usize, m: usize, probability: f64) -> PairRecord {
        let nb = self.b.table.n_classes();
        let (an, bn) = (&self.a.table.class_tuples[n / nb], &self.b.table.class_tuples[n % nb]);
        let (am, bm) = (&self.a.table.class_tuples[m / nb], &self.b.table.class_tuples[m % nb]);
        let ta = self.a.theta.as_slice();
        let tb = self.b.theta.as_slice();
        let k = 1 + self.shared;

        let sigma: f64 = ta.iter().zip(am.iter().zip(an)).map(|(t, (x, y))| t * (x - y)).sum::<f64>()
            + tb.iter().zip(bm.iter().zip(bn)).map(|(t, (x, y))| t * (x - y)).sum::<f64>();
        // Δβ·(𝓔_n − 𝓔_m) over energy and shared charges
        let heat_a_core: f64 = (0..k).map(|i| (tb[i] - ta[i]) * (an[i] - am[i])).sum();
        let heat_b_core: f64 = (0..k).map(|i| (tb[i] - ta[i]) * (bm[i] - bn[i])).sum();
        let exclusive: f64 = (k..ta.len()).map(|i| ta[i] * (an[i] - am[i])).sum::<f64>()
            + (k..tb.len()).map(|i| tb[i] * (bn[i] - bm[i])).sum::<f64>();

        PairRecord { n, m, probability, sigma, heat_a: heat_a_core - exclusive, heat_b: heat_b_core - exclusive }
    }

    fn records(&self, weights: &DMatrix<f64>) -> Vec<PairRecord> {
        let k = self.n_classes();
        let mut out = Vec::new();
        for n in 0..k {
            for m in 0..k {
                let w = weights[(n, m)];
                if w > 0.0 {
                    out.push(self.record(n, m, w));
                }
            }
        }
        out
    }
}

/// Exact joint outcome distribution `p_nm = p_n T_mn`, aggregated over
/// outcome classes, with `σ`, heat_A and heat_B per pair.
pub fn joint_distribution(a: SideOutcomes, b: SideOutcomes, t: &DMatrix<f64>) -> Result<JointDistribution> {
    let geo = PairGeometry::new(a, b)?;
    let d = geo.joint_dim();
    if t.nrows() != d || t.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix is {}x{} for joint dim {d}",
            t.nrows(),
            t.ncols()
        )));
    }
    let k = geo.n_classes();
    let mut weights = DMatrix::<f64>::zeros(k, k);
    for n in 0..d {
        let pn = geo.column_prob(n);
        if pn == 0.0 {
            continue;
        }
        let cn = geo.column_class(n);
        for m in 0..d {
            let tmn = t[(m, n)];
            if tmn > 0.0 {
                weights[(cn, geo.column_class(m))] += pn * tmn;
            }
        }
    }
    Ok(JointDistribution {
        entries: geo.records(&weights),
        initial_probs: geo.class_prob(),
        mode: DistributionMode::Exact,
        metadata: DistributionMetadata::default(),
    })
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().unwrap_or(&1.0);
    let u: f64 = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Monte Carlo estimate of the joint distribution: `count` trajectories,
/// drawn in fixed-size chunks, each chunk with its own ChaCha stream derived
/// from `seed`. The result does not depend on the number of worker threads.
pub fn sample_trajectories(
    a: SideOutcomes,
    b: SideOutcomes,
    u: &OperatorMatrix,
    count: u64,
    seed: u64,
) -> Result<JointDistribution> {
    if count == 0 {
        return Err(Error::Range("sample count must be at least 1".into()));
    }
    let geo = PairGeometry::new(a, b)?;
    let joint = OutcomeTable::product(a.table, b.table);
    let t = transition_matrix(u, &joint)?;
    let d = geo.joint_dim();
    let k = geo.n_classes();
    let db = b.table.dim();
    let cdf_a = cumulative(a.probs.iter().copied());
    let cdf_b = cumulative(b.probs.iter().copied());
    let cdf_t: Vec<Vec<f64>> = (0..d).map(|n| cumulative(t.column(n).iter().copied())).collect();
    let class_of: Vec<usize> = (0..d).map(|c| geo.column_class(c)).collect();

    let chunks = count.div_ceil(SAMPLE_CHUNK);
    let partial: Vec<HashMap<(usize, usize), u64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let n_here = SAMPLE_CHUNK.min(count - chunk * SAMPLE_CHUNK);
            let mut counts = HashMap::new();
            for _ in 0..n_here {
                let n = draw(&cdf_a, &mut rng) * db + draw(&cdf_b, &mut rng);
                let m = draw(&cdf_t[n], &mut rng);
                *counts.entry((class_of[n], class_of[m])).or_insert(0u64) += 1;
            }
            counts
        })
        .collect();

    let mut totals = DMatrix::<u64>::zeros(k, k);
    for counts in partial {
        for ((n, m), c) in counts {
            totals[(n, m)] += c;
        }
    }
    let weights = totals.map(|c| c as f64 / count as f64);
    Ok(JointDistribution {
        entries: geo.records(&weights),
        initial_probs: geo.class_prob(),
        mode: DistributionMode::Sampled { count, seed },
        metadata: DistributionMetadata::default(),
    })
}

/// Support points of the chosen value with their total probability. Values
/// within `bin_eps · max(1, max|value|)` of the running bin are merged; the
/// bin is reported at its probability-weighted mean.
pub fn binned_distribution(jd: &JointDistribution, kind: ValueKind, bin_eps: f64) -> Vec<(f64, f64)> {
    let mut points: Vec<(f64, f64)> = jd.entries.iter().map(|r| (r.value(kind), r.probability)).collect();
    points.sort_by(|x, y| x.0.total_cmp(&y.0));
    let scale = points.iter().fold(1.0f64, |m, p| m.max(p.0.abs()));
    let width = bin_eps * scale;

    let mut bins: Vec<(f64, f64)> = Vec::new();
    // (first value in bin, weighted sum, probability)
    let mut current: Option<(f64, f64, f64)> = None;
    for (v, p) in points {
        match current {
            Some((start, sum, prob)) if v - start <= width => current = Some((start, sum + v * p, prob + p)),
            _ => {
                if let Some((start, sum, prob)) = current {
                    bins.push((if prob > 0.0 { sum / prob } else { start }, prob));
                }
                current = Some((v, v * p, p));
            }
        }
    }
    if let Some((start, sum, prob)) = current {
        bins.push((if prob > 0.0 { sum / prob } else { start }, prob));
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gge::{gge_state, GeneralizedTemperatures};
    use crate::models::{build_composite, build_xx_chain, CouplingKind, SystemSpec};
    use crate::operator::{kron, Side};
    use crate::pauli::Pauli;
    use std::f64::consts::PI;

    fn theta(v: &[f64]) -> GeneralizedTemperatures {
        GeneralizedTemperatures::new(v.to_vec()).unwrap()
    }

    struct Fixture {
        cs: CompositeSystem,
        ta: OutcomeTable,
        tb: OutcomeTable,
        pa: Vec<f64>,
        pb: Vec<f64>,
        tha: GeneralizedTemperatures,
        thb: GeneralizedTemperatures,
    }

    impl Fixture {
        fn xx(g: f64) -> Self {
            let a = build_xx_chain(2, 1.0, 0.3, Side::A).unwrap();
            let b = build_xx_chain(2, 0.7, 0.3, Side::B).unwrap();
            let tha = theta(&[0.4, 0.9]);
            let thb = theta(&[1.3, -0.5]);
            let sa = gge_state(&a, &tha).unwrap();
            let sb = gge_state(&b, &thb).unwrap();
            let ta = outcome_table(&a, 1e-10).unwrap();
            let tb = outcome_table(&b, 1e-10).unwrap();
            let pa = initial_probabilities(&sa, &ta).unwrap();
            let pb = initial_probabilities(&sb, &tb).unwrap();
            let cs = build_composite(&a, &b, CouplingKind::Exchange, g).unwrap();
            Self { cs, ta, tb, pa, pb, tha, thb }
        }

        fn sides(&self) -> (SideOutcomes<'_>, SideOutcomes<'_>) {
            (
                SideOutcomes { probs: &self.pa, table: &self.ta, theta: &self.tha },
                SideOutcomes { probs: &self.pb, table: &self.tb, theta: &self.thb },
            )
        }

        fn distribution(&self, tau: f64) -> JointDistribution {
            let u = evolve_unitary(&self.cs, tau).unwrap();
            let t = transition_matrix(&u, &OutcomeTable::product(&self.ta, &self.tb)).unwrap();
            let (a, b) = self.sides();
            joint_distribution(a, b, &t).unwrap()
        }
    }

    #[test]
    fn single_operator_basis() {
        let z = Pauli::Z.matrix();
        let t = simultaneous_eigenbasis(&[&z], 1e-10).unwrap();
        assert_eq!(t.tuples, vec![vec![-1.0], vec![1.0]]);
        let id = OperatorMatrix::identity(2);
        let t = simultaneous_eigenbasis(&[&id, &z], 1e-10).unwrap();
        assert_eq!(t.tuples, vec![vec![1.0, -1.0], vec![1.0, 1.0]]);
        assert_eq!(t.n_classes(), 2);
    }

    #[test]
    fn refinement_resolves_xx_degeneracies() {
        let spec = build_xx_chain(3, 1.0, 0.0, Side::A).unwrap();
        let table = outcome_table(&spec, 1e-10).unwrap();
        for (op_index, op) in spec.generators().iter().enumerate() {
            let applied = op.entries() * &table.basis;
            for c in 0..table.dim() {
                let v = table.basis.column(c);
                let r = applied.column(c) - v * C64::new(table.tuples[c][op_index], 0.0);
                assert!(r.iter().all(|z| z.norm() <= 1e-9));
            }
        }
        let gram = table.basis.adjoint() * &table.basis;
        let off = (gram - DMatrix::<C64>::identity(8, 8)).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(off <= 1e-10);
        // columns within a class share their tuple
        for (c, &k) in table.classes.iter().enumerate() {
            for (x, y) in table.tuples[c].iter().zip(&table.class_tuples[k]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_commuting_set_is_rejected() {
        let r = simultaneous_eigenbasis(&[&Pauli::X.matrix(), &Pauli::Z.matrix()], 1e-10);
        assert!(matches!(r, Err(Error::Commutation { .. })));
    }

    #[test]
    fn initial_probabilities_examples() {
        let spec = SystemSpec::new(Side::A, 1, Pauli::Z.matrix(), vec![], vec![], "q").unwrap();
        let table = outcome_table(&spec, 1e-10).unwrap();
        let s = gge_state(&spec, &theta(&[3f64.ln() / 2.0])).unwrap();
        let p = initial_probabilities(&s, &table).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let s0 = gge_state(&spec, &theta(&[0.0])).unwrap();
        assert_eq!(initial_probabilities(&s0, &table).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn initial_probabilities_match_diagonal_and_are_rotation_invariant() {
        let spec = build_xx_chain(3, 1.0, 0.0, Side::A).unwrap();
        let s = gge_state(&spec, &theta(&[0.6, -0.3])).unwrap();
        let table = outcome_table(&spec, 1e-10).unwrap();
        let p = initial_probabilities(&s, &table).unwrap();
        let diag = table.basis.adjoint() * s.rho.entries() * &table.basis;
        for (c, pc) in p.iter().enumerate() {
            assert!((diag[(c, c)].re - pc).abs() < 1e-10);
        }
        // a different generator order yields different degenerate rotations
        let mz = &spec.shared_charges[0].op;
        let swapped = simultaneous_eigenbasis(&[mz, &spec.hamiltonian], 1e-10).unwrap();
        let aggregate = |table: &OutcomeTable, probs: &[f64], flip: bool| {
            let mut v: Vec<(i64, i64, f64)> = Vec::new();
            for (c, &pc) in probs.iter().enumerate() {
                let t = &table.tuples[c];
                let (e, m) = if flip { (t[1], t[0]) } else { (t[0], t[1]) };
                let key = ((e * 1e8).round() as i64, (m * 1e8).round() as i64);
                match v.iter_mut().find(|x| (x.0, x.1) == key) {
                    Some(x) => x.2 += pc,
                    None => v.push((key.0, key.1, pc)),
                }
            }
            v.sort_by_key(|x| (x.0, x.1));
            v
        };
        let p_swapped: Vec<f64> = swapped.tuples.iter().map(|t| (-(0.6 * t[1] - 0.3 * t[0]) - s.log_z).exp()).collect();
        let lhs = aggregate(&table, &p, false);
        let rhs = aggregate(&swapped, &p_swapped, true);
        assert_eq!(lhs.len(), rhs.len());
        for (x, y) in lhs.iter().zip(&rhs) {
            assert_eq!((x.0, x.1), (y.0, y.1));
            assert!((x.2 - y.2).abs() < 1e-12);
        }
    }

    #[test]
    fn unitary_examples() {
        let f = Fixture::xx(0.5);
        assert_eq!(evolve_unitary(&f.cs, 0.0).unwrap(), OperatorMatrix::identity(16));
        for tau in [0.37, 3.1, 9.9] {
            let u = evolve_unitary(&f.cs, tau).unwrap();
            let gram = u.entries().adjoint() * u.entries();
            let off = (gram - DMatrix::<C64>::identity(16, 16)).iter().fold(0.0f64, |m, z| m.max(z.norm()));
            assert!(off <= 1e-10);
            assert!(u.max_abs_diff(&u.transpose()) <= 1e-10);
        }
    }

    #[test]
    fn uncoupled_evolution_factorizes() {
        let f = Fixture::xx(0.0);
        let tau = 1.7;
        let u = evolve_unitary(&f.cs, tau).unwrap();
        let local = |h: &OperatorMatrix| eigh(h).unwrap().map_complex(|e| C64::from_polar(1.0, -tau * e)).unwrap();
        let ua = local(&f.cs.spec_a.hamiltonian);
        let ub = local(&f.cs.spec_b.hamiltonian);
        assert!(u.max_abs_diff(&kron(&ua, &ub).unwrap()) <= 1e-10);
    }

    #[test]
    fn transition_matrix_examples() {
        let f = Fixture::xx(0.8);
        let joint = OutcomeTable::product(&f.ta, &f.tb);
        let t = transition_matrix(&OperatorMatrix::identity(16), &joint).unwrap();
        assert_eq!(t, DMatrix::<f64>::identity(16, 16));
        let t = transition_matrix(&evolve_unitary(&f.cs, 2.3).unwrap(), &joint).unwrap();
        for i in 0..16 {
            assert!((t.row(i).sum() - 1.0).abs() <= 1e-10);
            assert!((t.column(i).sum() - 1.0).abs() <= 1e-10);
        }
        assert!((&t - t.transpose()).amax() <= 1e-10);
    }

    #[test]
    fn two_qubit_exchange_is_a_full_swap_at_half_pi() {
        // H = (XX + YY)/2 acts as σ^x on span{|01⟩, |10⟩}; e^{-iπ/2 σ^x} = -iσ^x
        let a = SystemSpec::new(Side::A, 1, OperatorMatrix::zeros(2), vec![], vec![], "free").unwrap();
        let b = SystemSpec::new(Side::B, 1, OperatorMatrix::zeros(2), vec![], vec![], "free").unwrap();
        let cs = build_composite(&a, &b, CouplingKind::Exchange, 1.0).unwrap();
        let u = evolve_unitary(&cs, PI / 2.0).unwrap();
        let z = OperatorMatrix::diagonal(&[0.0, 1.0]);
        let za = SystemSpec::new(Side::A, 1, z.clone(), vec![], vec![], "z").unwrap();
        let zb = SystemSpec::new(Side::B, 1, z, vec![], vec![], "z").unwrap();
        let joint = OutcomeTable::product(&outcome_table(&za, 1e-10).unwrap(), &outcome_table(&zb, 1e-10).unwrap());
        let t = transition_matrix(&u, &joint).unwrap();
        let col = |state: usize| {
            (0..4)
                .position(|c| {
                    let v = joint.basis.column(c);
                    v[state].norm() > 0.5
                })
                .unwrap()
        };
        let (c01, c10) = (col(1), col(2));
        assert!((t[(c10, c01)] - 1.0).abs() < 1e-12);
        assert!((t[(c01, c10)] - 1.0).abs() < 1e-12);
        assert!(t[(c01, c01)] < 1e-12);
    }

    #[test]
    fn joint_distribution_invariants() {
        let f = Fixture::xx(0.6);
        let jd = f.distribution(3.7);
        assert!((jd.total_probability() - 1.0).abs() <= 1e-10);
        assert!(jd.entries.iter().all(|r| r.probability >= 0.0));
        for (x, y) in jd.initial_marginal().iter().zip(&jd.initial_probs) {
            assert!((x - y).abs() <= 1e-10);
        }
        // exchange with matched fields conserves Mz and leaves heat_A = heat_B
        // whenever the pair also conserves total energy
        let nb = f.tb.n_classes();
        for r in &jd.entries {
            let (an, bn) = (&f.ta.class_tuples[r.n / nb], &f.tb.class_tuples[r.n % nb]);
            let (am, bm) = (&f.ta.class_tuples[r.m / nb], &f.tb.class_tuples[r.m % nb]);
            assert!((an[1] + bn[1] - am[1] - bm[1]).abs() < 1e-12, "Mz conserved");
            if (an[0] + bn[0] - am[0] - bm[0]).abs() < 1e-12 {
                assert!((r.heat_a - r.heat_b).abs() < 1e-12);
                assert!((r.heat_a - r.sigma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_time_has_no_heat() {
        let f = Fixture::xx(0.6);
        let jd = f.distribution(0.0);
        for r in &jd.entries {
            assert_eq!(r.n, r.m);
            assert_eq!((r.sigma, r.heat_a, r.heat_b), (0.0, 0.0, 0.0));
        }
        let bins = binned_distribution(&jd, ValueKind::Sigma, 1e-9);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].0, 0.0);
        assert!((bins[0].1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_coupling_has_no_exponent_change() {
        let f = Fixture::xx(0.0);
        let jd = f.distribution(4.2);
        for r in jd.entries.iter().filter(|r| r.probability > 1e-14) {
            assert!(r.sigma.abs() < 1e-12);
        }
    }

    #[test]
    fn energy_only_heat_collapses_to_temperature_difference() {
        use crate::models::build_tilted_ising_chain;
        let a = build_tilted_ising_chain(2, 1.0, 0.8, 0.3, Side::A).unwrap();
        let b = build_tilted_ising_chain(2, 0.6, 0.5, -0.2, Side::B).unwrap();
        let (tha, thb) = (theta(&[0.2]), theta(&[0.8]));
        let ta = outcome_table(&a, 1e-10).unwrap();
        let tb = outcome_table(&b, 1e-10).unwrap();
        let pa = initial_probabilities(&gge_state(&a, &tha).unwrap(), &ta).unwrap();
        let pb = initial_probabilities(&gge_state(&b, &thb).unwrap(), &tb).unwrap();
        let cs = build_composite(&a, &b, CouplingKind::Exchange, 0.3).unwrap();
        let t = transition_matrix(&evolve_unitary(&cs, 2.0).unwrap(), &OutcomeTable::product(&ta, &tb)).unwrap();
        let jd = joint_distribution(
            SideOutcomes { probs: &pa, table: &ta, theta: &tha },
            SideOutcomes { probs: &pb, table: &tb, theta: &thb },
            &t,
        )
        .unwrap();
        let nb = tb.n_classes();
        for r in &jd.entries {
            let de = ta.class_tuples[r.n / nb][0] - ta.class_tuples[r.m / nb][0];
            assert!((r.heat_a - 0.6 * de).abs() <= 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let f = Fixture::xx(0.6);
        let u = evolve_unitary(&f.cs, 3.7).unwrap();
        let (a, b) = f.sides();
        let s1 = sample_trajectories(a, b, &u, 100_000, 17).unwrap();
        let s2 = sample_trajectories(a, b, &u, 100_000, 17).unwrap();
        assert_eq!(s1.entries, s2.entries);
        assert!((s1.total_probability() - 1.0).abs() < 1e-12);

        let exact = f.distribution(3.7);
        let mean = exact.expectation(|r| r.sigma);
        let var = exact.expectation(|r| (r.sigma - mean).powi(2));
        let se = (var / 100_000.0).sqrt();
        assert!((s1.expectation(|r| r.sigma) - mean).abs() <= 5.0 * se);

        let zero = sample_trajectories(a, b, &OperatorMatrix::identity(16), 5000, 3).unwrap();
        assert!(zero.entries.iter().all(|r| r.sigma == 0.0));
        assert!(sample_trajectories(a, b, &u, 0, 3).is_err());
    }

    #[test]
    fn sampling_ignores_thread_count() {
        let f = Fixture::xx(0.6);
        let u = evolve_unitary(&f.cs, 1.1).unwrap();
        let (a, b) = f.sides();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let s1 = single.install(|| sample_trajectories(a, b, &u, 20_000, 5).unwrap());
        let s4 = many.install(|| sample_trajectories(a, b, &u, 20_000, 5).unwrap());
        assert_eq!(s1.entries, s4.entries);
    }

    #[test]
    fn binned_support_is_symmetric() {
        let f = Fixture::xx(0.6);
        let jd = f.distribution(2.9);
        let bins = binned_distribution(&jd, ValueKind::Sigma, 1e-9);
        assert!((bins.iter().map(|b| b.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(bins.windows(2).all(|w| w[0].0 < w[1].0));
        for &(q, p) in &bins {
            if p > 1e-14 {
                assert!(bins.iter().any(|&(r, _)| (r + q).abs() <= 1e-9 * q.abs().max(1.0)), "{q}");
            }
        }
    }
}
