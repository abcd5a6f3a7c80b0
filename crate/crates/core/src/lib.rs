//! Exact-diagonalization simulator for heat exchange between two quantum
//! systems prepared in generalized Gibbs ensembles.
//!
//! Both systems are measured in a joint eigenbasis of their conserved
//! quantities, evolved together under a coupling for a contact time, and
//! measured again. [`tpm`] builds the resulting joint distribution, and
//! [`analysis`] checks it against the exchange fluctuation relations, the
//! Rényi-divergence generating function and the relative-entropy moments.
//!
//! ```
//! use heatlab::analysis::{integral_ft, CheckKind, CheckSettings};
//! use heatlab::gge::GeneralizedTemperatures;
//! use heatlab::models::{build_xx_chain, CouplingKind};
//! use heatlab::operator::Side;
//! use heatlab::pipeline::Scenario;
//!
//! let scenario = Scenario {
//!     spec_a: build_xx_chain(2, 1.0, 0.3, Side::A)?,
//!     spec_b: build_xx_chain(2, 0.8, 0.3, Side::B)?,
//!     coupling: CouplingKind::Exchange,
//!     g: 0.5,
//!     tau: 2.0,
//!     theta_a: GeneralizedTemperatures::new(vec![0.5, 0.2])?,
//!     theta_b: GeneralizedTemperatures::new(vec![1.2, -0.3])?,
//! };
//! let run = scenario.realize()?;
//! assert!(integral_ft(&run.distribution).passed);
//! let reports = run.verify(&CheckKind::STANDARD, &CheckSettings::default())?;
//! assert!(reports.iter().all(|r| r.passed));
//! # Ok::<(), heatlab::Error>(())
//! ```

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod gge;
pub mod models;
pub mod operator;
pub mod pauli;
pub mod pipeline;
pub mod tpm;

pub use error::{Error, Result};
pub use operator::{OperatorMatrix, Side};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/measurement.md")]
    mod measurement {}
    #[doc = include_str!("../../../book/src/identities.md")]
    mod identities {}
    #[doc = include_str!("../../../book/src/weak-coupling.md")]
    mod weak_coupling {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/configs.md")]
    mod configs {}
}
