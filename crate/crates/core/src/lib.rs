//! Multi-fidelity hybrid offline-online reinforcement learning on tabular MDPs.
//!
//! An ensemble of conservatively pretrained Q-tables is refined online with
//! importance-weighted simulator data. Each round picks the simulator that
//! maximises information gain about the best ensemble member per unit cost,
//! under a hard cost budget.
//!
//! Module map:
//! - [`mdp`]: tabular MDPs, exact solvers, rollouts
//! - [`grid`]: slip-perturbed gridworlds
//! - [`fidelity`]: simulator families, budget ledger, offline data, KL gaps
//! - [`ensemble`]: bootstrap masks and conservative Q-learning
//! - [`hybrid`]: dynamics ratios, KL weights and the hybrid loss/update
//! - [`selector`]: generalized posterior, information gain, fidelity choice
//! - [`regret`]: multi-fidelity regret, LSVI-UCB, sublinearity fits
//! - [`experiment`]: configuration, the online loop, baselines and sweeps

pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fidelity;
pub mod grid;
pub mod hybrid;
pub mod mdp;
pub mod objective;
pub mod regret;
pub mod rng;
pub mod selector;

pub use ensemble::{BootstrapMask, CqlConfig, EnsembleMember};
pub use error::{Error, Result};
pub use fidelity::{BudgetLedger, FidelityFamily, OfflineDataset};
pub use grid::{GridSpec, SlipEnvironment};
pub use hybrid::{DiscriminatorCounts, H2oLossBreakdown, RatioConfig, RatioMode};
pub use mdp::{Batch, BatchSource, Policy, QTable, TabularMdp, Transition, VTable};
pub use regret::{LsviConfig, RegretReport, RoundRecord};
pub use rng::RngStream;
pub use selector::{HistoryBuffer, PosteriorBelief, SelectorConfig};
