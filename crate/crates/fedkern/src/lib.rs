//! Federated kernel learning over vertically partitioned data.
//!
//! `fedkern` trains nonlinear kernel models with doubly stochastic gradients
//! over random Fourier features, where `q` simulated workers each hold a
//! disjoint slice of the feature columns. Workers exchange only masked
//! partial sums over tree-structured communication schedules; the label
//! holder (active worker) drives the training loop. A centralized reference
//! trainer consumes the identical seed streams and serves as the ground
//! truth for equivalence testing, and an audit harness replays a semi-honest
//! adversary against recorded transcripts.
//!
//! Module map:
//! - [`dataio`]: sparse file parsing, normalization, train/test split,
//!   vertical feature partitioning.
//! - [`rff`]: seeded sampling of random directions and the feature map
//!   `phi(x) = sqrt(2) * cos(w'x + b)`.
//! - [`loss`]: square / logistic / smooth-hinge losses and derivatives.
//! - [`comm`]: in-process synchronous transport, binary aggregation trees,
//!   the totally-different-tree predicate, message accounting.
//! - [`protocol`]: the masked inner-product exchange (per-worker mask seeds,
//!   masked sum over one tree, mask removal over a totally different tree).
//! - [`engine`]: the federated training loop, distributed coefficient
//!   shards, prediction, the centralized reference trainer, and the
//!   iteration-bound diagnostic.
//! - [`audit`]: adversary-view recording, the linear-system inference
//!   attack, and mask-uniformity checks.
//! - [`synth`]: seeded synthetic dataset generators for benchmarking.

pub mod audit;
pub mod comm;
pub mod dataio;
pub mod engine;
pub mod loss;
pub mod protocol;
pub mod rff;
pub mod seedstream;
pub mod stats;
pub mod synth;

pub use comm::WorkerId;
