//! `safescout`: active learning of safe regions from binary trust feedback.
//!
//! An environment is partitioned into Voronoi cells around a set of centers.
//! Each cell carries an unknown probability that an external oracle answers
//! "trusted" (1) when the agent stands in it. The learner hops between cells,
//! choosing at every step the active cell whose running estimate has the
//! smallest Bernoulli variance `p(1 - p)`, and retires cells once they have
//! been held for `N_max` consecutive steps or their estimate has settled to
//! within `delta` over the last `N_delta` visits. A robust gap/median rule then
//! turns the frozen per-cell variances into a safe/unsafe labeling.
//!
//! Supporting mathematics lives alongside:
//! - [`ldp`]: the Bernoulli rate function (binary KL), the Chernoff tilt, the
//!   effective success probability of a Markov-modulated observation stream.
//! - [`markov`]: the joint `(cell, observation)` chain, its cell marginal, the
//!   stationary solver and the lift between their stationary laws.
//! - [`dp_oracle`]: exact finite-horizon evaluation at toy sizes, used to bound
//!   how much the one-step greedy rule gives up.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! classifier and the variance measure additionally accept exact rationals.
//! Concrete aliases for the common instantiations are re-exported here.

pub mod classifier;
pub mod dp_oracle;
pub mod environment;
pub mod estimation;
pub mod format;
pub mod ldp;
pub mod learner;
pub mod markov;
pub mod oracle;
pub mod policy;
pub mod scalar;

pub use scalar::Scalar;

/// Exact rational used for estimates stored as `successes / visits`.
pub type Exact = num_rational::Ratio<u64>;

pub type Point64 = environment::Point<f64>;
pub type EnvironmentSpec64 = environment::EnvironmentSpec<f64>;
pub type EnvironmentSpec32 = environment::EnvironmentSpec<f32>;
pub type TrustOracle64 = oracle::TrustOracle<f64>;
pub type PolicyConfig64 = policy::PolicyConfig<f64>;
pub type LearnerConfig64 = learner::LearnerConfig<f64>;
pub type RunLog64 = learner::RunLog<f64>;
pub type RateCurve64 = ldp::RateCurve<f64>;
pub type PolicyTable64 = markov::PolicyTable<f64>;
pub type SquareMatrix64 = markov::SquareMatrix<f64>;
pub type HorizonSpec64 = dp_oracle::HorizonSpec<f64>;
pub type ClassificationResult64 = classifier::ClassificationResult<f64>;
pub type ClassificationResultExact = classifier::ClassificationResult<Exact>;
