//! Provider-side fairness re-ranking with multiple fairness agents.
//!
//! Each fairness agent watches one protected item feature and measures how
//! well recent recommendation lists treat it. At every recommendation
//! opportunity an allocation mechanism picks which agents take part, and a
//! social-choice rule merges their preferences with the base recommender's
//! ranking into the delivered list.
//!
//! ```
//! use polyfair::{
//!     AgentSpec, Allocation, ChoiceConfig, FeatureCatalog, Item, MetricKind, Rule,
//!     ScoredList,
//! };
//!
//! let catalog = FeatureCatalog::new([
//!     Item::plain("a"),
//!     Item::new("b", ["women"]),
//!     Item::plain("c"),
//! ])
//! .unwrap();
//! let agents = [AgentSpec::new("w", "women", MetricKind::Gpf, 0.5)];
//! let candidates = ScoredList::new("u1", [("a", 0.9), ("b", 0.5), ("c", 0.4)], 0).unwrap();
//! let rescore = ChoiceConfig { rule: Rule::Rescore, ..Default::default() };
//! // b gains delta / recommender_weight = 0.5 / 0.6 on top of its own score.
//! let merged = rescore.aggregate(&candidates, &Allocation::single(0), &agents, &catalog);
//! assert_eq!(merged.item_ids(), ["b", "a", "c"]);
//! ```

pub mod agents;
pub mod allocation;
pub mod choice;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod seed;
pub mod simulator;

pub use agents::{
    compute_compatibility, AgentSpec, AgentState, Compatibility, CompatibilityBaseline, LikeRule,
    MetricKind,
};
pub use allocation::{AllocatedAgent, Allocation, AllocationConfig, AllocationKind, Mechanism};
pub use choice::{AgentWeightMode, ChoiceConfig, Rule};
pub use error::{Error, Result};
pub use evaluation::{EvaluationSummary, FoldLabel};
pub use io::config::ExperimentConfig;
pub use io::dataset::{DatasetBundle, RawDataset};
pub use io::synthetic::{generate_synthetic, SyntheticSpec};
pub use model::{
    FeatureCatalog, FeatureTag, HistoryWindow, Item, ItemId, Rating, ScoredList, Tick, UserId,
};
pub use simulator::{run_experiment, Cell, ExperimentResult};
