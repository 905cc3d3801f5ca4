//! Experiment configuration file.
//!
//! ```toml
//! [data]
//! ratings = "ratings.csv"          # paths relative to the config file
//! features = "features.csv"
//! candidates = "candidates.csv"
//! like_rule = "threshold"          # or "all"
//! like_threshold = 3.0             # liked iff rating > threshold
//! compatibility_baseline = "user_mean"   # or "catalog_share"
//!
//! [agents.older]                   # declaration order is the tie-break order
//! feature = "pre_1990"
//! metric = "gpf"                   # gpf | guf | mrr
//! target = 0.25
//!
//! [allocation]
//! mechanism = "lottery"            # least_fair | lottery | weighted
//! alpha = 1                        # unfairness exponent (assumed)
//! beta = 2                         # compatibility exponent
//!
//! [choice]
//! rule = "rescore"                 # borda | copeland | rescore
//! recommender_weight = 0.6
//! delta = 0.5
//! agent_weight_mode = "shared"     # shared | per_agent
//! normalize_scores = false
//!
//! [run]
//! k = 50                           # candidate pool size
//! n = 10                           # delivered list length
//! window = 100                     # lists in the fairness window
//! folds = 5
//! seed = 0
//! arrivals_per_user = 1
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, CompatibilityBaseline, LikeRule, MetricKind};
use crate::allocation::{AllocationConfig, Mechanism};
use crate::choice::{AgentWeightMode, ChoiceConfig, Rule};
use crate::error::{Error, Result};
use crate::io::dataset::DataPaths;
use crate::model::{FeatureTag, DEFAULT_WINDOW};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikeRuleKind {
    #[default]
    Threshold,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub ratings: PathBuf,
    pub features: PathBuf,
    pub candidates: PathBuf,
    pub like_rule: LikeRuleKind,
    pub like_threshold: f64,
    pub compatibility_baseline: CompatibilityBaseline,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            ratings: "ratings.csv".into(),
            features: "features.csv".into(),
            candidates: "candidates.csv".into(),
            like_rule: LikeRuleKind::Threshold,
            like_threshold: 3.0,
            compatibility_baseline: CompatibilityBaseline::UserMean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub feature: String,
    pub metric: MetricKind,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationSection {
    pub mechanism: Mechanism,
    pub alpha: u32,
    pub beta: u32,
}

impl Default for AllocationSection {
    fn default() -> Self {
        let d = AllocationConfig::default();
        Self {
            mechanism: d.mechanism,
            alpha: d.alpha,
            beta: d.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChoiceSection {
    pub rule: Rule,
    pub recommender_weight: f64,
    pub delta: f64,
    pub agent_weight_mode: AgentWeightMode,
    pub normalize_scores: bool,
}

impl Default for ChoiceSection {
    fn default() -> Self {
        let d = ChoiceConfig::default();
        Self {
            rule: d.rule,
            recommender_weight: d.recommender_weight,
            delta: d.delta,
            agent_weight_mode: d.agent_weight_mode,
            normalize_scores: d.normalize_scores,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub k: usize,
    pub n: usize,
    pub window: usize,
    pub folds: usize,
    pub seed: u64,
    pub arrivals_per_user: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            k: 50,
            n: 10,
            window: DEFAULT_WINDOW,
            folds: 5,
            seed: 0,
            arrivals_per_user: 1,
        }
    }
}

/// The file as written, before paths are resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub data: DataSection,
    pub agents: IndexMap<String, AgentSection>,
    pub allocation: AllocationSection,
    pub choice: ChoiceSection,
    pub run: RunSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".to_string());
            Error::Config {
                key,
                message: e.to_string().trim().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(self, base_dir: &Path) -> Result<ExperimentConfig> {
        let agents = self
            .agents
            .into_iter()
            .map(|(name, a)| AgentSpec {
                name,
                feature: FeatureTag::new(a.feature),
                metric: a.metric,
                target: a.target,
            })
            .collect();
        let like = match self.data.like_rule {
            LikeRuleKind::Threshold => LikeRule::Threshold(self.data.like_threshold),
            LikeRuleKind::All => LikeRule::All,
        };
        let config = ExperimentConfig {
            data: DataPaths {
                ratings: base_dir.join(self.data.ratings),
                features: base_dir.join(self.data.features),
                candidates: base_dir.join(self.data.candidates),
            },
            like,
            compatibility_baseline: self.data.compatibility_baseline,
            agents,
            allocation: AllocationConfig {
                mechanism: self.allocation.mechanism,
                alpha: self.allocation.alpha,
                beta: self.allocation.beta,
            },
            choice: ChoiceConfig {
                rule: self.choice.rule,
                recommender_weight: self.choice.recommender_weight,
                delta: self.choice.delta,
                agent_weight_mode: self.choice.agent_weight_mode,
                normalize_scores: self.choice.normalize_scores,
            },
            run: RunParams {
                k: self.run.k,
                n: self.run.n,
                window: self.run.window,
                folds: self.run.folds,
                seed: self.run.seed,
                arrivals_per_user: self.run.arrivals_per_user,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RunParams {
    pub k: usize,
    pub n: usize,
    pub window: usize,
    pub folds: usize,
    pub seed: u64,
    pub arrivals_per_user: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        let d = RunSection::default();
        Self {
            k: d.k,
            n: d.n,
            window: d.window,
            folds: d.folds,
            seed: d.seed,
            arrivals_per_user: d.arrivals_per_user,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    pub like: LikeRule,
    pub compatibility_baseline: CompatibilityBaseline,
    pub agents: Vec<AgentSpec>,
    pub allocation: AllocationConfig,
    pub choice: ChoiceConfig,
    pub run: RunParams,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ConfigFile::parse(&text)?.resolve(base)
    }

    /// Checks every value that does not need the data files.
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.n == 0 {
            return Err(Error::config(
                "run.n",
                "delivered list length must be positive",
            ));
        }
        if r.n > r.k {
            return Err(Error::config(
                "run.n",
                format!("n = {} exceeds candidate pool k = {}", r.n, r.k),
            ));
        }
        if r.window == 0 {
            return Err(Error::config(
                "run.window",
                "window must hold at least one list",
            ));
        }
        if r.folds == 0 {
            return Err(Error::config("run.folds", "need at least one fold"));
        }
        if r.arrivals_per_user == 0 {
            return Err(Error::config("run.arrivals_per_user", "must be at least 1"));
        }
        if let LikeRule::Threshold(t) = self.like {
            if !t.is_finite() {
                return Err(Error::config("data.like_threshold", "must be finite"));
            }
        }
        let mut names = std::collections::HashSet::new();
        for a in &self.agents {
            if !names.insert(a.name.as_str()) {
                return Err(Error::config(
                    format!("agents.{}", a.name),
                    "duplicate agent name",
                ));
            }
            if !(a.target > 0.0 && a.target <= 1.0) {
                return Err(Error::config(
                    format!("agents.{}.target", a.name),
                    format!("target must lie in (0, 1], got {}", a.target),
                ));
            }
        }
        self.allocation.validate()?;
        self.choice.validate()
    }
}
