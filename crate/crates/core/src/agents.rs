//! Fairness agents: the three provider-side fairness metrics, user/agent
//! compatibility, and the ranking functions agents vote with.
//!
//! Every metric is evaluated over a sequence of delivered lists, so the same
//! code serves both the rolling window used during a run and the summative
//! whole-run evaluation.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureCatalog, FeatureTag, Rating, ScoredList, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Share of all recommended slots that go to protected items.
    Gpf,
    /// Rank-discounted utility per protected item relative to per unprotected item.
    Guf,
    /// Mean reciprocal rank of the first protected item in each list.
    Mrr,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Gpf => "gpf",
            MetricKind::Guf => "guf",
            MetricKind::Mrr => "mrr",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gpf" => Ok(MetricKind::Gpf),
            "guf" => Ok(MetricKind::Guf),
            "mrr" => Ok(MetricKind::Mrr),
            other => Err(Error::config(
                "metric",
                format!("unknown metric `{other}` (expected gpf, guf or mrr)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub feature: FeatureTag,
    pub metric: MetricKind,
    /// Target proportion (GPF), utility ratio (GUF) or MRR value (MRR).
    pub target: f64,
}

impl AgentSpec {
    pub fn new(
        name: impl Into<String>,
        feature: impl Into<FeatureTag>,
        metric: MetricKind,
        target: f64,
    ) -> Self {
        Self {
            name: name.into(),
            feature: feature.into(),
            metric,
            target,
        }
    }

    pub fn validate(&self, catalog: &FeatureCatalog) -> Result<()> {
        if !(self.target > 0.0 && self.target <= 1.0) {
            return Err(Error::config(
                format!("agents.{}.target", self.name),
                format!("target must lie in (0, 1], got {}", self.target),
            ));
        }
        catalog.require_feature(&self.feature)
    }

    /// This agent's fairness over `lists`, in `[0, 1]`.
    pub fn fairness<'a, I>(&self, lists: I, catalog: &FeatureCatalog) -> f64
    where
        I: IntoIterator<Item = &'a ScoredList>,
    {
        match self.metric {
            MetricKind::Gpf => fairness_gpf(lists, catalog, &self.feature, self.target),
            MetricKind::Guf => fairness_guf(lists, catalog, &self.feature, self.target),
            MetricKind::Mrr => fairness_mrr(lists, catalog, &self.feature, self.target),
        }
    }
}

/// Snapshot of one agent at a recommendation opportunity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub fairness: f64,
    pub compatibility: f64,
}

impl AgentState {
    pub fn new(fairness: f64, compatibility: f64) -> Self {
        Self {
            fairness,
            compatibility,
        }
    }
}

/// Positional utility of rank `rank` (1-based).
pub fn rank_discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn fairness_gpf<'a, I>(
    lists: I,
    catalog: &FeatureCatalog,
    feature: &FeatureTag,
    target: f64,
) -> f64
where
    I: IntoIterator<Item = &'a ScoredList>,
{
    let (mut protected, mut total) = (0usize, 0usize);
    for list in lists {
        total += list.len();
        protected += list
            .items()
            .filter(|i| catalog.is_protected(i.as_str(), feature))
            .count();
    }
    if total == 0 {
        return 0.0;
    }
    (protected as f64 / total as f64 / target).min(1.0)
}

pub fn fairness_guf<'a, I>(
    lists: I,
    catalog: &FeatureCatalog,
    feature: &FeatureTag,
    target_ratio: f64,
) -> f64
where
    I: IntoIterator<Item = &'a ScoredList>,
{
    let (mut util_p, mut util_n) = (0.0, 0.0);
    for list in lists {
        for (pos, item) in list.items().enumerate() {
            let u = rank_discount(pos + 1);
            if catalog.is_protected(item.as_str(), feature) {
                util_p += u;
            } else {
                util_n += u;
            }
        }
    }
    let per_p = util_p / catalog.protected_count(feature).max(1) as f64;
    let per_n = util_n / catalog.unprotected_count(feature).max(1) as f64;
    if per_n == 0.0 {
        return if per_p > 0.0 { 1.0 } else { 0.0 };
    }
    (per_p / per_n / target_ratio).min(1.0)
}

pub fn fairness_mrr<'a, I>(
    lists: I,
    catalog: &FeatureCatalog,
    feature: &FeatureTag,
    target_mrr: f64,
) -> f64
where
    I: IntoIterator<Item = &'a ScoredList>,
{
    let (mut sum, mut count) = (0.0, 0usize);
    for list in lists {
        count += 1;
        if let Some(pos) = list
            .items()
            .position(|i| catalog.is_protected(i.as_str(), feature))
        {
            sum += 1.0 / (pos + 1) as f64;
        }
    }
    if count == 0 {
        return 0.0;
    }
    (sum / count as f64 / target_mrr).min(1.0)
}

/// Which training ratings count as "liked".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LikeRule {
    /// Liked iff rating is strictly above the threshold.
    Threshold(f64),
    /// Every rated item is liked (e.g. funded loans).
    All,
}

impl LikeRule {
    pub fn likes(&self, rating: f64) -> bool {
        match *self {
            LikeRule::Threshold(t) => rating > t,
            LikeRule::All => true,
        }
    }
}

impl Default for LikeRule {
    fn default() -> Self {
        LikeRule::Threshold(3.0)
    }
}

/// Population reference `p̄_f` the per-user like rate is divided by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatibilityBaseline {
    /// Mean of the per-user like rates over all training users.
    #[default]
    UserMean,
    /// Share of catalog items that carry the feature.
    CatalogShare,
}

/// Per-user compatibility with each configured agent, in agent order.
#[derive(Clone, Debug, Default)]
pub struct Compatibility {
    agents: usize,
    raw: HashMap<UserId, Vec<f64>>,
    normalized: HashMap<UserId, Vec<f64>>,
}

impl Compatibility {
    /// Normalized vector for `user`; uniform for users without training data.
    pub fn for_user(&self, user: &UserId) -> Cow<'_, [f64]> {
        match self.normalized.get(user) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(uniform(self.agents)),
        }
    }

    /// Unnormalized ratios `p_{u,f} / p̄_f`.
    pub fn raw(&self, user: &UserId) -> Option<&[f64]> {
        self.raw.get(user).map(Vec::as_slice)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.normalized.keys()
    }

    pub fn agent_count(&self) -> usize {
        self.agents
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn compute_compatibility(
    train: &[Rating],
    catalog: &FeatureCatalog,
    agents: &[AgentSpec],
    like: LikeRule,
    baseline: CompatibilityBaseline,
) -> Result<Compatibility> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let n_agents = agents.len();
    // user -> (rated count, liked-with-feature count per agent)
    let mut tallies: HashMap<&UserId, (usize, Vec<usize>)> = HashMap::new();
    for r in train {
        let (rated, liked) = tallies
            .entry(&r.user)
            .or_insert_with(|| (0, vec![0; n_agents]));
        *rated += 1;
        if like.likes(r.value) {
            for (slot, agent) in liked.iter_mut().zip(agents) {
                if catalog.is_protected(r.item.as_str(), &agent.feature) {
                    *slot += 1;
                }
            }
        }
    }

    let rates: HashMap<&UserId, Vec<f64>> = tallies
        .into_iter()
        .map(|(u, (rated, liked))| (u, liked.iter().map(|&l| l as f64 / rated as f64).collect()))
        .collect();

    let mut reference = Vec::with_capacity(n_agents);
    for (a, agent) in agents.iter().enumerate() {
        let p_bar = match baseline {
            CompatibilityBaseline::UserMean => {
                // Sum in a fixed user order so results do not depend on hash iteration.
                let mut users: Vec<_> = rates.keys().collect();
                users.sort();
                users.iter().map(|u| rates[**u][a]).sum::<f64>() / users.len() as f64
            }
            CompatibilityBaseline::CatalogShare => {
                catalog.protected_count(&agent.feature) as f64 / catalog.len().max(1) as f64
            }
        };
        if p_bar <= 0.0 {
            return Err(Error::FeatureNeverLiked(agent.feature.to_string()));
        }
        reference.push(p_bar);
    }

    let mut raw = HashMap::with_capacity(rates.len());
    let mut normalized = HashMap::with_capacity(rates.len());
    for (user, p) in rates {
        let c: Vec<f64> = p
            .iter()
            .zip(&reference)
            .map(|(p, p_bar)| p / p_bar)
            .collect();
        let total: f64 = c.iter().sum();
        let norm = if total > 0.0 {
            c.iter().map(|x| x / total).collect()
        } else {
            uniform(n_agents)
        };
        raw.insert(user.clone(), c);
        normalized.insert(user.clone(), norm);
    }
    Ok(Compatibility {
        agents: n_agents,
        raw,
        normalized,
    })
}

/// Two-level preference: every protected candidate over every unprotected one.
/// Indices refer to positions in the candidate list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryPreference {
    pub protected: Vec<usize>,
    pub unprotected: Vec<usize>,
}

impl BinaryPreference {
    pub fn is_protected(&self, index: usize) -> bool {
        self.protected.binary_search(&index).is_ok()
    }
}

pub fn rank_binary(
    candidates: &ScoredList,
    catalog: &FeatureCatalog,
    feature: &FeatureTag,
) -> BinaryPreference {
    let (protected, unprotected) = (0..candidates.len())
        .partition(|&i| catalog.is_protected(candidates.entries()[i].0.as_str(), feature));
    BinaryPreference {
        protected,
        unprotected,
    }
}

/// Protected candidates first, then the rest, each block in recommender order.
pub fn rank_cascaded(
    candidates: &ScoredList,
    catalog: &FeatureCatalog,
    feature: &FeatureTag,
) -> Vec<usize> {
    let BinaryPreference {
        mut protected,
        unprotected,
    } = rank_binary(candidates, catalog, feature);
    protected.extend(unprotected);
    protected
}
