//! Choice mechanisms: aggregate the recommender's list with the ballots of the
//! allocated agents into the delivered ranking.
//!
//! Candidates are addressed by their position in the recommender's list, so a
//! ballot is a permutation of `0..k`. Ballot weights are real multipliers and
//! stand in for repeated ballot copies. Aggregate scores are compared at a
//! resolution of [`SCORE_RESOLUTION`]; anything closer counts as a tie and
//! falls back to recommender order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{rank_binary, rank_cascaded, AgentSpec, BinaryPreference};
use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::model::{FeatureCatalog, ScoredList};

pub const SCORE_RESOLUTION: f64 = 1e-9;
const SNAP_SCALE: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Borda,
    Copeland,
    Rescore,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Borda, Rule::Copeland, Rule::Rescore];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Borda => "borda",
            Rule::Copeland => "copeland",
            Rule::Rescore => "rescore",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "borda" => Ok(Rule::Borda),
            "copeland" => Ok(Rule::Copeland),
            "rescore" => Ok(Rule::Rescore),
            other => Err(Error::config(
                "choice.rule",
                format!("unknown rule `{other}` (expected borda, copeland or rescore)"),
            )),
        }
    }
}

/// How allocated agents share the non-recommender ballot weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentWeightMode {
    /// Agents split `1 - w_rec` in proportion to their allocation weight.
    #[default]
    Shared,
    /// Each allocated agent carries `1 - w_rec` on its own.
    PerAgent,
}

impl fmt::Display for AgentWeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentWeightMode::Shared => "shared",
            AgentWeightMode::PerAgent => "per_agent",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChoiceConfig {
    pub rule: Rule,
    pub recommender_weight: f64,
    pub delta: f64,
    pub agent_weight_mode: AgentWeightMode,
    /// Min-max normalize recommender scores per candidate list before rescoring.
    pub normalize_scores: bool,
}

impl Default for ChoiceConfig {
    fn default() -> Self {
        Self {
            rule: Rule::Borda,
            recommender_weight: 0.6,
            delta: 0.5,
            agent_weight_mode: AgentWeightMode::Shared,
            normalize_scores: false,
        }
    }
}

impl ChoiceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.recommender_weight > 0.0 && self.recommender_weight < 1.0) {
            return Err(Error::config(
                "choice.recommender_weight",
                format!("must lie in (0, 1), got {}", self.recommender_weight),
            ));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config(
                "choice.delta",
                format!("must be >= 0, got {}", self.delta),
            ));
        }
        Ok(())
    }

    /// Full aggregate ranking of `candidates` for this allocation.
    pub fn aggregate(
        &self,
        candidates: &ScoredList,
        allocation: &Allocation,
        agents: &[AgentSpec],
        catalog: &FeatureCatalog,
    ) -> ScoredList {
        match self.rule {
            Rule::Rescore => {
                let prefs: Vec<BinaryPreference> = allocation
                    .entries
                    .iter()
                    .map(|e| rank_binary(candidates, catalog, &agents[e.agent].feature))
                    .collect();
                rescore(candidates, allocation, &prefs, self)
            }
            Rule::Borda | Rule::Copeland => {
                let profile = build_ballots(
                    candidates,
                    allocation,
                    |agent| rank_cascaded(candidates, catalog, &agents[agent].feature),
                    self,
                );
                if self.rule == Rule::Borda {
                    borda_aggregate(&profile)
                } else {
                    copeland_aggregate(&profile)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ballot {
    /// Candidate indices, most preferred first.
    pub ranking: Vec<usize>,
    pub weight: f64,
}

/// Weighted ballots over one candidate list. Ballot 0 is the recommender's.
#[derive(Clone, Debug)]
pub struct BallotProfile<'a> {
    pub candidates: &'a ScoredList,
    pub ballots: Vec<Ballot>,
}

impl<'a> BallotProfile<'a> {
    /// Profile holding only the recommender ballot.
    pub fn recommender_only(candidates: &'a ScoredList, weight: f64) -> Self {
        Self {
            candidates,
            ballots: vec![Ballot {
                ranking: (0..candidates.len()).collect(),
                weight,
            }],
        }
    }

    pub fn push(&mut self, ballot: Ballot) {
        debug_assert_eq!(ballot.ranking.len(), self.candidates.len());
        self.ballots.push(ballot);
    }

    pub fn total_weight(&self) -> f64 {
        self.ballots.iter().map(|b| b.weight).sum()
    }
}

pub fn build_ballots<'a, F>(
    candidates: &'a ScoredList,
    allocation: &Allocation,
    mut agent_ranking: F,
    config: &ChoiceConfig,
) -> BallotProfile<'a>
where
    F: FnMut(usize) -> Vec<usize>,
{
    let w_rec = config.recommender_weight;
    let mut profile = BallotProfile::recommender_only(candidates, w_rec);
    for entry in &allocation.entries {
        let weight = match config.agent_weight_mode {
            AgentWeightMode::Shared => (1.0 - w_rec) * entry.weight,
            AgentWeightMode::PerAgent => 1.0 - w_rec,
        };
        profile.push(Ballot {
            ranking: agent_ranking(entry.agent),
            weight,
        });
    }
    profile
}

fn snap(score: f64) -> f64 {
    (score * SNAP_SCALE).round() / SNAP_SCALE
}

/// Orders candidates by descending score; ties keep recommender order.
fn rank_by_score(candidates: &ScoredList, scores: &[f64]) -> ScoredList {
    let snapped: Vec<f64> = scores.iter().map(|&s| snap(s)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| snapped[b].total_cmp(&snapped[a]));
    let entries: Vec<_> = order
        .into_iter()
        .map(|i| (candidates.entries()[i].0.clone(), snapped[i]))
        .collect();
    ScoredList::reordered(candidates.user.clone(), entries, candidates.produced_at)
}

/// Weighted Borda: a ballot gives `weight * (m - 1 - position)` to each candidate.
pub fn borda_aggregate(profile: &BallotProfile<'_>) -> ScoredList {
    let m = profile.candidates.len();
    let mut scores = vec![0.0; m];
    for ballot in &profile.ballots {
        for (pos, &c) in ballot.ranking.iter().enumerate() {
            scores[c] += ballot.weight * (m - 1 - pos) as f64;
        }
    }
    rank_by_score(profile.candidates, &scores)
}

/// Weighted Copeland: one point per pairwise majority win, half per exact tie.
pub fn copeland_aggregate(profile: &BallotProfile<'_>) -> ScoredList {
    let m = profile.candidates.len();
    let positions: Vec<Vec<usize>> = profile
        .ballots
        .iter()
        .map(|b| {
            let mut pos = vec![0; m];
            for (p, &c) in b.ranking.iter().enumerate() {
                pos[c] = p;
            }
            pos
        })
        .collect();
    let total = profile.total_weight();
    let tolerance = SCORE_RESOLUTION * total.max(1.0);

    let mut scores = vec![0.0; m];
    for x in 0..m {
        for y in (x + 1)..m {
            let mut prefer_x = 0.0;
            for (ballot, pos) in profile.ballots.iter().zip(&positions) {
                if pos[x] < pos[y] {
                    prefer_x += ballot.weight;
                }
            }
            let margin = prefer_x - (total - prefer_x);
            if margin > tolerance {
                scores[x] += 1.0;
            } else if margin < -tolerance {
                scores[y] += 1.0;
            } else {
                scores[x] += 0.5;
                scores[y] += 0.5;
            }
        }
    }
    rank_by_score(profile.candidates, &scores)
}

/// Recommender score plus `a_w * delta / w_rec` for each allocated agent that
/// considers the item protected. `preferences` aligns with `allocation.entries`.
pub fn rescore(
    candidates: &ScoredList,
    allocation: &Allocation,
    preferences: &[BinaryPreference],
    config: &ChoiceConfig,
) -> ScoredList {
    let mut scores: Vec<f64> = candidates.scores().collect();
    if config.normalize_scores {
        let (lo, hi) = scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(s), hi.max(s))
            });
        let range = hi - lo;
        for s in &mut scores {
            *s = if range > 0.0 { (*s - lo) / range } else { 0.0 };
        }
    }
    for (entry, pref) in allocation.entries.iter().zip(preferences) {
        let bonus = entry.weight * config.delta / config.recommender_weight;
        for &i in &pref.protected {
            scores[i] += bonus;
        }
    }
    rank_by_score(candidates, &scores)
}
