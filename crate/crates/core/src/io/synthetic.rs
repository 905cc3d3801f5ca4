//! Synthetic ratings and recommender scores with a controllable bias against
//! protected items.
//!
//! Each user has a latent taste vector and a per-feature affinity drawn from a
//! zero-mean normal, so some users favour a feature and others avoid it. True
//! utility is
//! `taste · item_factor + quality + Σ affinity(feature)` over the item's
//! features. Each rating is observed with probability `density`. The
//! recommender sees only part of each user's feature affinity: its score is
//! `exp(utility - (1 - AFFINITY_SIGNAL) * affinity + noise)`, multiplied by
//! `bias` for protected items, so with `bias < 1` the baseline under-exposes
//! protected groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, MetricKind};
use crate::error::{Error, Result};
use crate::io::config::{AgentSection, ConfigFile};
use crate::io::dataset::RawDataset;
use crate::model::{FeatureCatalog, FeatureTag, Item, ItemId, Rating, ScoredList};
use crate::seed::derive_seed;

const LATENT_DIM: usize = 8;
const AFFINITY_SD: f64 = 1.0;
/// Share of a user's feature affinity visible to the recommender's score.
const AFFINITY_SIGNAL: f64 = 0.5;
const QUALITY_SD: f64 = 0.5;
const RATING_NOISE_SD: f64 = 0.5;
const SCORE_NOISE_SD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturePrevalence {
    pub tag: String,
    pub prevalence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub features: Vec<FeaturePrevalence>,
    /// Multiplicative score penalty on protected items, in (0, 1].
    pub bias: f64,
    /// Expected fraction of the catalog each user rates.
    pub density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            features: vec![
                FeaturePrevalence {
                    tag: "group_a".into(),
                    prevalence: 0.1,
                },
                FeaturePrevalence {
                    tag: "group_b".into(),
                    prevalence: 0.2,
                },
                FeaturePrevalence {
                    tag: "group_c".into(),
                    prevalence: 0.3,
                },
            ],
            bias: 0.5,
            density: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::config("synthetic.users", "need at least one user"));
        }
        if self.items < 2 {
            return Err(Error::config("synthetic.items", "need at least two items"));
        }
        for f in &self.features {
            if !(f.prevalence > 0.0 && f.prevalence < 1.0) {
                return Err(Error::config(
                    format!("synthetic.features.{}", f.tag),
                    format!("prevalence must lie in (0, 1), got {}", f.prevalence),
                ));
            }
        }
        if !(self.bias > 0.0 && self.bias <= 1.0) {
            return Err(Error::config(
                "synthetic.bias",
                format!("must lie in (0, 1], got {}", self.bias),
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::config(
                "synthetic.density",
                format!("must lie in (0, 1], got {}", self.density),
            ));
        }
        Ok(())
    }

    /// One agent per feature, cycling GPF / GUF / MRR with targets 0.2,
    /// utility parity and 0.5.
    pub fn default_agents(&self) -> Vec<AgentSpec> {
        self.features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let (metric, target) = match i % 3 {
                    0 => (MetricKind::Gpf, 0.2),
                    1 => (MetricKind::Guf, 1.0),
                    _ => (MetricKind::Mrr, 0.5),
                };
                AgentSpec::new(
                    format!("{}_{}", f.tag, metric),
                    f.tag.as_str(),
                    metric,
                    target,
                )
            })
            .collect()
    }

    /// Experiment config matching this dataset, with default run settings.
    /// Scores are log-normal, so rescoring uses min-max normalized scores.
    pub fn experiment_config(&self) -> ConfigFile {
        let mut cfg = ConfigFile::default();
        cfg.choice.normalize_scores = true;
        for a in self.default_agents() {
            cfg.agents.insert(
                a.name.clone(),
                AgentSection {
                    feature: a.feature.to_string(),
                    metric: a.metric,
                    target: a.target,
                },
            );
        }
        cfg.run.seed = self.seed;
        cfg
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<RawDataset> {
    spec.validate()?;
    let stream = |name: &str| ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0, name));
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let affinity_dist = Normal::new(0.0, AFFINITY_SD).expect("valid normal");
    let quality = Normal::new(0.0, QUALITY_SD).expect("valid normal");
    let rating_noise = Normal::new(0.0, RATING_NOISE_SD).expect("valid normal");
    let score_noise = Normal::new(0.0, SCORE_NOISE_SD).expect("valid normal");
    let factor_scale = (LATENT_DIM as f64).sqrt().recip();

    let tags: Vec<FeatureTag> = spec
        .features
        .iter()
        .map(|f| FeatureTag::new(&f.tag))
        .collect();
    let id_width = spec.items.to_string().len();
    let user_width = spec.users.to_string().len();

    let mut rng = stream("synthetic/items");
    let mut item_features: Vec<Vec<bool>> = Vec::with_capacity(spec.items);
    let mut item_quality = Vec::with_capacity(spec.items);
    let mut item_factors: Vec<[f64; LATENT_DIM]> = Vec::with_capacity(spec.items);
    for _ in 0..spec.items {
        item_features.push(
            spec.features
                .iter()
                .map(|f| rng.random_bool(f.prevalence))
                .collect(),
        );
        item_quality.push(quality.sample(&mut rng));
        let mut y = [0.0; LATENT_DIM];
        for v in &mut y {
            *v = std_normal.sample(&mut rng) * factor_scale;
        }
        item_factors.push(y);
    }
    let item_ids: Vec<ItemId> = (0..spec.items)
        .map(|i| ItemId::new(format!("i{i:0id_width$}")))
        .collect();
    let protected: Vec<bool> = item_features.iter().map(|f| f.iter().any(|&b| b)).collect();
    let catalog = FeatureCatalog::new(item_ids.iter().zip(&item_features).map(|(id, flags)| {
        Item::new(
            id.clone(),
            tags.iter()
                .zip(flags)
                .filter(|(_, &on)| on)
                .map(|(t, _)| t.clone()),
        )
    }))?;

    let mut user_rng = stream("synthetic/users");
    let mut rating_rng = stream("synthetic/ratings");
    let mut score_rng = stream("synthetic/scores");
    let mut ratings = Vec::new();
    let mut candidates = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let user = format!("u{u:0user_width$}");
        let mut taste = [0.0; LATENT_DIM];
        for v in &mut taste {
            *v = std_normal.sample(&mut user_rng);
        }
        let affinity: Vec<f64> = spec
            .features
            .iter()
            .map(|_| affinity_dist.sample(&mut user_rng))
            .collect();

        let mut entries = Vec::with_capacity(spec.items);
        for i in 0..spec.items {
            let dot: f64 = taste.iter().zip(&item_factors[i]).map(|(a, b)| a * b).sum();
            let boost: f64 = affinity
                .iter()
                .zip(&item_features[i])
                .filter(|(_, &on)| on)
                .map(|(w, _)| w)
                .sum();
            let utility = dot + item_quality[i] + boost;
            let penalty = if protected[i] { spec.bias } else { 1.0 };

            let observed = rating_rng.random_bool(spec.density);
            let noise = rating_noise.sample(&mut rating_rng);
            if observed {
                let value = (3.0 + 1.5 * (utility + noise)).round().clamp(1.0, 5.0);
                ratings.push(Rating {
                    user: user.as_str().into(),
                    item: item_ids[i].clone(),
                    value,
                });
            }
            let belief = utility - (1.0 - AFFINITY_SIGNAL) * boost;
            let score = (belief + score_noise.sample(&mut score_rng)).exp() * penalty;
            entries.push((item_ids[i].clone(), score));
        }
        candidates.push(ScoredList::new(user.as_str(), entries, 0)?);
    }

    Ok(RawDataset {
        ratings,
        catalog,
        candidates,
    })
}
