//! Accuracy and fairness evaluation of a finished run.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agents::{rank_discount, AgentSpec};
use crate::error::{Error, Result};
use crate::model::{FeatureCatalog, ItemId, ScoredList, UserId};

/// Held-out liked items per user.
pub type Relevance = HashMap<UserId, HashSet<ItemId>>;

/// Binary-relevance nDCG over the top `n` delivered items.
pub fn ndcg_at_n(delivered: &ScoredList, relevant: &HashSet<ItemId>, n: usize) -> f64 {
    if relevant.is_empty() || n == 0 {
        return 0.0;
    }
    let dcg: f64 = delivered
        .items()
        .take(n)
        .enumerate()
        .filter(|(_, item)| relevant.contains(*item))
        .map(|(pos, _)| rank_discount(pos + 1))
        .sum();
    let ideal: f64 = (1..=relevant.len().min(n)).map(rank_discount).sum();
    dcg / ideal
}

/// An agent's own metric applied to every list of the run as one window.
pub fn summative_fairness<'a, I>(lists: I, agent: &AgentSpec, catalog: &FeatureCatalog) -> f64
where
    I: IntoIterator<Item = &'a ScoredList>,
{
    agent.fairness(lists, catalog)
}

/// Power mean with exponent 1/2: `((1/m) Σ √x_i)²`.
pub fn l_half_norm(scores: &[f64]) -> Result<f64> {
    if let Some(&bad) = scores.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::ScoreOutOfRange(bad));
    }
    if scores.is_empty() {
        return Err(Error::config(
            "agents",
            "l1/2 norm needs at least one score",
        ));
    }
    let mean_root = scores.iter().map(|x| x.sqrt()).sum::<f64>() / scores.len() as f64;
    Ok(mean_root * mean_root)
}

/// Mean and 95% normal-approximation half-width (1.96 standard errors).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldLabel {
    Fold(usize),
    Mean,
}

impl fmt::Display for FoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldLabel::Fold(i) => write!(f, "{i}"),
            FoldLabel::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub allocation: String,
    pub choice: String,
    pub fold: FoldLabel,
    pub ndcg: f64,
    /// Summative fairness per agent, in configured order.
    pub fairness: Vec<(String, f64)>,
    pub l_half: f64,
}

impl EvaluationSummary {
    pub fn fairness_values(&self) -> Vec<f64> {
        self.fairness.iter().map(|(_, v)| *v).collect()
    }
}

/// Scores one fold's delivered lists. Users without held-out positives are
/// left out of the nDCG mean. With no agents the l1/2 norm is reported as 0.
pub fn evaluate_fold(
    labels: (&str, &str),
    fold: usize,
    lists: &[ScoredList],
    relevance: &Relevance,
    agents: &[AgentSpec],
    catalog: &FeatureCatalog,
    n: usize,
) -> Result<EvaluationSummary> {
    let (mut total, mut users) = (0.0, 0usize);
    for list in lists {
        if let Some(rel) = relevance.get(&list.user).filter(|r| !r.is_empty()) {
            total += ndcg_at_n(list, rel, n);
            users += 1;
        }
    }
    let ndcg = if users == 0 {
        0.0
    } else {
        total / users as f64
    };
    let fairness: Vec<(String, f64)> = agents
        .iter()
        .map(|a| (a.name.clone(), summative_fairness(lists, a, catalog)))
        .collect();
    let values: Vec<f64> = fairness.iter().map(|(_, v)| *v).collect();
    let l_half = if values.is_empty() {
        0.0
    } else {
        l_half_norm(&values)?
    };
    Ok(EvaluationSummary {
        allocation: labels.0.to_string(),
        choice: labels.1.to_string(),
        fold: FoldLabel::Fold(fold),
        ndcg,
        fairness,
        l_half,
    })
}

/// Fold-wise mean of every column, summed in fold order.
pub fn mean_summary(folds: &[EvaluationSummary]) -> Option<EvaluationSummary> {
    let first = folds.first()?;
    let m = folds.len() as f64;
    let mean = |f: &dyn Fn(&EvaluationSummary) -> f64| folds.iter().map(f).sum::<f64>() / m;
    let fairness = first
        .fairness
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), mean(&|s| s.fairness[i].1)))
        .collect();
    Some(EvaluationSummary {
        allocation: first.allocation.clone(),
        choice: first.choice.clone(),
        fold: FoldLabel::Mean,
        ndcg: mean(&|s| s.ndcg),
        fairness,
        l_half: mean(&|s| s.l_half),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::MetricKind;
    use crate::model::Item;

    fn list(user: &str, items: &[&str]) -> ScoredList {
        let n = items.len();
        let entries: Vec<_> = items
            .iter()
            .enumerate()
            .map(|(i, id)| (ItemId::new(id), (n - i) as f64))
            .collect();
        ScoredList::from_ranked(user, entries, 0).unwrap()
    }

    fn set(items: &[&str]) -> HashSet<ItemId> {
        items.iter().map(ItemId::new).collect()
    }

    #[test]
    fn ndcg_hand_computation() {
        let got = ndcg_at_n(&list("u", &["r1", "x", "r2"]), &set(&["r1", "r2"]), 3);
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn ndcg_ideal_and_empty() {
        let l = list("u", &["a", "b", "c", "d"]);
        assert!((ndcg_at_n(&l, &set(&["a", "b", "c", "z"]), 3) - 1.0).abs() < 1e-12);
        assert_eq!(ndcg_at_n(&l, &set(&["y", "z"]), 3), 0.0);
        assert_eq!(ndcg_at_n(&l, &set(&[]), 3), 0.0);
    }

    #[test]
    fn l_half_examples() {
        assert!((l_half_norm(&[0.8, 0.8, 0.8]).unwrap() - 0.8).abs() < 1e-12);
        assert!((l_half_norm(&[0.25, 1.0]).unwrap() - 0.5625).abs() < 1e-12);
        assert!((l_half_norm(&[1.0, 0.0, 0.0]).unwrap() - 1.0 / 9.0).abs() < 1e-12);
        assert!(matches!(
            l_half_norm(&[0.5, 1.5]),
            Err(Error::ScoreOutOfRange(_))
        ));
        assert!(l_half_norm(&[-0.1]).is_err());
        assert!(l_half_norm(&[]).is_err());
    }

    #[test]
    fn summative_gpf_hand_count() {
        let catalog = FeatureCatalog::new(
            (0..150)
                .map(|i| Item::new(format!("p{i}").as_str(), ["f"]))
                .chain((0..850).map(|i| Item::plain(format!("n{i}").as_str()))),
        )
        .unwrap();
        let agent = AgentSpec::new("a", "f", MetricKind::Gpf, 0.2);
        // 100 lists x 10 items, 150 protected occurrences.
        let mut lists = Vec::new();
        let (mut p, mut q) = (0, 0);
        for l in 0..100 {
            let protected_here = if l < 50 { 2 } else { 1 };
            let ids: Vec<String> = (0..10)
                .map(|slot| {
                    if slot < protected_here {
                        p += 1;
                        format!("p{}", p - 1)
                    } else {
                        q += 1;
                        format!("n{}", (q - 1) % 850)
                    }
                })
                .collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            lists.push(list("u", &refs));
        }
        assert_eq!(p, 150);
        assert!((summative_fairness(&lists, &agent, &catalog) - 0.75).abs() < 1e-12);
        let zero: Vec<ScoredList> = vec![list("u", &["n0", "n1"])];
        assert_eq!(summative_fairness(&zero, &agent, &catalog), 0.0);
        let full: Vec<ScoredList> = vec![list("u", &["p0", "n1"])];
        assert_eq!(summative_fairness(&full, &agent, &catalog), 1.0);
    }

    #[test]
    fn ci_half_width() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((h - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci95(&[4.0]), (4.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn l_half_below_mean(v in prop::collection::vec(0.0f64..=1.0, 1..8)) {
                let l = l_half_norm(&v).unwrap();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                prop_assert!(l <= mean + 1e-12);
                let all_equal = v.iter().all(|x| (x - v[0]).abs() < 1e-12);
                if !all_equal {
                    let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        - v.iter().cloned().fold(f64::INFINITY, f64::min);
                    if spread > 1e-3 {
                        prop_assert!(l < mean);
                    }
                }
            }

            #[test]
            fn l_half_symmetric_and_monotone(v in prop::collection::vec(0.0f64..=1.0, 1..8),
                                             idx in any::<prop::sample::Index>(),
                                             bump in 0.0f64..=1.0) {
                let mut rev = v.clone();
                rev.reverse();
                prop_assert!((l_half_norm(&v).unwrap() - l_half_norm(&rev).unwrap()).abs() < 1e-12);
                let i = idx.index(v.len());
                let mut up = v.clone();
                up[i] = (up[i] + bump).min(1.0);
                prop_assert!(l_half_norm(&up).unwrap() >= l_half_norm(&v).unwrap() - 1e-12);
            }

            #[test]
            fn ndcg_ignores_tail_permutations(tail in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
                let rel = set(&["h0", "t1", "t4"]);
                let mut ids: Vec<String> = vec!["h0".into(), "h1".into(), "h2".into()];
                ids.extend(tail.iter().map(|i| format!("t{i}")));
                let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
                let base = ndcg_at_n(&list("u", &["h0", "h1", "h2", "t0", "t1", "t2", "t3", "t4", "t5"]), &rel, 3);
                prop_assert_eq!(ndcg_at_n(&list("u", &refs), &rel, 3), base);
            }
        }
    }
}
