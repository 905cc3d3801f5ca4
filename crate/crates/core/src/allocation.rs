//! Allocation mechanisms: which fairness agents take part in an opportunity,
//! and with what weight.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentState;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    LeastFair,
    Lottery,
    Weighted,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [
        Mechanism::LeastFair,
        Mechanism::Lottery,
        Mechanism::Weighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::LeastFair => "least_fair",
            Mechanism::Lottery => "lottery",
            Mechanism::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_fair" => Ok(Mechanism::LeastFair),
            "lottery" => Ok(Mechanism::Lottery),
            "weighted" => Ok(Mechanism::Weighted),
            other => Err(Error::config(
                "allocation.mechanism",
                format!("unknown mechanism `{other}` (expected least_fair, lottery or weighted)"),
            )),
        }
    }
}

/// Mechanism plus the exponents of the lottery score
/// `(1 - fairness)^alpha * compatibility^beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationConfig {
    pub mechanism: Mechanism,
    pub alpha: u32,
    pub beta: u32,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Lottery,
            alpha: 1,
            beta: 2,
        }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 {
            return Err(Error::config(
                "allocation.alpha",
                "exponent must be a positive integer",
            ));
        }
        if self.beta == 0 {
            return Err(Error::config(
                "allocation.beta",
                "exponent must be a positive integer",
            ));
        }
        Ok(())
    }

    pub fn allocate<R: Rng + ?Sized>(&self, states: &[AgentState], rng: &mut R) -> Allocation {
        match self.mechanism {
            Mechanism::LeastFair => allocate_least_fair(states),
            Mechanism::Lottery => {
                allocate_lottery(&lottery_distribution(states, self.alpha, self.beta), rng)
            }
            Mechanism::Weighted => {
                allocate_weighted(&lottery_distribution(states, self.alpha, self.beta), states)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationKind {
    None,
    Single,
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocatedAgent {
    /// Index into the configured agent list.
    pub agent: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub kind: AllocationKind,
    pub entries: Vec<AllocatedAgent>,
}

impl Allocation {
    pub fn none() -> Self {
        Self {
            kind: AllocationKind::None,
            entries: Vec::new(),
        }
    }

    pub fn single(agent: usize) -> Self {
        Self {
            kind: AllocationKind::Single,
            entries: vec![AllocatedAgent { agent, weight: 1.0 }],
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == AllocationKind::None
    }

    pub fn weight_of(&self, agent: usize) -> f64 {
        self.entries
            .iter()
            .find(|e| e.agent == agent)
            .map_or(0.0, |e| e.weight)
    }
}

pub fn allocate_least_fair(states: &[AgentState]) -> Allocation {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in states.iter().enumerate() {
        if s.fairness < 1.0 && best.is_none_or(|(_, f)| s.fairness < f) {
            best = Some((i, s.fairness));
        }
    }
    best.map_or_else(Allocation::none, |(i, _)| Allocation::single(i))
}

/// Normalized lottery scores, aligned with `states`. Empty when every score is zero.
pub fn lottery_distribution(states: &[AgentState], alpha: u32, beta: u32) -> Vec<f64> {
    let scores: Vec<f64> = states
        .iter()
        .map(|s| {
            (1.0 - s.fairness).max(0.0).powi(alpha as i32)
                * s.compatibility.max(0.0).powi(beta as i32)
        })
        .collect();
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    scores.into_iter().map(|s| s / total).collect()
}

/// Draws one agent from `distribution` using a single uniform variate.
pub fn allocate_lottery<R: Rng + ?Sized>(distribution: &[f64], rng: &mut R) -> Allocation {
    if distribution.is_empty() {
        return Allocation::none();
    }
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (i, &p) in distribution.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last_positive = Some(i);
        if u < cumulative {
            return Allocation::single(i);
        }
    }
    // Rounding left the cumulative sum just below u.
    last_positive.map_or_else(Allocation::none, Allocation::single)
}

/// Every agent below its target, weighted by its renormalized lottery score.
/// Agents whose score is zero are left out.
pub fn allocate_weighted(distribution: &[f64], states: &[AgentState]) -> Allocation {
    if distribution.is_empty() {
        return Allocation::none();
    }
    let eligible: Vec<(usize, f64)> = states
        .iter()
        .zip(distribution)
        .enumerate()
        .filter(|(_, (s, &p))| s.fairness < 1.0 && p > 0.0)
        .map(|(i, (_, &p))| (i, p))
        .collect();
    let total: f64 = eligible.iter().map(|(_, p)| p).sum();
    if eligible.is_empty() || total <= 0.0 {
        return Allocation::none();
    }
    Allocation {
        kind: AllocationKind::Weighted,
        entries: eligible
            .into_iter()
            .map(|(agent, p)| AllocatedAgent {
                agent,
                weight: p / total,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states(fairness: &[f64], compat: &[f64]) -> Vec<AgentState> {
        fairness
            .iter()
            .zip(compat)
            .map(|(&f, &c)| AgentState::new(f, c))
            .collect()
    }

    fn assert_kind_invariant(a: &Allocation) {
        match a.kind {
            AllocationKind::None => assert!(a.entries.is_empty()),
            AllocationKind::Single => {
                assert_eq!(a.entries.len(), 1);
                assert_eq!(a.entries[0].weight, 1.0);
            }
            AllocationKind::Weighted => {
                let total: f64 = a.entries.iter().map(|e| e.weight).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn least_fair_picks_minimum() {
        let s = states(&[0.4, 0.9, 0.7], &[0.1, 0.8, 0.1]);
        assert_eq!(allocate_least_fair(&s), Allocation::single(0));
        assert!(allocate_least_fair(&states(&[1.0, 1.0, 1.0], &[0.3, 0.3, 0.4])).is_none());
        assert_eq!(
            allocate_least_fair(&states(&[0.5, 0.5], &[0.0, 1.0])),
            Allocation::single(0)
        );
    }

    #[test]
    fn lottery_distribution_hand_computed() {
        let d = lottery_distribution(&states(&[0.5, 0.75], &[0.5, 1.0]), 1, 2);
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(lottery_distribution(&states(&[1.0, 1.0], &[0.5, 0.5]), 1, 2).is_empty());
        assert_eq!(
            lottery_distribution(&states(&[0.2], &[0.7]), 1, 2),
            vec![1.0]
        );
    }

    #[test]
    fn lottery_degenerate_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(
                allocate_lottery(&[1.0, 0.0], &mut rng),
                Allocation::single(0)
            );
            assert_eq!(
                allocate_lottery(&[0.0, 1.0], &mut rng),
                Allocation::single(1)
            );
        }
        assert!(allocate_lottery(&[], &mut rng).is_none());
    }

    #[test]
    fn weighted_renormalizes_eligible() {
        let s = states(&[0.5, 0.75], &[0.5, 1.0]);
        let d = lottery_distribution(&s, 1, 2);
        let a = allocate_weighted(&d, &s);
        assert_eq!(a.kind, AllocationKind::Weighted);
        assert!((a.weight_of(0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((a.weight_of(1) - 2.0 / 3.0).abs() < 1e-12);

        let s = states(&[0.5, 1.0], &[0.5, 0.5]);
        let a = allocate_weighted(&lottery_distribution(&s, 1, 2), &s);
        assert_eq!(
            a.entries,
            vec![AllocatedAgent {
                agent: 0,
                weight: 1.0
            }]
        );

        let s = states(&[1.0, 1.0], &[0.5, 0.5]);
        assert!(allocate_weighted(&lottery_distribution(&s, 1, 2), &s).is_none());
    }

    #[test]
    fn zero_exponent_rejected() {
        let cfg = AllocationConfig {
            alpha: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_states() -> impl Strategy<Value = Vec<AgentState>> {
            prop::collection::vec(
                (
                    prop_oneof![Just(1.0), 0.0f64..=1.0],
                    prop_oneof![Just(0.0), 0.0f64..=1.0],
                ),
                1..6,
            )
            .prop_map(|v| v.into_iter().map(|(f, c)| AgentState::new(f, c)).collect())
        }

        proptest! {
            #[test]
            fn allocations_respect_kind_and_eligibility(s in arb_states(), seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for mechanism in Mechanism::ALL {
                    let cfg = AllocationConfig { mechanism, ..Default::default() };
                    let a = cfg.allocate(&s, &mut rng);
                    assert_kind_invariant(&a);
                    for e in &a.entries {
                        prop_assert!(s[e.agent].fairness < 1.0);
                        if mechanism != Mechanism::LeastFair {
                            prop_assert!(s[e.agent].compatibility > 0.0);
                        }
                    }
                }
            }

            #[test]
            fn least_fair_ignores_compatibility(s in arb_states(), shift in 0.1f64..5.0) {
                let warped: Vec<AgentState> = s.iter()
                    .map(|x| AgentState::new(x.fairness, (x.compatibility + shift).powi(3)))
                    .collect();
                prop_assert_eq!(allocate_least_fair(&s), allocate_least_fair(&warped));
            }

            #[test]
            fn distribution_scale_invariant(s in arb_states(), scale in 0.01f64..1.0) {
                let scaled: Vec<AgentState> = s.iter()
                    .map(|x| AgentState::new(x.fairness, x.compatibility * scale))
                    .collect();
                let (a, b) = (lottery_distribution(&s, 1, 2), lottery_distribution(&scaled, 1, 2));
                prop_assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn lottery_reproducible(seed in any::<u64>()) {
                let d = [0.2, 0.5, 0.3];
                let draw = |seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..50).map(|_| allocate_lottery(&d, &mut rng).entries[0].agent).collect::<Vec<_>>()
                };
                prop_assert_eq!(draw(seed), draw(seed));
            }
        }
    }
}
