//! The streaming re-ranking loop.
//!
//! For every arriving user: recompute each agent's fairness over the history
//! window, allocate agents, aggregate ballots with the choice rule, deliver the
//! top `n` and append it to the window. Opportunities within one stream are
//! strictly sequential; folds and mechanism cells run in parallel, each with
//! its own window and random stream.

use std::collections::HashSet;
use std::fmt;

use log::warn;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{compute_compatibility, AgentSpec, AgentState, Compatibility};
use crate::allocation::{Allocation, AllocationConfig, Mechanism};
use crate::choice::{ChoiceConfig, Rule};
use crate::error::Result;
use crate::evaluation::{evaluate_fold, mean_summary, EvaluationSummary, Relevance};
use crate::io::config::ExperimentConfig;
use crate::io::dataset::DatasetBundle;
use crate::model::{FeatureCatalog, HistoryWindow, ItemId, ScoredList, Tick, UserId};
use crate::seed::rng_for;

pub const BASELINE_LABEL: &str = "baseline";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tick: Tick,
    pub user: UserId,
    pub allocation: Allocation,
    /// Windowed fairness of every agent when the allocation was made.
    pub fairness: Vec<f64>,
    pub delivered: ScoredList,
}

/// One mechanism combination. `allocation: None` is the unmodified recommender.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub allocation: Option<AllocationConfig>,
    pub choice: ChoiceConfig,
}

impl Cell {
    pub fn baseline(choice: ChoiceConfig) -> Self {
        Self {
            allocation: None,
            choice,
        }
    }

    pub fn new(allocation: AllocationConfig, choice: ChoiceConfig) -> Self {
        Self {
            allocation: Some(allocation),
            choice,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.allocation.is_none()
    }

    pub fn allocation_label(&self) -> &'static str {
        self.allocation
            .map_or(BASELINE_LABEL, |a| a.mechanism.as_str())
    }

    pub fn choice_label(&self) -> &'static str {
        if self.is_baseline() {
            BASELINE_LABEL
        } else {
            self.choice.rule.as_str()
        }
    }

    /// Stable identifier, also used as the output directory name.
    pub fn key(&self) -> String {
        format!("{}__{}", self.allocation_label(), self.choice_label())
    }

    /// The configured cell preceded by the baseline.
    pub fn for_run(config: &ExperimentConfig) -> Vec<Cell> {
        vec![
            Cell::baseline(config.choice),
            Cell::new(config.allocation, config.choice),
        ]
    }

    /// Baseline followed by every allocation x choice combination.
    pub fn grid(config: &ExperimentConfig) -> Vec<Cell> {
        let mut cells = vec![Cell::baseline(config.choice)];
        for mechanism in Mechanism::ALL {
            for rule in Rule::ALL {
                cells.push(Cell::new(
                    AllocationConfig {
                        mechanism,
                        ..config.allocation
                    },
                    ChoiceConfig {
                        rule,
                        ..config.choice
                    },
                ));
            }
        }
        cells
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.allocation_label(), self.choice_label())
    }
}

/// Everything a fold's streams share: training-side compatibility, held-out
/// relevance and the seeded arrival sequence with each user's candidate pool.
#[derive(Clone, Debug)]
pub struct FoldContext {
    pub fold: usize,
    pub compatibility: Compatibility,
    pub relevance: Relevance,
    pub arrivals: Vec<ScoredList>,
}

pub fn prepare_fold(
    bundle: &DatasetBundle,
    config: &ExperimentConfig,
    fold: usize,
) -> Result<FoldContext> {
    let split = bundle.split(fold);
    let compatibility = compute_compatibility(
        &split.train,
        &bundle.catalog,
        &config.agents,
        bundle.like_rule(),
        config.compatibility_baseline,
    )?;
    let relevance = bundle.relevance(&split);

    let mut trained: std::collections::HashMap<&UserId, HashSet<ItemId>> =
        std::collections::HashMap::new();
    for r in &split.train {
        trained.entry(&r.user).or_default().insert(r.item.clone());
    }
    let empty = HashSet::new();
    let mut pools = Vec::new();
    for user in bundle.test_users(&split) {
        match bundle.candidate_pool(&user, trained.get(&user).unwrap_or(&empty), config.run.k) {
            Some(pool) => pools.push(pool),
            None => warn!(
                "fold {fold}: user {user} has fewer than {} candidates; skipped",
                config.run.k
            ),
        }
    }
    let mut arrivals = Vec::with_capacity(pools.len() * config.run.arrivals_per_user);
    for _ in 0..config.run.arrivals_per_user {
        arrivals.extend(pools.iter().cloned());
    }
    arrivals.shuffle(&mut rng_for(config.run.seed, fold, "arrivals"));
    Ok(FoldContext {
        fold,
        compatibility,
        relevance,
        arrivals,
    })
}

/// State of one sequential opportunity stream.
pub struct OpportunityStream<'a> {
    agents: &'a [AgentSpec],
    catalog: &'a FeatureCatalog,
    cell: Cell,
    n: usize,
    window: HistoryWindow,
    rng: ChaCha8Rng,
    next_tick: Tick,
}

impl<'a> OpportunityStream<'a> {
    pub fn new(
        agents: &'a [AgentSpec],
        catalog: &'a FeatureCatalog,
        cell: Cell,
        n: usize,
        window: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            agents,
            catalog,
            cell,
            n,
            window: HistoryWindow::new(window)?,
            rng,
            next_tick: 0,
        })
    }

    pub fn window(&self) -> &HistoryWindow {
        &self.window
    }

    /// Loads earlier delivered lists into the window, oldest first, as if they
    /// had been served by this stream.
    pub fn prime(&mut self, history: impl IntoIterator<Item = ScoredList>) -> Result<()> {
        for list in history {
            self.window.append(list.with_tick(self.next_tick))?;
            self.next_tick += 1;
        }
        Ok(())
    }

    /// Serves one user. `compatibility` is aligned with the agent list.
    pub fn process(&mut self, candidates: &ScoredList, compatibility: &[f64]) -> Result<RunRecord> {
        let tick = self.next_tick;
        let fairness: Vec<f64> = self
            .agents
            .iter()
            .map(|a| a.fairness(self.window.view(), self.catalog))
            .collect();
        let states: Vec<AgentState> = fairness
            .iter()
            .zip(compatibility)
            .map(|(&f, &c)| AgentState::new(f, c))
            .collect();

        let (allocation, ranked) = match &self.cell.allocation {
            None => (Allocation::none(), candidates.clone()),
            Some(alloc) => {
                let allocation = alloc.allocate(&states, &mut self.rng);
                let ranked = if allocation.is_none() {
                    candidates.clone()
                } else {
                    self.cell
                        .choice
                        .aggregate(candidates, &allocation, self.agents, self.catalog)
                };
                (allocation, ranked)
            }
        };
        let delivered = ranked.truncated(self.n).with_tick(tick);
        self.window.append(delivered.clone())?;
        self.next_tick += 1;
        Ok(RunRecord {
            tick,
            user: candidates.user.clone(),
            allocation,
            fairness,
            delivered,
        })
    }
}

/// Streams every arrival of a fold through one mechanism cell.
pub fn run_stream(
    config: &ExperimentConfig,
    catalog: &FeatureCatalog,
    fold: &FoldContext,
    cell: Cell,
) -> Result<Vec<RunRecord>> {
    let rng = rng_for(
        config.run.seed,
        fold.fold,
        &format!("allocation/{}", cell.key()),
    );
    let mut stream = OpportunityStream::new(
        &config.agents,
        catalog,
        cell,
        config.run.n,
        config.run.window,
        rng,
    )?;
    fold.arrivals
        .iter()
        .map(|pool| stream.process(pool, &fold.compatibility.for_user(&pool.user)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub records: Vec<RunRecord>,
    pub summary: EvaluationSummary,
}

impl FoldResult {
    pub fn lists(&self) -> Vec<ScoredList> {
        self.records.iter().map(|r| r.delivered.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub folds: Vec<FoldResult>,
    pub mean: EvaluationSummary,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn cell(&self, allocation: &str, choice: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.cell.allocation_label() == allocation && c.cell.choice_label() == choice)
    }

    pub fn baseline(&self) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell.is_baseline())
    }
}

/// Validates everything against the bundle, then prepares every fold.
pub fn prepare_folds(
    bundle: &DatasetBundle,
    config: &ExperimentConfig,
) -> Result<Vec<FoldContext>> {
    config.validate()?;
    for agent in &config.agents {
        agent.validate(&bundle.catalog)?;
    }
    (0..bundle.folds())
        .into_par_iter()
        .map(|f| prepare_fold(bundle, config, f))
        .collect()
}

pub fn evaluate_stream(
    config: &ExperimentConfig,
    catalog: &FeatureCatalog,
    fold: &FoldContext,
    cell: &Cell,
    lists: &[ScoredList],
) -> Result<EvaluationSummary> {
    evaluate_fold(
        (cell.allocation_label(), cell.choice_label()),
        fold.fold,
        lists,
        &fold.relevance,
        &config.agents,
        catalog,
        config.run.n,
    )
}

pub fn run_experiment(
    bundle: &DatasetBundle,
    config: &ExperimentConfig,
    cells: &[Cell],
) -> Result<ExperimentResult> {
    let folds = prepare_folds(bundle, config)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let records = run_stream(config, &bundle.catalog, &folds[f], cells[c])?;
            let lists: Vec<ScoredList> = records.iter().map(|r| r.delivered.clone()).collect();
            let summary = evaluate_stream(config, &bundle.catalog, &folds[f], &cells[c], &lists)?;
            Ok(FoldResult { records, summary })
        })
        .collect::<Result<_>>()?;

    let mut results = results.into_iter();
    let cells = cells
        .iter()
        .map(|&cell| {
            let folds: Vec<FoldResult> = results.by_ref().take(folds.len()).collect();
            let summaries: Vec<EvaluationSummary> =
                folds.iter().map(|f| f.summary.clone()).collect();
            let mean = mean_summary(&summaries).expect("at least one fold");
            CellResult { cell, folds, mean }
        })
        .collect();
    Ok(ExperimentResult { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::MetricKind;
    use crate::model::Item;
    use rand::SeedableRng;

    fn catalog() -> FeatureCatalog {
        FeatureCatalog::new((0..6).map(|i| {
            let tags = if i == 5 { vec!["f"] } else { vec![] };
            Item::new(format!("i{i}").as_str(), tags)
        }))
        .unwrap()
    }

    fn pool(user: &str) -> ScoredList {
        let entries: Vec<_> = (0..6)
            .map(|i| (ItemId::new(format!("i{i}")), 1.0 - i as f64 * 0.1))
            .collect();
        ScoredList::new(user, entries, 0).unwrap()
    }

    fn stream<'a>(
        agents: &'a [AgentSpec],
        catalog: &'a FeatureCatalog,
        cell: Cell,
    ) -> OpportunityStream<'a> {
        OpportunityStream::new(agents, catalog, cell, 3, 4, ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn satisfied_agents_leave_recommender_list() {
        let cat = catalog();
        // A tiny GPF target is met by the first list alone.
        let agents = [AgentSpec::new("a", "f", MetricKind::Gpf, 0.01)];
        let cell = Cell::new(
            AllocationConfig {
                mechanism: Mechanism::LeastFair,
                ..Default::default()
            },
            ChoiceConfig {
                rule: Rule::Rescore,
                ..Default::default()
            },
        );
        let mut s = stream(&agents, &cat, cell);
        let first = s.process(&pool("u0"), &[1.0]).unwrap();
        // Cold start: fairness 0, agent allocated, protected i5 promoted.
        assert_eq!(first.fairness, vec![0.0]);
        assert!(!first.allocation.is_none());
        assert_eq!(first.delivered.item_ids(), vec!["i5", "i0", "i1"]);
        let second = s.process(&pool("u1"), &[1.0]).unwrap();
        assert_eq!(second.fairness, vec![1.0]);
        assert!(second.allocation.is_none());
        assert_eq!(second.delivered.item_ids(), vec!["i0", "i1", "i2"]);
        assert_eq!(second.tick, 1);
    }

    #[test]
    fn window_holds_most_recent_deliveries() {
        let cat = catalog();
        let agents = [AgentSpec::new("a", "f", MetricKind::Mrr, 0.5)];
        let cell = Cell::new(AllocationConfig::default(), ChoiceConfig::default());
        let mut s = stream(&agents, &cat, cell);
        let mut delivered = Vec::new();
        for t in 0..7 {
            delivered.push(
                s.process(&pool(&format!("u{t}")), &[1.0])
                    .unwrap()
                    .delivered,
            );
        }
        let view: Vec<ScoredList> = s.window().view().cloned().collect();
        assert_eq!(view, delivered[3..].to_vec());
        assert!(delivered.iter().all(|l| l.len() == 3));
    }

    #[test]
    fn no_agents_equals_baseline() {
        let cat = catalog();
        for rule in Rule::ALL {
            let cell = Cell::new(
                AllocationConfig::default(),
                ChoiceConfig {
                    rule,
                    ..Default::default()
                },
            );
            let mut s = stream(&[], &cat, cell);
            let r = s.process(&pool("u"), &[]).unwrap();
            assert!(r.allocation.is_none());
            assert_eq!(r.delivered.item_ids(), vec!["i0", "i1", "i2"]);
        }
    }

    #[test]
    fn grid_labels() {
        let cfg = crate::io::config::ConfigFile::default()
            .resolve(std::path::Path::new("."))
            .unwrap();
        let keys: Vec<String> = Cell::grid(&cfg).iter().map(Cell::key).collect();
        assert_eq!(keys.len(), 10);
        assert_eq!(keys[0], "baseline__baseline");
        assert_eq!(keys[1], "least_fair__borda");
        assert_eq!(keys[9], "weighted__rescore");
        let run: Vec<String> = Cell::for_run(&cfg).iter().map(Cell::key).collect();
        assert_eq!(run, vec!["baseline__baseline", "lottery__borda"]);
    }
}
