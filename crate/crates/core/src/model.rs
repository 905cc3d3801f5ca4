//! Shared domain types: identifiers, the feature catalog, scored lists and the
//! rolling history window that every fairness metric reads.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl AsRef<str>) -> Self {
                Self(Arc::from(id.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(Arc::from(s))
            }
        }
    };
}

id_type!(
    /// Opaque item identifier.
    ItemId
);
id_type!(
    /// Opaque user identifier.
    UserId
);
id_type!(
    /// A protected-feature tag such as `non_english` or `large_loan`.
    FeatureTag
);

/// Arrival ordinal of a recommendation opportunity (0-based).
pub type Tick = u64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub id: ItemId,
    pub features: BTreeSet<FeatureTag>,
}

impl Item {
    /// An item with no protected features.
    pub fn plain(id: impl Into<ItemId>) -> Self {
        Self {
            id: id.into(),
            features: BTreeSet::new(),
        }
    }

    pub fn new<F: Into<FeatureTag>>(
        id: impl Into<ItemId>,
        features: impl IntoIterator<Item = F>,
    ) -> Self {
        Self {
            id: id.into(),
            features: features.into_iter().map(Into::into).collect(),
        }
    }

    pub fn has(&self, feature: &FeatureTag) -> bool {
        self.features.contains(feature)
    }
}

/// Items with their protected-feature labels, plus per-feature group sizes.
#[derive(Clone, Debug, Default)]
pub struct FeatureCatalog {
    items: Vec<Item>,
    index: HashMap<ItemId, usize>,
    counts: BTreeMap<FeatureTag, usize>,
}

impl FeatureCatalog {
    pub fn new(items: impl IntoIterator<Item = Item>) -> Result<Self> {
        let mut catalog = Self::default();
        for item in items {
            if catalog.index.contains_key(&item.id) {
                return Err(Error::DuplicateItem(item.id.to_string()));
            }
            for f in &item.features {
                *catalog.counts.entry(f.clone()).or_insert(0) += 1;
            }
            catalog.index.insert(item.id.clone(), catalog.items.len());
            catalog.items.push(item);
        }
        Ok(catalog)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Unknown items are never protected.
    pub fn is_protected(&self, id: &str, feature: &FeatureTag) -> bool {
        self.get(id).is_some_and(|item| item.has(feature))
    }

    pub fn protected_count(&self, feature: &FeatureTag) -> usize {
        self.counts.get(feature).copied().unwrap_or(0)
    }

    pub fn unprotected_count(&self, feature: &FeatureTag) -> usize {
        self.items.len() - self.protected_count(feature)
    }

    pub fn features(&self) -> impl Iterator<Item = &FeatureTag> {
        self.counts.keys()
    }

    /// Both groups must be nonempty for any feature an agent advocates for.
    pub fn require_feature(&self, feature: &FeatureTag) -> Result<()> {
        let protected = self.protected_count(feature);
        let unprotected = self.unprotected_count(feature);
        if protected == 0 || unprotected == 0 {
            return Err(Error::DegenerateFeature {
                feature: feature.to_string(),
                protected,
                unprotected,
            });
        }
        Ok(())
    }
}

/// A user's list of items ranked by score.
///
/// Entries are kept sorted by score descending. Lists built with
/// [`ScoredList::new`] break score ties by ascending item id; lists built
/// with [`ScoredList::from_ranked`] keep the caller's order among equal scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredList {
    pub user: UserId,
    entries: Vec<(ItemId, f64)>,
    pub produced_at: Tick,
}

impl ScoredList {
    pub fn new<I>(
        user: impl Into<UserId>,
        entries: impl IntoIterator<Item = (I, f64)>,
        produced_at: Tick,
    ) -> Result<Self>
    where
        I: Into<ItemId>,
    {
        let mut entries: Vec<(ItemId, f64)> =
            entries.into_iter().map(|(i, s)| (i.into(), s)).collect();
        if let Some((item, score)) = entries.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFiniteScore {
                item: item.to_string(),
                score: *score,
            });
        }
        entries.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then_with(|| ia.cmp(ib)));
        Self::checked(user.into(), entries, produced_at)
    }

    /// Wraps entries that are already in final rank order.
    pub fn from_ranked<I>(
        user: impl Into<UserId>,
        entries: impl IntoIterator<Item = (I, f64)>,
        produced_at: Tick,
    ) -> Result<Self>
    where
        I: Into<ItemId>,
    {
        let entries: Vec<(ItemId, f64)> = entries.into_iter().map(|(i, s)| (i.into(), s)).collect();
        for w in entries.windows(2) {
            if w[0].1.total_cmp(&w[1].1).is_lt() {
                return Err(Error::UnsortedList {
                    item: w[1].0.to_string(),
                });
            }
        }
        Self::checked(user.into(), entries, produced_at)
    }

    /// Caller guarantees `entries` is a permutation of a valid list, sorted by score.
    pub(crate) fn reordered(user: UserId, entries: Vec<(ItemId, f64)>, produced_at: Tick) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].1 >= w[1].1));
        Self {
            user,
            entries,
            produced_at,
        }
    }

    fn checked(user: UserId, entries: Vec<(ItemId, f64)>, produced_at: Tick) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (item, _) in &entries {
            if !seen.insert(item) {
                return Err(Error::DuplicateItem(item.to_string()));
            }
        }
        Ok(Self {
            user,
            entries,
            produced_at,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(ItemId, f64)] {
        &self.entries
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &ItemId> + '_ {
        self.entries.iter().map(|(i, _)| i)
    }

    pub fn item_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(i, _)| i.as_str()).collect()
    }

    pub fn scores(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, s)| *s)
    }

    /// The first `n` entries, keeping user and tick.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            user: self.user.clone(),
            entries: self.entries.iter().take(n).cloned().collect(),
            produced_at: self.produced_at,
        }
    }

    pub fn with_tick(mut self, tick: Tick) -> Self {
        self.produced_at = tick;
        self
    }
}

/// One observed rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: UserId,
    pub item: ItemId,
    pub value: f64,
}

pub const DEFAULT_WINDOW: usize = 100;

/// FIFO of the most recent `capacity` delivered lists.
#[derive(Clone, Debug)]
pub struct HistoryWindow {
    capacity: usize,
    buffer: VecDeque<ScoredList>,
}

impl HistoryWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config {
                key: "run.window".into(),
                message: "window must hold at least one list".into(),
            });
        }
        Ok(Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Appends `list`, evicting the oldest entry when over capacity. The
    /// list's tick must be later than every tick currently buffered.
    pub fn append(&mut self, list: ScoredList) -> Result<()> {
        if let Some(last) = self.buffer.back() {
            if list.produced_at <= last.produced_at {
                return Err(Error::TickOrder {
                    tick: list.produced_at,
                    latest: last.produced_at,
                });
            }
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(list);
        Ok(())
    }

    /// Buffered lists, oldest first.
    pub fn view(&self) -> impl ExactSizeIterator<Item = &ScoredList> + Clone + '_ {
        self.buffer.iter()
    }
}
