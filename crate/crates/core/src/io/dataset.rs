//! Ratings, item features and precomputed candidate scores, with
//! deterministic k-fold rating splits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::agents::LikeRule;
use crate::error::{Error, Result};
use crate::evaluation::Relevance;
use crate::model::{FeatureCatalog, FeatureTag, Item, ItemId, Rating, ScoredList, UserId};
use crate::seed::{fnv1a, mix};

/// Number of buckets used for the single-split holdout when `folds == 1`.
const HOLDOUT_BUCKETS: u64 = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPaths {
    pub ratings: PathBuf,
    pub features: PathBuf,
    pub candidates: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            ratings: dir.join("ratings.csv"),
            features: dir.join("features.csv"),
            candidates: dir.join("candidates.csv"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    pub folds: usize,
    pub seed: u64,
}

/// Parsed but unsplit input files.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub ratings: Vec<Rating>,
    pub catalog: FeatureCatalog,
    /// Full scored pool per user, sorted by descending score.
    pub candidates: Vec<ScoredList>,
}

#[derive(Clone, Debug)]
pub struct FoldSplit {
    pub train: Vec<Rating>,
    pub test: Vec<Rating>,
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub ratings: Vec<Rating>,
    pub catalog: FeatureCatalog,
    candidates: HashMap<UserId, ScoredList>,
    fold_spec: FoldSpec,
    like: LikeRule,
    /// Bucket per rating; the rating is held out in fold `f` iff `bucket == f`.
    buckets: Vec<usize>,
}

impl DatasetBundle {
    pub fn new(raw: RawDataset, fold_spec: FoldSpec, like: LikeRule) -> Result<Self> {
        if fold_spec.folds == 0 {
            return Err(Error::config("run.folds", "need at least one fold"));
        }
        let buckets = raw
            .ratings
            .iter()
            .map(|r| fold_bucket(r, fold_spec))
            .collect();
        Ok(Self {
            ratings: raw.ratings,
            catalog: raw.catalog,
            candidates: raw
                .candidates
                .into_iter()
                .map(|l| (l.user.clone(), l))
                .collect(),
            fold_spec,
            like,
            buckets,
        })
    }

    pub fn folds(&self) -> usize {
        self.fold_spec.folds
    }

    pub fn like_rule(&self) -> LikeRule {
        self.like
    }

    pub fn split(&self, fold: usize) -> FoldSplit {
        let mut split = FoldSplit {
            train: Vec::new(),
            test: Vec::new(),
        };
        for (r, &b) in self.ratings.iter().zip(&self.buckets) {
            if b == fold {
                split.test.push(r.clone());
            } else {
                split.train.push(r.clone());
            }
        }
        split
    }

    /// Held-out liked items per test user.
    pub fn relevance(&self, split: &FoldSplit) -> Relevance {
        let mut rel: Relevance = HashMap::new();
        for r in &split.test {
            let entry = rel.entry(r.user.clone()).or_default();
            if self.like.likes(r.value) {
                entry.insert(r.item.clone());
            }
        }
        rel
    }

    /// Test users in id order.
    pub fn test_users(&self, split: &FoldSplit) -> Vec<UserId> {
        split
            .test
            .iter()
            .map(|r| r.user.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn full_candidates(&self, user: &UserId) -> Option<&ScoredList> {
        self.candidates.get(user)
    }

    /// Top `k` candidates for `user`, skipping items the user rated in training.
    /// `None` when fewer than `k` remain.
    pub fn candidate_pool(
        &self,
        user: &UserId,
        train_items: &HashSet<ItemId>,
        k: usize,
    ) -> Option<ScoredList> {
        let full = self.candidates.get(user)?;
        let entries: Vec<(ItemId, f64)> = full
            .entries()
            .iter()
            .filter(|(item, _)| !train_items.contains(item))
            .take(k)
            .cloned()
            .collect();
        if entries.len() < k {
            return None;
        }
        Some(
            ScoredList::from_ranked(user.clone(), entries, 0)
                .expect("subsequence of a sorted list"),
        )
    }
}

fn fold_bucket(r: &Rating, spec: FoldSpec) -> usize {
    let mut key = Vec::with_capacity(r.user.as_str().len() + r.item.as_str().len() + 1);
    key.extend_from_slice(r.user.as_str().as_bytes());
    key.push(0);
    key.extend_from_slice(r.item.as_str().as_bytes());
    let h = mix(fnv1a(&key) ^ mix(spec.seed));
    if spec.folds == 1 {
        // Single holdout: one bucket in five is test, the rest is training.
        if h.is_multiple_of(HOLDOUT_BUCKETS) {
            0
        } else {
            1
        }
    } else {
        (h % spec.folds as u64) as usize
    }
}

pub fn load_bundle(
    paths: &DataPaths,
    fold_spec: FoldSpec,
    like: LikeRule,
) -> Result<DatasetBundle> {
    DatasetBundle::new(load_raw(paths)?, fold_spec, like)
}

#[derive(Deserialize)]
struct RatingRow {
    user_id: String,
    item_id: String,
    rating: f64,
}

#[derive(Deserialize)]
struct FeatureRow {
    item_id: String,
    #[serde(default)]
    feature_tag: Option<String>,
}

#[derive(Deserialize)]
struct CandidateRow {
    user_id: String,
    item_id: String,
    score: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Data row number (1-based, header excluded) for diagnostics.
fn rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Data {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        out.push((row, rec));
    }
    Ok(out)
}

fn data_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

pub fn load_raw(paths: &DataPaths) -> Result<RawDataset> {
    let mut features: BTreeMap<String, BTreeSet<FeatureTag>> = BTreeMap::new();
    let mut order = Vec::new();
    for (row, rec) in rows::<FeatureRow>(&paths.features)? {
        if rec.item_id.is_empty() {
            return Err(data_err(&paths.features, row, "empty item_id"));
        }
        let tags = features.entry(rec.item_id.clone()).or_insert_with(|| {
            order.push(rec.item_id.clone());
            BTreeSet::new()
        });
        if let Some(tag) = rec.feature_tag.filter(|t| !t.is_empty()) {
            tags.insert(FeatureTag::new(tag));
        }
    }
    let catalog = FeatureCatalog::new(order.into_iter().map(|id| {
        let tags = features.remove(&id).unwrap_or_default();
        Item::new(id.as_str(), tags)
    }))?;

    let mut ratings = Vec::new();
    let mut seen = HashSet::new();
    for (row, rec) in rows::<RatingRow>(&paths.ratings)? {
        if !catalog.contains(&rec.item_id) {
            return Err(data_err(
                &paths.ratings,
                row,
                format!("unknown item `{}`", rec.item_id),
            ));
        }
        if !rec.rating.is_finite() {
            return Err(data_err(&paths.ratings, row, "non-finite rating"));
        }
        if !seen.insert((rec.user_id.clone(), rec.item_id.clone())) {
            return Err(data_err(
                &paths.ratings,
                row,
                format!("duplicate rating for ({}, {})", rec.user_id, rec.item_id),
            ));
        }
        ratings.push(Rating {
            user: rec.user_id.into(),
            item: rec.item_id.into(),
            value: rec.rating,
        });
    }

    let mut pools: BTreeMap<String, Vec<(ItemId, f64)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (row, rec) in rows::<CandidateRow>(&paths.candidates)? {
        if !catalog.contains(&rec.item_id) {
            return Err(data_err(
                &paths.candidates,
                row,
                format!("unknown item `{}`", rec.item_id),
            ));
        }
        if !rec.score.is_finite() {
            return Err(data_err(&paths.candidates, row, "non-finite score"));
        }
        if !seen.insert((rec.user_id.clone(), rec.item_id.clone())) {
            return Err(data_err(
                &paths.candidates,
                row,
                format!("duplicate candidate ({}, {})", rec.user_id, rec.item_id),
            ));
        }
        pools
            .entry(rec.user_id)
            .or_default()
            .push((rec.item_id.into(), rec.score));
    }
    let candidates = pools
        .into_iter()
        .map(|(user, entries)| ScoredList::new(user, entries, 0))
        .collect::<Result<Vec<_>>>()?;

    Ok(RawDataset {
        ratings,
        catalog,
        candidates,
    })
}

/// Writes the three input files in the loader's schema.
pub fn write_raw(raw: &RawDataset, dir: &Path) -> Result<DataPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DataPaths::in_dir(dir);

    let mut w =
        csv::Writer::from_path(&paths.features).map_err(|e| Error::csv(&paths.features, e))?;
    fn wrap(p: &Path) -> impl Fn(csv::Error) -> Error + '_ {
        move |e| Error::csv(p, e)
    }
    w.write_record(["item_id", "feature_tag"])
        .map_err(wrap(&paths.features))?;
    for item in raw.catalog.items() {
        if item.features.is_empty() {
            w.write_record([item.id.as_str(), ""])
                .map_err(wrap(&paths.features))?;
        }
        for f in &item.features {
            w.write_record([item.id.as_str(), f.as_str()])
                .map_err(wrap(&paths.features))?;
        }
    }
    w.flush().map_err(|e| Error::io(&paths.features, e))?;

    let mut w = csv::Writer::from_path(&paths.ratings).map_err(wrap(&paths.ratings))?;
    w.write_record(["user_id", "item_id", "rating"])
        .map_err(wrap(&paths.ratings))?;
    for r in &raw.ratings {
        w.write_record([r.user.as_str(), r.item.as_str(), &r.value.to_string()])
            .map_err(wrap(&paths.ratings))?;
    }
    w.flush().map_err(|e| Error::io(&paths.ratings, e))?;

    let mut w = csv::Writer::from_path(&paths.candidates).map_err(wrap(&paths.candidates))?;
    w.write_record(["user_id", "item_id", "score"])
        .map_err(wrap(&paths.candidates))?;
    for list in &raw.candidates {
        for (item, score) in list.entries() {
            w.write_record([list.user.as_str(), item.as_str(), &score.to_string()])
                .map_err(wrap(&paths.candidates))?;
        }
    }
    w.flush().map_err(|e| Error::io(&paths.candidates, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture(dir: &Path, candidates: &str) -> DataPaths {
        fs::write(
            dir.join("features.csv"),
            "item_id,feature_tag\ni1,old\ni1,foreign\ni2,old\ni3,\ni4,foreign\n",
        )
        .unwrap();
        fs::write(
            dir.join("ratings.csv"),
            "user_id,item_id,rating\nu1,i1,5\nu1,i2,2\nu2,i3,4\nu2,i4,5\nu3,i1,1\nu3,i4,4\n",
        )
        .unwrap();
        fs::write(dir.join("candidates.csv"), candidates).unwrap();
        DataPaths::in_dir(dir)
    }

    const CANDIDATES: &str = "user_id,item_id,score\nu1,i3,0.2\nu1,i4,0.9\nu2,i1,0.5\n";

    #[test]
    fn minimal_fixture_counts() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), CANDIDATES);
        let b = load_bundle(
            &paths,
            FoldSpec { folds: 2, seed: 1 },
            LikeRule::Threshold(3.0),
        )
        .unwrap();
        assert_eq!(b.catalog.len(), 4);
        assert_eq!(b.catalog.protected_count(&"old".into()), 2);
        assert_eq!(b.catalog.protected_count(&"foreign".into()), 2);
        assert_eq!(b.catalog.unprotected_count(&"old".into()), 2);
        assert_eq!(b.ratings.len(), 6);
        let pool = b.full_candidates(&"u1".into()).unwrap();
        assert_eq!(pool.item_ids(), vec!["i4", "i3"]);
    }

    #[test]
    fn unknown_candidate_item_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), "user_id,item_id,score\nu1,i3,0.2\nu1,zz,0.9\n");
        let err = load_raw(&paths).unwrap_err();
        match err {
            Error::Data { row, message, .. } => {
                assert_eq!(row, 2);
                assert!(message.contains("zz"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_rows_fail() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), "user_id,item_id,score\nu1,i3,abc\n");
        assert!(matches!(load_raw(&paths), Err(Error::Data { row: 1, .. })));
        let paths = fixture(dir.path(), "user_id,item_id,score\nu1,i3,0.1\nu1,i3,0.2\n");
        assert!(matches!(load_raw(&paths), Err(Error::Data { row: 2, .. })));
    }

    #[test]
    fn splits_are_deterministic_and_partition() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), CANDIDATES);
        let spec = FoldSpec { folds: 5, seed: 42 };
        let a = load_bundle(&paths, spec, LikeRule::All).unwrap();
        let b = load_bundle(&paths, spec, LikeRule::All).unwrap();
        let mut held_out = 0;
        for f in 0..5 {
            let (sa, sb) = (a.split(f), b.split(f));
            assert_eq!(sa.test, sb.test);
            assert_eq!(sa.train.len() + sa.test.len(), 6);
            held_out += sa.test.len();
        }
        assert_eq!(held_out, 6);
    }

    #[test]
    fn candidate_pool_skips_training_items() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), CANDIDATES);
        let b = load_bundle(&paths, FoldSpec { folds: 2, seed: 1 }, LikeRule::All).unwrap();
        let train: HashSet<ItemId> = [ItemId::new("i4")].into();
        let pool = b.candidate_pool(&"u1".into(), &train, 1).unwrap();
        assert_eq!(pool.item_ids(), vec!["i3"]);
        assert!(b.candidate_pool(&"u1".into(), &train, 2).is_none());
        assert!(b.candidate_pool(&"nobody".into(), &train, 1).is_none());
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = load_raw(&fixture(dir.path(), CANDIDATES)).unwrap();
        let out = dir.path().join("copy");
        let paths = write_raw(&raw, &out).unwrap();
        let again = load_raw(&paths).unwrap();
        assert_eq!(again.ratings, raw.ratings);
        assert_eq!(again.candidates, raw.candidates);
        assert_eq!(again.catalog.items(), raw.catalog.items());
    }
}
