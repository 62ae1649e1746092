//! Collaborative-filtering tasks: one task per user, one-hot item inputs,
//! raw rating targets.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::meta::{Task, TaskSampler};
use crate::model::Dataset;
use crate::rng::{self, TEST_STREAM, TRAIN_STREAM};

const MOVIELENS_SCALE: (f64, f64) = (0.0, 5.0);
const JESTER_SCALE: (f64, f64) = (-10.0, 10.0);
const JESTER_ITEMS: usize = 100;
const JESTER_UNRATED: f64 = 99.0;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CfUser {
    /// Identifier in the source file.
    pub id: u64,
    /// `(item index, rating)`, sorted by item index.
    pub ratings: Vec<(usize, f64)>,
}

/// Immutable per-user rating lists over a fixed item catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct CfCatalogue {
    item_count: usize,
    users: Vec<CfUser>,
    scale: (f64, f64),
}

impl CfCatalogue {
    pub fn new(item_count: usize, mut users: Vec<CfUser>, scale: (f64, f64)) -> Result<Self> {
        if item_count == 0 {
            return Err(Error::Dataset("catalogue needs at least one item".into()));
        }
        for u in &mut users {
            u.ratings.sort_by_key(|&(i, _)| i);
            for &(item, r) in &u.ratings {
                if item >= item_count {
                    return Err(Error::Dataset(format!(
                        "user {}: item index {item} outside catalogue of {item_count}",
                        u.id
                    )));
                }
                if !(scale.0..=scale.1).contains(&r) {
                    return Err(Error::Dataset(format!(
                        "user {}: rating {r} outside [{}, {}]",
                        u.id, scale.0, scale.1
                    )));
                }
            }
            if u.ratings.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Dataset(format!("user {}: duplicate item", u.id)));
            }
        }
        Ok(CfCatalogue {
            item_count,
            users,
            scale,
        })
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn users(&self) -> &[CfUser] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn scale(&self) -> (f64, f64) {
        self.scale
    }

    /// Keeps users with at least `min_ratings` ratings. Idempotent.
    pub fn refilter(&self, min_ratings: usize) -> CfCatalogue {
        CfCatalogue {
            item_count: self.item_count,
            users: self
                .users
                .iter()
                .filter(|u| u.ratings.len() >= min_ratings)
                .cloned()
                .collect(),
            scale: self.scale,
        }
    }

    fn one_hot(&self, item: usize) -> impl Iterator<Item = f64> {
        (0..self.item_count).map(move |i| if i == item { 1.0 } else { 0.0 })
    }

    fn dataset(&self, ratings: impl Iterator<Item = (usize, f64)>) -> Result<Dataset> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (item, r) in ratings {
            xs.extend(self.one_hot(item));
            ys.push(r);
        }
        Dataset::from_flat(xs, ys, self.item_count, 1)
    }

    /// Splits off `count` random users with more than `n_shot` ratings as
    /// test tasks (adapt on `n_shot`, evaluate on the rest) and returns the
    /// catalogue of the remaining users for meta-training.
    pub fn holdout(
        &self,
        count: usize,
        n_shot: usize,
        seed: u64,
    ) -> Result<(CfCatalogue, Vec<Task>)> {
        let eligible: Vec<usize> = (0..self.users.len())
            .filter(|&u| self.users[u].ratings.len() > n_shot)
            .collect();
        if eligible.len() < count {
            return Err(Error::Dataset(format!(
                "{count} test tasks requested but only {} users have more than {n_shot} ratings",
                eligible.len()
            )));
        }
        let mut rng = rng::stream(seed, &[TEST_STREAM]);
        let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), count)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        picked.sort_unstable();
        let tasks = picked
            .iter()
            .map(|&u| {
                let mut rng = rng::stream(seed, &[TEST_STREAM, self.users[u].id]);
                build_cf_test_task(self, u, n_shot, &mut rng)
                    .expect("eligible user has enough ratings")
            })
            .collect::<Result<Vec<_>>>()?;
        let rest = CfCatalogue {
            item_count: self.item_count,
            users: (0..self.users.len())
                .filter(|u| picked.binary_search(u).is_err())
                .map(|u| self.users[u].clone())
                .collect(),
            scale: self.scale,
        };
        Ok((rest, tasks))
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a MovieLens ratings file (tab-separated `user item rating
/// timestamp`; the `::`-separated layout of the larger releases is also
/// accepted), keeps the `top_items` most-rated items (ties to the smaller
/// item id) and the users with at least `min_ratings` ratings among them.
pub fn load_movielens(path: &Path, top_items: usize, min_ratings: usize) -> Result<CfCatalogue> {
    let file = BufReader::new(File::open(path)?);
    parse_movielens(file, path, top_items, min_ratings)
}

pub fn parse_movielens<R: BufRead>(
    reader: R,
    path: &Path,
    top_items: usize,
    min_ratings: usize,
) -> Result<CfCatalogue> {
    if top_items == 0 {
        return Err(Error::config("top_items must be positive"));
    }
    let mut rows: Vec<(u64, u64, f64)> = Vec::new();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split("::").collect()
        };
        if fields.len() < 3 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected user, item, rating, timestamp; got {line:?}"),
            ));
        }
        let field = |k: usize, name: &str| -> Result<u64> {
            fields[k]
                .trim()
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad {name} {:?}", fields[k])))
        };
        let user = field(0, "user id")?;
        let item = field(1, "item id")?;
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad rating {:?}", fields[2])))?;
        if !(MOVIELENS_SCALE.0..=MOVIELENS_SCALE.1).contains(&rating) {
            return Err(parse_error(
                path,
                lineno,
                format!("rating {rating} outside 0..=5"),
            ));
        }
        if let Some(first) = seen.insert((user, item), lineno) {
            return Err(parse_error(
                path,
                lineno,
                format!("user {user} rated item {item} again (first on line {first})"),
            ));
        }
        rows.push((user, item, rating));
    }

    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &(_, item, _) in &rows {
        *counts.entry(item).or_default() += 1;
    }
    let mut ranked: Vec<(u64, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_items);
    let item_index: HashMap<u64, usize> = ranked
        .iter()
        .enumerate()
        .map(|(k, &(id, _))| (id, k))
        .collect();

    let mut per_user: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for &(user, item, rating) in &rows {
        if let Some(&k) = item_index.get(&item) {
            per_user.entry(user).or_default().push((k, rating));
        }
    }
    let users = per_user
        .into_iter()
        .map(|(id, ratings)| CfUser { id, ratings })
        .collect();
    let catalogue = CfCatalogue::new(ranked.len(), users, MOVIELENS_SCALE)?.refilter(min_ratings);
    if catalogue.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no user has {min_ratings} ratings among the top {top_items} items",
            path.display()
        )));
    }
    Ok(catalogue)
}

/// Reads a Jester ratings CSV: per row a rated-count column followed by
/// 100 ratings in `[−10, 10]`, with 99 marking unrated cells. Users with no
/// ratings are dropped.
pub fn load_jester(path: &Path) -> Result<CfCatalogue> {
    let file = BufReader::new(File::open(path)?);
    parse_jester(file, path)
}

pub fn parse_jester<R: BufRead>(reader: R, path: &Path) -> Result<CfCatalogue> {
    let mut users = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != JESTER_ITEMS + 1 {
            return Err(parse_error(
                path,
                lineno,
                format!(
                    "expected {} columns, got {}",
                    JESTER_ITEMS + 1,
                    fields.len()
                ),
            ));
        }
        let declared: f64 = fields[0]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad count {:?}", fields[0])))?;
        let mut ratings = Vec::new();
        for (item, raw) in fields[1..].iter().enumerate() {
            let r: f64 = raw
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad rating {raw:?}")))?;
            if r == JESTER_UNRATED {
                continue;
            }
            if !(JESTER_SCALE.0..=JESTER_SCALE.1).contains(&r) {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("rating {r} in column {} outside [-10, 10]", item + 2),
                ));
            }
            ratings.push((item, r));
        }
        if declared != ratings.len() as f64 {
            warn!(
                "{}:{lineno}: count column says {declared}, row has {} ratings",
                path.display(),
                ratings.len()
            );
        }
        if !ratings.is_empty() {
            users.push(CfUser {
                id: lineno as u64,
                ratings,
            });
        }
    }
    let catalogue = CfCatalogue::new(JESTER_ITEMS, users, JESTER_SCALE)?;
    if catalogue.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no rated jokes",
            path.display()
        )));
    }
    Ok(catalogue)
}

/// Random disjoint `n_shot`/`n_val` split of one user's ratings. `None`
/// means the user has too few ratings and the caller should resample.
pub fn build_cf_task<R: Rng + ?Sized>(
    catalogue: &CfCatalogue,
    user: usize,
    n_shot: usize,
    n_val: usize,
    rng: &mut R,
) -> Option<Result<Task>> {
    let u = &catalogue.users[user];
    if n_shot == 0 || n_val == 0 || u.ratings.len() < n_shot + n_val {
        return None;
    }
    let picked = index::sample(rng, u.ratings.len(), n_shot + n_val).into_vec();
    let (shot, val) = picked.split_at(n_shot);
    Some(make_task(catalogue, u, shot, val))
}

/// Test-time variant: `n_shot` random ratings to adapt on, all remaining
/// ratings to evaluate on.
pub fn build_cf_test_task<R: Rng + ?Sized>(
    catalogue: &CfCatalogue,
    user: usize,
    n_shot: usize,
    rng: &mut R,
) -> Option<Result<Task>> {
    let u = &catalogue.users[user];
    if n_shot == 0 || u.ratings.len() <= n_shot {
        return None;
    }
    let shot = index::sample(rng, u.ratings.len(), n_shot).into_vec();
    let rest: Vec<usize> = (0..u.ratings.len()).filter(|k| !shot.contains(k)).collect();
    Some(make_task(catalogue, u, &shot, &rest))
}

fn make_task(catalogue: &CfCatalogue, u: &CfUser, shot: &[usize], val: &[usize]) -> Result<Task> {
    let pick = |ks: &[usize]| catalogue.dataset(ks.iter().map(|&k| u.ratings[k]));
    Task::new(u.id, pick(shot)?, pick(val)?)
}

/// Meta-training sampler over a catalogue: draws users uniformly and
/// resamples those with fewer than `n_shot + n_val` ratings.
#[derive(Debug, Clone)]
pub struct CfSampler {
    catalogue: Arc<CfCatalogue>,
    n_shot: usize,
    n_val: usize,
    seed: u64,
}

impl CfSampler {
    pub fn new(
        catalogue: Arc<CfCatalogue>,
        n_shot: usize,
        n_val: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_shot == 0 || n_val == 0 {
            return Err(Error::config("n_shot and n_val must be at least 1"));
        }
        let need = n_shot + n_val;
        if catalogue.users.iter().all(|u| u.ratings.len() < need) {
            return Err(Error::Dataset(format!("no user has {need} ratings")));
        }
        Ok(CfSampler {
            catalogue,
            n_shot,
            n_val,
            seed,
        })
    }

    pub fn catalogue(&self) -> &CfCatalogue {
        &self.catalogue
    }
}

impl TaskSampler for CfSampler {
    fn sample(&self, iter: usize, slot: usize) -> Result<Task> {
        let mut rng = rng::stream(self.seed, &[TRAIN_STREAM, iter as u64, slot as u64]);
        for _ in 0..MAX_RESAMPLES {
            let user = rng.gen_range(0..self.catalogue.len());
            if let Some(task) =
                build_cf_task(&self.catalogue, user, self.n_shot, self.n_val, &mut rng)
            {
                return task;
            }
        }
        Err(Error::Dataset(format!(
            "no user with {} ratings after {MAX_RESAMPLES} draws",
            self.n_shot + self.n_val
        )))
    }
}
