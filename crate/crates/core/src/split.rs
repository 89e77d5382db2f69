//! Train / validation / test partitioning with popularity-stratified
//! simulated cold items.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{InteractionLog, ItemId, PopularityTable, UserId};
use crate::error::{CwhError, Result};

/// Warm pairs held out per user for each of validation and test.
pub const HOLDOUT_PER_SET: usize = 2;

pub type Pair = (UserId, ItemId);

#[derive(Clone, Debug, PartialEq)]
pub struct SplitBundle {
    pub offset: usize,
    pub train: InteractionLog,
    pub validation_warm: Vec<Pair>,
    pub validation_cold: Vec<Pair>,
    pub test_warm: Vec<Pair>,
    pub test_cold: Vec<Pair>,
    pub validation_cold_items: BTreeSet<ItemId>,
    pub test_cold_items: BTreeSet<ItemId>,
    /// Held-out warm pairs whose item later became cold and were moved into
    /// the matching cold set.
    pub relabeled: usize,
    /// Users with no train items left; excluded from every evaluation set.
    pub dropped_users: BTreeSet<UserId>,
}

impl SplitBundle {
    /// A split with everything in train and nothing held out.
    pub fn from_train(train: InteractionLog) -> Self {
        SplitBundle {
            offset: 0,
            train,
            validation_warm: Vec::new(),
            validation_cold: Vec::new(),
            test_warm: Vec::new(),
            test_cold: Vec::new(),
            validation_cold_items: BTreeSet::new(),
            test_cold_items: BTreeSet::new(),
            relabeled: 0,
            dropped_users: BTreeSet::new(),
        }
    }

    pub fn is_cold(&self, item: ItemId) -> bool {
        self.test_cold_items.contains(&item) || self.validation_cold_items.contains(&item)
    }

    /// All items without train interactions that the model must serve through
    /// the cold path.
    pub fn cold_items(&self) -> BTreeSet<ItemId> {
        self.test_cold_items
            .union(&self.validation_cold_items)
            .copied()
            .collect()
    }
}

/// Holds out `HOLDOUT_PER_SET` random items per eligible user for test and
/// the same number for validation.
pub fn user_holdout(log: &InteractionLog, min_items: usize, seed: u64) -> Result<SplitBundle> {
    if min_items < 2 * HOLDOUT_PER_SET + 1 {
        return Err(CwhError::Precondition(format!(
            "min_items must be at least {}, got {min_items}",
            2 * HOLDOUT_PER_SET + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(log.len());
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (u, mut items) in log.user_items().into_iter().enumerate() {
        let user = UserId(u as u32);
        if items.len() < min_items {
            train.extend(items.into_iter().map(|i| (user, i)));
            continue;
        }
        let (picked, _) = items.partial_shuffle(&mut rng, 2 * HOLDOUT_PER_SET);
        let mut picked = picked.to_vec();
        let rest = picked.split_off(HOLDOUT_PER_SET);
        test.extend(picked.iter().map(|&i| (user, i)));
        validation.extend(rest.iter().map(|&i| (user, i)));
        let held: BTreeSet<ItemId> = picked.into_iter().chain(rest).collect();
        items.retain(|i| !held.contains(i));
        train.extend(items.into_iter().map(|i| (user, i)));
    }
    if test.is_empty() {
        return Err(CwhError::Data(format!("no user has at least {min_items} items")));
    }
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitBundle {
        offset: 0,
        train: log.with_pairs(train),
        validation_warm: validation,
        validation_cold: Vec::new(),
        test_warm: test,
        test_cold: Vec::new(),
        validation_cold_items: BTreeSet::new(),
        test_cold_items: BTreeSet::new(),
        relabeled: 0,
        dropped_users: BTreeSet::new(),
    })
}

/// Picks cold items by popularity rank: ranks in the `width` residue classes
/// starting at `offset` (mod 10) go to test, the next `width` classes to
/// validation. Ranks count from the most popular item, ties by ascending id.
pub fn stratified_cold_selection(
    popularity: &PopularityTable,
    offset: usize,
    width: usize,
) -> Result<(BTreeSet<ItemId>, BTreeSet<ItemId>)> {
    if offset >= 10 {
        return Err(CwhError::Precondition(format!("fold offset {offset} not in 0..10")));
    }
    if width == 0 || 2 * width > 10 {
        return Err(CwhError::Precondition(format!("cold width {width} not in 1..=5")));
    }
    let ranked = popularity.top(popularity.len());
    let mut test = BTreeSet::new();
    let mut validation = BTreeSet::new();
    for (rank, item) in ranked.into_iter().enumerate() {
        let class = (rank + 10 - offset) % 10;
        if class < width {
            test.insert(item);
        } else if class < 2 * width {
            validation.insert(item);
        }
    }
    Ok((test, validation))
}

/// Removes every train interaction of the cold items and routes held-out
/// pairs according to the cold sets.
pub fn apply_cold_simulation(
    split: SplitBundle,
    test_cold: &BTreeSet<ItemId>,
    validation_cold: &BTreeSet<ItemId>,
) -> Result<SplitBundle> {
    if let Some(item) = test_cold.intersection(validation_cold).next() {
        return Err(CwhError::Precondition(format!(
            "item {} is in both cold sets",
            item.0
        )));
    }
    let test_cold_all: BTreeSet<ItemId> = split.test_cold_items.union(test_cold).copied().collect();
    let val_cold_all: BTreeSet<ItemId> = split
        .validation_cold_items
        .union(validation_cold)
        .copied()
        .collect();
    if let Some(item) = test_cold_all.intersection(&val_cold_all).next() {
        return Err(CwhError::Precondition(format!(
            "item {} is in both cold sets",
            item.0
        )));
    }

    let mut train = Vec::with_capacity(split.train.len());
    let mut test_cold_pairs = split.test_cold;
    let mut val_cold_pairs = split.validation_cold;
    for &(u, i) in split.train.pairs() {
        if test_cold_all.contains(&i) {
            test_cold_pairs.push((u, i));
        } else if val_cold_all.contains(&i) {
            val_cold_pairs.push((u, i));
        } else {
            train.push((u, i));
        }
    }

    let mut relabeled = split.relabeled;
    let mut test_warm = Vec::new();
    for (u, i) in split.test_warm {
        if test_cold_all.contains(&i) {
            test_cold_pairs.push((u, i));
            relabeled += 1;
        } else if !val_cold_all.contains(&i) {
            test_warm.push((u, i));
        }
    }
    let mut validation_warm = Vec::new();
    for (u, i) in split.validation_warm {
        if val_cold_all.contains(&i) {
            val_cold_pairs.push((u, i));
            relabeled += 1;
        } else if !test_cold_all.contains(&i) {
            validation_warm.push((u, i));
        }
    }

    let train = split.train.with_pairs(train);
    let mut has_train = vec![false; train.n_users()];
    for &(u, _) in train.pairs() {
        has_train[u.index()] = true;
    }
    let mut dropped_users = split.dropped_users;
    let mut keep = |pairs: Vec<Pair>| -> Vec<Pair> {
        let mut kept: Vec<Pair> = pairs
            .into_iter()
            .filter(|&(u, _)| {
                let ok = has_train[u.index()];
                if !ok {
                    dropped_users.insert(u);
                }
                ok
            })
            .collect();
        kept.sort_unstable();
        kept.dedup();
        kept
    };
    let test_warm = keep(test_warm);
    let test_cold_pairs = keep(test_cold_pairs);
    let validation_warm = keep(validation_warm);
    let val_cold_pairs = keep(val_cold_pairs);
    if !dropped_users.is_empty() {
        log::warn!(
            "{} users have no train items left and are excluded from evaluation",
            dropped_users.len()
        );
    }
    Ok(SplitBundle {
        offset: split.offset,
        train,
        validation_warm,
        validation_cold: val_cold_pairs,
        test_warm,
        test_cold: test_cold_pairs,
        validation_cold_items: val_cold_all,
        test_cold_items: test_cold_all,
        relabeled,
        dropped_users,
    })
}

/// Full fold construction: holdout, stratified cold selection on the whole
/// log's popularity, then cold simulation.
pub fn build_fold(
    log: &InteractionLog,
    min_items: usize,
    seed: u64,
    offset: usize,
    cold_width: usize,
) -> Result<SplitBundle> {
    let mut split = user_holdout(log, min_items, seed)?;
    split.offset = offset;
    let popularity = PopularityTable::from_counts(log.item_counts(), crate::data::PopularityMode::MinmaxCount);
    let (test_cold, val_cold) = stratified_cold_selection(&popularity, offset, cold_width)?;
    apply_cold_simulation(split, &test_cold, &val_cold)
}

const SECTION_TRAIN: &str = "train";
const SECTION_VAL_WARM: &str = "validation_warm";
const SECTION_VAL_COLD: &str = "validation_cold";
const SECTION_TEST_WARM: &str = "test_warm";
const SECTION_TEST_COLD: &str = "test_cold";
const SECTION_VAL_COLD_ITEM: &str = "validation_cold_item";
const SECTION_TEST_COLD_ITEM: &str = "test_cold_item";
const SECTION_DROPPED: &str = "dropped_user";

/// Writes the manifest: `section,value` lines, pairs as `user item` dense
/// indices.
pub fn write_manifest<W: Write>(split: &SplitBundle, mut w: W) -> Result<()> {
    let io = |e| CwhError::io("manifest", e);
    writeln!(w, "section,value").map_err(io)?;
    writeln!(w, "offset,{}", split.offset).map_err(io)?;
    writeln!(w, "users,{}", split.train.n_users()).map_err(io)?;
    writeln!(w, "items,{}", split.train.n_items()).map_err(io)?;
    writeln!(w, "relabeled,{}", split.relabeled).map_err(io)?;
    let sections: [(&str, &[Pair]); 5] = [
        (SECTION_TRAIN, split.train.pairs()),
        (SECTION_VAL_WARM, &split.validation_warm),
        (SECTION_VAL_COLD, &split.validation_cold),
        (SECTION_TEST_WARM, &split.test_warm),
        (SECTION_TEST_COLD, &split.test_cold),
    ];
    for (name, pairs) in sections {
        for (u, i) in pairs {
            writeln!(w, "{name},{} {}", u.0, i.0).map_err(io)?;
        }
    }
    for i in &split.validation_cold_items {
        writeln!(w, "{SECTION_VAL_COLD_ITEM},{}", i.0).map_err(io)?;
    }
    for i in &split.test_cold_items {
        writeln!(w, "{SECTION_TEST_COLD_ITEM},{}", i.0).map_err(io)?;
    }
    for u in &split.dropped_users {
        writeln!(w, "{SECTION_DROPPED},{}", u.0).map_err(io)?;
    }
    Ok(())
}

/// Reloads a manifest written by [`write_manifest`] against the log the
/// split was built from.
pub fn read_manifest<R: BufRead>(reader: R, log: &InteractionLog) -> Result<SplitBundle> {
    let name = "manifest";
    let mut offset = None;
    let mut relabeled = 0usize;
    let mut train = Vec::new();
    let mut validation_warm = Vec::new();
    let mut validation_cold = Vec::new();
    let mut test_warm = Vec::new();
    let mut test_cold = Vec::new();
    let mut validation_cold_items = BTreeSet::new();
    let mut test_cold_items = BTreeSet::new();
    let mut dropped_users = BTreeSet::new();

    for (n, line) in reader.lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line.map_err(|e| CwhError::io(name, e))?;
        let err = |message: String| CwhError::Parse {
            file: name.into(),
            line: line_no,
            message,
        };
        if n == 0 {
            if line != "section,value" {
                return Err(err("missing `section,value` header".into()));
            }
            continue;
        }
        let (section, value) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected section,value: {line:?}")))?;
        let number = |s: &str| -> Result<u32> {
            s.parse::<u32>().map_err(|_| err(format!("bad index {s:?}")))
        };
        let pair = |s: &str| -> Result<Pair> {
            let (u, i) = s
                .split_once(' ')
                .ok_or_else(|| err(format!("expected `user item`: {s:?}")))?;
            let (u, i) = (number(u)?, number(i)?);
            if u as usize >= log.n_users() || i as usize >= log.n_items() {
                return Err(err(format!("pair {u} {i} out of range for this log")));
            }
            Ok((UserId(u), ItemId(i)))
        };
        match section {
            "offset" => offset = Some(number(value)? as usize),
            "relabeled" => relabeled = number(value)? as usize,
            "users" => {
                if number(value)? as usize != log.n_users() {
                    return Err(err("user count does not match the log".into()));
                }
            }
            "items" => {
                if number(value)? as usize != log.n_items() {
                    return Err(err("item count does not match the log".into()));
                }
            }
            SECTION_TRAIN => train.push(pair(value)?),
            SECTION_VAL_WARM => validation_warm.push(pair(value)?),
            SECTION_VAL_COLD => validation_cold.push(pair(value)?),
            SECTION_TEST_WARM => test_warm.push(pair(value)?),
            SECTION_TEST_COLD => test_cold.push(pair(value)?),
            SECTION_VAL_COLD_ITEM => {
                validation_cold_items.insert(ItemId(number(value)?));
            }
            SECTION_TEST_COLD_ITEM => {
                test_cold_items.insert(ItemId(number(value)?));
            }
            SECTION_DROPPED => {
                dropped_users.insert(UserId(number(value)?));
            }
            other => return Err(err(format!("unknown section {other:?}"))),
        }
    }
    let offset = offset.ok_or_else(|| CwhError::Data("manifest has no offset".into()))?;
    Ok(SplitBundle {
        offset,
        train: log.with_pairs(train),
        validation_warm,
        validation_cold,
        test_warm,
        test_cold,
        validation_cold_items,
        test_cold_items,
        relabeled,
        dropped_users,
    })
}
