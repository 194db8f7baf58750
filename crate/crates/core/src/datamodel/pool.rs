use std::collections::BTreeSet;

use rand::seq::index::sample;

use super::clips::ClipId;
use crate::error::{Error, Result};
use crate::seed::{rng_for, STREAM_INIT_POOL};
use crate::selector::ClipScore;

/// One annotation event.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    pub round: usize,
    pub strategy: String,
    pub selected: Vec<ClipId>,
    pub scores: Vec<ClipScore>,
}

/// Partition of all clips into labeled and unlabeled sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolState {
    labeled: BTreeSet<ClipId>,
    unlabeled: BTreeSet<ClipId>,
    round: usize,
    history: Vec<SelectionRecord>,
}

impl PoolState {
    /// A round-0 pool from an explicit partition.
    pub fn new(labeled: BTreeSet<ClipId>, unlabeled: BTreeSet<ClipId>) -> Result<Self> {
        if let Some(id) = labeled.intersection(&unlabeled).next() {
            return Err(Error::invalid(format!("clip {id} is both labeled and unlabeled")));
        }
        let initial = labeled.iter().cloned().collect();
        Ok(PoolState {
            labeled,
            unlabeled,
            round: 0,
            history: vec![SelectionRecord {
                round: 0,
                strategy: "init".into(),
                selected: initial,
                scores: Vec::new(),
            }],
        })
    }

    pub fn labeled(&self) -> &BTreeSet<ClipId> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<ClipId> {
        &self.unlabeled
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn history(&self) -> &[SelectionRecord] {
        &self.history
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled.len() as f64 / self.total() as f64
    }

    /// Moves `ids` from the unlabeled to the labeled set and starts a new round.
    pub fn label(&mut self, ids: &[ClipId], strategy: &str, scores: Vec<ClipScore>) -> Result<()> {
        let unique: BTreeSet<&ClipId> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::invalid("selection contains duplicate clip ids"));
        }
        if let Some(bad) = ids.iter().find(|id| !self.unlabeled.contains(*id)) {
            return Err(Error::invalid(format!("clip {bad} is not in the unlabeled pool")));
        }
        for id in ids {
            self.unlabeled.remove(id);
            self.labeled.insert(id.clone());
        }
        self.round += 1;
        self.history.push(SelectionRecord {
            round: self.round,
            strategy: strategy.to_string(),
            selected: ids.to_vec(),
            scores,
        });
        Ok(())
    }

    /// Disjointness and coverage against the full clip set.
    pub fn check_partition<'a>(&self, all: impl IntoIterator<Item = &'a ClipId>) -> Result<()> {
        if let Some(id) = self.labeled.intersection(&self.unlabeled).next() {
            return Err(Error::invalid(format!("clip {id} is both labeled and unlabeled")));
        }
        let all: BTreeSet<&ClipId> = all.into_iter().collect();
        let union: BTreeSet<&ClipId> = self.labeled.iter().chain(&self.unlabeled).collect();
        if all != union {
            return Err(Error::invalid("pool does not cover exactly the clip set"));
        }
        Ok(())
    }
}

/// Labels `round(fraction · N)` clips drawn uniformly without replacement.
pub fn init_pool(clips: &[ClipId], init_fraction: f64, seed: u64) -> Result<PoolState> {
    if clips.is_empty() {
        return Err(Error::invalid("cannot initialize a pool from zero clips"));
    }
    if !(init_fraction > 0.0 && init_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "init_fraction must lie in (0, 1), got {init_fraction}"
        )));
    }
    let mut sorted: Vec<ClipId> = clips.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != clips.len() {
        return Err(Error::invalid("duplicate clip ids in pool"));
    }
    let n = sorted.len();
    let k = (init_fraction * n as f64).round() as usize;
    let mut rng = rng_for(seed, &[STREAM_INIT_POOL]);
    let picked: BTreeSet<usize> = sample(&mut rng, n, k).into_iter().collect();
    let mut labeled = BTreeSet::new();
    let mut unlabeled = BTreeSet::new();
    for (i, id) in sorted.into_iter().enumerate() {
        if picked.contains(&i) {
            labeled.insert(id);
        } else {
            unlabeled.insert(id);
        }
    }
    PoolState::new(labeled, unlabeled)
}
