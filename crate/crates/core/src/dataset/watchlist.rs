use serde::{Deserialize, Serialize};

use super::{export_csv, Dataset, DatasetError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEntry {
    pub individual_id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

/// Individuals flagged for follow-up, in insertion order, without duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Watchlist {
    pub entries: Vec<WatchEntry>,
}

impl Watchlist {
    pub fn contains(&self, individual_id: &str) -> bool {
        self.entries.iter().any(|e| e.individual_id == individual_id)
    }

    /// Returns false when the id was already listed.
    pub fn insert(&mut self, individual_id: &str, created_at: u64) -> bool {
        if self.contains(individual_id) {
            return false;
        }
        self.entries.push(WatchEntry {
            individual_id: individual_id.to_string(),
            created_at,
        });
        true
    }

    pub fn remove(&mut self, individual_id: &str) -> bool {
        let before = self.entries.len();
        self.entries.retain(|e| e.individual_id != individual_id);
        before != self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn watchlist_add(
    watchlist: &Watchlist,
    dataset: &Dataset,
    individual_id: &str,
    created_at: u64,
) -> Result<Watchlist, DatasetError> {
    if !dataset.individuals().contains_key(individual_id) {
        return Err(DatasetError::UnknownIndividual(individual_id.to_string()));
    }
    let mut next = watchlist.clone();
    next.insert(individual_id, created_at);
    Ok(next)
}

/// All rows of the listed individuals (list order, then ascending year).
/// Ids missing from `dataset` contribute no rows.
pub fn watchlist_export(watchlist: &Watchlist, dataset: &Dataset) -> Result<String, DatasetError> {
    let rows: Vec<usize> = watchlist
        .entries
        .iter()
        .filter_map(|e| dataset.individuals().get(&e.individual_id))
        .flatten()
        .copied()
        .collect();
    export_csv(dataset, &rows)
}
