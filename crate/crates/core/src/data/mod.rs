//! Interaction data: ingestion, filtering, sequences, splits and the derived
//! datasets used by the challenge-task evaluators.

mod domain;
mod ingest;
mod kcore;
mod perturb;
mod popularity;
mod sample;
mod sequence;
mod split;
pub mod store;
pub mod synthetic;

pub use domain::{classify_domain_case, DomainCase};
pub use ingest::{ingest, ingest_reader, IngestReport};
pub use kcore::k_core_filter;
pub use perturb::{perturb, PerturbMode, Perturbed};
pub use popularity::{popularity_groups, PopularityIndex};
pub use sample::{holdout_cold_start, subsample_by_length, subsample_interactions};
pub use sequence::{build_sequences, keep_last_k, truncate_pad};
pub use split::{leave_one_out_split, SplitDataset, UserSplit};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Dense item index. `0` is reserved for padding.
pub type ItemIdx = u32;

/// The padding index.
pub const PAD: ItemIdx = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{malformed} of {total} rows are malformed (first bad line {first_bad}: {reason})")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        first_bad: usize,
        reason: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain tags are required for this operation")]
    MissingDomains,
    #[error("malformed dataset file {file}, line {line}: {reason}")]
    BadDatasetFile {
        file: String,
        line: usize,
        reason: String,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One logged interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
    pub domain: Option<String>,
}

/// Bijection between opaque item ids and dense indices `1..=n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "CatalogRepr")]
pub struct Catalog {
    ids: Vec<String>,
    domains: Vec<Option<String>>,
    #[serde(skip)]
    lookup: HashMap<String, ItemIdx>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index for `id`, assigning the next one if unseen.
    pub fn intern(&mut self, id: &str, domain: Option<&str>) -> ItemIdx {
        if let Some(&i) = self.lookup.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.domains.push(domain.map(str::to_string));
        let idx = self.ids.len() as ItemIdx;
        self.lookup.insert(id.to_string(), idx);
        idx
    }

    /// Number of real items `n`.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Embedding-table rows: `n` items plus the padding row.
    pub fn vocab_size(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn index_of(&self, id: &str) -> Option<ItemIdx> {
        self.lookup.get(id).copied()
    }

    pub fn id_of(&self, idx: ItemIdx) -> Option<&str> {
        (idx as usize)
            .checked_sub(1)
            .and_then(|i| self.ids.get(i))
            .map(String::as_str)
    }

    pub fn domain_of(&self, idx: ItemIdx) -> Option<&str> {
        (idx as usize)
            .checked_sub(1)
            .and_then(|i| self.domains.get(i))
            .and_then(|d| d.as_deref())
    }

    pub fn has_domains(&self) -> bool {
        !self.domains.is_empty() && self.domains.iter().all(Option::is_some)
    }

    /// All real indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = ItemIdx> {
        1..=self.ids.len() as ItemIdx
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as ItemIdx + 1))
            .collect();
    }
}

#[derive(Deserialize)]
struct CatalogRepr {
    ids: Vec<String>,
    domains: Vec<Option<String>>,
}

impl From<CatalogRepr> for Catalog {
    fn from(r: CatalogRepr) -> Self {
        let mut c = Catalog {
            ids: r.ids,
            domains: r.domains,
            lookup: HashMap::new(),
        };
        c.rebuild_lookup();
        c
    }
}

/// One user's chronological history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: u32,
    pub user_id: String,
    pub items: Vec<ItemIdx>,
    pub domains: Option<Vec<String>>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
