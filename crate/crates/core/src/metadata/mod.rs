//! Per-script metadata: releases, creator, verified flag, runtime, categories.
//!
//! Metadata comes from an offline snapshot file (see [`MetadataStore::load`])
//! or is fetched from a GitHub-compatible REST API by [`fetch`].

pub mod fetch;
mod runtime;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::script_ref::{compare_versions, RepositoryRef, VersionKey};

pub use runtime::{classify_runtime, Runtime, RuntimeBucket};
pub use snapshot::SnapshotError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub tag: String,
    /// Timestamp of the commit the tag points at.
    pub date: DateTime<Utc>,
    pub commit: Option<String>,
}

impl Release {
    pub fn version_key(&self) -> VersionKey {
        VersionKey::parse(&self.tag).with_date(self.date)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptMetadata {
    /// `owner/repo[/subpath]`.
    pub slug: String,
    pub creator: String,
    pub verified: bool,
    pub default_branch: String,
    pub branches: BTreeSet<String>,
    /// Ascending by date, ties broken by tag text.
    pub releases: Vec<Release>,
    pub runtime: Runtime,
    pub categories: BTreeSet<String>,
}

impl ScriptMetadata {
    /// An entry carrying only what is known without any remote data.
    pub fn partial(slug: &str, note: impl Into<String>) -> Self {
        Self {
            slug: slug.to_string(),
            creator: slug.split('/').next().unwrap_or_default().to_string(),
            verified: false,
            default_branch: String::new(),
            branches: BTreeSet::new(),
            releases: Vec::new(),
            runtime: Runtime::Unknown(Some(note.into())),
            categories: BTreeSet::new(),
        }
    }

    /// True for entries written after a failed fetch.
    pub fn is_partial(&self) -> bool {
        self.releases.is_empty()
            && self.default_branch.is_empty()
            && matches!(self.runtime, Runtime::Unknown(_))
    }

    pub fn sort_releases(&mut self) {
        self.releases
            .sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.tag.cmp(&b.tag)));
    }

    pub fn release(&self, tag: &str) -> Option<&Release> {
        self.releases.iter().find(|r| r.tag == tag)
    }

    /// Highest release by version order.
    pub fn newest_release(&self) -> Option<&Release> {
        self.releases
            .iter()
            .max_by(|a, b| compare_versions(&a.version_key(), &b.version_key()))
    }

    /// Date of a commit, resolved through the commits that releases point
    /// at. Abbreviated hashes match by prefix.
    pub fn commit_date(&self, hash: &str) -> Option<DateTime<Utc>> {
        if hash.len() < 7 {
            return None;
        }
        self.releases
            .iter()
            .filter(|r| r.commit.as_deref().is_some_and(|c| c.starts_with(hash)))
            .map(|r| r.date)
            .min()
    }
}

/// Immutable `slug -> metadata` map. Lookups are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataStore {
    scripts: BTreeMap<String, ScriptMetadata>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SnapshotError> {
        snapshot::load(path.as_ref())
    }

    pub fn from_json(text: &str) -> Result<Self, SnapshotError> {
        snapshot::from_json(text)
    }

    /// Snapshot text: sorted keys, pretty-printed, newline-terminated.
    pub fn to_json(&self) -> String {
        snapshot::to_json(self)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    /// Inserts or replaces by slug. Releases are re-sorted.
    pub fn insert(&mut self, mut meta: ScriptMetadata) {
        meta.sort_releases();
        self.scripts.insert(meta.slug.to_ascii_lowercase(), meta);
    }

    /// Merges `other` into `self` by slug. A partial entry never replaces a
    /// complete one.
    pub fn merge(&mut self, other: MetadataStore) {
        for (key, meta) in other.scripts {
            match self.scripts.get(&key) {
                Some(existing) if meta.is_partial() && !existing.is_partial() => {}
                _ => self.insert(meta),
            }
        }
    }

    pub fn get(&self, slug: &str) -> Option<&ScriptMetadata> {
        self.scripts.get(&slug.to_ascii_lowercase())
    }

    /// Most specific entry for a reference: `owner/repo/subpath`, then
    /// `owner/repo`.
    pub fn lookup(&self, r: &RepositoryRef) -> Option<&ScriptMetadata> {
        r.subpath
            .as_ref()
            .and_then(|_| self.get(&r.slug()))
            .or_else(|| self.get(&format!("{}/{}", r.owner, r.repo)))
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScriptMetadata> {
        self.scripts.values()
    }
}
