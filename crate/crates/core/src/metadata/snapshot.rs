//! Snapshot file encoding.
//!
//! ```json
//! { "owner/repo": { "branches": [...], "categories": [...], "creator": "...",
//!   "default_branch": "...", "releases": [{"commit": null, "date": "...", "tag": "..."}],
//!   "runtime": {"detail": null, "kind": "node"}, "verified": false } }
//! ```
//!
//! Struct fields are declared alphabetically so serialized keys come out
//! sorted.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, SecondsFormat};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use super::{MetadataStore, Release, Runtime, ScriptMetadata};
use crate::script_ref::is_full_commit_hash;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("cannot read snapshot {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error("duplicate script `{0}` in snapshot")]
    DuplicateSlug(String),
    #[error("script `{slug}` lists tag `{tag}` more than once")]
    DuplicateTag { slug: String, tag: String },
    #[error("script `{slug}` release `{tag}` has invalid timestamp `{value}`")]
    BadTimestamp {
        slug: String,
        tag: String,
        value: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    #[serde(default)]
    branches: Vec<String>,
    #[serde(default)]
    categories: Vec<String>,
    #[serde(default)]
    creator: Option<String>,
    #[serde(default)]
    default_branch: String,
    #[serde(default)]
    releases: Vec<ReleaseEntry>,
    #[serde(default)]
    runtime: Option<RuntimeEntry>,
    #[serde(default)]
    verified: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReleaseEntry {
    #[serde(default)]
    commit: Option<String>,
    date: String,
    tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuntimeEntry {
    #[serde(default)]
    detail: Option<String>,
    kind: String,
}

/// Object entries in document order; duplicates are preserved so they can
/// be reported instead of silently collapsed.
struct Entries(Vec<(String, Entry)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping script slugs to metadata")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Entry>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

pub(super) fn load(path: &Path) -> Result<MetadataStore, SnapshotError> {
    let text = std::fs::read_to_string(path).map_err(|source| SnapshotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}

pub(super) fn from_json(text: &str) -> Result<MetadataStore, SnapshotError> {
    let Entries(entries) =
        serde_json::from_str(text).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
    let mut store = MetadataStore::new();
    for (slug, entry) in entries {
        if slug.split('/').filter(|s| !s.is_empty()).count() < 2 {
            return Err(SnapshotError::Malformed(format!(
                "`{slug}` is not an owner/repo slug"
            )));
        }
        if store.get(&slug).is_some() {
            return Err(SnapshotError::DuplicateSlug(slug));
        }
        let meta = decode_entry(&slug, entry)?;
        store.insert(meta);
    }
    Ok(store)
}

fn decode_entry(slug: &str, entry: Entry) -> Result<ScriptMetadata, SnapshotError> {
    let mut seen = BTreeSet::new();
    let mut releases = Vec::with_capacity(entry.releases.len());
    for r in entry.releases {
        if r.tag.is_empty() {
            return Err(SnapshotError::Malformed(format!(
                "script `{slug}` has a release with an empty tag"
            )));
        }
        if !seen.insert(r.tag.clone()) {
            return Err(SnapshotError::DuplicateTag {
                slug: slug.to_string(),
                tag: r.tag,
            });
        }
        let date = DateTime::parse_from_rfc3339(&r.date)
            .map_err(|_| SnapshotError::BadTimestamp {
                slug: slug.to_string(),
                tag: r.tag.clone(),
                value: r.date.clone(),
            })?
            .to_utc();
        if let Some(commit) = &r.commit {
            if !is_full_commit_hash(commit) {
                return Err(SnapshotError::Malformed(format!(
                    "script `{slug}` release `{}` commit `{commit}` is not 40 lowercase hex",
                    r.tag
                )));
            }
        }
        releases.push(Release {
            tag: r.tag,
            date,
            commit: r.commit,
        });
    }
    let runtime = match entry.runtime {
        Some(rt) => Runtime::from_parts(&rt.kind, rt.detail).ok_or_else(|| {
            SnapshotError::Malformed(format!(
                "script `{slug}` has unknown runtime kind `{}`",
                rt.kind
            ))
        })?,
        None => Runtime::Unknown(None),
    };
    let mut meta = ScriptMetadata {
        slug: slug.to_string(),
        creator: entry
            .creator
            .unwrap_or_else(|| slug.split('/').next().unwrap_or_default().to_string()),
        verified: entry.verified,
        default_branch: entry.default_branch,
        branches: entry.branches.into_iter().collect(),
        releases,
        runtime,
        categories: entry.categories.into_iter().collect(),
    };
    meta.sort_releases();
    Ok(meta)
}

pub(super) fn to_json(store: &MetadataStore) -> String {
    let map: std::collections::BTreeMap<&str, Entry> = store
        .iter()
        .map(|m| (m.slug.as_str(), encode_entry(m)))
        .collect();
    let mut out = serde_json::to_string_pretty(&map).expect("snapshot serializes");
    out.push('\n');
    out
}

fn encode_entry(m: &ScriptMetadata) -> Entry {
    let (kind, detail) = m.runtime.to_parts();
    Entry {
        branches: m.branches.iter().cloned().collect(),
        categories: m.categories.iter().cloned().collect(),
        creator: Some(m.creator.clone()),
        default_branch: m.default_branch.clone(),
        releases: m
            .releases
            .iter()
            .map(|r| ReleaseEntry {
                commit: r.commit.clone(),
                date: r.date.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                tag: r.tag.clone(),
            })
            .collect(),
        runtime: Some(RuntimeEntry {
            detail,
            kind: kind.to_string(),
        }),
        verified: m.verified,
    }
}
