//! `uses:` reference parsing, revision-kind classification and tag ordering.

use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metadata::ScriptMetadata;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RefParseError {
    #[error("empty `uses` reference")]
    Empty,
    #[error("`{0}` is missing an owner or repository segment")]
    MissingSegment(String),
    #[error("`{0}` names no docker image")]
    EmptyImage(String),
}

/// A parsed `uses:` value. `raw` is always the verbatim input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRef {
    pub raw: String,
    pub form: RefForm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefForm {
    Repository(RepositoryRef),
    DockerImage(DockerImageRef),
    LocalPath(String),
}

/// `owner/repo[/subpath]@ref`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepositoryRef {
    pub owner: String,
    pub repo: String,
    pub subpath: Option<String>,
    /// Empty when the reference carries no `@`.
    pub git_ref: String,
}

impl RepositoryRef {
    /// Lower-cased `owner/repo`; the identity used for counting scripts and
    /// matching advisories.
    pub fn script_id(&self) -> String {
        format!("{}/{}", self.owner, self.repo).to_ascii_lowercase()
    }

    /// `owner/repo[/subpath]` as written.
    pub fn slug(&self) -> String {
        match &self.subpath {
            Some(sub) => format!("{}/{}/{}", self.owner, self.repo, sub),
            None => format!("{}/{}", self.owner, self.repo),
        }
    }

    pub fn creator(&self) -> String {
        self.owner.to_ascii_lowercase()
    }
}

/// `docker://[registry/]image[:tag|@digest]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DockerImageRef {
    pub registry: Option<String>,
    pub image: String,
    pub tag_or_digest: Option<String>,
}

impl DockerImageRef {
    pub fn is_digest_pinned(&self) -> bool {
        self.tag_or_digest
            .as_deref()
            .is_some_and(|t| t.starts_with("sha256:"))
    }
}

pub fn parse_uses(raw: &str) -> Result<ScriptRef, RefParseError> {
    if raw.trim().is_empty() {
        return Err(RefParseError::Empty);
    }
    let form = if let Some(image) = raw.strip_prefix("docker://") {
        RefForm::DockerImage(parse_docker(raw, image)?)
    } else if raw.starts_with("./") || raw.starts_with('/') {
        RefForm::LocalPath(raw.to_string())
    } else {
        let (path, git_ref) = raw.split_once('@').unwrap_or((raw, ""));
        let mut segments = path.splitn(3, '/');
        let owner = segments.next().unwrap_or_default();
        let repo = segments.next().unwrap_or_default();
        if owner.is_empty() || repo.is_empty() {
            return Err(RefParseError::MissingSegment(raw.to_string()));
        }
        RefForm::Repository(RepositoryRef {
            owner: owner.to_string(),
            repo: repo.to_string(),
            subpath: segments
                .next()
                .filter(|s| !s.is_empty())
                .map(str::to_string),
            git_ref: git_ref.to_string(),
        })
    };
    Ok(ScriptRef {
        raw: raw.to_string(),
        form,
    })
}

fn parse_docker(raw: &str, rest: &str) -> Result<DockerImageRef, RefParseError> {
    let (name, mut tag) = match rest.split_once('@') {
        Some((name, digest)) => (name, Some(digest.to_string())),
        None => (rest, None),
    };
    // A ':' after the last '/' separates the tag; earlier ones belong to a
    // registry port.
    let last_slash = name.rfind('/').map_or(0, |i| i + 1);
    let name = match name[last_slash..].rfind(':') {
        Some(colon) if tag.is_none() => {
            tag = Some(name[last_slash + colon + 1..].to_string());
            &name[..last_slash + colon]
        }
        Some(colon) => &name[..last_slash + colon],
        None => name,
    };
    let (registry, image) = match name.split_once('/') {
        Some((first, image))
            if first.contains('.') || first.contains(':') || first == "localhost" =>
        {
            (Some(first.to_string()), image)
        }
        _ => (None, name),
    };
    if image.is_empty() {
        return Err(RefParseError::EmptyImage(raw.to_string()));
    }
    Ok(DockerImageRef {
        registry,
        image: image.to_string(),
        tag_or_digest: tag.filter(|t| !t.is_empty()),
    })
}

/// How a repository reference names its revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefKind {
    Tag,
    Branch,
    CommitHash,
    Invalid,
    /// No metadata was available to decide.
    Unresolved,
}

impl RefKind {
    pub const ALL: [RefKind; 5] = [
        RefKind::Tag,
        RefKind::Branch,
        RefKind::CommitHash,
        RefKind::Invalid,
        RefKind::Unresolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RefKind::Tag => "tag",
            RefKind::Branch => "branch",
            RefKind::CommitHash => "commit_hash",
            RefKind::Invalid => "invalid",
            RefKind::Unresolved => "unresolved",
        }
    }
}

impl fmt::Display for RefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn is_lower_hex(s: &str, min: usize, max: usize) -> bool {
    (min..=max).contains(&s.len()) && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn is_full_commit_hash(s: &str) -> bool {
    is_lower_hex(s, 40, 40)
}

pub fn classify_ref(r: &RepositoryRef, metadata: Option<&ScriptMetadata>) -> RefKind {
    let name = r.git_ref.as_str();
    if name.is_empty() {
        return RefKind::Invalid;
    }
    if is_full_commit_hash(name) {
        return RefKind::CommitHash;
    }
    let Some(meta) = metadata else {
        return RefKind::Unresolved;
    };
    if meta.release(name).is_some() {
        RefKind::Tag
    } else if meta.default_branch == name || meta.branches.contains(name) {
        RefKind::Branch
    } else if is_lower_hex(name, 7, 39) {
        RefKind::CommitHash
    } else {
        RefKind::Invalid
    }
}

/// Numeric ordering key for a release tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionKey {
    pub numeric_components: Vec<u64>,
    pub original: String,
    /// Release date, consulted only when the components tie.
    pub released: Option<DateTime<Utc>>,
}

impl VersionKey {
    /// Strips one leading `v`/`V`, splits on `.`, and keeps numeric
    /// components up to the first non-numeric tail (`v2-beta` keys as `[2]`).
    pub fn parse(tag: &str) -> Self {
        let body = tag
            .strip_prefix('v')
            .or_else(|| tag.strip_prefix('V'))
            .unwrap_or(tag);
        let mut numeric_components = Vec::new();
        for part in body.split('.') {
            let digits = part.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 {
                break;
            }
            let value = part[..digits].parse::<u64>().unwrap_or(u64::MAX);
            numeric_components.push(value);
            if digits < part.len() {
                break;
            }
        }
        Self {
            numeric_components,
            original: tag.to_string(),
            released: None,
        }
    }

    pub fn with_date(mut self, released: DateTime<Utc>) -> Self {
        self.released = Some(released);
        self
    }

    /// Component-wise comparison with missing components read as zero.
    pub fn cmp_components(&self, other: &Self) -> Ordering {
        let (a, b) = (&self.numeric_components, &other.numeric_components);
        (0..a.len().max(b.len()))
            .map(|i| {
                let x = a.get(i).copied().unwrap_or(0);
                let y = b.get(i).copied().unwrap_or(0);
                x.cmp(&y)
            })
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Components first, then release date (undated keys sort before dated).
pub fn compare_versions(a: &VersionKey, b: &VersionKey) -> Ordering {
    a.cmp_components(b)
        .then_with(|| a.released.cmp(&b.released))
}
