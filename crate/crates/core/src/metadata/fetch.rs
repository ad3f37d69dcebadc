//! Builds metadata snapshots from a GitHub-compatible REST API.
//!
//! Per script: repository info, all tags (paginated) with the timestamp of
//! each tag's commit, branches, the creator's verification flag, and the
//! runtime from `action.yml`. A failure for one script produces a partial
//! entry; the run as a whole only fails when the output cannot be written.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde_json::Value;

use super::{classify_runtime, MetadataStore, Release, Runtime, ScriptMetadata, SnapshotError};
use crate::catalog::Catalog;

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
pub const TOKEN_ENV: &str = "PIPEWARDEN_TOKEN";

const PER_PAGE: &str = "100";
const MAX_PAGES: usize = 100;
const MAX_ATTEMPTS: usize = 3;
/// Longest we are willing to sleep waiting for a rate-limit window.
const MAX_RATE_WAIT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub api_base: String,
    pub token: Option<String>,
    /// Scripts fetched in parallel.
    pub concurrency: usize,
    /// Global ceiling on request rate; `None` disables throttling.
    pub max_requests_per_second: Option<f64>,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            api_base: DEFAULT_API_BASE.to_string(),
            token: None,
            concurrency: 4,
            max_requests_per_second: Some(10.0),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchFailure {
    pub slug: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct FetchReport {
    pub store: MetadataStore,
    pub failures: Vec<FetchFailure>,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("existing snapshot at {path} cannot be merged: {source}")]
    ExistingSnapshot { path: String, source: SnapshotError },
    #[error("cannot write snapshot {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
enum RequestError {
    #[error("HTTP {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

/// Fetches `slugs` and merges them into the snapshot at `out` (created if
/// missing). Existing entries for other slugs are kept.
pub fn fetch_to_snapshot(
    slugs: &[String],
    opts: &FetchOptions,
    catalog: &Catalog,
    out: &Path,
) -> Result<FetchReport, FetchError> {
    let mut merged = if out.exists() {
        MetadataStore::load(out).map_err(|source| FetchError::ExistingSnapshot {
            path: out.display().to_string(),
            source,
        })?
    } else {
        MetadataStore::new()
    };
    let report = fetch_metadata(slugs, opts, catalog);
    merged.merge(report.store.clone());
    merged.write(out).map_err(|source| FetchError::Write {
        path: out.display().to_string(),
        source,
    })?;
    Ok(report)
}

/// Fetches metadata for each slug. Duplicate slugs are fetched once.
pub fn fetch_metadata(slugs: &[String], opts: &FetchOptions, catalog: &Catalog) -> FetchReport {
    let unique: BTreeSet<String> = slugs
        .iter()
        .map(|s| s.trim().trim_matches('/').to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let queue = Mutex::new(unique.into_iter().collect::<Vec<_>>().into_iter());
    let results = Mutex::new(Vec::new());
    let client = Client::new(opts);

    thread::scope(|scope| {
        for _ in 0..opts.concurrency.max(1) {
            scope.spawn(|| loop {
                let Some(slug) = queue.lock().unwrap().next() else {
                    break;
                };
                let outcome = fetch_one(&client, &slug, catalog);
                results.lock().unwrap().push((slug, outcome));
            });
        }
    });

    let mut store = MetadataStore::new();
    let mut failures = Vec::new();
    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    for (slug, outcome) in results {
        match outcome {
            Ok(meta) => store.insert(meta),
            Err(err) => {
                log::warn!("fetch {slug}: {err}");
                let mut partial = ScriptMetadata::partial(&slug, format!("fetch failed: {err}"));
                partial.verified = catalog.is_verified_creator(&partial.creator);
                partial.categories = script_categories(catalog, &slug);
                store.insert(partial);
                failures.push(FetchFailure {
                    slug,
                    reason: err.to_string(),
                });
            }
        }
    }
    FetchReport { store, failures }
}

fn script_categories(catalog: &Catalog, slug: &str) -> BTreeSet<String> {
    let script_id = slug.split('/').take(2).collect::<Vec<_>>().join("/");
    catalog
        .categories_for(&script_id)
        .cloned()
        .unwrap_or_default()
}

fn fetch_one(
    client: &Client,
    slug: &str,
    catalog: &Catalog,
) -> Result<ScriptMetadata, RequestError> {
    let mut parts = slug.splitn(3, '/');
    let (owner, repo) = match (parts.next(), parts.next()) {
        (Some(o), Some(r)) if !o.is_empty() && !r.is_empty() => (o, r),
        _ => return Err(RequestError::Decode(format!("`{slug}` is not owner/repo"))),
    };
    let subpath = parts.next().filter(|s| !s.is_empty());

    let info = client.get_json(&format!("/repos/{owner}/{repo}"), &[])?.0;
    let default_branch = str_field(&info, &["default_branch"])?.to_string();
    let login = str_field(&info, &["owner", "login"])
        .unwrap_or(owner)
        .to_string();
    let is_org = info
        .pointer("/owner/type")
        .and_then(Value::as_str)
        .is_some_and(|t| t == "Organization");

    let mut commit_dates: BTreeMap<String, DateTime<Utc>> = BTreeMap::new();
    let mut releases = Vec::new();
    for tag in client.get_paginated(&format!("/repos/{owner}/{repo}/tags"))? {
        let name = str_field(&tag, &["name"])?.to_string();
        let sha = str_field(&tag, &["commit", "sha"])?.to_string();
        let date = match commit_dates.get(&sha) {
            Some(date) => *date,
            None => {
                let commit = client
                    .get_json(&format!("/repos/{owner}/{repo}/commits/{sha}"), &[])?
                    .0;
                let raw = commit
                    .pointer("/commit/committer/date")
                    .or_else(|| commit.pointer("/commit/author/date"))
                    .and_then(Value::as_str)
                    .ok_or_else(|| RequestError::Decode(format!("commit {sha} has no date")))?;
                let date = DateTime::parse_from_rfc3339(raw)
                    .map_err(|e| RequestError::Decode(format!("commit {sha} date: {e}")))?
                    .to_utc();
                commit_dates.insert(sha.clone(), date);
                date
            }
        };
        let commit = crate::script_ref::is_full_commit_hash(&sha).then_some(sha);
        releases.push(Release {
            tag: name,
            date,
            commit,
        });
    }

    let branches = client
        .get_paginated(&format!("/repos/{owner}/{repo}/branches"))?
        .iter()
        .filter_map(|b| b.get("name").and_then(Value::as_str).map(str::to_string))
        .collect();

    let verified = if is_org {
        match client.get_json(&format!("/orgs/{login}"), &[]) {
            Ok((org, _)) => org
                .get("is_verified")
                .and_then(Value::as_bool)
                .unwrap_or_else(|| catalog.is_verified_creator(&login)),
            Err(_) => catalog.is_verified_creator(&login),
        }
    } else {
        catalog.is_verified_creator(&login)
    };

    let runtime = fetch_runtime(client, owner, repo, subpath, &default_branch)?;

    let mut meta = ScriptMetadata {
        slug: slug.to_string(),
        creator: login,
        verified,
        default_branch,
        branches,
        releases,
        runtime,
        categories: script_categories(catalog, slug),
    };
    meta.sort_releases();
    Ok(meta)
}

fn fetch_runtime(
    client: &Client,
    owner: &str,
    repo: &str,
    subpath: Option<&str>,
    git_ref: &str,
) -> Result<Runtime, RequestError> {
    let dir = subpath.map(|s| format!("{s}/")).unwrap_or_default();
    for name in ["action.yml", "action.yaml"] {
        let path = format!("/repos/{owner}/{repo}/contents/{dir}{name}");
        match client.get_json(&path, &[("ref", git_ref)]) {
            Ok((file, _)) => {
                let encoded = str_field(&file, &["content"])?;
                let cleaned: String = encoded.chars().filter(|c| !c.is_whitespace()).collect();
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(cleaned)
                    .map_err(|e| RequestError::Decode(format!("{name}: {e}")))?;
                return Ok(classify_runtime(&String::from_utf8_lossy(&bytes)));
            }
            Err(RequestError::Status(404)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(Runtime::Unknown(Some("no action manifest found".into())))
}

fn str_field<'a>(value: &'a Value, path: &[&str]) -> Result<&'a str, RequestError> {
    let mut cur = value;
    for key in path {
        cur = cur
            .get(key)
            .ok_or_else(|| RequestError::Decode(format!("missing `{}`", path.join("."))))?;
    }
    cur.as_str()
        .ok_or_else(|| RequestError::Decode(format!("`{}` is not a string", path.join("."))))
}

struct Client {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
    limiter: RateLimiter,
}

impl Client {
    fn new(opts: &FetchOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(opts.timeout))
            .build()
            .into();
        let interval = opts
            .max_requests_per_second
            .filter(|r| *r > 0.0)
            .map(|r| Duration::from_secs_f64(1.0 / r))
            .unwrap_or_default();
        Self {
            agent,
            base: opts.api_base.trim_end_matches('/').to_string(),
            token: opts.token.clone(),
            limiter: RateLimiter::new(interval),
        }
    }

    /// GET a JSON document. Returns the body and the `rel="next"` link.
    fn get_json(
        &self,
        path_or_url: &str,
        query: &[(&str, &str)],
    ) -> Result<(Value, Option<String>), RequestError> {
        let url = if path_or_url.starts_with("http://") || path_or_url.starts_with("https://") {
            path_or_url.to_string()
        } else {
            format!("{}{}", self.base, path_or_url)
        };
        for attempt in 1..=MAX_ATTEMPTS {
            self.limiter.acquire();
            let mut req = self
                .agent
                .get(&url)
                .header("Accept", "application/vnd.github+json")
                .header(
                    "User-Agent",
                    concat!("pipewarden/", env!("CARGO_PKG_VERSION")),
                );
            for (k, v) in query {
                req = req.query(*k, *v);
            }
            if let Some(token) = &self.token {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            let mut resp = req
                .call()
                .map_err(|e| RequestError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let header = |name: &str| {
                resp.headers()
                    .get(name)
                    .and_then(|v| v.to_str().ok())
                    .map(str::to_string)
            };
            let remaining = header("x-ratelimit-remaining");
            let reset = header("x-ratelimit-reset");
            let retry_after = header("retry-after");
            let link = header("link");

            if remaining.as_deref() == Some("0") {
                if let Some(reset) = reset.as_deref().and_then(|r| r.parse::<u64>().ok()) {
                    self.limiter.pause_until_epoch(reset);
                }
            }
            if matches!(status, 403 | 429) && attempt < MAX_ATTEMPTS {
                let wait = retry_after
                    .as_deref()
                    .and_then(|s| s.parse::<u64>().ok())
                    .map(Duration::from_secs)
                    .unwrap_or(Duration::from_secs(1 << attempt));
                if wait > MAX_RATE_WAIT {
                    return Err(RequestError::Status(status));
                }
                log::info!("rate limited on {url}; retrying in {wait:?}");
                thread::sleep(wait);
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(RequestError::Status(status));
            }
            let body = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| RequestError::Transport(e.to_string()))?;
            let value = serde_json::from_str(&body)
                .map_err(|e| RequestError::Decode(format!("{url}: {e}")))?;
            return Ok((value, link.as_deref().and_then(next_link)));
        }
        Err(RequestError::Transport(format!("{url}: retries exhausted")))
    }

    fn get_paginated(&self, path: &str) -> Result<Vec<Value>, RequestError> {
        let mut items = Vec::new();
        let (first, mut next) = self.get_json(path, &[("per_page", PER_PAGE)])?;
        extend_items(&mut items, first)?;
        let mut pages = 1;
        while let Some(url) = next.take() {
            if pages >= MAX_PAGES {
                log::warn!("{path}: stopping after {MAX_PAGES} pages");
                break;
            }
            let (page, link) = self.get_json(&url, &[])?;
            extend_items(&mut items, page)?;
            next = link;
            pages += 1;
        }
        Ok(items)
    }
}

fn extend_items(items: &mut Vec<Value>, page: Value) -> Result<(), RequestError> {
    match page {
        Value::Array(values) => {
            items.extend(values);
            Ok(())
        }
        _ => Err(RequestError::Decode("expected a JSON array page".into())),
    }
}

/// Extracts the `rel="next"` target from an RFC 8288 `Link` header.
fn next_link(header: &str) -> Option<String> {
    header.split(',').find_map(|part| {
        let mut pieces = part.split(';');
        let target = pieces.next()?.trim();
        let is_next = pieces.any(|p| {
            let p = p.trim();
            p == "rel=\"next\"" || p == "rel=next"
        });
        is_next.then(|| {
            target
                .trim_start_matches('<')
                .trim_end_matches('>')
                .to_string()
        })
    })
}

/// Spaces requests at least `interval` apart across all threads, and holds
/// everyone back while the server-reported rate-limit window is exhausted.
struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    fn new(interval: Duration) -> Self {
        Self {
            interval,
            next_slot: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }

    fn pause_until_epoch(&self, reset_epoch_secs: u64) {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_secs();
        let wait = Duration::from_secs(reset_epoch_secs.saturating_sub(now)).min(MAX_RATE_WAIT);
        let mut next = self.next_slot.lock().unwrap();
        *next = (*next).max(Instant::now() + wait);
    }
}
