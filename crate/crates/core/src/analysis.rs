//! Per-repository analysis: discover workflow files, parse them, and
//! resolve every script usage against metadata and advisories.

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::advisory::{match_advisories, AdvisoryDb, SuppressedMatch, VulnMatch};
use crate::catalog::Catalog;
use crate::metadata::{MetadataStore, ScriptMetadata};
use crate::model::{
    extract_credentials, extract_script_usages, parse_workflow, parse_workflow_bytes,
    CredentialUse, ScriptUsage, Workflow,
};
use crate::script_ref::{
    classify_ref, parse_uses, RefForm, RefKind, RefParseError, RepositoryRef, ScriptRef,
};
use crate::staleness::{compute_repo_lag, compute_usage_lag, RepoLag, UsageLag};

pub const WORKFLOW_DIR: &str = ".github/workflows";

/// Which instant lag is measured up to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagClock {
    /// The analysis time.
    #[default]
    AnalysisTime,
    /// Each workflow file's modification time, falling back to the
    /// analysis time when unavailable.
    FileMtime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedUsage {
    pub usage: ScriptUsage,
    pub parsed: Result<ScriptRef, RefParseError>,
    /// Set for repository references only.
    pub kind: Option<RefKind>,
    /// Set for repository references only.
    pub lag: Option<UsageLag>,
}

impl ResolvedUsage {
    pub fn repository(&self) -> Option<&RepositoryRef> {
        match &self.parsed {
            Ok(ScriptRef {
                form: RefForm::Repository(r),
                ..
            }) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowAnalysis {
    pub workflow: Workflow,
    pub usages: Vec<ResolvedUsage>,
    pub credentials: Vec<CredentialUse>,
    pub matches: Vec<VulnMatch>,
    pub suppressed: Vec<SuppressedMatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseFailure {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepoAnalysis {
    pub repo: String,
    pub workflows: Vec<WorkflowAnalysis>,
    pub parse_failures: Vec<ParseFailure>,
    pub repo_lag: RepoLag,
}

impl RepoAnalysis {
    pub fn lags(&self) -> impl Iterator<Item = &UsageLag> {
        self.workflows
            .iter()
            .flat_map(|w| w.usages.iter())
            .filter_map(|u| u.lag.as_ref())
    }

    pub fn matches(&self) -> impl Iterator<Item = &VulnMatch> {
        self.workflows.iter().flat_map(|w| w.matches.iter())
    }
}

/// Workflow files directly under `<root>/.github/workflows`, sorted by name.
/// A missing directory yields no files.
pub fn discover_workflows(root: &Path) -> io::Result<Vec<PathBuf>> {
    let dir = root.join(WORKFLOW_DIR);
    let entries = match std::fs::read_dir(&dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_yaml = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e == "yml" || e == "yaml");
        if is_yaml && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Shared, read-only inputs for analysing any number of repositories.
#[derive(Debug, Clone)]
pub struct Analyzer {
    pub metadata: MetadataStore,
    pub advisories: AdvisoryDb,
    pub catalog: Catalog,
    pub analysis_time: DateTime<Utc>,
    pub lag_clock: LagClock,
}

impl Analyzer {
    pub fn new(
        metadata: MetadataStore,
        advisories: AdvisoryDb,
        catalog: Catalog,
        analysis_time: DateTime<Utc>,
    ) -> Self {
        Self {
            metadata,
            advisories,
            catalog,
            analysis_time,
            lag_clock: LagClock::AnalysisTime,
        }
    }

    pub fn with_lag_clock(mut self, clock: LagClock) -> Self {
        self.lag_clock = clock;
        self
    }

    pub fn script_metadata(&self, usage: &ResolvedUsage) -> Option<&ScriptMetadata> {
        usage.repository().and_then(|r| self.metadata.lookup(r))
    }

    /// Verified flag from metadata, or the bundled allow-list.
    pub fn is_verified(&self, r: &RepositoryRef) -> bool {
        self.metadata.lookup(r).is_some_and(|m| m.verified)
            || self.catalog.is_verified_creator(&r.owner)
    }

    /// Categories from metadata merged with the category map.
    pub fn categories(&self, r: &RepositoryRef) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .metadata
            .lookup(r)
            .map(|m| m.categories.clone())
            .unwrap_or_default();
        if let Some(cats) = self.catalog.categories_for(&r.script_id()) {
            out.extend(cats.iter().cloned());
        }
        out
    }

    /// Analyses the repository checked out at `root`. Reported file paths
    /// are `<label>/.github/workflows/<file>`, or relative to the root when
    /// `label` is empty.
    pub fn analyze_repo(&self, root: &Path, label: &str) -> io::Result<RepoAnalysis> {
        let mut workflows = Vec::new();
        let mut parse_failures = Vec::new();
        for path in discover_workflows(root)? {
            let name = path.file_name().unwrap_or_default();
            let rel = Path::new(label).join(WORKFLOW_DIR).join(name);
            let bytes = std::fs::read(&path)?;
            match parse_workflow_bytes(&bytes, &rel) {
                Ok(wf) => {
                    let clock = match self.lag_clock {
                        LagClock::AnalysisTime => self.analysis_time,
                        LagClock::FileMtime => file_mtime(&path).unwrap_or(self.analysis_time),
                    };
                    workflows.push(self.analyze_workflow_at(wf, clock));
                }
                Err(e) => {
                    log::warn!("{}: {e}", path.display());
                    parse_failures.push(ParseFailure {
                        file: crate::model::path_label(&rel),
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(self.finish_repo(label, workflows, parse_failures))
    }

    /// Analyses in-memory workflow texts as one repository.
    pub fn analyze_texts<'a>(
        &self,
        label: &str,
        files: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> RepoAnalysis {
        let mut workflows = Vec::new();
        let mut parse_failures = Vec::new();
        for (path, text) in files {
            match parse_workflow(text, path) {
                Ok(wf) => workflows.push(self.analyze_workflow(wf)),
                Err(e) => parse_failures.push(ParseFailure {
                    file: path.to_string(),
                    error: e.to_string(),
                }),
            }
        }
        self.finish_repo(label, workflows, parse_failures)
    }

    fn finish_repo(
        &self,
        label: &str,
        workflows: Vec<WorkflowAnalysis>,
        parse_failures: Vec<ParseFailure>,
    ) -> RepoAnalysis {
        let lags: Vec<UsageLag> = workflows
            .iter()
            .flat_map(|w| w.usages.iter())
            .filter_map(|u| u.lag.clone())
            .collect();
        RepoAnalysis {
            repo: label.to_string(),
            repo_lag: compute_repo_lag(label, &lags),
            workflows,
            parse_failures,
        }
    }

    pub fn analyze_workflow(&self, workflow: Workflow) -> WorkflowAnalysis {
        self.analyze_workflow_at(workflow, self.analysis_time)
    }

    fn analyze_workflow_at(&self, workflow: Workflow, clock: DateTime<Utc>) -> WorkflowAnalysis {
        let mut usages = Vec::new();
        let mut matches = Vec::new();
        let mut suppressed = Vec::new();
        for usage in extract_script_usages(&workflow) {
            let parsed = parse_uses(&usage.raw_uses);
            let (kind, lag) = match &parsed {
                Ok(ScriptRef {
                    form: RefForm::Repository(r),
                    ..
                }) => {
                    let meta = self.metadata.lookup(r);
                    let kind = classify_ref(r, meta);
                    let lag = compute_usage_lag(&usage.location, r, kind, meta, clock);
                    let outcome =
                        match_advisories(&usage.location, r, kind, &self.advisories, meta);
                    matches.extend(outcome.matches);
                    suppressed.extend(outcome.suppressed);
                    (Some(kind), Some(lag))
                }
                _ => (None, None),
            };
            usages.push(ResolvedUsage {
                usage,
                parsed,
                kind,
                lag,
            });
        }
        WorkflowAnalysis {
            credentials: extract_credentials(&workflow),
            workflow,
            usages,
            matches,
            suppressed,
        }
    }
}

fn file_mtime(path: &Path) -> Option<DateTime<Utc>> {
    let modified = std::fs::metadata(path).ok()?.modified().ok()?;
    Some(DateTime::<Utc>::from(modified))
}
