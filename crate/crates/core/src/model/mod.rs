//! Typed pipeline model for GitHub Actions workflow files.
//!
//! A [`Workflow`] is built once by [`parse_workflow`] and never mutated
//! afterwards. Expressions (`${{ ... }}`) are kept verbatim; nothing here
//! evaluates them.

mod credentials;
mod parse;

use std::path::PathBuf;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use credentials::{extract_credentials, find_secret_accessors, CredentialScope, CredentialUse};
pub use parse::{parse_workflow, parse_workflow_bytes, ParseError};

/// Ordered `name -> raw expression text` map (env blocks, `with:` arguments).
pub type ExprMap = IndexMap<String, String>;

/// Where something lives inside a scanned repository.
///
/// Ordering is by file, then job (workflow-level first), then step
/// (job-level first), which is the order findings are reported in.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub job: Option<String>,
    pub step: Option<usize>,
}

impl Location {
    pub fn workflow(file: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            job: None,
            step: None,
        }
    }

    pub fn job(file: impl Into<String>, job: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            job: Some(job.into()),
            step: None,
        }
    }

    pub fn step(file: impl Into<String>, job: impl Into<String>, step: usize) -> Self {
        Self {
            file: file.into(),
            job: Some(job.into()),
            step: Some(step),
        }
    }
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.file)?;
        if let Some(job) = &self.job {
            write!(f, ":{job}")?;
        }
        if let Some(step) = self.step {
            write!(f, "[{step}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workflow {
    pub source_path: PathBuf,
    pub name: Option<String>,
    pub triggers: Vec<String>,
    pub env: ExprMap,
    pub permissions: Option<String>,
    pub jobs: Vec<Job>,
}

impl Workflow {
    /// Path rendered with `/` separators, as used in [`Location::file`].
    pub fn file_label(&self) -> String {
        path_label(&self.source_path)
    }

    pub fn job(&self, id: &str) -> Option<&Job> {
        self.jobs.iter().find(|j| j.id == id)
    }

    /// Number of `uses:` occurrences, counting job-level reusable workflow calls.
    pub fn uses_count(&self) -> usize {
        self.jobs
            .iter()
            .map(|job| match &job.body {
                JobBody::Steps(steps) => steps.iter().filter(|s| s.uses().is_some()).count(),
                JobBody::Reusable { .. } => 1,
            })
            .sum()
    }
}

pub(crate) fn path_label(path: &std::path::Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
        .replace("//", "/")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub id: String,
    pub display_name: Option<String>,
    pub runs_on: Vec<String>,
    pub env: ExprMap,
    pub body: JobBody,
}

impl Job {
    /// Steps of a normal job; empty for reusable-workflow calls.
    pub fn steps(&self) -> &[Step] {
        match &self.body {
            JobBody::Steps(steps) => steps,
            JobBody::Reusable { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobBody {
    /// Ordinary job; never empty.
    Steps(Vec<Step>),
    /// Job-level `uses:` calling a reusable workflow.
    Reusable {
        uses: String,
        with_args: ExprMap,
        secrets: ExprMap,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub index: usize,
    pub display_name: Option<String>,
    pub env: ExprMap,
    pub body: StepBody,
}

impl Step {
    pub fn uses(&self) -> Option<&str> {
        match &self.body {
            StepBody::Uses { raw_uses, .. } => Some(raw_uses),
            StepBody::Run { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepBody {
    Uses {
        raw_uses: String,
        with_args: ExprMap,
    },
    Run {
        script_text: String,
        shell: Option<String>,
    },
}

/// One `uses:` occurrence in a workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptUsage {
    pub location: Location,
    pub raw_uses: String,
    /// `true` for a job-level reusable workflow call.
    pub job_level: bool,
}

/// All `uses:` occurrences in source order (job order, then step order).
pub fn extract_script_usages(workflow: &Workflow) -> Vec<ScriptUsage> {
    let file = workflow.file_label();
    let mut out = Vec::new();
    for job in &workflow.jobs {
        match &job.body {
            JobBody::Steps(steps) => {
                for step in steps {
                    if let Some(raw) = step.uses() {
                        out.push(ScriptUsage {
                            location: Location::step(&file, &job.id, step.index),
                            raw_uses: raw.to_string(),
                            job_level: false,
                        });
                    }
                }
            }
            JobBody::Reusable { uses, .. } => out.push(ScriptUsage {
                location: Location::job(&file, &job.id),
                raw_uses: uses.clone(),
                job_level: true,
            }),
        }
    }
    out
}

#[cfg(test)]
pub(crate) const SUPER_LINTER_WORKFLOW: &str = "name: Super-Linter

on: push

jobs:
  super-lint:
    name: Lint code base
    runs-on: ubuntu-latest
    steps:
      - name: Checkout code
        uses: actions/checkout@v2

      - name: Run Super-Linter
        uses: github/super-linter@v3
        env:
          DEFAULT_BRANCH: main
          GITHUB_TOKEN: ${{ secrets.GITHUB_TOKEN }}
";
