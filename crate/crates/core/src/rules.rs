//! Rule catalog turning analysed workflows into attack-surface-labelled
//! findings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::advisory::{AffectedRange, MatchReason, VulnMatch};
use crate::analysis::{Analyzer, RepoAnalysis, ResolvedUsage, WorkflowAnalysis};
use crate::catalog::{ARTIFACT_RELEASE, DEPLOYMENT};
use crate::metadata::{Runtime, ScriptMetadata};
use crate::model::Location;
use crate::script_ref::{is_full_commit_hash, DockerImageRef, RefForm, RefKind, RepositoryRef};
use crate::staleness::LagStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::Info,
        Severity::Low,
        Severity::Medium,
        Severity::High,
        Severity::Critical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }

    /// Standard CVSS v3 bands.
    pub fn from_cvss(score: f64) -> Self {
        if score >= 9.0 {
            Severity::Critical
        } else if score >= 7.0 {
            Severity::High
        } else if score >= 4.0 {
            Severity::Medium
        } else {
            Severity::Low
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown severity `{0}` (expected info, low, medium, high or critical)")]
pub struct UnknownSeverity(pub String);

impl FromStr for Severity {
    type Err = UnknownSeverity;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Severity::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownSeverity(s.to_string()))
    }
}

/// Where in the pipeline an attacker gains leverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackSurface {
    /// Credentials and source entering the pipeline.
    Input,
    /// Code executing on the runner.
    Runtime,
    /// Released artifacts and deployments.
    Output,
    None,
}

impl AttackSurface {
    pub const ALL: [AttackSurface; 4] = [
        AttackSurface::Input,
        AttackSurface::Runtime,
        AttackSurface::Output,
        AttackSurface::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackSurface::Input => "input",
            AttackSurface::Runtime => "runtime",
            AttackSurface::Output => "output",
            AttackSurface::None => "none",
        }
    }

    /// Surface implied by an advisory's impact text.
    pub fn from_impact(impact: &str) -> Self {
        let impact = impact.to_ascii_lowercase();
        if impact.contains("leak") || impact.contains("disclosure") || impact.contains("exposure") {
            AttackSurface::Input
        } else {
            AttackSurface::Runtime
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub rule_id: String,
    pub severity: Severity,
    pub attack_surface: AttackSurface,
    pub location: Location,
    pub message: String,
    pub evidence: BTreeMap<String, String>,
}

impl Finding {
    fn new(rule: &RuleDescriptor, location: Location, message: String) -> Self {
        Self {
            rule_id: rule.id.to_string(),
            severity: rule.default_severity,
            attack_surface: rule.surface,
            location,
            message,
            evidence: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.evidence.insert(key.to_string(), value.to_string());
        self
    }

    fn severity(mut self, severity: Severity) -> Self {
        self.severity = severity;
        self
    }

    fn surface(mut self, surface: AttackSurface) -> Self {
        self.attack_surface = surface;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleDescriptor {
    pub id: &'static str,
    pub name: &'static str,
    pub default_severity: Severity,
    pub surface: AttackSurface,
    pub description: &'static str,
}

pub const VULN_KNOWN: RuleDescriptor = RuleDescriptor {
    id: "R-VULN-KNOWN",
    name: "KnownVulnerableScript",
    default_severity: Severity::High,
    surface: AttackSurface::Runtime,
    description: "Script version is affected by a published advisory.",
};
pub const CRED_BROAD: RuleDescriptor = RuleDescriptor {
    id: "R-CRED-BROAD",
    name: "BroadlyScopedSecret",
    default_severity: Severity::Medium,
    surface: AttackSurface::Input,
    description: "Secret set in a workflow or job env block is readable by every step in scope.",
};
pub const CRED_COUNT: RuleDescriptor = RuleDescriptor {
    id: "R-CRED-COUNT",
    name: "SecretCount",
    default_severity: Severity::Info,
    surface: AttackSurface::Input,
    description: "Number of distinct secrets a workflow passes; more than 5 is flagged.",
};
pub const REF_MUTABLE: RuleDescriptor = RuleDescriptor {
    id: "R-REF-MUTABLE",
    name: "MutableScriptRef",
    default_severity: Severity::Low,
    surface: AttackSurface::Runtime,
    description: "Script referenced by tag or branch instead of a full commit hash.",
};
pub const REF_INVALID: RuleDescriptor = RuleDescriptor {
    id: "R-REF-INVALID",
    name: "InvalidScriptRef",
    default_severity: Severity::Medium,
    surface: AttackSurface::None,
    description: "Script reference does not resolve to any tag, branch or commit.",
};
pub const STALE: RuleDescriptor = RuleDescriptor {
    id: "R-STALE",
    name: "OutdatedScript",
    default_severity: Severity::Low,
    surface: AttackSurface::Runtime,
    description: "A newer release of the script has been available for over 3 months.",
};
pub const DOCKER_SOURCE: RuleDescriptor = RuleDescriptor {
    id: "R-DOCKER-SOURCE",
    name: "UntrustedDockerSource",
    default_severity: Severity::Medium,
    surface: AttackSurface::Runtime,
    description: "Docker image is mutable-tagged or comes from an unverified creator.",
};
pub const SENSITIVE_UNVERIFIED: RuleDescriptor = RuleDescriptor {
    id: "R-SENSITIVE-UNVERIFIED",
    name: "SensitiveOperationByUnverifiedCreator",
    default_severity: Severity::Medium,
    surface: AttackSurface::Output,
    description: "Artifact release or deployment delegated to a script from an unverified creator.",
};
pub const TRIGGER_BROAD: RuleDescriptor = RuleDescriptor {
    id: "R-TRIGGER-BROAD",
    name: "SecretsOnExternalTrigger",
    default_severity: Severity::Medium,
    surface: AttackSurface::Input,
    description: "Workflow with secrets can be started by events outsiders control.",
};

pub const RULES: [RuleDescriptor; 9] = [
    VULN_KNOWN,
    CRED_BROAD,
    CRED_COUNT,
    REF_MUTABLE,
    REF_INVALID,
    STALE,
    DOCKER_SOURCE,
    SENSITIVE_UNVERIFIED,
    TRIGGER_BROAD,
];

pub const CRED_COUNT_THRESHOLD: usize = 5;
pub const STALE_LOW_DAYS: u64 = 90;
pub const STALE_MEDIUM_DAYS: u64 = 365;

/// Findings for every workflow of a repository, sorted by location, rule
/// id and message.
pub fn evaluate_rules(repo: &RepoAnalysis, analyzer: &Analyzer) -> Vec<Finding> {
    let mut findings: Vec<Finding> = repo
        .workflows
        .iter()
        .flat_map(|w| evaluate_workflow(w, analyzer))
        .collect();
    sort_findings(&mut findings);
    findings
}

pub fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        (&a.location, &a.rule_id, &a.message).cmp(&(&b.location, &b.rule_id, &b.message))
    });
}

pub fn evaluate_workflow(wa: &WorkflowAnalysis, analyzer: &Analyzer) -> Vec<Finding> {
    let mut out = Vec::new();
    for m in &wa.matches {
        out.extend(vuln_finding(m, wa, analyzer));
    }
    credential_rules(wa, analyzer, &mut out);
    for usage in &wa.usages {
        usage_rules(usage, analyzer, &mut out);
    }
    out
}

fn vuln_finding(m: &VulnMatch, wa: &WorkflowAnalysis, analyzer: &Analyzer) -> Option<Finding> {
    let adv = analyzer.advisories.get(&m.advisory_id)?;
    let raw = wa
        .usages
        .iter()
        .find(|u| u.usage.location == m.location)
        .map(|u| u.usage.raw_uses.as_str())
        .unwrap_or(&adv.slug);
    let (range_key, boundary) = match &adv.range {
        AffectedRange::LastVulnerable(v) => ("last_vulnerable", v),
        AffectedRange::FixedIn(v) => ("fixed_in", v),
    };
    let reason = match m.reason {
        MatchReason::AtOrBeforeLastVulnerable => format!("at or before last vulnerable {boundary}"),
        MatchReason::BeforeFixedIn => format!("before fixed version {boundary}"),
        MatchReason::CommitBeforeFix => format!("commit predates fixed version {boundary}"),
    };
    Some(
        Finding::new(
            &VULN_KNOWN,
            m.location.clone(),
            format!(
                "`{raw}` is affected by {} ({}, CVSS {:.1}): {reason}",
                adv.id, adv.impact, adv.cvss
            ),
        )
        .severity(Severity::from_cvss(adv.cvss))
        .surface(AttackSurface::from_impact(&adv.impact))
        .with("advisory", &adv.id)
        .with("cvss", format!("{:.1}", adv.cvss))
        .with("impact", &adv.impact)
        .with(range_key, boundary)
        .with("referenced_version", &m.referenced_version)
        .with("script", &adv.slug),
    )
}

fn credential_rules(wa: &WorkflowAnalysis, analyzer: &Analyzer, out: &mut Vec<Finding>) {
    let file = wa.workflow.file_label();
    let mut broad = BTreeSet::new();
    for cred in wa.credentials.iter().filter(|c| c.scope.is_broad()) {
        if !broad.insert((cred.location.clone(), cred.secret_name.clone())) {
            continue;
        }
        let audience = match &cred.location.job {
            Some(job) => format!("every step of job `{job}`"),
            None => "every step of every job".to_string(),
        };
        out.push(
            Finding::new(
                &CRED_BROAD,
                cred.location.clone(),
                format!("secret `{}` is visible to {audience}", cred.secret_name),
            )
            .with("expression", &cred.expression)
            .with("scope", format!("{:?}", cred.scope))
            .with("secret", &cred.secret_name),
        );
    }

    let secrets: BTreeSet<&str> = wa
        .credentials
        .iter()
        .map(|c| c.secret_name.as_str())
        .collect();
    if secrets.is_empty() {
        return;
    }
    let count = secrets.len();
    let message = if count > CRED_COUNT_THRESHOLD {
        format!("workflow passes {count} distinct secrets, more than {CRED_COUNT_THRESHOLD}")
    } else {
        format!("workflow passes {count} distinct secret(s)")
    };
    out.push(
        Finding::new(&CRED_COUNT, Location::workflow(&file), message)
            .with("count", count)
            .with("exceeds_threshold", count > CRED_COUNT_THRESHOLD)
            .with(
                "secrets",
                secrets.iter().copied().collect::<Vec<_>>().join(","),
            ),
    );

    let external: Vec<&str> = wa
        .workflow
        .triggers
        .iter()
        .filter(|t| analyzer.catalog.external_triggers.contains(t.as_str()))
        .map(String::as_str)
        .collect();
    if !external.is_empty() {
        out.push(
            Finding::new(
                &TRIGGER_BROAD,
                Location::workflow(&file),
                format!(
                    "workflow with {count} secret(s) runs on externally initiable event(s): {}",
                    external.join(", ")
                ),
            )
            .with(
                "secrets",
                secrets.iter().copied().collect::<Vec<_>>().join(","),
            )
            .with("triggers", external.join(",")),
        );
    }
}

fn usage_rules(usage: &ResolvedUsage, analyzer: &Analyzer, out: &mut Vec<Finding>) {
    let loc = &usage.usage.location;
    let raw = &usage.usage.raw_uses;
    let parsed = match &usage.parsed {
        Ok(parsed) => parsed,
        Err(e) => {
            out.push(
                Finding::new(
                    &REF_INVALID,
                    loc.clone(),
                    format!("`{raw}` is not a valid reference: {e}"),
                )
                .with("uses", raw),
            );
            return;
        }
    };
    match &parsed.form {
        RefForm::Repository(r) => {
            let meta = analyzer.metadata.lookup(r);
            repository_rules(usage, r, meta, analyzer, out);
        }
        RefForm::DockerImage(img) => {
            if !img.is_digest_pinned() {
                out.push(
                    Finding::new(
                        &DOCKER_SOURCE,
                        loc.clone(),
                        format!("Docker image `{raw}` is not pinned by digest"),
                    )
                    .with("image", docker_label(img))
                    .with("tag", img.tag_or_digest.as_deref().unwrap_or("latest")),
                );
            }
        }
        RefForm::LocalPath(_) => {}
    }
}

fn docker_label(img: &DockerImageRef) -> String {
    match &img.registry {
        Some(reg) => format!("{reg}/{}", img.image),
        None => img.image.clone(),
    }
}

fn repository_rules(
    usage: &ResolvedUsage,
    r: &RepositoryRef,
    meta: Option<&ScriptMetadata>,
    analyzer: &Analyzer,
    out: &mut Vec<Finding>,
) {
    let loc = &usage.usage.location;
    let raw = &usage.usage.raw_uses;
    let kind = usage.kind.unwrap_or(RefKind::Unresolved);
    let verified = analyzer.is_verified(r);

    match kind {
        RefKind::Tag | RefKind::Branch => out.push(
            Finding::new(
                &REF_MUTABLE,
                loc.clone(),
                format!(
                    "`{raw}` follows mutable {} `{}`; pin a full commit hash",
                    kind, r.git_ref
                ),
            )
            .with("ref", &r.git_ref)
            .with("ref_kind", kind),
        ),
        RefKind::Unresolved if !is_full_commit_hash(&r.git_ref) => out.push(
            Finding::new(
                &REF_MUTABLE,
                loc.clone(),
                format!(
                    "`{raw}` follows mutable ref `{}`; pin a full commit hash",
                    r.git_ref
                ),
            )
            .with("ref", &r.git_ref)
            .with("ref_kind", kind),
        ),
        RefKind::Invalid => out.push(
            Finding::new(
                &REF_INVALID,
                loc.clone(),
                format!(
                    "`{raw}` names no tag, branch or commit of {}",
                    r.script_id()
                ),
            )
            .with("ref", &r.git_ref)
            .with("uses", raw),
        ),
        _ => {}
    }

    if let Some(lag) = usage
        .lag
        .as_ref()
        .filter(|l| l.status == LagStatus::Outdated)
    {
        let severity = if lag.lag_days >= STALE_MEDIUM_DAYS {
            Some(Severity::Medium)
        } else if lag.lag_days >= STALE_LOW_DAYS {
            Some(Severity::Low)
        } else {
            None
        };
        if let Some(severity) = severity {
            let mut f = Finding::new(
                &STALE,
                loc.clone(),
                format!(
                    "`{raw}` is {} days behind a newer release of {}",
                    lag.lag_days,
                    r.script_id()
                ),
            )
            .severity(severity)
            .with("lag_days", lag.lag_days);
            if let Some(d) = lag.first_newer_release_date {
                f = f.with("first_newer_release", d.format("%Y-%m-%d"));
            }
            if let Some(newest) = meta.and_then(|m| m.newest_release()) {
                f = f.with("newest_release", &newest.tag);
            }
            out.push(f);
        }
    }

    if let Some(Runtime::Docker(image)) = meta.map(|m| &m.runtime) {
        // A `Dockerfile` image is built from the script's own source at the
        // referenced revision; only registry images can move underneath it.
        let mutable_image = match crate::script_ref::parse_uses(image).map(|s| s.form) {
            Ok(RefForm::DockerImage(img)) => !img.is_digest_pinned(),
            _ => image.starts_with("docker://"),
        };
        if mutable_image || !verified {
            let mut why = Vec::new();
            if mutable_image {
                why.push("image is not pinned by digest");
            }
            if !verified {
                why.push("creator is not verified");
            }
            out.push(
                Finding::new(
                    &DOCKER_SOURCE,
                    loc.clone(),
                    format!("`{raw}` runs a Docker image: {}", why.join("; ")),
                )
                .with("creator", r.creator())
                .with("image", image)
                .with("verified_creator", verified),
            );
        }
    }

    if !verified {
        let categories = analyzer.categories(r);
        let sensitive: Vec<&str> = [ARTIFACT_RELEASE, DEPLOYMENT]
            .into_iter()
            .filter(|c| categories.contains(*c))
            .collect();
        if !sensitive.is_empty() {
            out.push(
                Finding::new(
                    &SENSITIVE_UNVERIFIED,
                    loc.clone(),
                    format!(
                        "`{raw}` performs {} but its creator `{}` is not verified",
                        sensitive.join(" and "),
                        r.creator()
                    ),
                )
                .with("categories", sensitive.join(","))
                .with("creator", r.creator()),
            );
        }
    }
}
