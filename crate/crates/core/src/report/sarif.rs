use serde_json::{json, Value};

use super::ScanReport;
use crate::rules::{Finding, Severity, RULES};

pub const SARIF_SCHEMA: &str = "https://json.schemastore.org/sarif-2.1.0.json";

fn level(sev: Severity) -> &'static str {
    match sev {
        Severity::Critical | Severity::High => "error",
        Severity::Medium => "warning",
        Severity::Low | Severity::Info => "note",
    }
}

fn result(f: &Finding) -> Value {
    let rule_index = RULES.iter().position(|r| r.id == f.rule_id);
    let mut logical = Vec::new();
    if let Some(job) = &f.location.job {
        let name = match f.location.step {
            Some(step) => format!("jobs.{job}.steps[{step}]"),
            None => format!("jobs.{job}"),
        };
        logical.push(json!({"fullyQualifiedName": name, "kind": "object"}));
    }
    let mut location = json!({
        "physicalLocation": {"artifactLocation": {"uri": f.location.file}},
    });
    if !logical.is_empty() {
        location["logicalLocations"] = Value::Array(logical);
    }
    let mut r = json!({
        "ruleId": f.rule_id,
        "level": level(f.severity),
        "message": {"text": f.message},
        "locations": [location],
        "properties": {
            "severity": f.severity.as_str(),
            "attack_surface": f.attack_surface.as_str(),
            "evidence": f.evidence,
        },
    });
    if let Some(i) = rule_index {
        r["ruleIndex"] = json!(i);
    }
    r
}

/// A single SARIF 2.1.0 run with one rule descriptor per catalog entry.
pub(super) fn findings(report: &ScanReport) -> Value {
    let rules: Vec<Value> = RULES
        .iter()
        .map(|r| {
            json!({
                "id": r.id,
                "name": r.name,
                "shortDescription": {"text": r.description},
                "defaultConfiguration": {"level": level(r.default_severity)},
                "properties": {
                    "attack_surface": r.surface.as_str(),
                    "default_severity": r.default_severity.as_str(),
                },
            })
        })
        .collect();
    let (name, version) = match &report.tool {
        Some(t) => (t.name.clone(), t.version.clone()),
        None => (
            "pipewarden".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
    };
    let notifications: Vec<Value> = report
        .diagnostics
        .iter()
        .map(|d| {
            json!({
                "level": "error",
                "message": {"text": d.error},
                "locations": [{"physicalLocation": {"artifactLocation": {"uri": d.file}}}],
            })
        })
        .collect();
    json!({
        "$schema": SARIF_SCHEMA,
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {"name": name, "version": version, "rules": rules}},
            "results": report.findings.iter().map(result).collect::<Vec<_>>(),
            "invocations": [{
                "executionSuccessful": report.diagnostics.is_empty(),
                "toolExecutionNotifications": notifications,
            }],
        }],
    })
}
