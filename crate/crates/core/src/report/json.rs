use serde_json::{json, Map, Value};

use super::{percent, ScanReport, LEGEND};
use crate::rules::{AttackSurface, Finding, Severity};
use crate::stats::CorpusStats;

fn finding_value(f: &Finding) -> Value {
    json!({
        "rule_id": f.rule_id,
        "severity": f.severity.as_str(),
        "attack_surface": f.attack_surface.as_str(),
        "location": {
            "file": f.location.file,
            "job": f.location.job,
            "step": f.location.step,
        },
        "message": f.message,
        "evidence": f.evidence,
    })
}

/// Findings report. Keys are emitted in sorted order; per-severity and
/// per-surface counts list only non-zero entries, and surface `none` is
/// not counted.
pub fn findings_json(report: &ScanReport) -> Value {
    let mut summary = Map::new();
    summary.insert("total".into(), json!(report.findings.len()));
    let mut by_severity = Map::new();
    for sev in Severity::ALL.into_iter().rev() {
        let n = report.findings.iter().filter(|f| f.severity == sev).count();
        if n > 0 {
            by_severity.insert(sev.as_str().into(), json!(n));
        }
    }
    let mut by_surface = Map::new();
    for surface in AttackSurface::ALL {
        if surface == AttackSurface::None {
            continue;
        }
        let n = report
            .findings
            .iter()
            .filter(|f| f.attack_surface == surface)
            .count();
        if n > 0 {
            by_surface.insert(surface.as_str().into(), json!(n));
        }
    }
    if !by_severity.is_empty() {
        summary.insert("by_severity".into(), Value::Object(by_severity));
    }
    if !by_surface.is_empty() {
        summary.insert("by_surface".into(), Value::Object(by_surface));
    }

    let mut root = Map::new();
    root.insert(
        "findings".into(),
        Value::Array(report.findings.iter().map(finding_value).collect()),
    );
    root.insert("summary".into(), Value::Object(summary));
    if !report.diagnostics.is_empty() {
        root.insert("diagnostics".into(), json!(report.diagnostics));
    }
    if let Some(tool) = &report.tool {
        root.insert(
            "tool".into(),
            json!({"name": tool.name, "version": tool.version}),
        );
    }
    Value::Object(root)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Raw statistics one-to-one, plus a `derived` object with ratios and
/// rankings computed from them.
pub fn stats_json(stats: &CorpusStats, top_n: usize) -> Value {
    let repos = stats.repo_count;
    let mut root = serde_json::to_value(stats).expect("stats serialize");

    let top_scripts: Vec<Value> = stats
        .top_scripts(top_n)
        .into_iter()
        .map(|(name, f)| {
            json!({
                "script": name,
                "repos": f.repos,
                "percent_of_repos": percent(f.repos, repos),
                "creator": f.creator,
                "verified": f.verified,
                "runtime": f.runtime,
            })
        })
        .collect();
    let creators = |verified| -> Vec<Value> {
        stats
            .top_creators(verified, top_n)
            .into_iter()
            .map(|(name, f)| {
                json!({
                    "creator": name,
                    "repos": f.repos,
                    "percent_of_repos": percent(f.repos, repos),
                    "scripts": f.scripts.len(),
                })
            })
            .collect()
    };
    let ratio_map = |m: Map<String, Value>| -> Value {
        Value::Object(
            m.into_iter()
                .map(|(k, v)| (k, json!(percent(v.as_u64().unwrap_or(0), repos))))
                .collect(),
        )
    };
    let as_map = |v: Value| match v {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    let h = &stats.credential_histogram;

    let derived = json!({
        "distinct_scripts": stats.distinct_scripts(),
        "distinct_creators": stats.distinct_creators(),
        "runtime_scripts": stats.runtime_scripts(),
        "runtime_repo_percent": ratio_map(as_map(json!(stats.runtime_repos))),
        "top_scripts": top_scripts,
        "top_verified_creators": creators(true),
        "top_unverified_creators": creators(false),
        "verified_creator_repo_percent": percent(stats.verified_creator_repos, repos),
        "unverified_creator_repo_percent": percent(stats.unverified_creator_repos, repos),
        "credential_repo_percent": {
            "none": percent(h.none, repos),
            "one": percent(h.one, repos),
            "two_to_five": percent(h.two_to_five, repos),
            "over_five": percent(h.over_five, repos),
            "at_least_one": percent(h.one + h.two_to_five + h.over_five, repos),
        },
        "ref_kind_repo_percent": ratio_map(as_map(json!(stats.ref_kind_repos))),
        "sensitive_repo_percent": ratio_map(as_map(json!(stats.sensitive_repos))),
        "mean_usage_lag_days": stats.mean_lag_days().map(round2),
        "mean_usage_lag_months": stats.mean_lag_days().map(|d| round2(d / 30.0)),
        "vulnerable_repo_count": stats.vulnerable_repos.len(),
        "advisory_repos": stats.advisory_repos(),
        "legend": LEGEND,
    });
    if let Value::Object(m) = &mut root {
        m.insert("derived".into(), derived);
    }
    root
}
