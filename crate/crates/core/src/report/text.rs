use std::fmt::Write;

use super::{percent, ScanReport, LEGEND};
use crate::rules::{AttackSurface, Severity};
use crate::stats::CorpusStats;

pub(super) fn findings(report: &ScanReport) -> String {
    let mut out = String::new();
    if let Some(tool) = &report.tool {
        let _ = writeln!(out, "{} {}", tool.name, tool.version);
    }
    let rows: Vec<[String; 5]> = report
        .findings
        .iter()
        .map(|f| {
            [
                f.severity.as_str().to_uppercase(),
                f.attack_surface.as_str().to_string(),
                f.rule_id.clone(),
                f.location.to_string(),
                f.message.clone(),
            ]
        })
        .collect();
    let header = ["SEVERITY", "SURFACE", "RULE", "LOCATION", "MESSAGE"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    if !rows.is_empty() {
        for row in std::iter::once(&header).chain(&rows) {
            let mut line = String::new();
            for (i, cell) in row.iter().enumerate() {
                if i + 1 == row.len() {
                    line.push_str(cell);
                } else {
                    let _ = write!(line, "{:<width$}  ", cell, width = widths[i]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    for d in report.diagnostics {
        let _ = writeln!(out, "parse error: {}: {}", d.file, d.error);
    }
    let mut parts = Vec::new();
    for sev in Severity::ALL.into_iter().rev() {
        let n = report.findings.iter().filter(|f| f.severity == sev).count();
        if n > 0 {
            parts.push(format!("{n} {sev}"));
        }
    }
    let _ = write!(out, "{} finding(s)", report.findings.len());
    if !parts.is_empty() {
        let _ = write!(out, ": {}", parts.join(", "));
    }
    out.push('\n');
    let surfaces: Vec<String> = AttackSurface::ALL
        .into_iter()
        .filter(|s| *s != AttackSurface::None)
        .map(|s| {
            let n = report
                .findings
                .iter()
                .filter(|f| f.attack_surface == s)
                .count();
            format!("{} {n}", s.as_str())
        })
        .collect();
    if !report.findings.is_empty() {
        let _ = writeln!(out, "attack surface: {}", surfaces.join(", "));
    }
    out
}

pub(super) fn stats(s: &CorpusStats, top_n: usize) -> String {
    let repos = s.repo_count;
    let mut out = String::new();
    let _ = writeln!(out, "repositories        {repos}");
    let _ = writeln!(out, "workflows           {}", s.workflow_count);
    let _ = writeln!(out, "script usages       {}", s.usage_count);
    let _ = writeln!(out, "docker image uses   {}", s.docker_image_usages);
    let _ = writeln!(out, "local action uses   {}", s.local_usages);
    let _ = writeln!(out, "distinct scripts    {}", s.distinct_scripts());
    let _ = writeln!(out, "distinct creators   {}", s.distinct_creators());
    let _ = writeln!(out, "parse failures      {}", s.parse_failures);
    for f in &s.parse_failure_files {
        let _ = writeln!(out, "  {f}");
    }

    let _ = writeln!(out, "\nruntime          scripts  repos  %repos");
    let scripts = s.runtime_scripts();
    for (bucket, n) in &s.runtime_repos {
        let _ = writeln!(
            out,
            "{:<16} {:>7}  {:>5}  {:>6.2}",
            bucket.as_str(),
            scripts.get(bucket).copied().unwrap_or(0),
            n,
            percent(*n, repos)
        );
    }

    let _ = writeln!(out, "\ntop scripts (% of repositories)");
    for (name, f) in s.top_scripts(top_n) {
        let mark = if f.verified { "verified" } else { "unverified" };
        let _ = writeln!(out, "  {name:<40} {:>6.2}  {mark}", percent(f.repos, repos));
    }
    for (label, verified) in [("verified", true), ("unverified", false)] {
        let _ = writeln!(out, "\ntop {label} creators (% of repositories)");
        for (name, f) in s.top_creators(verified, top_n) {
            let _ = writeln!(out, "  {name:<40} {:>6.2}", percent(f.repos, repos));
        }
    }
    let _ = writeln!(
        out,
        "repositories using a verified creator's script: {} ({:.2}%); unverified: {} ({:.2}%)",
        s.verified_creator_repos,
        percent(s.verified_creator_repos, repos),
        s.unverified_creator_repos,
        percent(s.unverified_creator_repos, repos)
    );

    let h = &s.credential_histogram;
    let _ = writeln!(out, "\nrepositories by distinct secrets");
    for (label, n) in [
        ("0", h.none),
        ("1", h.one),
        ("2-5", h.two_to_five),
        (">5", h.over_five),
    ] {
        let _ = writeln!(out, "  {label:<4} {n:>5}  {:>6.2}%", percent(n, repos));
    }

    let _ = writeln!(out, "\nrepositories using each ref kind at least once");
    for (kind, n) in &s.ref_kind_repos {
        let _ = writeln!(
            out,
            "  {:<12} {n:>5}  {:>6.2}%",
            kind.as_str(),
            percent(*n, repos)
        );
    }

    let _ = writeln!(out, "\nrepositories with sensitive operations");
    for (cat, n) in &s.sensitive_repos {
        let _ = writeln!(out, "  {cat:<17} {n:>5}  {:>6.2}%", percent(*n, repos));
    }

    let _ = writeln!(out, "\nupdate lag           usages  repos");
    let labels = ["< 1 month", "1-3 months", "3-12 months", "> 12 months"];
    for ((label, u), r) in labels
        .iter()
        .zip(s.usage_lags.as_array())
        .zip(s.repo_lags.as_array())
    {
        let _ = writeln!(out, "  {label:<18} {u:>6}  {r:>5}");
    }
    match s.mean_lag_days() {
        Some(d) => {
            let _ = writeln!(
                out,
                "mean usage lag: {:.2} days ({:.2} months)",
                d,
                d / 30.0
            );
        }
        None => {
            let _ = writeln!(out, "mean usage lag: n/a");
        }
    }

    let _ = writeln!(
        out,
        "\nvulnerable repositories: {} ({} usages)",
        s.vulnerable_repos.len(),
        s.vulnerable_usages
    );
    for (repo, ids) in &s.vulnerable_repos {
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let _ = writeln!(out, "  {repo}: {}", ids.join(", "));
    }
    let _ = writeln!(out, "\nlegend: {LEGEND}");
    out
}
