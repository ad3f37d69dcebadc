use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::Utc;
use pipewarden_core::advisory::AdvisoryDb;
use pipewarden_core::analysis::{discover_workflows, Analyzer, LagClock, RepoAnalysis};
use pipewarden_core::catalog::Catalog;
use pipewarden_core::metadata::fetch::{fetch_to_snapshot, FetchOptions, TOKEN_ENV};
use pipewarden_core::metadata::MetadataStore;
use pipewarden_core::model::{extract_script_usages, parse_workflow_bytes};
use pipewarden_core::report::{render_findings, render_stats, ScanReport, ToolInfo};
use pipewarden_core::rules::{evaluate_rules, sort_findings};
use pipewarden_core::script_ref::{parse_uses, RefForm};
use pipewarden_core::stats::CorpusStats;
use rayon::prelude::*;

use crate::cli::{AnalysisArgs, FetchArgs, ScanArgs, StatsArgs};
use crate::{UsageError, EXIT_FINDINGS, EXIT_OK, EXIT_PARSE_FAILURE};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn build_analyzer(args: &AnalysisArgs) -> Result<Analyzer> {
    let metadata = match &args.metadata {
        Some(path) => MetadataStore::load(path).map_err(|e| usage(e.to_string()))?,
        None => MetadataStore::new(),
    };
    let advisories = match &args.advisories {
        Some(path) => AdvisoryDb::load(path).map_err(|e| usage(e.to_string()))?,
        None => AdvisoryDb::bundled(),
    };
    let mut catalog = Catalog::bundled();
    if let Some(path) = &args.categories {
        catalog = catalog
            .with_categories_file(path)
            .map_err(|e| usage(e.to_string()))?;
    }
    if let Some(path) = &args.verified_creators {
        catalog = catalog
            .with_verified_creators_file(path)
            .map_err(|e| usage(e.to_string()))?;
    }
    if let Some(path) = &args.triggers {
        catalog = catalog
            .with_triggers_file(path)
            .map_err(|e| usage(e.to_string()))?;
    }
    let analysis_time = args.as_of.unwrap_or_else(Utc::now);
    let clock = if args.config_mtime {
        LagClock::FileMtime
    } else {
        LagClock::AnalysisTime
    };
    Ok(Analyzer::new(metadata, advisories, catalog, analysis_time).with_lag_clock(clock))
}

fn thread_pool(jobs: Option<u16>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n as usize);
    }
    Ok(builder.build()?)
}

/// Analyses each `(root, label)` in parallel; results keep input order.
fn analyze_all(
    analyzer: &Analyzer,
    repos: &[(PathBuf, String)],
    jobs: Option<u16>,
) -> Result<Vec<RepoAnalysis>> {
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        repos
            .par_iter()
            .map(|(root, label)| {
                analyzer
                    .analyze_repo(root, label)
                    .with_context(|| format!("reading {}", root.display()))
            })
            .collect()
    })
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Report label for a scan target: the path as given, without `./` or
/// trailing separators; the current directory has an empty label.
fn target_label(path: &Path) -> String {
    let text = path.to_string_lossy().replace('\\', "/");
    let mut label = text.trim_end_matches('/');
    while let Some(rest) = label.strip_prefix("./") {
        label = rest;
    }
    if label == "." {
        String::new()
    } else {
        label.to_string()
    }
}

pub fn scan(args: ScanArgs) -> Result<u8> {
    let analyzer = build_analyzer(&args.analysis)?;
    let mut repos = Vec::new();
    for target in &args.targets {
        if !target.is_dir() {
            return Err(usage(format!(
                "scan target {} is not a directory",
                target.display()
            )));
        }
        repos.push((target.clone(), target_label(target)));
    }
    let analyses = analyze_all(&analyzer, &repos, args.analysis.jobs)?;

    let mut findings: Vec<_> = analyses
        .iter()
        .flat_map(|r| evaluate_rules(r, &analyzer))
        .collect();
    sort_findings(&mut findings);
    let diagnostics: Vec<_> = analyses
        .iter()
        .flat_map(|r| r.parse_failures.iter().cloned())
        .collect();
    for d in &diagnostics {
        eprintln!("parse error: {}: {}", d.file, d.error);
    }
    let report = ScanReport {
        findings: &findings,
        diagnostics: &diagnostics,
        tool: Some(ToolInfo {
            name: "pipewarden".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }),
    };
    emit(
        &render_findings(&report, args.format),
        args.analysis.out.as_deref(),
    )?;

    Ok(if !diagnostics.is_empty() {
        EXIT_PARSE_FAILURE
    } else if findings.iter().any(|f| f.severity >= args.fail_on) {
        EXIT_FINDINGS
    } else {
        EXIT_OK
    })
}

/// Subdirectories of a corpus directory, sorted by name.
fn corpus_repos(dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    if !dir.is_dir() {
        return Err(usage(format!(
            "corpus {} is not a directory",
            dir.display()
        )));
    }
    let mut repos = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            repos.push((entry.path(), name));
        }
    }
    repos.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(repos)
}

pub fn corpus_stats(args: StatsArgs) -> Result<u8> {
    let analyzer = build_analyzer(&args.analysis)?;
    let repos = corpus_repos(&args.dir)?;
    let analyses = analyze_all(&analyzer, &repos, args.analysis.jobs)?;
    let pool = thread_pool(args.analysis.jobs)?;
    let stats = pool.install(|| {
        analyses
            .par_iter()
            .map(|r| CorpusStats::of_repo(r, &analyzer))
            .reduce(CorpusStats::default, |a, b| a.merged(&b))
    });
    for f in &stats.parse_failure_files {
        eprintln!("parse error: {f}");
    }
    let bytes = render_stats(&stats, args.format, args.top).map_err(|e| usage(e.to_string()))?;
    emit(&bytes, args.analysis.out.as_deref())?;
    Ok(EXIT_OK)
}

/// Script slugs referenced by the workflows of a repository, or of every
/// repository directly under a corpus directory.
fn slugs_from_workflows(path: &Path) -> Result<BTreeSet<String>> {
    if !path.is_dir() {
        return Err(usage(format!(
            "--from-scan {} is not a directory",
            path.display()
        )));
    }
    let mut roots = vec![path.to_path_buf()];
    if discover_workflows(path)?.is_empty() {
        roots = corpus_repos(path)?.into_iter().map(|(p, _)| p).collect();
    }
    let mut slugs = BTreeSet::new();
    for root in roots {
        for file in discover_workflows(&root)? {
            let bytes = std::fs::read(&file)?;
            let Ok(wf) = parse_workflow_bytes(&bytes, &file) else {
                continue;
            };
            for usage in extract_script_usages(&wf) {
                if let Ok(RefForm::Repository(r)) = parse_uses(&usage.raw_uses).map(|s| s.form) {
                    slugs.insert(r.slug());
                }
            }
        }
    }
    Ok(slugs)
}

pub fn fetch_metadata(args: FetchArgs) -> Result<u8> {
    if args.offline {
        return Err(usage(
            "fetch-metadata needs the network and cannot run with --offline",
        ));
    }
    let mut slugs: BTreeSet<String> = args
        .scripts
        .iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if let Some(path) = &args.from_scan {
        slugs.extend(slugs_from_workflows(path)?);
    }
    for slug in &slugs {
        if slug.split('/').filter(|p| !p.is_empty()).count() < 2 {
            return Err(usage(format!("`{slug}` is not an owner/repo slug")));
        }
    }
    let opts = FetchOptions {
        api_base: args.api_base.clone(),
        token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        concurrency: args.jobs as usize,
        max_requests_per_second: (args.rate > 0.0).then_some(args.rate),
        ..FetchOptions::default()
    };
    let slugs: Vec<String> = slugs.into_iter().collect();
    let report =
        fetch_to_snapshot(&slugs, &opts, &Catalog::bundled(), &args.out).map_err(|e| match e {
            pipewarden_core::metadata::fetch::FetchError::ExistingSnapshot { .. } => {
                usage(e.to_string())
            }
            other => anyhow::Error::new(other),
        })?;
    eprintln!(
        "fetched {} script(s), {} failed; snapshot written to {}",
        slugs.len() - report.failures.len(),
        report.failures.len(),
        args.out.display()
    );
    for f in &report.failures {
        eprintln!("  {}: {}", f.slug, f.reason);
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(target_label(Path::new(".")), "");
        assert_eq!(target_label(Path::new("./")), "");
        assert_eq!(target_label(Path::new("./repo/")), "repo");
        assert_eq!(target_label(Path::new("a/b")), "a/b");
    }
}
