//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use pipewarden_core::advisory::{AdvisoryDb, AffectedRange};
use pipewarden_core::analysis::{Analyzer, RepoAnalysis};
use pipewarden_core::catalog::Catalog;
use pipewarden_core::metadata::{MetadataStore, Release, Runtime, ScriptMetadata};
use pipewarden_core::model::{
    extract_credentials, extract_script_usages, parse_workflow, CredentialScope, Location,
};
use pipewarden_core::script_ref::{
    classify_ref, compare_versions, RefKind, RepositoryRef, VersionKey,
};
use pipewarden_core::staleness::{compute_repo_lag, compute_usage_lag, LagStatus, UsageLag};
use pipewarden_core::stats::{aggregate_corpus, CorpusStats};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AS_OF: &str = "2022-06-01T00:00:00Z";

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn pipewarden(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipewarden"))
        .args(args)
        .current_dir(workspace())
        .output()
        .expect("binary runs")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn at(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().to_utc()
}

fn snapshot_analyzer() -> Analyzer {
    Analyzer::new(
        MetadataStore::load(workspace().join("fixtures/snapshot.json")).unwrap(),
        AdvisoryDb::bundled(),
        Catalog::bundled(),
        at(AS_OF),
    )
}

fn example_workflow_parse() -> Outcome {
    let path = workspace().join("fixtures/super-linter/.github/workflows/lint.yml");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let wf = parse_workflow(&text, "lint.yml").map_err(|e| e.to_string())?;
    let usages: Vec<_> = extract_script_usages(&wf)
        .into_iter()
        .map(|u| u.raw_uses)
        .collect();
    let creds = extract_credentials(&wf);
    let elapsed = start.elapsed();

    ensure(wf.jobs.len() == 1, format!("{} jobs", wf.jobs.len()))?;
    ensure(
        usages == ["actions/checkout@v2", "github/super-linter@v3"],
        format!("usages {usages:?}"),
    )?;
    ensure(creds.len() == 1, format!("{} credentials", creds.len()))?;
    ensure(
        creds[0].secret_name == "GITHUB_TOKEN",
        creds[0].secret_name.clone(),
    )?;
    ensure(
        creds[0].scope == CredentialScope::StepEnv && creds[0].location.step.is_some(),
        format!("scope {:?} at {:?}", creds[0].scope, creds[0].location),
    )?;
    ensure(
        elapsed < Duration::from_secs(1),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "1 job, 2 usages, GITHUB_TOKEN at step scope in {elapsed:?}"
    ))
}

fn advisory_fidelity() -> Outcome {
    let expected = [
        (
            "CVE-2020-14188",
            "atlassian/gajira-create",
            9.8,
            "Remote Code Execution",
            true,
        ),
        (
            "CVE-2020-14189",
            "atlassian/gajira-comment",
            9.8,
            "Remote Code Execution",
            true,
        ),
        (
            "CVE-2020-15272",
            "ericcornelissen/git-tag-annotation-action",
            9.6,
            "OS Command Injection",
            false,
        ),
        (
            "CVE-2021-32074",
            "hashicorp/vault-action",
            7.5,
            "Credential Leakage",
            true,
        ),
        (
            "CVE-2021-32638",
            "github/codeql-action",
            4.4,
            "Credential Leakage",
            true,
        ),
        (
            "CVE-2021-32724",
            "check-spelling/check-spelling",
            9.9,
            "Credential Leakage",
            false,
        ),
    ];
    let db = AdvisoryDb::bundled();
    let round_trip = AdvisoryDb::from_json(&db.to_json()).map_err(|e| e.to_string())?;
    ensure(round_trip == db, "round trip changed the database")?;
    ensure(db.len() == 6, format!("{} records", db.len()))?;
    let mut actual: Vec<_> = db
        .iter()
        .map(|a| {
            (
                a.id.as_str(),
                a.slug.as_str(),
                a.cvss,
                a.impact.as_str(),
                a.verified_creator,
            )
        })
        .collect();
    actual.sort_by(|a, b| a.0.cmp(b.0));
    ensure(actual == expected, format!("records {actual:?}"))?;
    for a in db.iter() {
        ensure(
            matches!(
                &a.range,
                AffectedRange::FixedIn(_) | AffectedRange::LastVulnerable(_)
            ),
            format!("{} has no range", a.id),
        )?;
    }
    Ok("6 records round-trip and match".into())
}

fn unfixed_usage_detection() -> Outcome {
    let root = workspace().join("fixtures/vuln15");
    let mut targets: Vec<String> = std::fs::read_dir(&root)
        .map_err(|e| e.to_string())?
        .map(|e| {
            format!(
                "fixtures/vuln15/{}",
                e.unwrap().file_name().to_string_lossy()
            )
        })
        .collect();
    targets.sort();
    ensure(
        targets.len() == 15,
        format!("{} repos in fixture", targets.len()),
    )?;

    let start = Instant::now();
    let mut args = vec!["scan"];
    args.extend(targets.iter().map(String::as_str));
    args.extend([
        "--metadata",
        "fixtures/snapshot.json",
        "--as-of",
        AS_OF,
        "--fail-on",
        "critical",
    ]);
    let out = pipewarden(&args);
    let elapsed = start.elapsed();
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).map_err(|e| format!("report: {e}"))?;

    let mut hits: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in report["findings"].as_array().unwrap() {
        if f["rule_id"] != "R-VULN-KNOWN" {
            continue;
        }
        let file = f["location"]["file"].as_str().unwrap();
        let repo = file.split('/').nth(2).unwrap_or_default().to_string();
        hits.entry(repo).or_default().push(
            f["evidence"]["advisory"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
        );
    }
    let expected: BTreeMap<String, Vec<String>> = [
        ("v1-check-spelling", "CVE-2021-32724"),
        ("v2-codeql", "CVE-2021-32638"),
        ("v3-vault", "CVE-2021-32074"),
        ("v4-gajira-comment", "CVE-2020-14189"),
        ("v5-gajira-create", "CVE-2020-14188"),
    ]
    .into_iter()
    .map(|(repo, id)| (repo.to_string(), vec![id.to_string()]))
    .collect();
    ensure(hits == expected, format!("findings by repo {hits:?}"))?;
    ensure(
        elapsed < Duration::from_secs(5),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "5 findings in the 5 vulnerable repos in {elapsed:?}"
    ))
}

/// Reference ordering: numeric prefix rendered as fixed-width decimal
/// strings, padded with zero components, compared as text.
fn reference_key(tag: &str, width: usize) -> String {
    let body = tag.strip_prefix(['v', 'V']).unwrap_or(tag);
    let mut parts = Vec::new();
    for piece in body.split('.') {
        let digits: String = piece.chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            break;
        }
        parts.push(format!("{digits:0>12}"));
        if digits.len() != piece.len() {
            break;
        }
    }
    while parts.len() < width {
        parts.push("0".repeat(12));
    }
    parts.join(".")
}

fn random_tag(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=4);
    let nums: Vec<String> = (0..n)
        .map(|_| rng.gen_range(0..25u32).to_string())
        .collect();
    let suffixes = ["-beta", "-rc.1", "rc2", "-alpha.3", "+build", "a"];
    match rng.gen_range(0..4) {
        0 => nums.join("."),
        1 => format!("v{}", nums.join(".")),
        2 => format!("{}{}", ["", "v", "V"][rng.gen_range(0..3)], nums[0]),
        _ => format!(
            "{}{}{}",
            ["", "v"][rng.gen_range(0..2)],
            nums.join("."),
            suffixes.choose(rng).unwrap()
        ),
    }
}

fn version_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pairs = 0usize;
    while pairs < 10_000 {
        let size = rng.gen_range(2..=8);
        let tags: Vec<String> = (0..size).map(|_| random_tag(&mut rng)).collect();
        for a in &tags {
            for b in &tags {
                let ours = compare_versions(&VersionKey::parse(a), &VersionKey::parse(b));
                let reference = reference_key(a, 4).cmp(&reference_key(b, 4));
                ensure(
                    ours == reference,
                    format!("{a} vs {b}: {ours:?} != {reference:?}"),
                )?;
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} ordered pairs agree"))
}

fn release(tag: &str, date: DateTime<Utc>, n: u64) -> Release {
    Release {
        tag: tag.into(),
        date,
        commit: Some(format!("{n:040x}")),
    }
}

fn meta_with(releases: Vec<Release>, branches: &[&str]) -> ScriptMetadata {
    ScriptMetadata {
        slug: "o/r".into(),
        creator: "o".into(),
        verified: false,
        default_branch: "main".into(),
        branches: branches.iter().map(|b| b.to_string()).collect(),
        releases,
        runtime: Runtime::NodeJs("16".into()),
        categories: BTreeSet::new(),
    }
}

fn repo_ref(git_ref: &str) -> RepositoryRef {
    RepositoryRef {
        owner: "o".into(),
        repo: "r".into(),
        subpath: None,
        git_ref: git_ref.into(),
    }
}

fn lag_arithmetic() -> Outcome {
    let meta = meta_with(
        vec![
            release("v1", at("2020-01-01T00:00:00Z"), 1),
            release("v2", at("2020-06-01T00:00:00Z"), 2),
            release("v3", at("2021-01-01T00:00:00Z"), 3),
        ],
        &["main"],
    );
    let as_of = at("2021-03-01T00:00:00Z");
    let lags: Vec<UsageLag> = ["v1", "v2", "v3"]
        .iter()
        .enumerate()
        .map(|(i, tag)| {
            compute_usage_lag(
                &Location::step("w.yml", "j", i),
                &repo_ref(tag),
                RefKind::Tag,
                Some(&meta),
                as_of,
            )
        })
        .collect();
    let days: Vec<u64> = lags.iter().map(|l| l.lag_days).collect();
    ensure(days == [273, 59, 0], format!("usage lags {days:?}"))?;
    let repo = compute_repo_lag("r", &lags);
    ensure(
        repo.max_lag_days == 273,
        format!("repo lag {}", repo.max_lag_days),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let epoch = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
    for case in 0..1_000 {
        let n = rng.gen_range(1..=8);
        let mut majors: Vec<u64> = (1..=20).collect();
        majors.shuffle(&mut rng);
        let releases: Vec<Release> = majors[..n]
            .iter()
            .map(|m| {
                let date = epoch + chrono::Duration::days(rng.gen_range(0..1500));
                release(&format!("v{m}"), date, *m)
            })
            .collect();
        let meta = meta_with(releases.clone(), &[]);
        let as_of = epoch + chrono::Duration::days(rng.gen_range(0..1800));
        let later = as_of + chrono::Duration::days(rng.gen_range(0..400));
        let mut usage_lags = Vec::new();
        for (i, rel) in releases.iter().enumerate() {
            let r = repo_ref(&rel.tag);
            let loc = Location::step("w.yml", "j", i);
            let now = compute_usage_lag(&loc, &r, RefKind::Tag, Some(&meta), as_of);
            let then = compute_usage_lag(&loc, &r, RefKind::Tag, Some(&meta), later);
            ensure(
                then.lag_days >= now.lag_days,
                format!(
                    "case {case}: {} lag fell from {} to {}",
                    rel.tag, now.lag_days, then.lag_days
                ),
            )?;
            // independent lag: earliest published strictly newer release
            let expected = releases
                .iter()
                .filter(|o| {
                    o.date <= as_of
                        && VersionKey::parse(&o.tag).numeric_components[0]
                            > VersionKey::parse(&rel.tag).numeric_components[0]
                })
                .map(|o| o.date)
                .min()
                .map_or(0, |d| (as_of - d).num_days().max(0) as u64);
            ensure(
                now.lag_days == expected,
                format!(
                    "case {case}: {} lag {} != {expected}",
                    rel.tag, now.lag_days
                ),
            )?;
            usage_lags.push(now);
        }
        let max = compute_repo_lag("r", &usage_lags).max_lag_days;
        let expected_max = usage_lags
            .iter()
            .filter(|l| l.status == LagStatus::Outdated)
            .map(|l| l.lag_days)
            .max()
            .unwrap_or(0);
        ensure(
            max == expected_max,
            format!("case {case}: repo lag {max} != {expected_max}"),
        )?;
        for k in 1..usage_lags.len() {
            let prefix = compute_repo_lag("r", &usage_lags[..k]).max_lag_days;
            let grown = compute_repo_lag("r", &usage_lags[..=k]).max_lag_days;
            ensure(grown >= prefix, format!("case {case}: repo max decreased"))?;
        }
    }
    Ok("273/59/0, repo 273; 1000 random instances hold".into())
}

fn ref_kind_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hex = |rng: &mut ChaCha8Rng, n: usize| -> String {
        (0..n)
            .map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap())
            .collect()
    };
    let mut counts: BTreeMap<RefKind, usize> = BTreeMap::new();
    for case in 0..500 {
        let tags: Vec<String> = (0..rng.gen_range(0..5))
            .map(|i| format!("v{}.{}", i + 1, rng.gen_range(0..9)))
            .collect();
        let mut releases: Vec<Release> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| release(t, at("2021-01-01T00:00:00Z"), i as u64))
            .collect();
        // occasionally a tag that is itself 40 hex characters
        if rng.gen_bool(0.05) {
            releases.push(release(&hex(&mut rng, 40), at("2021-02-01T00:00:00Z"), 99));
        }
        let meta = meta_with(releases.clone(), &["main", "develop"]);
        let git_ref = match rng.gen_range(0..7) {
            0 if !releases.is_empty() => releases.choose(&mut rng).unwrap().tag.clone(),
            1 => hex(&mut rng, 40),
            2 => ["main", "develop"][rng.gen_range(0..2)].to_string(),
            3 => {
                let len = rng.gen_range(7..40);
                hex(&mut rng, len)
            }
            4 => String::new(),
            5 => format!("feature-{}", rng.gen_range(0..100)),
            _ => format!("v{}", rng.gen_range(0..9)),
        };
        let with_meta = rng.gen_bool(0.8);
        let kind = classify_ref(&repo_ref(&git_ref), with_meta.then_some(&meta));
        *counts.entry(kind).or_default() += 1;
        // exactly one kind: the result is a single enum value, so check it
        // agrees with every decidable membership fact
        let is_40_hex = git_ref.len() == 40
            && git_ref
                .bytes()
                .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase());
        if is_40_hex {
            ensure(
                kind == RefKind::CommitHash,
                format!("case {case}: `{git_ref}` -> {kind}"),
            )?;
        } else if git_ref.is_empty() {
            ensure(
                kind == RefKind::Invalid,
                format!("case {case}: empty ref -> {kind}"),
            )?;
        } else if !with_meta {
            ensure(
                kind == RefKind::Unresolved,
                format!("case {case}: `{git_ref}` -> {kind}"),
            )?;
        } else if releases.iter().any(|r| r.tag == git_ref) {
            ensure(
                kind == RefKind::Tag,
                format!("case {case}: tag `{git_ref}` -> {kind}"),
            )?;
        } else if ["main", "develop"].contains(&git_ref.as_str()) {
            ensure(
                kind == RefKind::Branch,
                format!("case {case}: branch `{git_ref}` -> {kind}"),
            )?;
        } else {
            ensure(
                matches!(kind, RefKind::CommitHash | RefKind::Invalid),
                format!("case {case}: `{git_ref}` -> {kind}"),
            )?;
        }
    }
    Ok(format!("500 cases classified consistently {counts:?}"))
}

fn analyze_corpus10(analyzer: &Analyzer) -> Vec<RepoAnalysis> {
    let root = workspace().join("fixtures/corpus10");
    let mut names: Vec<String> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
        .iter()
        .map(|n| analyzer.analyze_repo(&root.join(n), n).unwrap())
        .collect()
}

fn corpus_merge_law() -> Outcome {
    let analyzer = snapshot_analyzer();
    let repos = analyze_corpus10(&analyzer);
    ensure(repos.len() == 10, format!("{} repos", repos.len()))?;
    let whole = aggregate_corpus(&repos, &analyzer);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for split in 0..50 {
        let mut shuffled: Vec<&RepoAnalysis> = repos.iter().collect();
        shuffled.shuffle(&mut rng);
        let cut = rng.gen_range(0..=shuffled.len());
        let left = aggregate_corpus(shuffled[..cut].iter().copied(), &analyzer);
        let right = aggregate_corpus(shuffled[cut..].iter().copied(), &analyzer);
        let merged: CorpusStats = left.merged(&right);
        ensure(merged == whole, format!("split {split} at {cut} differs"))?;
    }
    Ok("50 random splits merge to the whole".into())
}

fn determinism() -> Outcome {
    let scan = |jobs: &str| {
        pipewarden(&[
            "scan",
            "fixtures/corpus10/r01-node-app",
            "fixtures/corpus10/r02-linted",
            "fixtures/corpus10/r05-pinned",
            "fixtures/corpus10/r09-release",
            "fixtures/corpus10/r10-mixed",
            "fixtures/vuln15/v5-gajira-create",
            "--metadata",
            "fixtures/snapshot.json",
            "--as-of",
            AS_OF,
            "--jobs",
            jobs,
        ])
    };
    let stats = |jobs: &str| {
        pipewarden(&[
            "corpus",
            "stats",
            "fixtures/corpus10",
            "--metadata",
            "fixtures/snapshot.json",
            "--as-of",
            AS_OF,
            "--jobs",
            jobs,
        ])
    };
    let (a, b) = (scan("1"), scan("8"));
    ensure(
        !a.stdout.is_empty(),
        String::from_utf8_lossy(&a.stderr).into_owned(),
    )?;
    ensure(
        a.stdout == b.stdout,
        "scan output differs between --jobs 1 and --jobs 8",
    )?;
    let (a, b) = (stats("1"), stats("8"));
    ensure(
        !a.stdout.is_empty(),
        String::from_utf8_lossy(&a.stderr).into_owned(),
    )?;
    ensure(
        a.stdout == b.stdout,
        "stats output differs between --jobs 1 and --jobs 8",
    )?;
    Ok("scan and stats are byte-identical across --jobs 1/8".into())
}

fn offline_guarantee() -> Outcome {
    // Inside the namespace, ancestors of the workspace may not be
    // traversable, so name the binary relative to the working directory.
    let staged = tempfile::tempdir().unwrap();
    let bin = match Path::new(env!("CARGO_BIN_EXE_pipewarden")).strip_prefix(workspace()) {
        Ok(rel) => Path::new(".").join(rel),
        Err(_) => {
            let copy = staged.path().join("pipewarden");
            std::fs::copy(env!("CARGO_BIN_EXE_pipewarden"), &copy).unwrap();
            copy
        }
    };
    let probe = Command::new("unshare")
        .args(["-rn"])
        .arg(&bin)
        .arg("version")
        .current_dir(workspace())
        .output();
    let isolated = matches!(probe, Ok(o) if o.status.success());
    let run = |args: &[&str]| -> Output {
        let mut cmd = if isolated {
            let mut c = Command::new("unshare");
            c.arg("-rn").arg(&bin);
            c
        } else {
            // no network namespace available: point every proxy at a dead port
            let mut c = Command::new(&bin);
            for var in [
                "HTTP_PROXY",
                "HTTPS_PROXY",
                "ALL_PROXY",
                "http_proxy",
                "https_proxy",
                "all_proxy",
            ] {
                c.env(var, "http://127.0.0.1:9");
            }
            c
        };
        cmd.args(args)
            .current_dir(workspace())
            .output()
            .expect("binary runs")
    };
    let scan = run(&[
        "scan",
        "fixtures/super-linter",
        "--metadata",
        "fixtures/snapshot.json",
        "--as-of",
        AS_OF,
        "--offline",
    ]);
    ensure(
        scan.status.code() == Some(0),
        format!(
            "scan exit {:?}: {}",
            scan.status.code(),
            String::from_utf8_lossy(&scan.stderr).trim()
        ),
    )?;
    let golden = std::fs::read(workspace().join("fixtures/golden/super-linter.scan.json")).unwrap();
    let plain = run(&[
        "scan",
        "fixtures/super-linter",
        "--as-of",
        AS_OF,
        "--offline",
    ]);
    ensure(plain.stdout == golden, "offline scan differs from golden")?;
    let vuln = run(&[
        "scan",
        "fixtures/vuln15/v3-vault",
        "--metadata",
        "fixtures/snapshot.json",
        "--as-of",
        AS_OF,
        "--offline",
    ]);
    ensure(
        vuln.status.code() == Some(1),
        format!("vulnerable scan exit {:?}", vuln.status.code()),
    )?;
    let stats = run(&[
        "corpus",
        "stats",
        "fixtures/corpus10",
        "--metadata",
        "fixtures/snapshot.json",
        "--as-of",
        AS_OF,
        "--offline",
    ]);
    let golden = std::fs::read(workspace().join("fixtures/golden/corpus10.stats.json")).unwrap();
    ensure(stats.stdout == golden, "offline stats differ from golden")?;
    let how = if isolated {
        "network namespace"
    } else {
        "dead proxies"
    };
    Ok(format!(
        "scan and corpus stats match goldens with networking disabled ({how})"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 workflow golden parse", example_workflow_parse),
        ("2 advisory fidelity", advisory_fidelity),
        ("3 unfixed-usage detection", unfixed_usage_detection),
        ("4 version-order oracle", version_oracle),
        ("5 lag arithmetic", lag_arithmetic),
        ("6 ref-kind partition", ref_kind_partition),
        ("7 corpus merge law", corpus_merge_law),
        ("8 determinism", determinism),
        ("9 offline guarantee", offline_guarantee),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS criterion {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {name}: panicked");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
