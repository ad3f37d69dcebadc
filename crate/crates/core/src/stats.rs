//! Corpus-level aggregation.
//!
//! [`CorpusStats`] holds only counts and sets, so merging the statistics of
//! disjoint repository sets is exact. Ratios and rankings are derived when a
//! report is rendered.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::analysis::{Analyzer, RepoAnalysis};
use crate::catalog::{ARTIFACT_RELEASE, DEPLOYMENT};
use crate::metadata::{Runtime, RuntimeBucket};
use crate::script_ref::{RefForm, RefKind};
use crate::staleness::LagBuckets;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptFacts {
    pub creator: String,
    pub verified: bool,
    pub runtime: RuntimeBucket,
    pub categories: BTreeSet<String>,
    /// Repositories using the script at least once.
    pub repos: u64,
    pub usages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CreatorFacts {
    pub verified: bool,
    /// Repositories using at least one of the creator's scripts.
    pub repos: u64,
    pub scripts: BTreeSet<String>,
}

/// Repositories by number of distinct secrets passed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CredentialHistogram {
    pub none: u64,
    pub one: u64,
    pub two_to_five: u64,
    pub over_five: u64,
}

impl CredentialHistogram {
    pub fn add(&mut self, distinct_secrets: usize) {
        match distinct_secrets {
            0 => self.none += 1,
            1 => self.one += 1,
            2..=5 => self.two_to_five += 1,
            _ => self.over_five += 1,
        }
    }

    fn merge(&mut self, other: &Self) {
        self.none += other.none;
        self.one += other.one;
        self.two_to_five += other.two_to_five;
        self.over_five += other.over_five;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub repo_count: u64,
    pub workflow_count: u64,
    /// Repository script usages (`owner/repo@ref`).
    pub usage_count: u64,
    pub docker_image_usages: u64,
    pub local_usages: u64,
    /// Keyed by lower-cased `owner/repo[/subpath]`.
    pub scripts: BTreeMap<String, ScriptFacts>,
    /// Keyed by lower-cased owner.
    pub creators: BTreeMap<String, CreatorFacts>,
    /// Repositories using at least one script of each runtime.
    pub runtime_repos: BTreeMap<RuntimeBucket, u64>,
    pub verified_creator_repos: u64,
    pub unverified_creator_repos: u64,
    pub credential_histogram: CredentialHistogram,
    /// Repositories with at least one usage of each ref kind.
    pub ref_kind_repos: BTreeMap<RefKind, u64>,
    /// Repositories using at least one script of each sensitive category.
    pub sensitive_repos: BTreeMap<String, u64>,
    pub usage_lags: LagBuckets,
    pub repo_lags: LagBuckets,
    pub lag_days_total: u64,
    pub lagged_usages: u64,
    /// Repository -> advisory ids matched in it.
    pub vulnerable_repos: BTreeMap<String, BTreeSet<String>>,
    pub vulnerable_usages: u64,
    pub parse_failures: u64,
    pub parse_failure_files: BTreeSet<String>,
}

impl Default for CorpusStats {
    fn default() -> Self {
        Self {
            repo_count: 0,
            workflow_count: 0,
            usage_count: 0,
            docker_image_usages: 0,
            local_usages: 0,
            scripts: BTreeMap::new(),
            creators: BTreeMap::new(),
            runtime_repos: RuntimeBucket::ALL.into_iter().map(|b| (b, 0)).collect(),
            verified_creator_repos: 0,
            unverified_creator_repos: 0,
            credential_histogram: CredentialHistogram::default(),
            ref_kind_repos: RefKind::ALL.into_iter().map(|k| (k, 0)).collect(),
            sensitive_repos: [ARTIFACT_RELEASE, DEPLOYMENT]
                .into_iter()
                .map(|c| (c.to_string(), 0))
                .collect(),
            usage_lags: LagBuckets::default(),
            repo_lags: LagBuckets::default(),
            lag_days_total: 0,
            lagged_usages: 0,
            vulnerable_repos: BTreeMap::new(),
            vulnerable_usages: 0,
            parse_failures: 0,
            parse_failure_files: BTreeSet::new(),
        }
    }
}

fn add_counts<K: Ord + Clone>(into: &mut BTreeMap<K, u64>, from: &BTreeMap<K, u64>) {
    for (k, v) in from {
        *into.entry(k.clone()).or_default() += v;
    }
}

impl CorpusStats {
    /// Statistics of a single repository.
    pub fn of_repo(repo: &RepoAnalysis, analyzer: &Analyzer) -> Self {
        let mut s = Self {
            repo_count: 1,
            workflow_count: repo.workflows.len() as u64,
            parse_failures: repo.parse_failures.len() as u64,
            parse_failure_files: repo.parse_failures.iter().map(|p| p.file.clone()).collect(),
            ..Self::default()
        };

        let mut runtimes = BTreeSet::new();
        let mut kinds = BTreeSet::new();
        let mut categories = BTreeSet::new();
        let mut secrets = BTreeSet::new();
        for wa in &repo.workflows {
            secrets.extend(wa.credentials.iter().map(|c| c.secret_name.clone()));
            for usage in &wa.usages {
                match usage.parsed.as_ref().map(|p| &p.form) {
                    Ok(RefForm::Repository(r)) => {
                        s.usage_count += 1;
                        if let Some(kind) = usage.kind {
                            kinds.insert(kind);
                        }
                        let key = r.slug().to_ascii_lowercase();
                        let creator = r.owner.to_ascii_lowercase();
                        let verified = analyzer.is_verified(r);
                        let runtime = analyzer
                            .metadata
                            .lookup(r)
                            .map(|m| m.runtime.bucket())
                            .unwrap_or(Runtime::Unknown(None).bucket());
                        let cats = analyzer.categories(r);
                        runtimes.insert(runtime);
                        categories.extend(cats.iter().cloned());
                        let facts = s.scripts.entry(key.clone()).or_insert_with(|| ScriptFacts {
                            creator: creator.clone(),
                            verified,
                            runtime,
                            categories: cats,
                            repos: 1,
                            usages: 0,
                        });
                        facts.usages += 1;
                        let c = s.creators.entry(creator).or_insert_with(|| CreatorFacts {
                            verified,
                            repos: 1,
                            scripts: BTreeSet::new(),
                        });
                        c.verified |= verified;
                        c.scripts.insert(key);
                    }
                    Ok(RefForm::DockerImage(_)) => s.docker_image_usages += 1,
                    Ok(RefForm::LocalPath(_)) => s.local_usages += 1,
                    Err(_) => {}
                }
            }
        }

        for runtime in runtimes {
            *s.runtime_repos.entry(runtime).or_default() += 1;
        }
        for kind in kinds {
            *s.ref_kind_repos.entry(kind).or_default() += 1;
        }
        for (cat, count) in s.sensitive_repos.iter_mut() {
            if categories.contains(cat) {
                *count += 1;
            }
        }
        if s.creators.values().any(|c| c.verified) {
            s.verified_creator_repos = 1;
        }
        if s.creators.values().any(|c| !c.verified) {
            s.unverified_creator_repos = 1;
        }
        s.credential_histogram.add(secrets.len());

        for lag in repo.lags().filter(|l| l.status.is_bucketed()) {
            s.usage_lags.add(lag.lag_days);
            s.lag_days_total += lag.lag_days;
            s.lagged_usages += 1;
        }
        if repo.repo_lag.contributing_usage.is_some() {
            s.repo_lags.add(repo.repo_lag.max_lag_days);
        }

        let advisories: BTreeSet<String> = repo.matches().map(|m| m.advisory_id.clone()).collect();
        s.vulnerable_usages = repo.matches().count() as u64;
        if !advisories.is_empty() {
            s.vulnerable_repos.insert(repo.repo.clone(), advisories);
        }
        s
    }

    /// Combines statistics of disjoint repository sets. Associative and
    /// commutative.
    pub fn merge(&mut self, other: &CorpusStats) {
        self.repo_count += other.repo_count;
        self.workflow_count += other.workflow_count;
        self.usage_count += other.usage_count;
        self.docker_image_usages += other.docker_image_usages;
        self.local_usages += other.local_usages;
        for (key, facts) in &other.scripts {
            match self.scripts.get_mut(key) {
                Some(mine) => {
                    mine.repos += facts.repos;
                    mine.usages += facts.usages;
                    mine.verified |= facts.verified;
                    mine.categories.extend(facts.categories.iter().cloned());
                    mine.runtime = mine.runtime.min(facts.runtime);
                }
                None => {
                    self.scripts.insert(key.clone(), facts.clone());
                }
            }
        }
        for (key, facts) in &other.creators {
            match self.creators.get_mut(key) {
                Some(mine) => {
                    mine.repos += facts.repos;
                    mine.verified |= facts.verified;
                    mine.scripts.extend(facts.scripts.iter().cloned());
                }
                None => {
                    self.creators.insert(key.clone(), facts.clone());
                }
            }
        }
        add_counts(&mut self.runtime_repos, &other.runtime_repos);
        self.verified_creator_repos += other.verified_creator_repos;
        self.unverified_creator_repos += other.unverified_creator_repos;
        self.credential_histogram.merge(&other.credential_histogram);
        add_counts(&mut self.ref_kind_repos, &other.ref_kind_repos);
        add_counts(&mut self.sensitive_repos, &other.sensitive_repos);
        self.usage_lags.merge(&other.usage_lags);
        self.repo_lags.merge(&other.repo_lags);
        self.lag_days_total += other.lag_days_total;
        self.lagged_usages += other.lagged_usages;
        for (repo, ids) in &other.vulnerable_repos {
            self.vulnerable_repos
                .entry(repo.clone())
                .or_default()
                .extend(ids.iter().cloned());
        }
        self.vulnerable_usages += other.vulnerable_usages;
        self.parse_failures += other.parse_failures;
        self.parse_failure_files
            .extend(other.parse_failure_files.iter().cloned());
    }

    pub fn merged(mut self, other: &CorpusStats) -> Self {
        self.merge(other);
        self
    }

    pub fn distinct_scripts(&self) -> usize {
        self.scripts.len()
    }

    pub fn distinct_creators(&self) -> usize {
        self.creators.len()
    }

    /// Scripts per runtime bucket; sums to `distinct_scripts`.
    pub fn runtime_scripts(&self) -> BTreeMap<RuntimeBucket, u64> {
        let mut out: BTreeMap<RuntimeBucket, u64> =
            RuntimeBucket::ALL.into_iter().map(|b| (b, 0)).collect();
        for facts in self.scripts.values() {
            *out.entry(facts.runtime).or_default() += 1;
        }
        out
    }

    /// Repositories per advisory.
    pub fn advisory_repos(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for ids in self.vulnerable_repos.values() {
            for id in ids {
                *out.entry(id.clone()).or_default() += 1;
            }
        }
        out
    }

    /// Mean lag over lagged usages, in days.
    pub fn mean_lag_days(&self) -> Option<f64> {
        (self.lagged_usages > 0).then(|| self.lag_days_total as f64 / self.lagged_usages as f64)
    }

    /// Scripts ranked by repositories using them, ties by name.
    pub fn top_scripts(&self, n: usize) -> Vec<(&str, &ScriptFacts)> {
        let mut v: Vec<_> = self.scripts.iter().map(|(k, f)| (k.as_str(), f)).collect();
        v.sort_by(|a, b| b.1.repos.cmp(&a.1.repos).then_with(|| a.0.cmp(b.0)));
        v.truncate(n);
        v
    }

    /// Creators with the given verified flag ranked by influenced
    /// repositories, ties by name.
    pub fn top_creators(&self, verified: bool, n: usize) -> Vec<(&str, &CreatorFacts)> {
        let mut v: Vec<_> = self
            .creators
            .iter()
            .filter(|(_, f)| f.verified == verified)
            .map(|(k, f)| (k.as_str(), f))
            .collect();
        v.sort_by(|a, b| b.1.repos.cmp(&a.1.repos).then_with(|| a.0.cmp(b.0)));
        v.truncate(n);
        v
    }
}

/// Statistics over any number of analysed repositories.
pub fn aggregate_corpus<'a>(
    repos: impl IntoIterator<Item = &'a RepoAnalysis>,
    analyzer: &Analyzer,
) -> CorpusStats {
    repos.into_iter().fold(CorpusStats::default(), |acc, r| {
        acc.merged(&CorpusStats::of_repo(r, analyzer))
    })
}
