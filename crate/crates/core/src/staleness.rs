//! Update lag of script usages.
//!
//! A usage's lag is the time from the earliest release strictly newer than
//! the one it references up to the analysis time. Releases dated after the
//! analysis time are treated as not yet published.

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::metadata::ScriptMetadata;
use crate::model::Location;
use crate::script_ref::{compare_versions, RefKind, RepositoryRef};

pub const DAYS_PER_MONTH: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LagStatus {
    UpToDate,
    Outdated,
    TracksBranch,
    PinnedCommit,
    Unknown,
}

impl LagStatus {
    /// Statuses whose lag enters the distributions.
    pub fn is_bucketed(self) -> bool {
        matches!(self, LagStatus::Outdated | LagStatus::PinnedCommit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UsageLag {
    pub location: Location,
    pub status: LagStatus,
    pub referenced_release_date: Option<DateTime<Utc>>,
    pub first_newer_release_date: Option<DateTime<Utc>>,
    pub lag_days: u64,
}

impl UsageLag {
    fn flat(location: &Location, status: LagStatus) -> Self {
        Self {
            location: location.clone(),
            status,
            referenced_release_date: None,
            first_newer_release_date: None,
            lag_days: 0,
        }
    }
}

fn days_between(from: DateTime<Utc>, to: DateTime<Utc>) -> u64 {
    (to - from).num_days().max(0) as u64
}

pub fn compute_usage_lag(
    location: &Location,
    r: &RepositoryRef,
    kind: RefKind,
    meta: Option<&ScriptMetadata>,
    analysis_time: DateTime<Utc>,
) -> UsageLag {
    let Some(meta) = meta else {
        return UsageLag::flat(location, LagStatus::Unknown);
    };
    let published: Vec<_> = meta
        .releases
        .iter()
        .filter(|rel| rel.date <= analysis_time)
        .collect();
    match kind {
        RefKind::Tag => {
            let Some(referenced) = meta.release(&r.git_ref) else {
                return UsageLag::flat(location, LagStatus::Unknown);
            };
            let key = referenced.version_key();
            let first_newer = published
                .iter()
                .filter(|rel| compare_versions(&rel.version_key(), &key).is_gt())
                .map(|rel| rel.date)
                .min();
            let mut lag = UsageLag::flat(location, LagStatus::UpToDate);
            lag.referenced_release_date = Some(referenced.date);
            if let Some(newer) = first_newer {
                lag.status = LagStatus::Outdated;
                lag.first_newer_release_date = Some(newer);
                lag.lag_days = days_between(newer, analysis_time);
            }
            lag
        }
        RefKind::Branch => UsageLag::flat(location, LagStatus::TracksBranch),
        RefKind::CommitHash => {
            let Some(committed) = meta.commit_date(&r.git_ref) else {
                return UsageLag::flat(location, LagStatus::Unknown);
            };
            let first_newer = published
                .iter()
                .map(|rel| rel.date)
                .filter(|d| *d > committed)
                .min();
            let mut lag = UsageLag::flat(location, LagStatus::PinnedCommit);
            lag.referenced_release_date = Some(committed);
            if let Some(newer) = first_newer {
                lag.first_newer_release_date = Some(newer);
                lag.lag_days = days_between(newer, analysis_time);
            }
            lag
        }
        RefKind::Invalid | RefKind::Unresolved => UsageLag::flat(location, LagStatus::Unknown),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RepoLag {
    pub repo: String,
    pub max_lag_days: u64,
    pub contributing_usage: Option<Location>,
}

/// Maximum lag over a repository's usages. The first usage reaching the
/// maximum is recorded as the contributor.
pub fn compute_repo_lag(repo: &str, lags: &[UsageLag]) -> RepoLag {
    let mut out = RepoLag {
        repo: repo.to_string(),
        max_lag_days: 0,
        contributing_usage: None,
    };
    for lag in lags.iter().filter(|l| l.status.is_bucketed()) {
        if out.contributing_usage.is_none() || lag.lag_days > out.max_lag_days {
            out.max_lag_days = lag.lag_days;
            out.contributing_usage = Some(lag.location.clone());
        }
    }
    out
}

/// Lag distribution over half-open day ranges [0,30), [30,90), [90,365),
/// [365,inf).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct LagBuckets {
    pub under_1_month: u64,
    pub from_1_to_3_months: u64,
    pub from_3_to_12_months: u64,
    pub over_12_months: u64,
}

impl LagBuckets {
    pub fn add(&mut self, lag_days: u64) {
        match lag_days {
            0..=29 => self.under_1_month += 1,
            30..=89 => self.from_1_to_3_months += 1,
            90..=364 => self.from_3_to_12_months += 1,
            _ => self.over_12_months += 1,
        }
    }

    pub fn merge(&mut self, other: &LagBuckets) {
        self.under_1_month += other.under_1_month;
        self.from_1_to_3_months += other.from_1_to_3_months;
        self.from_3_to_12_months += other.from_3_to_12_months;
        self.over_12_months += other.over_12_months;
    }

    pub fn total(&self) -> u64 {
        self.under_1_month
            + self.from_1_to_3_months
            + self.from_3_to_12_months
            + self.over_12_months
    }

    pub fn as_array(&self) -> [u64; 4] {
        [
            self.under_1_month,
            self.from_1_to_3_months,
            self.from_3_to_12_months,
            self.over_12_months,
        ]
    }
}

pub fn bucket_lags<'a>(lags: impl IntoIterator<Item = &'a UsageLag>) -> LagBuckets {
    let mut buckets = LagBuckets::default();
    for lag in lags {
        if lag.status.is_bucketed() {
            buckets.add(lag.lag_days);
        }
    }
    buckets
}
