//! Known-vulnerability database and unfixed-usage detection.
//!
//! Each advisory states its affected range either as the last vulnerable
//! version or as the first fixed version. Both are normalised at load time
//! into [`AffectedRange`], which answers "is this version affected?".

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metadata::ScriptMetadata;
use crate::model::Location;
use crate::script_ref::{RefKind, RepositoryRef, VersionKey};

pub const BUNDLED_ADVISORIES: &str = include_str!("../data/advisories.json");

#[derive(Debug, thiserror::Error)]
pub enum AdvisoryError {
    #[error("cannot read advisories {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed advisory db: {0}")]
    Malformed(String),
    #[error("advisory `{0}` appears more than once")]
    DuplicateId(String),
    #[error("advisory `{0}` sets both `last_vulnerable` and `fixed_in`")]
    BothRangeFields(String),
    #[error("advisory `{0}` sets neither `last_vulnerable` nor `fixed_in`")]
    NoRangeField(String),
    #[error("advisory `{id}` has CVSS score {score} outside 0.0-10.0")]
    BadScore { id: String, score: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AffectedRange {
    /// Versions at or before this one are affected.
    LastVulnerable(String),
    /// Versions strictly before this one are affected.
    FixedIn(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advisory {
    pub id: String,
    /// `owner/repo`.
    pub slug: String,
    pub range: AffectedRange,
    pub cvss: f64,
    pub impact: String,
    pub verified_creator: bool,
    pub references: Vec<String>,
}

impl Advisory {
    fn boundary(&self) -> &str {
        match &self.range {
            AffectedRange::LastVulnerable(v) | AffectedRange::FixedIn(v) => v,
        }
    }

    /// Whether a version is inside the affected range. `boundary_date` and
    /// the version's own date only break ties between numerically equal
    /// versions, and only when both are known.
    pub fn affects(&self, version: &VersionKey, boundary_date: Option<DateTime<Utc>>) -> bool {
        let mut boundary = VersionKey::parse(self.boundary());
        boundary.released = boundary_date;
        let ord = version.cmp_components(&boundary).then_with(|| {
            match (version.released, boundary.released) {
                (Some(a), Some(b)) => a.cmp(&b),
                _ => Ordering::Equal,
            }
        });
        match self.range {
            AffectedRange::LastVulnerable(_) => ord.is_le(),
            AffectedRange::FixedIn(_) => ord.is_lt(),
        }
    }

    /// Earliest-dated release outside the affected range.
    fn fixing_release_date(&self, meta: &ScriptMetadata) -> Option<DateTime<Utc>> {
        let boundary = VersionKey::parse(self.boundary());
        meta.releases
            .iter()
            .filter(|r| {
                let key = VersionKey::parse(&r.tag);
                !key.numeric_components.is_empty()
                    && match self.range {
                        AffectedRange::LastVulnerable(_) => key.cmp_components(&boundary).is_gt(),
                        AffectedRange::FixedIn(_) => key.cmp_components(&boundary).is_ge(),
                    }
            })
            .map(|r| r.date)
            .min()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvisoryRecord {
    id: String,
    slug: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    last_vulnerable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_in: Option<String>,
    cvss: f64,
    impact: String,
    verified_creator: bool,
    #[serde(default)]
    references: Vec<String>,
}

/// Advisories ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdvisoryDb {
    advisories: Vec<Advisory>,
}

impl AdvisoryDb {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_ADVISORIES).expect("bundled advisory db is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdvisoryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AdvisoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, AdvisoryError> {
        let records: Vec<AdvisoryRecord> =
            serde_json::from_str(text).map_err(|e| AdvisoryError::Malformed(e.to_string()))?;
        let mut ids = BTreeSet::new();
        let mut advisories = Vec::with_capacity(records.len());
        for rec in records {
            if !ids.insert(rec.id.clone()) {
                return Err(AdvisoryError::DuplicateId(rec.id));
            }
            let range = match (rec.last_vulnerable, rec.fixed_in) {
                (Some(_), Some(_)) => return Err(AdvisoryError::BothRangeFields(rec.id)),
                (None, None) => return Err(AdvisoryError::NoRangeField(rec.id)),
                (Some(v), None) => AffectedRange::LastVulnerable(v),
                (None, Some(v)) => AffectedRange::FixedIn(v),
            };
            if !(0.0..=10.0).contains(&rec.cvss) {
                return Err(AdvisoryError::BadScore {
                    id: rec.id,
                    score: rec.cvss,
                });
            }
            if rec.slug.split('/').filter(|s| !s.is_empty()).count() != 2 {
                return Err(AdvisoryError::Malformed(format!(
                    "advisory `{}` slug `{}` is not owner/repo",
                    rec.id, rec.slug
                )));
            }
            advisories.push(Advisory {
                id: rec.id,
                slug: rec.slug,
                range,
                cvss: rec.cvss,
                impact: rec.impact,
                verified_creator: rec.verified_creator,
                references: rec.references,
            });
        }
        advisories.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { advisories })
    }

    pub fn to_json(&self) -> String {
        let records: Vec<_> = self
            .advisories
            .iter()
            .map(|a| {
                let (last_vulnerable, fixed_in) = match &a.range {
                    AffectedRange::LastVulnerable(v) => (Some(v.clone()), None),
                    AffectedRange::FixedIn(v) => (None, Some(v.clone())),
                };
                AdvisoryRecord {
                    id: a.id.clone(),
                    slug: a.slug.clone(),
                    last_vulnerable,
                    fixed_in,
                    cvss: a.cvss,
                    impact: a.impact.clone(),
                    verified_creator: a.verified_creator,
                    references: a.references.clone(),
                }
            })
            .collect();
        let mut out = serde_json::to_string_pretty(&records).expect("advisories serialize");
        out.push('\n');
        out
    }

    pub fn get(&self, id: &str) -> Option<&Advisory> {
        self.advisories.iter().find(|a| a.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Advisory> {
        self.advisories.iter()
    }

    pub fn len(&self) -> usize {
        self.advisories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advisories.is_empty()
    }

    pub fn for_script<'a>(&'a self, script_id: &'a str) -> impl Iterator<Item = &'a Advisory> {
        self.advisories
            .iter()
            .filter(move |a| a.slug.eq_ignore_ascii_case(script_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchReason {
    AtOrBeforeLastVulnerable,
    BeforeFixedIn,
    /// Pinned commit dated before the first fixing release.
    CommitBeforeFix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VulnMatch {
    pub advisory_id: String,
    pub location: Location,
    pub referenced_version: String,
    pub reason: MatchReason,
}

/// Why an advisory for the script did not produce a match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuppressedMatch {
    pub advisory_id: String,
    pub location: Location,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdvisoryOutcome {
    pub matches: Vec<VulnMatch>,
    pub suppressed: Vec<SuppressedMatch>,
}

/// Checks one repository usage against every advisory for its script.
///
/// Tags compare by version order; branches float to the latest revision and
/// are treated as patched; commits compare their date against the first
/// fixing release. Anything without enough metadata is suppressed with a
/// reason rather than matched.
pub fn match_advisories(
    location: &Location,
    r: &RepositoryRef,
    kind: RefKind,
    db: &AdvisoryDb,
    meta: Option<&ScriptMetadata>,
) -> AdvisoryOutcome {
    let mut out = AdvisoryOutcome::default();
    let script_id = r.script_id();
    for adv in db.for_script(&script_id) {
        let reason = match kind {
            RefKind::Tag => {
                let mut version = VersionKey::parse(&r.git_ref);
                if version.numeric_components.is_empty() {
                    Err(format!("tag `{}` carries no version number", r.git_ref))
                } else {
                    version.released = meta.and_then(|m| m.release(&r.git_ref)).map(|x| x.date);
                    let boundary_date =
                        meta.and_then(|m| m.release(adv.boundary())).map(|x| x.date);
                    if adv.affects(&version, boundary_date) {
                        Ok(match adv.range {
                            AffectedRange::LastVulnerable(_) => {
                                MatchReason::AtOrBeforeLastVulnerable
                            }
                            AffectedRange::FixedIn(_) => MatchReason::BeforeFixedIn,
                        })
                    } else {
                        Err(format!(
                            "version `{}` is outside the affected range",
                            r.git_ref
                        ))
                    }
                }
            }
            RefKind::Branch => Err(format!(
                "branch `{}` tracks the latest revision; assumed fixed",
                r.git_ref
            )),
            RefKind::CommitHash => {
                let commit_date = meta.and_then(|m| m.commit_date(&r.git_ref));
                let fix_date = meta.and_then(|m| adv.fixing_release_date(m));
                match (commit_date, fix_date) {
                    (Some(c), Some(f)) if c < f => Ok(MatchReason::CommitBeforeFix),
                    (Some(_), Some(_)) => Err("pinned commit is not older than the fix".into()),
                    _ => Err("unresolved: commit or fixing release date unknown".into()),
                }
            }
            RefKind::Invalid => Err(format!("unresolved: ref `{}` is invalid", r.git_ref)),
            RefKind::Unresolved => Err("unresolved: no metadata for script".into()),
        };
        match reason {
            Ok(reason) => out.matches.push(VulnMatch {
                advisory_id: adv.id.clone(),
                location: location.clone(),
                referenced_version: r.git_ref.clone(),
                reason,
            }),
            Err(reason) => out.suppressed.push(SuppressedMatch {
                advisory_id: adv.id.clone(),
                location: location.clone(),
                reason,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{Release, Runtime};
    use crate::script_ref::{parse_uses, RefForm};

    fn repo(raw: &str) -> RepositoryRef {
        match parse_uses(raw).unwrap().form {
            RefForm::Repository(r) => r,
            other => panic!("{other:?}"),
        }
    }

    fn at(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().to_utc()
    }

    fn gajira() -> ScriptMetadata {
        ScriptMetadata {
            slug: "atlassian/gajira-create".into(),
            creator: "atlassian".into(),
            verified: true,
            default_branch: "master".into(),
            branches: ["master".to_string()].into(),
            releases: vec![
                Release {
                    tag: "v1.0.0".into(),
                    date: at("2019-12-01T00:00:00Z"),
                    commit: Some("1".repeat(40)),
                },
                Release {
                    tag: "v2.0.0".into(),
                    date: at("2020-02-01T00:00:00Z"),
                    commit: Some("2".repeat(40)),
                },
                Release {
                    tag: "v2.0.1".into(),
                    date: at("2020-09-10T00:00:00Z"),
                    commit: Some("3".repeat(40)),
                },
            ],
            runtime: Runtime::NodeJs("12".into()),
            categories: Default::default(),
        }
    }

    #[test]
    fn bundled_db_holds_six_records() {
        let db = AdvisoryDb::bundled();
        assert_eq!(db.len(), 6);
        let a = db.get("CVE-2020-14188").unwrap();
        assert_eq!(a.slug, "atlassian/gajira-create");
        assert_eq!(a.cvss, 9.8);
        assert_eq!(a.impact, "Remote Code Execution");
        assert!(a.verified_creator);
        assert_eq!(AdvisoryDb::from_json(&db.to_json()).unwrap(), db);
        let ids: Vec<_> = db.iter().map(|a| a.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn load_errors() {
        assert!(AdvisoryDb::from_json("[]").unwrap().is_empty());
        let rec = |extra: &str| {
            format!(
                r#"[{{"id": "X", "slug": "a/b", "cvss": 5.0, "impact": "i", "verified_creator": false{extra}}}]"#
            )
        };
        assert!(matches!(
            AdvisoryDb::from_json(&rec(r#", "fixed_in": "v2", "last_vulnerable": "v1""#)),
            Err(AdvisoryError::BothRangeFields(_))
        ));
        assert!(matches!(
            AdvisoryDb::from_json(&rec("")),
            Err(AdvisoryError::NoRangeField(_))
        ));
        let bad_score = rec(r#", "fixed_in": "v2""#).replace("5.0", "10.5");
        assert!(matches!(
            AdvisoryDb::from_json(&bad_score),
            Err(AdvisoryError::BadScore { .. })
        ));
        let one = rec(r#", "fixed_in": "v2""#);
        let two = format!("[{0},{0}]", &one[1..one.len() - 1]);
        assert!(matches!(
            AdvisoryDb::from_json(&two),
            Err(AdvisoryError::DuplicateId(_))
        ));
        assert!(matches!(
            AdvisoryDb::from_json("{"),
            Err(AdvisoryError::Malformed(_))
        ));
    }

    #[test]
    fn gajira_tag_before_fix_matches() {
        let db = AdvisoryDb::bundled();
        let meta = gajira();
        let loc = Location::step("w.yml", "j", 0);
        let out = match_advisories(
            &loc,
            &repo("atlassian/gajira-create@v2.0.0"),
            RefKind::Tag,
            &db,
            Some(&meta),
        );
        assert_eq!(
            out.matches,
            vec![VulnMatch {
                advisory_id: "CVE-2020-14188".into(),
                location: loc.clone(),
                referenced_version: "v2.0.0".into(),
                reason: MatchReason::BeforeFixedIn,
            }]
        );
        let fixed = match_advisories(
            &loc,
            &repo("atlassian/gajira-create@v2.0.1"),
            RefKind::Tag,
            &db,
            Some(&meta),
        );
        assert!(fixed.matches.is_empty());
        assert_eq!(fixed.suppressed.len(), 1);
    }

    #[test]
    fn branch_is_suppressed() {
        let db = AdvisoryDb::bundled();
        let loc = Location::step("w.yml", "j", 0);
        let out = match_advisories(
            &loc,
            &repo("atlassian/gajira-create@master"),
            RefKind::Branch,
            &db,
            Some(&gajira()),
        );
        assert!(out.matches.is_empty());
        assert!(out.suppressed[0].reason.contains("branch"));
    }

    #[test]
    fn commits_compare_against_fix_date() {
        let db = AdvisoryDb::bundled();
        let meta = gajira();
        let loc = Location::step("w.yml", "j", 0);
        let old = repo(&format!("atlassian/gajira-create@{}", "2".repeat(40)));
        let out = match_advisories(&loc, &old, RefKind::CommitHash, &db, Some(&meta));
        assert_eq!(out.matches[0].reason, MatchReason::CommitBeforeFix);
        let new = repo(&format!("atlassian/gajira-create@{}", "3".repeat(40)));
        assert!(
            match_advisories(&loc, &new, RefKind::CommitHash, &db, Some(&meta))
                .matches
                .is_empty()
        );
        let unknown = repo(&format!("atlassian/gajira-create@{}", "9".repeat(40)));
        let out = match_advisories(&loc, &unknown, RefKind::CommitHash, &db, Some(&meta));
        assert!(out.matches.is_empty());
        assert!(out.suppressed[0].reason.starts_with("unresolved"));
    }

    #[test]
    fn last_vulnerable_boundary() {
        let db = AdvisoryDb::from_json(
            r#"[{"id": "T-1", "slug": "check-spelling/check-spelling", "last_vulnerable": "0.0.18",
                "cvss": 9.9, "impact": "Credential Leakage", "verified_creator": false}]"#,
        )
        .unwrap();
        let loc = Location::step("w.yml", "j", 0);
        let hit = match_advisories(
            &loc,
            &repo("check-spelling/check-spelling@0.0.18"),
            RefKind::Tag,
            &db,
            None,
        );
        assert_eq!(hit.matches[0].reason, MatchReason::AtOrBeforeLastVulnerable);
        let miss = match_advisories(
            &loc,
            &repo("check-spelling/check-spelling@0.0.19"),
            RefKind::Tag,
            &db,
            None,
        );
        assert!(miss.matches.is_empty());
        // Other scripts are never matched.
        let other = match_advisories(&loc, &repo("someone/else@0.0.1"), RefKind::Tag, &db, None);
        assert_eq!(other, AdvisoryOutcome::default());
    }

    #[test]
    fn unresolved_and_non_numeric_tags_are_suppressed() {
        let db = AdvisoryDb::bundled();
        let loc = Location::step("w.yml", "j", 0);
        let r = repo("atlassian/gajira-create@v2.0.0");
        let out = match_advisories(&loc, &r, RefKind::Unresolved, &db, None);
        assert!(out.matches.is_empty());
        let r = repo("atlassian/gajira-create@latest");
        assert!(match_advisories(&loc, &r, RefKind::Tag, &db, None)
            .matches
            .is_empty());
    }
}
