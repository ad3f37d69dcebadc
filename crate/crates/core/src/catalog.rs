//! Editable data files consulted by the rules: the verified-creator
//! allow-list, the script category map and the externally-initiable trigger
//! list. Bundled defaults are compiled in; each can be replaced from a file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const BUNDLED_VERIFIED_CREATORS: &str = include_str!("../data/verified_creators.txt");
pub const BUNDLED_CATEGORIES: &str = include_str!("../data/categories.json");
pub const BUNDLED_EXTERNAL_TRIGGERS: &str = include_str!("../data/external_triggers.txt");

pub const ARTIFACT_RELEASE: &str = "artifact-release";
pub const DEPLOYMENT: &str = "deployment";

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed category map: {0}")]
    Categories(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    /// Lower-cased owner logins.
    pub verified_creators: BTreeSet<String>,
    /// Lower-cased `owner/repo` -> categories.
    pub categories: BTreeMap<String, BTreeSet<String>>,
    pub external_triggers: BTreeSet<String>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::bundled()
    }
}

impl Catalog {
    pub fn bundled() -> Self {
        Self {
            verified_creators: parse_lines(BUNDLED_VERIFIED_CREATORS, true),
            categories: parse_categories(BUNDLED_CATEGORIES).expect("bundled category map"),
            external_triggers: parse_lines(BUNDLED_EXTERNAL_TRIGGERS, false),
        }
    }

    pub fn with_verified_creators_file(mut self, path: &Path) -> Result<Self, CatalogError> {
        self.verified_creators = parse_lines(&read(path)?, true);
        Ok(self)
    }

    pub fn with_categories_file(mut self, path: &Path) -> Result<Self, CatalogError> {
        self.categories = parse_categories(&read(path)?)?;
        Ok(self)
    }

    pub fn with_triggers_file(mut self, path: &Path) -> Result<Self, CatalogError> {
        self.external_triggers = parse_lines(&read(path)?, false);
        Ok(self)
    }

    pub fn is_verified_creator(&self, owner: &str) -> bool {
        self.verified_creators.contains(&owner.to_ascii_lowercase())
    }

    pub fn categories_for(&self, script_id: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(&script_id.to_ascii_lowercase())
    }
}

fn read(path: &Path) -> Result<String, CatalogError> {
    std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_lines(text: &str, lowercase: bool) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            if lowercase {
                l.to_ascii_lowercase()
            } else {
                l.to_string()
            }
        })
        .collect()
}

fn parse_categories(text: &str) -> Result<BTreeMap<String, BTreeSet<String>>, serde_json::Error> {
    let raw: BTreeMap<String, BTreeSet<String>> = serde_json::from_str(text)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| (k.to_ascii_lowercase(), v))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog() {
        let c = Catalog::bundled();
        assert!(c.is_verified_creator("Atlassian"));
        assert!(c.is_verified_creator("actions"));
        assert!(!c.is_verified_creator("peaceiris"));
        assert!(c.external_triggers.contains("pull_request_target"));
        assert!(c.external_triggers.contains("issues"));
        assert!(!c.external_triggers.contains("push"));
        assert!(c
            .categories_for("JamesIves/github-pages-deploy-action")
            .unwrap()
            .contains(DEPLOYMENT));
    }

    #[test]
    fn override_files() {
        let dir = tempfile::tempdir().unwrap();
        let creators = dir.path().join("creators.txt");
        std::fs::write(&creators, "# comment\nOcto-Org  # trailing\n\n").unwrap();
        let c = Catalog::bundled()
            .with_verified_creators_file(&creators)
            .unwrap();
        assert_eq!(c.verified_creators.len(), 1);
        assert!(c.is_verified_creator("octo-org"));

        let cats = dir.path().join("cats.json");
        std::fs::write(&cats, "{\"a/b\": [\"deployment\"]}").unwrap();
        let c = c.with_categories_file(&cats).unwrap();
        assert_eq!(c.categories.len(), 1);

        std::fs::write(&cats, "[1]").unwrap();
        assert!(Catalog::bundled().with_categories_file(&cats).is_err());
        assert!(Catalog::bundled()
            .with_triggers_file(&dir.path().join("missing"))
            .is_err());
    }
}
