use serde::Serialize;
use serde_yaml::Value;

/// Execution environment declared by an action manifest (`runs.using`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Runtime {
    /// Node version, e.g. `"16"` for `node16`.
    NodeJs(String),
    /// Image source from `runs.image`.
    Docker(String),
    /// `shell_only` is set when every composite step is a `run:` step.
    Composite {
        shell_only: bool,
    },
    RawCommand,
    /// Optional note describing why the runtime could not be determined.
    Unknown(Option<String>),
}

/// Aggregation buckets. Shell-only composites count as raw commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeBucket {
    NodeJs,
    Docker,
    RawCommand,
    Composite,
    Unknown,
}

impl RuntimeBucket {
    pub const ALL: [RuntimeBucket; 5] = [
        RuntimeBucket::NodeJs,
        RuntimeBucket::Docker,
        RuntimeBucket::RawCommand,
        RuntimeBucket::Composite,
        RuntimeBucket::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuntimeBucket::NodeJs => "node_js",
            RuntimeBucket::Docker => "docker",
            RuntimeBucket::RawCommand => "raw_command",
            RuntimeBucket::Composite => "composite",
            RuntimeBucket::Unknown => "unknown",
        }
    }
}

impl Runtime {
    pub fn bucket(&self) -> RuntimeBucket {
        match self {
            Runtime::NodeJs(_) => RuntimeBucket::NodeJs,
            Runtime::Docker(_) => RuntimeBucket::Docker,
            Runtime::Composite { shell_only: true } | Runtime::RawCommand => {
                RuntimeBucket::RawCommand
            }
            Runtime::Composite { shell_only: false } => RuntimeBucket::Composite,
            Runtime::Unknown(_) => RuntimeBucket::Unknown,
        }
    }

    /// Snapshot `(kind, detail)` encoding.
    pub(crate) fn to_parts(&self) -> (&'static str, Option<String>) {
        match self {
            Runtime::NodeJs(v) => ("node", Some(v.clone())),
            Runtime::Docker(image) => ("docker", Some(image.clone())),
            Runtime::Composite { shell_only } => (
                "composite",
                Some(if *shell_only { "shell" } else { "mixed" }.to_string()),
            ),
            Runtime::RawCommand => ("raw_command", None),
            Runtime::Unknown(note) => ("unknown", note.clone()),
        }
    }

    pub(crate) fn from_parts(kind: &str, detail: Option<String>) -> Option<Self> {
        Some(match kind {
            "node" => Runtime::NodeJs(detail.unwrap_or_default()),
            "docker" => Runtime::Docker(detail.unwrap_or_default()),
            "composite" => Runtime::Composite {
                shell_only: detail.as_deref() == Some("shell"),
            },
            "raw_command" => Runtime::RawCommand,
            "unknown" => Runtime::Unknown(detail),
            _ => return None,
        })
    }
}

/// Classifies an `action.yml` manifest. Never fails: unreadable manifests
/// yield `Unknown` with a note.
pub fn classify_runtime(manifest_text: &str) -> Runtime {
    let doc: Value = match serde_yaml::from_str(manifest_text) {
        Ok(doc) => doc,
        Err(e) => return Runtime::Unknown(Some(format!("malformed manifest: {e}"))),
    };
    let Some(runs) = doc.get("runs") else {
        let note = if doc.is_null() {
            "empty manifest"
        } else {
            "manifest has no `runs` section"
        };
        return Runtime::Unknown(Some(note.into()));
    };
    let Some(using) = runs.get("using").and_then(Value::as_str) else {
        return Runtime::Unknown(Some("`runs.using` missing".into()));
    };
    let using = using.trim().to_ascii_lowercase();
    if let Some(version) = using.strip_prefix("node") {
        Runtime::NodeJs(version.to_string())
    } else if using == "docker" {
        let image = runs
            .get("image")
            .and_then(Value::as_str)
            .unwrap_or_default();
        Runtime::Docker(image.to_string())
    } else if using == "composite" {
        let shell_only = match runs.get("steps").and_then(Value::as_sequence) {
            Some(steps) => steps.iter().all(|s| s.get("run").is_some()),
            None => true,
        };
        Runtime::Composite { shell_only }
    } else {
        Runtime::Unknown(Some(format!("unrecognised `runs.using: {using}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn docker_manifest() {
        let text = "name: 'Super-Linter'
runs:
  using: 'docker'
  image: 'docker://ghcr.io/github/super-linter:v4.9.2'
";
        assert_eq!(
            classify_runtime(text),
            Runtime::Docker("docker://ghcr.io/github/super-linter:v4.9.2".into())
        );
    }

    #[test]
    fn node_manifest() {
        let text = "name: 'Checkout'
description: 'Checkout a Git repository at a particular version'
inputs:
  repository:
    description: 'Repository name with owner.'
    default: ${{ github.repository }}
runs:
  using: node16
  main: dist/index.js
  post: dist/index.js
";
        assert_eq!(classify_runtime(text), Runtime::NodeJs("16".into()));
        assert_eq!(classify_runtime(text).bucket(), RuntimeBucket::NodeJs);
    }

    #[test]
    fn composite_manifests() {
        let shell = "runs:\n  using: composite\n  steps:\n    - run: echo hi\n      shell: bash\n";
        assert_eq!(
            classify_runtime(shell),
            Runtime::Composite { shell_only: true }
        );
        assert_eq!(classify_runtime(shell).bucket(), RuntimeBucket::RawCommand);
        let mixed = "runs:\n  using: composite\n  steps:\n    - uses: actions/checkout@v4\n    - run: make\n      shell: bash\n";
        assert_eq!(
            classify_runtime(mixed),
            Runtime::Composite { shell_only: false }
        );
    }

    #[test]
    fn degenerate_manifests_are_unknown() {
        for text in [
            "",
            "name: x\n",
            "runs:\n  main: index.js\n",
            "runs: [",
            "runs:\n  using: java\n",
            "\u{0}",
        ] {
            assert!(
                matches!(classify_runtime(text), Runtime::Unknown(Some(_))),
                "{text:?}"
            );
        }
    }

    #[test]
    fn parts_round_trip() {
        for rt in [
            Runtime::NodeJs("20".into()),
            Runtime::Docker("Dockerfile".into()),
            Runtime::Composite { shell_only: true },
            Runtime::Composite { shell_only: false },
            Runtime::RawCommand,
            Runtime::Unknown(None),
            Runtime::Unknown(Some("fetch failed".into())),
        ] {
            let (kind, detail) = rt.to_parts();
            assert_eq!(Runtime::from_parts(kind, detail), Some(rt));
        }
        assert_eq!(Runtime::from_parts("java", None), None);
    }
}
