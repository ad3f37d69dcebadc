use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use pipewarden_core::report::Format;
use pipewarden_core::rules::Severity;

#[derive(Debug, Parser)]
#[command(
    name = "pipewarden",
    about = "Security scanner for GitHub Actions workflows",
    disable_version_flag = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan repositories and report findings.
    Scan(ScanArgs),
    /// Corpus-level commands.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Fetch script metadata into a snapshot file.
    FetchMetadata(FetchArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Aggregate statistics over a directory of repositories.
    Stats(StatsArgs),
}

/// Inputs shared by `scan` and `corpus stats`.
#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Metadata snapshot (JSON). Without one, refs stay unresolved.
    #[arg(long, value_name = "PATH")]
    pub metadata: Option<PathBuf>,
    /// Advisory database replacing the bundled one.
    #[arg(long, value_name = "PATH")]
    pub advisories: Option<PathBuf>,
    /// Script category map replacing the bundled one.
    #[arg(long, value_name = "PATH")]
    pub categories: Option<PathBuf>,
    /// Verified-creator allow-list replacing the bundled one.
    #[arg(long, value_name = "PATH")]
    pub verified_creators: Option<PathBuf>,
    /// Externally initiable trigger list replacing the bundled one.
    #[arg(long, value_name = "PATH")]
    pub triggers: Option<PathBuf>,
    /// Analysis time (RFC 3339); defaults to now.
    #[arg(long, value_name = "RFC3339", value_parser = parse_time)]
    pub as_of: Option<DateTime<Utc>>,
    /// Measure lag up to each workflow file's modification time.
    #[arg(long)]
    pub config_mtime: bool,
    /// Never touch the network. Analysis is always local; the flag is
    /// accepted for symmetry with `fetch-metadata`.
    #[arg(long)]
    pub offline: bool,
    /// Repositories analysed in parallel.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Repository roots to scan.
    #[arg(value_name = "TARGET", default_value = ".")]
    pub targets: Vec<PathBuf>,
    #[arg(long, default_value = "json")]
    pub format: Format,
    /// Exit 1 when any finding is at least this severe.
    #[arg(long, default_value = "high")]
    pub fail_on: Severity,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory whose subdirectories are repositories.
    #[arg(value_name = "DIR")]
    pub dir: PathBuf,
    #[arg(long, default_value = "json")]
    pub format: Format,
    /// Entries in ranked lists.
    #[arg(long, default_value_t = pipewarden_core::report::DEFAULT_TOP_N)]
    pub top: usize,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Script slugs (`owner/repo[/path]`), comma separated or repeated.
    #[arg(long, value_delimiter = ',', value_name = "SLUGS")]
    pub scripts: Vec<String>,
    /// Repository or corpus directory whose workflow usages name the
    /// scripts to fetch.
    #[arg(long, value_name = "PATH")]
    pub from_scan: Option<PathBuf>,
    /// Snapshot to write; existing entries are kept and updated.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// REST API base URL.
    #[arg(long, default_value = pipewarden_core::metadata::fetch::DEFAULT_API_BASE)]
    pub api_base: String,
    /// Scripts fetched in parallel.
    #[arg(long, value_name = "N", default_value_t = 4, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Request rate ceiling; 0 disables throttling.
    #[arg(long, value_name = "PER_SECOND", default_value_t = 10.0)]
    pub rate: f64,
    /// Refuse to run; fetching needs the network.
    #[arg(long)]
    pub offline: bool,
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.to_utc())
        .map_err(|e| format!("`{s}` is not an RFC 3339 timestamp: {e}"))
}
