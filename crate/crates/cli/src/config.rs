//! TOML configuration, merged under command-line flags.
//!
//! ```toml
//! store = "store"
//! catalogs = ["catalogs/security/catalog.json"]
//! mode = "block_min"
//! bind = "127.0.0.1:8750"
//! lint_tolerance = "0.000"
//! ```
//!
//! Relative paths are resolved against the file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use erl_core::{Score, ScoringMode};
use serde::Deserialize;

use crate::Failure;

pub const DEFAULT_BIND: &str = "127.0.0.1:8750";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    store: Option<PathBuf>,
    catalog: Option<PathBuf>,
    #[serde(default)]
    catalogs: Vec<PathBuf>,
    mode: Option<String>,
    bind: Option<String>,
    token: Option<String>,
    lint_tolerance: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub store: Option<PathBuf>,
    pub catalogs: Vec<PathBuf>,
    /// Mode for use cases that have no stored sessions yet.
    pub mode: ScoringMode,
    /// Set when the mode came from a flag and should override stored use cases.
    pub mode_flag: Option<ScoringMode>,
    pub bind: SocketAddr,
    pub token: Option<String>,
    pub lint_tolerance: Score,
}

pub struct Overrides<'a> {
    pub config: Option<&'a Path>,
    pub store: Option<&'a Path>,
    pub catalogs: &'a [PathBuf],
    pub mode: Option<&'a str>,
}

fn parse_mode(text: &str) -> Result<ScoringMode, Failure> {
    ScoringMode::parse(text)
        .ok_or_else(|| Failure::Usage(format!("unknown scoring mode `{text}` (use global_sum or block_min)")))
}

impl Settings {
    pub fn resolve(o: Overrides<'_>) -> Result<Settings, Failure> {
        let (file, base) = match o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Runtime(format!("cannot read config {}: {e}", path.display())))?;
                let file: ConfigFile = toml::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mode_flag = o.mode.map(parse_mode).transpose()?;
        let mode = match (mode_flag, &file.mode) {
            (Some(m), _) => m,
            (None, Some(text)) => parse_mode(text)?,
            (None, None) => ScoringMode::default(),
        };
        let catalogs = if o.catalogs.is_empty() {
            file.catalog.into_iter().chain(file.catalogs).map(rebase).collect()
        } else {
            o.catalogs.to_vec()
        };
        let bind_text = file.bind.as_deref().unwrap_or(DEFAULT_BIND);
        let bind = bind_text.parse().map_err(|_| Failure::Usage(format!("invalid bind address `{bind_text}`")))?;
        let lint_tolerance = match &file.lint_tolerance {
            Some(t) => {
                Score::parse_lenient(t).map_err(|e| Failure::Usage(format!("invalid lint_tolerance `{t}`: {e}")))?
            }
            None => Score::ZERO,
        };
        Ok(Settings {
            store: o.store.map(Path::to_path_buf).or(file.store.map(rebase)),
            catalogs,
            mode,
            mode_flag,
            bind,
            token: file.token,
            lint_tolerance,
        })
    }

    pub fn store_path(&self) -> Result<&Path, Failure> {
        self.store.as_deref().ok_or_else(|| Failure::Usage("no store configured (use --store or a config file)".into()))
    }
}
