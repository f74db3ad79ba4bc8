//! Flat TOML config file and provider selection.
//!
//! Every key is optional and command-line flags win over file values:
//!
//! ```toml
//! ratio = 4.0
//! mode = "dynamic"
//! provider = "ref"
//! seed = 7
//! template = "{s}\n{c}\nQ: {q}\nA:"
//! endpoint = "http://localhost:8000/v1"
//! model = "local"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use ctxcomp::template::PromptTemplate;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_INSTRUCTION: &str = "Answer the question based on the given context.";
pub const DEFAULT_API_KEY_ENV: &str = "CTXCOMP_API_KEY";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub ratio: Option<f64>,
    pub mode: Option<String>,
    pub scope: Option<String>,
    pub provider: Option<String>,
    pub sigma: Option<f64>,
    pub radius: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub trace: Option<bool>,
    /// Template pattern itself, not a path.
    pub template: Option<String>,
    pub instruction: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub max_in_flight: Option<usize>,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn template(&self) -> Result<Option<PromptTemplate>, CliError> {
        self.template
            .as_deref()
            .map(|t| PromptTemplate::parse(t).map_err(|e| CliError::invalid(format!("config template: {e}"))))
            .transpose()
    }

    pub fn timeout(&self) -> Result<Option<Duration>, CliError> {
        self.timeout_secs.map(parse_timeout).transpose()
    }

    /// Bearer token from the configured (or default) environment variable.
    pub fn bearer_token(&self) -> Option<String> {
        let var = self.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        std::env::var(var).ok().filter(|v| !v.is_empty())
    }
}

pub fn parse_timeout(secs: f64) -> Result<Duration, CliError> {
    if secs.is_finite() && secs > 0.0 {
        Ok(Duration::from_secs_f64(secs))
    } else {
        Err(CliError::invalid(format!("timeout must be a positive number of seconds, got {secs}")))
    }
}

/// Read a template file, dropping one trailing newline.
pub fn read_template(path: &Path) -> Result<PromptTemplate, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("cannot read template {}: {e}", path.display())))?;
    let text = text
        .strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(&text);
    PromptTemplate::parse(text).map_err(|e| CliError::invalid(format!("template {}: {e}", path.display())))
}

/// Template precedence: `--template` file, then the config's pattern, then the
/// built-in default.
pub fn resolve_template(flag: Option<&Path>, file: &FileConfig) -> Result<PromptTemplate, CliError> {
    match flag {
        Some(path) => read_template(path),
        None => Ok(file.template()?.unwrap_or_default()),
    }
}

/// Where trigger attention comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Reference,
    Recorded(PathBuf),
    Remote(String),
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ref" || s == "reference" {
            return Ok(Self::Reference);
        }
        if let Some(dir) = s.strip_prefix("recorded:") {
            if dir.is_empty() {
                return Err("recorded provider needs a directory (recorded:DIR)".into());
            }
            return Ok(Self::Recorded(PathBuf::from(dir)));
        }
        if let Some(url) = s.strip_prefix("remote:") {
            check_url(url)?;
            return Ok(Self::Remote(url.to_string()));
        }
        Err(format!("unknown provider {s:?} (expected ref, recorded:DIR or remote:URL)"))
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reference => f.write_str("ref"),
            Self::Recorded(dir) => write!(f, "recorded:{}", dir.display()),
            Self::Remote(url) => write!(f, "remote:{url}"),
        }
    }
}

pub fn check_url(url: &str) -> Result<(), String> {
    let rest = url
        .strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"))
        .ok_or_else(|| format!("endpoint {url:?} must start with http:// or https://"))?;
    let host = rest.split(['/', '?', '#']).next().unwrap_or_default();
    if host.is_empty() || host.contains(char::is_whitespace) {
        return Err(format!("endpoint {url:?} has no host"));
    }
    Ok(())
}

/// Flag value if given, else the config value parsed with `FromStr`.
pub(crate) fn pick_parsed<T: FromStr<Err = String>>(
    flag: Option<T>,
    file: Option<&str>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file
            .map(|s| s.parse::<T>().map_err(|e| CliError::invalid(format!("config {key}: {e}"))))
            .transpose(),
    }
}
