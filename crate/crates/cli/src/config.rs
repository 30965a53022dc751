//! Run configuration files: TOML on disk, dotted-key overrides on the command
//! line, and the resolved snapshot written next to every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sacc_core::data::DatasetSpec;
use sacc_core::model::ModelConfig;
use sacc_core::train::{AugConfig, RunConfig, TrainConfig};

use crate::CliError;

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "SACC_OUTPUT_ROOT";

/// File name of the resolved configuration snapshot.
pub const SNAPSHOT_NAME: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub aug: AugConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            aug: AugConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfigFile {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            aug: self.aug.clone(),
        }
    }

    /// `output_dir`, joined onto `$SACC_OUTPUT_ROOT` when it is relative and
    /// the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.run_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn write_snapshot(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(SNAPSHOT_NAME);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

pub fn resolve_output(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

/// Reads `path` (or starts from defaults when `None`) and applies overrides.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfigFile, CliError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
    // typed parse first so unknown keys and type errors carry line numbers
    let parsed: RunConfigFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    if overrides.is_empty() {
        return Ok(parsed);
    }
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    for (key, raw) in overrides {
        set_dotted(&mut table, key, parse_value(raw))?;
    }
    RunConfigFile::deserialize(toml::Value::Table(table))
        .map_err(|e| CliError::Config(format!("after overrides {}: {e}", describe(overrides))))
}

fn describe(overrides: &[(String, String)]) -> String {
    overrides.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for (i, p) in path.iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{}` is not a table", parts[..=i].join("."))))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Splits trailing arguments of the form `--a.b value`, `--a.b=value` or
/// `a.b=value` into key/value pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let body = arg.strip_prefix("--").unwrap_or(arg);
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else if arg.starts_with("--") {
            let v = it
                .next()
                .ok_or_else(|| CliError::Config(format!("override `{arg}` is missing a value")))?;
            out.push((body.to_string(), v.clone()));
        } else {
            return Err(CliError::Config(format!("unexpected argument `{arg}`; overrides look like --train.epochs 5")));
        }
    }
    Ok(out)
}
