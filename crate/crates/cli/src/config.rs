//! Config loading: a single TOML file deserialized with unknown-key
//! rejection, plus dotted-path `--set key=value` overrides applied to the
//! raw tree before deserialization.

use std::path::Path;

use anglelab_core::harness::RunConfig;
use anglelab_core::regularizers::RegularizerConfig;
use serde::Deserialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad config file, bad override, or invalid run parameters; exit 1.
    Config(String),
    /// Filesystem trouble; exit 1.
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<anglelab_core::Error> for CliError {
    fn from(e: anglelab_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// A comparison experiment: one base run plus regularizer variants, all
/// sharing the base seed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub base: RunConfig,
    #[serde(default, rename = "variant")]
    pub variants: Vec<CompareVariant>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareVariant {
    pub name: String,
    pub regularizer: RegularizerConfig<f64>,
}

fn parse_toml_value(raw: &str) -> toml::Value {
    // Accept any TOML literal; fall back to a bare string.
    match toml::from_str::<toml::Value>(&format!("v = {raw}")) {
        Ok(toml::Value::Table(t)) => t
            .get("v")
            .cloned()
            .unwrap_or(toml::Value::String(raw.into())),
        _ => toml::Value::String(raw.to_string()),
    }
}

/// Applies `path.to.key=value` into the raw TOML tree. Intermediate tables
/// are created as needed; a misspelled leaf is caught later by
/// deny_unknown_fields.
pub fn apply_override(tree: &mut toml::Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Config(format!(
            "override '{assignment}' is not of the form key=value"
        ))
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!(
            "override path '{path}' is malformed"
        )));
    }
    let mut node = tree;
    for seg in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("'{seg}' in '{path}' is not a table")))?;
        node = table
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("'{path}' does not address a table entry")))?;
    table.insert(
        segments.last().unwrap().to_string(),
        parse_toml_value(raw.trim()),
    );
    Ok(())
}

fn load_tree(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<toml::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut tree: toml::Value =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for assignment in overrides {
        apply_override(&mut tree, assignment)?;
    }
    if let Some(s) = seed {
        apply_override(&mut tree, &format!("seed={s}"))?;
    }
    Ok(tree)
}

pub fn load_run_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let tree = load_tree(path, overrides, seed)?;
    let cfg: RunConfig = tree
        .try_into()
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

pub fn load_compare_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<CompareConfig, CliError> {
    let mut tree = load_tree(path, overrides, None)?;
    if let Some(s) = seed {
        apply_override(&mut tree, &format!("base.seed={s}"))?;
    }
    let cfg: CompareConfig = tree
        .try_into()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.variants.is_empty() {
        return Err(CliError::Config(
            "compare config needs at least one [[variant]]".into(),
        ));
    }
    cfg.base.validate().map_err(CliError::from)?;
    for v in &cfg.variants {
        v.regularizer.validate().map_err(CliError::from)?;
        if v.name.is_empty() || v.name.contains(',') {
            return Err(CliError::Config(format!(
                "variant name '{}' must be non-empty and comma-free",
                v.name
            )));
        }
    }
    Ok(cfg)
}
