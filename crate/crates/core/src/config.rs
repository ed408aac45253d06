//! Run configuration, read from a TOML file. Relative paths are resolved
//! against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::MatchConfig;
use crate::ingest::{ColumnMap, IngestOptions, LotOptions, DEFAULT_SEPARATORS, DEFAULT_UNSUCCESSFUL_MARKERS};
use crate::merge::DEFAULT_MERGE_THRESHOLD;
use crate::normalize::{PostalColumns, DEFAULT_POSTAL_TOKENS};
use crate::registry::RegistryColumns;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    /// TED award tables, processed in this order.
    pub ted: Vec<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub registry_entities: PathBuf,
    pub registry_facilities: PathBuf,
    pub postal: PathBuf,
    /// `cpv_prefix,activity` compatibility pairs. Without it the activity
    /// filter is off.
    pub activity_table: Option<PathBuf>,
    /// `keyword,class` pairs replacing the built-in criterion lexicon.
    pub lexicon: Option<PathBuf>,
    /// One contract-notice id per line, for notice coverage.
    pub contract_notices: Option<PathBuf>,
    /// Manually retrieved SIRETs (`notice_id,lot_number,role,name,siret`).
    pub ground_truth: Option<PathBuf>,
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Default for Period {
    fn default() -> Self {
        let lots = LotOptions::default();
        Self {
            start: lots.period_start,
            end: lots.period_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub threshold: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MERGE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Distinct agents sampled per role for masked evaluation.
    pub sample_per_role: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { sample_per_role: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputPaths,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub registry_columns: RegistryColumns,
    #[serde(default)]
    pub postal_columns: PostalColumns,
    #[serde(default)]
    pub period: Period,
    #[serde(default = "default_separators")]
    pub separators: Vec<String>,
    #[serde(default = "default_postal_tokens")]
    pub postal_tokens: Vec<String>,
    #[serde(default = "default_markers")]
    pub unsuccessful_markers: Vec<String>,
    #[serde(default = "default_currency")]
    pub default_currency: String,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub merge: MergeConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub jobs: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn strings(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn default_separators() -> Vec<String> {
    strings(DEFAULT_SEPARATORS)
}

fn default_postal_tokens() -> Vec<String> {
    strings(DEFAULT_POSTAL_TOKENS)
}

fn default_markers() -> Vec<String> {
    strings(DEFAULT_UNSUCCESSFUL_MARKERS)
}

fn default_currency() -> String {
    "EUR".into()
}

impl PipelineConfig {
    /// A configuration with default settings over the given inputs.
    pub fn with_inputs(input: InputPaths, output: PathBuf) -> Self {
        Self {
            input,
            output,
            columns: ColumnMap::default(),
            registry_columns: RegistryColumns::default(),
            postal_columns: PostalColumns::default(),
            period: Period::default(),
            separators: default_separators(),
            postal_tokens: default_postal_tokens(),
            unsuccessful_markers: default_markers(),
            default_currency: default_currency(),
            matching: MatchConfig::default(),
            merge: MergeConfig::default(),
            evaluation: EvaluationConfig::default(),
            seed: 0,
            jobs: 0,
        }
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            columns: self.columns.clone(),
            delimiter: self.input.delimiter as u8,
            separators: self.separators.clone(),
            lots: LotOptions {
                period_start: self.period.start,
                period_end: self.period.end,
                default_currency: self.default_currency.clone(),
                unsuccessful_markers: self
                    .unsuccessful_markers
                    .iter()
                    .map(|m| crate::normalize::normalize_name(m))
                    .collect(),
            },
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.input;
        i.ted.iter_mut().for_each(fix);
        fix(&mut i.registry_entities);
        fix(&mut i.registry_facilities);
        fix(&mut i.postal);
        for p in [&mut i.activity_table, &mut i.lexicon, &mut i.contract_notices, &mut i.ground_truth]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output);
    }

    /// Every violated rule, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let i = &self.input;
        if i.ted.is_empty() {
            errors.push("input.ted lists no table".into());
        }
        let mut paths: Vec<(&str, &Path)> = i.ted.iter().map(|p| ("input.ted", p.as_path())).collect();
        paths.push(("input.registry_entities", &i.registry_entities));
        paths.push(("input.registry_facilities", &i.registry_facilities));
        paths.push(("input.postal", &i.postal));
        for (name, p) in [
            ("input.activity_table", &i.activity_table),
            ("input.lexicon", &i.lexicon),
            ("input.contract_notices", &i.contract_notices),
            ("input.ground_truth", &i.ground_truth),
        ] {
            if let Some(p) = p {
                paths.push((name, p));
            }
        }
        for (name, p) in paths {
            if !p.is_file() {
                errors.push(format!("{name}: file not found: {}", p.display()));
            }
        }
        if !i.delimiter.is_ascii() {
            errors.push(format!("input.delimiter {:?} must be a single ASCII character", i.delimiter));
        }
        if !self.registry_columns.delimiter.is_ascii() {
            errors.push("registry_columns.delimiter must be ASCII".into());
        }
        if !self.postal_columns.delimiter.is_ascii() {
            errors.push("postal_columns.delimiter must be ASCII".into());
        }
        errors.extend(self.matching.validate());
        if !(0.0..=1.0).contains(&self.merge.threshold) {
            errors.push(format!("merge.threshold = {} is outside [0, 1]", self.merge.threshold));
        }
        if self.period.start > self.period.end {
            errors.push(format!(
                "period.start {} is after period.end {}",
                self.period.start, self.period.end
            ));
        }
        if self.separators.iter().any(|s| s.is_empty()) {
            errors.push("separators must not contain an empty string".into());
        }
        errors
    }
}

/// Parses and validates a configuration file. An unreadable or malformed
/// file is a single error; otherwise every violated rule is reported.
pub fn validate_config(path: &Path) -> std::result::Result<PipelineConfig, Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let mut config: PipelineConfig =
        toml::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve(&base);
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(problems)
    }
}

/// [`validate_config`] with the error list folded into one config error.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    validate_config(path).map_err(|errs| Error::Config(errs.join("\n")))
}
