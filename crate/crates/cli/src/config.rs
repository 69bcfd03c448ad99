//! The run configuration: one TOML file, overridable from the environment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use terrapref::camera::CameraModel;
use terrapref::kinematics::PreferenceConfig;
use terrapref::learner::TrainConfig;
use terrapref::planner::EpisodeConfig;
use terrapref::scenarios;
use terrapref::sim::ScriptedOracle;
use terrapref::world::Scenario;

/// Environment variables `TERRAPREF__<SECTION>__<KEY>=<value>` override
/// single config keys. Values are read as TOML, falling back to a string.
pub const ENV_OVERRIDE_PREFIX: &str = "TERRAPREF__";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preference: PreferenceConfig,
    pub camera: CameraModel,
    pub training: TrainConfig,
    pub episode: EpisodeConfig,
    pub oracle: OracleConfig,
    pub collect: CollectConfig,
    pub serve: ServeConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Penalties for (non-traversable, water, rock, mud).
    pub penalties: [f64; 4],
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            penalties: ScriptedOracle::default().penalties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    /// Bundled scenario name or path to a scenario JSON file.
    pub scenario: String,
    /// Upper bound on the recording, seconds; reaching the goal ends it sooner.
    pub duration: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            scenario: scenarios::TRAINING_COURSE.into(),
            duration: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// Directory with the browser UI, served at `/`.
    pub static_dir: Option<PathBuf>,
    pub time_scale: f64,
    pub stall_timeout_ms: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            static_dir: None,
            time_scale: 1.0,
            stall_timeout_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Groups (`train`, `test`, `generalization`, `all`), bundled scenario
    /// names or scenario JSON files.
    pub scenarios: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["test".into(), "generalization".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Output directory for everything a command writes.
    pub out: PathBuf,
    /// Dataset file; defaults to `<out>/dataset.jsonl`.
    pub dataset: Option<PathBuf>,
    /// Model file; defaults to `<out>/model.bin`.
    pub model: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs"),
            dataset: None,
            model: None,
        }
    }
}

impl PathsConfig {
    pub fn dataset(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset.jsonl"))
    }

    pub fn model(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.bin"))
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults), then applies environment overrides.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in env {
            if let Some(key) = key.strip_prefix(ENV_OVERRIDE_PREFIX) {
                set_key(&mut table, key, &value).with_context(|| format!("{ENV_OVERRIDE_PREFIX}{key}"))?;
            }
        }
        let config: RunConfig = table.try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.training.m != self.preference.m {
            bail!(
                "training.m ({}) must equal preference.m ({})",
                self.training.m,
                self.preference.m
            );
        }
        self.training.validate()?;
        self.camera.validate()?;
        ScriptedOracle::new(self.oracle.penalties)?;
        if !(self.collect.duration > 0.0) {
            bail!("collect.duration must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }
}

fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> anyhow::Result<()> {
    let parts: Vec<String> = key.split("__").map(str::to_lowercase).collect();
    if parts.iter().any(String::is_empty) {
        bail!("malformed override key");
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, sections) = parts.split_last().expect("non-empty");
    let mut current = table;
    for section in sections {
        current = current
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("{section} is not a section"))?;
    }
    current.insert(last.clone(), value);
    Ok(())
}

/// Resolves scenario selectors to scenarios, in order, without duplicates.
pub fn resolve_scenarios(selectors: &[String]) -> anyhow::Result<Vec<Scenario>> {
    let mut out: Vec<Scenario> = Vec::new();
    for selector in selectors {
        let found = match selector.as_str() {
            "train" => scenarios::training_scenarios(),
            "test" => scenarios::test_scenarios(),
            "generalization" => vec![scenarios::generalization_scenario()],
            "all" => scenarios::all_scenarios(),
            other => vec![resolve_scenario(other)?],
        };
        for s in found {
            if !out.iter().any(|o| o.name == s.name) {
                out.push(s);
            }
        }
    }
    if out.is_empty() {
        bail!("no scenarios selected");
    }
    Ok(out)
}

/// A bundled scenario name, or else a scenario JSON file.
pub fn resolve_scenario(selector: &str) -> anyhow::Result<Scenario> {
    if let Some(s) = scenarios::by_name(selector) {
        return Ok(s);
    }
    let path = Path::new(selector);
    if !path.exists() {
        bail!("{selector} is neither a bundled scenario nor a file (try `terrapref scenarios list`)");
    }
    Ok(Scenario::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig::default();
        let text = config.to_toml();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(RunConfig::load(Some(&path), []).unwrap(), config);
    }

    #[test]
    fn environment_overrides_single_keys() {
        let config = RunConfig::load(
            None,
            env(&[
                ("TERRAPREF__TRAINING__EPOCHS", "3"),
                ("TERRAPREF__PATHS__OUT", "/tmp/x"),
                ("TERRAPREF__ORACLE__PENALTIES", "[40, 20, 10, 1]"),
                ("UNRELATED", "1"),
            ]),
        )
        .unwrap();
        assert_eq!(config.training.epochs, 3);
        assert_eq!(config.paths.out, PathBuf::from("/tmp/x"));
        assert_eq!(config.oracle.penalties, [40.0, 20.0, 10.0, 1.0]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::load(None, env(&[("TERRAPREF__TRAINING__EPOCHZ", "3")])).is_err());
        assert!(RunConfig::load(None, env(&[("TERRAPREF__TRAINING__M", "11")])).is_err());
        assert!(RunConfig::load(None, env(&[("TERRAPREF__ORACLE__PENALTIES", "[1, 2, 3, 4]")])).is_err());
        assert!(RunConfig::load(Some(Path::new("/no/such/file.toml")), []).is_err());
    }

    #[test]
    fn scenario_selectors() {
        let names = |sel: &[&str]| -> Vec<String> {
            let sel: Vec<String> = sel.iter().map(|s| s.to_string()).collect();
            resolve_scenarios(&sel).unwrap().into_iter().map(|s| s.name).collect()
        };
        assert_eq!(names(&["test"]).len(), 7);
        assert_eq!(names(&["test", "test-1-water", "generalization"]).len(), 8);
        assert_eq!(names(&["all"]).len(), 18);
        assert!(resolve_scenarios(&["no-such-scenario".into()]).is_err());
    }
}
