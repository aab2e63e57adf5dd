//! Run configuration: a versioned TOML document with `--set key=value`
//! overrides applied before deserialization.
//!
//! Every section and key is optional; omitted values fall back to the
//! defaults below, which reproduce the desk-scale experiment end to end.
//! See the repository README for the full key reference.

use serde::Deserialize;

use auv_koopman::edmd::CollectOptions;
use auv_koopman::harness::ReferenceSignal;
use auv_koopman::mpc::MpcConfig;
use auv_koopman::plant::PlantParams;

use crate::CliError;

/// Config format version this binary understands.
pub const CONFIG_VERSION: u64 = 1;

fn default_version() -> u64 {
    CONFIG_VERSION
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u64,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub dictionary: DictionarySection,
    #[serde(default)]
    pub collect: CollectOptions,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub track: TrackSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            plant: PlantParams::default(),
            dictionary: DictionarySection::default(),
            collect: CollectOptions::default(),
            fit: FitSection::default(),
            mpc: MpcSection::default(),
            reference: ReferenceSection::default(),
            track: TrackSection::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionarySection {
    pub n_rbf: usize,
    pub center_low: f64,
    pub center_high: f64,
    pub width: f64,
    pub seed: u64,
}

impl Default for DictionarySection {
    fn default() -> Self {
        DictionarySection {
            n_rbf: 4,
            center_low: -1.0,
            center_high: 1.0,
            width: 1.0,
            seed: 21,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub alpha: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { alpha: 1e-6 }
    }
}

/// `[mpc]` starts from `preset` ("matlab" or "gazebo") and lets individual
/// keys override it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub preset: Option<String>,
    pub q_u: Option<f64>,
    pub q_n: Option<f64>,
    pub r: Option<f64>,
    pub horizon: Option<usize>,
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
    pub du_min: Option<f64>,
    pub du_max: Option<f64>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
}

impl MpcSection {
    pub fn build(&self) -> Result<MpcConfig, CliError> {
        let mut config = match self.preset.as_deref() {
            None | Some("matlab") => MpcConfig::matlab(),
            Some("gazebo") => MpcConfig::gazebo(),
            Some(other) => {
                return Err(CliError::config(format!(
                    "unknown mpc preset '{other}' (expected 'matlab' or 'gazebo')"
                )))
            }
        };
        if let Some(v) = self.q_u {
            config.q_u[(0, 0)] = v;
        }
        if let Some(v) = self.q_n {
            config.q_n[(0, 0)] = v;
        }
        if let Some(v) = self.r {
            config.r = v;
        }
        if let Some(v) = self.horizon {
            config.horizon = v;
        }
        if let Some(v) = self.u_min {
            config.u_min = v;
        }
        if let Some(v) = self.u_max {
            config.u_max = v;
        }
        if let Some(v) = self.du_min {
            config.du_min = v;
        }
        if let Some(v) = self.du_max {
            config.du_max = v;
        }
        if let Some(v) = self.x_min {
            config.x_min[0] = v;
        }
        if let Some(v) = self.x_max {
            config.x_max[0] = v;
        }
        config
            .validate(1)
            .map_err(|e| CliError::config(format!("invalid [mpc] section: {e}")))?;
        Ok(config)
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// `[[time, value], …]` breakpoints of the piecewise-constant reference.
    pub breakpoints: Vec<(f64, f64)>,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection {
            breakpoints: ReferenceSignal::default_profile().breakpoints().to_vec(),
        }
    }
}

impl ReferenceSection {
    pub fn build(&self) -> Result<ReferenceSignal, CliError> {
        ReferenceSignal::new(self.breakpoints.clone())
            .map_err(|e| CliError::config(format!("invalid [reference] section: {e}")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    pub duration: f64,
    pub v0: f64,
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection {
            duration: 12.0,
            v0: 0.0,
        }
    }
}

/// Loads the config file (or starts from defaults), applies `--set`
/// overrides, and deserializes.
pub fn load_config(path: Option<&std::path::Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", p.display()))
            })?;
            text.parse()
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };

    for entry in sets {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set '{entry}': expected key=value")))?;
        apply_override(&mut table, key.trim(), value.trim())?;
    }

    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::config(format!("invalid configuration: {e}")))?;
    if config.version != CONFIG_VERSION {
        return Err(CliError::config(format!(
            "unsupported config version {} (this build reads version {CONFIG_VERSION})",
            config.version
        )));
    }
    Ok(config)
}

/// Writes `value` at the dotted `path`, creating intermediate tables. The
/// value text is parsed as TOML (so numbers, booleans, and arrays work);
/// anything that does not parse is taken as a bare string.
fn apply_override(table: &mut toml::Table, path: &str, value: &str) -> Result<(), CliError> {
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v just inserted"),
        Err(_) => toml::Value::String(value.to_string()),
    };

    let mut current = table;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!(
            "--set: empty segment in key '{path}'"
        )));
    }
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::config(format!("--set: '{part}' in '{path}' is not a table"))
            })?;
    }
    current.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
