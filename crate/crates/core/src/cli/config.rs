use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RoarError};
use crate::fieldsim::{lidar_occlusion_sector, WorldConfig};
use crate::fusion::Variant;
use crate::pipeline::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    /// Trailing fraction of episodes held out for evaluation.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 200,
            test_fraction: 0.2,
        }
    }
}

impl DataConfig {
    /// Number of leading episodes used for training.
    pub fn train_count(&self, total: usize) -> usize {
        total - ((total as f64 * self.test_fraction).ceil() as usize).min(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressConfig {
    /// Clear episodes per stress run.
    pub episodes: usize,
    /// Numbers of final frames to occlude.
    pub lengths: Vec<usize>,
    pub seed: u64,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            episodes: 20,
            lengths: vec![3],
            seed: 0,
        }
    }
}

/// Everything one command needs, read from a flat dotted-key TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub ablate: AblateConfig,
    pub stress: StressConfig,
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.world.problems();
        out.extend(self.train.problems());
        if self.data.episodes == 0 {
            out.push("data.episodes must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            out.push(format!(
                "data.test_fraction must lie in [0, 1) (got {})",
                self.data.test_fraction
            ));
        }
        for (name, p) in [
            ("paths.dataset_dir", &self.paths.dataset_dir),
            ("paths.checkpoint_dir", &self.paths.checkpoint_dir),
            ("paths.report_dir", &self.paths.report_dir),
        ] {
            if p.as_os_str().is_empty() {
                out.push(format!("{name} must not be empty"));
            } else if p.is_file() {
                out.push(format!("{name} {} is a file, not a directory", p.display()));
            }
        }
        if self.ablate.variants.is_empty() {
            out.push("ablate.variants must not be empty".into());
        }
        if self.ablate.seeds.is_empty() {
            out.push("ablate.seeds must not be empty".into());
        }
        if self.stress.episodes == 0 {
            out.push("stress.episodes must be >= 1".into());
        }
        let frames = if self.world.problems().is_empty() {
            self.world.frames_per_episode()
        } else {
            usize::MAX
        };
        if let Some(k) = self.stress.lengths.iter().find(|&&k| k > frames) {
            out.push(format!("stress.lengths entry {k} exceeds the {frames}-frame episode"));
        }
        out
    }

    /// The resolved config as TOML, headed by derived quantities as comments.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        let sector = lidar_occlusion_sector(self.world.lidar_beams, self.world.lidar_fov);
        format!(
            "# resolved configuration\n# derived: lidar occlusion sector = beams {}..={} of {}, frames per episode = {}\n\n{body}",
            sector.start(),
            sector.end(),
            self.world.lidar_beams,
            self.world.frames_per_episode(),
        )
    }
}

/// Parses `key=value`; values that are not valid TOML are taken as strings.
fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| RoarError::Config(vec![format!("override {item:?} is not key=value")]))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(RoarError::Config(vec![format!("override key {key:?} is malformed")]));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty key");
    let mut t = table;
    for p in parents {
        let entry = t
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| RoarError::Config(vec![format!("override {}: {p} is not a table", path.join("."))]))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

/// Parses a config text, applies `key=value` overrides, fills defaults and
/// checks every field. All problems are reported together.
pub fn validate_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| RoarError::Config(vec![one_line(&e.to_string())]))?;
    for item in overrides {
        let (path, value) = parse_override(item)?;
        set_path(&mut table, &path, value)?;
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| RoarError::Config(vec![one_line(&e.to_string())]))?;
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(RoarError::Config(problems))
    }
}

pub(crate) fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = validate_config("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.world.horizon, 10);
        assert_eq!(c.train.alpha, 6.21);
    }

    #[test]
    fn overrides_take_typed_and_bare_values() {
        let c = validate_config(
            "train.epochs = 3\n",
            &["world.lidar_beams=271".into(), "train.variant=no_state".into()],
        )
        .unwrap();
        assert_eq!(c.world.lidar_beams, 271);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.variant, Variant::NoState);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_itemized() {
        let e = validate_config("world.nope = 1\n", &[]).unwrap_err().to_string();
        assert!(e.contains("nope"), "{e}");
        match validate_config("train.alpha = -1\ntrain.beta = -2\n", &[]).unwrap_err() {
            RoarError::Config(items) => {
                assert_eq!(items.len(), 2);
                assert!(items[0].contains("train.alpha"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn resolved_toml_round_trips() {
        let c = validate_config("", &["world.lidar_beams=271".into()]).unwrap();
        let text = c.to_toml();
        assert!(text.contains("beams 28..=242 of 271"));
        assert_eq!(validate_config(&text, &[]).unwrap(), c);
    }

    #[test]
    fn test_split_rounds_up() {
        let d = DataConfig::default();
        assert_eq!(d.train_count(200), 160);
        assert_eq!(d.train_count(3), 2);
    }
}
