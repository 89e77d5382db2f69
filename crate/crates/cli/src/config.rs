//! The declarative run file and its command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use cwh::eval::EvalConfig;
use cwh::{CwhError, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub interactions: PathBuf,
    /// optional for CF-only runs
    pub content: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub rating_threshold: f64,
}

fn default_threshold() -> f64 {
    cwh::data::IngestOptions::default().rating_threshold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub min_items: usize,
    pub seed: u64,
    pub offsets: Vec<usize>,
    /// adjacent residue classes per cold set
    pub cold_width: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            min_items: 8,
            seed: 0,
            offsets: vec![0],
            cold_width: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub unified_warm_ratio: f64,
    pub seed: u64,
    /// `r` values of the popularity-regime slices
    pub regimes: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            ks: e.ks,
            unified_warm_ratio: e.unified_warm_ratio,
            seed: e.seed,
            regimes: vec![0, 40, 100, 200, 500],
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ks: self.ks.clone(),
            unified_warm_ratio: self.unified_warm_ratio,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            gammas: (0..=10).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// worker threads for evaluation; 1 keeps every run reproducible
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("cwh-out")
}

fn default_threads() -> usize {
    1
}

impl RunConfig {
    /// Parses `path`; relative data paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CwhError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CwhError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CwhError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        config.data.interactions = resolve(&config.data.interactions);
        config.data.content = config.data.content.as_deref().map(resolve);
        config.output_dir = resolve(&config.output_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CwhError> {
        if !self.data.interactions.is_file() {
            return Err(CwhError::Config(format!(
                "interactions file {} does not exist",
                self.data.interactions.display()
            )));
        }
        match &self.data.content {
            Some(p) if !p.is_file() => {
                return Err(CwhError::Config(format!("content file {} does not exist", p.display())));
            }
            None if self.train.kind.supports_cold() => {
                return Err(CwhError::Config(format!(
                    "model kind {} uses content analyzers but no content file is configured",
                    self.train.kind.name()
                )));
            }
            _ => {}
        }
        if self.split.offsets.is_empty() {
            return Err(CwhError::Config("split.offsets is empty".into()));
        }
        if let Some(g) = self.sweep.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(CwhError::Config(format!("sweep gamma {g} not in [0, 1]")));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(CwhError::Config("eval.ks must be non-empty positive integers".into()));
        }
        if !(self.eval.unified_warm_ratio > 0.0 && self.eval.unified_warm_ratio < 1.0) {
            return Err(CwhError::Config("eval.unified_warm_ratio must be in (0, 1)".into()));
        }
        self.train.validate()
    }

    /// Writes the configuration actually in effect next to the outputs.
    pub fn echo(&self, dir: &Path) -> Result<(), CwhError> {
        fs::create_dir_all(dir).map_err(|e| CwhError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let text = toml::to_string(self).map_err(|e| CwhError::Config(format!("cannot serialize config: {e}")))?;
        let path = dir.join("effective_config.toml");
        fs::write(&path, text).map_err(|e| CwhError::Config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn manifest_path(&self, offset: usize) -> PathBuf {
        self.output_dir.join("splits").join(format!("fold_{offset}.csv"))
    }

    /// Output directory of one trained model.
    pub fn run_dir(&self, offset: usize) -> PathBuf {
        let t = &self.train;
        self.output_dir
            .join("runs")
            .join(format!("{}_gamma{}_seed{}_fold{offset}", t.kind.name(), t.gamma, t.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults_and_resolved_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\ninteractions = \"log.csv\"\ncontent = \"/abs/content.csv\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.data.interactions, dir.path().join("log.csv"));
        assert_eq!(c.data.content, Some(PathBuf::from("/abs/content.csv")));
        assert_eq!(c.output_dir, dir.path().join("cwh-out"));
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.split.min_items, 8);
        assert_eq!(c.threads, 1);
        assert_eq!(c.sweep.gammas.len(), 11);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\ninteractions = \"x.csv\"\ncolour = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(CwhError::Config(_))));

        fs::write(dir.path().join("x.csv"), "user_id,item_id\n").unwrap();
        fs::write(&path, "[data]\ninteractions = \"x.csv\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        // the default model kind needs content
        assert!(matches!(c.validate(), Err(CwhError::Config(m)) if m.contains("content")));

        fs::write(
            &path,
            "[data]\ninteractions = \"x.csv\"\n[train]\nkind = \"cf_only\"\n[sweep]\ngammas = [0.5, 1.5]\n",
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert!(matches!(c.validate(), Err(CwhError::Config(m)) if m.contains("1.5")));
    }

    #[test]
    fn full_example_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let text = r#"
output_dir = "out"
threads = 1
precision = "f32"

[data]
interactions = "log.csv"
content = "content.csv"

[split]
min_items = 8
seed = 0
offsets = [0, 1, 2]

[train]
kind = "cwh"
gamma = 0.5
dim = 32
hidden = 32
max_epochs = 20
patience = 5
seed = 0
adam = { learning_rate = 0.005 }

[train.analyzers]
tags = 32
text = { dim = 32, hash_dim = 4096 }

[eval]
ks = [10, 20]
regimes = [0, 40, 100, 200, 500]

[sweep]
gammas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
"#;
        fs::write(&path, text).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.train.adam.learning_rate, 0.005);
        assert_eq!(c.train.adam.beta2, 0.999);
        assert_eq!(c.train.analyzers.text.as_ref().unwrap().max_tokens, 512);
        assert_eq!(c.train.analyzers.numeric, None);
        assert_eq!(c.split.offsets, vec![0, 1, 2]);
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\ninteractions = \"log.csv\"\n[train]\ngamma = 0.3\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        c.echo(dir.path()).unwrap();
        let back: RunConfig =
            toml::from_str(&fs::read_to_string(dir.path().join("effective_config.toml")).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
