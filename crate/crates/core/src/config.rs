//! JSON run configuration shared by every CLI command.
//!
//! Every section is optional; missing keys take their defaults. Command-line
//! flags override config keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::score::ScoreOptions;
use crate::synth::{SynthConfig, SynthDataset};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Architecture for `train`. When present, `score` and `inspect` also
    /// require the checkpoints to match it.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub score: ScoreOptions,
    pub paths: Paths,
}

/// File locations. Unset inputs default to the files `synth` writes into
/// `out`; checkpoints and reports also live in `out` unless redirected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: PathBuf,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    /// Write checkpoints every this many epochs; 0 writes only at the end.
    pub checkpoint_every: usize,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("run"),
            train_data: None,
            test_data: None,
            labels: None,
            checkpoints: None,
            scores: None,
            checkpoint_every: 0,
        }
    }
}

impl Paths {
    pub fn train_data(&self) -> PathBuf {
        self.train_data.clone().unwrap_or_else(|| self.out.join(SynthDataset::TRAIN_FILE))
    }

    pub fn test_data(&self) -> PathBuf {
        self.test_data.clone().unwrap_or_else(|| self.out.join(SynthDataset::TEST_FILE))
    }

    pub fn labels(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.out.join(SynthDataset::LABELS_FILE))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(|| self.out.clone())
    }

    pub fn scores(&self) -> PathBuf {
        self.scores.clone().unwrap_or_else(|| self.out.join("scores.csv"))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.clone().unwrap_or_default()
    }

    /// One seed for model init, window shuffling and synthesis.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.get_or_insert_with(ModelConfig::default).seed = seed;
        self.train.shuffle_seed = seed;
        self.synth.seed = seed;
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.train.threads = threads;
        self.score.threads = threads;
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_config();
        model.validate()?;
        self.train.validate(&model)?;
        self.synth.validate()?;
        self.score.validate()
    }
}

/// Fails with an I/O error unless `path` is an existing file.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

/// Creates `dir` if needed and checks that it accepts new files.
pub fn require_writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".mtp-write-probe");
    std::fs::write(&probe, b"").map_err(|e| Error::io(dir, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}
