//! Run configuration: a TOML file whose relative paths resolve against the
//! file's directory, overridden by command-line flags.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use artqa_core::classifier::ClassifierConfig;
use artqa_core::metrics;
use artqa_core::neural::OptimConfig;
use artqa_core::qa::QaConfig;
use artqa_core::train::TrainConfig;
use artqa_core::transformer::EncoderConfig;
use artqa_core::vqa::VqaConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "ARTQA_DATA_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub classifier: ClassifierSection,
    pub qa: QaSection,
    pub vqa: VqaSection,
    pub service: ServiceSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Canonical dataset directory.
    pub data: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    /// Text word-vector file for the VQA question encoder.
    pub word_vectors: Option<PathBuf>,
    /// Region feature files; defaults to `<data>/features`.
    pub features: Option<PathBuf>,
    /// Imported (canonical) VQA v2 and OK-VQA question pools.
    pub vqa2: Option<PathBuf>,
    pub okvqa: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    /// Stop once the validation metric reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            clip_norm: Some(5.0),
            stop_at: None,
        }
    }
}

impl TrainingSection {
    fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            ..Self::default()
        }
    }

    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        let mut optim = OptimConfig::adam(self.learning_rate);
        optim.clip_norm = self.clip_norm;
        let mut cfg = TrainConfig::new(self.epochs, self.batch_size, optim, seed);
        cfg.stop_at = self.stop_at;
        cfg
    }

    fn validate(&self, section: &str) -> Result<(), CliError> {
        self.to_train_config(0)
            .validate()
            .map_err(|e| CliError::Usage(format!("{section}.training: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionSource {
    /// Generated template questions.
    Templated,
    /// Typed questions of the dataset under `paths.data`.
    Dataset,
    /// A balanced set drawn from `paths.vqa2` (visual) and `paths.okvqa`
    /// (contextual).
    Pools,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub source: QuestionSource,
    pub templated_train: usize,
    pub templated_heldout: usize,
    pub training: TrainingSection,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            max_len: 40,
            source: QuestionSource::Templated,
            templated_train: 2000,
            templated_heldout: 1000,
            training: TrainingSection::with_epochs(3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaSection {
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub max_answer: usize,
    pub training: TrainingSection,
}

impl Default for QaSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            max_len: 160,
            max_answer: 30,
            training: TrainingSection::with_epochs(30),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqaSection {
    pub embed_dim: usize,
    pub hidden: usize,
    pub region_dim: usize,
    pub attention_dim: usize,
    pub common_dim: usize,
    pub head_dim: usize,
    /// Grid size for extracted features (`grid × grid` regions).
    pub grid: usize,
    pub top_answers: usize,
    pub training: TrainingSection,
}

impl Default for VqaSection {
    fn default() -> Self {
        let d = VqaConfig::default();
        Self {
            embed_dim: d.embed_dim,
            hidden: d.hidden,
            region_dim: d.region_dim,
            attention_dim: d.attention_dim,
            common_dim: d.common_dim,
            head_dim: d.head_dim,
            grid: 6,
            top_answers: 1000,
            training: TrainingSection::with_epochs(60),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl RunConfig {
    /// Parses `path`; relative paths inside are made relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.data, &mut p.checkpoints, &mut p.word_vectors, &mut p.features, &mut p.vqa2, &mut p.okvqa] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |field: &str, e: artqa_core::Error| CliError::Usage(format!("{field}: {e}"));
        artqa_core::datasets::split::validate_ratios(self.split.ratios).map_err(|e| usage("split.ratios", e))?;
        self.classifier_config(0).validate().map_err(|e| usage("classifier", e))?;
        self.qa_config(0).validate().map_err(|e| usage("qa", e))?;
        self.vqa_config(0).validate().map_err(|e| usage("vqa", e))?;
        self.classifier.training.validate("classifier")?;
        self.qa.training.validate("qa")?;
        self.vqa.training.validate("vqa")?;
        if self.vqa.grid == 0 {
            return Err(CliError::Usage("vqa.grid must be at least 1".into()));
        }
        if self.vqa.top_answers == 0 {
            return Err(CliError::Usage("vqa.top_answers must be at least 1".into()));
        }
        if self.classifier.templated_train < 2 || self.classifier.templated_heldout == 0 {
            return Err(CliError::Usage(
                "classifier.templated_train must be at least 2 and classifier.templated_heldout at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn classifier_config(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            encoder: self.classifier.encoder.clone(),
            max_len: self.classifier.max_len,
            seed,
        }
    }

    pub fn qa_config(&self, seed: u64) -> QaConfig {
        QaConfig {
            encoder: self.qa.encoder.clone(),
            max_len: self.qa.max_len,
            max_answer: self.qa.max_answer,
            seed,
        }
    }

    pub fn vqa_config(&self, seed: u64) -> VqaConfig {
        let v = &self.vqa;
        VqaConfig {
            embed_dim: v.embed_dim,
            hidden: v.hidden,
            region_dim: v.region_dim,
            attention_dim: v.attention_dim,
            common_dim: v.common_dim,
            head_dim: v.head_dim,
            seed,
        }
    }
}

/// Values given on the command line; each wins over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug)]
pub struct Settings {
    pub config: RunConfig,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub features_dir: PathBuf,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut config = match &o.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if o.seed.is_some() {
            config.seed = o.seed;
        }
        config.validate()?;
        let data_dir = o
            .data_dir
            .clone()
            .or_else(|| config.paths.data.clone())
            .or_else(|| env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        let checkpoint_dir = o
            .checkpoint_dir
            .clone()
            .or_else(|| config.paths.checkpoints.clone())
            .unwrap_or_else(|| PathBuf::from("checkpoints"));
        let features_dir = config
            .paths
            .features
            .clone()
            .unwrap_or_else(|| data_dir.join("features"));
        Ok(Self {
            config,
            data_dir,
            checkpoint_dir,
            features_dir,
            out: o.out.clone(),
        })
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.config
            .seed
            .ok_or_else(|| CliError::Usage("seed: required (set `seed` in the config or pass --seed)".into()))
    }

    /// Checks that a directory named by a config field exists.
    pub fn require_dir(&self, field: &str, path: &Path) -> Result<(), CliError> {
        if path.is_dir() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("{field}: directory {} does not exist", path.display())))
        }
    }

    pub fn require_data(&self) -> Result<(), CliError> {
        self.require_dir("paths.data", &self.data_dir)?;
        if let Some(w) = &self.config.paths.word_vectors {
            if !w.is_file() {
                return Err(CliError::Usage(format!(
                    "paths.word_vectors: file {} does not exist",
                    w.display()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the model and split options plus the seed.
    /// Paths are left out so moving a run does not change it.
    pub fn fingerprint(&self) -> String {
        let c = &self.config;
        let key = serde_json::json!({
            "seed": c.seed,
            "split": c.split,
            "classifier": c.classifier,
            "qa": c.qa,
            "vqa": c.vqa,
        });
        metrics::fingerprint(&key.to_string())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.checkpoint_dir.join("reports"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "seed = 3\n[paths]\ndata = \"d\"\n[qa.training]\nepochs = 2\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.paths.data.unwrap(), dir.path().join("d"));
        assert_eq!(cfg.qa.training.epochs, 2);
        assert_eq!(cfg.qa.max_len, 160);
    }

    #[test]
    fn unknown_and_invalid_fields_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "seed = 3\n[qa]\nmax_lenn = 2\n").unwrap();
        let err = RunConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("max_lenn"), "{err}");
        fs::write(&p, "seed = 3\n[vqa.training]\nepochs = 0\n").unwrap();
        let err = RunConfig::load(&p).unwrap().validate().unwrap_err().to_string();
        assert!(err.starts_with("vqa.training"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let s = Settings::resolve(&Overrides::default()).unwrap();
        assert!(s.seed().unwrap_err().to_string().starts_with("seed"));
        let s = Settings::resolve(&Overrides {
            seed: Some(4),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(s.seed().unwrap(), 4);
    }

    #[test]
    fn fingerprint_tracks_seed_not_paths() {
        let a = Settings::resolve(&Overrides {
            seed: Some(1),
            data_dir: Some("x".into()),
            ..Overrides::default()
        })
        .unwrap();
        let b = Settings::resolve(&Overrides {
            seed: Some(1),
            data_dir: Some("y".into()),
            ..Overrides::default()
        })
        .unwrap();
        let c = Settings::resolve(&Overrides {
            seed: Some(2),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
