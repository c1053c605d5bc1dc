//! Engine configuration, loaded from a TOML file.
//!
//! ```toml
//! seed = 7
//! balancing = "equal_size"
//! metrics = ["probability", "semantic_entropy"]
//! model_id = "llama-3.1-8b"
//!
//! [curation]
//! edit_distance_min = 2
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certainty::{default_skip_tokens, MetricId};
use crate::curation::{CurationConfig, ModelFlags, SynonymLexicon};
use crate::error::{ChokeError, Result};
use crate::threshold::Balancing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub skip_tokens: Vec<String>,
    pub curation: CurationConfig,
    pub balancing: Balancing,
    pub n_permutations: usize,
    pub seed: u64,
    pub metrics: Vec<MetricId>,
    pub grid_size: usize,
    /// Label used in the `model` column of tabular outputs.
    pub model_id: String,
    /// The model wraps answers in the curation formatting marker.
    pub star_formatting: bool,
    /// Word → synonyms JSON file; relative paths resolve against the config
    /// file's directory.
    pub synonym_lexicon: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            skip_tokens: default_skip_tokens(),
            curation: CurationConfig::default(),
            balancing: Balancing::EqualSize,
            n_permutations: 10_000,
            seed: 0,
            metrics: MetricId::ALL.to_vec(),
            grid_size: 200,
            model_id: "model".into(),
            star_formatting: false,
            synonym_lexicon: None,
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| ChokeError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Load the config and, if one is named, its synonym lexicon.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChokeError::MissingInput(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(lex) = &cfg.synonym_lexicon {
            let lex = if lex.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(lex)
            } else {
                lex.clone()
            };
            cfg.curation.synonyms = SynonymLexicon::load(&lex)?;
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_permutations < 1 {
            return Err(ChokeError::Config("n_permutations must be at least 1".into()));
        }
        if self.metrics.is_empty() {
            return Err(ChokeError::Config("metrics must be nonempty".into()));
        }
        self.curation.check()
    }

    pub fn model_flags(&self) -> ModelFlags {
        ModelFlags { star_formatting: self.star_formatting }
    }

    /// SHA-256 over the resolved configuration, lexicon contents included.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(serde_json::to_vec(&self.curation.synonyms).expect("lexicon serializes"));
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = EngineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, EngineConfig::default());
        assert_eq!(cfg.n_permutations, 10_000);
        assert_eq!(cfg.grid_size, 200);
        assert_eq!(cfg.skip_tokens.len(), 29);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = EngineConfig::from_toml_str(
            "seed = 9\nmetrics = [\"probability\"]\nbalancing = \"natural_ratio\"\n[curation]\nedit_distance_min = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.metrics, vec![MetricId::Probability]);
        assert_eq!(cfg.balancing, Balancing::NaturalRatio);
        assert_eq!(cfg.curation.edit_distance_min, 3);

        assert!(EngineConfig::from_toml_str("metrics = []").is_err());
        assert!(EngineConfig::from_toml_str("n_permutations = 0").is_err());
        assert!(EngineConfig::from_toml_str("bogus = 1").is_err());
        assert!(EngineConfig::from_toml_str("metrics = [\"nll\"]").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = EngineConfig::default();
        let mut b = EngineConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = EngineConfig::default();
        c.curation.synonyms.insert("car", ["automobile"]);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn lexicon_path_is_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("syn.json"), r#"{"car": ["auto"]}"#).unwrap();
        let cfg_path = dir.path().join("engine.toml");
        std::fs::write(&cfg_path, "synonym_lexicon = \"syn.json\"\n").unwrap();
        let cfg = EngineConfig::load(&cfg_path).unwrap();
        assert!(!cfg.curation.synonyms.is_empty());
    }
}
