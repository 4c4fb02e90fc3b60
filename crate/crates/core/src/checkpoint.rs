//! On-disk checkpoint directory: parameter container plus manifest, the
//! vocabulary and the model configuration.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::neural::io::{load_params, save_params};
use crate::neural::ParamSet;
use crate::text::Vocabulary;

pub const PARAMS_FILE: &str = "params.aq";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CONFIG_FILE: &str = "config.json";

pub fn save_checkpoint<C: Serialize>(
    dir: &Path,
    params: &ParamSet,
    vocab: &Vocabulary,
    config: &C,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_params(&dir.join(PARAMS_FILE), params)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    let cfg = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Contract(format!("config does not serialize: {e}")))?;
    fs::write(&cfg, text + "\n").map_err(|e| Error::io(&cfg, e))
}

pub fn checkpoint_exists(dir: &Path) -> bool {
    [PARAMS_FILE, VOCAB_FILE, CONFIG_FILE]
        .iter()
        .all(|f| dir.join(f).is_file())
}

pub fn load_checkpoint<C: DeserializeOwned>(dir: &Path) -> Result<(ParamSet, Vocabulary, C)> {
    if !checkpoint_exists(dir) {
        return Err(Error::ModelNotLoaded(format!(
            "no complete checkpoint in {}",
            dir.display()
        )));
    }
    let params = load_params(&dir.join(PARAMS_FILE))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            cfg_path.display().to_string(),
            format!("line {}", e.line()),
            e.to_string(),
        )
    })?;
    Ok((params, vocab, config))
}
