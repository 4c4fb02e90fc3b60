//! Artwork and question records, the canonical on-disk layout, importers
//! for the public datasets' native layouts, and corpus construction.

pub mod artpedia;
pub mod pools;
pub mod sample;
pub mod split;
pub mod templates;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{LabeledQuestion, Route};
use crate::error::{Error, Result};

pub use artpedia::{import_artpedia, load_artpedia, load_qa_annotations, ArtpediaTotals};
pub use pools::{build_balanced_classifier_set, load_question_pool, PoolFormat};
pub use split::{split_artworks, DatasetSplit, SplitName};

pub const ARTWORKS_FILE: &str = "artworks.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkRecord {
    pub id: String,
    pub title: String,
    /// Path relative to the dataset directory.
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub visual_sentences: Vec<String>,
    #[serde(default)]
    pub contextual_sentences: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ArtworkRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Data("artwork with an empty id".into()));
        }
        if self.visual_sentences.is_empty() && self.contextual_sentences.is_empty() {
            return Err(Error::Data(format!("artwork {} has no sentences", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub id: String,
    pub artwork_id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(rename = "type")]
    pub route: Route,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl QaRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Data("question with an empty id".into()));
        }
        if self.question.trim().is_empty() {
            return Err(Error::Data(format!("question {} has empty text", self.id)));
        }
        if self.answers.is_empty() || self.answers.iter().all(|a| a.trim().is_empty()) {
            return Err(Error::Data(format!("question {} has no answers", self.id)));
        }
        Ok(())
    }

    pub fn labeled(&self) -> LabeledQuestion {
        LabeledQuestion::new(self.question.clone(), self.route)
    }
}

/// Artworks plus the questions asked about them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub artworks: Vec<ArtworkRecord>,
    pub questions: Vec<QaRecord>,
}

impl Dataset {
    /// Checks record invariants, id uniqueness and (when `resolve` is set)
    /// that every question names a known artwork.
    pub fn validate(&self, resolve: bool) -> Result<()> {
        let mut ids = HashSet::new();
        for a in &self.artworks {
            a.validate()?;
            if !ids.insert(a.id.as_str()) {
                return Err(Error::Data(format!("duplicate artwork id {}", a.id)));
            }
        }
        let mut qids = HashSet::new();
        for q in &self.questions {
            q.validate()?;
            if !qids.insert(q.id.as_str()) {
                return Err(Error::Data(format!("duplicate question id {}", q.id)));
            }
            if resolve && !ids.contains(q.artwork_id.as_str()) {
                return Err(Error::Data(format!(
                    "question {} refers to unknown artwork {}",
                    q.id, q.artwork_id
                )));
            }
        }
        Ok(())
    }

    pub fn artwork(&self, id: &str) -> Option<&ArtworkRecord> {
        self.artworks.iter().find(|a| a.id == id)
    }

    /// `[visual, contextual]` question counts per artwork.
    pub fn question_counts(&self) -> BTreeMap<String, [usize; 2]> {
        let mut out: BTreeMap<String, [usize; 2]> = BTreeMap::new();
        for q in &self.questions {
            out.entry(q.artwork_id.clone()).or_default()[q.route.index()] += 1;
        }
        out
    }

    pub fn write_canonical(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(ARTWORKS_FILE), &self.artworks)?;
        write_jsonl(&dir.join(QUESTIONS_FILE), &self.questions)
    }

    /// Reads `artworks.jsonl` (optional for pure question pools) and
    /// `questions.jsonl`.
    pub fn read_canonical(dir: &Path) -> Result<Self> {
        let a = dir.join(ARTWORKS_FILE);
        let artworks = if a.is_file() { read_jsonl(&a)? } else { Vec::new() };
        let questions = read_jsonl(&dir.join(QUESTIONS_FILE))?;
        let ds = Self {
            artworks,
            questions,
        };
        ds.validate(!ds.artworks.is_empty())?;
        Ok(ds)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Contract(format!("record does not serialize: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse(source, format!("line {}", i + 1), e.to_string()))
        })
        .collect()
}
