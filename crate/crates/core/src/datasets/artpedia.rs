//! Artpedia's native layout: one JSON object keyed by artwork id.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::sample::ARTPEDIA_FILE;
use super::{parse_jsonl, ArtworkRecord, Dataset, QaRecord, QUESTIONS_FILE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ArtpediaTotals {
    pub artworks: usize,
    pub visual_sentences: usize,
    pub contextual_sentences: usize,
}

impl ArtpediaTotals {
    pub fn of(records: &[ArtworkRecord]) -> Self {
        Self {
            artworks: records.len(),
            visual_sentences: records.iter().map(|r| r.visual_sentences.len()).sum(),
            contextual_sentences: records.iter().map(|r| r.contextual_sentences.len()).sum(),
        }
    }
}

fn strings(v: Option<&Value>, path: &str, source: &str) -> Result<Vec<String>> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::parse(source, format!("{path}[{i}]"), "expected a string"))
            })
            .collect(),
        Some(_) => Err(Error::parse(source, path, "expected a list of strings")),
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses the native layout. Records come out sorted by id.
pub fn parse_artpedia(text: &str, source: &str) -> Result<Vec<ArtworkRecord>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let root: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(source, format!("line {}", e.line()), e.to_string()))?;
    let Value::Object(map) = root else {
        return Err(Error::parse(source, "$", "expected an object keyed by artwork id"));
    };
    let mut out = Vec::with_capacity(map.len());
    for (id, rec) in &map {
        let path = format!("$[\"{id}\"]");
        let Value::Object(fields) = rec else {
            return Err(Error::parse(source, path, "expected an object"));
        };
        let title = match fields.get("title") {
            Some(Value::String(s)) => s.clone(),
            None | Some(Value::Null) => String::new(),
            Some(_) => return Err(Error::parse(source, format!("{path}.title"), "expected a string")),
        };
        let mut metadata = BTreeMap::new();
        for key in ["year", "img_url", "split", "author"] {
            if let Some(v) = fields.get(key).and_then(scalar) {
                metadata.insert(key.to_string(), v);
            }
        }
        let record = ArtworkRecord {
            id: id.clone(),
            title,
            image: None,
            visual_sentences: strings(fields.get("visual_sentences"), &format!("{path}.visual_sentences"), source)?,
            contextual_sentences: strings(
                fields.get("contextual_sentences"),
                &format!("{path}.contextual_sentences"),
                source,
            )?,
            metadata,
        };
        record
            .validate()
            .map_err(|e| Error::parse(source, path.clone(), e.to_string()))?;
        out.push(record);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn load_artpedia(path: &Path) -> Result<(Vec<ArtworkRecord>, ArtpediaTotals)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_artpedia(&text, &path.display().to_string())?;
    let totals = ArtpediaTotals::of(&records);
    Ok((records, totals))
}

/// Reads question annotations (canonical `questions.jsonl` lines) and checks
/// each against the artwork set.
pub fn load_qa_annotations(path: &Path, artworks: &[ArtworkRecord]) -> Result<Vec<QaRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let records: Vec<QaRecord> = parse_jsonl(&text, &source)?;
    let ids: HashSet<&str> = artworks.iter().map(|a| a.id.as_str()).collect();
    for q in &records {
        q.validate()?;
        if !ids.contains(q.artwork_id.as_str()) {
            return Err(Error::Data(format!(
                "{source}: question {} refers to unknown artwork {}",
                q.id, q.artwork_id
            )));
        }
    }
    Ok(records)
}

/// Converts a native Artpedia directory (or bare JSON file) into canonical
/// records. `questions.jsonl` and `images/<id>.png` next to the JSON file are
/// picked up when present; images are copied under `out_dir/images`.
pub fn import_artpedia(input: &Path, out_dir: &Path) -> Result<(Dataset, ArtpediaTotals)> {
    let (file, base) = if input.is_dir() {
        (input.join(ARTPEDIA_FILE), input.to_path_buf())
    } else {
        let base = input.parent().map(Path::to_path_buf).unwrap_or_default();
        (input.to_path_buf(), base)
    };
    let (mut artworks, totals) = load_artpedia(&file)?;
    let images_out = out_dir.join("images");
    for a in &mut artworks {
        let src = base.join("images").join(format!("{}.png", a.id));
        if src.is_file() {
            fs::create_dir_all(&images_out).map_err(|e| Error::io(&images_out, e))?;
            let dst = images_out.join(format!("{}.png", a.id));
            fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
            a.image = Some(format!("images/{}.png", a.id));
        }
    }
    let qpath = base.join(QUESTIONS_FILE);
    let questions = if qpath.is_file() {
        load_qa_annotations(&qpath, &artworks)?
    } else {
        Vec::new()
    };
    let ds = Dataset {
        artworks,
        questions,
    };
    ds.validate(true)?;
    ds.write_canonical(out_dir)?;
    Ok((ds, totals))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NATIVE: &str = r#"{
      "7": {"title": "Madonna", "year": 1505, "img_url": "http://x/7.jpg",
            "visual_sentences": ["She wears a blue robe."],
            "contextual_sentences": ["It was painted by Raphael.", "It hangs in Florence."]},
      "3": {"title": "Harbor", "visual_sentences": ["Ships fill the harbor."], "contextual_sentences": []}
    }"#;

    #[test]
    fn parses_and_totals() {
        let r = parse_artpedia(NATIVE, "t").unwrap();
        assert_eq!(r[0].id, "3");
        assert_eq!(r[1].metadata["year"], "1505");
        assert_eq!(
            ArtpediaTotals::of(&r),
            ArtpediaTotals {
                artworks: 2,
                visual_sentences: 2,
                contextual_sentences: 2
            }
        );
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_artpedia("", "t").unwrap().is_empty());
        assert!(parse_artpedia("{}", "t").unwrap().is_empty());
    }

    #[test]
    fn schema_errors_name_the_record() {
        let err = parse_artpedia(r#"{"9": {"title": "x", "visual_sentences": [1]}}"#, "t").unwrap_err();
        assert!(err.to_string().contains("$[\"9\"].visual_sentences[0]"), "{err}");
        let err = parse_artpedia(r#"{"9": {"title": "x"}}"#, "t").unwrap_err();
        assert!(err.to_string().contains("no sentences"), "{err}");
    }

    #[test]
    fn imports_bundled_layout() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        crate::datasets::sample::write_sample(src.path(), 2).unwrap();
        let (ds, totals) = import_artpedia(src.path(), out.path()).unwrap();
        assert_eq!(totals.artworks, 30);
        assert_eq!(ds.question_counts().len(), 30);
        assert!(ds.artworks.iter().all(|a| out.path().join(a.image.as_ref().unwrap()).is_file()));
        let first = fs::read(out.path().join(super::super::QUESTIONS_FILE)).unwrap();
        import_artpedia(src.path(), out.path()).unwrap();
        assert_eq!(fs::read(out.path().join(super::super::QUESTIONS_FILE)).unwrap(), first);
    }

    #[test]
    fn dangling_annotation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        fs::write(
            &p,
            r#"{"id":"q1","artwork_id":"99","question":"who ?","answers":["x"],"type":"contextual"}"#,
        )
        .unwrap();
        let arts = parse_artpedia(NATIVE, "t").unwrap();
        assert!(matches!(load_qa_annotations(&p, &arts), Err(Error::Data(_))));
    }
}
